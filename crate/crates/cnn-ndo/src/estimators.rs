//! Stochastic estimators for the cost, its parameter gradient, and
//! observables.
//!
//! The cost is the squared Liouvillian residual in ratio form,
//!
//!   C(θ) = Σ p_θ(σ,σ′) |f(σ,σ′)|²,   f = Σ_src 𝓛 ρ(src) / ρ(σ,σ′),
//!
//! estimated as a weighted sample mean Σ w|f|² / Σ w over a batch, with
//! w = |ρ|^{2(1-β)} undoing the sampler's β-rescaling. Its gradient over the
//! same batch is
//!
//!   ∇C = E[|f|² (2 Re O - 2 Re Ō)] + E[2 Re(f* Σ_src c_src (O_src - O))],
//!
//! with O = (∂ρ/∂θ)/ρ and c_src = 𝓛 ρ(src)/ρ. Because Σ_src c_src = f, the
//! O-terms regroup into one complex coefficient per distinct configuration,
//! so each network backward pass runs once per unique configuration no
//! matter how often the Markov chain revisits it.
//!
//! Observables use diagonal samples with sign reweighting:
//!
//!   ⟨Ô⟩ = E[s · O_loc] / E[s],   O_loc(σ) = Σ_σ′ ⟨σ|Ô|σ′⟩ ρ(σ,σ′)/ρ(σ,σ),
//!
//! site-averaged, invariant under ρ → c·ρ by construction. Error bars come
//! from chain-blocked jackknife; all reductions run in fixed chunk order so
//! estimates are deterministic functions of (θ, batch).

use std::collections::HashMap;

use num_complex::Complex64;

use crate::cnn::{DensityModel, RHO_GUARD};
use crate::error::{Error, Result};
use crate::lattice::JointConfig;
use crate::liouvillian::{observable_row, ModelSpec, SiteOperator};
use crate::parallel;
use crate::sampler::{DiagonalBatch, SampleBatch};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    /// Effective sample fraction (Σw)²/(n·Σw²) of the weighted batch; 1 for
    /// unit weights, collapsing toward 0 when few samples carry the weight.
    pub ess_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub g: Vec<f64>,
}

/// Which gradient the estimator assembles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradientMode {
    /// The exact derivative of the reweighted cost, including the
    /// distribution (score) term; unbiased for ∇C and the quantity checked
    /// against finite differences.
    #[default]
    Full,
    /// Derivative of the sampled surrogate with samples and weights frozen:
    /// only the residual term E[2 Re(f* Σ c (O_src - O))]. Biased for ∇C
    /// away from the minimum but far lower variance; both vanish together
    /// at f ≡ 0, so the fixed points on the sampled support agree.
    Surrogate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableEstimate {
    pub name: String,
    /// Site-averaged real part of the estimate.
    pub value: f64,
    pub std_error: f64,
    /// Imaginary part; consistent with zero for Hermitian observables.
    pub imag_value: f64,
    pub imag_std_error: f64,
    pub mean_sign: f64,
    pub n_samples: usize,
}

/// The exactly-summed residual f(σ,σ′) = (𝓛ρ)(σ,σ′)/ρ(σ,σ′).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalResidual {
    pub config: JointConfig,
    pub f: Complex64,
}

pub fn local_residual<M: DensityModel>(
    model: &M,
    liouv: &ModelSpec,
    cfg: &JointConfig,
) -> Result<LocalResidual> {
    let rho = model.rho(cfg);
    if rho.norm() < RHO_GUARD {
        return Err(Error::AmplitudeUnderflow {
            magnitude: rho.norm(),
        });
    }
    let mut f = Complex64::ZERO;
    for elem in liouv.lindblad_row(cfg)? {
        f += elem.amplitude * model.rho(&elem.source) / rho;
    }
    Ok(LocalResidual {
        config: cfg.clone(),
        f,
    })
}

pub fn estimate_cost<M: DensityModel>(
    model: &M,
    liouv: &ModelSpec,
    batch: &SampleBatch,
) -> Result<CostEstimate> {
    let out = weighted_core(
        model,
        liouv,
        &batch.configs,
        &batch.normalized_weights(),
        batch.n_chains,
        None,
    )?;
    Ok(CostEstimate {
        value: out.cost,
        std_error: out.std_error,
        n_samples: batch.len(),
        ess_fraction: out.ess_fraction,
    })
}

pub fn estimate_cost_and_gradient<M: DensityModel>(
    model: &M,
    liouv: &ModelSpec,
    batch: &SampleBatch,
) -> Result<(CostEstimate, GradientVector)> {
    estimate_cost_and_gradient_mode(model, liouv, batch, GradientMode::Full)
}

/// Cost plus the gradient assembled in the requested [`GradientMode`].
pub fn estimate_cost_and_gradient_mode<M: DensityModel>(
    model: &M,
    liouv: &ModelSpec,
    batch: &SampleBatch,
    mode: GradientMode,
) -> Result<(CostEstimate, GradientVector)> {
    let out = weighted_core(
        model,
        liouv,
        &batch.configs,
        &batch.normalized_weights(),
        batch.n_chains,
        Some(mode),
    )?;
    Ok((
        CostEstimate {
            value: out.cost,
            std_error: out.std_error,
            n_samples: batch.len(),
            ess_fraction: out.ess_fraction,
        },
        GradientVector {
            g: out.grad.expect("gradient requested"),
        },
    ))
}

pub fn estimate_gradient<M: DensityModel>(
    model: &M,
    liouv: &ModelSpec,
    batch: &SampleBatch,
) -> Result<GradientVector> {
    Ok(estimate_cost_and_gradient(model, liouv, batch)?.1)
}

/// Re-price a batch drawn from q ∝ |ρ_old|^{2β} under a different parameter
/// vector: log w_s = 2 ln|ρ_new(x_s)| - 2β ln|ρ_old(x_s)|. Used by the
/// optimizer's backtracking comparison so both costs share one batch.
pub fn reweighted_log_weights<M: DensityModel>(
    model_new: &M,
    batch: &SampleBatch,
    beta: f64,
    old_log_abs: &[f64],
) -> Result<Vec<f64>> {
    if old_log_abs.len() != batch.len() {
        return Err(Error::Mismatch(
            "old_log_abs length does not match batch".to_string(),
        ));
    }
    Ok(batch
        .configs
        .iter()
        .zip(old_log_abs)
        .map(|(cfg, &old)| {
            let mag = model_new.rho(cfg).norm().max(f64::MIN_POSITIVE);
            2.0 * mag.ln() - 2.0 * beta * old
        })
        .collect())
}

/// Cost of `model` over explicit (configs, log-weights); the entry point for
/// batch re-pricing and full-enumeration oracles.
pub fn cost_with_log_weights<M: DensityModel>(
    model: &M,
    liouv: &ModelSpec,
    configs: &[JointConfig],
    log_weights: &[f64],
    n_chains: usize,
) -> Result<CostEstimate> {
    let out = weighted_core(
        model,
        liouv,
        configs,
        &normalize_log_weights(log_weights),
        n_chains,
        None,
    )?;
    Ok(CostEstimate {
        value: out.cost,
        std_error: out.std_error,
        n_samples: configs.len(),
        ess_fraction: out.ess_fraction,
    })
}

/// Cost and gradient over explicit (configs, log-weights).
pub fn cost_and_gradient_with_log_weights<M: DensityModel>(
    model: &M,
    liouv: &ModelSpec,
    configs: &[JointConfig],
    log_weights: &[f64],
    n_chains: usize,
) -> Result<(CostEstimate, GradientVector)> {
    let out = weighted_core(
        model,
        liouv,
        configs,
        &normalize_log_weights(log_weights),
        n_chains,
        Some(GradientMode::Full),
    )?;
    Ok((
        CostEstimate {
            value: out.cost,
            std_error: out.std_error,
            n_samples: configs.len(),
            ess_fraction: out.ess_fraction,
        },
        GradientVector {
            g: out.grad.expect("gradient requested"),
        },
    ))
}

pub(crate) fn normalize_log_weights(log_weights: &[f64]) -> Vec<f64> {
    let max = log_weights
        .iter()
        .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !max.is_finite() {
        return vec![0.0; log_weights.len()];
    }
    log_weights.iter().map(|&lw| (lw - max).exp()).collect()
}

struct CoreOut {
    cost: f64,
    std_error: f64,
    ess_fraction: f64,
    grad: Option<Vec<f64>>,
}

/// Shared estimator core. `weights` must be non-negative; zero-weight
/// samples are skipped entirely, which is what makes full enumerations with
/// p ∝ |ρ|² well-defined at dead configurations.
fn weighted_core<M: DensityModel>(
    model: &M,
    liouv: &ModelSpec,
    configs: &[JointConfig],
    weights: &[f64],
    n_chains: usize,
    want_grad: Option<GradientMode>,
) -> Result<CoreOut> {
    if configs.is_empty() {
        return Err(Error::InvalidConfig("empty sample batch".to_string()));
    }
    assert_eq!(configs.len(), weights.len());
    let n_chains = n_chains.max(1);
    assert_eq!(configs.len() % n_chains, 0, "chain-major batch layout");

    // Phase A: intern configurations; rows for each unique sampled config.
    let mut index: HashMap<(u64, u64), u32> = HashMap::new();
    let mut unique: Vec<JointConfig> = Vec::new();
    let mut intern = |cfg: &JointConfig, unique: &mut Vec<JointConfig>| -> u32 {
        *index.entry(cfg.index_pair()).or_insert_with(|| {
            unique.push(cfg.clone());
            (unique.len() - 1) as u32
        })
    };
    let mut sample_uidx = Vec::with_capacity(configs.len());
    for (cfg, &w) in configs.iter().zip(weights) {
        if w > 0.0 {
            sample_uidx.push(Some(intern(cfg, &mut unique)));
        } else {
            sample_uidx.push(None);
        }
    }
    let mut rows: HashMap<u32, Vec<(u32, Complex64)>> = HashMap::new();
    for uidx in sample_uidx.iter().flatten() {
        if !rows.contains_key(uidx) {
            let row = liouv
                .lindblad_row(&unique[*uidx as usize])?
                .into_iter()
                .map(|e| {
                    let src = intern(&e.source, &mut unique);
                    (src, e.amplitude)
                })
                .collect();
            rows.insert(*uidx, row);
        }
    }

    // Phase B: ρ at every unique configuration.
    let rhos: Vec<Complex64> = parallel::chunked_map(&unique, |chunk| {
        chunk.iter().map(|c| model.rho(c)).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    for uidx in sample_uidx.iter().flatten() {
        let mag = rhos[*uidx as usize].norm();
        if mag < RHO_GUARD {
            return Err(Error::AmplitudeUnderflow { magnitude: mag });
        }
    }

    // Phase C: residual per unique sampled config, then cost.
    let mut f_of: HashMap<u32, Complex64> = HashMap::with_capacity(rows.len());
    for (&uidx, row) in &rows {
        let inv = rhos[uidx as usize].inv();
        let mut f = Complex64::ZERO;
        for &(src, amp) in row {
            f += amp * rhos[src as usize] * inv;
        }
        f_of.insert(uidx, f);
    }

    let mut sum_w = 0.0;
    let mut sum_wf2 = 0.0;
    let samples_per_chain = configs.len() / n_chains;
    let mut chain_w = vec![0.0; n_chains];
    let mut chain_wf2 = vec![0.0; n_chains];
    let mut f_s: Vec<Complex64> = Vec::with_capacity(configs.len());
    for (s, maybe_uidx) in sample_uidx.iter().enumerate() {
        let (w, f) = match maybe_uidx {
            Some(uidx) => (weights[s], f_of[uidx]),
            None => (0.0, Complex64::ZERO),
        };
        f_s.push(f);
        let wf2 = w * f.norm_sqr();
        sum_w += w;
        sum_wf2 += wf2;
        chain_w[s / samples_per_chain] += w;
        chain_wf2[s / samples_per_chain] += wf2;
    }
    if sum_w <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    let sum_w2: f64 = weights.iter().map(|w| w * w).sum();
    let ess_fraction = sum_w * sum_w / (sum_w2 * configs.len() as f64);
    let cost = sum_wf2 / sum_w;
    let std_error = if n_chains >= 2 {
        jackknife_ratio(&chain_wf2, &chain_w).1
    } else {
        0.0
    };

    let Some(grad_mode) = want_grad else {
        return Ok(CoreOut {
            cost,
            std_error,
            ess_fraction,
            grad: None,
        });
    };

    // Phase D: per-unique complex coefficients. With Σ_src c_src = f the
    // full estimator collapses to ∇C = Σ_u Re[(β_u - 2 C μ_u) O_u] / Σ w;
    // the surrogate replaces the score part -2 C μ_u with the per-sample
    // -2 w |f|² mass, i.e. d/dθ of the frozen-sample surrogate.
    let mut beta_coef = vec![Complex64::ZERO; unique.len()];
    let mut mass = vec![0.0; unique.len()];
    for (s, maybe_uidx) in sample_uidx.iter().enumerate() {
        let Some(uidx) = maybe_uidx else { continue };
        let w = weights[s];
        let f_conj = f_s[s].conj();
        mass[*uidx as usize] += match grad_mode {
            GradientMode::Full => w,
            GradientMode::Surrogate => w * f_s[s].norm_sqr(),
        };
        let inv = rhos[*uidx as usize].inv();
        for &(src, amp) in &rows[uidx] {
            beta_coef[src as usize] += 2.0 * w * f_conj * (amp * rhos[src as usize] * inv);
        }
    }
    let mass_scale = match grad_mode {
        GradientMode::Full => cost,
        GradientMode::Surrogate => 1.0,
    };
    for (b, (&m, rho)) in beta_coef.iter_mut().zip(mass.iter().zip(&rhos)) {
        *b -= 2.0 * mass_scale * m;
        // sources with dead ρ carry a vanishing coefficient; never
        // differentiate there
        if rho.norm() < RHO_GUARD {
            *b = Complex64::ZERO;
        }
    }

    let work: Vec<(u32, Complex64)> = (0..unique.len() as u32)
        .map(|u| (u, beta_coef[u as usize]))
        .filter(|(_, b)| *b != Complex64::ZERO)
        .collect();
    let n_params = model.param_count();
    let partials: Vec<Result<Vec<f64>>> = parallel::chunked_map(&work, |chunk| {
        let mut partial = vec![0.0; n_params];
        for &(uidx, coef) in chunk {
            let (_, o) = model.rho_and_grad_log(&unique[uidx as usize])?;
            for (p, o_i) in partial.iter_mut().zip(o.iter()) {
                *p += (coef * o_i).re;
            }
        }
        Ok(partial)
    });
    let mut grad = vec![0.0; n_params];
    for partial in partials {
        let partial = partial?;
        for (g, p) in grad.iter_mut().zip(partial.iter()) {
            *g += p;
        }
    }
    let inv_sum_w = 1.0 / sum_w;
    for g in &mut grad {
        *g *= inv_sum_w;
    }

    Ok(CoreOut {
        cost,
        std_error,
        ess_fraction,
        grad: Some(grad),
    })
}

/// Sign-reweighted, site-averaged observable estimate from diagonal samples.
pub fn estimate_observable<M: DensityModel>(
    model: &M,
    op: SiteOperator,
    batch: &DiagonalBatch,
) -> Result<ObservableEstimate> {
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty diagonal batch".to_string()));
    }
    let n_sites = batch.configs[0].len() as f64;

    // O_loc per unique diagonal configuration.
    let mut index: HashMap<u64, u32> = HashMap::new();
    let mut unique: Vec<crate::lattice::SpinConfig> = Vec::new();
    let mut sample_uidx = Vec::with_capacity(batch.len());
    for sigma in &batch.configs {
        let uidx = *index.entry(sigma.index()).or_insert_with(|| {
            unique.push(sigma.clone());
            (unique.len() - 1) as u32
        });
        sample_uidx.push(uidx);
    }
    let locals: Vec<Result<Complex64>> = parallel::chunked_map(&unique, |chunk| {
        chunk
            .iter()
            .map(|sigma| -> Result<Complex64> {
                let diag = JointConfig::diagonal(sigma.clone());
                let rho_diag = model.rho(&diag);
                if rho_diag.norm() < RHO_GUARD {
                    return Err(Error::AmplitudeUnderflow {
                        magnitude: rho_diag.norm(),
                    });
                }
                let mut acc = Complex64::ZERO;
                for site in 0..sigma.len() {
                    for (col, elem) in observable_row(op, site, sigma) {
                        let rho_off = if col == *sigma {
                            rho_diag
                        } else {
                            model.rho(&JointConfig {
                                row: sigma.clone(),
                                col,
                            })
                        };
                        acc += elem * (rho_off / rho_diag);
                    }
                }
                Ok(acc / n_sites)
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let locals: Vec<Complex64> = locals.into_iter().collect::<Result<_>>()?;

    let n_chains = batch.n_chains.max(1);
    let samples_per_chain = batch.len() / n_chains;
    let mut chain_re = vec![0.0; n_chains];
    let mut chain_im = vec![0.0; n_chains];
    let mut chain_sign = vec![0.0; n_chains];
    for (s, (&uidx, &sign)) in sample_uidx.iter().zip(&batch.signs).enumerate() {
        let h = sign * locals[uidx as usize];
        let c = s / samples_per_chain;
        chain_re[c] += h.re;
        chain_im[c] += h.im;
        chain_sign[c] += sign;
    }

    let mean_sign = chain_sign.iter().sum::<f64>() / batch.len() as f64;
    let ones = vec![samples_per_chain as f64; n_chains];
    let (_, sign_se) = jackknife_ratio(&chain_sign, &ones);
    if mean_sign.abs() <= 3.0 * sign_se {
        return Err(Error::SignProblem {
            mean: mean_sign,
            std_error: sign_se,
        });
    }

    let (value, std_error) = jackknife_ratio(&chain_re, &chain_sign);
    let (imag_value, imag_std_error) = jackknife_ratio(&chain_im, &chain_sign);
    Ok(ObservableEstimate {
        name: op.to_string(),
        value,
        std_error,
        imag_value,
        imag_std_error,
        mean_sign,
        n_samples: batch.len(),
    })
}

/// Ratio estimate Σnum/Σden with delete-one-chain jackknife standard error.
fn jackknife_ratio(num: &[f64], den: &[f64]) -> (f64, f64) {
    let total_n: f64 = num.iter().sum();
    let total_d: f64 = den.iter().sum();
    let ratio = total_n / total_d;
    let m = num.len();
    if m < 2 {
        return (ratio, 0.0);
    }
    let loo: Vec<f64> = (0..m)
        .map(|c| (total_n - num[c]) / (total_d - den[c]))
        .collect();
    let mean = loo.iter().sum::<f64>() / m as f64;
    let var = loo.iter().map(|r| (r - mean).powi(2)).sum::<f64>() * (m - 1) as f64 / m as f64;
    (ratio, var.sqrt())
}
