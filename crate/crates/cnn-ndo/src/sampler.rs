//! Metropolis-Hastings sampling of density-matrix indices.
//!
//! Two chain types power the estimators:
//!
//! - joint chains over configuration pairs (σ, σ′) targeting
//!   q(σ,σ′) ∝ |ρ_θ(σ,σ′)|^{2β}; for β < 1 every sample carries a log
//!   importance weight log |ρ|^{2(1-β)} that reweights estimates back to the
//!   cost distribution p ∝ |ρ|²,
//! - diagonal chains over σ targeting |ρ(σ,σ)|, carrying the sign of
//!   ρ(σ,σ) so observable estimates stay unbiased when the ansatz dips
//!   negative.
//!
//! Proposal kernels are symmetric spin-flip mixtures. In sector-restricted
//! mode only moves preserving the parity of N_up(σ) - N_up(σ′) are proposed:
//! paired flips on one side, one flip on each side, or a same-site double
//! flip. Chains run independently with per-chain ChaCha streams split off a
//! master seed and are merged chain-major, so batches are reproducible and
//! scheduler-independent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::cnn::{DensityModel, RHO_GUARD};
use crate::error::{Error, Result};
use crate::lattice::{JointConfig, Lattice, SpinConfig};
use crate::liouvillian::sector_allowed;
use crate::parallel;

/// Chains reporting an acceptance rate under this over burn-in are stuck.
pub const STUCK_THRESHOLD: f64 = 1e-3;

/// Burn-in windows shorter than this cannot distinguish a stuck chain from
/// an unlucky streak, so the stuck check is skipped below it.
pub const STUCK_MIN_WINDOW: usize = 100;

/// Unrestricted proposal mix: single flip on σ, on σ′, both at one site.
const MIX_ROW: f64 = 0.4;
const MIX_COL: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Retained samples per batch, split evenly over the chains.
    pub n_samples: usize,
    pub n_chains: usize,
    /// Discarded steps per chain; defaults to 10 × n_sites.
    #[serde(default)]
    pub burn_in: Option<usize>,
    /// Steps between retained samples; defaults to n_sites.
    #[serde(default)]
    pub thin: Option<usize>,
    /// Exponent β of the sampling target |ρ|^{2β}, in (0, 1].
    pub beta: f64,
    pub sector_restricted: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            n_samples: 1024,
            n_chains: 8,
            burn_in: None,
            thin: None,
            beta: 1.0,
            sector_restricted: false,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.n_chains < 2 {
            return Err(Error::InvalidConfig(
                "need n_samples > 0 and n_chains >= 2 (chain-blocked error bars)".to_string(),
            ));
        }
        if self.n_samples % self.n_chains != 0 {
            return Err(Error::InvalidConfig(format!(
                "n_samples = {} is not divisible by n_chains = {}",
                self.n_samples, self.n_chains
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "beta must lie in (0, 1], got {}",
                self.beta
            )));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn burn_in_for(&self, n_sites: usize) -> usize {
        self.burn_in.unwrap_or(10 * n_sites)
    }

    fn thin_for(&self, n_sites: usize) -> usize {
        self.thin.unwrap_or(n_sites).max(1)
    }
}

/// Joint-chain draws in chain-major order.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub configs: Vec<JointConfig>,
    /// log |ρ|^{2(1-β)} per sample; all zero at β = 1.
    pub log_weights: Vec<f64>,
    pub acceptance_rate: f64,
    pub n_chains: usize,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn samples_per_chain(&self) -> usize {
        self.configs.len() / self.n_chains
    }

    /// Importance weights normalized by their maximum (overflow-safe; every
    /// weighted average downstream is a ratio, so the scale cancels).
    pub fn normalized_weights(&self) -> Vec<f64> {
        let max = self
            .log_weights
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        if !max.is_finite() {
            return vec![0.0; self.log_weights.len()];
        }
        self.log_weights.iter().map(|&lw| (lw - max).exp()).collect()
    }
}

/// Diagonal-chain draws with the sign of ρ(σ,σ) per sample.
#[derive(Debug, Clone)]
pub struct DiagonalBatch {
    pub configs: Vec<SpinConfig>,
    pub signs: Vec<f64>,
    pub acceptance_rate: f64,
    pub n_chains: usize,
}

impl DiagonalBatch {
    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn samples_per_chain(&self) -> usize {
        self.configs.len() / self.n_chains
    }
}

/// One symmetric proposal move.
pub fn propose<R: Rng + ?Sized>(
    cfg: &JointConfig,
    sector_restricted: bool,
    rng: &mut R,
) -> JointConfig {
    let n = cfg.n_sites();
    let mut out = cfg.clone();
    if sector_restricted {
        // Equal-weight mix of the four parity-preserving kinds. The
        // one-on-each-side kind may draw the same site twice, which
        // coincides with a same-site double flip; the kernel stays symmetric.
        match rng.random_range(0..4u8) {
            0 => {
                let (i, j) = distinct_pair(n, rng);
                out.row.flip_in_place(i);
                out.row.flip_in_place(j);
            }
            1 => {
                let (i, j) = distinct_pair(n, rng);
                out.col.flip_in_place(i);
                out.col.flip_in_place(j);
            }
            2 => {
                out.row.flip_in_place(rng.random_range(0..n));
                out.col.flip_in_place(rng.random_range(0..n));
            }
            _ => {
                let s = rng.random_range(0..n);
                out.row.flip_in_place(s);
                out.col.flip_in_place(s);
            }
        }
    } else {
        let u: f64 = rng.random();
        if u < MIX_ROW {
            out.row.flip_in_place(rng.random_range(0..n));
        } else if u < MIX_ROW + MIX_COL {
            out.col.flip_in_place(rng.random_range(0..n));
        } else {
            let s = rng.random_range(0..n);
            out.row.flip_in_place(s);
            out.col.flip_in_place(s);
        }
    }
    out
}

fn distinct_pair<R: Rng + ?Sized>(n: usize, rng: &mut R) -> (usize, usize) {
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

/// Every configuration the proposal kernel can reach from `cfg`, with kind
/// multiplicity. Supports exhaustive move audits.
pub fn enumerate_moves(cfg: &JointConfig, sector_restricted: bool) -> Vec<JointConfig> {
    let n = cfg.n_sites();
    let mut moves = Vec::new();
    if sector_restricted {
        for i in 0..n {
            for j in (i + 1)..n {
                let mut m = cfg.clone();
                m.row.flip_in_place(i);
                m.row.flip_in_place(j);
                moves.push(m);
                let mut m = cfg.clone();
                m.col.flip_in_place(i);
                m.col.flip_in_place(j);
                moves.push(m);
            }
        }
        for i in 0..n {
            for j in 0..n {
                let mut m = cfg.clone();
                m.row.flip_in_place(i);
                m.col.flip_in_place(j);
                moves.push(m);
            }
        }
        for s in 0..n {
            let mut m = cfg.clone();
            m.row.flip_in_place(s);
            m.col.flip_in_place(s);
            moves.push(m);
        }
    } else {
        for s in 0..n {
            let mut m = cfg.clone();
            m.row.flip_in_place(s);
            moves.push(m);
            let mut m = cfg.clone();
            m.col.flip_in_place(s);
            moves.push(m);
            let mut m = cfg.clone();
            m.row.flip_in_place(s);
            m.col.flip_in_place(s);
            moves.push(m);
        }
    }
    moves
}

/// Draw a [`SampleBatch`] from q ∝ |ρ_θ|^{2β} over configuration pairs.
pub fn sample_joint<M: DensityModel>(
    model: &M,
    cfg: &SamplerConfig,
    lattice: &Lattice,
) -> Result<SampleBatch> {
    cfg.validate()?;
    let n_sites = lattice.n_sites();
    let per_chain = cfg.n_samples / cfg.n_chains;
    let burn_in = cfg.burn_in_for(n_sites);
    let thin = cfg.thin_for(n_sites);

    let runs = parallel::map_range(cfg.n_chains, |chain| {
        run_joint_chain(model, cfg, n_sites, chain as u64, per_chain, burn_in, thin)
    });

    let mut configs = Vec::with_capacity(cfg.n_samples);
    let mut log_weights = Vec::with_capacity(cfg.n_samples);
    let mut accepted = 0usize;
    let mut steps = 0usize;
    for run in runs {
        let run = run?;
        configs.extend(run.configs);
        log_weights.extend(run.log_weights);
        accepted += run.accepted;
        steps += run.steps;
    }
    Ok(SampleBatch {
        configs,
        log_weights,
        acceptance_rate: accepted as f64 / steps.max(1) as f64,
        n_chains: cfg.n_chains,
    })
}

struct ChainRun {
    configs: Vec<JointConfig>,
    log_weights: Vec<f64>,
    accepted: usize,
    steps: usize,
}

fn run_joint_chain<M: DensityModel>(
    model: &M,
    cfg: &SamplerConfig,
    n_sites: usize,
    chain: u64,
    per_chain: usize,
    burn_in: usize,
    thin: usize,
) -> Result<ChainRun> {
    let mut rng = chain_rng(cfg.seed, chain);
    let mut current = initial_joint(model, n_sites, cfg.sector_restricted, &mut rng)?;
    let mut log_abs = model.rho(&current).norm().ln();

    let step = |current: &mut JointConfig, log_abs: &mut f64, rng: &mut ChaCha12Rng| -> bool {
        let proposal = propose(current, cfg.sector_restricted, rng);
        let u: f64 = rng.random();
        let mag = model.rho(&proposal).norm();
        if mag < RHO_GUARD {
            return false;
        }
        let log_ratio = 2.0 * cfg.beta * (mag.ln() - *log_abs);
        if log_ratio >= 0.0 || u < log_ratio.exp() {
            *current = proposal;
            *log_abs = mag.ln();
            true
        } else {
            false
        }
    };

    let mut burn_accepts = 0usize;
    for _ in 0..burn_in {
        if step(&mut current, &mut log_abs, &mut rng) {
            burn_accepts += 1;
        }
    }
    if burn_in >= STUCK_MIN_WINDOW {
        let rate = burn_accepts as f64 / burn_in as f64;
        if rate < STUCK_THRESHOLD {
            return Err(Error::ChainStuck {
                rate,
                min: STUCK_THRESHOLD,
            });
        }
    }

    let mut accepted = 0usize;
    let mut steps = 0usize;
    let mut configs = Vec::with_capacity(per_chain);
    let mut log_weights = Vec::with_capacity(per_chain);
    let weight_factor = 2.0 * (1.0 - cfg.beta);
    for _ in 0..per_chain {
        for _ in 0..thin {
            if step(&mut current, &mut log_abs, &mut rng) {
                accepted += 1;
            }
            steps += 1;
        }
        configs.push(current.clone());
        log_weights.push(weight_factor * log_abs);
    }
    Ok(ChainRun {
        configs,
        log_weights,
        accepted,
        steps,
    })
}

/// Draw diagonal configurations from |ρ(σ,σ)| with their signs.
pub fn sample_diagonal<M: DensityModel>(
    model: &M,
    cfg: &SamplerConfig,
    lattice: &Lattice,
) -> Result<DiagonalBatch> {
    cfg.validate()?;
    let n_sites = lattice.n_sites();
    let per_chain = cfg.n_samples / cfg.n_chains;
    let burn_in = cfg.burn_in_for(n_sites);
    let thin = cfg.thin_for(n_sites);

    let runs = parallel::map_range(cfg.n_chains, |chain| {
        run_diagonal_chain(model, cfg, n_sites, chain as u64, per_chain, burn_in, thin)
    });

    let mut configs = Vec::with_capacity(cfg.n_samples);
    let mut signs = Vec::with_capacity(cfg.n_samples);
    let mut accepted = 0usize;
    let mut steps = 0usize;
    for run in runs {
        let (c, s, a, t) = run?;
        configs.extend(c);
        signs.extend(s);
        accepted += a;
        steps += t;
    }
    Ok(DiagonalBatch {
        configs,
        signs,
        acceptance_rate: accepted as f64 / steps.max(1) as f64,
        n_chains: cfg.n_chains,
    })
}

type DiagonalRun = (Vec<SpinConfig>, Vec<f64>, usize, usize);

fn run_diagonal_chain<M: DensityModel>(
    model: &M,
    cfg: &SamplerConfig,
    n_sites: usize,
    chain: u64,
    per_chain: usize,
    burn_in: usize,
    thin: usize,
) -> Result<DiagonalRun> {
    let mut rng = chain_rng(cfg.seed, chain);

    let diag_rho = |sigma: &SpinConfig| model.rho(&JointConfig::diagonal(sigma.clone()));

    let mut current = {
        let mut found = None;
        for _ in 0..1000 {
            let sigma = SpinConfig::random(n_sites, &mut rng);
            if diag_rho(&sigma).norm() >= RHO_GUARD {
                found = Some(sigma);
                break;
            }
        }
        found.ok_or(Error::AmplitudeUnderflow { magnitude: 0.0 })?
    };
    let mut rho_cur = diag_rho(&current);

    let step = |current: &mut SpinConfig, rho_cur: &mut num_complex::Complex64,
                    rng: &mut ChaCha12Rng|
     -> bool {
        let proposal = current.flip(rng.random_range(0..n_sites));
        let u: f64 = rng.random();
        let rho_prop = diag_rho(&proposal);
        if rho_prop.norm() < RHO_GUARD {
            return false;
        }
        if rho_prop.norm() >= rho_cur.norm() || u < rho_prop.norm() / rho_cur.norm() {
            *current = proposal;
            *rho_cur = rho_prop;
            true
        } else {
            false
        }
    };

    let mut burn_accepts = 0usize;
    for _ in 0..burn_in {
        if step(&mut current, &mut rho_cur, &mut rng) {
            burn_accepts += 1;
        }
    }
    if burn_in >= STUCK_MIN_WINDOW {
        let rate = burn_accepts as f64 / burn_in as f64;
        if rate < STUCK_THRESHOLD {
            return Err(Error::ChainStuck {
                rate,
                min: STUCK_THRESHOLD,
            });
        }
    }

    let mut accepted = 0usize;
    let mut steps = 0usize;
    let mut configs = Vec::with_capacity(per_chain);
    let mut signs = Vec::with_capacity(per_chain);
    for _ in 0..per_chain {
        for _ in 0..thin {
            if step(&mut current, &mut rho_cur, &mut rng) {
                accepted += 1;
            }
            steps += 1;
        }
        configs.push(current.clone());
        signs.push(if rho_cur.re >= 0.0 { 1.0 } else { -1.0 });
    }
    Ok((configs, signs, accepted, steps))
}

fn chain_rng(seed: u64, chain: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(chain + 1);
    rng
}

fn initial_joint<M: DensityModel, R: Rng + ?Sized>(
    model: &M,
    n_sites: usize,
    sector_restricted: bool,
    rng: &mut R,
) -> Result<JointConfig> {
    for _ in 0..1000 {
        let mut cfg = JointConfig::random(n_sites, rng);
        if sector_restricted && !sector_allowed(&cfg) {
            cfg.col.flip_in_place(0);
        }
        if model.rho(&cfg).norm() >= RHO_GUARD {
            return Ok(cfg);
        }
    }
    Err(Error::AmplitudeUnderflow { magnitude: 0.0 })
}
