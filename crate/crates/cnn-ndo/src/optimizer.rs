//! Backtracking Nesterov accelerated gradient descent.
//!
//! Each step evaluates cost and gradient at the lookahead point θ + μ·v,
//! applies the update v ← μ·v - η·g, θ ← θ + v, and re-prices the new θ on
//! the same sample batch (θ + v is exactly a gradient step from the
//! lookahead point, so this is a line-search comparison between two points
//! priced with common random numbers). If the new cost exceeds the
//! lookahead cost by more than three combined standard errors, the step is
//! rejected: η halves, the velocity resets, and θ reverts. Accepted steps
//! grow η by 5% up to a cap. On deterministic problems the slack vanishes
//! and every accepted step descends.
//!
//! The optimization loop is sequential; all parallelism lives inside the
//! sampling and estimation calls. Given a master seed, per-iteration sampler
//! seeds are derived deterministically, so a run is a pure function of
//! (configuration, seed).

use serde::{Deserialize, Serialize};

use crate::cnn::{CnnNdo, DensityModel};
use crate::error::{Error, Result};
use crate::estimators::{
    cost_with_log_weights, estimate_cost_and_gradient_mode, estimate_observable,
    reweighted_log_weights, GradientMode,
};
use crate::liouvillian::{ModelSpec, SiteOperator};
use crate::sampler::{sample_diagonal, sample_joint, SampleBatch, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    /// Momentum coefficient μ.
    pub momentum: f64,
    /// Initial step size η₀.
    pub eta0: f64,
    pub eta_max: f64,
    /// Below this the backtracking has collapsed; signalled as failure.
    pub eta_min: f64,
    /// Growth factor applied to η after each accepted step.
    pub grow: f64,
    pub max_iters: usize,
    /// Stop when the best cost improved by less than `plateau_tol`
    /// (relatively) over this many iterations.
    pub plateau_window: usize,
    pub plateau_tol: f64,
    /// A plateau above this step-size cap anneals (halves the cap and
    /// rewinds to the best snapshot) instead of stopping; the run only
    /// finishes once progress stalls at a cap at or below this floor.
    pub anneal_floor: f64,
    /// Search direction supplied to the steps (the cost estimate itself is
    /// unaffected).
    pub gradient: GradientMode,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            eta0: 0.01,
            eta_max: 0.1,
            eta_min: 1e-8,
            grow: 1.05,
            max_iters: 20_000,
            plateau_window: 500,
            plateau_tol: 1e-3,
            anneal_floor: 1e-4,
            gradient: GradientMode::default(),
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.eta0 <= 0.0 || self.eta_max < self.eta0 || self.eta_min <= 0.0 {
            return Err(Error::InvalidConfig(
                "need 0 < eta_min, 0 < eta0 <= eta_max".to_string(),
            ));
        }
        if self.grow < 1.0 {
            return Err(Error::InvalidConfig(
                "step growth factor must be >= 1".to_string(),
            ));
        }
        if self.max_iters == 0 || self.plateau_window == 0 {
            return Err(Error::InvalidConfig(
                "max_iters and plateau_window must be positive".to_string(),
            ));
        }
        if self.anneal_floor <= 0.0 {
            return Err(Error::InvalidConfig(
                "anneal_floor must be positive".to_string(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub theta: Vec<f64>,
    pub velocity: Vec<f64>,
    pub step_size: f64,
    pub momentum_coeff: f64,
    pub iter: usize,
    pub best_cost: f64,
    pub best_cost_se: f64,
    eta_min: f64,
    /// Run-local cap on η; halved when the trajectory has to be rewound to
    /// its best snapshot, annealing the noise floor.
    eta_cap: f64,
    grow: f64,
}

impl OptimizerState {
    pub fn new(theta: Vec<f64>, cfg: &OptimizerConfig) -> Self {
        let n = theta.len();
        Self {
            theta,
            velocity: vec![0.0; n],
            step_size: cfg.eta0,
            momentum_coeff: cfg.momentum,
            iter: 0,
            best_cost: f64::INFINITY,
            best_cost_se: 0.0,
            eta_min: cfg.eta_min,
            eta_cap: cfg.eta_max,
            grow: cfg.grow,
        }
    }
}

/// One cost/gradient evaluation at the lookahead point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub cost: f64,
    pub std_error: f64,
    pub grad: Vec<f64>,
    pub acceptance_rate: f64,
}

/// Cost of a nearby θ re-estimated on the retained batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reprice {
    pub cost: f64,
    pub std_error: f64,
    /// Effective sample fraction of the reweighted batch; a collapse means
    /// the candidate θ moved the distribution too far for the batch to
    /// price it, and the step must not be trusted.
    pub ess_fraction: f64,
}

/// Supplies cost and gradient estimates to the optimizer. `evaluate`
/// samples at the given θ and retains whatever context is needed so that
/// `reprice` can estimate the cost of a nearby θ on the same batch,
/// keeping the backtracking comparison low-variance.
pub trait CostOracle {
    fn evaluate(&mut self, theta: &[f64]) -> Result<Evaluation>;
    fn reprice(&mut self, theta: &[f64]) -> Result<Reprice>;
}

/// Reprices with effective sample fraction below this are rejected.
pub const MIN_REPRICE_ESS: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Accepted {
        cost: f64,
        std_error: f64,
        acceptance_rate: f64,
    },
    Backtracked {
        cost: f64,
        std_error: f64,
        acceptance_rate: f64,
    },
}

impl StepOutcome {
    pub fn cost(&self) -> f64 {
        match *self {
            StepOutcome::Accepted { cost, .. } | StepOutcome::Backtracked { cost, .. } => cost,
        }
    }

    pub fn backtracked(&self) -> bool {
        matches!(self, StepOutcome::Backtracked { .. })
    }
}

/// One NAGD+ step with backtracking.
pub fn step<O: CostOracle>(state: &mut OptimizerState, oracle: &mut O) -> Result<StepOutcome> {
    let n = state.theta.len();
    let mu = state.momentum_coeff;

    let lookahead: Vec<f64> = (0..n)
        .map(|i| state.theta[i] + mu * state.velocity[i])
        .collect();
    let ev = oracle.evaluate(&lookahead)?;
    if ev.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidConfig(
            "non-finite gradient from cost oracle".to_string(),
        ));
    }

    let eta = state.step_size;
    let velocity_new: Vec<f64> = (0..n)
        .map(|i| mu * state.velocity[i] - eta * ev.grad[i])
        .collect();
    let theta_new: Vec<f64> = (0..n).map(|i| state.theta[i] + velocity_new[i]).collect();
    let repriced = oracle.reprice(&theta_new)?;
    let (cost_new, se_new) = (repriced.cost, repriced.std_error);

    let slack = 3.0 * (se_new.powi(2) + ev.std_error.powi(2)).sqrt();
    state.iter += 1;
    if cost_new > ev.cost + slack || repriced.ess_fraction < MIN_REPRICE_ESS {
        state.step_size = eta / 2.0;
        state.velocity.iter_mut().for_each(|v| *v = 0.0);
        if state.step_size < state.eta_min {
            return Err(Error::StepSizeUnderflow {
                eta: state.step_size,
                min: state.eta_min,
                iter: state.iter,
            });
        }
        Ok(StepOutcome::Backtracked {
            cost: cost_new,
            std_error: se_new,
            acceptance_rate: ev.acceptance_rate,
        })
    } else {
        state.theta = theta_new;
        state.velocity = velocity_new;
        state.step_size = (eta * state.grow).min(state.eta_cap);
        if cost_new < state.best_cost {
            state.best_cost = cost_new;
            state.best_cost_se = se_new;
        }
        Ok(StepOutcome::Accepted {
            cost: cost_new,
            std_error: se_new,
            acceptance_rate: ev.acceptance_rate,
        })
    }
}

/// Periodic observable tracking along the optimization trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackConfig {
    pub op: SiteOperator,
    pub every: usize,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub cost: f64,
    pub std_error: f64,
    pub step_size: f64,
    pub acceptance_rate: f64,
    pub backtracked: bool,
    pub tracked: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: CnnNdo,
    pub trace: Vec<IterRecord>,
    pub iterations: usize,
    pub stopped_by_plateau: bool,
}

/// Monte-Carlo cost oracle: samples the joint distribution at each candidate
/// θ and re-prices siblings on the retained batch by importance reweighting.
pub struct McOracle<'a> {
    work: CnnNdo,
    liouv: &'a ModelSpec,
    sampler: SamplerConfig,
    gradient: GradientMode,
    master_seed: u64,
    iter: u64,
    last: Option<RetainedBatch>,
}

struct RetainedBatch {
    batch: SampleBatch,
    old_log_abs: Vec<f64>,
}

impl<'a> McOracle<'a> {
    pub fn new(template: &CnnNdo, liouv: &'a ModelSpec, sampler: SamplerConfig) -> Self {
        Self::with_gradient(template, liouv, sampler, GradientMode::default())
    }

    pub fn with_gradient(
        template: &CnnNdo,
        liouv: &'a ModelSpec,
        sampler: SamplerConfig,
        gradient: GradientMode,
    ) -> Self {
        Self {
            work: template.clone(),
            liouv,
            gradient,
            master_seed: sampler.seed,
            sampler,
            iter: 0,
            last: None,
        }
    }
}

impl CostOracle for McOracle<'_> {
    fn evaluate(&mut self, theta: &[f64]) -> Result<Evaluation> {
        self.work.set_params(theta);
        let scfg = self.sampler.with_seed(derive_seed(self.master_seed, self.iter));
        self.iter += 1;
        let bound = self.work.bind(self.liouv.lattice())?;
        let batch = sample_joint(&bound, &scfg, self.liouv.lattice())?;
        let (cost, grad) =
            estimate_cost_and_gradient_mode(&bound, self.liouv, &batch, self.gradient)?;
        let old_log_abs = batch
            .configs
            .iter()
            .map(|c| bound.rho(c).norm().max(f64::MIN_POSITIVE).ln())
            .collect();
        let acceptance_rate = batch.acceptance_rate;
        self.last = Some(RetainedBatch { batch, old_log_abs });
        Ok(Evaluation {
            cost: cost.value,
            std_error: cost.std_error,
            grad: grad.g,
            acceptance_rate,
        })
    }

    fn reprice(&mut self, theta: &[f64]) -> Result<Reprice> {
        let retained = self
            .last
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("reprice before evaluate".to_string()))?;
        self.work.set_params(theta);
        let bound = self.work.bind(self.liouv.lattice())?;
        let lw = reweighted_log_weights(
            &bound,
            &retained.batch,
            self.sampler.beta,
            &retained.old_log_abs,
        )?;
        let est = cost_with_log_weights(
            &bound,
            self.liouv,
            &retained.batch.configs,
            &lw,
            retained.batch.n_chains,
        )?;
        Ok(Reprice {
            cost: est.value,
            std_error: est.std_error,
            ess_fraction: est.ess_fraction,
        })
    }
}

/// Full optimization loop: sample, estimate, step, until the cost plateaus
/// or `max_iters` is reached.
pub fn run(
    model: CnnNdo,
    liouv: &ModelSpec,
    sampler_cfg: &SamplerConfig,
    opt_cfg: &OptimizerConfig,
    track: Option<TrackConfig>,
) -> Result<RunOutcome> {
    opt_cfg.validate()?;
    sampler_cfg.validate()?;
    model.bind(liouv.lattice())?;

    let mut oracle = McOracle::with_gradient(&model, liouv, *sampler_cfg, opt_cfg.gradient);
    let mut state = OptimizerState::new(model.params().to_vec(), opt_cfg);
    let mut work = model.clone();
    let mut trace = Vec::new();
    let mut best_history: Vec<f64> = Vec::with_capacity(opt_cfg.max_iters);
    let mut stopped_by_plateau = false;

    // Snapshot of the best windowed-median parameters: the anchor that
    // plateau-triggered annealing rewinds to, and the fallback if the final
    // iterate drifted above its own best level.
    let mut snap_theta = state.theta.clone();
    let mut snap_median = f64::INFINITY;
    let mut last_anneal = 0usize;

    while state.iter < opt_cfg.max_iters {
        let iter = state.iter;
        let outcome = step(&mut state, &mut oracle).map_err(|e| match e {
            Error::Optimization { .. } => e,
            other => other.at_iteration(iter),
        })?;

        let tracked = match track {
            Some(t) if t.every > 0 && state.iter % t.every == 0 => {
                work.set_params(&state.theta);
                track_observable(&work, liouv, sampler_cfg, t, state.iter as u64)
            }
            _ => None,
        };

        let (cost, std_error, acceptance_rate) = match outcome {
            StepOutcome::Accepted {
                cost,
                std_error,
                acceptance_rate,
            }
            | StepOutcome::Backtracked {
                cost,
                std_error,
                acceptance_rate,
            } => (cost, std_error, acceptance_rate),
        };
        trace.push(IterRecord {
            iter: state.iter,
            cost,
            std_error,
            step_size: state.step_size,
            acceptance_rate,
            backtracked: outcome.backtracked(),
            tracked,
        });
        best_history.push(cost);

        if state.iter.is_multiple_of(REWIND_CHECK) && best_history.len() >= REWIND_WINDOW {
            let tail = &best_history[best_history.len() - REWIND_WINDOW..];
            let med = median(tail);
            if med < snap_median {
                snap_median = med;
                snap_theta.copy_from_slice(&state.theta);
            }
        }

        // plateau check on window-half medians; individual estimates are
        // noisy and rejected-step records can spike arbitrarily high, so
        // neither raw values nor means are usable
        let w = opt_cfg.plateau_window;
        if best_history.len() >= w && w >= 4 && state.iter >= last_anneal + w {
            let tail = &best_history[best_history.len() - w..];
            let half = w / 2;
            let older = median(&tail[..half]);
            let newer = median(&tail[half..]);
            if older <= 0.0 || (older - newer) < opt_cfg.plateau_tol * older {
                if state.eta_cap > opt_cfg.anneal_floor {
                    // progress stalled at the current step-size noise floor:
                    // rewind to the best level and continue with a finer step
                    state.theta.copy_from_slice(&snap_theta);
                    state.velocity.iter_mut().for_each(|v| *v = 0.0);
                    state.anneal().map_err(|e| e.at_iteration(state.iter))?;
                    last_anneal = state.iter;
                } else {
                    stopped_by_plateau = true;
                    break;
                }
            }
        }
    }

    // hand back the best level seen rather than a possibly drifted endpoint
    if best_history.len() >= REWIND_WINDOW {
        let med = median(&best_history[best_history.len() - REWIND_WINDOW..]);
        if snap_median < med {
            state.theta.copy_from_slice(&snap_theta);
        }
    }

    work.set_params(&state.theta);
    let iterations = state.iter;
    Ok(RunOutcome {
        model: work,
        trace,
        iterations,
        stopped_by_plateau,
    })
}

fn track_observable(
    model: &CnnNdo,
    liouv: &ModelSpec,
    sampler_cfg: &SamplerConfig,
    track: TrackConfig,
    iter: u64,
) -> Option<f64> {
    let bound = model.bind(liouv.lattice()).ok()?;
    let scfg = SamplerConfig {
        n_samples: track.n_samples,
        seed: derive_seed(sampler_cfg.seed ^ TRACK_SEED_SALT, iter),
        ..*sampler_cfg
    };
    let batch = sample_diagonal(&bound, &scfg, liouv.lattice()).ok()?;
    estimate_observable(&bound, track.op, &batch)
        .ok()
        .map(|est| est.value)
}

/// Seed-domain separator keeping tracking chains off the training streams.
const TRACK_SEED_SALT: u64 = 0x517c_c1b7_2722_0a95;

/// Window length for the drift-rewind statistics.
const REWIND_WINDOW: usize = 50;
/// How often the drift check runs.
const REWIND_CHECK: usize = 25;

impl OptimizerState {
    /// Halve the step-size cap after a rewind; underflow means the
    /// optimization cannot make progress at any usable step size.
    fn anneal(&mut self) -> Result<()> {
        self.eta_cap /= 2.0;
        self.step_size = self.step_size.min(self.eta_cap);
        if self.eta_cap < self.eta_min {
            return Err(Error::StepSizeUnderflow {
                eta: self.eta_cap,
                min: self.eta_min,
                iter: self.iter,
            });
        }
        Ok(())
    }
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite costs"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    }
}

/// SplitMix64 step: deterministic per-iteration seed derivation.
pub(crate) fn derive_seed(master: u64, iter: u64) -> u64 {
    let mut z = master
        .wrapping_add(iter.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
