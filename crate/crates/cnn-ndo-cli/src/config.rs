//! Run configuration: a single TOML file with strict schema validation.
//!
//! Unknown keys are rejected everywhere. Defaults mirror the standard
//! experimental setup: 1024 training samples per iteration, 100000
//! evaluation samples, β = 1 unless a section says otherwise.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use cnn_ndo::cnn::InitScheme;
use cnn_ndo::liouvillian::SiteOperator;
use cnn_ndo::optimizer::{OptimizerConfig, TrackConfig};
use cnn_ndo::sampler::SamplerConfig;
use cnn_ndo::{Architecture, ConvLayerSpec, Error, ModelSpec, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_from: Option<PathBuf>,
    pub model: ModelSection,
    pub architecture: ArchSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub eval: EvalSection,
}

/// Model block; `type` selects which keys are required.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lx: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ly: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jx: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jz: Option<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSection {
    /// Layers as [kernel_x, kernel_y, in_channels, kernels].
    pub conv_layers: Vec<[usize; 4]>,
    #[serde(default = "default_true")]
    pub pooling: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leaky_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitScheme>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default = "default_train_samples")]
    pub n_samples: usize,
    #[serde(default = "default_chains")]
    pub n_chains: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thin: Option<usize>,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub sector_restricted: bool,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            n_samples: default_train_samples(),
            n_chains: default_chains(),
            burn_in: None,
            thin: None,
            beta: default_beta(),
            sector_restricted: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    #[serde(default = "default_eta_max")]
    pub eta_max: f64,
    #[serde(default = "default_eta_min")]
    pub eta_min: f64,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_plateau_window")]
    pub plateau_window: usize,
    #[serde(default = "default_plateau_tol")]
    pub plateau_tol: f64,
    #[serde(default = "default_anneal_floor")]
    pub anneal_floor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track: Option<TrackSection>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        Self {
            momentum: default_momentum(),
            eta0: default_eta0(),
            eta_max: default_eta_max(),
            eta_min: default_eta_min(),
            max_iters: default_max_iters(),
            plateau_window: default_plateau_window(),
            plateau_tol: default_plateau_tol(),
            anneal_floor: default_anneal_floor(),
            track: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackSection {
    pub op: String,
    #[serde(default = "default_track_every")]
    pub every: usize,
    #[serde(default = "default_track_samples")]
    pub n_samples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_eval_samples")]
    pub n_samples: usize,
    /// β used only for the sector-matrix rescaling in `exact`.
    #[serde(default = "default_sector_beta")]
    pub sector_beta: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            n_samples: default_eval_samples(),
            sector_beta: default_sector_beta(),
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_train_samples() -> usize {
    1024
}
fn default_chains() -> usize {
    8
}
fn default_beta() -> f64 {
    1.0
}
fn default_momentum() -> f64 {
    0.9
}
fn default_eta0() -> f64 {
    0.01
}
fn default_eta_max() -> f64 {
    0.1
}
fn default_eta_min() -> f64 {
    1e-8
}
fn default_max_iters() -> usize {
    20_000
}
fn default_plateau_window() -> usize {
    500
}
fn default_plateau_tol() -> f64 {
    1e-3
}
fn default_anneal_floor() -> f64 {
    1e-4
}
fn default_track_every() -> usize {
    25
}
fn default_track_samples() -> usize {
    4096
}
fn default_eval_samples() -> usize {
    100_000
}
fn default_sector_beta() -> f64 {
    0.2
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_spec()?;
        let model = self.model_spec()?;
        self.architecture(&model)?;
        self.sampler_config(&model)?;
        self.optimizer_config()?;
        self.track_config()?;
        if self.eval.n_samples == 0 {
            return Err(Error::InvalidConfig("eval.n_samples must be > 0".into()));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let m = &self.model;
        let need = |opt: Option<f64>, key: &str| {
            opt.ok_or_else(|| {
                Error::InvalidConfig(format!("model.{key} is required for type {:?}", m.kind))
            })
        };
        match m.kind.as_str() {
            "tfi1d" => {
                let n = m.n.ok_or_else(|| {
                    Error::InvalidConfig("model.n is required for type \"tfi1d\"".into())
                })?;
                for (set, key) in [
                    (m.lx.is_some(), "lx"),
                    (m.ly.is_some(), "ly"),
                    (m.jx.is_some(), "jx"),
                    (m.jy.is_some(), "jy"),
                    (m.jz.is_some(), "jz"),
                ] {
                    if set {
                        return Err(Error::InvalidConfig(format!(
                            "model.{key} does not apply to type \"tfi1d\""
                        )));
                    }
                }
                ModelSpec::tfi_chain(n, need(m.v, "v")?, need(m.g, "g")?, m.gamma)
            }
            "heisenberg2d" => {
                let lx = m.lx.ok_or_else(|| {
                    Error::InvalidConfig("model.lx is required for type \"heisenberg2d\"".into())
                })?;
                let ly = m.ly.ok_or_else(|| {
                    Error::InvalidConfig("model.ly is required for type \"heisenberg2d\"".into())
                })?;
                for (set, key) in [
                    (m.n.is_some(), "n"),
                    (m.v.is_some(), "v"),
                    (m.g.is_some(), "g"),
                ] {
                    if set {
                        return Err(Error::InvalidConfig(format!(
                            "model.{key} does not apply to type \"heisenberg2d\""
                        )));
                    }
                }
                ModelSpec::heisenberg_square(
                    lx,
                    ly,
                    need(m.jx, "jx")?,
                    need(m.jy, "jy")?,
                    need(m.jz, "jz")?,
                    m.gamma,
                )
            }
            other => Err(Error::InvalidConfig(format!(
                "model.type must be \"tfi1d\" or \"heisenberg2d\", got {other:?}"
            ))),
        }
    }

    pub fn architecture(&self, model: &ModelSpec) -> Result<Architecture> {
        let layers: Vec<ConvLayerSpec> = self
            .architecture
            .conv_layers
            .iter()
            .map(|&[kx, ky, c, k]| ConvLayerSpec::new(kx, ky, c, k))
            .collect();
        let mut arch = if self.architecture.pooling {
            Architecture::pooled(layers)
        } else {
            Architecture::unpooled(layers, model.lattice().extents())
        };
        if let Some(slope) = self.architecture.leaky_slope {
            arch.leaky_slope = slope;
        }
        if let Some(init) = self.architecture.init {
            arch.init = init;
        }
        arch.validate()?;
        arch.check_lattice(model.lattice())?;
        Ok(arch)
    }

    pub fn sampler_config(&self, model: &ModelSpec) -> Result<SamplerConfig> {
        let s = &self.sampler;
        if s.sector_restricted && !model.conserves_sector_parity() {
            return Err(Error::InvalidConfig(
                "sampler.sector_restricted requires a parity-conserving model \
                 (the transverse field mixes sectors)"
                    .into(),
            ));
        }
        let cfg = SamplerConfig {
            n_samples: s.n_samples,
            n_chains: s.n_chains,
            burn_in: s.burn_in,
            thin: s.thin,
            beta: s.beta,
            sector_restricted: s.sector_restricted,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn optimizer_config(&self) -> Result<OptimizerConfig> {
        let o = &self.optimizer;
        let cfg = OptimizerConfig {
            momentum: o.momentum,
            eta0: o.eta0,
            eta_max: o.eta_max,
            eta_min: o.eta_min,
            grow: 1.05,
            max_iters: o.max_iters,
            plateau_window: o.plateau_window,
            plateau_tol: o.plateau_tol,
            anneal_floor: o.anneal_floor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn track_config(&self) -> Result<Option<TrackConfig>> {
        match &self.optimizer.track {
            None => Ok(None),
            Some(t) => {
                let op: SiteOperator = t.op.parse()?;
                if t.every == 0 || t.n_samples == 0 {
                    return Err(Error::InvalidConfig(
                        "optimizer.track.every and n_samples must be > 0".into(),
                    ));
                }
                Ok(Some(TrackConfig {
                    op,
                    every: t.every,
                    n_samples: t.n_samples,
                }))
            }
        }
    }
}
