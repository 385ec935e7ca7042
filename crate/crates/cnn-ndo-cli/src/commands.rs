//! Subcommand implementations and artifact writers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use cnn_ndo::checkpoint::Checkpoint;
use cnn_ndo::estimators::{estimate_observable, ObservableEstimate};
use cnn_ndo::exact::{
    dense_observable, ness_for, positivity_report, sector_ordered_matrix, PositivityReport,
    DEFAULT_MAX_DENSE_SITES,
};
use cnn_ndo::liouvillian::SiteOperator;
use cnn_ndo::optimizer::{run, IterRecord};
use cnn_ndo::sampler::{sample_diagonal, SamplerConfig};
use cnn_ndo::{CnnNdo, Error, ModelSpec, Result};

use crate::config::RunConfig;

pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub init_from: Option<PathBuf>,
    pub threads: Option<usize>,
}

fn resolve(cfg: &RunConfig, ov: &Overrides) -> RunConfig {
    let mut cfg = cfg.clone();
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &ov.output {
        cfg.output_dir = Some(out.clone());
    }
    if let Some(init) = &ov.init_from {
        cfg.init_from = Some(init.clone());
    }
    cfg
}

fn output_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg
        .output_dir
        .clone()
        .ok_or_else(|| Error::InvalidConfig("no output directory (set output_dir or --output)".into()))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn model_summary(model: &ModelSpec) -> String {
    format!("{:?} on {:?}", model.hamiltonian(), model.lattice().dims())
}

fn initial_model(cfg: &RunConfig, arch: &cnn_ndo::Architecture, model: &ModelSpec) -> Result<CnnNdo> {
    match &cfg.init_from {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            let loaded = ckpt.to_model()?;
            if loaded.arch().conv_layers != arch.conv_layers
                || loaded.arch().pooling != arch.pooling
            {
                return Err(Error::Mismatch(format!(
                    "checkpoint architecture {:?} does not match the configured one {:?}",
                    loaded.arch().conv_layers,
                    arch.conv_layers
                )));
            }
            loaded.bind(model.lattice())?;
            Ok(loaded)
        }
        None => CnnNdo::init(arch.clone(), cfg.seed),
    }
}

pub fn cmd_train(cfg: &RunConfig, ov: &Overrides) -> Result<()> {
    let cfg = resolve(cfg, ov);
    cfg.validate()?;
    let model_spec = cfg.model_spec()?;
    let arch = cfg.architecture(&model_spec)?;
    let sampler_cfg = cfg.sampler_config(&model_spec)?;
    let opt_cfg = cfg.optimizer_config()?;
    let track = cfg.track_config()?;
    let dir = output_dir(&cfg)?;

    let model = initial_model(&cfg, &arch, &model_spec)?;
    let started = Instant::now();
    let outcome = run(model, &model_spec, &sampler_cfg, &opt_cfg, track)?;
    let wall = started.elapsed().as_secs_f64();

    std::fs::write(dir.join("trace.csv"), render_trace(&outcome.trace))?;

    let mut metadata = BTreeMap::new();
    metadata.insert("model".to_string(), model_summary(&model_spec));
    metadata.insert("seed".to_string(), cfg.seed.to_string());
    metadata.insert("iterations".to_string(), outcome.iterations.to_string());
    metadata.insert(
        "created_by".to_string(),
        format!("cnn-ndo {}", env!("CARGO_PKG_VERSION")),
    );
    Checkpoint::from_model(&outcome.model, metadata).save(&dir.join("checkpoint.json"))?;

    let final_cost = outcome.trace.last().map(|r| r.cost);
    let meta = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "command": "train",
        "config": &cfg,
        "seed": cfg.seed,
        "threads": ov.threads,
        "wall_seconds": wall,
        "iterations": outcome.iterations,
        "stopped_by_plateau": outcome.stopped_by_plateau,
        "final_cost": final_cost,
    });
    std::fs::write(dir.join("run_meta.json"), serde_json::to_string_pretty(&meta).unwrap())?;

    println!(
        "trained {} iterations (plateau: {}), final cost {:.6e}; artifacts in {}",
        outcome.iterations,
        outcome.stopped_by_plateau,
        final_cost.unwrap_or(f64::NAN),
        dir.display()
    );
    Ok(())
}

fn render_trace(trace: &[IterRecord]) -> String {
    let mut out = String::new();
    out.push_str("# cnn-ndo trace v1\n");
    out.push_str("iter,cost,std_error,step_size,acceptance_rate,backtracked,tracked\n");
    for rec in trace {
        let tracked = rec.tracked.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            rec.iter,
            rec.cost,
            rec.std_error,
            rec.step_size,
            rec.acceptance_rate,
            rec.backtracked as u8,
            tracked
        );
    }
    out
}

fn observable_json(est: &ObservableEstimate) -> serde_json::Value {
    json!({
        "value": est.value,
        "std_error": est.std_error,
        "imag_value": est.imag_value,
        "imag_std_error": est.imag_std_error,
        "mean_sign": est.mean_sign,
    })
}

fn positivity_json(report: &PositivityReport) -> serde_json::Value {
    json!({
        "min_eigenvalue": report.min_eigenvalue,
        "trace_real": report.trace.re,
        "trace_imag": report.trace.im,
        "hermiticity_defect": report.hermiticity_defect,
        "sector_leakage": report.sector_leakage,
    })
}

pub fn cmd_evaluate(cfg: &RunConfig, ov: &Overrides) -> Result<()> {
    let cfg = resolve(cfg, ov);
    let model_spec = cfg.model_spec()?;
    let dir = output_dir(&cfg)?;
    let ckpt_path = cfg
        .init_from
        .clone()
        .ok_or_else(|| Error::InvalidConfig("evaluate needs a checkpoint (--init-from)".into()))?;
    let model = Checkpoint::load(&ckpt_path)?.to_model()?;
    let bound = model.bind(model_spec.lattice())?;

    let scfg = SamplerConfig {
        n_samples: cfg.eval.n_samples,
        n_chains: cfg.sampler.n_chains,
        burn_in: cfg.sampler.burn_in,
        thin: cfg.sampler.thin,
        beta: 1.0,
        sector_restricted: false,
        seed: cfg.seed,
    };
    let batch = sample_diagonal(&bound, &scfg, model_spec.lattice())?;

    let mut obs = serde_json::Map::new();
    for op in [SiteOperator::Sx, SiteOperator::Sy, SiteOperator::Sz] {
        let est = estimate_observable(&bound, op, &batch)?;
        obs.insert(op.to_string(), observable_json(&est));
    }
    let n_sites = model_spec.lattice().n_sites();
    let positivity = if n_sites <= DEFAULT_MAX_DENSE_SITES {
        Some(positivity_report(&bound, n_sites)?)
    } else {
        None
    };

    let out = json!({
        "model": model_summary(&model_spec),
        "checkpoint": ckpt_path.display().to_string(),
        "n_samples": cfg.eval.n_samples,
        "acceptance_rate": batch.acceptance_rate,
        "observables": obs,
        "positivity": positivity.as_ref().map(positivity_json),
    });
    let path = dir.join("observables.json");
    std::fs::write(&path, serde_json::to_string_pretty(&out).unwrap())?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_exact(cfg: &RunConfig, ov: &Overrides) -> Result<()> {
    let cfg = resolve(cfg, ov);
    let model_spec = cfg.model_spec()?;
    let dir = output_dir(&cfg)?;
    let lattice = model_spec.lattice();

    let ness = ness_for(&model_spec)?;
    let out = json!({
        "model": model_summary(&model_spec),
        "observables": {
            "sx": dense_observable(&ness.rho, lattice, SiteOperator::Sx),
            "sy": dense_observable(&ness.rho, lattice, SiteOperator::Sy),
            "sz": dense_observable(&ness.rho, lattice, SiteOperator::Sz),
        },
        "residual_norm": ness.residual_norm,
        "second_singular_value": ness.second_singular_value,
        "min_eigenvalue": cnn_ndo::exact::hermitian_eigenvalues(&ness.rho)[0],
        "trace_real": ness.rho.trace().re,
    });
    let path = dir.join("ness_observables.json");
    std::fs::write(&path, serde_json::to_string_pretty(&out).unwrap())?;

    let beta = cfg.eval.sector_beta;
    let (order, matrix) = sector_ordered_matrix(&ness.rho, lattice.n_sites(), beta);
    let mut csv = String::new();
    let _ = writeln!(
        csv,
        "# cnn-ndo sector matrix v1: |rho|^(2*beta) with beta={beta}, rows/cols ordered by (total spin, config index)"
    );
    let _ = writeln!(
        csv,
        "# column order: {}",
        order
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    for i in 0..matrix.nrows() {
        let row: Vec<String> = (0..matrix.ncols()).map(|j| matrix[(i, j)].to_string()).collect();
        let _ = writeln!(csv, "{}", row.join(","));
    }
    let csv_path = dir.join("sector_matrix.csv");
    std::fs::write(&csv_path, csv)?;
    println!("wrote {} and {}", path.display(), csv_path.display());
    Ok(())
}

pub fn cmd_count_params(cfg: &RunConfig, ov: &Overrides) -> Result<()> {
    let cfg = resolve(cfg, ov);
    let model_spec = cfg.model_spec()?;
    let arch = cfg.architecture(&model_spec)?;
    println!("{}", arch.count_params());
    Ok(())
}

/// Map error kinds onto the documented process exit codes.
pub fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::Mismatch(_) | Error::Checkpoint(_) => 2,
        Error::SizeGuard(_) => 4,
        Error::ChainStuck { .. }
        | Error::AmplitudeUnderflow { .. }
        | Error::ZeroWeights
        | Error::SignProblem { .. }
        | Error::StepSizeUnderflow { .. }
        | Error::DegenerateSteadyState { .. }
        | Error::SteadyState(_) => 3,
        Error::Optimization { source, .. } => exit_code_for(source),
        Error::Io(_) => 1,
    }
}

/// Validate a path argument exists before treating it as config.
pub fn require_config(path: &Option<PathBuf>) -> Result<&Path> {
    path.as_deref()
        .ok_or_else(|| Error::InvalidConfig("--config PATH is required".into()))
}
