//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers. Heavy trained models are shared through lazy
//! fixtures, so the suite stays within a desk-scale time budget.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;

use cnn_ndo::estimators::{
    cost_and_gradient_with_log_weights, estimate_cost, estimate_cost_and_gradient,
    estimate_observable, ObservableEstimate,
};
use cnn_ndo::exact::{
    dense_liouvillian, dense_observable, exact_cost, exact_cost_and_gradient,
    hermitian_eigenvalues, ness_for, positivity_report, residual_norm_via_rows, LookupNdo,
    DenseNess, UNIQUENESS_THRESHOLD,
};
use cnn_ndo::lattice::{JointConfig, Lattice, SpinConfig};
use cnn_ndo::liouvillian::{sector_offset, ModelSpec, SiteOperator};
use cnn_ndo::optimizer::{run, OptimizerConfig, RunOutcome};
use cnn_ndo::sampler::{enumerate_moves, sample_diagonal, sample_joint, SamplerConfig};
use cnn_ndo::{Architecture, CnnNdo, ConvLayerSpec, DensityModel};

fn chain_arch() -> Architecture {
    Architecture::pooled(vec![
        ConvLayerSpec::new(3, 1, 2, 6),
        ConvLayerSpec::new(3, 1, 6, 20),
    ])
}

fn square_arch() -> Architecture {
    Architecture::pooled(vec![
        ConvLayerSpec::new(2, 2, 2, 6),
        ConvLayerSpec::new(2, 2, 6, 6),
        ConvLayerSpec::new(2, 2, 6, 6),
    ])
}

fn tfi(n: usize, g: f64) -> ModelSpec {
    ModelSpec::tfi_chain(n, 2.0, g, 1.0).unwrap()
}

fn heisenberg22(jy: f64) -> ModelSpec {
    ModelSpec::heisenberg_square(2, 2, 0.9, jy, 1.0, 1.0).unwrap()
}

fn mc_observable(
    model: &CnnNdo,
    liouv: &ModelSpec,
    op: SiteOperator,
    n_samples: usize,
    seed: u64,
) -> ObservableEstimate {
    let bound = model.bind(liouv.lattice()).unwrap();
    let scfg = SamplerConfig {
        n_samples,
        n_chains: 8,
        seed,
        ..Default::default()
    };
    let batch = sample_diagonal(&bound, &scfg, liouv.lattice()).unwrap();
    estimate_observable(&bound, op, &batch).unwrap()
}

fn train(
    model: CnnNdo,
    liouv: &ModelSpec,
    sampler: SamplerConfig,
    optimizer: OptimizerConfig,
) -> RunOutcome {
    run(model, liouv, &sampler, &optimizer, None).unwrap()
}

/// Fully trained 6-site TFI model at g/γ = 2 (criterion 5's setting),
/// 1024 samples per iteration, at most 20000 iterations.
fn trained_tfi6() -> &'static RunOutcome {
    static FIXTURE: OnceLock<RunOutcome> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let liouv = tfi(6, 2.0);
        let sampler = SamplerConfig {
            n_samples: 1024,
            n_chains: 8,
            seed: 12345,
            ..Default::default()
        };
        let optimizer = OptimizerConfig::default();
        let out = train(CnnNdo::init(chain_arch(), 9).unwrap(), &liouv, sampler, optimizer);
        eprintln!(
            "[fixture] trained TFI N=6 g=2: {} iterations, final cost {:.3e}",
            out.iterations,
            out.trace.last().map(|r| r.cost).unwrap_or(f64::NAN)
        );
        out
    })
}

fn tfi6_ness() -> &'static DenseNess {
    static FIXTURE: OnceLock<DenseNess> = OnceLock::new();
    FIXTURE.get_or_init(|| ness_for(&tfi(6, 2.0)).unwrap())
}

/// Fully trained 2×2 Heisenberg model at J_y = γ with sector-restricted,
/// β-rescaled sampling.
fn trained_heis22() -> &'static RunOutcome {
    static FIXTURE: OnceLock<RunOutcome> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let liouv = heisenberg22(1.0);
        let sampler = SamplerConfig {
            n_samples: 1024,
            n_chains: 8,
            beta: 0.2,
            sector_restricted: true,
            seed: 777,
            ..Default::default()
        };
        let optimizer = OptimizerConfig {
            max_iters: 10_000,
            ..Default::default()
        };
        let out = train(
            CnnNdo::init(square_arch(), 21).unwrap(),
            &liouv,
            sampler,
            optimizer,
        );
        eprintln!(
            "[fixture] trained Heisenberg 2x2 Jy=1: {} iterations, final cost {:.3e}",
            out.iterations,
            out.trace.last().map(|r| r.cost).unwrap_or(f64::NAN)
        );
        out
    })
}

#[test]
fn a01_parameter_count_reproduction() {
    assert_eq!(chain_arch().count_params(), 438);
    assert_eq!(square_arch().count_params(), 350);
    eprintln!("ACCEPTANCE 1 (parameter counts): PASS — chain 438, square 350");
}

#[test]
fn a02_oracle_equivalence() {
    let models = [
        ModelSpec::tfi_chain(2, 2.0, 1.3, 1.0).unwrap(),
        ModelSpec::tfi_chain(3, 2.0, 0.7, 1.2).unwrap(),
        heisenberg22(1.3),
    ];
    let mut worst_entry = 0.0f64;
    let mut worst_residual = 0.0f64;
    for model in &models {
        let n = model.lattice().n_sites();
        let dim = 1usize << n;
        let dense = dense_liouvillian(model).unwrap();
        for r in 0..dim {
            for c in 0..dim {
                let target = JointConfig::new(
                    SpinConfig::from_index(r as u64, n),
                    SpinConfig::from_index(c as u64, n),
                )
                .unwrap();
                let mut sparse = vec![Complex64::ZERO; dim * dim];
                for elem in model.lindblad_row(&target).unwrap() {
                    let (sr, sc) = elem.source.index_pair();
                    sparse[sr as usize * dim + sc as usize] += elem.amplitude;
                }
                for j in 0..dim * dim {
                    let diff = (dense[(r * dim + c, j)] - sparse[j]).norm();
                    worst_entry = worst_entry.max(diff);
                }
            }
        }

        let ness = ness_for(model).unwrap();
        worst_residual = worst_residual.max(ness.residual_norm);
        assert!(ness.second_singular_value > UNIQUENESS_THRESHOLD);
        let lookup = LookupNdo::from_ness(&ness, n).unwrap();
        let via_rows = residual_norm_via_rows(&lookup, model).unwrap();
        worst_residual = worst_residual.max(via_rows);
    }
    assert!(worst_entry < 1e-12, "worst entry mismatch {worst_entry:.3e}");
    assert!(worst_residual < 1e-10, "worst residual {worst_residual:.3e}");
    eprintln!(
        "ACCEPTANCE 2 (oracle equivalence): PASS — worst entry diff {worst_entry:.1e}, \
         worst NESS residual {worst_residual:.1e}"
    );
}

#[test]
fn a03_gradient_correctness() {
    let liouv = tfi(3, 0.8);
    let lat = liouv.lattice().clone();
    let arch = Architecture::pooled(vec![
        ConvLayerSpec::new(3, 1, 2, 4),
        ConvLayerSpec::new(2, 1, 4, 6),
    ]);
    let h = 1e-6;
    let mut worst_rel = 0.0f64;
    for seed in 0..20u64 {
        let mut model = CnnNdo::init(arch.clone(), 3000 + seed).unwrap();
        let (_, grad) = {
            let bound = model.bind(&lat).unwrap();
            exact_cost_and_gradient(&bound, &liouv, 1.0).unwrap()
        };
        let mut fd = Vec::with_capacity(grad.len());
        let mut scale = 0.0f64;
        for i in 0..grad.len() {
            let orig = model.params()[i];
            model.params_mut()[i] = orig + h;
            let plus = exact_cost(&model.bind(&lat).unwrap(), &liouv, 1.0).unwrap();
            model.params_mut()[i] = orig - h;
            let minus = exact_cost(&model.bind(&lat).unwrap(), &liouv, 1.0).unwrap();
            model.params_mut()[i] = orig;
            let d = (plus - minus) / (2.0 * h);
            scale = scale.max(d.abs());
            fd.push(d);
        }
        // per-component relative error, with an absolute floor of
        // 1e-3 x the gradient scale where central differences lose digits
        for (g, d) in grad.iter().zip(&fd) {
            let rel = (g - d).abs() / d.abs().max(1e-3 * scale);
            worst_rel = worst_rel.max(rel);
        }
    }
    assert!(worst_rel < 1e-5, "worst relative error {worst_rel:.3e}");
    eprintln!(
        "ACCEPTANCE 3 (gradient vs finite differences): PASS — worst relative error {worst_rel:.1e} \
         over 20 random θ"
    );
}

#[test]
fn a04_estimator_consistency() {
    let liouv = tfi(4, 1.5);
    let lat = liouv.lattice().clone();
    let arch = Architecture::pooled(vec![
        ConvLayerSpec::new(3, 1, 2, 4),
        ConvLayerSpec::new(3, 1, 4, 6),
    ]);
    let mut worst_cost_z = 0.0f64;
    let mut worst_grad_z = 0.0f64;
    let mut worst_obs_z = 0.0f64;
    let mut worst_beta_z = 0.0f64;
    for seed in 0..20u64 {
        // random instance, bias-shifted so the diagonal is sign-healthy and
        // the state has no pathological dead configurations
        let mut model = CnnNdo::init(arch.clone(), 4000 + seed).unwrap();
        let p = model.param_count();
        model.params_mut()[p - 2] += 2.0;
        let bound = model.bind(&lat).unwrap();

        let exact = exact_cost(&bound, &liouv, 1.0).unwrap();
        let scfg = SamplerConfig {
            n_samples: 1024,
            n_chains: 8,
            burn_in: Some(400),
            seed: 100 + seed,
            ..Default::default()
        };
        let batch = sample_joint(&bound, &scfg, &lat).unwrap();
        let (mc, grad) = estimate_cost_and_gradient(&bound, &liouv, &batch).unwrap();
        let z = (mc.value - exact).abs() / mc.std_error;
        worst_cost_z = worst_cost_z.max(z);

        // gradient: project the full-sum and sampled gradients onto a fixed
        // direction; the projection's standard error comes from
        // delete-one-chain re-estimates
        let (_, exact_grad) = exact_cost_and_gradient(&bound, &liouv, 1.0).unwrap();
        let direction: Vec<f64> = (0..p)
            .map(|i| ((i * 2654435761 + 12345) % 1000) as f64 / 1000.0 - 0.5)
            .collect();
        let project =
            |g: &[f64]| g.iter().zip(&direction).map(|(a, b)| a * b).sum::<f64>();
        let proj_mc = project(&grad.g);
        let proj_exact = project(&exact_grad);
        let spc = batch.len() / batch.n_chains;
        let mut loo = Vec::with_capacity(batch.n_chains);
        for drop in 0..batch.n_chains {
            let keep: Vec<_> = batch
                .configs
                .iter()
                .enumerate()
                .filter(|(s, _)| s / spc != drop)
                .map(|(_, c)| c.clone())
                .collect();
            let lw: Vec<f64> = batch
                .log_weights
                .iter()
                .enumerate()
                .filter(|(s, _)| s / spc != drop)
                .map(|(_, w)| *w)
                .collect();
            let (_, g) =
                cost_and_gradient_with_log_weights(&bound, &liouv, &keep, &lw, 1).unwrap();
            loo.push(project(&g.g));
        }
        let m = loo.len() as f64;
        let mean = loo.iter().sum::<f64>() / m;
        let se_proj = ((m - 1.0) / m * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>())
            .sqrt()
            .max(1e-12);
        worst_grad_z = worst_grad_z.max((proj_mc - proj_exact).abs() / se_proj);

        // observables against the dense matrix of the same θ
        let rho = cnn_ndo::exact::dense_rho(&bound, 4).unwrap();
        for op in [SiteOperator::Sx, SiteOperator::Sz] {
            let exact_obs = dense_observable(&rho, &lat, op);
            let est = mc_observable(&model, &liouv, op, 4096, 200 + seed);
            let z = (est.value - exact_obs).abs() / est.std_error.max(1e-4);
            worst_obs_z = worst_obs_z.max(z);
        }

        // β = 0.2 reweighted estimate agrees with β = 1 within joint bars
        let scfg_beta = SamplerConfig {
            beta: 0.2,
            seed: 300 + seed,
            burn_in: Some(400),
            ..scfg
        };
        let batch_beta = sample_joint(&bound, &scfg_beta, &lat).unwrap();
        let mc_beta = estimate_cost(&bound, &liouv, &batch_beta).unwrap();
        let combined = (mc.std_error.powi(2) + mc_beta.std_error.powi(2)).sqrt();
        worst_beta_z = worst_beta_z.max((mc.value - mc_beta.value).abs() / combined);
    }
    assert!(worst_cost_z < 3.0, "cost deviation {worst_cost_z:.2}σ");
    assert!(worst_grad_z < 3.0, "gradient deviation {worst_grad_z:.2}σ");
    assert!(worst_obs_z < 3.0, "observable deviation {worst_obs_z:.2}σ");
    assert!(worst_beta_z < 3.0, "β-reweighting deviation {worst_beta_z:.2}σ");
    eprintln!(
        "ACCEPTANCE 4 (estimator consistency): PASS — worst z-scores over 20 θ: \
         cost {worst_cost_z:.2}, gradient {worst_grad_z:.2}, observables {worst_obs_z:.2}, \
         β-reweighting {worst_beta_z:.2}"
    );
}

#[test]
fn a05_tfi6_end_to_end() {
    let outcome = trained_tfi6();
    assert!(
        outcome.iterations <= 20_000,
        "took {} iterations",
        outcome.iterations
    );
    // the cost trace drops by at least two orders of magnitude
    let first = outcome.trace.first().unwrap().cost;
    let best = outcome.trace.iter().map(|r| r.cost).fold(f64::INFINITY, f64::min);
    assert!(
        first / best >= 100.0,
        "cost only dropped from {first:.3e} to {best:.3e}"
    );
    let liouv = tfi(6, 2.0);
    let ed_sx = dense_observable(&tfi6_ness().rho, liouv.lattice(), SiteOperator::Sx);
    let est = mc_observable(&outcome.model, &liouv, SiteOperator::Sx, 100_000, 999);
    let delta = (est.value - ed_sx).abs();
    assert!(
        delta < 0.01,
        "CNN ⟨σ^x⟩ {} ± {} vs ED {ed_sx}: |Δ| = {delta:.4}",
        est.value,
        est.std_error
    );
    eprintln!(
        "ACCEPTANCE 5 (N=6 end-to-end): PASS — ⟨σ^x⟩ CNN {:.4} ± {:.4} vs ED {ed_sx:.4} \
         (|Δ| = {delta:.4}) after {} iterations",
        est.value, est.std_error, outcome.iterations
    );
}

#[test]
fn a06a_sweep_tracks_ed() {
    let liouv_ref = tfi(6, 2.0);
    let base = trained_tfi6().model.clone();
    let sampler = SamplerConfig {
        n_samples: 1024,
        n_chains: 8,
        seed: 4242,
        ..Default::default()
    };
    let optimizer = OptimizerConfig {
        max_iters: 6000,
        ..Default::default()
    };

    // warm-chain outward from the trained g = 2 anchor
    let mut results: Vec<(f64, CnnNdo)> = vec![(2.0, base.clone())];
    for chain in [vec![1.5, 1.0, 0.5], vec![2.5, 3.0, 4.0]] {
        let mut warm = base.clone();
        for g in chain {
            let liouv = tfi(6, g);
            let out = train(warm.clone(), &liouv, sampler, optimizer);
            eprintln!(
                "[sweep] g={g}: {} iterations, cost {:.2e}",
                out.iterations,
                out.trace.last().map(|r| r.cost).unwrap_or(f64::NAN)
            );
            warm = out.model.clone();
            results.push((g, out.model));
        }
    }
    results.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut worst: (f64, f64, &str) = (0.0, 0.0, "");
    for (g, model) in &results {
        let liouv = tfi(6, *g);
        let ness = if (*g - 2.0).abs() < 1e-12 {
            tfi6_ness().clone()
        } else {
            ness_for(&liouv).unwrap()
        };
        for (op, name) in [
            (SiteOperator::Sx, "sx"),
            (SiteOperator::Sy, "sy"),
            (SiteOperator::Sz, "sz"),
        ] {
            let ed = dense_observable(&ness.rho, liouv_ref.lattice(), op);
            let est = mc_observable(model, &liouv, op, 30_000, 555);
            let delta = (est.value - ed).abs();
            if delta > worst.1 {
                worst = (*g, delta, name);
            }
            assert!(
                delta < 0.02,
                "g={g} {name}: CNN {} ± {} vs ED {ed}, |Δ| = {delta:.4}",
                est.value,
                est.std_error
            );
        }
    }
    eprintln!(
        "ACCEPTANCE 6a (sweep g/γ ∈ [0.5, 4] tracks ED): PASS — worst |Δ| = {:.4} at g={} ({})",
        worst.1, worst.0, worst.2
    );
}

#[test]
fn a06b_large_chains() {
    // N = 16 and N = 30 are beyond the dense oracle; substitute the exact
    // structural checks plus the published ⟨σ^x⟩ = 0.27 ± 0.03 at g/γ = 2.
    let base = &trained_tfi6().model;

    // size transfer + exact invariances of the transferred parameters
    let lat16 = Lattice::chain(16).unwrap();
    let bound16 = base.bind(&lat16).unwrap();
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(99);
    for _ in 0..32 {
        let cfg = JointConfig::random(16, &mut rng);
        let direct = bound16.rho(&cfg);
        assert_eq!(direct, bound16.rho(&cfg.swap()).conj());
        for shift in [1isize, 5, 11] {
            assert_eq!(direct, bound16.rho(&cfg.cyclic_shift(&lat16, (shift, 0))));
        }
    }

    // transfer-train N = 30 and check the published value
    let liouv30 = tfi(30, 2.0);
    let sampler = SamplerConfig {
        n_samples: 512,
        n_chains: 8,
        seed: 3030,
        ..Default::default()
    };
    let optimizer = OptimizerConfig {
        max_iters: 2500,
        anneal_floor: 4e-4,
        ..Default::default()
    };
    let out = train(base.clone(), &liouv30, sampler, optimizer);
    let est = mc_observable(&out.model, &liouv30, SiteOperator::Sx, 30_000, 31);
    let delta = (est.value - 0.27).abs();
    assert!(
        delta <= 0.03,
        "N=30 ⟨σ^x⟩ {} ± {} vs published 0.27 ± 0.03",
        est.value,
        est.std_error
    );
    eprintln!(
        "ACCEPTANCE 6b (N=16/N=30 substitutes): PASS — invariances exact on N=16; \
         N=30 ⟨σ^x⟩ {:.3} ± {:.3} within 0.03 of 0.27 after {} iterations",
        est.value, est.std_error, out.iterations
    );
}

#[test]
fn a07_sector_structure() {
    // exact steady state of the 2×2 Heisenberg model carries no weight in
    // odd-offset sectors
    let model = heisenberg22(1.0);
    let ness = ness_for(&model).unwrap();
    let mut worst = 0.0f64;
    for r in 0..16u64 {
        for c in 0..16u64 {
            let cfg =
                JointConfig::new(SpinConfig::from_index(r, 4), SpinConfig::from_index(c, 4))
                    .unwrap();
            if sector_offset(&cfg).rem_euclid(2) != 0 {
                worst = worst.max(ness.rho[(r as usize, c as usize)].norm());
            }
        }
    }
    assert!(worst < 1e-12, "odd-sector weight {worst:.3e}");

    // the restricted proposal kernel never leaves the parity sector:
    // exhaustive audit over every 4-site configuration pair and every move
    let mut audited = 0usize;
    for r in 0..16u64 {
        for c in 0..16u64 {
            let cfg =
                JointConfig::new(SpinConfig::from_index(r, 4), SpinConfig::from_index(c, 4))
                    .unwrap();
            let parity = sector_offset(&cfg).rem_euclid(2);
            for mv in enumerate_moves(&cfg, true) {
                assert_eq!(sector_offset(&mv).rem_euclid(2), parity);
                audited += 1;
            }
        }
    }
    eprintln!(
        "ACCEPTANCE 7 (sector structure): PASS — max odd-sector ED weight {worst:.1e}, \
         {audited} restricted moves audited"
    );
}

#[test]
fn a08_heisenberg22_end_to_end() {
    let anchor = trained_heis22();
    let sampler = SamplerConfig {
        n_samples: 1024,
        n_chains: 8,
        beta: 0.2,
        sector_restricted: true,
        seed: 808,
        ..Default::default()
    };
    let optimizer = OptimizerConfig {
        max_iters: 6000,
        ..Default::default()
    };

    let mut models: Vec<(f64, CnnNdo)> = vec![(1.0, anchor.model.clone())];
    let mut warm = anchor.model.clone();
    for jy in [0.5] {
        let out = train(warm.clone(), &heisenberg22(jy), sampler, optimizer);
        models.push((jy, out.model));
    }
    warm = anchor.model.clone();
    for jy in [1.5, 2.0] {
        let out = train(warm.clone(), &heisenberg22(jy), sampler, optimizer);
        warm = out.model.clone();
        models.push((jy, out.model));
    }

    let mut worst = (0.0f64, 0.0f64);
    for (jy, model) in &models {
        let liouv = heisenberg22(*jy);
        let ness = ness_for(&liouv).unwrap();
        let ed = dense_observable(&ness.rho, liouv.lattice(), SiteOperator::Sz);
        let est = mc_observable(model, &liouv, SiteOperator::Sz, 30_000, 818);
        let delta = (est.value - ed).abs();
        if delta > worst.1 {
            worst = (*jy, delta);
        }
        assert!(
            delta < 0.02,
            "Jy={jy}: CNN ⟨σ^z⟩ {} ± {} vs ED {ed}, |Δ| = {delta:.4}",
            est.value,
            est.std_error
        );
    }

    // restricted and unrestricted chains agree on the trained model's cost
    {
        let liouv = heisenberg22(1.0);
        let bound = anchor.model.bind(liouv.lattice()).unwrap();
        let mut scfg_r = SamplerConfig {
            n_samples: 4096,
            n_chains: 8,
            beta: 0.2,
            sector_restricted: true,
            seed: 606,
            ..Default::default()
        };
        let cost_r = estimate_cost(&bound, &liouv, &sample_joint(&bound, &scfg_r, liouv.lattice()).unwrap()).unwrap();
        scfg_r.sector_restricted = false;
        scfg_r.seed = 607;
        let cost_u = estimate_cost(&bound, &liouv, &sample_joint(&bound, &scfg_r, liouv.lattice()).unwrap()).unwrap();
        let combined = (cost_r.std_error.powi(2) + cost_u.std_error.powi(2)).sqrt();
        assert!(
            (cost_r.value - cost_u.value).abs() <= 3.0 * combined,
            "restricted {} ± {} vs unrestricted {} ± {}",
            cost_r.value, cost_r.std_error, cost_u.value, cost_u.std_error
        );
    }

    // 3×3 runs as a smoke test only: no dense reference at 2^9 dimensions
    let liouv33 = ModelSpec::heisenberg_square(3, 3, 0.9, 1.0, 1.0, 1.0).unwrap();
    let smoke_sampler = SamplerConfig {
        n_samples: 256,
        n_chains: 8,
        beta: 0.2,
        sector_restricted: true,
        seed: 33,
        ..Default::default()
    };
    let smoke_opt = OptimizerConfig {
        max_iters: 30,
        plateau_window: 1000,
        ..Default::default()
    };
    let smoke = train(
        CnnNdo::init(square_arch(), 5).unwrap(),
        &liouv33,
        smoke_sampler,
        smoke_opt,
    );
    assert!(smoke.trace.iter().all(|r| r.cost.is_finite()));

    eprintln!(
        "ACCEPTANCE 8 (Heisenberg 2×2 end-to-end): PASS — worst |Δ⟨σ^z⟩| = {:.4} at Jy={}; \
         3×3 smoke run finished {} iterations",
        worst.1, worst.0, smoke.iterations
    );
}

#[test]
fn a09_structural_invariants() {
    use rand::SeedableRng;

    // Hermiticity and translation invariance, exact, random θ
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(17);
    for seed in [1u64, 2, 3] {
        let model = CnnNdo::init(chain_arch(), seed).unwrap();
        let lat = Lattice::chain(8).unwrap();
        let bound = model.bind(&lat).unwrap();
        for _ in 0..16 {
            let cfg = JointConfig::random(8, &mut rng);
            assert_eq!(bound.rho(&cfg), bound.rho(&cfg.swap()).conj());
            for s in 1..8 {
                assert_eq!(bound.rho(&cfg), bound.rho(&cfg.cyclic_shift(&lat, (s, 0))));
            }
        }
        let model = CnnNdo::init(square_arch(), seed).unwrap();
        let lat = Lattice::square(3, 3).unwrap();
        let bound = model.bind(&lat).unwrap();
        for _ in 0..8 {
            let cfg = JointConfig::random(9, &mut rng);
            assert_eq!(bound.rho(&cfg), bound.rho(&cfg.swap()).conj());
            for dx in 0..3 {
                for dy in 0..3 {
                    assert_eq!(
                        bound.rho(&cfg),
                        bound.rho(&cfg.cyclic_shift(&lat, (dx, dy)))
                    );
                }
            }
        }
    }

    // identity observable is exactly 1 on a trained model, and the trained
    // diagonal is almost entirely positive (positivity is emergent)
    let liouv = tfi(6, 2.0);
    let est = mc_observable(
        &trained_tfi6().model,
        &liouv,
        SiteOperator::Identity,
        4096,
        9,
    );
    assert_eq!(est.value, 1.0);
    assert_eq!(est.std_error, 0.0);
    assert!(
        est.mean_sign > 0.98,
        "negative-sign fraction too large: mean sign {}",
        est.mean_sign
    );

    // determinism: a short run is a pure function of (config, seed)
    let liouv3 = tfi(3, 1.2);
    let arch = Architecture::pooled(vec![ConvLayerSpec::new(2, 1, 2, 3)]);
    let sampler = SamplerConfig {
        n_samples: 128,
        n_chains: 4,
        seed: 55,
        ..Default::default()
    };
    let optimizer = OptimizerConfig {
        max_iters: 20,
        ..Default::default()
    };
    let run_a = train(CnnNdo::init(arch.clone(), 1).unwrap(), &liouv3, sampler, optimizer);
    let run_b = train(CnnNdo::init(arch, 1).unwrap(), &liouv3, sampler, optimizer);
    assert_eq!(run_a.model.params(), run_b.model.params());
    assert_eq!(run_a.trace, run_b.trace);

    // post-training positivity diagnostics
    let lat6 = Lattice::chain(6).unwrap();
    let report6 = positivity_report(&trained_tfi6().model.bind(&lat6).unwrap(), 6).unwrap();
    assert_eq!(report6.hermiticity_defect, 0.0);
    assert!(
        report6.min_eigenvalue >= -0.01,
        "N=6 min eigenvalue {:.4}",
        report6.min_eigenvalue
    );
    let lat22 = Lattice::square(2, 2).unwrap();
    let report22 = positivity_report(&trained_heis22().model.bind(&lat22).unwrap(), 4).unwrap();
    assert!(
        report22.min_eigenvalue >= -0.01,
        "2x2 min eigenvalue {:.4}",
        report22.min_eigenvalue
    );

    // random init typically dips negative: positivity is emergent, not built in
    let random_rho = cnn_ndo::exact::dense_rho(
        &CnnNdo::init(chain_arch(), 4).unwrap().bind(&Lattice::chain(4).unwrap()).unwrap(),
        4,
    )
    .unwrap();
    let hermitized = (&random_rho + random_rho.adjoint()) * Complex64::new(0.5, 0.0);
    let trace = hermitized.trace().re;
    let normalized: DMatrix<Complex64> = hermitized / Complex64::new(trace, 0.0);
    let min_eig_random = hermitian_eigenvalues(&normalized)[0];
    assert!(min_eig_random < 0.0, "random init unexpectedly positive");

    eprintln!(
        "ACCEPTANCE 9 (structural invariants): PASS — exact Hermiticity/translation, identity \
         = 1, deterministic replay, min eig N=6 {:.3e}, 2×2 {:.3e} (sector leakage {:.2e})",
        report6.min_eigenvalue, report22.min_eigenvalue, report22.sector_leakage
    );
}

#[test]
fn a10_transfer_learning() {
    let base = &trained_tfi6().model;
    let liouv16 = tfi(16, 2.0);
    let optimizer = OptimizerConfig {
        max_iters: 900,
        plateau_window: 300,
        anneal_floor: 1e-3,
        ..Default::default()
    };

    let mut warm_iters = Vec::new();
    let mut cold_iters = Vec::new();
    for seed in [1u64, 2, 3] {
        let sampler = SamplerConfig {
            n_samples: 256,
            n_chains: 8,
            seed: 1000 + seed,
            ..Default::default()
        };
        let warm = train(base.clone(), &liouv16, sampler, optimizer);
        warm_iters.push(warm.iterations);
        let cold = train(
            CnnNdo::init(chain_arch(), 40 + seed).unwrap(),
            &liouv16,
            sampler,
            optimizer,
        );
        cold_iters.push(cold.iterations);
        eprintln!(
            "[transfer] seed {seed}: warm {} iters (plateau {}), cold {} iters (plateau {})",
            warm.iterations, warm.stopped_by_plateau, cold.iterations, cold.stopped_by_plateau
        );
    }
    warm_iters.sort_unstable();
    cold_iters.sort_unstable();
    let warm_median = warm_iters[1];
    let cold_median = cold_iters[1];
    assert!(
        warm_median < cold_median,
        "warm median {warm_median} vs cold median {cold_median}"
    );
    eprintln!(
        "ACCEPTANCE 10 (transfer learning): PASS — median iterations to plateau: \
         warm {warm_median} vs cold {cold_median}"
    );
}
