//! Dense exact-diagonalization oracle.
//!
//! Everything here is built from Kronecker products of 2×2 matrices,
//! independently of the sparse row enumeration in [`crate::liouvillian`], so
//! the two construction routes cross-check each other. Basis conventions:
//! single-site index order is (down, up), matching the enumeration bijection
//! bit = (1+σ)/2; a site-s operator sits at the s-th kron factor from the
//! right; density matrices are vectorized row-major, vec index
//! J = index(σ)·D + index(σ′), giving the superoperator
//!
//!   𝓛 = -i (H⊗I - I⊗Hᵀ) + Σ_k γ (L_k⊗L̄_k - ½ L_k†L_k⊗I - ½ I⊗(L_k†L_k)ᵀ).
//!
//! The steady state is the null vector of 𝓛: extracted by full SVD at small
//! dimensions (which also yields the second-smallest singular value for the
//! uniqueness check) and by a partially pivoted LU with deflated inverse
//! iteration above the SVD cutoff. Exact full-enumeration cost and gradient
//! sums over all 4^S configuration pairs serve as ground truth for every
//! stochastic estimator.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::cnn::{DensityModel, RHO_GUARD};
use crate::error::{Error, Result};
use crate::estimators::{cost_and_gradient_with_log_weights, cost_with_log_weights};
use crate::lattice::{JointConfig, Lattice, SpinConfig};
use crate::liouvillian::{sector_allowed, Hamiltonian, ModelSpec, SiteOperator};
use crate::parallel;

/// Dense Liouvillian guard: a D²×D² complex matrix takes 16·4^(2S) bytes.
pub const DEFAULT_MAX_DENSE_SITES: usize = 6;

/// Full-enumeration guard: 4^S configuration pairs.
pub const DEFAULT_MAX_ENUM_SITES: usize = 7;

/// Below this second-smallest singular value the null space is ambiguous.
pub const UNIQUENESS_THRESHOLD: f64 = 1e-8;

/// Dimension up to which the full SVD route is used in [`solve_ness`].
const SVD_CUTOFF: usize = 300;

/// Exact steady state with its diagnostics.
#[derive(Debug, Clone)]
pub struct DenseNess {
    /// Hermitized, trace-normalized D×D steady-state density matrix.
    pub rho: DMatrix<Complex64>,
    /// ‖𝓛 vec(ρ)‖₂ / ‖vec(ρ)‖₂ evaluated on the dense Liouvillian.
    pub residual_norm: f64,
    /// Second-smallest singular value of 𝓛 (estimate on the LU route).
    pub second_singular_value: f64,
}

/// 2×2 Pauli matrices in the (down, up) index order.
pub fn pauli_matrix(op: SiteOperator) -> DMatrix<Complex64> {
    let z = Complex64::ZERO;
    let one = Complex64::ONE;
    let i = Complex64::I;
    match op {
        SiteOperator::Identity => DMatrix::from_row_slice(2, 2, &[one, z, z, one]),
        SiteOperator::Sx => DMatrix::from_row_slice(2, 2, &[z, one, one, z]),
        SiteOperator::Sy => DMatrix::from_row_slice(2, 2, &[z, i, -i, z]),
        SiteOperator::Sz => DMatrix::from_row_slice(2, 2, &[-one, z, z, one]),
    }
}

/// Lowering operator σ⁻ = ½(σˣ - iσʸ): |↓⟩⟨↑|.
pub fn sigma_minus() -> DMatrix<Complex64> {
    let z = Complex64::ZERO;
    DMatrix::from_row_slice(2, 2, &[z, Complex64::ONE, z, z])
}

pub fn kron(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for ia in 0..ar {
        for ja in 0..ac {
            let va = a[(ia, ja)];
            if va == Complex64::ZERO {
                continue;
            }
            for ib in 0..br {
                for jb in 0..bc {
                    out[(ia * br + ib, ja * bc + jb)] = va * b[(ib, jb)];
                }
            }
        }
    }
    out
}

/// Embed a 2×2 operator at `site`: I ⊗ … ⊗ op ⊗ … ⊗ I with site 0 the
/// rightmost factor, consistent with the little-endian index bijection.
pub fn site_operator(n_sites: usize, site: usize, op: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    assert!(site < n_sites, "site {site} out of range");
    let id = pauli_matrix(SiteOperator::Identity);
    let mut acc = DMatrix::identity(1, 1);
    for s in (0..n_sites).rev() {
        acc = if s == site {
            kron(&acc, op)
        } else {
            kron(&acc, &id)
        };
    }
    acc
}

/// Dense 2^S × 2^S Hamiltonian assembled from Kronecker products.
pub fn dense_hamiltonian(model: &ModelSpec) -> Result<DMatrix<Complex64>> {
    let lat = model.lattice();
    let n = lat.n_sites();
    guard_dense(n, DEFAULT_MAX_DENSE_SITES)?;
    let dim = 1usize << n;
    let mut h = DMatrix::zeros(dim, dim);
    match *model.hamiltonian() {
        Hamiltonian::TransverseFieldIsing(p) => {
            let sz = pauli_matrix(SiteOperator::Sz);
            let sx = pauli_matrix(SiteOperator::Sx);
            for &(j, k) in &lat.bonds() {
                h += site_operator(n, j, &sz) * site_operator(n, k, &sz)
                    * Complex64::new(p.coupling / 4.0, 0.0);
            }
            for j in 0..n {
                h += site_operator(n, j, &sx) * Complex64::new(p.field / 2.0, 0.0);
            }
        }
        Hamiltonian::Heisenberg(p) => {
            let sx = pauli_matrix(SiteOperator::Sx);
            let sy = pauli_matrix(SiteOperator::Sy);
            let sz = pauli_matrix(SiteOperator::Sz);
            for &(j, k) in &lat.bonds() {
                h += site_operator(n, j, &sx) * site_operator(n, k, &sx)
                    * Complex64::new(p.jx, 0.0);
                h += site_operator(n, j, &sy) * site_operator(n, k, &sy)
                    * Complex64::new(p.jy, 0.0);
                h += site_operator(n, j, &sz) * site_operator(n, k, &sz)
                    * Complex64::new(p.jz, 0.0);
            }
        }
    }
    Ok(h)
}

/// Dense D²×D² Liouvillian in the row-major vectorization.
pub fn dense_liouvillian(model: &ModelSpec) -> Result<DMatrix<Complex64>> {
    dense_liouvillian_with_limit(model, DEFAULT_MAX_DENSE_SITES)
}

pub fn dense_liouvillian_with_limit(
    model: &ModelSpec,
    max_sites: usize,
) -> Result<DMatrix<Complex64>> {
    let n = model.lattice().n_sites();
    guard_dense(n, max_sites)?;
    let dim = 1usize << n;
    let h = dense_hamiltonian(model)?;
    let id = DMatrix::<Complex64>::identity(dim, dim);
    let minus_i = -Complex64::I;
    let mut liouv = kron(&h, &id) * minus_i + kron(&id, &h.transpose()) * Complex64::I;
    let gamma = Complex64::new(model.gamma(), 0.0);
    let half = Complex64::new(0.5, 0.0);
    let sm = sigma_minus();
    for site in 0..n {
        let l = site_operator(n, site, &sm);
        let l_bar = l.map(|v| v.conj());
        let ldl = l.adjoint() * &l;
        liouv += kron(&l, &l_bar) * gamma;
        liouv -= kron(&ldl, &id) * (gamma * half);
        liouv -= kron(&id, &ldl.transpose()) * (gamma * half);
    }
    Ok(liouv)
}

fn guard_dense(n_sites: usize, max_sites: usize) -> Result<()> {
    if n_sites > max_sites {
        return Err(Error::SizeGuard(format!(
            "dense Liouvillian for S = {n_sites} sites needs 16·4^(2S) = {:.1e} bytes; \
             the limit is S <= {max_sites}",
            16.0 * 4f64.powi(2 * n_sites as i32)
        )));
    }
    Ok(())
}

fn guard_enum(n_sites: usize, max_sites: usize) -> Result<()> {
    if n_sites > max_sites {
        return Err(Error::SizeGuard(format!(
            "full enumeration over 4^S = {:.1e} configuration pairs; the limit is S <= {max_sites}",
            4f64.powi(n_sites as i32)
        )));
    }
    Ok(())
}

/// Extract the steady state as the null vector of the dense Liouvillian.
///
/// Uniqueness is asserted through the second-smallest singular value; a
/// degenerate null space is reported, not guessed at.
pub fn solve_ness(liouv: &DMatrix<Complex64>) -> Result<DenseNess> {
    solve_ness_with_cutoff(liouv, SVD_CUTOFF)
}

fn solve_ness_with_cutoff(liouv: &DMatrix<Complex64>, svd_cutoff: usize) -> Result<DenseNess> {
    let n = liouv.nrows();
    if liouv.ncols() != n {
        return Err(Error::Mismatch("Liouvillian must be square".to_string()));
    }
    let d = (n as f64).sqrt().round() as usize;
    if d * d != n {
        return Err(Error::Mismatch(format!(
            "dimension {n} is not a squared Hilbert-space dimension"
        )));
    }

    let (null_vec, second) = if n <= svd_cutoff {
        svd_null_vector(liouv)?
    } else {
        lu_null_vector(liouv)?
    };
    if second <= UNIQUENESS_THRESHOLD {
        return Err(Error::DegenerateSteadyState {
            second,
            threshold: UNIQUENESS_THRESHOLD,
        });
    }

    // remove the arbitrary global phase so Hermitization cannot cancel
    let mut rho = DMatrix::from_fn(d, d, |i, j| null_vec[i * d + j]);
    let t_raw = rho.trace();
    let frob = rho.norm();
    if t_raw.norm() < 1e-10 * frob {
        return Err(Error::SteadyState(format!(
            "null vector is numerically traceless (|tr| = {:.3e}, ‖ρ‖ = {frob:.3e})",
            t_raw.norm()
        )));
    }
    rho *= (t_raw / t_raw.norm()).conj();
    let rho_h = (&rho + rho.adjoint()) * Complex64::new(0.5, 0.0);
    let trace = rho_h.trace().re;
    let rho_n = rho_h / Complex64::new(trace, 0.0);

    let vec_rho = DVector::from_fn(n, |j, _| rho_n[(j / d, j % d)]);
    let residual_norm = (liouv * &vec_rho).norm() / vec_rho.norm();

    Ok(DenseNess {
        rho: rho_n,
        residual_norm,
        second_singular_value: second,
    })
}

/// Convenience: build the dense Liouvillian for a model and solve it.
pub fn ness_for(model: &ModelSpec) -> Result<DenseNess> {
    solve_ness(&dense_liouvillian(model)?)
}

fn svd_null_vector(liouv: &DMatrix<Complex64>) -> Result<(Vec<Complex64>, f64)> {
    let n = liouv.nrows();
    let svd = liouv.clone().svd(true, true);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[a]
            .partial_cmp(&svd.singular_values[b])
            .expect("finite singular values")
    });
    let smallest = order[0];
    let second = svd.singular_values[order[1]];
    let v_t = svd.v_t.as_ref().expect("right singular vectors");
    let null: Vec<Complex64> = (0..n).map(|j| v_t[(smallest, j)].conj()).collect();
    Ok((null, second))
}

fn lu_null_vector(liouv: &DMatrix<Complex64>) -> Result<(Vec<Complex64>, f64)> {
    let n = liouv.nrows();
    let d = (n as f64).sqrt().round() as usize;
    let mut data = vec![Complex64::ZERO; n * n];
    for j in 0..n {
        for i in 0..n {
            data[i * n + j] = liouv[(i, j)];
        }
    }
    let lu = DenseLu::factor(data, n);

    // vec(I/D) overlaps the steady state through its nonzero trace
    let mut x = vec![Complex64::ZERO; n];
    for i in 0..d {
        x[i * d + i] = Complex64::new(1.0 / d as f64, 0.0);
    }
    normalize(&mut x);
    for _ in 0..3 {
        let mut u = lu.solve_adjoint(&x);
        normalize(&mut u);
        x = lu.solve(&u);
        normalize(&mut x);
    }
    let null = x;

    // left null vector (the trace functional direction): 𝓛⁻†𝓛⁻¹ iteration
    let mut left = vec![Complex64::ZERO; n];
    for i in 0..d {
        left[i * d + i] = Complex64::new(1.0 / (d as f64).sqrt(), 0.0);
    }
    for _ in 0..3 {
        let mut u = lu.solve(&left);
        normalize(&mut u);
        left = lu.solve_adjoint(&u);
        normalize(&mut left);
    }

    // deflated inverse iteration for the second singular value; both the
    // right (null) and left null directions must be projected away or their
    // near-infinite amplification swamps the estimate
    let mut y: Vec<Complex64> = (0..n)
        .map(|i| {
            let a = (i as f64 * 0.7381 + 0.4).sin();
            let b = (i as f64 * 1.1934 + 1.3).cos();
            Complex64::new(a, b)
        })
        .collect();
    project_out(&mut y, &null);
    normalize(&mut y);
    let mut sigma2 = f64::INFINITY;
    for _ in 0..40 {
        let mut u = lu.solve_adjoint(&y);
        project_out(&mut u, &left);
        let amp_adj = vec_norm(&u);
        normalize(&mut u);
        let mut w = lu.solve(&u);
        project_out(&mut w, &null);
        let amp = vec_norm(&w) * amp_adj;
        for (t, s) in y.iter_mut().zip(&w) {
            *t = *s;
        }
        normalize(&mut y);
        let est = 1.0 / amp.sqrt();
        let converged = (est - sigma2).abs() < 0.01 * est.abs();
        sigma2 = est;
        if converged {
            break;
        }
    }
    Ok((null, sigma2))
}

fn vec_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
}

fn normalize(v: &mut [Complex64]) {
    let n = vec_norm(v);
    if n > 0.0 {
        let inv = 1.0 / n;
        for c in v.iter_mut() {
            *c *= inv;
        }
    }
}

fn project_out(v: &mut [Complex64], dir: &[Complex64]) {
    let overlap: Complex64 = dir.iter().zip(v.iter()).map(|(d, x)| d.conj() * x).sum();
    for (x, d) in v.iter_mut().zip(dir) {
        *x -= overlap * d;
    }
}

/// Row-major packed LU with partial pivoting; row updates run data-parallel.
pub(crate) struct DenseLu {
    n: usize,
    data: Vec<Complex64>,
    perm: Vec<usize>,
}

impl DenseLu {
    pub(crate) fn factor(mut data: Vec<Complex64>, n: usize) -> Self {
        assert_eq!(data.len(), n * n);
        let scale = data.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
        let clamp = (scale * 1e-300).max(f64::MIN_POSITIVE);
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut piv = k;
            let mut best = data[k * n + k].norm();
            for i in (k + 1)..n {
                let v = data[i * n + k].norm();
                if v > best {
                    best = v;
                    piv = i;
                }
            }
            if piv != k {
                for j in 0..n {
                    data.swap(k * n + j, piv * n + j);
                }
                perm.swap(k, piv);
            }
            if data[k * n + k].norm() < clamp {
                data[k * n + k] = Complex64::new(clamp, 0.0);
            }
            let inv_pivot = data[k * n + k].inv();
            let (head, rest) = data.split_at_mut((k + 1) * n);
            let row_k = &head[k * n..(k + 1) * n];
            parallel::for_each_row(rest, n, |_, row| {
                let m = row[k] * inv_pivot;
                row[k] = m;
                for j in (k + 1)..n {
                    row[j] -= m * row_k[j];
                }
            });
        }
        Self { n, data, perm }
    }

    /// Solve 𝓛 x = b.
    pub(crate) fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut y: Vec<Complex64> = (0..n).map(|i| b[self.perm[i]]).collect();
        for i in 0..n {
            let mut acc = y[i];
            let row = &self.data[i * n..i * n + i];
            for (j, l) in row.iter().enumerate() {
                acc -= l * y[j];
            }
            y[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = y[i];
            for j in (i + 1)..n {
                acc -= self.data[i * n + j] * y[j];
            }
            y[i] = acc / self.data[i * n + i];
        }
        y
    }

    /// Solve 𝓛† x = b using the same factors: 𝓛† = U† L† P.
    pub(crate) fn solve_adjoint(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut w = b.to_vec();
        for i in 0..n {
            let mut acc = w[i];
            for j in 0..i {
                acc -= self.data[j * n + i].conj() * w[j];
            }
            w[i] = acc / self.data[i * n + i].conj();
        }
        for i in (0..n).rev() {
            let mut acc = w[i];
            for j in (i + 1)..n {
                acc -= self.data[j * n + i].conj() * w[j];
            }
            w[i] = acc;
        }
        let mut x = vec![Complex64::ZERO; n];
        for i in 0..n {
            x[self.perm[i]] = w[i];
        }
        x
    }
}

/// Dense ρ_θ assembled element-wise from any density model.
pub fn dense_rho<M: DensityModel>(model: &M, n_sites: usize) -> Result<DMatrix<Complex64>> {
    guard_enum(n_sites, DEFAULT_MAX_ENUM_SITES)?;
    let dim = 1usize << n_sites;
    let rows: Vec<Vec<Complex64>> = parallel::map_range(dim, |r| {
        let row_cfg = SpinConfig::from_index(r as u64, n_sites);
        (0..dim)
            .map(|c| {
                model.rho(&JointConfig {
                    row: row_cfg.clone(),
                    col: SpinConfig::from_index(c as u64, n_sites),
                })
            })
            .collect()
    });
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

/// Exact cost and gradient by summation over all 4^S configuration pairs,
/// with the sampling measure q ∝ |ρ|^{2β} and reweighting factored exactly
/// like the stochastic estimator.
pub fn exact_cost_and_gradient<M: DensityModel>(
    model: &M,
    liouv: &ModelSpec,
    beta: f64,
) -> Result<(f64, Vec<f64>)> {
    let (configs, log_weights) = enumerate_weighted(model, liouv, beta)?;
    let (cost, grad) =
        cost_and_gradient_with_log_weights(model, liouv, &configs, &log_weights, 1)?;
    Ok((cost.value, grad.g))
}

/// Exact cost only.
pub fn exact_cost<M: DensityModel>(model: &M, liouv: &ModelSpec, beta: f64) -> Result<f64> {
    let (configs, log_weights) = enumerate_weighted(model, liouv, beta)?;
    Ok(cost_with_log_weights(model, liouv, &configs, &log_weights, 1)?.value)
}

fn enumerate_weighted<M: DensityModel>(
    model: &M,
    liouv: &ModelSpec,
    beta: f64,
) -> Result<(Vec<JointConfig>, Vec<f64>)> {
    let n = liouv.lattice().n_sites();
    guard_enum(n, DEFAULT_MAX_ENUM_SITES)?;
    let dim = 1usize << n;
    let mut configs = Vec::with_capacity(dim * dim);
    for r in 0..dim {
        let row = SpinConfig::from_index(r as u64, n);
        for c in 0..dim {
            configs.push(JointConfig {
                row: row.clone(),
                col: SpinConfig::from_index(c as u64, n),
            });
        }
    }
    let log_weights: Vec<f64> = parallel::chunked_map(&configs, |chunk| {
        chunk
            .iter()
            .map(|cfg| {
                let mag = model.rho(cfg).norm();
                if mag < RHO_GUARD {
                    f64::NEG_INFINITY
                } else {
                    2.0 * beta * mag.ln() + 2.0 * (1.0 - beta) * mag.ln()
                }
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    Ok((configs, log_weights))
}

/// Residual norm ‖𝓛ρ‖₂/‖ρ‖₂ evaluated through the sparse row enumeration,
/// tying the stochastic cost's numerator to the dense oracle.
pub fn residual_norm_via_rows<M: DensityModel>(model: &M, liouv: &ModelSpec) -> Result<f64> {
    let n = liouv.lattice().n_sites();
    guard_enum(n, DEFAULT_MAX_ENUM_SITES)?;
    let dim = 1usize << n;
    let mut num = 0.0;
    let mut den = 0.0;
    for r in 0..dim {
        let row = SpinConfig::from_index(r as u64, n);
        for c in 0..dim {
            let target = JointConfig {
                row: row.clone(),
                col: SpinConfig::from_index(c as u64, n),
            };
            let mut acc = Complex64::ZERO;
            for elem in liouv.lindblad_row(&target)? {
                acc += elem.amplitude * model.rho(&elem.source);
            }
            num += acc.norm_sqr();
            den += model.rho(&target).norm_sqr();
        }
    }
    if den == 0.0 {
        return Err(Error::ZeroWeights);
    }
    Ok((num / den).sqrt())
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    vals
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositivityReport {
    /// Minimum eigenvalue of ρ/tr(ρ); ≥ -1e-10 for a physical state.
    pub min_eigenvalue: f64,
    pub trace: Complex64,
    /// max |ρ - ρ†| entry; zero by construction for the Hermitized ansatz.
    pub hermiticity_defect: f64,
    /// Fraction of Σ|ρ|² carried by odd-offset sectors.
    pub sector_leakage: f64,
}

/// Assemble ρ_θ densely and report positivity / symmetry diagnostics.
pub fn positivity_report<M: DensityModel>(model: &M, n_sites: usize) -> Result<PositivityReport> {
    guard_dense(n_sites, DEFAULT_MAX_DENSE_SITES)?;
    let rho = dense_rho(model, n_sites)?;
    let dim = rho.nrows();

    let adjoint = rho.adjoint();
    let hermiticity_defect = (&rho - &adjoint).iter().map(|c| c.norm()).fold(0.0, f64::max);

    let trace = rho.trace();
    let mut total = 0.0;
    let mut leaked = 0.0;
    for r in 0..dim {
        let row = SpinConfig::from_index(r as u64, n_sites);
        for c in 0..dim {
            let cfg = JointConfig {
                row: row.clone(),
                col: SpinConfig::from_index(c as u64, n_sites),
            };
            let w = rho[(r, c)].norm_sqr();
            total += w;
            if !sector_allowed(&cfg) {
                leaked += w;
            }
        }
    }
    let sector_leakage = if total > 0.0 { leaked / total } else { 0.0 };

    let hermitized = (&rho + &adjoint) * Complex64::new(0.5, 0.0);
    if trace.norm() < 1e-300 {
        return Err(Error::SteadyState(
            "density matrix has vanishing trace".to_string(),
        ));
    }
    let normalized = hermitized / trace;
    // dividing a Hermitian matrix by its (near-real) trace keeps it
    // Hermitian only up to the trace's phase; re-Hermitize before eigen
    let normalized = (&normalized + normalized.adjoint()) * Complex64::new(0.5, 0.0);
    let min_eigenvalue = hermitian_eigenvalues(&normalized)[0];

    Ok(PositivityReport {
        min_eigenvalue,
        trace,
        hermiticity_defect,
        sector_leakage,
    })
}

/// Site-averaged Tr[Ô_j ρ]/Tr[ρ] via dense Kronecker operators.
pub fn dense_observable(
    rho: &DMatrix<Complex64>,
    lattice: &Lattice,
    op: SiteOperator,
) -> f64 {
    let n = lattice.n_sites();
    assert_eq!(rho.nrows(), 1 << n, "density matrix size mismatch");
    if matches!(op, SiteOperator::Identity) {
        return 1.0;
    }
    let op2 = pauli_matrix(op);
    let trace = rho.trace().re;
    let mut acc = 0.0;
    for site in 0..n {
        acc += (site_operator(n, site, &op2) * rho).trace().re;
    }
    acc / (n as f64 * trace)
}

/// |ρ|^{2β} with configurations reordered by total spin, exposing the
/// sector block structure. Returns the permutation (new position → config
/// index) and the reordered matrix.
pub fn sector_ordered_matrix(
    rho: &DMatrix<Complex64>,
    n_sites: usize,
    beta: f64,
) -> (Vec<u64>, DMatrix<f64>) {
    let dim = 1usize << n_sites;
    assert_eq!(rho.nrows(), dim, "density matrix size mismatch");
    let mut order: Vec<u64> = (0..dim as u64).collect();
    order.sort_by_key(|&idx| {
        (
            SpinConfig::from_index(idx, n_sites).n_up(),
            idx,
        )
    });
    let out = DMatrix::from_fn(dim, dim, |a, b| {
        rho[(order[a] as usize, order[b] as usize)]
            .norm()
            .powf(2.0 * beta)
    });
    (order, out)
}

/// Table-backed density operator; the oracle stand-in for estimator tests
/// and the carrier of exact steady states into the sampling machinery.
#[derive(Debug, Clone)]
pub struct LookupNdo {
    table: DMatrix<Complex64>,
    n_sites: usize,
    n_params: usize,
}

impl LookupNdo {
    pub fn new(table: DMatrix<Complex64>, n_sites: usize) -> Result<Self> {
        let dim = 1usize << n_sites;
        if table.nrows() != dim || table.ncols() != dim {
            return Err(Error::Mismatch(format!(
                "table is {}x{} but S = {n_sites} needs {dim}x{dim}",
                table.nrows(),
                table.ncols()
            )));
        }
        Ok(Self {
            table,
            n_sites,
            n_params: 1,
        })
    }

    pub fn from_ness(ness: &DenseNess, n_sites: usize) -> Result<Self> {
        Self::new(ness.rho.clone(), n_sites)
    }

    /// Globally rescaled copy; estimators must be invariant under this.
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            table: self.table.map(|v| v * factor),
            n_sites: self.n_sites,
            n_params: self.n_params,
        }
    }
}

impl DensityModel for LookupNdo {
    fn param_count(&self) -> usize {
        self.n_params
    }

    fn rho(&self, cfg: &JointConfig) -> Complex64 {
        assert_eq!(cfg.n_sites(), self.n_sites, "lattice size mismatch");
        let (r, c) = cfg.index_pair();
        self.table[(r as usize, c as usize)]
    }

    fn rho_and_grad_log(&self, cfg: &JointConfig) -> Result<(Complex64, Vec<Complex64>)> {
        let rho = self.rho(cfg);
        if rho.norm() < RHO_GUARD {
            return Err(Error::AmplitudeUnderflow {
                magnitude: rho.norm(),
            });
        }
        Ok((rho, vec![Complex64::ZERO; self.n_params]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouvillian::observable_row;

    fn single_spin_liouvillian(gamma: f64) -> DMatrix<Complex64> {
        // H = 0, one jump operator σ⁻: 4×4 superoperator
        let id = pauli_matrix(SiteOperator::Identity);
        let l = sigma_minus();
        let l_bar = l.map(|v| v.conj());
        let ldl = l.adjoint() * &l;
        let g = Complex64::new(gamma, 0.0);
        let half = Complex64::new(0.5, 0.0);
        kron(&l, &l_bar) * g
            - kron(&ldl, &id) * (g * half)
            - kron(&id, &ldl.transpose()) * (g * half)
    }

    #[test]
    fn sigma_minus_is_consistent_with_pauli_combination() {
        let combo = (pauli_matrix(SiteOperator::Sx)
            - pauli_matrix(SiteOperator::Sy) * Complex64::I)
            * Complex64::new(0.5, 0.0);
        assert_eq!(combo, sigma_minus());
    }

    #[test]
    fn observable_row_matches_dense_pauli_elements() {
        // every ⟨σ|Ô_j|σ′⟩ from the sparse row equals the kron-built matrix
        let n = 2;
        for op in [SiteOperator::Sx, SiteOperator::Sy, SiteOperator::Sz] {
            for site in 0..n {
                let dense = site_operator(n, site, &pauli_matrix(op));
                for r in 0..4u64 {
                    let sigma = SpinConfig::from_index(r, n);
                    let mut sparse = vec![Complex64::ZERO; 4];
                    for (col, amp) in observable_row(op, site, &sigma) {
                        sparse[col.index() as usize] += amp;
                    }
                    for c in 0..4u64 {
                        assert!(
                            (dense[(r as usize, c as usize)] - sparse[c as usize]).norm() < 1e-15,
                            "op {op:?} site {site} element ({r},{c})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn single_dissipative_spin_decays_to_dark_state() {
        let ness = solve_ness(&single_spin_liouvillian(1.0)).unwrap();
        // |↓⟩⟨↓| in the (down, up) basis is e₀e₀†
        assert!((ness.rho[(0, 0)].re - 1.0).abs() < 1e-12);
        assert!(ness.rho[(1, 1)].norm() < 1e-12);
        assert!(ness.residual_norm < 1e-12);
        // ⟨σ^z⟩ = -1
        let z = pauli_matrix(SiteOperator::Sz);
        assert!(((&z * &ness.rho).trace().re + 1.0).abs() < 1e-12);
    }

    #[test]
    fn tfi_without_field_has_all_down_dark_state() {
        let model = ModelSpec::tfi_chain(2, 2.0, 0.0, 1.0).unwrap();
        let ness = ness_for(&model).unwrap();
        assert!((ness.rho[(0, 0)].re - 1.0).abs() < 1e-10);
        let z = dense_observable(&ness.rho, model.lattice(), SiteOperator::Sz);
        assert!((z + 1.0).abs() < 1e-10);
    }

    #[test]
    fn dense_rows_match_sparse_rows_exhaustively_n2() {
        let model = ModelSpec::tfi_chain(2, 2.0, 1.3, 0.7).unwrap();
        let dense = dense_liouvillian(&model).unwrap();
        let dim = 4usize;
        for r in 0..dim {
            for c in 0..dim {
                let target = JointConfig {
                    row: SpinConfig::from_index(r as u64, 2),
                    col: SpinConfig::from_index(c as u64, 2),
                };
                let mut sparse_row = vec![Complex64::ZERO; dim * dim];
                for elem in model.lindblad_row(&target).unwrap() {
                    let (sr, sc) = elem.source.index_pair();
                    sparse_row[sr as usize * dim + sc as usize] += elem.amplitude;
                }
                let target_vec = r * dim + c;
                for j in 0..dim * dim {
                    assert!(
                        (dense[(target_vec, j)] - sparse_row[j]).norm() < 1e-13,
                        "entry ({target_vec}, {j})"
                    );
                }
            }
        }
    }

    #[test]
    fn trace_functional_annihilates_liouvillian_columns() {
        let model = ModelSpec::tfi_chain(3, 2.0, 1.1, 1.0).unwrap();
        let liouv = dense_liouvillian(&model).unwrap();
        let dim = 8usize;
        for q in 0..dim * dim {
            let mut acc = Complex64::ZERO;
            for i in 0..dim {
                acc += liouv[(i * dim + i, q)];
            }
            assert!(acc.norm() < 1e-12, "column {q} trace sum {acc}");
        }
    }

    #[test]
    fn liouvillian_preserves_hermiticity() {
        use rand::{Rng, SeedableRng};
        let model = ModelSpec::tfi_chain(2, 2.0, 0.9, 1.0).unwrap();
        let liouv = dense_liouvillian(&model).unwrap();
        let dim = 4usize;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(6);
        let raw = DMatrix::from_fn(dim, dim, |_, _| {
            Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
        });
        let herm = (&raw + raw.adjoint()) * Complex64::new(0.5, 0.0);
        let v = DVector::from_fn(dim * dim, |j, _| herm[(j / dim, j % dim)]);
        let out = &liouv * v;
        let image = DMatrix::from_fn(dim, dim, |i, j| out[i * dim + j]);
        assert!((&image - image.adjoint()).norm() < 1e-12);
    }

    #[test]
    fn ness_invariants_hold_for_small_tfi() {
        for (n, g) in [(2usize, 0.8), (3usize, 1.6)] {
            let model = ModelSpec::tfi_chain(n, 2.0, g, 1.0).unwrap();
            let ness = ness_for(&model).unwrap();
            assert!((ness.rho.trace().re - 1.0).abs() < 1e-12);
            assert!(ness.rho.trace().im.abs() < 1e-12);
            assert!((&ness.rho - ness.rho.adjoint()).norm() < 1e-12);
            assert!(ness.residual_norm < 1e-10, "residual {}", ness.residual_norm);
            assert!(ness.second_singular_value > UNIQUENESS_THRESHOLD);
            let min_eig = hermitian_eigenvalues(&ness.rho)[0];
            assert!(min_eig > -1e-10, "min eigenvalue {min_eig}");
        }
    }

    #[test]
    fn lu_route_matches_svd_route() {
        let model = ModelSpec::tfi_chain(3, 2.0, 1.2, 1.0).unwrap();
        let liouv = dense_liouvillian(&model).unwrap();
        let svd = solve_ness_with_cutoff(&liouv, usize::MAX).unwrap();
        let lu = solve_ness_with_cutoff(&liouv, 0).unwrap();
        assert!((&svd.rho - &lu.rho).norm() < 1e-9);
        assert!(lu.residual_norm < 1e-10);
        let rel = (svd.second_singular_value - lu.second_singular_value).abs()
            / svd.second_singular_value;
        assert!(rel < 0.2, "sigma2 svd {} vs lu {}", svd.second_singular_value, lu.second_singular_value);
    }

    #[test]
    fn dense_lu_solves_a_known_system() {
        use rand::{Rng, SeedableRng};
        let n = 24;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(44);
        let data: Vec<Complex64> = (0..n * n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let x_true: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let mut b = vec![Complex64::ZERO; n];
        let mut b_adj = vec![Complex64::ZERO; n];
        for i in 0..n {
            for j in 0..n {
                b[i] += data[i * n + j] * x_true[j];
                b_adj[i] += data[j * n + i].conj() * x_true[j];
            }
        }
        let lu = DenseLu::factor(data, n);
        let x = lu.solve(&b);
        let x_adj = lu.solve_adjoint(&b_adj);
        for i in 0..n {
            assert!((x[i] - x_true[i]).norm() < 1e-10);
            assert!((x_adj[i] - x_true[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn two_site_hamiltonian_matches_hand_count() {
        // periodic N=2 keeps a single bond: ⟨++|H|++⟩ = V/4, not V/2
        let v = 2.6;
        let model = ModelSpec::tfi_chain(2, v, 0.9, 1.0).unwrap();
        let h = dense_hamiltonian(&model).unwrap();
        let up_up = 3; // index of (+,+)
        assert!((h[(up_up, up_up)].re - v / 4.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_null_space_is_reported() {
        // the zero generator has an entirely degenerate steady-state space
        let zero = DMatrix::<Complex64>::zeros(4, 4);
        assert!(matches!(
            solve_ness(&zero),
            Err(Error::DegenerateSteadyState { .. })
        ));
    }

    #[test]
    fn size_guards_are_hard_errors() {
        let model = ModelSpec::tfi_chain(8, 2.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            dense_liouvillian(&model),
            Err(Error::SizeGuard(_))
        ));
        let lookup = LookupNdo::new(DMatrix::identity(4, 4), 2).unwrap();
        let big = ModelSpec::tfi_chain(8, 2.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            exact_cost(&lookup, &big, 1.0),
            Err(Error::SizeGuard(_))
        ));
    }

    #[test]
    fn sector_ordering_groups_by_total_spin() {
        let rho = DMatrix::<Complex64>::identity(16, 16);
        let (order, out) = sector_ordered_matrix(&rho, 4, 0.2);
        let spins: Vec<usize> = order
            .iter()
            .map(|&idx| SpinConfig::from_index(idx, 4).n_up())
            .collect();
        let mut sorted = spins.clone();
        sorted.sort_unstable();
        assert_eq!(spins, sorted);
        assert_eq!(out.nrows(), 16);
    }
}
