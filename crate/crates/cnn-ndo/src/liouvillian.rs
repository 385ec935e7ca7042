//! Hamiltonians, jump operators, and sparse rows of the Lindblad generator.
//!
//! The master equation is
//!
//!   dρ/dt = 𝓛ρ = -i[H, ρ] + Σ_k γ (L_k ρ L_k† - ½{L_k† L_k, ρ})
//!
//! with one lowering operator L_k = σ⁻_k = ½(σ^x_k - i σ^y_k) per site and a
//! uniform rate γ. Two Hamiltonians are supported:
//!
//!   transverse-field Ising chain:  H = Σ_j [ V/4 σ^z_j σ^z_{j+1} + g/2 σ^x_j ]
//!   Heisenberg square lattice:     H = Σ_⟨j,k⟩ (J_x σ^x_j σ^x_k + J_y σ^y_j σ^y_k + J_z σ^z_j σ^z_k)
//!
//! Bond sums run over each unordered nearest-neighbor pair once (extent-2
//! wrap-around duplicates are dropped; see [`Lattice::bonds`]).
//!
//! Matrix elements use the convention σ⁻|↑⟩ = |↓⟩, σ⁻|↓⟩ = 0 and
//! σ^y|↑⟩ = i|↓⟩, σ^y|↓⟩ = -i|↑⟩, consistent with the enumeration basis of
//! [`SpinConfig::index`] (bit (1+σ)/2, so index 0 is all-down).

use std::collections::HashMap;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{JointConfig, Lattice, SpinConfig};

/// Entries with |amplitude| below this are dropped when merging rows.
pub const AMPLITUDE_CUTOFF: f64 = 1e-15;

/// Transverse-field Ising couplings, in units of the dissipation rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TfiParams {
    /// Ising coupling energy V.
    pub coupling: f64,
    /// Transverse field strength g.
    pub field: f64,
    /// Uniform dissipation rate γ.
    pub gamma: f64,
}

/// Heisenberg bond couplings, in units of the dissipation rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeisenbergParams {
    pub jx: f64,
    pub jy: f64,
    pub jz: f64,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Hamiltonian {
    TransverseFieldIsing(TfiParams),
    Heisenberg(HeisenbergParams),
}

impl Hamiltonian {
    pub fn gamma(&self) -> f64 {
        match self {
            Hamiltonian::TransverseFieldIsing(p) => p.gamma,
            Hamiltonian::Heisenberg(p) => p.gamma,
        }
    }
}

/// A lattice plus Hamiltonian plus the per-site σ⁻ jump set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    lattice: Lattice,
    hamiltonian: Hamiltonian,
}

/// One nonzero entry of a Liouvillian row: (𝓛ρ)(σ,σ′) picks up
/// `amplitude * ρ(source)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectedElement {
    pub source: JointConfig,
    pub amplitude: Complex64,
}

impl ModelSpec {
    pub fn new(lattice: Lattice, hamiltonian: Hamiltonian) -> Result<Self> {
        if hamiltonian.gamma() <= 0.0 {
            return Err(Error::InvalidConfig(
                "dissipation rate gamma must be positive".to_string(),
            ));
        }
        if let Hamiltonian::Heisenberg(_) = hamiltonian {
            if lattice.n_dims() != 2 {
                return Err(Error::InvalidConfig(
                    "the Heisenberg model is defined on a 2D lattice here".to_string(),
                ));
            }
        }
        Ok(Self {
            lattice,
            hamiltonian,
        })
    }

    pub fn tfi_chain(n: usize, coupling: f64, field: f64, gamma: f64) -> Result<Self> {
        Self::new(
            Lattice::chain(n)?,
            Hamiltonian::TransverseFieldIsing(TfiParams {
                coupling,
                field,
                gamma,
            }),
        )
    }

    pub fn heisenberg_square(
        lx: usize,
        ly: usize,
        jx: f64,
        jy: f64,
        jz: f64,
        gamma: f64,
    ) -> Result<Self> {
        Self::new(
            Lattice::square(lx, ly)?,
            Hamiltonian::Heisenberg(HeisenbergParams { jx, jy, jz, gamma }),
        )
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn hamiltonian(&self) -> &Hamiltonian {
        &self.hamiltonian
    }

    pub fn gamma(&self) -> f64 {
        self.hamiltonian.gamma()
    }

    /// Whether the Liouvillian conserves the parity of N_up(σ) - N_up(σ′),
    /// i.e. whether sector-restricted sampling is sound for this model.
    ///
    /// Heisenberg bonds flip spins in pairs and jumps lower both sides at
    /// once, so parity is conserved; the transverse field flips single spins
    /// and breaks it.
    pub fn conserves_sector_parity(&self) -> bool {
        match self.hamiltonian {
            Hamiltonian::TransverseFieldIsing(p) => p.field == 0.0,
            Hamiltonian::Heisenberg(_) => true,
        }
    }

    /// Nonzero entries ⟨σ|H|σ̃⟩ of the Hamiltonian row at σ.
    ///
    /// H is real and symmetric for both models, so these also serve as
    /// column entries.
    pub fn hamiltonian_row(&self, sigma: &SpinConfig) -> Vec<(SpinConfig, f64)> {
        assert_eq!(
            sigma.len(),
            self.lattice.n_sites(),
            "configuration does not live on the model lattice"
        );
        let mut entries = Vec::new();
        match self.hamiltonian {
            Hamiltonian::TransverseFieldIsing(p) => {
                let mut diag = 0.0;
                for &(j, k) in &self.lattice.bonds() {
                    diag += p.coupling / 4.0 * f64::from(sigma.spin(j) * sigma.spin(k));
                }
                if diag.abs() > AMPLITUDE_CUTOFF {
                    entries.push((sigma.clone(), diag));
                }
                if p.field != 0.0 {
                    for j in 0..sigma.len() {
                        entries.push((sigma.flip(j), p.field / 2.0));
                    }
                }
            }
            Hamiltonian::Heisenberg(p) => {
                let mut diag = 0.0;
                for &(j, k) in &self.lattice.bonds() {
                    let zz = f64::from(sigma.spin(j) * sigma.spin(k));
                    diag += p.jz * zz;
                    // σ^x σ^x + σ^y σ^y flips both spins of the bond:
                    // ⟨flip| ... |σ⟩ = J_x - J_y σ_j σ_k
                    let off = p.jx - p.jy * zz;
                    if off.abs() > AMPLITUDE_CUTOFF {
                        let mut flipped = sigma.clone();
                        flipped.flip_in_place(j);
                        flipped.flip_in_place(k);
                        entries.push((flipped, off));
                    }
                }
                if diag.abs() > AMPLITUDE_CUTOFF {
                    entries.push((sigma.clone(), diag));
                }
            }
        }
        entries
    }

    /// All nonzero Liouvillian entries feeding the target element:
    /// (𝓛ρ)(σ,σ′) = Σ over returned elements of amplitude * ρ(source).
    ///
    /// Composed of the commutator -i[H, ρ], the jump gain γ Σ_k L_k ρ L_k†,
    /// and the diagonal anticommutator loss -γ/2 Σ_k {L_k†L_k, ρ}. Duplicate
    /// sources are merged by exact complex addition and entries below
    /// [`AMPLITUDE_CUTOFF`] dropped; the result is sorted by source index
    /// pair so callers see a deterministic order.
    pub fn lindblad_row(&self, target: &JointConfig) -> Result<Vec<ConnectedElement>> {
        let n = self.lattice.n_sites();
        if target.n_sites() != n {
            return Err(Error::Mismatch(format!(
                "target has {} sites but the model lattice has {n}",
                target.n_sites()
            )));
        }
        let gamma = self.gamma();
        let (sigma, sigma_p) = (&target.row, &target.col);

        let mut merged: HashMap<(u64, u64), (JointConfig, Complex64)> = HashMap::new();
        let mut add = |source: JointConfig, amp: Complex64| {
            let key = source.index_pair();
            merged
                .entry(key)
                .and_modify(|(_, a)| *a += amp)
                .or_insert((source, amp));
        };

        // -i Σ_σ̃ H(σ,σ̃) ρ(σ̃,σ′)
        for (tilde, h) in self.hamiltonian_row(sigma) {
            add(
                JointConfig {
                    row: tilde,
                    col: sigma_p.clone(),
                },
                Complex64::new(0.0, -h),
            );
        }
        // +i Σ_σ̃′ H(σ′,σ̃′) ρ(σ,σ̃′)   (H symmetric)
        for (tilde_p, h) in self.hamiltonian_row(sigma_p) {
            add(
                JointConfig {
                    row: sigma.clone(),
                    col: tilde_p,
                },
                Complex64::new(0.0, h),
            );
        }
        // gain: γ (σ⁻_k ρ σ⁺_k)(σ,σ′) pulls from the doubly-raised source
        for k in 0..n {
            if sigma.spin(k) == -1 && sigma_p.spin(k) == -1 {
                add(
                    JointConfig {
                        row: sigma.flip(k),
                        col: sigma_p.flip(k),
                    },
                    Complex64::new(gamma, 0.0),
                );
            }
        }
        // loss: -γ/2 (N_up(σ) + N_up(σ′)) on the diagonal
        let loss = -gamma / 2.0 * (sigma.n_up() + sigma_p.n_up()) as f64;
        if loss != 0.0 {
            add(target.clone(), Complex64::new(loss, 0.0));
        }

        let mut elements: Vec<ConnectedElement> = merged
            .into_values()
            .filter(|(_, amp)| amp.norm() >= AMPLITUDE_CUTOFF)
            .map(|(source, amplitude)| ConnectedElement { source, amplitude })
            .collect();
        elements.sort_by_key(|e| e.source.index_pair());
        Ok(elements)
    }
}

/// Single-site operators entering observable estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SiteOperator {
    Sx,
    Sy,
    Sz,
    Identity,
}

impl std::str::FromStr for SiteOperator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sx" => Ok(SiteOperator::Sx),
            "sy" => Ok(SiteOperator::Sy),
            "sz" => Ok(SiteOperator::Sz),
            "identity" | "id" => Ok(SiteOperator::Identity),
            other => Err(Error::InvalidConfig(format!(
                "unknown operator name {other:?} (expected sx, sy, sz, identity)"
            ))),
        }
    }
}

impl std::fmt::Display for SiteOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SiteOperator::Sx => "sx",
            SiteOperator::Sy => "sy",
            SiteOperator::Sz => "sz",
            SiteOperator::Identity => "identity",
        })
    }
}

/// Nonzero matrix elements ⟨σ|Ô_site|σ′⟩ of a single-site operator.
pub fn observable_row(
    op: SiteOperator,
    site: usize,
    row: &SpinConfig,
) -> Vec<(SpinConfig, Complex64)> {
    assert!(site < row.len(), "site {site} out of range");
    match op {
        SiteOperator::Identity => vec![(row.clone(), Complex64::ONE)],
        SiteOperator::Sz => vec![(row.clone(), Complex64::new(f64::from(row.spin(site)), 0.0))],
        SiteOperator::Sx => vec![(row.flip(site), Complex64::ONE)],
        // ⟨σ|σ^y|flip σ⟩ = -i σ_site
        SiteOperator::Sy => vec![(
            row.flip(site),
            Complex64::new(0.0, -f64::from(row.spin(site))),
        )],
    }
}

/// N_up(σ) - N_up(σ′); the Liouvillian of bond-flip models only connects
/// elements of equal offset parity, and their steady states have support
/// on even offsets only.
pub fn sector_offset(cfg: &JointConfig) -> i64 {
    cfg.row.n_up() as i64 - cfg.col.n_up() as i64
}

pub fn sector_allowed(cfg: &JointConfig) -> bool {
    sector_offset(cfg) % 2 == 0
}
