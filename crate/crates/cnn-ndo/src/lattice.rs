//! Spin-1/2 configurations on periodic lattices.
//!
//! Supported geometries are the 1D chain and the 2D square lattice, both
//! with periodic boundary conditions. Spins are stored as σ_z eigenvalues
//! ±1, which keeps Ising energies integer-exact; the network input maps
//! them to ±1.0 reals.
//!
//! Configurations are enumerated by the fixed bijection to integers
//! bit b_i = (1 + σ_i) / 2, little-endian in the site index, so the
//! all-down configuration is index 0. 2D sites are indexed row-major over
//! (y, x): `site = y * Lx + x`. Both conventions are load-bearing for
//! checkpoint portability and for the dense oracle and must not change.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Periodic lattice geometry: a chain `[N]` or a square `[Lx, Ly]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lattice {
    dims: Vec<usize>,
}

impl Lattice {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() || dims.len() > 2 {
            return Err(Error::InvalidConfig(format!(
                "lattice must have 1 or 2 dimensions, got {}",
                dims.len()
            )));
        }
        if let Some(&bad) = dims.iter().find(|&&e| e < 2) {
            return Err(Error::InvalidConfig(format!(
                "every lattice extent must be >= 2, got {bad}"
            )));
        }
        Ok(Self { dims })
    }

    pub fn chain(n: usize) -> Result<Self> {
        Self::new(vec![n])
    }

    pub fn square(lx: usize, ly: usize) -> Result<Self> {
        Self::new(vec![lx, ly])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_dims(&self) -> usize {
        self.dims.len()
    }

    pub fn n_sites(&self) -> usize {
        self.dims.iter().product()
    }

    /// Spatial extents as (x, y); y = 1 for a chain.
    pub fn extents(&self) -> (usize, usize) {
        (self.dims[0], self.dims.get(1).copied().unwrap_or(1))
    }

    /// (x, y) coordinates of a site; y = 0 for a chain.
    pub fn coords(&self, site: usize) -> (usize, usize) {
        assert!(site < self.n_sites(), "site {site} out of range");
        let lx = self.dims[0];
        (site % lx, site / lx)
    }

    pub fn site_index(&self, x: usize, y: usize) -> usize {
        let (lx, ly) = self.extents();
        assert!(x < lx && y < ly, "coords ({x}, {y}) out of range");
        y * lx + x
    }

    /// Site reached from `site` by a periodic displacement (dx, dy).
    pub fn shifted_site(&self, site: usize, offset: (isize, isize)) -> usize {
        let (lx, ly) = self.extents();
        let (x, y) = self.coords(site);
        let wrap = |v: usize, d: isize, ext: usize| -> usize {
            (v as isize + d).rem_euclid(ext as isize) as usize
        };
        self.site_index(wrap(x, offset.0, lx), wrap(y, offset.1, ly))
    }

    /// Periodic-boundary nearest neighbors, sorted and de-duplicated.
    ///
    /// On extents >= 3 every site has exactly 2 * n_dims neighbors; on an
    /// extent-2 direction the doubled neighbor collapses to one.
    pub fn neighbors(&self, site: usize) -> Vec<usize> {
        assert!(site < self.n_sites(), "site {site} out of range");
        let mut nbrs = Vec::with_capacity(2 * self.n_dims());
        for dim in 0..self.n_dims() {
            for step in [-1isize, 1] {
                let offset = if dim == 0 { (step, 0) } else { (0, step) };
                nbrs.push(self.shifted_site(site, offset));
            }
        }
        nbrs.sort_unstable();
        nbrs.dedup();
        nbrs
    }

    /// Nearest-neighbor bonds, each unordered pair exactly once.
    ///
    /// Extent-2 directions would produce each pair twice through wrap-around;
    /// those duplicates are dropped so bond sums count every pair once.
    pub fn bonds(&self) -> Vec<(usize, usize)> {
        let mut bonds = Vec::new();
        for site in 0..self.n_sites() {
            for dim in 0..self.n_dims() {
                let offset = if dim == 0 { (1, 0) } else { (0, 1) };
                let nbr = self.shifted_site(site, offset);
                let pair = (site.min(nbr), site.max(nbr));
                bonds.push(pair);
            }
        }
        bonds.sort_unstable();
        bonds.dedup();
        bonds
    }
}

/// A spin-z basis configuration σ, entries in {+1, -1}.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SpinConfig {
    spins: Vec<i8>,
}

impl SpinConfig {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if spins.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidConfig(
                "spin values must be +1 or -1".to_string(),
            ));
        }
        Ok(Self { spins })
    }

    pub fn all_up(n: usize) -> Self {
        Self { spins: vec![1; n] }
    }

    pub fn all_down(n: usize) -> Self {
        Self { spins: vec![-1; n] }
    }

    /// Inverse of [`SpinConfig::index`]: bit b_i = (1 + σ_i)/2, little-endian.
    pub fn from_index(index: u64, n_sites: usize) -> Self {
        assert!(n_sites <= 63, "index bijection limited to 63 sites");
        let spins = (0..n_sites)
            .map(|i| if (index >> i) & 1 == 1 { 1 } else { -1 })
            .collect();
        Self { spins }
    }

    /// Fixed enumeration bijection: Σ_i b_i 2^i with b_i = (1 + σ_i)/2.
    pub fn index(&self) -> u64 {
        assert!(self.spins.len() <= 63, "index bijection limited to 63 sites");
        self.spins
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &s)| acc | (((s == 1) as u64) << i))
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn spin(&self, site: usize) -> i8 {
        self.spins[site]
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    /// New configuration with the spin at `site` negated.
    pub fn flip(&self, site: usize) -> SpinConfig {
        let mut out = self.clone();
        out.flip_in_place(site);
        out
    }

    pub fn flip_in_place(&mut self, site: usize) {
        assert!(site < self.spins.len(), "site {site} out of range");
        self.spins[site] = -self.spins[site];
    }

    pub fn n_up(&self) -> usize {
        self.spins.iter().filter(|&&s| s == 1).count()
    }

    pub fn magnetization(&self) -> i64 {
        self.spins.iter().map(|&s| s as i64).sum()
    }

    /// Translate the configuration by (dx, dy) with periodic wrap-around.
    pub fn cyclic_shift(&self, lattice: &Lattice, offset: (isize, isize)) -> SpinConfig {
        assert_eq!(
            self.spins.len(),
            lattice.n_sites(),
            "configuration does not live on this lattice"
        );
        let spins = (0..lattice.n_sites())
            .map(|s| self.spins[lattice.shifted_site(s, (-offset.0, -offset.1))])
            .collect();
        Self { spins }
    }

    pub fn random<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> SpinConfig {
        let spins = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        Self { spins }
    }
}

/// A pair (σ, σ′) of configurations indexing one density-matrix element.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct JointConfig {
    pub row: SpinConfig,
    pub col: SpinConfig,
}

impl JointConfig {
    pub fn new(row: SpinConfig, col: SpinConfig) -> Result<Self> {
        if row.len() != col.len() {
            return Err(Error::Mismatch(format!(
                "row has {} sites but col has {}",
                row.len(),
                col.len()
            )));
        }
        Ok(Self { row, col })
    }

    pub fn diagonal(sigma: SpinConfig) -> Self {
        Self {
            row: sigma.clone(),
            col: sigma,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.row.len()
    }

    /// The transposed element (σ′, σ); an involution.
    pub fn swap(&self) -> JointConfig {
        Self {
            row: self.col.clone(),
            col: self.row.clone(),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        self.row == self.col
    }

    /// Shift row and col by the same periodic offset.
    pub fn cyclic_shift(&self, lattice: &Lattice, offset: (isize, isize)) -> JointConfig {
        Self {
            row: self.row.cyclic_shift(lattice, offset),
            col: self.col.cyclic_shift(lattice, offset),
        }
    }

    /// (index(σ), index(σ′)) under the enumeration bijection.
    pub fn index_pair(&self) -> (u64, u64) {
        (self.row.index(), self.col.index())
    }

    pub fn random<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> JointConfig {
        Self {
            row: SpinConfig::random(n, rng),
            col: SpinConfig::random(n, rng),
        }
    }
}
