//! Convolutional neural-network density operator.
//!
//! A configuration pair (σ, σ′) is encoded as a two-channel ±1 image on the
//! lattice, pushed through a stack of periodically padded convolutions with
//! leaky-ReLU activations, optionally mean-pooled over the spatial
//! dimensions, and mapped by a dense layer to two real outputs F₀, F₁ that
//! form the complex amplitude A = F₀ + i F₁. The density-matrix element is
//! Hermitized by construction:
//!
//!   ρ_θ(σ, σ′) = A_θ(σ, σ′)* + A_θ(σ′, σ)
//!
//! With pooling enabled the parameter count is independent of the lattice
//! extents, so one parameter vector transfers between system sizes.
//!
//! All arithmetic is 64-bit. Gradients are exact reverse-mode derivatives of
//! ρ with respect to the real parameter vector θ, computed by propagating a
//! complex adjoint through the real-valued network (one backward pass per
//! Hermitization branch).

use ndarray::{Array1, Array3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{JointConfig, Lattice, SpinConfig};

/// Leaky-ReLU slope used unless configured otherwise.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// |ρ| below this is treated as a dead configuration.
pub const RHO_GUARD: f64 = 1e-300;

/// One convolutional layer: `out_kernels` kernels of extent
/// (kernel_x, kernel_y) over `in_channels` channels, no bias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub kernel_x: usize,
    pub kernel_y: usize,
    pub in_channels: usize,
    pub out_kernels: usize,
}

impl ConvLayerSpec {
    pub fn new(kernel_x: usize, kernel_y: usize, in_channels: usize, out_kernels: usize) -> Self {
        Self {
            kernel_x,
            kernel_y,
            in_channels,
            out_kernels,
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernel_x * self.kernel_y * self.in_channels * self.out_kernels
    }
}

/// What the initializer counts as v_n in the per-layer width Normal(0, 2/v_n).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// v_n = X·Y·C·K, the layer's full parameter count.
    #[default]
    LayerParams,
    /// v_n = X·Y·C, the fan-in per output node.
    FanIn,
}

/// Network shape: convolution stack, pooling switch, implicit dense head
/// with two outputs and two biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub conv_layers: Vec<ConvLayerSpec>,
    pub pooling: bool,
    /// Spatial extents (x, y) the dense layer is sized for; required (and
    /// only meaningful) when pooling is off.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_extents: Option<(usize, usize)>,
    #[serde(default = "default_leaky_slope")]
    pub leaky_slope: f64,
    #[serde(default)]
    pub init: InitScheme,
}

fn default_leaky_slope() -> f64 {
    DEFAULT_LEAKY_SLOPE
}

impl Architecture {
    /// Translation-invariant variant: mean pooling over the spatial
    /// dimensions, usable on any lattice at least as large as the kernels.
    pub fn pooled(conv_layers: Vec<ConvLayerSpec>) -> Self {
        Self {
            conv_layers,
            pooling: true,
            input_extents: None,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            init: InitScheme::default(),
        }
    }

    /// Fixed-size variant: the dense layer connects to every spatial
    /// position, so the parameter vector is tied to one lattice extent.
    pub fn unpooled(conv_layers: Vec<ConvLayerSpec>, extents: (usize, usize)) -> Self {
        Self {
            conv_layers,
            pooling: false,
            input_extents: Some(extents),
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            init: InitScheme::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_layers.is_empty() {
            return Err(Error::InvalidConfig(
                "architecture needs at least one convolutional layer".to_string(),
            ));
        }
        if self.conv_layers[0].in_channels != 2 {
            return Err(Error::InvalidConfig(format!(
                "first layer must have in_channels = 2 (the σ and σ′ channels), got {}",
                self.conv_layers[0].in_channels
            )));
        }
        for window in self.conv_layers.windows(2) {
            if window[1].in_channels != window[0].out_kernels {
                return Err(Error::InvalidConfig(format!(
                    "channel mismatch between layers: {} kernels feed {} in_channels",
                    window[0].out_kernels, window[1].in_channels
                )));
            }
        }
        for (i, layer) in self.conv_layers.iter().enumerate() {
            if layer.kernel_x == 0 || layer.kernel_y == 0 || layer.out_kernels == 0 {
                return Err(Error::InvalidConfig(format!(
                    "layer {i} has a zero kernel extent or kernel count"
                )));
            }
        }
        if !self.pooling && self.input_extents.is_none() {
            return Err(Error::InvalidConfig(
                "non-pooled architecture requires input_extents to size the dense layer"
                    .to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::InvalidConfig(format!(
                "leaky slope must lie in [0, 1), got {}",
                self.leaky_slope
            )));
        }
        Ok(())
    }

    /// Whether parameters trained on one lattice evaluate on the other.
    pub fn check_lattice(&self, lattice: &Lattice) -> Result<()> {
        self.validate()?;
        let (sx, sy) = lattice.extents();
        for (i, layer) in self.conv_layers.iter().enumerate() {
            if layer.kernel_x > sx || layer.kernel_y > sy {
                return Err(Error::Mismatch(format!(
                    "layer {i} kernel ({}, {}) exceeds lattice extents ({sx}, {sy})",
                    layer.kernel_x, layer.kernel_y
                )));
            }
        }
        if !self.pooling && self.input_extents != Some((sx, sy)) {
            return Err(Error::Mismatch(format!(
                "non-pooled architecture sized for {:?} cannot evaluate on extents ({sx}, {sy})",
                self.input_extents
            )));
        }
        Ok(())
    }

    /// Width of the dense-layer input: the kernel count after pooling, or
    /// the flattened (x, y, channel) feature volume without it.
    pub fn dense_in(&self) -> usize {
        let k_last = self.conv_layers.last().map_or(0, |l| l.out_kernels);
        if self.pooling {
            k_last
        } else {
            let (sx, sy) = self.input_extents.unwrap_or((0, 0));
            sx * sy * k_last
        }
    }

    /// Total length of θ: all kernels, then 2×dense_in weights, then 2 biases.
    pub fn count_params(&self) -> usize {
        let conv: usize = self.conv_layers.iter().map(|l| l.param_count()).sum();
        conv + 2 * self.dense_in() + 2
    }

    fn offsets(&self) -> Offsets {
        let mut conv = Vec::with_capacity(self.conv_layers.len());
        let mut at = 0;
        for layer in &self.conv_layers {
            conv.push(at);
            at += layer.param_count();
        }
        let dense_w = at;
        let dense_b = at + 2 * self.dense_in();
        Offsets {
            conv,
            dense_w,
            dense_b,
        }
    }
}

struct Offsets {
    conv: Vec<usize>,
    dense_w: usize,
    dense_b: usize,
}

/// Translation-orbit representative: the cyclic shift minimizing the index
/// pair. With pooling the network is translation invariant in exact
/// arithmetic but floating-point summation order is not; evaluating every
/// translate at its canonical shift makes the invariance bit-exact.
fn canonical_shift(lattice: &Lattice, cfg: &JointConfig) -> JointConfig {
    let (sx, sy) = lattice.extents();
    if sy == 1 {
        // chains shift by bit rotation on the index words
        let n = sx as u32;
        let mask = (1u64 << n) - 1;
        let rot = |bits: u64, k: u32| ((bits << k) | (bits >> (n - k))) & mask;
        let (row0, col0) = cfg.index_pair();
        let mut best = (row0, col0);
        let mut best_shift = 0;
        for k in 1..n {
            let cand = (rot(row0, k), rot(col0, k));
            if cand < best {
                best = cand;
                best_shift = k;
            }
        }
        if best_shift == 0 {
            return cfg.clone();
        }
        return JointConfig {
            row: SpinConfig::from_index(best.0, sx),
            col: SpinConfig::from_index(best.1, sx),
        };
    }
    let mut best = cfg.clone();
    let mut best_key = cfg.index_pair();
    for dx in 0..sx {
        for dy in 0..sy {
            if dx == 0 && dy == 0 {
                continue;
            }
            let cand = cfg.cyclic_shift(lattice, (dx as isize, dy as isize));
            let key = cand.index_pair();
            if key < best_key {
                best_key = key;
                best = cand;
            }
        }
    }
    best
}

/// Two-channel ±1.0 encoding of a configuration pair on the lattice,
/// shaped (extent_x, extent_y, 2) with channel 0 = σ and channel 1 = σ′.
pub fn encode_input(lattice: &Lattice, cfg: &JointConfig) -> Array3<f64> {
    assert_eq!(
        cfg.n_sites(),
        lattice.n_sites(),
        "configuration does not live on this lattice"
    );
    let (sx, sy) = lattice.extents();
    let mut input = Array3::zeros((sx, sy, 2));
    for x in 0..sx {
        for y in 0..sy {
            let site = lattice.site_index(x, y);
            input[(x, y, 0)] = f64::from(cfg.row.spin(site));
            input[(x, y, 1)] = f64::from(cfg.col.spin(site));
        }
    }
    input
}

/// Architecture plus flat real parameter vector θ.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnNdo {
    arch: Architecture,
    theta: Vec<f64>,
}

impl CnnNdo {
    pub fn new(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.count_params() {
            return Err(Error::Mismatch(format!(
                "theta has {} entries but the architecture needs {}",
                theta.len(),
                arch.count_params()
            )));
        }
        Ok(Self { arch, theta })
    }

    /// He-style initialization: every kernel entry and dense weight drawn
    /// from Normal(0, 2/v_n) with v_n set by the architecture's
    /// [`InitScheme`]; dense biases start at zero. Bit-reproducible for a
    /// fixed seed.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut theta = Vec::with_capacity(arch.count_params());
        for layer in &arch.conv_layers {
            let v_n = match arch.init {
                InitScheme::LayerParams => layer.param_count(),
                InitScheme::FanIn => layer.kernel_x * layer.kernel_y * layer.in_channels,
            };
            let std = (2.0 / v_n as f64).sqrt();
            for _ in 0..layer.param_count() {
                theta.push(std * standard_normal(&mut rng));
            }
        }
        let dense_in = arch.dense_in();
        let v_dense = match arch.init {
            InitScheme::LayerParams => 2 * dense_in,
            InitScheme::FanIn => dense_in,
        };
        let std = (2.0 / v_dense as f64).sqrt();
        for _ in 0..2 * dense_in {
            theta.push(std * standard_normal(&mut rng));
        }
        theta.push(0.0);
        theta.push(0.0);
        Self::new(arch, theta)
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn set_params(&mut self, theta: &[f64]) {
        assert_eq!(theta.len(), self.theta.len(), "parameter length mismatch");
        self.theta.copy_from_slice(theta);
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    /// Validate against a lattice and return an evaluator bound to it.
    pub fn bind<'a>(&'a self, lattice: &'a Lattice) -> Result<BoundNdo<'a>> {
        self.arch.check_lattice(lattice)?;
        Ok(BoundNdo {
            model: self,
            lattice,
        })
    }

    /// Network output A = F₀ + i F₁ for one configuration pair.
    pub fn forward_amplitude(&self, lattice: &Lattice, cfg: &JointConfig) -> Complex64 {
        let (f0, f1) = self.forward(lattice, cfg);
        Complex64::new(f0, f1)
    }

    /// Hermitized density-matrix element ρ(σ,σ′) = A(σ,σ′)* + A(σ′,σ).
    pub fn rho(&self, lattice: &Lattice, cfg: &JointConfig) -> Complex64 {
        self.forward_amplitude(lattice, cfg).conj()
            + self.forward_amplitude(lattice, &cfg.swap())
    }

    /// (ρ, ∂ρ/∂θ) by reverse mode through both Hermitization branches.
    pub fn grad_rho(&self, lattice: &Lattice, cfg: &JointConfig) -> (Complex64, Vec<Complex64>) {
        let mut grad = vec![Complex64::ZERO; self.theta.len()];
        // conj(A(σ,σ′)) = F₀ - i F₁ seeds (1, -i); A(σ′,σ) seeds (1, +i).
        let trace = self.forward_trace(lattice, cfg);
        let a_direct = trace.amplitude;
        self.backward(&trace, [Complex64::ONE, -Complex64::I], &mut grad);
        let trace = self.forward_trace(lattice, &cfg.swap());
        let a_swapped = trace.amplitude;
        self.backward(&trace, [Complex64::ONE, Complex64::I], &mut grad);
        (a_direct.conj() + a_swapped, grad)
    }

    /// (ρ, O) with O_i = (∂ρ/∂θ_i)/ρ; errors when |ρ| underflows the guard,
    /// signalling a dead configuration the caller must reject.
    pub fn grad_log_rho(
        &self,
        lattice: &Lattice,
        cfg: &JointConfig,
    ) -> Result<(Complex64, Vec<Complex64>)> {
        let (rho, mut grad) = self.grad_rho(lattice, cfg);
        if rho.norm() < RHO_GUARD {
            return Err(Error::AmplitudeUnderflow {
                magnitude: rho.norm(),
            });
        }
        let inv = rho.inv();
        for g in &mut grad {
            *g *= inv;
        }
        Ok((rho, grad))
    }

    fn leaky(&self, x: f64) -> f64 {
        if x > 0.0 {
            x
        } else {
            self.arch.leaky_slope * x
        }
    }

    /// Derivative branch of the activation; exactly-zero pre-activations
    /// take the slope-α branch so gradients are deterministic.
    fn leaky_grad(&self, pre: f64) -> f64 {
        if pre > 0.0 {
            1.0
        } else {
            self.arch.leaky_slope
        }
    }

    fn conv_forward(&self, input: &Array3<f64>, layer_idx: usize, offset: usize) -> Array3<f64> {
        let spec = &self.arch.conv_layers[layer_idx];
        let (sx, sy, cin) = input.dim();
        debug_assert_eq!(cin, spec.in_channels);
        let kout = spec.out_kernels;
        let kernel = &self.theta[offset..offset + spec.param_count()];
        let inp = input.as_slice().expect("contiguous feature map");
        let mut pre = Array3::zeros((sx, sy, kout));
        let out = pre.as_slice_mut().expect("contiguous feature map");
        for i in 0..sx {
            for j in 0..sy {
                let acc = &mut out[(i * sy + j) * kout..(i * sy + j) * kout + kout];
                for x in 0..spec.kernel_x {
                    let ii = (i + x) % sx;
                    for y in 0..spec.kernel_y {
                        let jj = (j + y) % sy;
                        let in_row = &inp[(ii * sy + jj) * cin..(ii * sy + jj) * cin + cin];
                        for (c, &v) in in_row.iter().enumerate() {
                            let kbase = ((x * spec.kernel_y + y) * cin + c) * kout;
                            let kern = &kernel[kbase..kbase + kout];
                            for (a, &w) in acc.iter_mut().zip(kern) {
                                *a += v * w;
                            }
                        }
                    }
                }
            }
        }
        pre
    }

    fn dense_features(&self, last_act: &Array3<f64>) -> Array1<f64> {
        if self.arch.pooling {
            let (sx, sy, k) = last_act.dim();
            let norm = 1.0 / (sx * sy) as f64;
            let mut pooled = Array1::zeros(k);
            for i in 0..sx {
                for j in 0..sy {
                    for c in 0..k {
                        pooled[c] += last_act[(i, j, c)];
                    }
                }
            }
            pooled.mapv_inplace(|v| v * norm);
            pooled
        } else {
            Array1::from_iter(last_act.iter().copied())
        }
    }

    fn dense_out(&self, features: &Array1<f64>) -> (f64, f64) {
        let off = self.arch.offsets();
        let dense_in = self.arch.dense_in();
        debug_assert_eq!(features.len(), dense_in);
        let mut out = [0.0; 2];
        for (m, o) in out.iter_mut().enumerate() {
            let w = &self.theta[off.dense_w + m * dense_in..off.dense_w + (m + 1) * dense_in];
            let mut acc = 0.0;
            for (wu, fu) in w.iter().zip(features.iter()) {
                acc += wu * fu;
            }
            *o = acc + self.theta[off.dense_b + m];
        }
        (out[0], out[1])
    }

    fn forward(&self, lattice: &Lattice, cfg: &JointConfig) -> (f64, f64) {
        let cfg = if self.arch.pooling {
            canonical_shift(lattice, cfg)
        } else {
            cfg.clone()
        };
        let off = self.arch.offsets();
        let mut act = encode_input(lattice, &cfg);
        for (l, &o) in off.conv.iter().enumerate() {
            let pre = self.conv_forward(&act, l, o);
            act = pre.mapv(|x| self.leaky(x));
        }
        let features = self.dense_features(&act);
        self.dense_out(&features)
    }

    fn forward_trace(&self, lattice: &Lattice, cfg: &JointConfig) -> ForwardTrace {
        let cfg = if self.arch.pooling {
            canonical_shift(lattice, cfg)
        } else {
            cfg.clone()
        };
        let off = self.arch.offsets();
        let mut inputs = Vec::with_capacity(self.arch.conv_layers.len());
        let mut pres = Vec::with_capacity(self.arch.conv_layers.len());
        let mut act = encode_input(lattice, &cfg);
        for (l, &o) in off.conv.iter().enumerate() {
            let pre = self.conv_forward(&act, l, o);
            inputs.push(act);
            act = pre.mapv(|x| self.leaky(x));
            pres.push(pre);
        }
        let features = self.dense_features(&act);
        let (f0, f1) = self.dense_out(&features);
        ForwardTrace {
            inputs,
            pres,
            features,
            amplitude: Complex64::new(f0, f1),
        }
    }

    /// Accumulate seed[0]·∇F₀ + seed[1]·∇F₁ into `grad`.
    fn backward(&self, trace: &ForwardTrace, seed: [Complex64; 2], grad: &mut [Complex64]) {
        let off = self.arch.offsets();
        let dense_in = self.arch.dense_in();

        // dense head
        let mut d_feat = vec![Complex64::ZERO; dense_in];
        for m in 0..2 {
            let wm = seed[m];
            grad[off.dense_b + m] += wm;
            let w = &self.theta[off.dense_w + m * dense_in..off.dense_w + (m + 1) * dense_in];
            for u in 0..dense_in {
                grad[off.dense_w + m * dense_in + u] += wm * trace.features[u];
                d_feat[u] += wm * w[u];
            }
        }

        // un-pool / un-flatten into the last feature map's adjoint
        let (sx, sy, k_last) = trace.pres.last().expect("at least one layer").dim();
        let mut d_act = Array3::from_elem((sx, sy, k_last), Complex64::ZERO);
        if self.arch.pooling {
            let norm = 1.0 / (sx * sy) as f64;
            for i in 0..sx {
                for j in 0..sy {
                    for c in 0..k_last {
                        d_act[(i, j, c)] = d_feat[c] * norm;
                    }
                }
            }
        } else {
            for (slot, d) in d_act.iter_mut().zip(d_feat.iter()) {
                *slot = *d;
            }
        }

        // convolution stack in reverse
        for l in (0..self.arch.conv_layers.len()).rev() {
            let spec = &self.arch.conv_layers[l];
            let pre = &trace.pres[l];
            let input = &trace.inputs[l];
            let (sx, sy, kout) = pre.dim();
            let cin = spec.in_channels;
            let kernel = &self.theta[off.conv[l]..off.conv[l] + spec.param_count()];
            let layer_grad = &mut grad[off.conv[l]..off.conv[l] + spec.param_count()];

            let mut d_pre = d_act;
            for (d, p) in d_pre.iter_mut().zip(pre.iter()) {
                *d *= self.leaky_grad(*p);
            }
            let d_pre_flat = d_pre.as_slice().expect("contiguous adjoint");

            let mut d_input = Array3::from_elem((sx, sy, cin), Complex64::ZERO);
            {
                let inp = input.as_slice().expect("contiguous feature map");
                let d_in = d_input.as_slice_mut().expect("contiguous adjoint");
                for i in 0..sx {
                    for j in 0..sy {
                        let d_slice = &d_pre_flat[(i * sy + j) * kout..(i * sy + j) * kout + kout];
                        for x in 0..spec.kernel_x {
                            let ii = (i + x) % sx;
                            for y in 0..spec.kernel_y {
                                let jj = (j + y) % sy;
                                let pos = (ii * sy + jj) * cin;
                                let in_row = &inp[pos..pos + cin];
                                let d_row = &mut d_in[pos..pos + cin];
                                for c in 0..cin {
                                    let v = in_row[c];
                                    let kbase = ((x * spec.kernel_y + y) * cin + c) * kout;
                                    let kern = &kernel[kbase..kbase + kout];
                                    let grads = &mut layer_grad[kbase..kbase + kout];
                                    let mut acc = Complex64::ZERO;
                                    for ((d, g), &w) in d_slice.iter().zip(grads).zip(kern) {
                                        *g += *d * v;
                                        acc += *d * w;
                                    }
                                    d_row[c] += acc;
                                }
                            }
                        }
                    }
                }
            }
            d_act = d_input;
        }
    }
}

struct ForwardTrace {
    inputs: Vec<Array3<f64>>,
    pres: Vec<Array3<f64>>,
    features: Array1<f64>,
    amplitude: Complex64,
}

/// Box-Muller draw; avoids ln(0) by mapping the uniform into (0, 1].
fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Anything the samplers and estimators can treat as a density operator:
/// the CNN bound to a lattice, or a lookup table in oracle tests.
pub trait DensityModel: Sync {
    fn param_count(&self) -> usize;
    fn rho(&self, cfg: &JointConfig) -> Complex64;
    /// (ρ, O) with O = (∂ρ/∂θ)/ρ; must reject configurations with |ρ|
    /// under the guard.
    fn rho_and_grad_log(&self, cfg: &JointConfig) -> Result<(Complex64, Vec<Complex64>)>;
}

/// A [`CnnNdo`] bound to the lattice it is being evaluated on.
#[derive(Clone, Copy)]
pub struct BoundNdo<'a> {
    model: &'a CnnNdo,
    lattice: &'a Lattice,
}

impl<'a> BoundNdo<'a> {
    pub fn model(&self) -> &'a CnnNdo {
        self.model
    }

    pub fn lattice(&self) -> &'a Lattice {
        self.lattice
    }
}

impl DensityModel for BoundNdo<'_> {
    fn param_count(&self) -> usize {
        self.model.param_count()
    }

    fn rho(&self, cfg: &JointConfig) -> Complex64 {
        self.model.rho(self.lattice, cfg)
    }

    fn rho_and_grad_log(&self, cfg: &JointConfig) -> Result<(Complex64, Vec<Complex64>)> {
        self.model.grad_log_rho(self.lattice, cfg)
    }
}
