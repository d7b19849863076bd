//! Shallow neural-network wavefunctions with a binary parameter mask.
//!
//! Both families compute `log ψ(σ) = Σ_u φ(h_u)` over pre-activations `h`
//! that are linear in `σ`; there are no biases. Parameter layout:
//!
//! * FFNN: `W` row-major by hidden unit, entry `(i, j)` at `i * N + j`,
//!   `φ = ReLU`.
//! * CNN: kernel-major, entry `(f, ch, a, b)` at `((f * C + ch) * k + a) * k + b`,
//!   `φ = GELU`, VALID correlation over the `C` stacked `L × L` input channels
//!   (site `ch * L² + r * L + c`).

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{NqsError, Result};
use crate::lattice::{Lattice, SpinConfig};
use crate::rng::{self, Domain};

pub const CNN_KERNEL: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Architecture {
    Ffnn {
        inputs: usize,
        hidden: usize,
    },
    Cnn {
        side: usize,
        channels: usize,
        filters: usize,
        kernel: usize,
    },
}

impl Architecture {
    /// Hidden width `α · N`; `α · N` must be a positive integer.
    pub fn ffnn(lattice: &Lattice, alpha: f64) -> Result<Self> {
        let n = lattice.n_sites();
        let width = alpha * n as f64;
        let hidden = width.round();
        if !(alpha > 0.0) || (width - hidden).abs() > 1e-9 || hidden < 1.0 {
            return Err(NqsError::Config(format!(
                "width factor {alpha} times {n} spins is not a positive integer"
            )));
        }
        Ok(Architecture::Ffnn {
            inputs: n,
            hidden: hidden as usize,
        })
    }

    pub fn ffnn_with_width(lattice: &Lattice, hidden: usize) -> Result<Self> {
        if hidden == 0 {
            return Err(NqsError::Config("hidden width must be positive".into()));
        }
        Ok(Architecture::Ffnn {
            inputs: lattice.n_sites(),
            hidden,
        })
    }

    pub fn cnn(lattice: &Lattice, filters: usize) -> Result<Self> {
        if filters == 0 {
            return Err(NqsError::Config("CNN needs at least one kernel".into()));
        }
        if lattice.side() < CNN_KERNEL {
            return Err(NqsError::Config(format!(
                "lattice side {} is smaller than the {CNN_KERNEL}x{CNN_KERNEL} kernel",
                lattice.side()
            )));
        }
        Ok(Architecture::Cnn {
            side: lattice.side(),
            channels: lattice.channels(),
            filters,
            kernel: CNN_KERNEL,
        })
    }

    pub fn n_inputs(&self) -> usize {
        match *self {
            Architecture::Ffnn { inputs, .. } => inputs,
            Architecture::Cnn { side, channels, .. } => channels * side * side,
        }
    }

    /// `n_init`.
    pub fn n_params(&self) -> usize {
        match *self {
            Architecture::Ffnn { inputs, hidden } => inputs * hidden,
            Architecture::Cnn {
                channels,
                filters,
                kernel,
                ..
            } => filters * channels * kernel * kernel,
        }
    }

    /// VALID output positions per kernel, `(L − k + 1)²`; 1 for the FFNN.
    pub fn output_positions(&self) -> usize {
        match *self {
            Architecture::Ffnn { .. } => 1,
            Architecture::Cnn { side, kernel, .. } => (side - kernel + 1).pow(2),
        }
    }

    /// Length of the pre-activation vector.
    pub fn n_units(&self) -> usize {
        match *self {
            Architecture::Ffnn { hidden, .. } => hidden,
            Architecture::Cnn { filters, .. } => filters * self.output_positions(),
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            Architecture::Ffnn { inputs, .. } => inputs,
            Architecture::Cnn {
                channels, kernel, ..
            } => channels * kernel * kernel,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum InitScheme {
    Normal { std: f64 },
    /// LeCun normal truncated at two standard deviations, rescaled so the
    /// truncated distribution has variance `1 / fan_in`.
    LecunTruncated,
}

impl InitScheme {
    pub fn default_for(arch: &Architecture) -> Self {
        match arch {
            Architecture::Ffnn { .. } => InitScheme::Normal { std: 0.1 },
            Architecture::Cnn { .. } => InitScheme::LecunTruncated,
        }
    }
}

/// Std of a standard normal truncated to `[−2, 2]`.
const TRUNCATED_NORMAL_STD: f64 = 0.879_625_661_034_239_8;

/// Flat parameter vector in the documented layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector(pub Vec<f64>);

impl std::ops::Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

pub fn init_parameters(arch: &Architecture, scheme: InitScheme, seed: u64) -> ParameterVector {
    let mut rng = rng::stream(seed, Domain::Init, 0);
    sample_parameters(arch, scheme, &mut rng)
}

pub(crate) fn sample_parameters<R: Rng + ?Sized>(
    arch: &Architecture,
    scheme: InitScheme,
    rng: &mut R,
) -> ParameterVector {
    let n = arch.n_params();
    let values = match scheme {
        InitScheme::Normal { std } => {
            let dist = Normal::new(0.0, std).expect("finite std");
            (0..n).map(|_| dist.sample(rng)).collect()
        }
        InitScheme::LecunTruncated => {
            let std = (1.0 / arch.fan_in() as f64).sqrt() / TRUNCATED_NORMAL_STD;
            (0..n)
                .map(|_| loop {
                    let z: f64 = StandardNormal.sample(rng);
                    if z.abs() <= 2.0 {
                        break std * z;
                    }
                })
                .collect()
        }
    };
    ParameterVector(values)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    bits: Vec<bool>,
    ones: usize,
}

impl Mask {
    pub fn full(n: usize) -> Self {
        Mask {
            bits: vec![true; n],
            ones: n,
        }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        let ones = bits.iter().filter(|&&b| b).count();
        Mask { bits, ones }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn ones(&self) -> usize {
        self.ones
    }

    pub fn is_set(&self, k: usize) -> bool {
        self.bits[k]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn unmasked_indices(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&k| self.bits[k]).collect()
    }

    /// Set of ones of `self` contained in that of `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn cleared(&self, indices: &[usize]) -> Result<Mask> {
        let mut bits = self.bits.clone();
        for &k in indices {
            if k >= bits.len() {
                return Err(NqsError::contract(format!(
                    "prune index {k} out of range for {} parameters",
                    bits.len()
                )));
            }
            if !bits[k] {
                return Err(NqsError::contract(format!("parameter {k} is already masked")));
            }
            bits[k] = false;
        }
        Ok(Mask {
            ones: self.ones - indices.len(),
            bits,
        })
    }

    /// Bit-packed, least significant bit first.
    pub fn to_packed(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (k, &b) in self.bits.iter().enumerate() {
            if b {
                out[k / 8] |= 1 << (k % 8);
            }
        }
        out
    }

    pub fn from_packed(bytes: &[u8], n: usize) -> Result<Mask> {
        if bytes.len() != n.div_ceil(8) {
            return Err(NqsError::Checkpoint(format!(
                "mask of {n} bits needs {} bytes, found {}",
                n.div_ceil(8),
                bytes.len()
            )));
        }
        Ok(Mask::from_bits(
            (0..n).map(|k| bytes[k / 8] >> (k % 8) & 1 == 1).collect(),
        ))
    }
}

/// Cached forward pass for one configuration.
#[derive(Clone, Debug)]
pub struct Activations {
    pub(crate) pre: Vec<f64>,
    pub log_psi: f64,
}

impl Activations {
    pub fn pre_activations(&self) -> &[f64] {
        &self.pre
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedAnsatz {
    arch: Architecture,
    params: Vec<f64>,
    mask: Mask,
    unmasked: Vec<usize>,
    // FFNN only: W transposed, so the column of one input site is contiguous.
    columns: Vec<f64>,
}

impl MaskedAnsatz {
    /// Stores `θ ⊙ m`.
    pub fn new(arch: Architecture, params: ParameterVector, mask: Mask) -> Result<Self> {
        let n = arch.n_params();
        if params.len() != n || mask.len() != n {
            return Err(NqsError::contract(format!(
                "architecture has {n} parameters, got {} values and a {}-bit mask",
                params.len(),
                mask.len()
            )));
        }
        let mut params = params.0;
        for (p, &m) in params.iter_mut().zip(mask.bits()) {
            if !m {
                *p = 0.0;
            }
        }
        let unmasked = mask.unmasked_indices();
        let mut ansatz = MaskedAnsatz {
            arch,
            params,
            mask,
            unmasked,
            columns: Vec::new(),
        };
        ansatz.rebuild_columns();
        Ok(ansatz)
    }

    pub fn dense(arch: Architecture, params: ParameterVector) -> Result<Self> {
        let n = arch.n_params();
        Self::new(arch, params, Mask::full(n))
    }

    pub fn zeros(arch: Architecture) -> Self {
        let n = arch.n_params();
        Self::dense(arch, ParameterVector(vec![0.0; n])).expect("consistent sizes")
    }

    fn rebuild_columns(&mut self) {
        if let Architecture::Ffnn { inputs, hidden } = self.arch {
            let mut cols = vec![0.0; inputs * hidden];
            for i in 0..hidden {
                for j in 0..inputs {
                    cols[j * hidden + i] = self.params[i * inputs + j];
                }
            }
            self.columns = cols;
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn parameter_vector(&self) -> ParameterVector {
        ParameterVector(self.params.clone())
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn unmasked(&self) -> &[usize] {
        &self.unmasked
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn n_sites(&self) -> usize {
        self.arch.n_inputs()
    }

    pub fn unmasked_params(&self) -> Vec<f64> {
        self.unmasked.iter().map(|&k| self.params[k]).collect()
    }

    /// Replaces the unmasked coordinates, in mask order.
    pub fn with_unmasked_params(&self, values: &[f64]) -> Result<Self> {
        if values.len() != self.unmasked.len() {
            return Err(NqsError::contract(format!(
                "expected {} unmasked values, got {}",
                self.unmasked.len(),
                values.len()
            )));
        }
        let mut next = self.clone();
        for (&k, &v) in self.unmasked.iter().zip(values) {
            next.params[k] = v;
        }
        next.rebuild_columns();
        Ok(next)
    }

    /// Same mask, new parameter values (masked entries are zeroed).
    pub fn with_params(&self, params: ParameterVector) -> Result<Self> {
        Self::new(self.arch, params, self.mask.clone())
    }

    pub fn with_mask(&self, mask: Mask) -> Result<Self> {
        Self::new(self.arch, ParameterVector(self.params.clone()), mask)
    }

    /// Clears the listed mask bits and zeroes their parameters.
    pub fn apply_prune(&self, indices: &[usize]) -> Result<Self> {
        let mut sorted = indices.to_vec();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(NqsError::contract("duplicate prune index"));
        }
        let mask = self.mask.cleared(&sorted)?;
        self.with_mask(mask)
    }

    fn check_len(&self, sigma: &[i8]) -> Result<()> {
        if sigma.len() != self.n_sites() {
            return Err(NqsError::contract(format!(
                "configuration has {} spins, ansatz expects {}",
                sigma.len(),
                self.n_sites()
            )));
        }
        Ok(())
    }

    pub fn activations(&self, sigma: &[i8]) -> Activations {
        let mut pre = vec![0.0; self.arch.n_units()];
        match self.arch {
            Architecture::Ffnn { inputs, .. } => {
                for (h, row) in pre.iter_mut().zip(self.params.chunks_exact(inputs)) {
                    *h = row.iter().zip(sigma).map(|(w, &s)| w * s as f64).sum();
                }
            }
            Architecture::Cnn {
                side,
                channels,
                filters,
                kernel,
            } => {
                let p = side - kernel + 1;
                for f in 0..filters {
                    for orow in 0..p {
                        for ocol in 0..p {
                            let mut h = 0.0;
                            for ch in 0..channels {
                                let kbase = (f * channels + ch) * kernel * kernel;
                                let sbase = ch * side * side;
                                for a in 0..kernel {
                                    for b in 0..kernel {
                                        let s = sigma[sbase + (orow + a) * side + ocol + b];
                                        h += self.params[kbase + a * kernel + b] * s as f64;
                                    }
                                }
                            }
                            pre[f * p * p + orow * p + ocol] = h;
                        }
                    }
                }
            }
        }
        let log_psi = self.sum_activation(&pre);
        Activations { pre, log_psi }
    }

    fn sum_activation(&self, pre: &[f64]) -> f64 {
        match self.arch {
            Architecture::Ffnn { .. } => pre.iter().map(|&h| relu(h)).sum(),
            Architecture::Cnn { .. } => pre.iter().map(|&h| gelu(h)).sum(),
        }
    }

    pub fn log_psi(&self, sigma: &SpinConfig) -> Result<f64> {
        self.check_len(sigma.as_slice())?;
        let value = self.activations(sigma.as_slice()).log_psi;
        if !value.is_finite() {
            return Err(NqsError::NonFinite {
                value,
                config: sigma.as_slice().to_vec(),
            });
        }
        Ok(value)
    }

    /// Writes the pre-activations of `flip(σ, flips)` into `scratch` and
    /// returns `log ψ(flip(σ, flips)) − log ψ(σ)`.
    pub fn delta_into(
        &self,
        sigma: &[i8],
        act: &Activations,
        flips: &[usize],
        scratch: &mut Vec<f64>,
    ) -> f64 {
        scratch.clear();
        scratch.extend_from_slice(&act.pre);
        if flips.is_empty() {
            return 0.0;
        }
        match self.arch {
            Architecture::Ffnn { hidden, .. } => {
                for &j in flips {
                    let s = -2.0 * sigma[j] as f64;
                    let col = &self.columns[j * hidden..(j + 1) * hidden];
                    for (h, &w) in scratch.iter_mut().zip(col) {
                        *h += s * w;
                    }
                }
                scratch
                    .iter()
                    .zip(&act.pre)
                    .map(|(&new, &old)| relu(new) - relu(old))
                    .sum()
            }
            Architecture::Cnn {
                side,
                channels,
                filters,
                kernel,
            } => {
                let p = side - kernel + 1;
                for &site in flips {
                    let s = -2.0 * sigma[site] as f64;
                    let ch = site / (side * side);
                    let r = site % (side * side) / side;
                    let c = site % side;
                    for a in 0..kernel {
                        let Some(orow) = r.checked_sub(a).filter(|&o| o < p) else {
                            continue;
                        };
                        for b in 0..kernel {
                            let Some(ocol) = c.checked_sub(b).filter(|&o| o < p) else {
                                continue;
                            };
                            for f in 0..filters {
                                let w = self.params
                                    [((f * channels + ch) * kernel + a) * kernel + b];
                                scratch[f * p * p + orow * p + ocol] += s * w;
                            }
                        }
                    }
                }
                scratch
                    .iter()
                    .zip(&act.pre)
                    .map(|(&new, &old)| gelu(new) - gelu(old))
                    .sum()
            }
        }
    }

    pub fn log_psi_delta(&self, sigma: &SpinConfig, flips: &[usize]) -> Result<f64> {
        self.check_len(sigma.as_slice())?;
        if let Some(&bad) = flips.iter().find(|&&s| s >= self.n_sites()) {
            return Err(NqsError::contract(format!("flip site {bad} out of range")));
        }
        let act = self.activations(sigma.as_slice());
        let mut scratch = Vec::new();
        Ok(self.delta_into(sigma.as_slice(), &act, flips, &mut scratch))
    }

    /// `∂ log ψ / ∂θ_k` for the unmasked `k`, in mask order.
    pub fn log_derivatives(&self, sigma: &SpinConfig) -> Result<Vec<f64>> {
        self.check_len(sigma.as_slice())?;
        let act = self.activations(sigma.as_slice());
        let mut out = vec![0.0; self.unmasked.len()];
        self.fill_log_derivatives(sigma.as_slice(), &act, &mut out);
        Ok(out)
    }

    pub(crate) fn fill_log_derivatives(&self, sigma: &[i8], act: &Activations, out: &mut [f64]) {
        match self.arch {
            Architecture::Ffnn { inputs, .. } => {
                for (o, &k) in out.iter_mut().zip(&self.unmasked) {
                    let (i, j) = (k / inputs, k % inputs);
                    // ReLU subgradient at exactly zero is zero.
                    *o = if act.pre[i] > 0.0 { sigma[j] as f64 } else { 0.0 };
                }
            }
            Architecture::Cnn {
                side,
                channels,
                filters: _,
                kernel,
            } => {
                let p = side - kernel + 1;
                let slopes: Vec<f64> = act.pre.iter().map(|&h| gelu_prime(h)).collect();
                for (o, &k) in out.iter_mut().zip(&self.unmasked) {
                    let b = k % kernel;
                    let a = k / kernel % kernel;
                    let ch = k / (kernel * kernel) % channels;
                    let f = k / (kernel * kernel * channels);
                    let sbase = ch * side * side;
                    let mut acc = 0.0;
                    for orow in 0..p {
                        for ocol in 0..p {
                            acc += slopes[f * p * p + orow * p + ocol]
                                * sigma[sbase + (orow + a) * side + ocol + b] as f64;
                        }
                    }
                    *o = acc;
                }
            }
        }
    }

    /// FFNN active-unit indicator `1[h_i > 0]`; with a full mask the log
    /// derivative row is its outer product with `σ`.
    pub(crate) fn active_units(&self, act: &Activations) -> Option<Vec<f64>> {
        match self.arch {
            Architecture::Ffnn { .. } => Some(
                act.pre
                    .iter()
                    .map(|&h| if h > 0.0 { 1.0 } else { 0.0 })
                    .collect(),
            ),
            Architecture::Cnn { .. } => None,
        }
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// Exact GELU, `x Φ(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu_prime(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
        + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{Boundary, SquareLattice, ToricLattice};
    use rand::SeedableRng;

    fn square(l: usize) -> Lattice {
        Lattice::Square(SquareLattice::new(l, Boundary::Open).unwrap())
    }

    fn random_ansatz(arch: Architecture, seed: u64, std: f64) -> MaskedAnsatz {
        let p = init_parameters(&arch, InitScheme::Normal { std }, seed);
        MaskedAnsatz::dense(arch, p).unwrap()
    }

    #[test]
    fn parameter_counts() {
        let lat = square(10);
        let ffnn = Architecture::ffnn(&lat, 5.0).unwrap();
        assert_eq!(init_parameters(&ffnn, InitScheme::default_for(&ffnn), 1).len(), 50_000);
        let cnn = Architecture::cnn(&lat, 4).unwrap();
        assert_eq!(cnn.n_params(), 36);
        assert_eq!(cnn.output_positions(), 64);
        assert_eq!(Architecture::ffnn(&square(4), 8.0).unwrap().n_params(), 2048);
        let toric = Lattice::Toric(ToricLattice::new(3).unwrap());
        assert_eq!(Architecture::ffnn(&toric, 8.0).unwrap().n_params(), 2592);
        assert!(Architecture::ffnn(&square(3), 0.5).is_err());
        assert!(Architecture::cnn(&square(2), 4).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let arch = Architecture::ffnn(&square(4), 2.0).unwrap();
        let a = init_parameters(&arch, InitScheme::default_for(&arch), 11);
        let b = init_parameters(&arch, InitScheme::default_for(&arch), 11);
        let c = init_parameters(&arch, InitScheme::default_for(&arch), 12);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    #[test]
    fn normal_init_moments() {
        let arch = Architecture::ffnn(&square(10), 5.0).unwrap();
        let p = init_parameters(&arch, InitScheme::Normal { std: 0.1 }, 5);
        let n = p.len() as f64;
        let (mean, std) = moments(&p);
        assert!(mean.abs() < 3.0 * 0.1 / n.sqrt());
        assert!((std - 0.1).abs() < 3.0 * 0.1 / (2.0 * n).sqrt());
    }

    #[test]
    fn lecun_truncated_moments() {
        let lat = square(10);
        let arch = Architecture::Cnn {
            side: 10,
            channels: 1,
            filters: 2000,
            kernel: 3,
        };
        let _ = lat;
        let p = init_parameters(&arch, InitScheme::LecunTruncated, 9);
        assert_eq!(p.len(), 18_000);
        let target = (1.0f64 / 9.0).sqrt();
        let bound = 2.0 * target / TRUNCATED_NORMAL_STD;
        assert!(p.iter().all(|x| x.abs() <= bound));
        let n = p.len() as f64;
        let (mean, std) = moments(&p);
        assert!(mean.abs() < 3.0 * target / n.sqrt());
        // the truncated distribution has lighter tails than a normal, so the
        // normal-theory bound on the sample std is conservative
        assert!((std - target).abs() < 3.0 * target / (2.0 * n).sqrt());
    }

    #[test]
    fn zero_parameters_give_zero_log_psi() {
        for arch in [
            Architecture::ffnn(&square(3), 2.0).unwrap(),
            Architecture::cnn(&square(4), 3).unwrap(),
        ] {
            let a = MaskedAnsatz::zeros(arch);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
            for _ in 0..5 {
                let s = SpinConfig::random(a.n_sites(), &mut rng);
                // GELU(0) = 0 as well
                assert_eq!(a.log_psi(&s).unwrap(), 0.0);
                assert_eq!(a.log_psi_delta(&s, &[0, 2]).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn ffnn_zero_params_have_zero_derivatives() {
        let a = MaskedAnsatz::zeros(Architecture::ffnn(&square(3), 1.0).unwrap());
        let d = a.log_derivatives(&SpinConfig::all_up(9)).unwrap();
        assert!(d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn plaquette_filter_example() {
        let lat = Lattice::Toric(ToricLattice::new(3).unwrap());
        let arch = Architecture::ffnn_with_width(&lat, 1).unwrap();
        let plaq = ToricLattice::new(3).unwrap().plaquettes()[0];
        let w = 1.5;
        let mut params = vec![0.0; arch.n_params()];
        for (e, sign) in plaq.iter().zip([1.0, 1.0, 1.0, -1.0]) {
            params[*e] = sign * w;
        }
        let a = MaskedAnsatz::dense(arch, ParameterVector(params)).unwrap();
        assert!((a.log_psi(&SpinConfig::all_up(18)).unwrap() - 2.0 * w).abs() < 1e-15);
    }

    #[test]
    fn delta_matches_recompute() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let toric = Lattice::Toric(ToricLattice::new(3).unwrap());
        let archs = [
            Architecture::ffnn(&square(4), 2.0).unwrap(),
            Architecture::cnn(&square(5), 3).unwrap(),
            Architecture::cnn(&toric, 2).unwrap(),
        ];
        for (t, arch) in archs.into_iter().enumerate() {
            let a = random_ansatz(arch, t as u64, 0.5);
            let n = a.n_sites();
            for _ in 0..1000 {
                let s = SpinConfig::random(n, &mut rng);
                let k = rng.random_range(0..=4);
                let mut flips: Vec<usize> = (0..k).map(|_| rng.random_range(0..n)).collect();
                flips.sort_unstable();
                flips.dedup();
                let delta = a.log_psi_delta(&s, &flips).unwrap();
                let direct = a.log_psi(&s.flip(&flips).unwrap()).unwrap() - a.log_psi(&s).unwrap();
                assert!((delta - direct).abs() <= 1e-10, "{delta} vs {direct}");
            }
        }
    }

    #[test]
    fn masked_parameters_do_not_matter() {
        let arch = Architecture::ffnn(&square(3), 2.0).unwrap();
        let a = random_ansatz(arch, 4, 0.3);
        let pruned = a.apply_prune(&[0, 5, 17, 40]).unwrap();
        let mut zeroed = a.params().to_vec();
        for k in [0, 5, 17, 40] {
            zeroed[k] = 0.0;
        }
        let manual = MaskedAnsatz::dense(arch, ParameterVector(zeroed)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let s = SpinConfig::random(9, &mut rng);
            assert_eq!(pruned.log_psi(&s).unwrap(), manual.log_psi(&s).unwrap());
        }
    }

    #[test]
    fn prune_contract() {
        let arch = Architecture::ffnn(&square(2), 1.0).unwrap();
        let a = random_ansatz(arch, 1, 0.1);
        assert_eq!(a.apply_prune(&[]).unwrap(), a);
        let p = a.apply_prune(&[1, 2]).unwrap();
        assert_eq!(p.mask().ones(), 14);
        assert_eq!(p.params()[1], 0.0);
        assert!(p.apply_prune(&[1]).is_err());
        assert!(a.apply_prune(&[3, 3]).is_err());
        let all_but_one: Vec<usize> = (1..16).collect();
        assert_eq!(a.apply_prune(&all_but_one).unwrap().mask().ones(), 1);
        let d = p.log_derivatives(&SpinConfig::all_up(4)).unwrap();
        assert_eq!(d.len(), 14);
    }

    fn central_difference(a: &MaskedAnsatz, s: &SpinConfig, k: usize, eps: f64) -> f64 {
        let mut plus = a.params().to_vec();
        let mut minus = a.params().to_vec();
        plus[k] += eps;
        minus[k] -= eps;
        let lp = a.with_params(ParameterVector(plus)).unwrap().log_psi(s).unwrap();
        let lm = a.with_params(ParameterVector(minus)).unwrap().log_psi(s).unwrap();
        (lp - lm) / (2.0 * eps)
    }

    #[test]
    fn log_derivatives_match_central_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let toric = Lattice::Toric(ToricLattice::new(3).unwrap());
        let archs = [
            Architecture::ffnn(&square(4), 2.0).unwrap(),
            Architecture::cnn(&square(5), 3).unwrap(),
            Architecture::cnn(&toric, 2).unwrap(),
        ];
        let eps = 1e-5;
        for (t, arch) in archs.into_iter().enumerate() {
            let a = random_ansatz(arch, 100 + t as u64, 0.4).apply_prune(&[0, 3]).unwrap();
            let mut checked = 0;
            while checked < 50 {
                let s = SpinConfig::random(a.n_sites(), &mut rng);
                let act = a.activations(s.as_slice());
                // stay away from ReLU kinks
                if act.pre.iter().any(|h| h.abs() < 1e-3) {
                    continue;
                }
                let grads = a.log_derivatives(&s).unwrap();
                let pos = rng.random_range(0..a.unmasked().len());
                let k = a.unmasked()[pos];
                let fd = central_difference(&a, &s, k, eps);
                let scale = fd.abs().max(grads[pos].abs()).max(1e-2);
                assert!((fd - grads[pos]).abs() / scale < 1e-4, "k={k}: {fd} vs {}", grads[pos]);
                checked += 1;
            }
        }
    }

    #[test]
    fn masked_coordinates_never_appear() {
        let arch = Architecture::cnn(&square(4), 2).unwrap();
        let a = random_ansatz(arch, 2, 0.3).apply_prune(&[4, 9]).unwrap();
        assert!(!a.unmasked().contains(&4) && !a.unmasked().contains(&9));
        assert_eq!(a.log_derivatives(&SpinConfig::all_up(16)).unwrap().len(), 16);
    }

    #[test]
    fn packed_mask_roundtrip() {
        let bits: Vec<bool> = (0..21).map(|k| k % 3 == 0 || k == 20).collect();
        let mask = Mask::from_bits(bits);
        let packed = mask.to_packed();
        assert_eq!(packed.len(), 3);
        assert_eq!(packed[0] & 1, 1);
        assert_eq!(Mask::from_packed(&packed, 21).unwrap(), mask);
    }

    #[test]
    fn gelu_derivative() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_prime(x)).abs() < 1e-8);
        }
        assert!((gelu(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
    }
}
