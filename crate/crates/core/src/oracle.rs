//! Exact references: diagonalization, full enumeration of ansatz
//! expectations and the constructed toric-code solution.

use faer::{Mat, Side};
use rayon::prelude::*;

use crate::ansatz::{Architecture, Mask, MaskedAnsatz, ParameterVector};
use crate::error::{NqsError, Result};
use crate::hamiltonian::Hamiltonian;
use crate::lattice::{Lattice, SpinConfig, ToricLattice};

pub const MAX_ENUMERATION_SITES: usize = 20;
pub const MAX_DENSE_SITES: usize = 12;
const LANCZOS_TOL: f64 = 1e-10;
const LANCZOS_MAX_DIM: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExactMethod {
    Lanczos,
    Dense,
    Analytic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactSolution {
    pub energy: f64,
    pub method: ExactMethod,
    pub n_sites: usize,
}

fn capacity(what: &'static str, limit: usize, requested: usize) -> NqsError {
    NqsError::Capacity {
        what,
        limit,
        requested,
    }
}

/// Basis-state index masks of the off-diagonal moves, with amplitudes.
fn move_masks(h: &Hamiltonian) -> Vec<(usize, f64)> {
    h.moves()
        .iter()
        .filter(|m| m.amplitude != 0.0)
        .map(|m| (m.flips.iter().fold(0usize, |acc, &i| acc ^ (1 << i)), m.amplitude))
        .collect()
}

fn diagonal(h: &Hamiltonian) -> Vec<f64> {
    let n = h.n_sites();
    (0..1usize << n)
        .into_par_iter()
        .map(|k| h.diagonal_unchecked(SpinConfig::from_index(k, n).as_slice()))
        .collect()
}

/// Dense `2^N × 2^N` Hamiltonian in the index basis of [`SpinConfig::from_index`].
pub fn dense_hamiltonian(h: &Hamiltonian) -> Result<Mat<f64>> {
    let n = h.n_sites();
    if n > MAX_DENSE_SITES {
        return Err(capacity("dense Hamiltonian sites", MAX_DENSE_SITES, n));
    }
    let dim = 1usize << n;
    let diag = diagonal(h);
    let moves = move_masks(h);
    let mut m = Mat::zeros(dim, dim);
    for k in 0..dim {
        m[(k, k)] += diag[k];
        for &(mask, amp) in &moves {
            m[(k, k ^ mask)] += amp;
        }
    }
    Ok(m)
}

pub fn dense_ground_energy(h: &Hamiltonian) -> Result<ExactSolution> {
    let m = dense_hamiltonian(h)?;
    let eig = m
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| NqsError::Numerical(format!("dense eigensolver failed: {e:?}")))?;
    let energy = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(ExactSolution {
        energy,
        method: ExactMethod::Dense,
        n_sites: h.n_sites(),
    })
}

struct SparseOperator {
    diag: Vec<f64>,
    moves: Vec<(usize, f64)>,
}

impl SparseOperator {
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(k, o)| {
            let mut acc = self.diag[k] * v[k];
            for &(mask, amp) in &self.moves {
                acc += amp * v[k ^ mask];
            }
            *o = acc;
        });
    }
}

fn tridiagonal_min(alpha: &[f64], beta: &[f64]) -> Result<f64> {
    let k = alpha.len();
    let t = Mat::from_fn(k, k, |i, j| {
        if i == j {
            alpha[i]
        } else if i + 1 == j {
            beta[i]
        } else if j + 1 == i {
            beta[j]
        } else {
            0.0
        }
    });
    let eig = t
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| NqsError::Numerical(format!("tridiagonal eigensolver failed: {e:?}")))?;
    Ok(eig.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// Matrix-free Lanczos from the normalized all-ones vector with full
/// reorthogonalization.
pub fn lanczos_ground_energy(h: &Hamiltonian, max_sites: usize) -> Result<ExactSolution> {
    let n = h.n_sites();
    let limit = max_sites.min(MAX_ENUMERATION_SITES);
    if n > limit {
        return Err(capacity("Lanczos sites", limit, n));
    }
    let dim = 1usize << n;
    let op = SparseOperator {
        diag: diagonal(h),
        moves: move_masks(h),
    };
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.par_iter().zip(b).map(|(x, y)| x * y).sum() };
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (dim as f64).sqrt(); dim]];
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut w = vec![0.0; dim];
    let mut previous = f64::INFINITY;
    loop {
        let j = basis.len() - 1;
        op.apply(&basis[j], &mut w);
        let a = dot(&w, &basis[j]);
        alpha.push(a);
        for q in &basis {
            let c = dot(&w, q);
            w.par_iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
        }
        let b = dot(&w, &w).sqrt();
        let ritz = tridiagonal_min(&alpha, &beta)?;
        let scale = ritz.abs().max(1.0);
        if b <= 1e-12 * scale || (previous - ritz).abs() < LANCZOS_TOL || basis.len() >= LANCZOS_MAX_DIM {
            if basis.len() >= LANCZOS_MAX_DIM && (previous - ritz).abs() >= LANCZOS_TOL {
                log::warn!("Lanczos stopped at the Krylov dimension cap");
            }
            return Ok(ExactSolution {
                energy: ritz,
                method: ExactMethod::Lanczos,
                n_sites: n,
            });
        }
        previous = ritz;
        beta.push(b);
        basis.push(w.iter().map(|x| x / b).collect());
    }
}

/// Exact expectations of one ansatz over all `2^N` configurations.
#[derive(Clone, Debug, PartialEq)]
pub struct Enumerated {
    pub energy: f64,
    pub energy_sq: f64,
    /// `ln Σ_σ |ψ(σ)|²`.
    pub log_norm: f64,
    /// Normalized overlaps `|⟨ψ|φ⟩| / (‖ψ‖ ‖φ‖)` with each supplied `φ`.
    pub overlaps: Vec<f64>,
}

impl Enumerated {
    pub fn variance(&self) -> f64 {
        (self.energy_sq - self.energy * self.energy).max(0.0)
    }
}

fn check_enumerable(n: usize) -> Result<()> {
    if n > MAX_ENUMERATION_SITES {
        return Err(capacity("enumerated sites", MAX_ENUMERATION_SITES, n));
    }
    Ok(())
}

fn log_amplitudes(ansatz: &MaskedAnsatz, n: usize) -> Vec<f64> {
    (0..1usize << n)
        .into_par_iter()
        .map(|k| ansatz.activations(SpinConfig::from_index(k, n).as_slice()).log_psi)
        .collect()
}

/// `log ψ` relative to its maximum, and `ln Σ exp(2 ·)` of the shifted values.
fn normalized(log_psi: &[f64]) -> (Vec<f64>, f64) {
    let max = log_psi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = log_psi.iter().map(|l| l - max).collect();
    let z: f64 = shifted.iter().map(|l| (2.0 * l).exp()).sum();
    (shifted, z.ln())
}

pub fn enumerate_expectation(
    h: &Hamiltonian,
    ansatz: &MaskedAnsatz,
    others: &[&MaskedAnsatz],
) -> Result<Enumerated> {
    let n = h.n_sites();
    check_enumerable(n)?;
    if ansatz.n_sites() != n || others.iter().any(|o| o.n_sites() != n) {
        return Err(NqsError::contract("ansatz size differs from model size"));
    }
    let raw = log_amplitudes(ansatz, n);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (shifted, log_z) = normalized(&raw);
    let e_loc = local_energies(h, ansatz)?;
    let mut energy = 0.0;
    let mut energy_sq = 0.0;
    for (l, e) in shifted.iter().zip(&e_loc) {
        let p = (2.0 * l - log_z).exp();
        energy += p * e;
        energy_sq += p * e * e;
    }
    let overlaps = others
        .iter()
        .map(|o| {
            let (other, log_zo) = normalized(&log_amplitudes(o, n));
            let s: f64 = shifted.iter().zip(&other).map(|(a, b)| (a + b).exp()).sum();
            s / (0.5 * (log_z + log_zo)).exp()
        })
        .collect();
    Ok(Enumerated {
        energy,
        energy_sq,
        log_norm: log_z + 2.0 * max,
        overlaps,
    })
}

fn local_energies(h: &Hamiltonian, ansatz: &MaskedAnsatz) -> Result<Vec<f64>> {
    let n = h.n_sites();
    let e: Vec<f64> = (0..1usize << n)
        .into_par_iter()
        .map_init(Vec::new, |scratch, k| {
            let sigma = SpinConfig::from_index(k, n);
            let act = ansatz.activations(sigma.as_slice());
            h.local_energy_with(ansatz, sigma.as_slice(), &act, scratch)
        })
        .collect();
    if let Some(k) = e.iter().position(|v| !v.is_finite()) {
        return Err(NqsError::NonFinite {
            value: e[k],
            config: SpinConfig::from_index(k, n).into_inner(),
        });
    }
    Ok(e)
}

/// `⟨H⟩ − E_ref` summed term by term as `Σ p(σ) (E_loc(σ) − E_ref)`, so that
/// errors far below machine precision relative to `E_ref` stay resolvable.
pub fn enumerated_energy_excess(h: &Hamiltonian, ansatz: &MaskedAnsatz, reference: f64) -> Result<f64> {
    let n = h.n_sites();
    check_enumerable(n)?;
    let (shifted, log_z) = normalized(&log_amplitudes(ansatz, n));
    let e_loc = local_energies(h, ansatz)?;
    Ok(shifted
        .iter()
        .zip(&e_loc)
        .map(|(l, e)| (2.0 * l - log_z).exp() * (e - reference))
        .sum())
}

/// The eight sign vectors in `{±1}⁴` with an odd number of `−1` entries.
pub fn odd_parity_patterns() -> Vec<[f64; 4]> {
    (0u8..16)
        .filter(|b| b.count_ones() % 2 == 1)
        .map(|b| {
            let mut s = [1.0; 4];
            for (e, v) in s.iter_mut().enumerate() {
                if b >> e & 1 == 1 {
                    *v = -1.0;
                }
            }
            s
        })
        .collect()
}

/// Minimal FFNN (8 hidden units per plaquette) holding the odd-parity filters.
pub fn build_toric_solution(side: usize, weight: f64) -> Result<MaskedAnsatz> {
    let lattice = ToricLattice::new(side)?;
    let arch = Architecture::ffnn_with_width(&Lattice::Toric(lattice), 8 * side * side)?;
    build_toric_solution_in(arch, lattice, weight)
}

/// Places the filters in the first `8 L²` hidden units of `arch`; every
/// other weight is masked.
pub fn build_toric_solution_in(arch: Architecture, lattice: ToricLattice, weight: f64) -> Result<MaskedAnsatz> {
    if !(weight.is_finite() && weight > 0.0) {
        return Err(NqsError::Config(format!("filter magnitude must be positive, got {weight}")));
    }
    let Architecture::Ffnn { inputs, hidden } = arch else {
        return Err(NqsError::Config("the constructed toric solution needs an FFNN".into()));
    };
    let need = 8 * lattice.side() * lattice.side();
    if inputs != lattice.n_sites() {
        return Err(NqsError::contract("architecture input count differs from the lattice"));
    }
    if hidden < need {
        return Err(capacity("hidden units for odd-parity filters", hidden, need));
    }
    let mut params = vec![0.0; arch.n_params()];
    let mut bits = vec![false; arch.n_params()];
    let patterns = odd_parity_patterns();
    for (p, plaq) in lattice.plaquettes().iter().enumerate() {
        for (f, pattern) in patterns.iter().enumerate() {
            let unit = 8 * p + f;
            for (&edge, &sign) in plaq.iter().zip(pattern) {
                params[unit * inputs + edge] = sign * weight;
                bits[unit * inputs + edge] = true;
            }
        }
    }
    MaskedAnsatz::new(arch, ParameterVector(params), Mask::from_bits(bits))
}

/// `−2L²`: every vertex and plaquette term at eigenvalue +1.
pub fn toric_ground_energy(side: usize) -> f64 {
    -2.0 * (side * side) as f64
}

pub fn toric_solution(side: usize) -> ExactSolution {
    ExactSolution {
        energy: toric_ground_energy(side),
        method: ExactMethod::Analytic,
        n_sites: 2 * side * side,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::{init_parameters, InitScheme};
    use crate::hamiltonian::KAPPA_CRITICAL;
    use crate::lattice::{Boundary, SquareLattice};

    fn tfim(l: usize, kappa: f64) -> Hamiltonian {
        Hamiltonian::tfim(SquareLattice::new(l, Boundary::Open).unwrap(), kappa).unwrap()
    }

    #[test]
    fn classical_limit() {
        let e = lanczos_ground_energy(&tfim(3, 0.0), 20).unwrap();
        assert!((e.energy + 12.0).abs() < 1e-10);
    }

    #[test]
    fn paramagnetic_limit() {
        let e = lanczos_ground_energy(&tfim(2, 100.0), 20).unwrap().energy;
        let r = e / -400.0;
        assert!((1.0..=1.01).contains(&r), "{r}");
    }

    #[test]
    fn lanczos_matches_dense() {
        for kappa in [0.0, 1.0, KAPPA_CRITICAL, 6.0] {
            let h = tfim(3, kappa);
            let a = lanczos_ground_energy(&h, 20).unwrap().energy;
            let b = dense_ground_energy(&h).unwrap().energy;
            assert!((a - b).abs() < 1e-10, "kappa {kappa}: {a} vs {b}");
        }
        let tc = Hamiltonian::toric(ToricLattice::new(2).unwrap());
        let a = lanczos_ground_energy(&tc, 20).unwrap().energy;
        assert!((a - toric_ground_energy(2)).abs() < 1e-10);
        assert!((dense_ground_energy(&tc).unwrap().energy + 8.0).abs() < 1e-10);
    }

    #[test]
    fn capacity_limits() {
        let h = tfim(5, 1.0);
        assert!(matches!(lanczos_ground_energy(&h, 20), Err(NqsError::Capacity { .. })));
        assert!(matches!(dense_hamiltonian(&tfim(4, 1.0)), Err(NqsError::Capacity { .. })));
    }

    #[test]
    fn uniform_state_expectations() {
        let tc = Hamiltonian::toric(ToricLattice::new(2).unwrap());
        let zero = MaskedAnsatz::zeros(Architecture::ffnn(&tc.lattice(), 1.0).unwrap());
        let e = enumerate_expectation(&tc, &zero, &[]).unwrap();
        assert!((e.energy + 4.0).abs() < 1e-12);
        for kappa in [0.5, 2.0] {
            let h = tfim(3, kappa);
            let zero = MaskedAnsatz::zeros(Architecture::ffnn(&h.lattice(), 1.0).unwrap());
            let e = enumerate_expectation(&h, &zero, &[&zero]).unwrap();
            assert!((e.energy + kappa * 9.0).abs() < 1e-12);
            assert!((e.overlaps[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn variational_bound() {
        let h = tfim(3, KAPPA_CRITICAL);
        let exact = lanczos_ground_energy(&h, 20).unwrap().energy;
        let arch = Architecture::ffnn(&h.lattice(), 2.0).unwrap();
        for seed in 0..5 {
            let a = MaskedAnsatz::dense(arch, init_parameters(&arch, InitScheme::Normal { std: 0.5 }, seed)).unwrap();
            assert!(enumerate_expectation(&h, &a, &[]).unwrap().energy >= exact - 1e-12);
        }
    }

    #[test]
    fn odd_parity_patterns_are_complete() {
        let p = odd_parity_patterns();
        assert_eq!(p.len(), 8);
        assert!(p.iter().all(|s| s.iter().product::<f64>() == -1.0));
    }

    #[test]
    fn constructed_solution_structure() {
        let w = 1.5;
        let a = build_toric_solution(2, w).unwrap();
        assert_eq!(a.mask().ones(), 32 * 4);
        let lat = ToricLattice::new(2).unwrap();
        let base = a.log_psi(&SpinConfig::all_up(8)).unwrap();
        assert!((base - 8.0 * w * 4.0).abs() < 1e-12);
        for k in 0..256 {
            let s = SpinConfig::from_index(k, 8);
            let violated = lat
                .plaquettes()
                .iter()
                .filter(|p| p.iter().map(|&e| s.as_slice()[e] as i32).product::<i32>() == -1)
                .count();
            let d = a.log_psi(&s).unwrap() - base;
            assert!((d + 4.0 * w * violated as f64).abs() < 1e-9);
        }
        let narrow = Architecture::ffnn_with_width(&Lattice::Toric(lat), 31).unwrap();
        assert!(matches!(build_toric_solution_in(narrow, lat, 1.0), Err(NqsError::Capacity { .. })));
    }

    #[test]
    fn toric_reference() {
        assert_eq!(toric_ground_energy(3), -18.0);
        assert_eq!(toric_ground_energy(2), -8.0);
    }
}
