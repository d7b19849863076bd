//! Transverse-field Ising model and toric code in the `σᶻ` basis.
//!
//! Both Hamiltonians have a diagonal part and a fixed list of off-diagonal
//! moves: each move flips a set of spins and carries a constant real matrix
//! element. Local energies are evaluated from log-amplitude differences.

use crate::ansatz::{Activations, MaskedAnsatz};
use crate::error::{NqsError, Result};
use crate::lattice::{Lattice, SpinConfig, SquareLattice, ToricLattice};

/// Critical transverse field of the square-lattice Ising model.
pub const KAPPA_CRITICAL: f64 = 3.04438;

/// Above this, `exp(Δ log ψ)` is clamped to avoid overflow.
pub const MAX_LOG_RATIO: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Model {
    Tfim { lattice: SquareLattice, kappa: f64 },
    Toric { lattice: ToricLattice },
}

/// One off-diagonal term: `⟨σ|H|flip(σ, flips)⟩ = amplitude`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConnectedElement {
    pub flips: Vec<usize>,
    pub amplitude: f64,
}

#[derive(Clone, Debug)]
enum DiagonalTerms {
    Bonds(Vec<(usize, usize)>),
    Plaquettes(Vec<[usize; 4]>),
}

#[derive(Clone, Debug)]
pub struct Hamiltonian {
    model: Model,
    diagonal: DiagonalTerms,
    moves: Vec<ConnectedElement>,
}

impl Hamiltonian {
    pub fn tfim(lattice: SquareLattice, kappa: f64) -> Result<Self> {
        if !kappa.is_finite() || kappa < 0.0 {
            return Err(NqsError::Config(format!(
                "transverse field must be finite and non-negative, got {kappa}"
            )));
        }
        let moves = (0..lattice.n_sites())
            .map(|i| ConnectedElement {
                flips: vec![i],
                amplitude: -kappa,
            })
            .collect();
        Ok(Hamiltonian {
            model: Model::Tfim { lattice, kappa },
            diagonal: DiagonalTerms::Bonds(lattice.bonds()),
            moves,
        })
    }

    pub fn toric(lattice: ToricLattice) -> Self {
        let (plaquettes, vertices) = lattice.cells();
        let moves = vertices
            .into_iter()
            .map(|v| ConnectedElement {
                flips: v.to_vec(),
                amplitude: -1.0,
            })
            .collect();
        Hamiltonian {
            model: Model::Toric { lattice },
            diagonal: DiagonalTerms::Plaquettes(plaquettes),
            moves,
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn lattice(&self) -> Lattice {
        match self.model {
            Model::Tfim { lattice, .. } => Lattice::Square(lattice),
            Model::Toric { lattice } => Lattice::Toric(lattice),
        }
    }

    pub fn n_sites(&self) -> usize {
        self.lattice().n_sites()
    }

    fn check(&self, sigma: &[i8]) -> Result<()> {
        if sigma.len() != self.n_sites() {
            return Err(NqsError::contract(format!(
                "configuration has {} spins, model has {}",
                sigma.len(),
                self.n_sites()
            )));
        }
        Ok(())
    }

    pub fn diagonal_energy(&self, sigma: &SpinConfig) -> Result<f64> {
        self.check(sigma.as_slice())?;
        Ok(self.diagonal_unchecked(sigma.as_slice()))
    }

    pub(crate) fn diagonal_unchecked(&self, s: &[i8]) -> f64 {
        match &self.diagonal {
            DiagonalTerms::Bonds(bonds) => {
                -bonds.iter().map(|&(i, j)| (s[i] * s[j]) as i64).sum::<i64>() as f64
            }
            DiagonalTerms::Plaquettes(plaq) => {
                -plaq
                    .iter()
                    .map(|p| p.iter().map(|&e| s[e] as i64).product::<i64>())
                    .sum::<i64>() as f64
            }
        }
    }

    /// Off-diagonal moves from `σ`. They do not depend on `σ` for either model.
    pub fn connected_elements(&self, sigma: &SpinConfig) -> Result<&[ConnectedElement]> {
        self.check(sigma.as_slice())?;
        Ok(&self.moves)
    }

    pub(crate) fn moves(&self) -> &[ConnectedElement] {
        &self.moves
    }

    /// `⟨σ|H|ψ⟩ / ⟨σ|ψ⟩`.
    pub fn local_energy(&self, ansatz: &MaskedAnsatz, sigma: &SpinConfig) -> Result<f64> {
        self.check(sigma.as_slice())?;
        if ansatz.n_sites() != self.n_sites() {
            return Err(NqsError::contract(format!(
                "ansatz has {} inputs, model has {} spins",
                ansatz.n_sites(),
                self.n_sites()
            )));
        }
        let act = ansatz.activations(sigma.as_slice());
        if !act.log_psi.is_finite() {
            return Err(NqsError::NonFinite {
                value: act.log_psi,
                config: sigma.as_slice().to_vec(),
            });
        }
        let mut scratch = Vec::with_capacity(act.pre_activations().len());
        Ok(self.local_energy_with(ansatz, sigma.as_slice(), &act, &mut scratch))
    }

    pub(crate) fn local_energy_with(
        &self,
        ansatz: &MaskedAnsatz,
        sigma: &[i8],
        act: &Activations,
        scratch: &mut Vec<f64>,
    ) -> f64 {
        let mut energy = self.diagonal_unchecked(sigma);
        for el in &self.moves {
            if el.amplitude == 0.0 {
                continue;
            }
            let delta = ansatz.delta_into(sigma, act, &el.flips, scratch);
            energy += el.amplitude * clamped_exp(delta);
        }
        energy
    }

    /// `Σ_i exp(log ψ(σ^{(i)}) − log ψ(σ))` over single-site flips.
    pub(crate) fn single_flip_ratio_sum(
        ansatz: &MaskedAnsatz,
        sigma: &[i8],
        act: &Activations,
        scratch: &mut Vec<f64>,
    ) -> f64 {
        (0..sigma.len())
            .map(|i| clamped_exp(ansatz.delta_into(sigma, act, &[i], scratch)))
            .sum()
    }
}

pub(crate) fn clamped_exp(delta: f64) -> f64 {
    if delta > MAX_LOG_RATIO {
        log::warn!("log-amplitude ratio {delta:.1} clamped to {MAX_LOG_RATIO}");
        MAX_LOG_RATIO.exp()
    } else {
        delta.exp()
    }
}
