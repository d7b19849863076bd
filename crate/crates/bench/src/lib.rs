//! Shared fixtures for the benchmarks.

use nqs_core::ansatz::init_parameters;
use nqs_core::sampler::sample_batch;
use nqs_core::{
    Architecture, Boundary, Hamiltonian, InitScheme, Lattice, MaskedAnsatz, ProposalRule, SampleBatch, SamplerConfig,
    SquareLattice,
};

pub const KAPPA: f64 = 3.04438;

pub fn tfim(side: usize) -> Hamiltonian {
    Hamiltonian::tfim(SquareLattice::new(side, Boundary::Open).expect("side >= 2"), KAPPA).expect("valid kappa")
}

/// FFNN of width `alpha · N` with the smallest `1 − keep` fraction of
/// weights (by index) masked out.
pub fn ffnn_state(h: &Hamiltonian, alpha: f64, keep: f64, seed: u64) -> MaskedAnsatz {
    let arch = Architecture::ffnn(&h.lattice(), alpha).expect("integer width");
    let dense = MaskedAnsatz::dense(arch, init_parameters(&arch, InitScheme::Normal { std: 0.1 }, seed)).expect("sizes");
    let n = arch.n_params();
    let cut = n - ((keep * n as f64).round() as usize).clamp(1, n);
    let pruned: Vec<usize> = (0..cut).map(|k| (k * 7919) % n).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    if pruned.is_empty() {
        dense
    } else {
        dense.apply_prune(&pruned).expect("indices in range")
    }
}

pub fn batch(h: &Hamiltonian, state: &MaskedAnsatz, n_samples: usize) -> SampleBatch {
    let lattice: Lattice = h.lattice();
    sample_batch(state, &SamplerConfig::new(n_samples, ProposalRule::SingleFlip, 1), &lattice).expect("finite state")
}
