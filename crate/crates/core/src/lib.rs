//! Variational Monte Carlo for neural-network quantum states with iterative
//! magnitude pruning.

pub mod ansatz;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod hamiltonian;
pub mod lattice;
pub mod observables;
pub mod oracle;
pub mod pruning;
pub mod rng;
pub mod sampler;
pub mod sr;

pub use ansatz::{Architecture, InitScheme, Mask, MaskedAnsatz, ParameterVector};
pub use checkpoint::Checkpoint;
pub use config::{ArchConfig, ExperimentConfig, ModelConfig, TicketSection};
pub use error::{NqsError, Result};
pub use hamiltonian::{Hamiltonian, Model};
pub use lattice::{Boundary, Lattice, SpinConfig, SquareLattice, ToricLattice};
pub use observables::MetricsRecord;
pub use pruning::{
    InitSource, PruneSchedule, PruneStrategy, PruningRun, PruningTrajectory, ResetMode, TicketVariant, TrainingSetup,
};
pub use sampler::{ProposalRule, SampleBatch, Sampler, SamplerConfig};
pub use sr::{SolverKind, SrConfig};
