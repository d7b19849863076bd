//! Iterative pruning (magnitude or random selection, rewind or continued
//! training) and lottery-ticket construction.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ansatz::{init_parameters, Architecture, InitScheme, Mask, MaskedAnsatz, ParameterVector};
use crate::error::{NqsError, Result};
use crate::hamiltonian::Hamiltonian;
use crate::observables::{
    absolute_error_per_spin, fidelity, magnetization_x, magnetization_z, relative_error, MetricsRecord,
};
use crate::rng::{self, derive_seed, Domain};
use crate::sampler::{SampleBatch, Sampler, SamplerConfig};
use crate::sr::{train_with, SrConfig, StepRecord};

/// Steps averaged for the per-iteration energy.
pub const METRICS_TAIL: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PruneStrategy {
    Magnitude,
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResetMode {
    Rewind,
    Continue,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$variant => $text),+ })
            }
        }

        impl FromStr for $ty {
            type Err = NqsError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($ty::$variant),)+
                    other => Err(NqsError::Config(format!(
                        concat!("unknown ", stringify!($ty), " '{}'"), other
                    ))),
                }
            }
        }
    };
}

text_enum!(PruneStrategy { Magnitude => "magnitude", Random => "random" });
text_enum!(ResetMode { Rewind => "rewind", Continue => "continue" });

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneSchedule {
    pub ratio: f64,
    pub iterations: usize,
    pub pretrain_steps: usize,
    pub train_steps: usize,
    pub strategy: PruneStrategy,
    pub reset: ResetMode,
}

impl PruneSchedule {
    /// IMP-WR with ratio 0.12 (FFNN) or 0.05 (CNN), `j = 10⁴`, `k = 10³`.
    pub fn default_for(arch: &Architecture, iterations: usize) -> Self {
        PruneSchedule {
            ratio: match arch {
                Architecture::Ffnn { .. } => 0.12,
                Architecture::Cnn { .. } => 0.05,
            },
            iterations,
            pretrain_steps: 10_000,
            train_steps: 1000,
            strategy: PruneStrategy::Magnitude,
            reset: ResetMode::Rewind,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            errors.push(format!("prune.p_r must lie in (0, 1), got {}", self.ratio));
        }
        if self.pretrain_steps == 0 {
            errors.push("prune.j must be positive".into());
        }
        if self.train_steps == 0 {
            errors.push("prune.k must be positive".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(NqsError::Validation(errors))
        }
    }
}

/// `max(1, round_half_up(ratio · ones))`.
pub fn prune_count(ones: usize, ratio: f64) -> usize {
    ((ratio * ones as f64 + 0.5).floor() as usize).max(1)
}

/// `(1 − ratio)^i · n_init`.
pub fn expected_ones(n_init: usize, ratio: f64, iteration: usize) -> f64 {
    (1.0 - ratio).powi(iteration as i32) * n_init as f64
}

/// Unmasked indices to prune next; magnitude ties go to the lower index.
pub fn select_prune_set<R: Rng + ?Sized>(
    params: &[f64],
    mask: &Mask,
    ratio: f64,
    strategy: PruneStrategy,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if params.len() != mask.len() {
        return Err(NqsError::contract("parameter and mask lengths differ"));
    }
    let ones = mask.ones();
    let count = prune_count(ones, ratio);
    if ones < 2 || count >= ones {
        return Err(NqsError::ScheduleExhausted { ones });
    }
    let unmasked = mask.unmasked_indices();
    let mut chosen = match strategy {
        PruneStrategy::Magnitude => {
            let mut order = unmasked;
            order.sort_by(|&a, &b| params[a].abs().total_cmp(&params[b].abs()).then(a.cmp(&b)));
            order.truncate(count);
            order
        }
        PruneStrategy::Random => rand::seq::index::sample(rng, ones, count)
            .into_iter()
            .map(|i| unmasked[i])
            .collect(),
    };
    chosen.sort_unstable();
    Ok(chosen)
}

/// Everything needed to train and measure one state.
#[derive(Clone, Debug)]
pub struct TrainingSetup {
    pub hamiltonian: Hamiltonian,
    pub arch: Architecture,
    pub init: InitScheme,
    /// Chain layout; the seed is replaced per training phase.
    pub sampler: SamplerConfig,
    pub sr: SrConfig,
    /// Exact ground energy, when known.
    pub reference: Option<f64>,
}

impl TrainingSetup {
    fn phase_sampler(&self, seed: u64, domain: Domain, index: u64) -> SamplerConfig {
        self.sampler.with_seed(derive_seed(seed, domain, index))
    }
}

/// A measured state: metrics and the batch used for its observables.
#[derive(Clone, Debug)]
pub struct Measured {
    pub metrics: MetricsRecord,
    pub batch: SampleBatch,
}

/// Trains `steps` SR steps on persistent chains and returns the tail-averaged trace.
pub fn train_phase(
    setup: &TrainingSetup,
    start: &MaskedAnsatz,
    steps: usize,
    sampler_cfg: SamplerConfig,
) -> Result<(MaskedAnsatz, Vec<StepRecord>)> {
    let mut sampler = Sampler::new(sampler_cfg, &setup.hamiltonian.lattice())?;
    let mut trace = Vec::with_capacity(steps);
    let out = train_with(start, &setup.hamiltonian, &mut sampler, &setup.sr, steps, |_, r| {
        trace.push(*r)
    })?;
    Ok((out, trace))
}

/// Metrics of a trained state. Energy and variance are means over the last
/// [`METRICS_TAIL`] steps; magnetizations and fidelity use a fresh batch.
pub fn measure(
    setup: &TrainingSetup,
    iteration: usize,
    state: &MaskedAnsatz,
    trace: &[StepRecord],
    measure_cfg: SamplerConfig,
    previous: Option<(&MaskedAnsatz, &SampleBatch)>,
) -> Result<Measured> {
    let tail = &trace[trace.len().saturating_sub(METRICS_TAIL)..];
    if tail.is_empty() {
        return Err(NqsError::contract("measuring a state without a training trace"));
    }
    let energy = tail.iter().map(|r| r.energy).sum::<f64>() / tail.len() as f64;
    let var = tail.iter().map(|r| r.variance).sum::<f64>() / tail.len() as f64;
    let n_sites = setup.hamiltonian.n_sites();
    let batch = Sampler::new(measure_cfg, &setup.hamiltonian.lattice())?.sample(state)?;
    let fid = match previous {
        Some((prev, prev_batch)) => Some(fidelity(prev, state, prev_batch, &batch)?.value),
        None => None,
    };
    let (rel_err, abs_err) = match setup.reference {
        Some(e_ref) => (
            Some(relative_error(energy, e_ref)?),
            Some(absolute_error_per_spin(energy, e_ref, n_sites)),
        ),
        None => (None, None),
    };
    let n = state.mask().ones();
    let metrics = MetricsRecord {
        iteration,
        n,
        rho: n as f64 / n_sites as f64,
        energy,
        var,
        stat_err: (var / setup.sampler.n_samples as f64).sqrt(),
        rel_err,
        abs_err_per_spin: abs_err,
        m_x: magnetization_x(state, &batch),
        m_z: magnetization_z(&batch),
        fidelity: fid,
    };
    Ok(Measured { metrics, batch })
}

#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub state: MaskedAnsatz,
    pub metrics: MetricsRecord,
}

#[derive(Clone, Debug)]
pub struct PruningTrajectory {
    /// Random initialization before pre-training.
    pub init: ParameterVector,
    /// Rewind point `θ_wr` (the pre-trained state).
    pub rewind: MaskedAnsatz,
    pub pretrain_metrics: MetricsRecord,
    pub iterations: Vec<IterationRecord>,
    /// Why the trajectory stopped before the scheduled iteration count.
    pub truncated: Option<String>,
}

impl PruningTrajectory {
    pub fn masks(&self) -> impl Iterator<Item = &Mask> {
        self.iterations.iter().map(|r| r.state.mask())
    }

    pub fn record(&self, iteration: usize) -> Option<&IterationRecord> {
        iteration.checked_sub(1).and_then(|i| self.iterations.get(i))
    }
}

/// Resumable pruning state machine. Every phase draws its randomness from
/// `(seed, phase)`, so a run restored from any completed iteration continues
/// exactly as an uninterrupted one.
#[derive(Clone, Debug)]
pub struct PruningRun {
    pub setup: TrainingSetup,
    pub schedule: PruneSchedule,
    pub seed: u64,
    init: ParameterVector,
    rewind: Option<MaskedAnsatz>,
    pretrain_metrics: Option<MetricsRecord>,
    current: Option<MaskedAnsatz>,
    previous_batch: Option<SampleBatch>,
    completed: usize,
}

impl PruningRun {
    pub fn new(setup: TrainingSetup, schedule: PruneSchedule, seed: u64) -> Result<Self> {
        schedule.validate()?;
        setup.sampler.validate()?;
        setup.sr.validate()?;
        if setup.arch.n_inputs() != setup.hamiltonian.n_sites() {
            return Err(NqsError::Config(format!(
                "architecture expects {} inputs, model has {} spins",
                setup.arch.n_inputs(),
                setup.hamiltonian.n_sites()
            )));
        }
        let init = init_parameters(&setup.arch, setup.init, seed);
        Ok(PruningRun {
            setup,
            schedule,
            seed,
            init,
            rewind: None,
            pretrain_metrics: None,
            current: None,
            previous_batch: None,
            completed: 0,
        })
    }

    /// Restores a run whose iteration `completed` finished with `current`.
    pub fn restore(
        setup: TrainingSetup,
        schedule: PruneSchedule,
        seed: u64,
        rewind: MaskedAnsatz,
        pretrain_metrics: MetricsRecord,
        current: MaskedAnsatz,
        completed: usize,
    ) -> Result<Self> {
        let mut run = Self::new(setup, schedule, seed)?;
        let measure_cfg = run.setup.phase_sampler(seed, Domain::Measure, completed as u64);
        let batch = Sampler::new(measure_cfg, &run.setup.hamiltonian.lattice())?.sample(&current)?;
        run.rewind = Some(rewind);
        run.pretrain_metrics = Some(pretrain_metrics);
        run.current = Some(current);
        run.previous_batch = Some(batch);
        run.completed = completed;
        Ok(run)
    }

    pub fn init(&self) -> &ParameterVector {
        &self.init
    }

    pub fn rewind_point(&self) -> Option<&MaskedAnsatz> {
        self.rewind.as_ref()
    }

    pub fn pretrain_metrics(&self) -> Option<&MetricsRecord> {
        self.pretrain_metrics.as_ref()
    }

    pub fn current(&self) -> Option<&MaskedAnsatz> {
        self.current.as_ref()
    }

    pub fn completed(&self) -> usize {
        self.completed
    }

    pub fn is_pretrained(&self) -> bool {
        self.rewind.is_some()
    }

    pub fn is_finished(&self) -> bool {
        self.completed >= self.schedule.iterations
    }

    /// Trains the dense network for `j` steps and stores `θ_wr`.
    pub fn pretrain(&mut self) -> Result<&MetricsRecord> {
        let start = MaskedAnsatz::dense(self.setup.arch, self.init.clone())?;
        let cfg = self.setup.phase_sampler(self.seed, Domain::Chain, 0);
        let (state, trace) = train_phase(&self.setup, &start, self.schedule.pretrain_steps, cfg)?;
        self.adopt_pretrained(state, trace)
    }

    /// Uses an externally pre-trained state as `θ_wr` (shared across variants).
    pub fn adopt_pretrained(&mut self, state: MaskedAnsatz, trace: Vec<StepRecord>) -> Result<&MetricsRecord> {
        let cfg = self.setup.phase_sampler(self.seed, Domain::Measure, 0);
        let m = measure(&self.setup, 0, &state, &trace, cfg, None)?;
        self.rewind = Some(state.clone());
        self.current = Some(state);
        self.previous_batch = Some(m.batch);
        self.pretrain_metrics = Some(m.metrics);
        Ok(self.pretrain_metrics.as_ref().expect("just set"))
    }

    /// Prunes, resets, trains `k` steps and measures iteration `completed + 1`.
    pub fn step(&mut self) -> Result<IterationRecord> {
        let (Some(rewind), Some(current)) = (&self.rewind, &self.current) else {
            return Err(NqsError::contract("pruning iteration before pre-training"));
        };
        let i = self.completed + 1;
        let mut prune_rng = rng::stream(self.seed, Domain::Prune, i as u64);
        let indices = select_prune_set(
            current.params(),
            current.mask(),
            self.schedule.ratio,
            self.schedule.strategy,
            &mut prune_rng,
        )?;
        let mask = current.mask().cleared(&indices)?;
        let start = match self.schedule.reset {
            ResetMode::Rewind => rewind.with_mask(mask)?,
            ResetMode::Continue => current.with_mask(mask)?,
        };
        let cfg = self.setup.phase_sampler(self.seed, Domain::Chain, i as u64);
        let (state, trace) = train_phase(&self.setup, &start, self.schedule.train_steps, cfg)?;
        let measure_cfg = self.setup.phase_sampler(self.seed, Domain::Measure, i as u64);
        let previous = self.previous_batch.as_ref().map(|b| (current, b));
        let m = measure(&self.setup, i, &state, &trace, measure_cfg, previous)?;
        self.current = Some(state.clone());
        self.previous_batch = Some(m.batch);
        self.completed = i;
        Ok(IterationRecord {
            state,
            metrics: m.metrics,
        })
    }
}

/// Runs pre-training and all scheduled iterations, calling `on_iteration`
/// after each. Divergence or an exhausted schedule truncates the trajectory.
pub fn run_iterative_pruning_with<F>(mut run: PruningRun, mut on_iteration: F) -> Result<PruningTrajectory>
where
    F: FnMut(&PruningRun, &IterationRecord) -> Result<()>,
{
    if !run.is_pretrained() {
        run.pretrain()?;
    }
    let mut iterations = Vec::new();
    let mut truncated = None;
    while !run.is_finished() {
        match run.step() {
            Ok(rec) => {
                on_iteration(&run, &rec)?;
                iterations.push(rec);
            }
            Err(e @ (NqsError::Diverged { .. } | NqsError::ScheduleExhausted { .. })) => {
                log::warn!("pruning trajectory truncated at iteration {}: {e}", run.completed() + 1);
                truncated = Some(e.to_string());
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(PruningTrajectory {
        init: run.init.clone(),
        rewind: run.rewind.clone().expect("pretrained"),
        pretrain_metrics: run.pretrain_metrics.clone().expect("pretrained"),
        iterations,
        truncated,
    })
}

pub fn run_iterative_pruning(setup: TrainingSetup, schedule: PruneSchedule, seed: u64) -> Result<PruningTrajectory> {
    run_iterative_pruning_with(PruningRun::new(setup, schedule, seed)?, |_, _| Ok(()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TicketVariant {
    ThetaInitMaskImp,
    ThetaRandMaskImp,
    ThetaInitMaskRand,
}

text_enum!(TicketVariant {
    ThetaInitMaskImp => "theta-init-m-imp",
    ThetaRandMaskImp => "theta-rand-m-imp",
    ThetaInitMaskRand => "theta-init-m-rand",
});

/// Which stored parameters a ticket's `θ_init` refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitSource {
    /// Random initialization before pre-training.
    #[default]
    Initial,
    /// The rewind point `θ_wr`.
    Rewind,
}

text_enum!(InitSource { Initial => "initial", Rewind => "rewind" });

/// Uniformly random mask with `ones` set bits.
pub fn random_mask(len: usize, ones: usize, seed: u64) -> Result<Mask> {
    if ones > len {
        return Err(NqsError::contract("more set bits requested than mask length"));
    }
    let mut rng = rng::stream(seed, Domain::TicketMask, 0);
    let mut bits = vec![false; len];
    for i in rand::seq::index::sample(&mut rng, len, ones) {
        bits[i] = true;
    }
    Ok(Mask::from_bits(bits))
}

/// Sparse network to be trained in isolation from a trajectory's mask.
pub fn make_ticket(
    variant: TicketVariant,
    arch: Architecture,
    init_scheme: InitScheme,
    init: &ParameterVector,
    rewind: &ParameterVector,
    mask_imp: &Mask,
    source: InitSource,
    seed: u64,
) -> Result<MaskedAnsatz> {
    let stored = match source {
        InitSource::Initial => init.clone(),
        InitSource::Rewind => rewind.clone(),
    };
    match variant {
        TicketVariant::ThetaInitMaskImp => MaskedAnsatz::new(arch, stored, mask_imp.clone()),
        TicketVariant::ThetaRandMaskImp => {
            let fresh = init_parameters(&arch, init_scheme, derive_seed(seed, Domain::Ticket, 0));
            MaskedAnsatz::new(arch, fresh, mask_imp.clone())
        }
        TicketVariant::ThetaInitMaskRand => {
            let mask = random_mask(mask_imp.len(), mask_imp.ones(), seed)?;
            MaskedAnsatz::new(arch, stored, mask)
        }
    }
}

/// [`make_ticket`] with the mask of `iteration` in `trajectory`.
pub fn make_ticket_from(
    variant: TicketVariant,
    setup: &TrainingSetup,
    trajectory: &PruningTrajectory,
    iteration: usize,
    source: InitSource,
    seed: u64,
) -> Result<MaskedAnsatz> {
    let rec = trajectory.record(iteration).ok_or_else(|| {
        NqsError::Config(format!(
            "iteration {iteration} outside the trajectory (1..={})",
            trajectory.iterations.len()
        ))
    })?;
    make_ticket(
        variant,
        setup.arch,
        setup.init,
        &trajectory.init,
        &trajectory.rewind.parameter_vector(),
        rec.state.mask(),
        source,
        seed,
    )
}

/// Trains a ticket with its mask fixed and returns its converged metrics.
pub fn train_ticket(
    setup: &TrainingSetup,
    ticket: &MaskedAnsatz,
    steps: usize,
    seed: u64,
) -> Result<(MaskedAnsatz, MetricsRecord)> {
    let cfg = setup.phase_sampler(seed, Domain::Chain, 0);
    let (state, trace) = train_phase(setup, ticket, steps, cfg)?;
    debug_assert_eq!(state.mask(), ticket.mask());
    let measure_cfg = setup.phase_sampler(seed, Domain::Measure, 0);
    let m = measure(setup, 0, &state, &trace, measure_cfg, None)?;
    Ok((state, m.metrics))
}
