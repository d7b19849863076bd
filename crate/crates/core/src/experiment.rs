//! On-disk experiment runs: configuration snapshot, append-only metrics log,
//! per-iteration checkpoints, resume, and export.
//!
//! A run directory holds
//!
//! ```text
//! config.txt          canonical snapshot, written first
//! metrics.jsonl       one row per completed iteration (0 = pre-trained)
//! checkpoints/        init.nqsp, rewind.nqsp, iter_XXXX.nqsp, last_finite.nqsp
//! summary.json        written when the run ends
//! .lock               PID of the process that owns the directory
//! ```

use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ansatz::{MaskedAnsatz, ParameterVector};
use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, TicketSection};
use crate::error::{NqsError, Result};
use crate::observables::{
    absolute_error_per_spin, energy_stats, magnetization_x, magnetization_z, relative_error, MetricsRecord,
};
use crate::pruning::{make_ticket, train_ticket, PruningRun, TicketVariant};
use crate::rng::{self, derive_seed, Domain, StreamState};
use crate::sampler::Sampler;

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const LOCK_FILE: &str = ".lock";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const METRICS_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 11] = [
    "iteration",
    "n",
    "rho",
    "E",
    "var",
    "stat_err",
    "rel_err",
    "abs_err_per_spin",
    "m_x",
    "m_z",
    "fidelity",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub v: u32,
    pub config_hash: String,
    #[serde(flatten)]
    pub record: MetricsRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub v: u32,
    pub config_hash: String,
    pub iterations_scheduled: usize,
    pub iterations_completed: usize,
    pub reference_energy: Option<f64>,
    /// Reason the run stopped early, if it did.
    pub truncated: Option<String>,
    #[serde(rename = "final")]
    pub last: Option<MetricsRecord>,
}

pub fn checkpoint_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(name)
}

pub fn iteration_checkpoint(dir: &Path, iteration: usize) -> PathBuf {
    checkpoint_path(dir, &format!("iter_{iteration:04}.nqsp"))
}

/// Exclusive ownership of a run directory for the lifetime of the value.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    /// Fails if a live process holds the lock; a lock left by a dead process
    /// is replaced.
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id())?;
                    return Ok(RunLock { path });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    let holder = fs::read_to_string(&path).unwrap_or_default();
                    let pid: Option<u32> = holder.trim().parse().ok();
                    if let Some(pid) = pid.filter(|&p| process_alive(p)) {
                        return Err(NqsError::Config(format!(
                            "{} is locked by running process {pid}",
                            dir.display()
                        )));
                    }
                    log::warn!("removing stale lock {} ({})", path.display(), holder.trim());
                    fs::remove_file(&path)?;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(NqsError::Config(format!("could not lock {}", dir.display())))
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn process_alive(pid: u32) -> bool {
    if pid == std::process::id() {
        return true;
    }
    let proc_root = Path::new("/proc");
    if proc_root.is_dir() {
        proc_root.join(pid.to_string()).exists()
    } else {
        // no way to tell; assume the holder is alive
        true
    }
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

fn append_row(dir: &Path, row: &MetricsRow) -> Result<()> {
    let mut line = serde_json::to_string(row)?;
    line.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(dir.join(METRICS_FILE))?;
    f.write_all(line.as_bytes())?;
    f.sync_data()?;
    Ok(())
}

/// Streams the phase after `iteration` starts from.
fn next_streams(seed: u64, iteration: usize) -> Vec<StreamState> {
    let next = iteration as u64 + 1;
    vec![
        StreamState::capture(seed, &rng::stream(seed, Domain::Prune, next)),
        StreamState::capture(
            derive_seed(seed, Domain::Chain, next),
            &rng::stream(derive_seed(seed, Domain::Chain, next), Domain::Chain, 0),
        ),
    ]
}

struct RunContext<'a> {
    dir: &'a Path,
    hash: String,
    config: &'a ExperimentConfig,
}

impl RunContext<'_> {
    fn checkpoint(&self, state: &MaskedAnsatz, iteration: usize) -> Result<Checkpoint> {
        Ok(Checkpoint {
            lattice: self.config.lattice()?,
            ansatz: state.clone(),
            iteration: iteration as u64,
            config_hash: self.hash.clone(),
            streams: next_streams(self.config.sampler.seed, iteration),
        })
    }

    fn save(&self, name: &str, state: &MaskedAnsatz, iteration: usize) -> Result<()> {
        self.checkpoint(state, iteration)?.write(&checkpoint_path(self.dir, name))
    }

    fn row(&self, record: &MetricsRecord) -> Result<()> {
        append_row(
            self.dir,
            &MetricsRow {
                v: METRICS_VERSION,
                config_hash: self.hash.clone(),
                record: record.clone(),
            },
        )
    }

    fn summary(&self, run: &PruningRun, truncated: Option<String>, last: Option<MetricsRecord>) -> Result<RunSummary> {
        let s = RunSummary {
            v: METRICS_VERSION,
            config_hash: self.hash.clone(),
            iterations_scheduled: run.schedule.iterations,
            iterations_completed: run.completed(),
            reference_energy: run.setup.reference,
            truncated,
            last,
        };
        write_atomic(&self.dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&s)?.as_bytes())?;
        Ok(s)
    }

    fn save_last_finite(&self, e: &NqsError, iteration: usize) -> Result<()> {
        if let NqsError::Diverged { last_finite, .. } = e {
            self.save("last_finite.nqsp", last_finite, iteration)?;
        }
        Ok(())
    }

    /// Runs the remaining phases of `run`, persisting each as it completes.
    fn drive(&self, mut run: PruningRun, mut last: Option<MetricsRecord>) -> Result<RunSummary> {
        fs::create_dir_all(self.dir.join(CHECKPOINT_DIR))?;
        if !run.is_pretrained() {
            let init = MaskedAnsatz::dense(run.setup.arch, run.init().clone())?;
            self.save("init.nqsp", &init, 0)?;
            let metrics = match run.pretrain() {
                Ok(m) => m.clone(),
                Err(e) => {
                    self.save_last_finite(&e, 0)?;
                    self.summary(&run, Some(e.to_string()), None)?;
                    return Err(e);
                }
            };
            self.save("rewind.nqsp", run.rewind_point().expect("pretrained"), 0)?;
            self.row(&metrics)?;
            log::info!("pre-trained: E = {:.6}, var = {:.3e}", metrics.energy, metrics.var);
            last = Some(metrics);
        }
        while !run.is_finished() {
            let i = run.completed() + 1;
            match run.step() {
                Ok(rec) => {
                    self.save(&format!("iter_{i:04}.nqsp"), &rec.state, i)?;
                    self.row(&rec.metrics)?;
                    log::info!(
                        "iteration {i}: n = {}, rho = {:.3}, E = {:.6}",
                        rec.metrics.n,
                        rec.metrics.rho,
                        rec.metrics.energy
                    );
                    last = Some(rec.metrics);
                }
                Err(e @ NqsError::ScheduleExhausted { .. }) => {
                    log::warn!("stopping at iteration {i}: {e}");
                    return self.summary(&run, Some(e.to_string()), last);
                }
                Err(e) => {
                    self.save_last_finite(&e, i)?;
                    self.summary(&run, Some(e.to_string()), last)?;
                    return Err(e);
                }
            }
        }
        self.summary(&run, None, last)
    }
}

/// Starts a pruning run in `dir`. A directory already holding a run of the
/// same configuration is resumed; one of a different configuration is refused.
pub fn run_pruning(config: &ExperimentConfig, dir: &Path) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(dir)?;
    if let Ok(existing) = fs::read_to_string(dir.join(CONFIG_FILE)) {
        if existing != config.to_text() {
            return Err(refuse(format!(
                "{} holds a run of a different configuration",
                dir.display()
            )));
        }
        return resume(dir);
    }
    let _lock = RunLock::acquire(dir)?;
    write_atomic(&dir.join(CONFIG_FILE), config.to_text().as_bytes())?;
    let setup = config.training_setup()?;
    let run = PruningRun::new(setup, config.prune, config.sampler.seed)?;
    let ctx = RunContext {
        dir,
        hash: config.hash(),
        config,
    };
    ctx.drive(run, None)
}

/// Parsed metrics log. A final line without newline or that fails to parse
/// is reported as partial.
#[derive(Clone, Debug, Default)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
    /// Byte length of the complete rows.
    pub valid_len: u64,
    pub partial_tail: bool,
    /// Unparsable lines before the last one.
    pub corrupt_lines: Vec<usize>,
}

pub fn read_metrics(path: &Path) -> Result<MetricsLog> {
    let mut log = MetricsLog::default();
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(log),
        Err(e) => return Err(e.into()),
    };
    let mut offset = 0u64;
    let mut lines = bytes.split_inclusive(|&b| b == b'\n').enumerate().peekable();
    while let Some((no, line)) = lines.next() {
        let is_last = lines.peek().is_none();
        let complete = line.ends_with(b"\n");
        let parsed = std::str::from_utf8(line)
            .ok()
            .and_then(|s| serde_json::from_str::<MetricsRow>(s.trim_end()).ok());
        match parsed {
            Some(row) if complete => {
                log.rows.push(row);
                offset += line.len() as u64;
                log.valid_len = offset;
            }
            _ if is_last => log.partial_tail = true,
            _ => {
                log.corrupt_lines.push(no + 1);
                offset += line.len() as u64;
            }
        }
    }
    Ok(log)
}

fn refuse(msg: impl Into<String>) -> NqsError {
    NqsError::ResumeRefused(msg.into())
}

fn load_checked(path: &Path, hash: &str, config: &ExperimentConfig, iteration: usize) -> Result<Checkpoint> {
    let c = Checkpoint::read(path).map_err(|e| refuse(e.to_string()))?;
    if c.config_hash != hash {
        return Err(refuse(format!(
            "{} was written by configuration {}, snapshot is {hash}",
            path.display(),
            c.config_hash
        )));
    }
    if c.lattice != config.lattice()? || *c.ansatz.architecture() != config.architecture()? {
        return Err(refuse(format!("{} does not match the configured model", path.display())));
    }
    if c.iteration != iteration as u64 || c.streams != next_streams(config.sampler.seed, iteration) {
        return Err(refuse(format!("{} has inconsistent iteration or stream state", path.display())));
    }
    Ok(c)
}

/// Continues an interrupted run from its last complete iteration. A finished
/// run is left untouched.
pub fn resume(dir: &Path) -> Result<RunSummary> {
    let _lock = RunLock::acquire(dir)?;
    let text = fs::read_to_string(dir.join(CONFIG_FILE))
        .map_err(|e| refuse(format!("no configuration snapshot in {}: {e}", dir.display())))?;
    let config = ExperimentConfig::parse(&text).map_err(|e| refuse(format!("snapshot unreadable: {e}")))?;
    config.validate().map_err(|e| refuse(format!("snapshot invalid: {e}")))?;
    let hash = config.hash();
    let metrics_path = dir.join(METRICS_FILE);
    let log = read_metrics(&metrics_path)?;
    if !log.corrupt_lines.is_empty() {
        return Err(refuse(format!("corrupt metrics rows at lines {:?}", log.corrupt_lines)));
    }
    for (k, row) in log.rows.iter().enumerate() {
        if row.config_hash != hash {
            return Err(refuse(format!(
                "metrics row {} has configuration hash {}, snapshot is {hash}",
                k + 1,
                row.config_hash
            )));
        }
        if row.record.iteration != k {
            return Err(refuse(format!("metrics row {} is iteration {}", k + 1, row.record.iteration)));
        }
    }
    if log.partial_tail {
        log::warn!("discarding partial final metrics row");
        OpenOptions::new().write(true).open(&metrics_path)?.set_len(log.valid_len)?;
    }
    let ctx = RunContext {
        dir,
        hash: hash.clone(),
        config: &config,
    };
    let setup = config.training_setup()?;
    let schedule = config.prune;
    let seed = config.sampler.seed;
    let Some(last_row) = log.rows.last() else {
        log::info!("no completed phase; starting over");
        return ctx.drive(PruningRun::new(setup, schedule, seed)?, None);
    };
    let completed = last_row.record.iteration;
    if let Ok(s) = fs::read_to_string(dir.join(SUMMARY_FILE)) {
        if let Ok(summary) = serde_json::from_str::<RunSummary>(&s) {
            let done = summary.iterations_completed == completed
                && (completed >= schedule.iterations || summary.truncated.is_some());
            if summary.config_hash == hash && done {
                log::info!("run already complete");
                return Ok(summary);
            }
        }
    }
    let rewind = load_checked(&checkpoint_path(dir, "rewind.nqsp"), &hash, &config, 0)?.ansatz;
    let current = if completed == 0 {
        rewind.clone()
    } else {
        load_checked(&iteration_checkpoint(dir, completed), &hash, &config, completed)?.ansatz
    };
    if current.mask().ones() != last_row.record.n {
        return Err(refuse("checkpoint mask does not match the metrics log"));
    }
    let pretrain = log.rows[0].record.clone();
    let run = PruningRun::restore(setup, schedule, seed, rewind, pretrain, current, completed)?;
    log::info!("resuming after iteration {completed}");
    ctx.drive(run, Some(last_row.record.clone()))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ExportReport {
    pub rows: usize,
    pub skipped: usize,
}

fn field(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

/// Writes the metrics log of `dir` as CSV. Unparsable rows are skipped and counted.
pub fn export_curves<W: Write>(dir: &Path, out: W) -> Result<ExportReport> {
    let file = fs::File::open(dir.join(METRICS_FILE))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    let mut report = ExportReport::default();
    for line in io::BufReader::new(file).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let Ok(row) = serde_json::from_str::<MetricsRow>(&line) else {
            report.skipped += 1;
            continue;
        };
        let r = &row.record;
        w.write_record([
            r.iteration.to_string(),
            r.n.to_string(),
            r.rho.to_string(),
            r.energy.to_string(),
            r.var.to_string(),
            r.stat_err.to_string(),
            field(r.rel_err),
            field(r.abs_err_per_spin),
            r.m_x.to_string(),
            r.m_z.to_string(),
            field(r.fidelity),
        ])
        .map_err(csv_err)?;
        report.rows += 1;
    }
    w.flush()?;
    if report.skipped > 0 {
        log::warn!("skipped {} corrupt metrics rows", report.skipped);
    }
    Ok(report)
}

fn csv_err(e: csv::Error) -> NqsError {
    NqsError::Io(io::Error::other(e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TicketReport {
    pub variant: String,
    pub iteration: usize,
    pub seed: u64,
    pub init_source: String,
    pub ticket: MetricsRecord,
    /// Metrics of the pruned network the mask came from.
    pub imp: Option<MetricsRecord>,
}

/// Trains a ticket built from a finished run's stored parameters and masks.
pub fn run_ticket(run_dir: &Path, ticket: &TicketSection) -> Result<TicketReport> {
    let text = fs::read_to_string(run_dir.join(CONFIG_FILE))?;
    let config = ExperimentConfig::parse(&text)?;
    let hash = config.hash();
    let log = read_metrics(&run_dir.join(METRICS_FILE))?;
    let completed = log.rows.last().map_or(0, |r| r.record.iteration);
    if ticket.iteration == 0 || ticket.iteration > completed {
        return Err(NqsError::Config(format!(
            "ticket iteration {} outside the completed iterations 1..={completed}",
            ticket.iteration
        )));
    }
    let init = load_checked(&checkpoint_path(run_dir, "init.nqsp"), &hash, &config, 0)?;
    let rewind = load_checked(&checkpoint_path(run_dir, "rewind.nqsp"), &hash, &config, 0)?;
    let imp = load_checked(&iteration_checkpoint(run_dir, ticket.iteration), &hash, &config, ticket.iteration)?;
    let setup = config.training_setup()?;
    let ticket_state = make_ticket(
        ticket.variant,
        setup.arch,
        setup.init,
        &ParameterVector(init.ansatz.params().to_vec()),
        &rewind.ansatz.parameter_vector(),
        imp.ansatz.mask(),
        ticket.init_source,
        ticket.seed,
    )?;
    let (_, mut metrics) = train_ticket(&setup, &ticket_state, ticket.steps, ticket.seed)?;
    metrics.iteration = ticket.iteration;
    Ok(TicketReport {
        variant: ticket.variant.to_string(),
        iteration: ticket.iteration,
        seed: ticket.seed,
        init_source: ticket.init_source.to_string(),
        ticket: metrics,
        imp: log.rows.get(ticket.iteration).map(|r| r.record.clone()),
    })
}

pub fn ticket_variants() -> [TicketVariant; 3] {
    [
        TicketVariant::ThetaInitMaskImp,
        TicketVariant::ThetaRandMaskImp,
        TicketVariant::ThetaInitMaskRand,
    ]
}

/// Observables of a stored state from one fresh sample batch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub n: usize,
    pub rho: f64,
    #[serde(rename = "E")]
    pub energy: f64,
    pub var: f64,
    pub stat_err: f64,
    pub rel_err: Option<f64>,
    pub abs_err_per_spin: Option<f64>,
    pub m_x: f64,
    pub m_z: f64,
    pub acceptance_rate: f64,
}

pub fn observe(config: &ExperimentConfig, state: &MaskedAnsatz) -> Result<Observation> {
    config.validate()?;
    let h = config.hamiltonian()?;
    if state.n_sites() != h.n_sites() {
        return Err(NqsError::Config(format!(
            "state has {} spins, model has {}",
            state.n_sites(),
            h.n_sites()
        )));
    }
    let cfg = config.sampler_config().with_seed(derive_seed(config.sampler.seed, Domain::Measure, u64::MAX));
    let batch = Sampler::new(cfg, &h.lattice())?.sample(state)?;
    let e_loc = batch
        .configs
        .iter()
        .map(|c| h.local_energy(state, c))
        .collect::<Result<Vec<_>>>()?;
    let (energy, var, stat_err) = energy_stats(&e_loc)?;
    let reference = config.reference_energy()?;
    let n = state.mask().ones();
    Ok(Observation {
        n,
        rho: n as f64 / h.n_sites() as f64,
        energy,
        var,
        stat_err,
        rel_err: reference.map(|r| relative_error(energy, r)).transpose()?,
        abs_err_per_spin: reference.map(|r| absolute_error_per_spin(energy, r, h.n_sites())),
        m_x: magnetization_x(state, &batch),
        m_z: magnetization_z(&batch),
        acceptance_rate: batch.acceptance_rate,
    })
}
