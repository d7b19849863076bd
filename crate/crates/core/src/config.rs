//! Flat `section.key=value` experiment configuration, built-in presets and
//! the canonical snapshot whose SHA-256 identifies a run.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::ansatz::{Architecture, InitScheme};
use crate::error::{NqsError, Result};
use crate::hamiltonian::{Hamiltonian, KAPPA_CRITICAL};
use crate::lattice::{Boundary, Lattice, SquareLattice, ToricLattice};
use crate::oracle::{lanczos_ground_energy, toric_ground_energy, MAX_ENUMERATION_SITES};
use crate::pruning::{InitSource, PruneSchedule, PruneStrategy, ResetMode, TicketVariant, TrainingSetup};
use crate::sampler::{ProposalRule, SamplerConfig};
use crate::sr::{SolverKind, SrConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModelConfig {
    Tfim { side: usize, boundary: Boundary, kappa: f64 },
    Toric { side: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ArchConfig {
    Ffnn { alpha: f64 },
    Cnn { filters: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerSection {
    pub n_samples: usize,
    pub n_chains: usize,
    pub burn_in_sweeps: usize,
    pub sweep_length: Option<usize>,
    /// Single-flip share of the mixed toric rule.
    pub single_flip_prob: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TicketSection {
    pub variant: TicketVariant,
    pub iteration: usize,
    pub seed: u64,
    pub steps: usize,
    pub init_source: InitSource,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub arch: ArchConfig,
    /// `None` picks the architecture default.
    pub init: Option<InitScheme>,
    pub sampler: SamplerSection,
    pub sr: SrConfig,
    pub prune: PruneSchedule,
    pub ticket: Option<TicketSection>,
    /// Not part of the snapshot or its hash.
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::Tfim {
                side: 4,
                boundary: Boundary::Open,
                kappa: KAPPA_CRITICAL,
            },
            arch: ArchConfig::Ffnn { alpha: 8.0 },
            init: None,
            sampler: SamplerSection {
                n_samples: 1024,
                n_chains: 16,
                burn_in_sweeps: 10,
                sweep_length: None,
                single_flip_prob: 0.5,
                seed: 0,
            },
            sr: SrConfig::default(),
            prune: PruneSchedule {
                ratio: 0.12,
                iterations: 51,
                pretrain_steps: 10_000,
                train_steps: 1000,
                strategy: PruneStrategy::Magnitude,
                reset: ResetMode::Rewind,
            },
            ticket: None,
            output_dir: None,
        }
    }
}

pub const PRESET_NAMES: &[&str] = &[
    "fig1-cnn",
    "fig1-ffnn",
    "fig2a-w1",
    "fig2a-w2.5",
    "fig2a-w5",
    "fig2b-k0.1",
    "fig2b-k1",
    "fig2b-k2",
    "fig2c-k4",
    "fig2c-k5",
    "fig2c-k6",
    "fig3-4x4",
    "fig3-5x5",
    "fig3-6x6",
    "fig3-7x7",
    "fig3-8x8",
    "fig3-9x9",
    "fig3-10x10",
    "fig4-toric-w4",
    "fig4-toric",
    "fig4-toric-w16",
    "fig4-toric-w32",
];

fn tfim(side: usize, kappa: f64) -> ModelConfig {
    ModelConfig::Tfim {
        side,
        boundary: Boundary::Open,
        kappa,
    }
}

/// Built-in hyperparameter sets, by name.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let base = ExperimentConfig::default();
    let with = |model: ModelConfig, arch: ArchConfig, ratio: f64, iterations: usize, lambda: f64| {
        let mut c = base.clone();
        c.model = model;
        c.arch = arch;
        c.prune.ratio = ratio;
        c.prune.iterations = iterations;
        c.sr.lambda = lambda;
        c
    };
    let ffnn = |alpha| ArchConfig::Ffnn { alpha };
    let big = |kappa, alpha, iterations| with(tfim(10, kappa), ffnn(alpha), 0.12, iterations, 1e-4);
    let toric = |alpha, iterations| with(ModelConfig::Toric { side: 3 }, ffnn(alpha), 0.12, iterations, 1e-3);
    Some(match name {
        "fig1-cnn" => with(tfim(10, KAPPA_CRITICAL), ArchConfig::Cnn { filters: 4 }, 0.05, 31, 1e-3),
        "fig1-ffnn" => big(KAPPA_CRITICAL, 5.0, 65),
        "fig2a-w1" => big(KAPPA_CRITICAL, 1.0, 54),
        "fig2a-w2.5" => big(KAPPA_CRITICAL, 2.5, 60),
        "fig2a-w5" => big(KAPPA_CRITICAL, 5.0, 65),
        "fig2b-k0.1" => big(0.1, 5.0, 65),
        "fig2b-k1" => big(1.0, 5.0, 65),
        "fig2b-k2" => big(2.0, 5.0, 65),
        "fig2c-k4" => big(4.0, 5.0, 65),
        "fig2c-k5" => big(5.0, 5.0, 65),
        "fig2c-k6" => big(6.0, 5.0, 65),
        "fig3-4x4" => with(tfim(4, KAPPA_CRITICAL), ffnn(8.0), 0.12, 51, 1e-4),
        "fig3-5x5" => with(tfim(5, KAPPA_CRITICAL), ffnn(8.0), 0.12, 58, 1e-4),
        "fig3-6x6" => with(tfim(6, KAPPA_CRITICAL), ffnn(8.0), 0.12, 64, 1e-4),
        "fig3-7x7" => with(tfim(7, KAPPA_CRITICAL), ffnn(8.0), 0.12, 69, 1e-4),
        "fig3-8x8" => with(tfim(8, KAPPA_CRITICAL), ffnn(8.0), 0.12, 65, 1e-4),
        "fig3-9x9" => with(tfim(9, KAPPA_CRITICAL), ffnn(8.0), 0.12, 74, 1e-4),
        "fig3-10x10" => with(tfim(10, KAPPA_CRITICAL), ffnn(8.0), 0.12, 74, 1e-4),
        "fig4-toric-w4" => toric(4.0, 47),
        "fig4-toric" => toric(8.0, 53),
        "fig4-toric-w16" => toric(16.0, 58),
        "fig4-toric-w32" => toric(32.0, 64),
        _ => return None,
    })
}

/// Parsed `key=value` pairs in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut errors = Vec::new();
    let mut seen = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            errors.push(format!("line {}: expected key=value, got '{line}'", no + 1));
            continue;
        };
        let key = key.trim().to_string();
        if key.split('.').count() > 2 || key.split('.').any(str::is_empty) {
            errors.push(format!("line {}: malformed key '{key}'", no + 1));
            continue;
        }
        if let Some(prev) = seen.insert(key.clone(), no + 1) {
            errors.push(format!("line {}: duplicate key '{key}' (first on line {prev})", no + 1));
            continue;
        }
        pairs.push((key, value.trim().to_string()));
    }
    if errors.is_empty() {
        Ok(pairs)
    } else {
        Err(NqsError::Validation(errors))
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, errors: &mut Vec<String>) -> Option<T> {
    match value.parse() {
        Ok(v) => Some(v),
        Err(_) => {
            errors.push(format!("{key}: cannot parse '{value}'"));
            None
        }
    }
}

impl ExperimentConfig {
    /// Applies `key=value` overrides on top of `self`. Errors are itemized.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let pairs = parse_pairs(text)?;
        let mut errors = Vec::new();
        // kinds first, so that kind-specific keys land in the right variant
        for (key, value) in &pairs {
            match key.as_str() {
                "model.kind" => match value.as_str() {
                    "tfim" => {
                        if !matches!(self.model, ModelConfig::Tfim { .. }) {
                            self.model = tfim(self.model_side(), KAPPA_CRITICAL);
                        }
                    }
                    "toric" => self.model = ModelConfig::Toric { side: self.model_side() },
                    other => errors.push(format!("model.kind: unknown model '{other}'")),
                },
                "arch.kind" => match value.as_str() {
                    "ffnn" => {
                        if !matches!(self.arch, ArchConfig::Ffnn { .. }) {
                            self.arch = ArchConfig::Ffnn { alpha: 8.0 };
                        }
                    }
                    "cnn" => {
                        if !matches!(self.arch, ArchConfig::Cnn { .. }) {
                            self.arch = ArchConfig::Cnn { filters: 4 };
                        }
                    }
                    other => errors.push(format!("arch.kind: unknown architecture '{other}'")),
                },
                _ => {}
            }
        }
        let mut ticket = self.ticket.unwrap_or(TicketSection {
            variant: TicketVariant::ThetaInitMaskImp,
            iteration: 1,
            seed: 0,
            steps: self.prune.pretrain_steps,
            init_source: InitSource::Initial,
        });
        let mut ticket_seen = self.ticket.is_some();
        let mut init_scheme: Option<String> = None;
        let mut init_std: Option<f64> = None;
        let mut cg_tol = 1e-6;
        let mut cg_iter = 1000;
        let mut solver = match self.sr.solver {
            SolverKind::DenseCholesky => "dense".to_string(),
            SolverKind::ConjugateGradient { tol, max_iter } => {
                cg_tol = tol;
                cg_iter = max_iter;
                "cg".to_string()
            }
        };
        for (key, value) in &pairs {
            let e = &mut errors;
            match key.as_str() {
                "model.kind" | "arch.kind" => {}
                "model.L" => {
                    if let Some(v) = parse_value(key, value, e) {
                        match &mut self.model {
                            ModelConfig::Tfim { side, .. } | ModelConfig::Toric { side } => *side = v,
                        }
                    }
                }
                "model.boundary" => match &mut self.model {
                    ModelConfig::Tfim { boundary, .. } => match value.parse() {
                        Ok(b) => *boundary = b,
                        Err(_) => e.push(format!("model.boundary: unknown boundary '{value}'")),
                    },
                    ModelConfig::Toric { .. } => e.push("model.boundary: the toric lattice is always periodic".into()),
                },
                "model.kappa" => match &mut self.model {
                    ModelConfig::Tfim { kappa, .. } => {
                        if let Some(v) = parse_value(key, value, e) {
                            *kappa = v;
                        }
                    }
                    ModelConfig::Toric { .. } => e.push("model.kappa: not a toric-code parameter".into()),
                },
                "arch.alpha" => match &mut self.arch {
                    ArchConfig::Ffnn { alpha } => {
                        if let Some(v) = parse_value(key, value, e) {
                            *alpha = v;
                        }
                    }
                    ArchConfig::Cnn { .. } => e.push("arch.alpha: not a CNN parameter".into()),
                },
                "arch.n_f" => match &mut self.arch {
                    ArchConfig::Cnn { filters } => {
                        if let Some(v) = parse_value(key, value, e) {
                            *filters = v;
                        }
                    }
                    ArchConfig::Ffnn { .. } => e.push("arch.n_f: not an FFNN parameter".into()),
                },
                "init.scheme" => init_scheme = Some(value.clone()),
                "init.std" => init_std = parse_value(key, value, e),
                "sampler.N_s" => set(&mut self.sampler.n_samples, key, value, e),
                "sampler.n_chains" => set(&mut self.sampler.n_chains, key, value, e),
                "sampler.burn_in_sweeps" => set(&mut self.sampler.burn_in_sweeps, key, value, e),
                "sampler.sweep_length" => {
                    self.sampler.sweep_length = if value == "N" { None } else { parse_value(key, value, e) }
                }
                "sampler.single_flip_prob" => set(&mut self.sampler.single_flip_prob, key, value, e),
                "sampler.seed" => set(&mut self.sampler.seed, key, value, e),
                "sr.eta" => set(&mut self.sr.eta, key, value, e),
                "sr.lambda" => set(&mut self.sr.lambda, key, value, e),
                "sr.solver" => solver = value.clone(),
                "sr.cg_tol" => set(&mut cg_tol, key, value, e),
                "sr.cg_max_iter" => set(&mut cg_iter, key, value, e),
                "sr.dense_threshold" => set(&mut self.sr.dense_threshold, key, value, e),
                "prune.p_r" => set(&mut self.prune.ratio, key, value, e),
                "prune.I" => set(&mut self.prune.iterations, key, value, e),
                "prune.j" => set(&mut self.prune.pretrain_steps, key, value, e),
                "prune.k" => set(&mut self.prune.train_steps, key, value, e),
                "prune.strategy" => set(&mut self.prune.strategy, key, value, e),
                "prune.reset" => set(&mut self.prune.reset, key, value, e),
                "ticket.variant" => {
                    ticket_seen = true;
                    set(&mut ticket.variant, key, value, e)
                }
                "ticket.iteration" => {
                    ticket_seen = true;
                    set(&mut ticket.iteration, key, value, e)
                }
                "ticket.seed" => {
                    ticket_seen = true;
                    set(&mut ticket.seed, key, value, e)
                }
                "ticket.steps" => {
                    ticket_seen = true;
                    set(&mut ticket.steps, key, value, e)
                }
                "ticket.init_source" => {
                    ticket_seen = true;
                    set(&mut ticket.init_source, key, value, e)
                }
                "output_dir" => self.output_dir = Some(value.clone()),
                other => e.push(format!("unknown key '{other}'")),
            }
        }
        self.sr.solver = match solver.as_str() {
            "dense" => SolverKind::DenseCholesky,
            "cg" => SolverKind::ConjugateGradient {
                tol: cg_tol,
                max_iter: cg_iter,
            },
            other => {
                errors.push(format!("sr.solver: unknown solver '{other}' (dense or cg)"));
                self.sr.solver
            }
        };
        match (init_scheme.as_deref(), init_std) {
            (None, None) => {}
            (Some("default"), None) => self.init = None,
            (Some("lecun"), None) => self.init = Some(InitScheme::LecunTruncated),
            (Some("normal") | None, std) => {
                let current = match self.init {
                    Some(InitScheme::Normal { std }) => std,
                    _ => 0.1,
                };
                self.init = Some(InitScheme::Normal {
                    std: std.unwrap_or(current),
                })
            }
            (Some(other), _) => errors.push(format!("init.scheme: '{other}' (normal, lecun or default; init.std only with normal)")),
        }
        if ticket_seen {
            self.ticket = Some(ticket);
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(NqsError::Validation(errors))
        }
    }

    fn model_side(&self) -> usize {
        match self.model {
            ModelConfig::Tfim { side, .. } | ModelConfig::Toric { side } => side,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Ok(match self.model {
            ModelConfig::Tfim { side, boundary, .. } => Lattice::Square(SquareLattice::new(side, boundary)?),
            ModelConfig::Toric { side } => Lattice::Toric(ToricLattice::new(side)?),
        })
    }

    pub fn hamiltonian(&self) -> Result<Hamiltonian> {
        Ok(match self.model {
            ModelConfig::Tfim { side, boundary, kappa } => Hamiltonian::tfim(SquareLattice::new(side, boundary)?, kappa)?,
            ModelConfig::Toric { side } => Hamiltonian::toric(ToricLattice::new(side)?),
        })
    }

    pub fn architecture(&self) -> Result<Architecture> {
        let lat = self.lattice()?;
        match self.arch {
            ArchConfig::Ffnn { alpha } => Architecture::ffnn(&lat, alpha),
            ArchConfig::Cnn { filters } => Architecture::cnn(&lat, filters),
        }
    }

    pub fn init_scheme(&self) -> Result<InitScheme> {
        Ok(self.init.unwrap_or(InitScheme::default_for(&self.architecture()?)))
    }

    pub fn proposal_rule(&self) -> ProposalRule {
        match self.model {
            ModelConfig::Tfim { .. } => ProposalRule::SingleFlip,
            ModelConfig::Toric { .. } => ProposalRule::MixedPlaquette {
                single_prob: self.sampler.single_flip_prob,
            },
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            n_samples: self.sampler.n_samples,
            n_chains: self.sampler.n_chains,
            burn_in_sweeps: self.sampler.burn_in_sweeps,
            sweep_length: self.sampler.sweep_length,
            rule: self.proposal_rule(),
            seed: self.sampler.seed,
        }
    }

    /// Exact ground energy: analytic for the toric code, Lanczos for small
    /// Ising lattices, `None` otherwise.
    pub fn reference_energy(&self) -> Result<Option<f64>> {
        match self.model {
            ModelConfig::Toric { side } => Ok(Some(toric_ground_energy(side))),
            ModelConfig::Tfim { side, .. } if side * side <= MAX_ENUMERATION_SITES => {
                Ok(Some(lanczos_ground_energy(&self.hamiltonian()?, MAX_ENUMERATION_SITES)?.energy))
            }
            ModelConfig::Tfim { .. } => Ok(None),
        }
    }

    pub fn training_setup(&self) -> Result<TrainingSetup> {
        self.validate()?;
        Ok(TrainingSetup {
            hamiltonian: self.hamiltonian()?,
            arch: self.architecture()?,
            init: self.init_scheme()?,
            sampler: self.sampler_config(),
            sr: self.sr,
            reference: self.reference_energy()?,
        })
    }

    /// Every violated constraint, not just the first.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        match self.model {
            ModelConfig::Tfim { side, kappa, .. } => {
                if side < 2 {
                    errors.push(format!("model.L must be at least 2, got {side}"));
                }
                if !(kappa.is_finite() && kappa >= 0.0) {
                    errors.push(format!("model.kappa must be finite and non-negative, got {kappa}"));
                }
            }
            ModelConfig::Toric { side } => {
                if side < 2 {
                    errors.push(format!("model.L must be at least 2, got {side}"));
                }
            }
        }
        if errors.is_empty() {
            if let Err(e) = self.architecture() {
                errors.push(format!("arch: {e}"));
            }
        }
        if let Some(InitScheme::Normal { std }) = self.init {
            if !(std.is_finite() && std > 0.0) {
                errors.push(format!("init.std must be positive, got {std}"));
            }
        }
        let s = &self.sampler;
        if s.n_samples < 2 {
            errors.push("sampler.N_s must be at least 2".into());
        }
        if s.n_chains == 0 {
            errors.push("sampler.n_chains must be positive".into());
        } else if s.n_samples % s.n_chains != 0 {
            errors.push(format!(
                "sampler.N_s ({}) must be divisible by sampler.n_chains ({})",
                s.n_samples, s.n_chains
            ));
        }
        if s.sweep_length == Some(0) {
            errors.push("sampler.sweep_length must be positive".into());
        }
        if !(0.0..=1.0).contains(&s.single_flip_prob) {
            errors.push(format!("sampler.single_flip_prob must lie in [0, 1], got {}", s.single_flip_prob));
        }
        if !(self.sr.eta.is_finite() && self.sr.eta > 0.0) {
            errors.push(format!("sr.eta must be finite and positive, got {}", self.sr.eta));
        }
        if let Err(NqsError::Validation(e)) = self.sr.validate() {
            errors.extend(e.into_iter().filter(|m| !m.starts_with("sr.eta")));
        }
        if self.sr.dense_threshold == 0 {
            errors.push("sr.dense_threshold must be positive".into());
        }
        if let Err(NqsError::Validation(e)) = self.prune.validate() {
            errors.extend(e);
        }
        if self.prune.iterations == 0 {
            errors.push("prune.I must be positive".into());
        }
        if let Some(t) = &self.ticket {
            if t.iteration == 0 || t.iteration > self.prune.iterations {
                errors.push(format!(
                    "ticket.iteration must lie in 1..={}, got {}",
                    self.prune.iterations, t.iteration
                ));
            }
            if t.steps == 0 {
                errors.push("ticket.steps must be positive".into());
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(NqsError::Validation(errors))
        }
    }

    /// Canonical snapshot: every field, one `key=value` per line, sorted.
    pub fn to_text(&self) -> String {
        let mut kv: BTreeMap<&str, String> = BTreeMap::new();
        match self.model {
            ModelConfig::Tfim { side, boundary, kappa } => {
                kv.insert("model.kind", "tfim".into());
                kv.insert("model.L", side.to_string());
                kv.insert("model.boundary", boundary.to_string());
                kv.insert("model.kappa", format!("{kappa:?}"));
            }
            ModelConfig::Toric { side } => {
                kv.insert("model.kind", "toric".into());
                kv.insert("model.L", side.to_string());
            }
        }
        match self.arch {
            ArchConfig::Ffnn { alpha } => {
                kv.insert("arch.kind", "ffnn".into());
                kv.insert("arch.alpha", format!("{alpha:?}"));
            }
            ArchConfig::Cnn { filters } => {
                kv.insert("arch.kind", "cnn".into());
                kv.insert("arch.n_f", filters.to_string());
            }
        }
        match self.init {
            None => {
                kv.insert("init.scheme", "default".into());
            }
            Some(InitScheme::LecunTruncated) => {
                kv.insert("init.scheme", "lecun".into());
            }
            Some(InitScheme::Normal { std }) => {
                kv.insert("init.scheme", "normal".into());
                kv.insert("init.std", format!("{std:?}"));
            }
        }
        let s = &self.sampler;
        kv.insert("sampler.N_s", s.n_samples.to_string());
        kv.insert("sampler.n_chains", s.n_chains.to_string());
        kv.insert("sampler.burn_in_sweeps", s.burn_in_sweeps.to_string());
        kv.insert(
            "sampler.sweep_length",
            s.sweep_length.map_or("N".to_string(), |v| v.to_string()),
        );
        kv.insert("sampler.single_flip_prob", format!("{:?}", s.single_flip_prob));
        kv.insert("sampler.seed", s.seed.to_string());
        kv.insert("sr.eta", format!("{:?}", self.sr.eta));
        kv.insert("sr.lambda", format!("{:?}", self.sr.lambda));
        kv.insert("sr.dense_threshold", self.sr.dense_threshold.to_string());
        match self.sr.solver {
            SolverKind::DenseCholesky => {
                kv.insert("sr.solver", "dense".into());
            }
            SolverKind::ConjugateGradient { tol, max_iter } => {
                kv.insert("sr.solver", "cg".into());
                kv.insert("sr.cg_tol", format!("{tol:?}"));
                kv.insert("sr.cg_max_iter", max_iter.to_string());
            }
        }
        let p = &self.prune;
        kv.insert("prune.p_r", format!("{:?}", p.ratio));
        kv.insert("prune.I", p.iterations.to_string());
        kv.insert("prune.j", p.pretrain_steps.to_string());
        kv.insert("prune.k", p.train_steps.to_string());
        kv.insert("prune.strategy", p.strategy.to_string());
        kv.insert("prune.reset", p.reset.to_string());
        if let Some(t) = &self.ticket {
            kv.insert("ticket.variant", t.variant.to_string());
            kv.insert("ticket.iteration", t.iteration.to_string());
            kv.insert("ticket.seed", t.seed.to_string());
            kv.insert("ticket.steps", t.steps.to_string());
            kv.insert("ticket.init_source", t.init_source.to_string());
        }
        let mut out = String::new();
        for (k, v) in kv {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Hex SHA-256 of [`Self::to_text`].
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

fn set<T: FromStr>(slot: &mut T, key: &str, value: &str, errors: &mut Vec<String>) {
    if let Some(v) = parse_value(key, value, errors) {
        *slot = v;
    }
}
