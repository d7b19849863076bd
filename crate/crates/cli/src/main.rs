use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nqs_core::checkpoint::Checkpoint;
use nqs_core::config::{preset, PRESET_NAMES};
use nqs_core::experiment::{self, CONFIG_FILE};
use nqs_core::oracle::{dense_ground_energy, lanczos_ground_energy, toric_solution, MAX_DENSE_SITES, MAX_ENUMERATION_SITES};
use nqs_core::{
    Boundary, ExperimentConfig, Hamiltonian, InitSource, NqsError, SquareLattice, TicketSection, TicketVariant,
};

#[derive(Parser, Debug)]
#[command(name = "nqs-prune", version, about = "Pruned neural-network quantum state experiments")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Key-value configuration file applied on top of the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in configuration to start from.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Individual `key=value` overrides, applied last.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Worker threads; NQS_THREADS takes precedence.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "info")]
    log_level: log::LevelFilter,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pre-train, then iteratively prune and retrain.
    Prune,
    /// Train a lottery ticket built from a finished pruning run.
    Ticket {
        #[arg(long)]
        from: PathBuf,
        #[arg(long)]
        variant: TicketVariant,
        #[arg(long)]
        iteration: usize,
        /// Training steps; defaults to the run's pre-training length.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value = "initial")]
        init_source: InitSource,
    },
    /// Exact ground-state energy.
    Oracle {
        #[arg(long)]
        model: Option<ModelArg>,
        #[arg(long = "L")]
        side: Option<usize>,
        #[arg(long)]
        kappa: Option<f64>,
        #[arg(long)]
        boundary: Option<Boundary>,
        /// Also diagonalize densely (up to 12 spins).
        #[arg(long)]
        dense: bool,
    },
    /// Sample observables of a stored checkpoint.
    Observe {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Run directory whose configuration applies; defaults to the
        /// checkpoint's run.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Write a run's metrics as CSV.
    Export {
        #[arg(long)]
        from: PathBuf,
        /// Output file; standard output if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Continue an interrupted run.
    Resume {
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// List built-in presets.
    Presets,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Tfim,
    Toric,
}

fn exit_code(e: &NqsError) -> u8 {
    match e {
        NqsError::NonFinite { .. }
        | NqsError::Numerical(_)
        | NqsError::CgNotConverged { .. }
        | NqsError::Diverged { .. } => 2,
        NqsError::ResumeRefused(_) | NqsError::Checkpoint(_) => 3,
        _ => 1,
    }
}

fn configure_threads(flag: Option<usize>) -> Result<(), NqsError> {
    let threads = match std::env::var("NQS_THREADS") {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| NqsError::Config(format!("NQS_THREADS must be a positive integer, got '{v}'")))?,
        ),
        Err(_) => flag,
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(NqsError::Config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| NqsError::Config(e.to_string()))?;
    }
    Ok(())
}

fn build_config(g: &Global) -> Result<ExperimentConfig, NqsError> {
    let mut config = match &g.preset {
        Some(name) => preset(name).ok_or_else(|| {
            NqsError::Config(format!("unknown preset '{name}'; available: {}", PRESET_NAMES.join(", ")))
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(path) = &g.config {
        let text = fs::read_to_string(path)
            .map_err(|e| NqsError::Config(format!("cannot read {}: {e}", path.display())))?;
        config.apply_text(&text)?;
    }
    if !g.overrides.is_empty() {
        config.apply_text(&g.overrides.join("\n"))?;
    }
    if let Some(seed) = g.seed {
        config.sampler.seed = seed;
    }
    if let Some(dir) = &g.output_dir {
        config.output_dir = Some(dir.display().to_string());
    }
    config.validate()?;
    Ok(config)
}

fn run_dir(config: &ExperimentConfig, g: &Global) -> PathBuf {
    match &config.output_dir {
        Some(d) => PathBuf::from(d),
        None => PathBuf::from(format!(
            "runs/{}-seed{}",
            g.preset.as_deref().unwrap_or("custom"),
            config.sampler.seed
        )),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), NqsError> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_run_config(dir: &Path) -> Result<ExperimentConfig, NqsError> {
    let text = fs::read_to_string(dir.join(CONFIG_FILE))
        .map_err(|e| NqsError::Config(format!("no run configuration in {}: {e}", dir.display())))?;
    ExperimentConfig::parse(&text)
}

fn oracle(
    g: &Global,
    model: Option<ModelArg>,
    side: Option<usize>,
    kappa: Option<f64>,
    boundary: Option<Boundary>,
    dense: bool,
) -> Result<(), NqsError> {
    let mut config = build_config(g)?;
    let mut text = Vec::new();
    match model {
        Some(ModelArg::Tfim) => text.push("model.kind=tfim".to_string()),
        Some(ModelArg::Toric) => text.push("model.kind=toric".to_string()),
        None => {}
    }
    if let Some(l) = side {
        text.push(format!("model.L={l}"));
    }
    if let Some(k) = kappa {
        text.push(format!("model.kappa={k}"));
    }
    if let Some(b) = boundary {
        text.push(format!("model.boundary={b}"));
    }
    config.apply_text(&text.join("\n"))?;
    let mut out = serde_json::Map::new();
    match config.model {
        nqs_core::ModelConfig::Toric { side } => {
            let s = toric_solution(side);
            out.insert("model".into(), "toric".into());
            out.insert("L".into(), side.into());
            out.insert("energy".into(), s.energy.into());
            out.insert("method".into(), format!("{:?}", s.method).to_lowercase().into());
            if dense {
                let h = config.hamiltonian()?;
                out.insert("dense_energy".into(), dense_ground_energy(&h)?.energy.into());
            }
        }
        nqs_core::ModelConfig::Tfim { side, boundary, kappa } => {
            let h = Hamiltonian::tfim(SquareLattice::new(side, boundary)?, kappa)?;
            let s = lanczos_ground_energy(&h, MAX_ENUMERATION_SITES)?;
            out.insert("model".into(), "tfim".into());
            out.insert("L".into(), side.into());
            out.insert("boundary".into(), boundary.to_string().into());
            out.insert("kappa".into(), kappa.into());
            out.insert("energy".into(), s.energy.into());
            out.insert("energy_per_spin".into(), (s.energy / h.n_sites() as f64).into());
            out.insert("method".into(), "lanczos".into());
            if dense {
                if h.n_sites() > MAX_DENSE_SITES {
                    return Err(NqsError::Capacity {
                        what: "dense diagonalization",
                        limit: MAX_DENSE_SITES,
                        requested: h.n_sites(),
                    });
                }
                out.insert("dense_energy".into(), dense_ground_energy(&h)?.energy.into());
            }
        }
    }
    print_json(&out)
}

fn dispatch(cli: Cli) -> Result<(), NqsError> {
    configure_threads(cli.global.threads)?;
    let g = &cli.global;
    match cli.command {
        Command::Prune => {
            let config = build_config(g)?;
            let dir = run_dir(&config, g);
            log::info!("run directory {}", dir.display());
            print_json(&experiment::run_pruning(&config, &dir)?)
        }
        Command::Ticket {
            from,
            variant,
            iteration,
            steps,
            init_source,
        } => {
            let run_config = load_run_config(&from)?;
            let ticket = TicketSection {
                variant,
                iteration,
                seed: g.seed.unwrap_or(run_config.sampler.seed),
                steps: steps.unwrap_or(run_config.prune.pretrain_steps),
                init_source,
            };
            let report = experiment::run_ticket(&from, &ticket)?;
            if let Some(dir) = &g.output_dir {
                fs::create_dir_all(dir)?;
                let name = format!("ticket_{variant}_iter{iteration:04}_seed{}.json", ticket.seed);
                fs::write(dir.join(name), serde_json::to_string_pretty(&report)?)?;
            }
            print_json(&report)
        }
        Command::Oracle {
            model,
            side,
            kappa,
            boundary,
            dense,
        } => oracle(g, model, side, kappa, boundary, dense),
        Command::Observe { checkpoint, from } => {
            let dir = from.or_else(|| {
                checkpoint
                    .parent()
                    .and_then(Path::parent)
                    .filter(|d| d.join(CONFIG_FILE).exists())
                    .map(Path::to_path_buf)
            });
            let mut config = match dir {
                Some(d) => load_run_config(&d)?,
                None => build_config(g)?,
            };
            if let Some(seed) = g.seed {
                config.sampler.seed = seed;
            }
            let state = Checkpoint::read(&checkpoint)?;
            print_json(&experiment::observe(&config, &state.ansatz)?)
        }
        Command::Export { from, out } => {
            let report = match out {
                Some(path) => experiment::export_curves(&from, fs::File::create(path)?)?,
                None => experiment::export_curves(&from, io::stdout().lock())?,
            };
            eprintln!("exported {} rows, skipped {} corrupt rows", report.rows, report.skipped);
            Ok(())
        }
        Command::Resume { from } => {
            let dir = from
                .or_else(|| g.output_dir.clone())
                .ok_or_else(|| NqsError::Config("resume needs --from or --output-dir".into()))?;
            print_json(&experiment::resume(&dir)?)
        }
        Command::Presets => {
            let mut out = io::stdout().lock();
            for name in PRESET_NAMES {
                if writeln!(out, "{name}").is_err() {
                    break;
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.global.log_level).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
