use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dafd::net::{Arch, Mode};
use dafd::theory::{Check, SweepConfig};
use dafd_cli::commands::{compare, cost, train, verify};
use dafd_cli::{CliError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "dafd", version, about = "Domain-adaptive filter decomposition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Config file (key = value lines with [section] headers).
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for data-parallel evaluation.
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    target_fraction: Option<f64>,
    /// supervised-both or unsupervised-target.
    #[arg(long)]
    mode: Option<String>,
    /// Atoms per decomposed layer.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one architecture on the source/target task.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Train every (arch, fraction, seed) in [compare] and tabulate.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Run a bound verification sweep.
    Verify {
        #[command(flatten)]
        common: Common,
        /// lemma1, nonexpansive, fact1, norm-drift, theorem1 or atom-implementability.
        #[arg(long)]
        check: Option<String>,
    },
    /// Parameter and flop cost of one additional domain.
    Cost {
        #[command(flatten)]
        common: Common,
        /// vgg16 or toy.
        #[arg(long)]
        preset: Option<String>,
        /// Layer file with one `c_in c_out l width [k]` line per layer.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        k: Option<u64>,
        #[arg(long)]
        domains: Option<u64>,
    },
}

fn cfg_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn load(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.run.seed = s;
    }
    if let Some(t) = common.threads {
        cfg.run.threads = t;
    }
    if let Some(o) = &common.out {
        cfg.run.out = Some(o.clone());
    }
    Ok(cfg)
}

fn apply_train(cfg: &mut RunConfig, a: &TrainArgs) -> Result<(), CliError> {
    if let Some(s) = &a.arch {
        cfg.model.arch = Arch::parse(s).map_err(cfg_err)?;
        cfg.compare.archs = vec![cfg.model.arch];
    }
    if let Some(f) = a.target_fraction {
        cfg.train.target_fraction = f;
        cfg.compare.fractions = vec![f];
    }
    if let Some(m) = &a.mode {
        cfg.train.mode = Mode::parse(m).map_err(cfg_err)?;
    }
    if let Some(k) = a.k {
        cfg.model.k = k;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    Ok(())
}

fn out_dir(cfg: &RunConfig, command: &str) -> PathBuf {
    cfg.run.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command))
}

fn setup_threads(cfg: &RunConfig) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.threads)
        .build_global()
        .map_err(cfg_err)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { common, args } => {
            let mut cfg = load(&common)?;
            apply_train(&mut cfg, &args)?;
            cfg.validate().map_err(cfg_err)?;
            setup_threads(&cfg)?;
            let out = out_dir(&cfg, "train");
            let r = train::run_train(&cfg, &out, common.quiet)?;
            if !common.quiet {
                println!(
                    "{} {}: source_acc {:.4} target_acc {:.4} ({})",
                    r.arch,
                    r.mode,
                    r.source_acc,
                    r.target_acc,
                    out.display()
                );
            }
        }
        Command::Compare { common, args } => {
            let mut cfg = load(&common)?;
            apply_train(&mut cfg, &args)?;
            if let Some(s) = common.seed {
                cfg.compare.seeds = vec![s];
            }
            cfg.validate().map_err(cfg_err)?;
            setup_threads(&cfg)?;
            compare::run_compare(&cfg, &out_dir(&cfg, "compare"), common.quiet)?;
        }
        Command::Verify { common, check } => {
            let mut cfg = load(&common)?;
            if let Some(c) = check {
                let check = Check::parse(&c).map_err(cfg_err)?;
                if check != cfg.verify.check {
                    cfg.verify = SweepConfig::default_for(check);
                }
            }
            cfg.validate().map_err(cfg_err)?;
            setup_threads(&cfg)?;
            verify::run_verify(&cfg, &out_dir(&cfg, "verify"), common.quiet)?;
        }
        Command::Cost {
            common,
            preset,
            spec,
            k,
            domains,
        } => {
            let mut cfg = load(&common)?;
            if let Some(p) = preset {
                cfg.cost.preset = p;
            }
            if spec.is_some() {
                cfg.cost.spec_file = spec;
            }
            if let Some(k) = k {
                cfg.cost.k = k;
            }
            if let Some(d) = domains {
                cfg.cost.domains = d;
            }
            cfg.validate().map_err(cfg_err)?;
            cost::run_cost(&cfg, cfg.run.out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
