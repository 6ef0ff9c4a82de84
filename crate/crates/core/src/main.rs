use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ivmkit::experiment::{self, ExperimentConfig, ModeSetting, ModelChoice};
use ivmkit::Error;

#[derive(Parser)]
#[command(name = "ivmkit", version, about = "Crash-risk models from loop-detector data: IVM vs SVM")]
struct Cli {
    /// Experiment manifest (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the manifest seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Ivm,
    Svm,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Exact,
    Onestep,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic case-control dataset and its ground truth.
    Simulate,
    /// Rank the 27 features with a random forest and pick the top k.
    Select,
    /// Fit the IVM and/or the SVMs on the training split.
    Train {
        #[arg(long, value_enum, default_value = "both")]
        model: ModelArg,
        /// Forces the IVM candidate-scoring mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Score saved models on the test split.
    Evaluate {
        /// Model files; defaults to every model in the output directory.
        models: Vec<PathBuf>,
    },
    /// Run simulate, select, train and evaluate end to end.
    Reproduce {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Data(_)
        | Error::Format { .. }
        | Error::Csv(_)
        | Error::Insufficient(_)
        | Error::DegenerateLabels { .. }
        | Error::Empty(_)
        | Error::Stratification { .. } => 3,
        Error::Singular { .. } | Error::AllCandidatesFailed(_) | Error::Candidate { .. } | Error::NotConverged(_) => 4,
        _ => 1,
    }
}

fn apply_mode(cfg: &mut ExperimentConfig, mode: Option<ModeArg>) {
    if let Some(m) = mode {
        cfg.ivm.mode = match m {
            ModeArg::Exact => ModeSetting::Exact,
            ModeArg::Onestep => ModeSetting::Onestep,
        };
    }
}

fn run(cli: Cli) -> ivmkit::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    match cli.command {
        Command::Simulate => {
            for p in experiment::cmd_simulate(&cfg)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Select => {
            let sel = experiment::cmd_select(&cfg)?;
            println!("oob error {:.4}", sel.oob.error);
            println!("selected: {}", sel.selected.join(", "));
            if sel.short {
                println!("warning: fewer than k features passed the correlation filter");
            }
        }
        Command::Train { model, mode } => {
            apply_mode(&mut cfg, mode);
            let choice = match model {
                ModelArg::Ivm => ModelChoice::Ivm,
                ModelArg::Svm => ModelChoice::Svm,
                ModelArg::Both => ModelChoice::Both,
            };
            let t = experiment::cmd_train(&cfg, choice)?;
            println!("features: {}", t.features.join(", "));
            for (name, m) in t.models() {
                println!("{name}: {} vectors", m.n_vectors());
            }
        }
        Command::Evaluate { models } => {
            let ev = experiment::cmd_evaluate(&cfg, &models)?;
            print_curves(&ev);
        }
        Command::Reproduce { mode } => {
            apply_mode(&mut cfg, mode);
            let r = experiment::cmd_reproduce(&cfg)?;
            println!("train {} / test {} observations", r.n_train, r.n_test);
            println!("features: {}", r.training.features.join(", "));
            print_curves(&r.evaluation);
            println!("outputs in {}", cfg.out.display());
        }
    }
    Ok(())
}

fn print_curves(ev: &experiment::Evaluation) {
    println!("{:<12} {:>8} {:>10} {:>10}", "model", "vectors", "train_auc", "test_auc");
    for (name, _) in &ev.curves {
        if let Some(r) = ev.rows.iter().find(|r| &r.model == name) {
            println!("{:<12} {:>8} {:>10.4} {:>10.4}", name, r.n_vectors, r.train_auc, r.test_auc);
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
