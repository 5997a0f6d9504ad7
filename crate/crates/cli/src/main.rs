use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use emgrank::pipeline::{self, RunConfig};
use emgrank::{Error, Exec};

// Write errors on stdout (a closed pipe) are ignored.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "emgrank", version, about = "EMG spectral feature ranking by iterative tree elimination")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for grid search and featurization.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Baseline-correct, band-limit and notch-filter a directory of recordings.
    Preprocess { input: Option<PathBuf> },
    /// Welch PSD features for a recordings directory with trials.csv.
    Featurize { input: Option<PathBuf> },
    /// Iterative elimination over a feature CSV.
    Run {
        input: Option<PathBuf>,
        /// Continue after the last complete record in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Rank features over the best trees of a run.
    Rank { run: PathBuf },
    /// Normality tests and regressions over a run's scores.
    Report { run: PathBuf },
    /// Write a synthetic dataset.
    Synth,
}

fn execute(cli: Cli) -> Result<(), Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.output = Some(o);
    }
    if cli.jobs == Some(0) {
        return Err(Error::Config("--jobs must be >= 1".into()));
    }
    let exec = Exec { jobs: cli.jobs };
    match cli.command {
        Command::Preprocess { input } => {
            cfg.input = input.or(cfg.input);
            let m = pipeline::cmd_preprocess(&cfg, &exec)?;
            out!("preprocessed {} trials", m.files.len());
        }
        Command::Featurize { input } => {
            cfg.input = input.or(cfg.input);
            let t = pipeline::cmd_featurize(&cfg, &exec)?;
            out!("{} trials x {} features", t.n_rows(), t.n_features());
        }
        Command::Run { input, resume } => {
            cfg.input = input.or(cfg.input);
            let run = pipeline::cmd_run(&cfg, &exec, resume)?;
            if let Some(best) = run.records.iter().max_by(|a, b| {
                a.mean_f1.total_cmp(&b.mean_f1).then(b.iteration.cmp(&a.iteration))
            }) {
                out!(
                    "{} records; best mean F1 {:.4} at iteration {} ({} features)",
                    run.records.len(),
                    best.mean_f1,
                    best.iteration,
                    best.n_features
                );
            }
        }
        Command::Rank { run } => {
            let r = pipeline::cmd_rank(&cfg, &run)?;
            let h = &r.histogram;
            out!(
                "{} trees ranked; rank 0: {}, (0,1): {}, [1,3]: {}, >3: {}",
                r.n_ranked_trees, h.zero, h.below_one, h.one_to_three, h.above_three
            );
            for t in &r.top {
                out!("{:>3}  {:<12} {:.4}", t.position, t.feature, t.rank_value);
            }
        }
        Command::Report { run } => {
            let r = pipeline::cmd_report(&cfg, &run)?;
            let s = &r.stats.scores;
            out!(
                "{} trees; best mean F1 {:.4} (iteration {}), median {:.4}",
                s.n_trees, s.best_mean_f1, s.best_iteration, s.median_mean_f1
            );
            for n in &r.stats.normality {
                out!(
                    "{:?}: statistic {:.4}, p {:.4}, reject at 5%: {}",
                    n.test,
                    n.statistic,
                    n.p_value.unwrap_or(f64::NAN),
                    n.reject_at_5pct
                );
            }
            for note in &r.stats.notes {
                out!("note: {note}");
            }
            if let Some(c) = &r.reference {
                out!("                 this run   published");
                out!("best mean F1     {:>8.4}   {:>9.4}", c.best_mean_f1.0, c.best_mean_f1.1);
                out!("median mean F1   {:>8.4}   {:>9.4}", c.median_mean_f1.0, c.median_mean_f1.1);
                out!("rank = 0         {:>8}   {:>9}", c.rank_zero.0, c.rank_zero.1);
                out!("rank in (0,1)    {:>8}   {:>9}", c.rank_below_one.0, c.rank_below_one.1);
                out!("rank > 3         {:>8}   {:>9}", c.rank_above_three.0, c.rank_above_three.1);
            }
        }
        Command::Synth => {
            let t = pipeline::cmd_synth(&cfg, &exec)?;
            out!("{} trials x {} features", t.n_rows(), t.n_features());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EMGRANK_LOG", "info"))
        .format_timestamp(None)
        .init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {msg}", e.category());
            ExitCode::from(match e.category() {
                "config" | "invalid_input" => 2,
                _ => 1,
            })
        }
    }
}
