use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use saliency_lab::experiment::{
    cmd_bias_variance, cmd_report, cmd_sweep_sigma, cmd_train_splits, cmd_verify_bounds, render_table,
    ExperimentConfig, RenderFormat,
};
use saliency_lab::Result;

#[derive(Parser)]
#[command(name = "saliency-lab", version, about = "Saliency stability and fidelity experiments")]
struct Cli {
    /// Re-key every seed in the config from this root.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Split the data and train one network per split.
    TrainSplits(RunArgs),
    /// Sweep σ for every method over the first two trained networks.
    SweepSigma(RunArgs),
    /// Run the bound property suites; exits with 2 on any violation.
    VerifyBounds {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trials per suite.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Bias-variance split and generalization gap over all split networks.
    BiasVariance(RunArgs),
    /// Render plot data and the summary table from a report.
    Report {
        /// `report.json` or `report.csv`
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0.15)]
        table_sigma_ratio: f64,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.override_seed(s);
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| cfg.output.dir.clone())
}

fn run(cli: Cli) -> Result<ExitCode> {
    let seed = cli.seed_override;
    match cli.command {
        Command::TrainSplits(a) => {
            let cfg = load(&a.config, seed)?;
            let out = out_dir(&cfg, a.out);
            for s in cmd_train_splits(&cfg, &out)? {
                println!(
                    "split {}: {} samples, final loss {:.4}, train acc {:.3}, eval acc {:.3}",
                    s.split,
                    s.indices.len(),
                    s.final_loss,
                    s.train_accuracy,
                    s.eval_accuracy
                );
            }
            println!("models written to {}", out.join("models").display());
        }
        Command::SweepSigma(a) => {
            let cfg = load(&a.config, seed)?;
            let out = out_dir(&cfg, a.out);
            let rep = cmd_sweep_sigma(&cfg, &out)?;
            println!("{:<16} {:>7} {:>10} {:>10} {:>12} {:>12}", "method", "ratio", "stability", "fidelity", "stab bound", "fid bound");
            for r in rep.rows() {
                let b = |v: Option<f64>| v.map_or("-".into(), |x| format!("{x:.4e}"));
                println!(
                    "{:<16} {:>7.3} {:>10.5} {:>10.5} {:>12} {:>12}",
                    r.method,
                    r.sigma_ratio,
                    r.stability,
                    r.fidelity,
                    b(r.stability_bound),
                    b(r.fidelity_bound)
                );
            }
            println!("report written to {}", out.join("report.json").display());
        }
        Command::VerifyBounds { config, out, trials } => {
            let mut cfg = match &config {
                Some(p) => load(p, seed)?,
                None => {
                    let mut c: ExperimentConfig = toml::from_str(include_str!("../configs/reference.toml"))?;
                    if let Some(s) = seed {
                        c.override_seed(s);
                    }
                    c
                }
            };
            if let Some(t) = trials {
                cfg.verify.trials = t;
            }
            let out = out.unwrap_or_else(|| cfg.output.dir.clone());
            let rep = cmd_verify_bounds(&cfg, &out)?;
            for s in &rep.suites {
                let tag = if s.negative_control { " (negative control)" } else { "" };
                println!(
                    "{:<40} trials {:>5}  violations {:>5}  max ratio {:.4}{}",
                    s.name, s.trials, s.violations, s.max_ratio, tag
                );
            }
            if !rep.clean() {
                eprintln!("property violations found");
                return Ok(ExitCode::from(2));
            }
        }
        Command::BiasVariance(a) => {
            let cfg = load(&a.config, seed)?;
            let out = out_dir(&cfg, a.out);
            let rep = cmd_bias_variance(&cfg, &out)?;
            for r in &rep.rows {
                println!(
                    "{:<16} {:>7.3} fidelity {:>10.5} variance {:>10.5} gap {}",
                    r.method,
                    r.sigma_ratio,
                    r.avg_fidelity,
                    r.avg_variance,
                    r.generalization_gap.map_or("-".into(), |g| format!("{g:.5}"))
                );
            }
        }
        Command::Report {
            report,
            format,
            out,
            table_sigma_ratio,
        } => {
            let out = out.unwrap_or_else(|| report.parent().unwrap_or(Path::new(".")).to_path_buf());
            let fmt = match format {
                Format::Csv => RenderFormat::Csv,
                Format::Json => RenderFormat::Json,
            };
            let rendered = cmd_report(&report, fmt, table_sigma_ratio, &out)?;
            print!("{}", render_table(&rendered.table));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
