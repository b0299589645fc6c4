//! Command-line surface: train, attack, verify, probe, sweep, report.

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use fragilemark::config::ExperimentConfig;
use fragilemark::eval::Thresholds;
use fragilemark::pipeline;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fragilemark",
    about = "Embed trigger-based fragile watermarks in image-to-image models, attack them, and evaluate fidelity / retrievability / fragility",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment config (TOML)
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory (defaults to the config's output_dir, then runs/<name>)
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the plain baseline and the watermarked model
    Train(ConfigArgs),
    /// Run the configured attacks against a trained run directory
    Attack {
        /// Run directory produced by `train`
        #[arg(short, long)]
        run: PathBuf,
        /// Restrict to one attack (e.g. ftune1, ftune5, overwrite)
        #[arg(long)]
        only: Option<String>,
    },
    /// Verify a checkpoint against a trigger manifest (exit 0 = verified,
    /// 1 = not verified, 2 = error)
    Verify {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Retrievability NCC threshold
        #[arg(long, default_value_t = 0.95)]
        ncc_threshold: f64,
    },
    /// Score the fake-trigger grid against a trained run
    Probe {
        #[arg(short, long)]
        run: PathBuf,
    },
    /// Train one model per embedding strength and tabulate the results
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated embedding strengths, e.g. 0.0,0.2,1.0
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
    },
    /// Render results.json / results.csv and the image grid for a run
    Report {
        #[arg(short, long)]
        run: PathBuf,
    },
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Train(args) => {
            let cfg = ExperimentConfig::load(&args.config)?;
            let run_dir = pipeline::resolve_run_dir(&cfg, args.out.as_deref());
            let stage = pipeline::run_train(&cfg, &config_dir(&args.config), &run_dir)
                .with_context(|| format!("training into {}", run_dir.display()))?;
            let m = &stage.metrics;
            println!("run directory: {}", run_dir.display());
            println!(
                "fidelity: plain {} vs watermarked {} (gap {:.6}) -> {}",
                fmt_metrics(&m.fidelity.plain),
                fmt_metrics(&m.fidelity.watermarked),
                m.fidelity.gap,
                pass(m.fidelity.pass)
            );
            println!(
                "retrievability: NCC {:.4} over {} pairs -> {}",
                m.retrievability.ncc,
                m.retrievability.pairs,
                pass(m.retrievability.verified)
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Attack { run, only } => {
            let stage = pipeline::run_attacks(&run, only.as_deref())?;
            for (name, record) in &stage.metrics.attacks {
                let f = &record.fragility;
                print!(
                    "{name}: NCC {:.4}, clean {:.6} (ok: {}) -> fragility {}",
                    f.ncc,
                    f.attacked_clean,
                    f.clean_ok,
                    pass(f.pass)
                );
                if let Some(d) = record.duality_ncc {
                    print!(", new watermark NCC {d:.4}");
                }
                println!();
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            checkpoint,
            manifest,
            ncc_threshold,
        } => {
            let thresholds = Thresholds {
                ncc_retrieve: ncc_threshold,
                ..Thresholds::default()
            };
            let outcome = pipeline::run_verify(&checkpoint, &manifest, &thresholds)?;
            println!(
                "NCC {:.4} over {} pairs (threshold {}): {}",
                outcome.ncc,
                outcome.pairs,
                ncc_threshold,
                if outcome.verified { "verified" } else { "not verified" }
            );
            Ok(if outcome.verified {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Probe { run } => {
            let table = pipeline::run_probe(&run)?;
            println!("{:<10} {:<14} {:>8}  retrieved", "color", "location", "ncc");
            for row in &table.fakes {
                println!(
                    "{:<10} {:<14} {:>8.4}  {}",
                    row.color, row.location, row.ncc, row.retrieved
                );
            }
            let t = &table.true_trigger;
            println!(
                "{:<10} {:<14} {:>8.4}  {} (true trigger)",
                t.color, t.location, t.ncc, t.retrieved
            );
            println!("secure against fake triggers: {}", table.secure);
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config, alphas } => {
            anyhow::ensure!(!alphas.is_empty(), "--alphas must list at least one value");
            let cfg = ExperimentConfig::load(&config.config)?;
            let run_dir = pipeline::resolve_run_dir(&cfg, config.out.as_deref());
            let rows =
                pipeline::run_sweep(&cfg, &config_dir(&config.config), &alphas, &run_dir)?;
            println!("{:>6} {:>10}  retr  attacks", "alpha", "ncc");
            for row in &rows {
                let attacks: Vec<String> = row
                    .attacks
                    .iter()
                    .map(|a| format!("{}={:.4}", a.name, a.ncc))
                    .collect();
                println!(
                    "{:>6} {:>10.4}  {}  {}",
                    row.alpha,
                    row.retrievability_ncc,
                    pass(row.retrievable),
                    if attacks.is_empty() {
                        "-".to_string()
                    } else {
                        attacks.join(" ")
                    }
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { run } => {
            let results = pipeline::run_report(&run)?;
            for row in &results.rows {
                println!(
                    "{} / {} / {}: fidelity {}, retrievability {}, fragility {}",
                    row.dataset,
                    row.model,
                    row.scheme,
                    pass(row.verdicts.fidelity),
                    pass(row.verdicts.retrievability),
                    pass(row.verdicts.fragility)
                );
            }
            println!("wrote results.json, results.csv and grids/ in {}", run.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn fmt_metrics(m: &fragilemark::eval::TaskMetrics) -> String {
    match (m.mse, m.psnr, m.iou) {
        (Some(mse), Some(psnr), _) => format!("mse {mse:.6} / psnr {psnr:.2}"),
        (_, _, Some(iou)) => format!("iou {iou:.4}"),
        _ => "n/a".into(),
    }
}

fn pass(v: bool) -> &'static str {
    if v {
        "pass"
    } else {
        "fail"
    }
}
