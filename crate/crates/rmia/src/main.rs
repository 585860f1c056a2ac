use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rmia::config::ExperimentConfig;
use rmia::error::{Error, Result};
use rmia::io::{load_model, load_tabular, load_vae, save_model, save_vae, write_dataset, write_jsonl};
use rmia::rmia_core::data::LabelRule;
use rmia::rmia_core::nn::Classifier;
use rmia::rmia_core::privacy::dp_ba_bound;
use rmia::rmia_core::recourse::{Method, RecourseResult};
use rmia::rmia_core::seed::derive;
use rmia::runner::{self, GameSample};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "rmia", version, about = "Membership inference from algorithmic recourse")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory. Defaults to the config's `out_dir`, then `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or load the configured data and write data.csv and scaler.json.
    GenData,
    /// Train the owner model (and VAE for cchvae) on the configured split.
    Train,
    /// Issue recourses for every negatively classified row of a CSV.
    Recourse {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "label")]
        label_column: String,
        /// VAE for cchvae recourse.
        #[arg(long)]
        vae: Option<PathBuf>,
    },
    /// Run CFD and CFD-LRT on a saved game without the owner model.
    Attack {
        #[arg(long)]
        game: PathBuf,
    },
    /// Full experiment: data, owner, game, shadows, attacks and reports.
    Run,
    /// Every point of the config's sweep grid.
    Sweep,
    /// Combine report.json files into one summary CSV.
    Summarize {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Balanced-accuracy bound of an epsilon-DP model, as CSV.
    DpBound {
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        epsilon: Vec<f64>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> Result<PathBuf> {
    let dir = cli.out.clone().or_else(|| cfg.and_then(|c| c.out_dir.clone())).unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build().map_err(|e| Error::Config(e.to_string()))
}

fn dispatch(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenData => {
            let cfg = load_config(&cli)?;
            let out = out_dir(&cli, Some(&cfg))?;
            let (data, scaler) = runner::load_data(&cfg)?;
            write_dataset(&out.join("data.csv"), &data)?;
            if let Some(s) = scaler {
                write_json(&out.join("scaler.json"), &s)?;
            }
            println!("wrote {} rows to {}", data.n(), out.join("data.csv").display());
        }
        Command::Train => {
            let cfg = load_config(&cli)?;
            let out = out_dir(&cli, Some(&cfg))?;
            let prep = pool(cli.workers)?.install(|| runner::prepare(&cfg))?;
            save_model(&out.join("model.json"), &prep.owner)?;
            if let Some(vae) = &prep.owner_vae {
                save_vae(&out.join("vae.json"), vae)?;
            }
            println!(
                "train accuracy {:.4}, test accuracy {:.4}, {}",
                prep.owner.meta.train_accuracy,
                prep.test_accuracy,
                out.join("model.json").display()
            );
        }
        Command::Recourse { model, data, label_column, vae } => {
            let cfg = load_config(&cli)?;
            let out = out_dir(&cli, Some(&cfg))?;
            let model = load_model(model)?;
            let vae = vae.as_deref().map(load_vae).transpose()?;
            if matches!(cfg.recourse.method, Method::Cchvae { .. }) && vae.is_none() {
                return Err(Error::Config("cchvae recourse needs --vae".into()));
            }
            let data = load_tabular(data, label_column, LabelRule::Binary)?;
            #[derive(Serialize)]
            struct Line {
                row: usize,
                recourse: RecourseResult,
            }
            let rows: Vec<usize> = (0..data.n()).filter(|&i| model.probability(data.row(i)) < 0.5).collect();
            let lines: Vec<Line> = pool(cli.workers)?.install(|| {
                use rayon::prelude::*;
                rows.par_iter()
                    .map(|&i| {
                        let r = cfg.recourse.generate(&model, vae.as_ref(), data.row(i), derive(cfg.seed, "recourse", i as u64));
                        r.map(|recourse| Line { row: i, recourse })
                    })
                    .collect::<rmia::rmia_core::Result<_>>()
                    .map_err(|source| Error::Stage { stage: "recourse", source })
            })?;
            write_jsonl(&out.join("recourses.jsonl"), &lines)?;
            println!("{} recourses written", lines.len());
        }
        Command::Attack { game } => {
            let cfg = load_config(&cli)?;
            let out = out_dir(&cli, Some(&cfg))?;
            let samples: Vec<GameSample> = rmia::io::read_jsonl(game)?;
            let result = runner::attack_game(&cfg, &samples, cli.workers)?;
            write_jsonl(&out.join("scores.jsonl"), &result.records)?;
            write_json(&out.join("attack.json"), &serde_json::json!({ "attacks": result.attacks, "shadows": result.shadows }))?;
            for a in &result.attacks {
                println!("{} {} auc {:.4}{}", a.attack.name(), a.direction.name(), a.metrics.auc, if a.selected { " (selected)" } else { "" });
            }
        }
        Command::Run => {
            let cfg = load_config(&cli)?;
            let out = out_dir(&cli, Some(&cfg))?;
            let result = runner::run_experiment(&cfg, cli.workers)?;
            runner::persist(&result, &out)?;
            print_summary(std::slice::from_ref(&result.report));
        }
        Command::Sweep => {
            let cfg = load_config(&cli)?;
            let out = out_dir(&cli, Some(&cfg))?;
            let reports = runner::run_sweep(&cfg, cli.workers, &out)?;
            print_summary(&reports);
        }
        Command::Summarize { reports } => {
            let out = out_dir(&cli, None)?;
            let loaded = reports.iter().map(|p| runner::read_report(p)).collect::<Result<Vec<_>>>()?;
            runner::emit_summary(&loaded, &out.join("summary.csv"))?;
            print_summary(&loaded);
        }
        Command::DpBound { epsilon } => {
            let mut text = String::from("epsilon,ba_bound,refined_ba_bound\n");
            for &e in epsilon {
                let b = dp_ba_bound(e).map_err(|err| Error::Config(format!("--epsilon: {err}")))?;
                text.push_str(&format!("{},{},{}\n", b.epsilon, b.ba_bound, b.refined_ba_bound));
            }
            match &cli.out {
                Some(dir) => {
                    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.clone(), source })?;
                    let p = dir.join("dp_bound.csv");
                    fs::write(&p, &text).map_err(|source| Error::Io { path: p, source })?;
                }
                None => {
                    let _ = std::io::stdout().write_all(text.as_bytes());
                }
            }
        }
    }
    Ok(())
}

fn print_summary(reports: &[runner::ExperimentReport]) {
    println!("{}", runner::SUMMARY_HEADER);
    for row in runner::summary_rows(reports) {
        println!("{row}");
    }
}
