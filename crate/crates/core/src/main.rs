use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dar_core::datasets::{self, Dataset};
use dar_core::harness::{
    self, compare, cost_report, export_features, load_params, run_experiment, write_atomic, write_run,
    ExperimentConfig, HarnessError,
};

#[derive(Parser)]
#[command(name = "dar", version, about = "Drop-and-Refresh sampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics.jsonl, report.json and model.bin.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        preset: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the dry-run schedule and its cost ratio without training.
    Cost {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        preset: Option<String>,
        /// Population size; defaults to the config's training set size.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train several configs on the same data and seed and tabulate them.
    Compare {
        #[arg(long, value_delimiter = ',', required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write penultimate-layer activations for a dataset as CSV.
    ExportFeatures {
        #[arg(long)]
        model: PathBuf,
        /// A .toml experiment config, a .csv dataset, or `images.idx,labels.idx`.
        #[arg(long)]
        data: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: &Path, preset: Option<&str>) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(p) = preset {
        cfg.apply_preset(p)?;
    }
    Ok(cfg)
}

fn load_data_arg(arg: &str) -> Result<Dataset, HarnessError> {
    if let Some((images, labels)) = arg.split_once(',') {
        return Ok(datasets::load_idx(images, labels)?);
    }
    let path = Path::new(arg);
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => ExperimentConfig::from_file(path)?.data.load(),
        _ => Ok(datasets::load_csv(path)?),
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train {
            config,
            preset,
            seed,
            out,
        } => {
            let mut cfg = load_config(&config, preset.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let outcome = run_experiment(&cfg)?;
            let r = &outcome.report;
            for rec in &r.records {
                let acc = rec
                    .validation_accuracy
                    .map_or("n/a".to_string(), |a| format!("{:.4}", a));
                println!(
                    "epoch {:>3}  active {:>7}  loss {:.5}  val_acc {}  lr {:.4e}  {}",
                    rec.epoch, rec.active_count, rec.mean_train_loss, acc, rec.learning_rate, rec.action
                );
            }
            println!(
                "final_accuracy={} cost_ratio={} planned_cost={}",
                r.final_validation_accuracy.map_or("n/a".to_string(), |a| a.to_string()),
                r.cost_ratio,
                r.planned_cost
            );
            if let Some(dir) = out.or(cfg.output.dir.clone()) {
                write_run(&outcome, &dir)?;
                println!("wrote {}", dir.display());
            }
        }
        Command::Cost { config, preset, n } => {
            let cfg = load_config(&config, preset.as_deref())?;
            print!("{}", cost_report(&cfg, n)?.render());
        }
        Command::Compare { configs, out } => {
            let cfgs = configs
                .iter()
                .map(ExperimentConfig::from_file)
                .collect::<Result<Vec<_>, _>>()?;
            let (table, outcomes) = compare(&cfgs)?;
            print!("{table}");
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir).map_err(|source| HarnessError::Io {
                    path: dir.clone(),
                    source,
                })?;
                let json = serde_json::to_string_pretty(&table).expect("table serializes");
                write_atomic(&dir.join("compare.json"), json.as_bytes())?;
                for (i, o) in outcomes.iter().enumerate() {
                    write_run(o, &dir.join(format!("{i}-{}", o.report.config.label())))?;
                }
            }
        }
        Command::ExportFeatures { model, data, out } => {
            let params = load_params(&model)?;
            let ds = load_data_arg(&data)?;
            export_features(&params, &ds, &out)?;
            println!("wrote {} rows to {}", ds.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": harness_kind(&e), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::from(1)
        }
    }
}

fn harness_kind(e: &HarnessError) -> &'static str {
    harness::HarnessError::kind(e)
}
