//! `clap-lab` command line: data generation, training, evaluation and
//! interpretation reports.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use candle_core::DType;
use clap::{Parser, Subcommand, ValueEnum};
use clap_lab::evalkit::{bayes_optimal_accuracy, evaluate};
use clap_lab::experiment::{resolve_data_path, ExperimentConfig, DATA_DIR_ENV};
use clap_lab::interpret::{
    annotate, grid_image, render_report, save_png, traverse_with, TraversalConfig, REPORT_FILE,
};
use clap_lab::model::{load_checkpoint, ClapModel};
use clap_lab::synthgen::{sample_dataset, validate_assumptions, LabeledDataset, MixingFunction};
use clap_lab::trainer::{resume, train, FINAL_CHECKPOINT};
use clap_lab::Error;

/// Rows drawn for the Bayes-accuracy reference in `eval`.
const BAYES_ROWS: usize = 20_000;

#[derive(Parser)]
#[command(
    name = "clap-lab",
    version,
    about = "Concept-learning dual VAE experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Clap,
    #[value(name = "p_only")]
    POnly,
    #[value(name = "no_sparsity")]
    NoSparsity,
    #[value(name = "single_label")]
    SingleLabel,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Clap => "clap",
            Mode::POnly => "p_only",
            Mode::NoSparsity => "no_sparsity",
            Mode::SingleLabel => "single_label",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset from the configured generative spec.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Output dataset directory (defaults to the config's `dataset`).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a model; writes `model.tar` and `metrics.jsonl` to the output dir.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        label_index: Option<usize>,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from this checkpoint instead of a fresh model.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Print an evaluation report as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Supplies the dataset path and, for linear specs, the Bayes reference.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a traversal grid for one instance.
    Traverse {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        instance: usize,
        /// Dims to sweep; defaults to the active core columns.
        #[arg(long = "dim")]
        dims: Vec<usize>,
        #[arg(long, default_value_t = 7)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write traversal grids and `report.json` for the selected instances.
    Report {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        instances: Vec<usize>,
        /// Also write pixel-difference highlight grids.
        #[arg(long)]
        highlight: bool,
    },
    /// Name the concept of a traversed dim in a report.
    Annotate {
        /// `report.json` or the directory holding it.
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        label: String,
    },
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

type CmdResult<T> = Result<T, Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

/// Library errors caused by bad inputs are usage errors; the rest are
/// runtime failures.
fn classify(e: Error) -> Failure {
    match e {
        Error::InvalidSpec(_)
        | Error::InvalidArgument(_)
        | Error::UnknownName { .. }
        | Error::Json(_)
        | Error::DimMismatch(_)
        | Error::Shape(_)
        | Error::InvalidLabel(_) => Failure::Usage(e.into()),
        _ => Failure::Runtime(e.into()),
    }
}

trait OrFail<T> {
    fn or_fail(self) -> CmdResult<T>;
}

impl<T> OrFail<T> for clap_lab::Result<T> {
    fn or_fail(self) -> CmdResult<T> {
        self.map_err(classify)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn data_root() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

fn load_config(path: &Path, seed: Option<u64>) -> CmdResult<ExperimentConfig> {
    if !path.is_file() {
        return Err(usage(anyhow!("config file {} not found", path.display())));
    }
    let mut cfg =
        ExperimentConfig::load(path).map_err(|e| usage(anyhow!("{}: {e}", path.display())))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_dataset(dir: &Path) -> CmdResult<LabeledDataset> {
    if !dir.is_dir() {
        return Err(usage(anyhow!(
            "dataset directory {} not found",
            dir.display()
        )));
    }
    LabeledDataset::load(dir).map_err(|e| usage(anyhow!("{}: {e}", dir.display())))
}

fn load_model(path: &Path) -> CmdResult<ClapModel> {
    if !path.is_file() {
        return Err(usage(anyhow!("checkpoint {} not found", path.display())));
    }
    load_checkpoint(path, DType::F32)
        .map(|(m, _, _)| m)
        .map_err(classify)
}

fn run(cmd: Command) -> CmdResult<()> {
    let root = data_root();
    match cmd {
        Command::GenData {
            config,
            seed,
            out,
            n,
        } => {
            let cfg = load_config(&config, seed)?;
            let spec = cfg
                .resolve_spec()
                .or_fail()?
                .ok_or_else(|| usage(anyhow!("config has no `spec`")))?;
            let n = n
                .or(cfg.n)
                .ok_or_else(|| usage(anyhow!("row count missing: pass --n or set `n`")))?;
            if n == 0 {
                return Err(usage(anyhow!("--n must be at least 1")));
            }
            let dir = out
                .map(|p| resolve_data_path(&p, root.as_deref()))
                .or_else(|| cfg.dataset_dir(root.as_deref()))
                .ok_or_else(|| {
                    usage(anyhow!("no output directory: pass --out or set `dataset`"))
                })?;
            let report = validate_assumptions(&spec).or_fail()?;
            for line in report.lines() {
                println!("{line}");
            }
            if !report.heterogeneity.passed {
                eprintln!("warning: ASSUMPTION_1.2: FAIL; sampling anyway");
            }
            let data = sample_dataset(&spec, n, cfg.seed).or_fail()?;
            data.save(&dir).or_fail()?;
            println!("wrote {} rows to {}", data.len(), dir.display());
            Ok(())
        }
        Command::Train {
            config,
            seed,
            out,
            dataset,
            mode,
            label_index,
            steps,
            resume: from,
        } => {
            let mut cfg = load_config(&config, seed)?;
            if let Some(o) = out {
                cfg.out = Some(o);
            }
            let out = cfg
                .out
                .clone()
                .ok_or_else(|| usage(anyhow!("no output directory: pass --out or set `out`")))?;
            let dir = dataset
                .map(|p| resolve_data_path(&p, root.as_deref()))
                .or_else(|| cfg.dataset_dir(root.as_deref()))
                .ok_or_else(|| usage(anyhow!("no dataset: pass --dataset or set `dataset`")))?;
            let data = load_dataset(&dir)?;
            let kind = cfg.kind_for(&data.manifest);
            let mut tc = cfg.train_config(&kind).or_fail()?;
            if let Some(m) = mode {
                tc.mode = m.name().into();
            }
            if label_index.is_some() {
                tc.label_index = label_index;
            }
            if let Some(s) = steps {
                tc.steps = s;
            }
            tc.validate().or_fail()?;
            tc.mode().or_fail()?;
            let outcome = match from {
                Some(ckpt) => {
                    if !ckpt.is_file() {
                        return Err(usage(anyhow!("checkpoint {} not found", ckpt.display())));
                    }
                    resume(&ckpt, &data, Some(&tc), Some(&out)).or_fail()?.1
                }
                None => {
                    // single-label runs see a one-column label matrix
                    let seen = tc.mode().or_fail()?.prepare(&data).or_fail()?;
                    let mc = cfg.model_config(&kind, &seen.manifest).or_fail()?;
                    let mut model = ClapModel::new(mc, DType::F32).or_fail()?;
                    train(&mut model, &data, &tc, Some(&out)).or_fail()?
                }
            };
            let resolved = out.join("config.json");
            let body = serde_json::to_vec_pretty(&cfg).map_err(|e| Failure::Runtime(e.into()))?;
            std::fs::write(&resolved, body)
                .with_context(|| format!("writing {}", resolved.display()))
                .map_err(Failure::Runtime)?;
            println!(
                "trained {} steps; checkpoint {}",
                outcome.final_step,
                out.join(FINAL_CHECKPOINT).display()
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            dataset,
            config,
            seed,
            out,
        } => {
            let cfg = config
                .as_deref()
                .map(|c| load_config(c, seed))
                .transpose()?;
            let dir = dataset
                .map(|p| resolve_data_path(&p, root.as_deref()))
                .or_else(|| cfg.as_ref().and_then(|c| c.dataset_dir(root.as_deref())))
                .ok_or_else(|| {
                    usage(anyhow!(
                        "no dataset: pass --dataset or a config with `dataset`"
                    ))
                })?;
            let data = load_dataset(&dir)?;
            let model = load_model(&checkpoint)?;
            let bayes = match &cfg {
                Some(c) => match c.resolve_spec().or_fail()? {
                    Some(spec) if matches!(spec.mixing, MixingFunction::Linear { .. }) => {
                        Some(bayes_optimal_accuracy(&spec, BAYES_ROWS, c.seed).or_fail()?)
                    }
                    _ => None,
                },
                None => None,
            };
            let report = evaluate(&model, &data, bayes).or_fail()?;
            let text =
                serde_json::to_string_pretty(&report).map_err(|e| Failure::Runtime(e.into()))?;
            println!("{text}");
            if let Some(p) = out {
                std::fs::write(&p, &text)
                    .with_context(|| format!("writing {}", p.display()))
                    .map_err(Failure::Runtime)?;
            }
            Ok(())
        }
        Command::Traverse {
            checkpoint,
            dataset,
            instance,
            dims,
            steps,
            out,
        } => {
            let data = load_dataset(&resolve_data_path(&dataset, root.as_deref()))?;
            let model = load_model(&checkpoint)?;
            if instance >= data.len() {
                return Err(usage(anyhow!(
                    "instance {instance} out of range ({} rows)",
                    data.len()
                )));
            }
            let tcfg = TraversalConfig {
                dims: (!dims.is_empty()).then_some(dims),
                steps,
                ..TraversalConfig::default()
            };
            let x: Vec<f32> = data.x.row(instance).to_vec();
            let strips = traverse_with(&model, &x, &tcfg, &data).or_fail()?;
            std::fs::create_dir_all(&out)
                .with_context(|| format!("creating {}", out.display()))
                .map_err(Failure::Runtime)?;
            let d = model.dims();
            let path = out.join(format!("traversal_{instance:06}.png"));
            save_png(&grid_image(&strips, d.image_shape, d.obs_dim), &path).or_fail()?;
            let swept: Vec<usize> = strips.iter().map(|s| s.dim).collect();
            println!(
                "{}",
                serde_json::json!({ "grid": path, "dims": swept, "values": strips.iter().map(|s| &s.values).collect::<Vec<_>>() })
            );
            Ok(())
        }
        Command::Report {
            checkpoint,
            dataset,
            out,
            instances,
            highlight,
        } => {
            let data = load_dataset(&resolve_data_path(&dataset, root.as_deref()))?;
            let model = load_model(&checkpoint)?;
            let report = render_report(
                &model,
                &data,
                &instances,
                &TraversalConfig::default(),
                &out,
                highlight,
            )
            .or_fail()?;
            println!(
                "wrote {} grid(s) and {}",
                report.instances.len(),
                out.join(REPORT_FILE).display()
            );
            Ok(())
        }
        Command::Annotate { report, dim, label } => {
            let path = if report.is_dir() {
                report.join(REPORT_FILE)
            } else {
                report
            };
            if !path.is_file() {
                return Err(usage(anyhow!("report {} not found", path.display())));
            }
            annotate(&path, dim, &label).or_fail()?;
            println!("dim {dim} labelled {label:?}");
            Ok(())
        }
    }
}
