use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use mixlab::runner::{self, parse_overrides, RunConfig, SweepAxis, SweepConfig};
use mixlab::Error;

#[derive(Parser)]
#[command(name = "mixlab", version, about = "Class-dependency experiments for mixed sample data augmentation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

/// Flags mirroring the most used config keys.
#[derive(Args, Default)]
struct RunFlags {
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    dropmix_rate: Option<f64>,
    #[arg(long)]
    granularity: Option<String>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    decay_epochs: Option<Vec<usize>>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    n_train_per_class: Option<usize>,
    #[arg(long)]
    n_eval_per_class: Option<usize>,
    #[arg(long)]
    overlap: Option<f64>,
    #[arg(long)]
    label_noise: Option<f64>,
    #[arg(long)]
    train_path: Option<PathBuf>,
    #[arg(long)]
    eval_path: Option<PathBuf>,
}

fn list<T: ToString>(v: &[T]) -> String {
    format!("[{}]", v.iter().map(T::to_string).collect::<Vec<_>>().join(", "))
}

impl RunFlags {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut o = Vec::new();
        let mut push = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.push((k.to_string(), v));
            }
        };
        let quote = |s: &str| format!("{s:?}");
        push("method", self.method.as_deref().map(quote));
        push("alpha", self.alpha.map(|v| format!("{v:?}")));
        push("dropmix_rate", self.dropmix_rate.map(|v| format!("{v:?}")));
        push("granularity", self.granularity.as_deref().map(quote));
        push("seeds", self.seeds.as_deref().map(list));
        push("data_seed", self.data_seed.map(|v| v.to_string()));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("decay_epochs", self.decay_epochs.as_deref().map(list));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("learning_rate", self.learning_rate.map(|v| format!("{v:?}")));
        push("hidden", self.hidden.as_deref().map(list));
        push("n_train_per_class", self.n_train_per_class.map(|v| v.to_string()));
        push("n_eval_per_class", self.n_eval_per_class.map(|v| v.to_string()));
        push("overlap", self.overlap.map(|v| format!("{v:?}")));
        push("label_noise", self.label_noise.map(|v| format!("{v:?}")));
        push("train_path", self.train_path.as_ref().map(|p| quote(&p.to_string_lossy())));
        push("eval_path", self.eval_path.as_ref().map(|p| quote(&p.to_string_lossy())));
        o
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the engineered dataset (or convert CIFAR binaries) to .mxds.
    GenData {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: RunFlags,
        /// CIFAR-style training batch; requires --cifar-eval.
        #[arg(long, requires = "cifar_eval")]
        cifar: Option<PathBuf>,
        #[arg(long)]
        cifar_eval: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        cifar_classes: usize,
    },
    /// Train one model per seed and write reports.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Score a checkpoint on an eval split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Class-dependency metrics of a treated run against a vanilla run.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        vanilla: PathBuf,
        #[arg(long)]
        treated: PathBuf,
    },
    /// Sweep the DropMix rate or alpha against a shared vanilla baseline.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        flags: RunFlags,
        #[arg(long)]
        axis: Option<String>,
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
    },
    /// Label-information curves for every seed of a run.
    AnalyzeLabelinfo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 21)]
        steps: usize,
        #[arg(long, default_value_t = 1)]
        repeats: usize,
    },
    /// Render an SVG chart from a CSV written by compare or sweep.
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        csv: PathBuf,
    },
    /// Recompute and check every hash in <out>/manifest.json.
    VerifyManifest {
        #[command(flatten)]
        common: Common,
    },
}

fn config_text(path: Option<&Path>) -> anyhow::Result<String> {
    match path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(String::new()),
    }
}

fn overrides(common: &Common, flags: &RunFlags) -> anyhow::Result<Vec<(String, String)>> {
    let mut o = parse_overrides(&common.set)?;
    o.extend(flags.overrides());
    Ok(o)
}

fn run_config(common: &Common, flags: &RunFlags) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::from_toml_str(&config_text(common.config.as_deref())?, &overrides(common, flags)?)?;
    cfg.out = Some(common.out.clone());
    Ok(cfg)
}

fn execute(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::GenData {
            common,
            flags,
            cifar,
            cifar_eval,
            cifar_classes,
        } => {
            let data = match (cifar, cifar_eval) {
                (Some(t), Some(e)) => runner::gen_cifar(&t, &e, cifar_classes, &common.out)?,
                _ => runner::gen_data(&run_config(&common, &flags)?, &common.out)?,
            };
            println!(
                "wrote {} train / {} eval samples, dataset {}",
                data.train.len(),
                data.eval.len(),
                data.hash
            );
        }
        Cmd::Train { common, flags } => {
            let out = runner::run(&run_config(&common, &flags)?)?;
            if let Some(avg) = &out.average {
                println!(
                    "{:?}: accuracy {:.4} (std {:.4}) over {} seeds",
                    avg.condition,
                    avg.accuracy(),
                    avg.accuracy_std(),
                    out.reports.len()
                );
            }
            if !out.failed.is_empty() {
                return Err(Error::RunFailed(format!("seeds {:?} diverged", out.failed)).into());
            }
        }
        Cmd::Evaluate { common, model, data } => {
            let cfg = RunConfig::from_toml_str(&config_text(common.config.as_deref())?, &parse_overrides(&common.set)?)?;
            let r = runner::evaluate(&model, &data, cfg.condition(), &common.out)?;
            println!("accuracy {:.4}", r.accuracy());
        }
        Cmd::Compare { common, vanilla, treated } => {
            let c = runner::compare(&vanilla, &treated, &common.out)?;
            println!(
                "accuracy gain {:+.3} pp, N_DC {}, mean degraded change {}",
                c.report.accuracy_gain_pp(),
                c.report.n_dc(),
                c.report
                    .mean_delta_dc()
                    .map(|v| format!("{v:.3} pp"))
                    .unwrap_or_else(|| "n/a".into())
            );
        }
        Cmd::Sweep {
            common,
            flags,
            axis,
            grid,
        } => {
            let mut o = overrides(&common, &flags)?;
            if let Some(a) = axis {
                o.push(("sweep_axis".into(), format!("{a:?}")));
            }
            if let Some(g) = grid {
                let vals: Vec<String> = g.iter().map(|v| format!("{v:?}")).collect();
                o.push(("sweep_grid".into(), format!("[{}]", vals.join(", "))));
            }
            let cfg = SweepConfig::from_toml_str(&config_text(common.config.as_deref())?, &o)?;
            let out = runner::sweep(&cfg, &common.out)?;
            match &out.selection {
                Some(s) => println!(
                    "selected {} = {} by {} (tied: {:?})",
                    match s.axis {
                        SweepAxis::DropmixRate => "dropmix_rate",
                        SweepAxis::Alpha => "alpha",
                    },
                    s.value,
                    s.rule,
                    s.tied_values
                ),
                None => println!("no grid point completed"),
            }
            let failed = out.points.iter().any(|(_, p)| !p.failed.is_empty())
                || !out.vanilla.failed.is_empty()
                || out.reference.as_ref().is_some_and(|r| !r.failed.is_empty());
            if failed {
                return Err(Error::RunFailed("some seeds diverged; see manifests".into()).into());
            }
        }
        Cmd::AnalyzeLabelinfo {
            common,
            run,
            steps,
            repeats,
        } => {
            let s = runner::analyze_labelinfo(&run, &common.out, steps, repeats)?;
            println!(
                "fragile classes cross earlier in {} of {} seeds",
                s.fragile_lower_count,
                s.seeds.len()
            );
        }
        Cmd::Plot { common, csv } => {
            let text = std::fs::read_to_string(&csv).with_context(|| format!("reading {}", csv.display()))?;
            let svg = runner::plot::render(&text)?;
            std::fs::create_dir_all(&common.out)?;
            let stem = csv.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "plot".into());
            let path = common.out.join(format!("{stem}.svg"));
            std::fs::write(&path, svg)?;
            println!("wrote {}", path.display());
        }
        Cmd::VerifyManifest { common } => {
            let n = runner::verify_manifest(&common.out)?;
            println!("{n} artifacts verified");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map(Error::exit_code).unwrap_or(2);
            ExitCode::from(code as u8)
        }
    }
}
