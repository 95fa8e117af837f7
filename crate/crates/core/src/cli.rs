//! Command-line surface: `generate`, `train`, `sweep` and `plot`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::checkpoint::save_checkpoint;
use crate::config::RunConfig;
use crate::data::{generate, load_dataset, save_dataset, Dataset};
use crate::error::{Error, Result};
use crate::plot::{read_series, render_svg};
use crate::trainer::{run_with, RunLog};

pub const CONFIG_FILE: &str = "config.txt";
pub const RUNLOG_FILE: &str = "runlog.csv";
pub const LOSS_FILE: &str = "losses.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_HEADER: &str = "variant,state,classes_seen,accuracy,acc_with_comp,acc_without_comp,loss_final";

#[derive(Debug, Parser)]
#[command(name = "i3dol", version, about = "Class-incremental point-cloud classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic shape benchmark into a directory.
    Generate(CommonArgs),
    /// Run every incremental state and write the run log and checkpoints.
    Train(CommonArgs),
    /// One run per value of a swept setting, aggregated into one CSV.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        key: SweepKey,
        /// Comma-separated values; ignored for `ablation`.
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
    },
    /// Render a run log or sweep CSV as an SVG line chart.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "accuracy per state")]
        title: String,
    },
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Key-value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Run seed (data seed for `generate`).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub states: Option<usize>,
    #[arg(long)]
    pub exemplars: Option<usize>,
    /// Disable adaptive centroids.
    #[arg(long)]
    pub no_agc: bool,
    /// Disable geometric attention.
    #[arg(long)]
    pub no_gaa: bool,
    /// Disable score fairness compensation.
    #[arg(long)]
    pub no_sfc: bool,
    /// Override any config key, `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKey {
    Exemplars,
    States,
    Ablation,
}

impl CommonArgs {
    /// Defaults, then the config file, then `--set`, then dedicated flags.
    pub fn resolve(&self, generating: bool) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).map_err(|e| match e {
                Error::Io { .. } => Error::Config(e.to_string()),
                other => other,
            })?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, found `{o}`")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Some(s) = self.seed {
            if generating {
                cfg.data_seed = s;
            } else {
                cfg.seed = s;
            }
        }
        if let Some(s) = self.states {
            cfg.states = s;
        }
        if let Some(m) = self.exemplars {
            cfg.exemplars = m;
        }
        cfg.agc &= !self.no_agc;
        cfg.gaa &= !self.no_gaa;
        cfg.sfc &= !self.no_sfc;
        Ok(cfg)
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Generate a dataset into `out`, which must be absent or empty.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    if out.exists() {
        let mut entries = fs::read_dir(out).map_err(|e| Error::io(out, e))?;
        if entries.next().is_some() {
            return Err(Error::Config(format!("{} exists and is not empty", out.display())));
        }
    }
    let dataset = generate(&cfg.generate_config())?;
    create_dir(out)?;
    save_dataset(out, &dataset)?;
    Ok(dataset)
}

fn open_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::MissingDataset(PathBuf::from("<unset>")))?;
    load_dataset(dir)
}

/// Train on an already loaded dataset, writing the echoed config, run log,
/// per-epoch losses and one checkpoint per state into `out`.
pub fn train_into(cfg: &RunConfig, dataset: &Dataset, out: &Path) -> Result<RunLog> {
    let spec = cfg.run_spec(dataset.num_classes())?;
    let ckpt_dir = out.join("checkpoints");
    create_dir(&ckpt_dir)?;
    write(&out.join(CONFIG_FILE), &cfg.to_text())?;
    let output = run_with(&spec, dataset, &mut |entry, model, stats| {
        save_checkpoint(&ckpt_dir.join(format!("state_{}.ckpt", entry.state)), model, stats)
    })?;
    write(&out.join(RUNLOG_FILE), &output.log.to_csv(cfg.record_wall_clock))?;
    write(&out.join(LOSS_FILE), &output.log.loss_csv())?;
    Ok(output.log)
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<RunLog> {
    let dataset = open_dataset(cfg)?;
    train_into(cfg, &dataset, out)
}

fn sweep_rows(csv: &mut String, variant: &str, log: &RunLog, compensated: bool) {
    for st in &log.states {
        let with = if compensated { st.acc_with_comp } else { None };
        let accuracy = with.unwrap_or(st.acc_without_comp);
        let with = with.map(|a| format!("{a:?}")).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{variant},{},{},{accuracy:?},{with},{:?},{:?}",
            st.state,
            st.classes_seen,
            st.acc_without_comp,
            st.loss_final()
        );
    }
}

/// One run per value of `key`, each in its own subdirectory of `out`, plus
/// an aggregated `sweep.csv`.
pub fn cmd_sweep(cfg: &RunConfig, key: SweepKey, values: &[usize], out: &Path) -> Result<String> {
    let dataset = open_dataset(cfg)?;
    let mut runs: Vec<(String, String, RunConfig)> = Vec::new();
    match key {
        SweepKey::Exemplars | SweepKey::States => {
            if values.is_empty() {
                return Err(Error::Config("sweep needs at least one value".into()));
            }
            for &v in values {
                let mut c = cfg.clone();
                let (label, dir) = if key == SweepKey::Exemplars {
                    c.exemplars = v;
                    (format!("M={v}"), format!("exemplars_{v}"))
                } else {
                    c.states = v;
                    (format!("S={v}"), format!("states_{v}"))
                };
                runs.push((label, dir, c));
            }
        }
        SweepKey::Ablation => {
            let base = RunConfig {
                agc: true,
                gaa: true,
                sfc: true,
                ..cfg.clone()
            };
            runs.push(("Ours".into(), "ours".into(), base.clone()));
            runs.push((
                "w/oAG".into(),
                "no_agc".into(),
                RunConfig {
                    agc: false,
                    ..base.clone()
                },
            ));
            runs.push((
                "w/oGA".into(),
                "no_gaa".into(),
                RunConfig {
                    gaa: false,
                    ..base.clone()
                },
            ));
            runs.push(("w/oSF".into(), "no_sfc".into(), RunConfig { sfc: false, ..base }));
        }
    }
    let mut csv = format!("{SWEEP_HEADER}\n");
    for (label, dir, c) in &runs {
        let log = train_into(c, &dataset, &out.join(dir))?;
        sweep_rows(&mut csv, label, &log, c.sfc);
    }
    write(&out.join(SWEEP_FILE), &csv)?;
    Ok(csv)
}

pub fn cmd_plot(input: &Path, out: &Path, title: &str) -> Result<String> {
    let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let series = read_series(&text, &input.display().to_string())?;
    let svg = render_svg(&series, title);
    write(out, &svg)?;
    Ok(svg)
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = args.resolve(true)?;
            let d = cmd_generate(&cfg, &args.out)?;
            println!(
                "wrote {} training and {} test clouds to {}",
                d.train.len(),
                d.test.len(),
                args.out.display()
            );
        }
        Command::Train(args) => {
            let cfg = args.resolve(false)?;
            let log = cmd_train(&cfg, &args.out)?;
            println!(
                "average accuracy {:.4} over {} states",
                log.average_accuracy(),
                log.states.len()
            );
        }
        Command::Sweep { common, key, values } => {
            let cfg = common.resolve(false)?;
            cmd_sweep(&cfg, key, &values, &common.out)?;
            println!("wrote {}", common.out.join(SWEEP_FILE).display());
        }
        Command::Plot { input, out, title } => {
            cmd_plot(&input, &out, &title)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

/// Parse `args`, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
