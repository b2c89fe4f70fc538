//! `cloudlet`: run experiments, generate synthetic data, compare reports and
//! dump detected events.
//!
//! Flags given on the command line override the values in `--config`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cloudlet_forecast::config::{config_dir, DatasetFiles, DatasetSource, RunConfig};
use cloudlet_forecast::experiment::{compare_runs, load_dataset, run_experiment, write_comparison, write_outputs, RunReport};
use cloudlet_forecast::federation::{Connectivity, Strategy};
use cloudlet_forecast::metrics::{detect_sudden_events, write_events_csv};
use cloudlet_forecast::synth::{generate_synthetic, write_synthetic, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "cloudlet", version, about = "Online traffic forecasting across cloudlets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment and write report.json plus CSV tables.
    Run(RunArgs),
    /// Generate a synthetic dataset and a config that points at it.
    Synth(SynthArgs),
    /// Tabulate final metrics and bytes of two or more reports.
    Compare(CompareArgs),
    /// Write the sudden events found in a dataset's speed series.
    Events(EventsArgs),
}

#[derive(Debug, Args)]
struct Overrides {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// full, none or adaptive.
    #[arg(long)]
    connectivity: Option<Connectivity>,
    /// traditional_fl, serverfree_fl or gossip.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    window_size: Option<usize>,
}

impl Overrides {
    /// The effective config and the directory its relative paths refer to.
    fn load(&self) -> Result<(RunConfig, PathBuf)> {
        let (mut cfg, base) = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let cfg = RunConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
                (cfg, config_dir(path))
            }
            None => (RunConfig::default(), PathBuf::from(".")),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(c) = self.connectivity {
            cfg.connectivity = c;
        }
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        if let Some(h) = self.horizon {
            cfg.horizon = h;
        }
        if let Some(w) = self.window_size {
            cfg.window_size = w;
        }
        cfg.validate(&base)?;
        Ok((cfg, base))
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Run configuration with a synthetic dataset to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    nodes: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Jams per hour across the network.
    #[arg(long)]
    jam_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// report.json files; deltas are relative to the first.
    #[arg(required = true, num_args = 2..)]
    reports: Vec<PathBuf>,
    /// Directory receiving comparison.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct EventsArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Directory receiving events.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn run(args: &RunArgs) -> Result<()> {
    let (cfg, base) = args.overrides.load()?;
    let out = run_experiment(&cfg, &base)?;
    let paths = write_outputs(&out, &args.out_dir)?;
    let r = &out.report;
    println!(
        "{} rounds, {} cloudlets, feature bytes {}, model bytes {}",
        r.summary.rounds,
        r.summary.cloudlets,
        r.final_feature_bytes(),
        r.final_model_bytes()
    );
    for h in &r.final_evaluation.horizons {
        println!(
            "horizon {:>2}: MAE {} RMSE {} WMAPE {} SEPA {}",
            h.horizon,
            fmt_opt(h.mae),
            fmt_opt(h.rmse),
            fmt_opt(h.wmape),
            fmt_opt(h.sepa)
        );
    }
    println!("report written to {}", paths.report.display());
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn synth(args: &SynthArgs) -> Result<()> {
    let mut run_cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let mut cfg: SynthConfig = match &run_cfg.dataset {
        DatasetSource::Synthetic(s) => s.clone(),
        DatasetSource::Files(_) => bail!("the config's dataset is not synthetic"),
    };
    if let Some(n) = args.nodes {
        cfg.nodes = n;
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if let Some(r) = args.jam_rate {
        cfg.jam_rate = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let data = generate_synthetic(&cfg)?;
    let paths = write_synthetic(&data, &args.out_dir)?;
    let name = |p: &Path| PathBuf::from(p.file_name().expect("file path"));
    run_cfg.dataset = DatasetSource::Files(DatasetFiles {
        speeds: name(&paths.speeds),
        distances: name(&paths.distances),
        positions: Some(name(&paths.positions)),
        centers: Some(name(&paths.centers)),
        assignment: None,
    });
    run_cfg.radius_m = data.radius_m;
    let cfg_path = args.out_dir.join("config.json");
    std::fs::write(&cfg_path, run_cfg.to_json()).with_context(|| format!("writing {}", cfg_path.display()))?;
    println!(
        "{} nodes x {} steps, {} jam onsets ({} skipped), files in {}",
        data.graph.len(),
        data.speeds.steps(),
        data.jams.iter().filter(|j| j.hop == 0).count(),
        data.skipped_jams,
        args.out_dir.display()
    );
    Ok(())
}

fn compare(args: &CompareArgs) -> Result<()> {
    let reports = args
        .reports
        .iter()
        .map(|p| Ok((p.display().to_string(), RunReport::read(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let rows = compare_runs(&reports)?;
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let path = args.out_dir.join("comparison.csv");
    write_comparison(&path, &rows)?;
    println!("{} rows written to {}", rows.len(), path.display());
    Ok(())
}

fn events(args: &EventsArgs) -> Result<()> {
    let (cfg, base) = args.overrides.load()?;
    let data = load_dataset(&cfg, &base)?;
    let found = detect_sudden_events(data.speeds.values().as_view(), 0, &cfg.sepa);
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let path = args.out_dir.join("events.csv");
    write_events_csv(&path, &found, data.speeds.node_ids())?;
    println!("{} events written to {}", found.len(), path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
        Command::Compare(a) => compare(a),
        Command::Events(a) => events(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
