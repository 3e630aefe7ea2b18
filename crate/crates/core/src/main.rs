use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand, ValueEnum};

use epikick::analysis::{emit_report, relevance};
use epikick::config::RunConfig;
use epikick::data::{Dataset, DatasetSplit, StandardizationStats};
use epikick::error::{Error, Result};
use epikick::forecast::{
    bootstrap_ci, forecast_autoregressive, one_step_series, BootstrapConfig, ForecastResult,
    SeedWindow,
};
use epikick::model::{Checkpoint, ModelConfig, ModelParams};
use epikick::numerics::Rng;
use epikick::synth::{write_synthetic_dataset, SynthOpts};
use epikick::train::{evaluate_rmse, train};

#[derive(Parser)]
#[command(name = "epikick", about = "Demographic-conditioned recurrent epidemic forecaster")]
struct Cli {
    /// Flat key-value config file; CLI flags win over file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (default: runs/<timestamp>-seed<seed>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic cases/restrictions/demographics CSVs from the
    /// discrete SIR model.
    Simulate(SimulateArgs),
    /// Train a model and write checkpoint.json + history.csv.
    Train(DataArgs),
    /// One-step RMSE per test region, written to metrics.json.
    Evaluate(EvaluateArgs),
    /// One-step or autoregressive forecast CSV, optionally with
    /// bootstrap confidence bands.
    Forecast(ForecastArgs),
    /// Embedding-norm relevance report for a checkpoint.
    Relevance(RelevanceArgs),
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 20)]
    regions: usize,
    #[arg(long, default_value_t = 150)]
    horizon: usize,
    #[arg(long, default_value_t = 1_000_000)]
    population: u64,
    #[arg(long, default_value_t = 0.2)]
    beta_min: f64,
    #[arg(long, default_value_t = 0.5)]
    beta_max: f64,
    #[arg(long, default_value_t = 0.05)]
    gamma_min: f64,
    #[arg(long, default_value_t = 0.2)]
    gamma_max: f64,
    #[arg(long, default_value_t = 1e-3)]
    i0: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_sd: f64,
    #[arg(long, value_enum, default_value_t = RestrictionPattern::Middle)]
    restriction: RestrictionPattern,
}

#[derive(Clone, Copy, ValueEnum)]
enum RestrictionPattern {
    /// Stay-at-home from day horizon/4 through day horizon/2.
    Middle,
    /// No restriction anywhere.
    None,
}

#[derive(clap::Args)]
struct DataArgs {
    #[arg(long)]
    cases: PathBuf,
    #[arg(long)]
    restrictions: PathBuf,
    #[arg(long)]
    demographics: PathBuf,
    /// Comma-separated regions withheld from training.
    #[arg(long)]
    test_regions: Option<String>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    window_len: Option<usize>,
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    eval_fraction: Option<f64>,
}

#[derive(clap::Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(clap::Args)]
struct ForecastArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Required unless --bootstrap retrains the point model.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    region: String,
    #[arg(long, default_value_t = 30)]
    horizon: usize,
    #[arg(long, value_enum, default_value_t = Mode::Onestep)]
    mode: Mode,
    /// 0-based day index the seed window ends at (autoregressive mode);
    /// defaults to the last observed day.
    #[arg(long)]
    start_day: Option<usize>,
    #[arg(long, default_value_t = false)]
    bootstrap: bool,
    #[arg(long)]
    ensemble_size: Option<usize>,
    #[arg(long)]
    level: Option<f64>,
    /// CSV `date,restricted` overriding the future restriction status
    /// (default: persist the last observed status).
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Onestep,
    Autoregressive,
}

#[derive(clap::Args)]
struct RelevanceArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

fn resolve_config(cli_config: &Option<PathBuf>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = cli_config {
        cfg.merge_file(path)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_data_args(cfg: &mut RunConfig, args: &DataArgs) -> Result<()> {
    if let Some(tr) = &args.test_regions {
        cfg.set("test_regions", tr)?;
    }
    macro_rules! over {
        ($field:ident) => {
            if let Some(v) = args.$field {
                cfg.$field = v;
            }
        };
    }
    over!(hidden_dim);
    over!(num_layers);
    over!(window_len);
    over!(lr0);
    over!(batch_size);
    over!(max_epochs);
    over!(eval_fraction);
    Ok(())
}

fn out_dir(out: &Option<PathBuf>, seed: u64) -> Result<PathBuf> {
    let dir = match out {
        Some(d) => d.clone(),
        None => {
            let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
            PathBuf::from("runs").join(format!("{stamp}-seed{seed}"))
        }
    };
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::write(dir.join("effective-config"), cfg.render())?;
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs, cfg: &RunConfig, dir: &Path) -> Result<()> {
    let opts = SynthOpts {
        regions: args.regions,
        horizon: args.horizon,
        population: args.population,
        beta_range: (args.beta_min, args.beta_max),
        gamma_range: (args.gamma_min, args.gamma_max),
        init_infected: args.i0,
        noise_sd: args.noise_sd,
        restriction: match args.restriction {
            RestrictionPattern::Middle => epikick::synth::RestrictionPattern::Middle,
            RestrictionPattern::None => epikick::synth::RestrictionPattern::None,
        },
        seed: cfg.seed,
    };
    write_synthetic_dataset(dir, &opts)?;
    println!(
        "wrote synthetic dataset for {} regions to {}",
        args.regions,
        dir.display()
    );
    Ok(())
}

struct Prepared {
    dataset: Dataset,
    split: DatasetSplit,
    demos: BTreeMap<String, Vec<f64>>,
    stats: StandardizationStats,
    model_cfg: ModelConfig,
}

fn prepare(args: &DataArgs, cfg: &RunConfig) -> Result<Prepared> {
    let dataset = Dataset::load(&args.cases, &args.restrictions, &args.demographics)?;
    let windows = dataset.windows(cfg.window_len)?;
    let mut rng = Rng::new(cfg.seed).child(0xD5);
    let split = epikick::data::split_dataset(
        &windows,
        &cfg.test_regions,
        cfg.eval_fraction,
        &mut rng,
    )?;
    let (demos, stats) = dataset.standardized_demographics(&cfg.test_regions)?;
    let model_cfg = ModelConfig {
        input_dim: 4,
        hidden_dim: cfg.hidden_dim,
        num_layers: cfg.num_layers,
        demo_dim: dataset.feature_names.len(),
        window_len: cfg.window_len,
    };
    Ok(Prepared {
        dataset,
        split,
        demos,
        stats,
        model_cfg,
    })
}

fn cmd_train(args: &DataArgs, cfg: &RunConfig, dir: &Path) -> Result<()> {
    let p = prepare(args, cfg)?;
    let (params, history) = train(&p.split, &p.demos, &p.model_cfg, &cfg.train_config())?;
    let ckpt = Checkpoint::new(
        p.model_cfg,
        &params,
        p.dataset.feature_names.clone(),
        p.stats,
    );
    ckpt.save(&dir.join("checkpoint.json"))?;
    history.write_csv(&dir.join("history.csv"))?;
    let last = history.epochs.last();
    println!(
        "trained {} epochs; final train RMSE {:.6e}, eval RMSE {:.6e}",
        history.epochs.len(),
        last.map(|e| e.train_rmse).unwrap_or(f64::NAN),
        last.map(|e| e.eval_rmse).unwrap_or(f64::NAN),
    );
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, ModelParams)> {
    let ckpt = Checkpoint::load(path)?;
    let params = ckpt.params()?;
    Ok((ckpt, params))
}

fn cmd_evaluate(args: &EvaluateArgs, cfg: &RunConfig, dir: &Path) -> Result<()> {
    if cfg.test_regions.is_empty() {
        return Err(Error::Usage(
            "evaluate needs --test-regions (or test_regions in the config)".into(),
        ));
    }
    let (ckpt, params) = load_checkpoint(&args.checkpoint)?;
    let dataset = Dataset::load(
        &args.data.cases,
        &args.data.restrictions,
        &args.data.demographics,
    )?;
    let mut metrics = BTreeMap::new();
    for region in &cfg.test_regions {
        let series = dataset.norm_series.get(region).ok_or_else(|| {
            Error::Validation(format!("test region {region} not in the dataset"))
        })?;
        let windows = epikick::data::build_windows(
            series,
            &dataset.timelines[region],
            ckpt.config.window_len,
        )?;
        let demo = ckpt
            .standardization
            .apply(&dataset.demographics[region])?;
        let mut demos = BTreeMap::new();
        demos.insert(region.clone(), demo);
        let rmse_norm = evaluate_rmse(&params, &windows, &demos)?;
        metrics.insert(
            region.clone(),
            serde_json::json!({
                "one_step_rmse_normalized": rmse_norm,
                "one_step_rmse_counts": rmse_norm * dataset.populations[region],
                "windows": windows.len(),
            }),
        );
    }
    let path = dir.join("metrics.json");
    std::fs::write(&path, serde_json::to_string_pretty(&metrics)?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn future_status(
    scenario: &Option<PathBuf>,
    last_status: bool,
    first_day: NaiveDate,
    horizon: usize,
) -> Result<Vec<bool>> {
    let Some(path) = scenario else {
        return Ok(vec![last_status; horizon]);
    };
    let mut by_date = BTreeMap::new();
    let mut reader = csv::Reader::from_path(path)?;
    for rec in reader.records() {
        let rec = rec?;
        let date = NaiveDate::parse_from_str(rec.get(0).unwrap_or(""), "%Y-%m-%d")
            .map_err(|e| Error::Validation(format!("scenario file: bad date: {e}")))?;
        let flag = matches!(rec.get(1).map(str::trim), Some("1") | Some("true"));
        by_date.insert(date, flag);
    }
    (0..horizon)
        .map(|k| {
            let d = first_day + chrono::Days::new(k as u64);
            by_date.get(&d).copied().ok_or_else(|| {
                Error::Validation(format!("scenario file missing restriction status for {d}"))
            })
        })
        .collect()
}

fn cmd_forecast(args: &ForecastArgs, cfg: &RunConfig, dir: &Path) -> Result<()> {
    let dataset = Dataset::load(
        &args.data.cases,
        &args.data.restrictions,
        &args.data.demographics,
    )?;
    let region = &args.region;
    let series = dataset
        .norm_series
        .get(region)
        .ok_or_else(|| Error::Validation(format!("region {region} not in the dataset")))?;
    let timeline = &dataset.timelines[region];
    let population = dataset.populations[region];

    let run_with = |params: &ModelParams,
                    stats: &StandardizationStats,
                    window_len: usize|
     -> Result<ForecastResult> {
        let demo = stats.apply(&dataset.demographics[region])?;
        match args.mode {
            Mode::Onestep => one_step_series(
                params,
                series,
                timeline,
                &demo,
                population,
                args.horizon,
                window_len,
            ),
            Mode::Autoregressive => {
                let end_day = args.start_day.unwrap_or(series.len() - 1);
                let seed = SeedWindow::from_series(series, timeline, end_day, window_len)?;
                let status = future_status(
                    &args.scenario,
                    timeline.status[end_day],
                    seed.last_date + chrono::Days::new(1),
                    args.horizon,
                )?;
                forecast_autoregressive(
                    params,
                    &seed,
                    &demo,
                    args.horizon,
                    &status,
                    population,
                    region,
                )
            }
        }
    };

    let result = if args.bootstrap {
        let p = prepare(&args.data, cfg)?;
        let bcfg = BootstrapConfig {
            ensemble_size: args.ensemble_size.unwrap_or(cfg.bootstrap_b),
            level: args.level.unwrap_or(cfg.bootstrap_level),
            seed: cfg.seed,
        };
        let stats = p.stats.clone();
        let window_len = p.model_cfg.window_len;
        let outcome = bootstrap_ci(
            &p.split,
            &p.demos,
            &p.model_cfg,
            &cfg.train_config(),
            &bcfg,
            |params| run_with(params, &stats, window_len),
        )?;
        if outcome.dropped_members > 0 {
            eprintln!("warning: dropped {} diverged ensemble members", outcome.dropped_members);
        }
        outcome.result
    } else {
        let ckpt_path = args.checkpoint.as_ref().ok_or_else(|| {
            Error::Usage("--checkpoint is required without --bootstrap".into())
        })?;
        let (ckpt, params) = load_checkpoint(ckpt_path)?;
        run_with(&params, &ckpt.standardization, ckpt.config.window_len)?
    };

    let path = dir.join("forecast.csv");
    result.write_csv(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_relevance(args: &RelevanceArgs, dir: &Path) -> Result<()> {
    let (ckpt, params) = load_checkpoint(&args.checkpoint)?;
    let report = relevance(
        &params,
        &ckpt.feature_names,
        &ckpt.standardization,
        &args.checkpoint.display().to_string(),
    )?;
    emit_report(&report, &dir.join("relevance"))?;
    println!("wrote {}", dir.join("relevance.csv").display());
    Ok(())
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = resolve_config(&cli.config, cli.seed)?;
    match &cli.command {
        Command::Simulate(args) => {
            let dir = out_dir(&cli.out, cfg.seed)?;
            echo_config(&cfg, &dir)?;
            cmd_simulate(args, &cfg, &dir)
        }
        Command::Train(args) => {
            apply_data_args(&mut cfg, args)?;
            let dir = out_dir(&cli.out, cfg.seed)?;
            echo_config(&cfg, &dir)?;
            cmd_train(args, &cfg, &dir)
        }
        Command::Evaluate(args) => {
            apply_data_args(&mut cfg, &args.data)?;
            let dir = out_dir(&cli.out, cfg.seed)?;
            echo_config(&cfg, &dir)?;
            cmd_evaluate(args, &cfg, &dir)
        }
        Command::Forecast(args) => {
            apply_data_args(&mut cfg, &args.data)?;
            let dir = out_dir(&cli.out, cfg.seed)?;
            echo_config(&cfg, &dir)?;
            cmd_forecast(args, &cfg, &dir)
        }
        Command::Relevance(args) => {
            let dir = out_dir(&cli.out, cfg.seed)?;
            echo_config(&cfg, &dir)?;
            cmd_relevance(args, &dir)
        }
    }
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
