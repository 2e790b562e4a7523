use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use slf_core::bench::{
    align_estimates, evaluate_filters, execute_plan, kf_estimates, read_estimates, rmse_series, write_estimates,
    write_series_csv, ExperimentConfig, Plan, Preset, Profile, RmseSeries, SweepAxis,
};
use slf_core::preprocess::RotationMode;
use slf_core::simkit::{load_dataset, save_dataset, simulate_tracks, TrackPair};
use slf_core::slf::{load_bundle, save_bundle, slf_filter_tracks, slf_train_with};

#[derive(Parser)]
#[command(name = "slf", version, about = "Supervised-learning tracking filter experiments")]
struct Cli {
    /// TOML file with defaults for any flag (flag names with `_` for `-`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a training and a test set and write them as CSV.
    Generate {
        /// Scenario preset (default general).
        #[arg(long)]
        preset: Option<Preset>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train a filter on a dataset and write the model bundle.
    Train {
        #[command(flatten)]
        files: FileArgs,
        /// Train on unrotated windows.
        #[arg(long)]
        no_rotation: bool,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write filter estimates for every measurement of a dataset.
    Filter {
        #[command(flatten)]
        files: FileArgs,
    },
    /// Per-step RMSE of the measurements, a Kalman filter and the learned
    /// filter (from `--estimates` or `--model`).
    Evaluate {
        #[command(flatten)]
        files: FileArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run a preset end to end and write its result files.
    Reproduce {
        /// general, special1, special2, special3, ablation, qr-grid or sweep.
        preset: Preset,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Sweep one hyperparameter (or every figure axis) around a preset.
    Sweep {
        /// Base preset (default sweep).
        #[arg(long)]
        preset: Option<Preset>,
        /// tau, samples, nrounds, max_depth or eta; all figure axes when omitted.
        #[arg(long)]
        axis: Option<SweepAxis>,
        /// Comma-separated values for `--axis`.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args, Default)]
struct FileArgs {
    /// Dataset CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Model bundle directory.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Estimates CSV.
    #[arg(long)]
    estimates: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Default)]
struct RunArgs {
    /// Scenario seed; train and test seeds are derived from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Size profile: `desk` (default) or `paper`.
    #[arg(long)]
    profile: Option<Profile>,
    /// Training tracks (overrides the profile).
    #[arg(long)]
    train_tracks: Option<usize>,
    /// Test tracks (overrides the profile).
    #[arg(long)]
    test_tracks: Option<usize>,
    /// Window length in measurements.
    #[arg(long)]
    tau: Option<usize>,
    /// Boosting rounds.
    #[arg(long)]
    nrounds: Option<usize>,
    /// Maximum tree depth.
    #[arg(long)]
    max_depth: Option<usize>,
    /// Learning rate.
    #[arg(long)]
    eta: Option<f64>,
    /// L2 penalty on leaf weights.
    #[arg(long)]
    lambda: Option<f64>,
    /// Minimum split gain.
    #[arg(long)]
    gamma: Option<f64>,
    /// Minimum rows per leaf.
    #[arg(long)]
    min_samples_leaf: Option<usize>,
    /// Process noise intensity assumed by the Kalman filter.
    #[arg(long)]
    kf_qs: Option<f64>,
    /// Measurement variance in x assumed by the Kalman filter.
    #[arg(long)]
    kf_vx2: Option<f64>,
    /// Measurement variance in y assumed by the Kalman filter.
    #[arg(long)]
    kf_vy2: Option<f64>,
    /// Steps averaged in summaries, e.g. `10,30`.
    #[arg(long, value_delimiter = ',')]
    k_range: Option<Vec<usize>>,
    /// Directory for result files.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl RunArgs {
    fn to_config(&self) -> Result<ExperimentConfig> {
        let k_range = match self.k_range.as_deref() {
            None => None,
            Some(&[lo, hi]) => Some([lo, hi]),
            Some(_) => bail!("--k-range takes two steps, e.g. 10,30"),
        };
        Ok(ExperimentConfig {
            seed: self.seed,
            profile: self.profile,
            train_tracks: self.train_tracks,
            test_tracks: self.test_tracks,
            tau: self.tau,
            nrounds: self.nrounds,
            max_depth: self.max_depth,
            eta: self.eta,
            lambda: self.lambda,
            gamma: self.gamma,
            min_samples_leaf: self.min_samples_leaf,
            kf_qs: self.kf_qs,
            kf_vx2: self.kf_vx2,
            kf_vy2: self.kf_vy2,
            k_range,
            output_dir: self.output_dir.clone(),
            ..Default::default()
        })
    }
}

/// Config keys that are not experiment settings.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    data: Option<PathBuf>,
    model: Option<PathBuf>,
    estimates: Option<PathBuf>,
    out: Option<PathBuf>,
    no_rotation: Option<bool>,
}

const FILE_KEYS: [&str; 5] = ["data", "model", "estimates", "out", "no_rotation"];

fn load_config(path: Option<&Path>) -> Result<(ExperimentConfig, FileConfig)> {
    let Some(path) = path else { return Ok(Default::default()) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
    let mut files = toml::Table::new();
    for key in FILE_KEYS {
        if let Some(v) = table.remove(key) {
            files.insert(key.to_string(), v);
        }
    }
    let exp = ExperimentConfig::deserialize(toml::Value::Table(table)).with_context(|| format!("{}", path.display()))?;
    let files = FileConfig::deserialize(toml::Value::Table(files)).with_context(|| format!("{}", path.display()))?;
    Ok((exp, files))
}

impl FileArgs {
    fn merged(&self, file: &FileConfig) -> FileArgs {
        FileArgs {
            data: self.data.clone().or_else(|| file.data.clone()),
            model: self.model.clone().or_else(|| file.model.clone()),
            estimates: self.estimates.clone().or_else(|| file.estimates.clone()),
            out: self.out.clone().or_else(|| file.out.clone()),
        }
    }
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().with_context(|| format!("--{flag} is required"))
}

fn load_tracks(path: &Path) -> Result<Vec<TrackPair>> {
    let tracks = load_dataset(path).with_context(|| format!("reading dataset {}", path.display()))?;
    if tracks.is_empty() {
        bail!("{} holds no tracks", path.display());
    }
    Ok(tracks)
}

fn print_means(series: &[RmseSeries], k_range: (usize, usize)) {
    for s in series {
        println!("{}: mean RMSE over k in [{}, {}] = {:.4}", s.label, k_range.0, k_range.1, s.mean_over(k_range));
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (file_cfg, file_paths) = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Generate { preset, run } => {
            let cfg = file_cfg.merged(ExperimentConfig { preset, ..run.to_config()? });
            let preset = cfg.preset.unwrap_or(Preset::General);
            let seed = cfg.seed.context("--seed is required")?;
            let spec = cfg.spec_for(preset, seed);
            spec.validate()?;
            let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("data"));
            std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for (name, scenario) in [("train.csv", &spec.train), ("test.csv", &spec.test)] {
                let path = dir.join(name);
                save_dataset(&simulate_tracks(scenario)?, &path).with_context(|| format!("writing {}", path.display()))?;
                println!("wrote {} ({} tracks, seed {})", path.display(), scenario.n_tracks, scenario.seed);
            }
            let path = dir.join("scenario.toml");
            std::fs::write(&path, toml::to_string_pretty(&spec)?)?;
        }
        Command::Train { files, no_rotation, run } => {
            let files = files.merged(&file_paths);
            let cfg = file_cfg.merged(run.to_config()?);
            let tracks = load_tracks(need(&files.data, "data")?)?;
            let out = need(&files.out, "out")?;
            let rotation = if no_rotation || file_paths.no_rotation == Some(true) {
                RotationMode::Identity
            } else {
                RotationMode::Aligned
            };
            let model = slf_train_with(&tracks, cfg.tau.unwrap_or(20), &cfg.params(), rotation)?;
            save_bundle(&model, out)?;
            let s = &model.summary;
            println!(
                "trained on {} samples from {} tracks: rmse {:.4}, {} windows skipped; bundle in {}",
                s.n_samples,
                s.n_tracks,
                s.rmse,
                s.n_skipped_windows,
                out.display()
            );
        }
        Command::Filter { files } => {
            let files = files.merged(&file_paths);
            let model = load_bundle(need(&files.model, "model")?)?;
            let tracks = load_tracks(need(&files.data, "data")?)?;
            let out = need(&files.out, "out")?;
            let rows: Vec<_> = slf_filter_tracks(&model, &tracks)?
                .into_iter()
                .zip(&tracks)
                .flat_map(|(est, t)| {
                    est.into_iter().enumerate().map(move |(i, e)| slf_core::bench::EstimateRow {
                        track_id: t.track_id,
                        k: i + 1,
                        x: e.position.x,
                        y: e.position.y,
                        source: e.source.name().to_string(),
                    })
                })
                .collect();
            write_estimates(&rows, out)?;
            println!("wrote {} estimates to {}", rows.len(), out.display());
        }
        Command::Evaluate { files, run } => {
            let files = files.merged(&file_paths);
            let cfg = file_cfg.merged(run.to_config()?);
            let tracks = load_tracks(need(&files.data, "data")?)?;
            let out = need(&files.out, "out")?;
            let steps = tracks[0].len();
            let kf = cfg.spec_for(cfg.preset.unwrap_or(Preset::General), 0).kf;
            let dt = 1.0;
            let (series, default_lo) = match (&files.estimates, &files.model) {
                (Some(est), None) => {
                    let truth: Vec<_> = tracks.iter().map(TrackPair::true_positions).collect();
                    let meas: Vec<_> = tracks.iter().map(TrackPair::measured_positions).collect();
                    let slf = align_estimates(&read_estimates(est)?, &tracks)?;
                    let series = vec![
                        rmse_series("meas", &meas, &truth)?,
                        rmse_series("kf", &kf_estimates(&tracks, &kf, dt)?, &truth)?,
                        rmse_series("slf", &slf, &truth)?,
                    ];
                    (series, 1)
                }
                (None, Some(dir)) => {
                    let model = load_bundle(dir)?;
                    (evaluate_filters(&tracks, &kf, dt, &[("slf", &model)])?, model.tau.min(steps))
                }
                _ => bail!("give exactly one of --estimates and --model"),
            };
            write_series_csv(&series, out)?;
            println!("wrote {}", out.display());
            print_means(&series, cfg.k_range.map_or((default_lo, steps), |[a, b]| (a, b)));
        }
        Command::Reproduce { preset, run } => {
            let cfg = file_cfg.merged(ExperimentConfig { preset: Some(preset), ..run.to_config()? });
            if cfg.seed.is_none() {
                bail!("reproduce needs --seed (or `seed` in the config file)");
            }
            for line in execute_plan(&cfg.plan()?)? {
                println!("{line}");
            }
        }
        Command::Sweep { preset, axis, values, run } => {
            let cfg = file_cfg.merged(ExperimentConfig { preset, sweep_axis: axis, sweep_values: values, ..run.to_config()? });
            let seed = cfg.seed.context("--seed is required")?;
            let preset = cfg.preset.unwrap_or(Preset::Sweep);
            let plan = Plan::Sweep { base: cfg.spec_for(preset, seed), axes: cfg.sweep_axes() };
            for line in execute_plan(&plan)? {
                println!("{line}");
            }
        }
    }
    Ok(())
}
