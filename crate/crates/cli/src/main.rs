mod commands;
mod corpus;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tension_core::brnn::TrainConfig;
use tension_core::performance_params::Target;
use tension_core::score_features::Groups;
use tension_core::spiral_array::SpiralParams;
use tension_core::synth::Rule;
use tension_core::tension::WindowConfig;

#[derive(Parser)]
#[command(name = "tension", version, about = "Tonal tension features and expressive performance models")]
struct Cli {
    /// Worker threads for per-piece and per-fold work (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct ScoreOpts {
    /// File of `spiral.<key>=<value>` lines overriding the spiral-array defaults.
    #[arg(long)]
    pub spiral_config: Option<PathBuf>,
    /// Tension window width in beats.
    #[arg(long, default_value_t = 1.0)]
    pub window: f64,
    /// Ignore notes that started before the window.
    #[arg(long)]
    pub exclude_held: bool,
}

impl ScoreOpts {
    pub fn window_config(&self) -> anyhow::Result<WindowConfig> {
        let w = WindowConfig { width_beats: self.window, include_held: !self.exclude_held };
        w.validate()?;
        Ok(w)
    }

    pub fn spiral(&self, manifest: &mut manifest::RunManifest) -> anyhow::Result<SpiralParams> {
        match &self.spiral_config {
            Some(path) => Ok(SpiralParams::from_kv(&corpus::read_input(path, manifest)?)?),
            None => Ok(SpiralParams::default()),
        }
    }
}

#[derive(Args, Clone)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    /// Global gradient-norm clipping threshold.
    #[arg(long, default_value_t = 5.0)]
    pub clip: f64,
    #[arg(long, default_value_t = 0.9)]
    pub rmsprop_decay: f64,
    #[arg(long, default_value_t = 1e-8)]
    pub rmsprop_epsilon: f64,
    /// Fraction of training pieces held out for early stopping.
    #[arg(long, default_value_t = 0.1)]
    pub validation_fraction: f64,
    /// LSTM units per direction.
    #[arg(long, default_value_t = tension_core::brnn::DEFAULT_HIDDEN)]
    pub hidden: usize,
}

impl TrainOpts {
    pub fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden,
            learning_rate: self.lr,
            rmsprop_decay: self.rmsprop_decay,
            rmsprop_epsilon: self.rmsprop_epsilon,
            epochs: self.epochs,
            gradient_clip_norm: self.clip,
            early_stop_patience: self.patience,
            validation_fraction: self.validation_fraction,
            seed,
        }
    }
}

#[derive(Args, Clone)]
pub struct FsOpts {
    /// Seed for the MI subset sample and tie-breaking jitter.
    #[arg(long)]
    pub fs_seed: Option<u64>,
    /// Fraction of pieces used to estimate MI.
    #[arg(long, default_value_t = 0.2)]
    pub fs_fraction: f64,
    /// Neighbour count of the MI estimator.
    #[arg(long, default_value_t = tension_core::mi_select::DEFAULT_K)]
    pub fs_k: usize,
    /// Number of features kept by selection.
    #[arg(long, default_value_t = tension_core::eval_stats::FS_SIZE)]
    pub fs_size: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Score features (and targets, given a match file) for one piece or a corpus directory.
    Extract {
        #[arg(long, required_unless_present = "corpus", conflicts_with = "corpus")]
        score: Option<PathBuf>,
        #[arg(long = "match", requires = "score")]
        matched: Option<PathBuf>,
        /// Directory of `<id>.score.tsv` / `<id>.match.tsv` pairs.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Output name for a single piece (default: score file name).
        #[arg(long)]
        id: Option<String>,
        /// Feature groups, e.g. `P,M,T` or `none`.
        #[arg(long, default_value = "P,M,T")]
        groups: Groups,
        #[command(flatten)]
        score_opts: ScoreOpts,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate a synthetic corpus of scores and matched performances.
    Synth {
        #[arg(long)]
        pieces: usize,
        /// Onset frames per piece.
        #[arg(long, default_value_t = 200)]
        length: usize,
        #[arg(long)]
        seed: u64,
        /// Timing rule: `none` or `t_cd-slow`.
        #[arg(long, default_value = "none")]
        rule: Rule,
        /// Standard deviation of the timing noise.
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[command(flatten)]
        score_opts: ScoreOpts,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Mutual information between every feature and every target.
    Mi {
        /// Directory of extracted `<id>.features.csv` / `<id>.targets.csv` pairs.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        fs: FsOpts,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train one model on every piece of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        target: Target,
        #[arg(long, default_value = "P,M,T", conflicts_with = "features")]
        groups: Groups,
        /// Explicit comma-separated feature names.
        #[arg(long, value_delimiter = ',')]
        features: Option<Vec<String>>,
        /// Start from an existing model file (its features and scaling are reused).
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        train: TrainOpts,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Cross-validated comparison of feature sets with and without tension.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Targets to evaluate.
        #[arg(long, value_delimiter = ',', default_value = "bpr,d_bpr,vel,d_vel")]
        targets: Vec<Target>,
        /// Base feature sets; each is also run with tension added. `FS` is
        /// the MI-selected set.
        #[arg(long, value_delimiter = ',', default_value = "none,P,M,P+M,FS")]
        sets: Vec<String>,
        #[arg(long, default_value_t = tension_core::eval_stats::DEFAULT_FOLDS)]
        folds: usize,
        #[command(flatten)]
        fs: FsOpts,
        #[command(flatten)]
        train: TrainOpts,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Finite-difference sensitivity of a trained model around each time step.
    Sensitivity {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = tension_core::eval_stats::DEFAULT_RADIUS)]
        radius: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Extract { score, matched, corpus, id, groups, score_opts, out_dir } => {
            commands::extract(score, matched, corpus, id, groups, &score_opts, &out_dir)
        }
        Command::Synth { pieces, length, seed, rule, noise, score_opts, out_dir } => {
            commands::synth(pieces, length, seed, rule, noise, &score_opts, &out_dir)
        }
        Command::Mi { data, fs, out_dir } => commands::mi(&data, &fs, &out_dir),
        Command::Train { data, target, groups, features, init, seed, train, out_dir } => {
            commands::train(&data, target, groups, features, init, seed, &train, &out_dir)
        }
        Command::Eval { data, seed, targets, sets, folds, fs, train, out_dir } => {
            commands::eval(&data, seed, &targets, &sets, folds, &fs, &train, &out_dir)
        }
        Command::Sensitivity { model, data, radius, out_dir } => commands::sensitivity(&model, &data, radius, &out_dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
