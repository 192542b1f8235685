//! Argument definitions. A JSON config file can pre-fill any optional
//! flag; explicitly passed flags win.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

#[derive(Parser, Debug)]
#[command(
    name = "affectcal",
    version,
    about = "Calibration-aware post-processing for frame-level affect prediction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a deterministic synthetic dataset.
    Synth(SynthArgs),
    /// Train a prediction head on a labeled manifest.
    Train(TrainArgs),
    /// Fit calibration (logit biases or per-channel thresholds).
    Calibrate(CalibrateArgs),
    /// Produce prediction tracks (and optionally score streams).
    Predict(PredictArgs),
    /// Blend two score-stream directories with a fusion weight.
    Fuse(FuseArgs),
    /// Score prediction tracks against a labeled manifest.
    Evaluate(EvaluateArgs),
    /// Emit a table of metrics across pipeline variants.
    Ablate(AblateArgs),
}

/// Optional JSON config; any field left unset on the command line falls
/// back to the value here.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub task: Option<String>,
    pub seed: Option<u64>,
    pub hidden: Option<usize>,
    pub tcn_channels: Option<usize>,
    pub loss: Option<String>,
    pub weight_mode: Option<String>,
    pub focal_gamma: Option<f64>,
    pub violent_weight: Option<f64>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub weight_decay: Option<f64>,
    pub smooth_t: Option<usize>,
    pub gate_p0: Option<f64>,
    pub fusion_w: Option<f64>,
    pub grid_lo: Option<f64>,
    pub grid_hi: Option<f64>,
    pub grid_step: Option<f64>,
    pub max_passes: Option<usize>,
    pub gla_init: Option<String>,
    pub clip_len: Option<usize>,
    pub frame_step: Option<usize>,
    pub infer_stride: Option<usize>,
    pub decision_threshold: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON config file supplying defaults for unset flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Seed for every random choice in the command.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Task: expr, va, au, vd, or audio.
    #[arg(long)]
    pub task: Option<String>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,

    /// Output directory for the dataset and its manifest.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(long)]
    pub num_videos: Option<usize>,

    #[arg(long)]
    pub frames: Option<usize>,

    #[arg(long)]
    pub dim: Option<usize>,

    /// Comma-separated class weights (must sum to 1).
    #[arg(long)]
    pub class_weights: Option<String>,

    #[arg(long)]
    pub segment_mean: Option<f64>,

    #[arg(long)]
    pub noise_sigma: Option<f64>,

    #[arg(long)]
    pub flip_prob: Option<f64>,

    /// Also emit audio features with this agreement fraction.
    #[arg(long)]
    pub audio_agreement: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,

    /// Labeled dataset manifest.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Output directory for model.json and losslog.csv.
    #[arg(long)]
    pub out: PathBuf,

    /// Head architecture: expr, va, au, or vd (default chosen by task).
    #[arg(long)]
    pub preset: Option<String>,

    /// Hidden width for the single-hidden-layer presets.
    #[arg(long)]
    pub hidden: Option<usize>,

    /// Channel width of the 5-layer temporal stack (violence task).
    #[arg(long)]
    pub tcn_channels: Option<usize>,

    /// Loss: weighted_softmax, mse_ccc, weighted_binary, weighted_ce, focal.
    #[arg(long)]
    pub loss: Option<String>,

    /// Class-weight derivation: inverse_frequency or frequency_proportional.
    #[arg(long)]
    pub weight_mode: Option<String>,

    #[arg(long)]
    pub focal_gamma: Option<f64>,

    #[arg(long)]
    pub violent_weight: Option<f64>,

    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub weight_decay: Option<f64>,

    /// Feature source: video or audio.
    #[arg(long)]
    pub modality: Option<String>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: Common,

    /// Labeled calibration manifest.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Trained model state (model.json).
    #[arg(long)]
    pub model: PathBuf,

    /// Output directory for calibration.json.
    #[arg(long)]
    pub out: PathBuf,

    /// Calibration kind: gla or thresholds (default chosen by task).
    #[arg(long)]
    pub mode: Option<String>,

    /// Bias initialization: prior or zero.
    #[arg(long)]
    pub gla_init: Option<String>,

    #[arg(long)]
    pub grid_lo: Option<f64>,

    #[arg(long)]
    pub grid_hi: Option<f64>,

    #[arg(long)]
    pub grid_step: Option<f64>,

    #[arg(long)]
    pub max_passes: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[command(flatten)]
    pub common: Common,

    /// Dataset manifest (labels not required).
    #[arg(long)]
    pub manifest: PathBuf,

    /// Trained model state; omit when decoding --scores-dir directly.
    #[arg(long)]
    pub model: Option<PathBuf>,

    /// Pre-computed score streams (<video_id>.csv), bypassing the model.
    #[arg(long)]
    pub scores_dir: Option<PathBuf>,

    /// Output directory (preds/ and optionally scores/).
    #[arg(long)]
    pub out: PathBuf,

    /// Calibration artifact supplying the logit biases.
    #[arg(long)]
    pub bias: Option<PathBuf>,

    /// Calibration artifact supplying the per-channel thresholds.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,

    /// Smoothing window T (even; T+1 frames centered).
    #[arg(long = "smooth-T")]
    pub smooth_t: Option<usize>,

    /// Confidence-gate threshold.
    #[arg(long)]
    pub gate_p0: Option<f64>,

    /// Directory of pre-trained score streams for the gate.
    #[arg(long)]
    pub gate_scores_dir: Option<PathBuf>,

    /// Also write the (calibrated, unsmoothed) score streams.
    #[arg(long)]
    pub emit_scores: bool,

    /// Feature source: video or audio.
    #[arg(long)]
    pub modality: Option<String>,

    #[arg(long)]
    pub clip_len: Option<usize>,

    #[arg(long)]
    pub frame_step: Option<usize>,

    #[arg(long)]
    pub infer_stride: Option<usize>,

    #[arg(long)]
    pub decision_threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct FuseArgs {
    #[command(flatten)]
    pub common: Common,

    /// Manifest listing the videos to fuse.
    #[arg(long)]
    pub manifest: PathBuf,

    #[arg(long)]
    pub scores_a: PathBuf,

    #[arg(long)]
    pub scores_b: PathBuf,

    /// Weight of the first stream.
    #[arg(long)]
    pub fusion_w: Option<f64>,

    /// Sweep w over 0..1 (step 0.05) against the manifest labels and
    /// report the best weight instead of writing one blend.
    #[arg(long)]
    pub sweep: bool,

    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,

    /// Labeled manifest with ground truth.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Directory of prediction tracks (<video_id>.csv).
    #[arg(long)]
    pub pred_dir: PathBuf,

    /// Where to write metrics.json / metrics.txt (defaults to pred_dir's
    /// parent).
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Also emit metrics.csv with one row per video plus a pooled row.
    #[arg(long)]
    pub csv: bool,

    /// Average per-video reports instead of pooling frames.
    #[arg(long)]
    pub per_video: bool,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,

    /// Labeled manifest to score every variant on.
    #[arg(long)]
    pub manifest: PathBuf,

    /// Trained model state.
    #[arg(long)]
    pub model: PathBuf,

    /// Calibration artifact with biases.
    #[arg(long)]
    pub bias: Option<PathBuf>,

    /// Pre-trained score streams enabling the filtering rows.
    #[arg(long)]
    pub gate_scores_dir: Option<PathBuf>,

    /// Second-modality score streams enabling the fusion rows.
    #[arg(long)]
    pub audio_scores_dir: Option<PathBuf>,

    #[arg(long = "smooth-T")]
    pub smooth_t: Option<usize>,

    #[arg(long)]
    pub gate_p0: Option<f64>,

    #[arg(long)]
    pub fusion_w: Option<f64>,

    #[arg(long)]
    pub out: PathBuf,
}
