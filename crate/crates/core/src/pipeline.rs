//! Manifest-level plumbing and the per-task prediction chains.
//!
//! The pieces in [`temporal`](crate::temporal) and
//! [`calibrate`](crate::calibrate) are pure stream transforms; this module
//! strings them together in pipeline order (calibrate, smooth, gate or
//! decode) and handles dataset loading, training-set assembly, and the
//! clip-based violence path.

use std::path::{Path, PathBuf};

use crate::calibrate::adjusted_probabilities;
use crate::datamodel::io::{
    load_feature_stream, load_label_track, load_manifest, resolve_path,
};
use crate::datamodel::{
    align_audio_to_video, DatasetManifest, FeatureStream, LabelTrack, Labels, ManifestEntry,
    ScoreKind, ScoreStream, TaskKind,
};
use crate::error::{Error, Result};
use crate::nn::{predict_scores, NetworkState, TrainData, TrainTargets, TrainVideo};
use crate::temporal::{
    confidence_gate, decode, smooth, vd_aggregate, vd_make_clips, GateConfig, SmoothingConfig,
    VdWindowConfig, WindowProbs,
};

/// One manifest entry with its files loaded.
#[derive(Debug, Clone)]
pub struct LoadedVideo {
    pub entry: ManifestEntry,
    pub features: FeatureStream,
    pub labels: Option<LabelTrack>,
    pub audio: Option<FeatureStream>,
}

/// Loads a manifest and every file it references. Paths resolve relative
/// to the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<(DatasetManifest, Vec<LoadedVideo>)> {
    let manifest = load_manifest(manifest_path)?;
    let mut videos = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let features = load_feature_stream(&resolve_path(manifest_path, &entry.feature_path))?;
        let labels = entry
            .label_path
            .as_ref()
            .map(|p| load_label_track(&resolve_path(manifest_path, p)))
            .transpose()?;
        let audio = entry
            .audio_feature_path
            .as_ref()
            .map(|p| load_feature_stream(&resolve_path(manifest_path, p)))
            .transpose()?;
        if let Some(l) = &labels {
            if l.video_id != entry.video_id {
                return Err(Error::Format(format!(
                    "label file for '{}' carries video_id '{}'",
                    entry.video_id, l.video_id
                )));
            }
        }
        videos.push(LoadedVideo {
            entry: entry.clone(),
            features,
            labels,
            audio,
        });
    }
    Ok((manifest, videos))
}

/// Which feature stream feeds the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Video,
    Audio,
}

/// The modality's features on the video frame timeline (audio features are
/// resampled by nearest timestamp).
pub fn modality_features(video: &LoadedVideo, modality: Modality) -> Result<FeatureStream> {
    match modality {
        Modality::Video => Ok(video.features.clone()),
        Modality::Audio => {
            let audio = video.audio.as_ref().ok_or_else(|| {
                Error::Config(format!("video '{}' has no audio features", video.entry.video_id))
            })?;
            align_audio_to_video(audio, &video.features.frame_ids, video.features.frame_rate_hz)
        }
    }
}

/// Per-video frame training data (masked frames dropped).
pub fn frame_train_data(videos: &[LoadedVideo], modality: Modality) -> Result<TrainData> {
    let mut out = Vec::with_capacity(videos.len());
    for v in videos {
        let labels = v.labels.as_ref().ok_or_else(|| {
            Error::Config(format!("video '{}' has no labels for training", v.entry.video_id))
        })?;
        let features = modality_features(v, modality)?;
        out.push(crate::nn::train_video_from(&features, labels)?);
    }
    Ok(TrainData::Frames(out))
}

/// Clip-based training data for the temporal head. Every clip carries one
/// class label per sampled row; clips touching an unannotated frame are
/// dropped.
pub fn vd_train_data(videos: &[LoadedVideo], cfg: &VdWindowConfig) -> Result<TrainData> {
    let mut clips_out = Vec::new();
    for v in videos {
        let labels = v.labels.as_ref().ok_or_else(|| {
            Error::Config(format!("video '{}' has no labels for training", v.entry.video_id))
        })?;
        if labels.frame_ids != v.features.frame_ids {
            return Err(Error::Align(format!(
                "feature and label timelines differ for video '{}'",
                v.entry.video_id
            )));
        }
        let Labels::Class(ys) = &labels.labels else {
            return Err(Error::Shape("violence training needs class labels".into()));
        };
        for clip in vd_make_clips(&v.features, cfg, true)? {
            if clip.frame_rows.iter().any(|&f| !labels.mask[f]) {
                continue;
            }
            let y: Vec<usize> = clip.frame_rows.iter().map(|&f| ys[f]).collect();
            clips_out.push(TrainVideo {
                x: clip.rows,
                y: TrainTargets::Class(y),
            });
        }
    }
    if clips_out.is_empty() {
        return Err(Error::EmptyInput("no fully annotated clips".into()));
    }
    Ok(TrainData::Sequences(clips_out))
}

/// Truth tracks of every labeled video.
pub fn truth_tracks(videos: &[LoadedVideo]) -> Vec<LabelTrack> {
    videos.iter().filter_map(|v| v.labels.clone()).collect()
}

/// Expression-style prediction chain: optional bias adjustment, sliding
/// mean smoothing, then either plain argmax decoding or the confidence
/// gate against a smoothed pre-trained stream (same window).
/// Returns the decoded track and the per-frame gate mask.
pub fn classify_pipeline(
    task: TaskKind,
    mlp_probs: &ScoreStream,
    bias: Option<&[f64]>,
    smooth_cfg: &SmoothingConfig,
    gate: Option<(&ScoreStream, &GateConfig)>,
) -> Result<(LabelTrack, Vec<bool>)> {
    let calibrated = match bias {
        Some(b) => adjusted_probabilities(mlp_probs, b)?,
        None => mlp_probs.clone(),
    };
    let smoothed = smooth(&calibrated, smooth_cfg)?;
    match gate {
        Some((pretrained, cfg)) => {
            let pre_smoothed = smooth(pretrained, smooth_cfg)?;
            let gated = confidence_gate(&pre_smoothed, &smoothed, cfg)?;
            let track = LabelTrack::new(
                smoothed.video_id.clone(),
                task,
                smoothed.frame_ids.clone(),
                Labels::Class(gated.classes),
                vec![true; smoothed.num_frames()],
            )?;
            Ok((track, gated.gated))
        }
        None => {
            let track = decode(&smoothed, task, None)?;
            let n = track.num_frames();
            Ok((track, vec![false; n]))
        }
    }
}

/// Valence/arousal chain: clamp raw head outputs into range, smooth, and
/// decode.
pub fn va_pipeline(raw: &ScoreStream, smooth_cfg: &SmoothingConfig) -> Result<LabelTrack> {
    let clamped = ScoreStream::new(
        raw.video_id.clone(),
        raw.frame_ids.clone(),
        raw.scores.map(|v| v.clamp(-1.0, 1.0)),
        ScoreKind::Continuous,
    )?;
    let smoothed = smooth(&clamped, smooth_cfg)?;
    decode(&smoothed, TaskKind::Va, None)
}

/// Action-unit chain: smooth the sigmoid outputs, then threshold each
/// channel.
pub fn au_pipeline(
    probs: &ScoreStream,
    smooth_cfg: &SmoothingConfig,
    thresholds: &[f64],
) -> Result<LabelTrack> {
    let smoothed = smooth(probs, smooth_cfg)?;
    decode(&smoothed, TaskKind::Au, Some(thresholds))
}

/// Violence chain: sliding clip inference, per-frame probability averaging
/// across overlapping windows, then thresholding. Returns the per-frame
/// `[non-violent, violent]` probability stream and the decision track.
pub fn vd_pipeline(
    state: &NetworkState,
    features: &FeatureStream,
    cfg: &VdWindowConfig,
) -> Result<(ScoreStream, LabelTrack)> {
    let clips = vd_make_clips(features, cfg, false)?;
    let mut windows = Vec::with_capacity(clips.len());
    for clip in &clips {
        let out = crate::nn::forward(state, &clip.rows)?;
        if out.head.cols() != 2 {
            return Err(Error::Shape(format!(
                "violence head must have 2 outputs, got {}",
                out.head.cols()
            )));
        }
        windows.push(WindowProbs {
            probs: (0..out.head.rows()).map(|r| out.head.get(r, 1)).collect(),
            frame_rows: clip.frame_rows.clone(),
        });
    }
    let agg = vd_aggregate(&windows, features.num_frames(), cfg)?;
    let rows: Vec<Vec<f64>> = agg.probs.iter().map(|&p| vec![1.0 - p, p]).collect();
    let stream = ScoreStream::new(
        features.video_id.clone(),
        features.frame_ids.clone(),
        crate::mat::Mat::from_rows(&rows)?,
        ScoreKind::Probability,
    )?;
    let track = LabelTrack::new(
        features.video_id.clone(),
        TaskKind::Vd,
        features.frame_ids.clone(),
        Labels::Class(agg.decisions.iter().map(|&d| d as usize).collect()),
        vec![true; features.num_frames()],
    )?;
    Ok((stream, track))
}

/// Raw per-frame model outputs for one video (probability kind for
/// classifier heads, logit kind for the linear head).
pub fn model_scores(state: &NetworkState, features: &FeatureStream) -> Result<ScoreStream> {
    predict_scores(state, features)
}

/// Stable per-video output file name inside a score/prediction directory.
pub fn stream_file(dir: &Path, video_id: &str) -> PathBuf {
    dir.join(format!("{video_id}.csv"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{train, Hyper, LossKind, LossSpec, NetworkSpec, TcnSpec};
    use crate::synth::{generate, SynthConfig};
    use tempfile::tempdir;

    #[test]
    fn load_dataset_roundtrips_synth_output() {
        let mut cfg = SynthConfig::new(TaskKind::Expr);
        cfg.num_videos = 2;
        cfg.frames_per_video = 50;
        cfg.audio_agreement = Some(0.7);
        let dir = tempdir().unwrap();
        let (_, mpath) = generate(&cfg, dir.path()).unwrap();
        let (manifest, videos) = load_dataset(&mpath).unwrap();
        assert_eq!(manifest.entries.len(), 2);
        assert!(videos.iter().all(|v| v.labels.is_some() && v.audio.is_some()));
        // audio aligns onto the video timeline
        let af = modality_features(&videos[0], Modality::Audio).unwrap();
        assert_eq!(af.frame_ids, videos[0].features.frame_ids);
    }

    #[test]
    fn classify_pipeline_with_zero_window_and_no_bias_is_argmax() {
        let rows = vec![
            vec![0.7, 0.1, 0.05, 0.05, 0.025, 0.025, 0.025, 0.025],
            vec![0.1, 0.1, 0.5, 0.1, 0.05, 0.05, 0.05, 0.05],
        ];
        let s = ScoreStream::new(
            "v".into(),
            vec![0, 1],
            crate::mat::Mat::from_rows(&rows).unwrap(),
            ScoreKind::Probability,
        )
        .unwrap();
        let (track, gated) =
            classify_pipeline(TaskKind::Expr, &s, None, &SmoothingConfig::new(0).unwrap(), None)
                .unwrap();
        let Labels::Class(ys) = &track.labels else { unreachable!() };
        assert_eq!(ys, &vec![0, 2]);
        assert!(gated.iter().all(|&g| !g));
    }

    #[test]
    fn vd_pipeline_end_to_end_on_synth() {
        let mut cfg = SynthConfig::new(TaskKind::Vd);
        cfg.class_weights = vec![0.5, 0.5];
        cfg.num_videos = 2;
        cfg.frames_per_video = 200;
        cfg.segment_mean_length = 40.0;
        cfg.feature_dim = 6;
        cfg.feature_noise_sigma = 0.2;
        let dir = tempdir().unwrap();
        let (_, mpath) = generate(&cfg, dir.path()).unwrap();
        let (_, videos) = load_dataset(&mpath).unwrap();

        let wcfg = VdWindowConfig::default();
        let data = vd_train_data(&videos, &wcfg).unwrap();
        let spec = NetworkSpec::vd_preset(6, TcnSpec::with_channels(8));
        let hyper = Hyper {
            epochs: 6,
            seed: 3,
            lr: 3e-3,
            ..Hyper::default()
        };
        let (state, _) = train(
            spec,
            &LossSpec::new(LossKind::WeightedCe),
            &data,
            None,
            &hyper,
        )
        .unwrap();

        let (stream, track) = vd_pipeline(&state, &videos[0].features, &wcfg).unwrap();
        assert_eq!(stream.num_frames(), 200);
        stream.check_rows_normalized(1e-9).unwrap();
        let truth = videos[0].labels.as_ref().unwrap();
        let report = crate::metrics::evaluate_tracks(
            std::slice::from_ref(&track),
            std::slice::from_ref(truth),
            TaskKind::Vd,
        )
        .unwrap();
        // trained on clearly separated centroids: should be far above chance
        assert!(report.macro_f1 > 0.8, "macro f1 {}", report.macro_f1);
    }

    #[test]
    fn frame_training_on_synth_reaches_high_accuracy() {
        let mut cfg = SynthConfig::new(TaskKind::Expr);
        cfg.num_videos = 2;
        cfg.frames_per_video = 500;
        cfg.segment_mean_length = 10.0;
        cfg.feature_dim = 8;
        cfg.feature_noise_sigma = 0.1;
        let dir = tempdir().unwrap();
        let (_, mpath) = generate(&cfg, dir.path()).unwrap();
        let (_, videos) = load_dataset(&mpath).unwrap();
        let data = frame_train_data(&videos, Modality::Video).unwrap();
        let tracks = truth_tracks(&videos);
        let priors = crate::datamodel::class_priors(&tracks, TaskKind::Expr).unwrap();
        let (state, _) = train(
            NetworkSpec::expr_preset(8, 32),
            &LossSpec::new(LossKind::WeightedSoftmax),
            &data,
            Some(&priors),
            &Hyper {
                epochs: 30,
                seed: 1,
                ..Hyper::default()
            },
        )
        .unwrap();
        let mut preds = Vec::new();
        for v in &videos {
            let scores = model_scores(&state, &v.features).unwrap();
            let (track, _) = classify_pipeline(
                TaskKind::Expr,
                &scores,
                None,
                &SmoothingConfig::new(0).unwrap(),
                None,
            )
            .unwrap();
            preds.push(track);
        }
        let report = crate::metrics::evaluate_tracks(&preds, &tracks, TaskKind::Expr).unwrap();
        assert!(report.accuracy > 0.95, "accuracy {}", report.accuracy);
    }
}
