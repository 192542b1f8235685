//! Shared data types: per-frame feature/score/label streams, dataset
//! manifests, and class prior tables, together with their on-disk formats
//! (see [`io`]).
//!
//! Frame timelines are explicit `frame_id` lists and are allowed to have
//! gaps (frames without a detected face are simply absent). All downstream
//! windowing operates on index adjacency, not frame-id distance.

pub mod io;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mat::Mat;

/// Prediction task. `Audio` is the acoustic variant of expression
/// classification and shares its 8-class label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Expr,
    Va,
    Au,
    Vd,
    Audio,
}

impl TaskKind {
    /// Number of output channels: 8 expression classes, 2 continuous
    /// valence/arousal outputs, 12 binary action units, 2 violence classes.
    pub fn num_outputs(self) -> usize {
        match self {
            TaskKind::Expr | TaskKind::Audio => 8,
            TaskKind::Va => 2,
            TaskKind::Au => 12,
            TaskKind::Vd => 2,
        }
    }

    pub fn is_classification(self) -> bool {
        matches!(self, TaskKind::Expr | TaskKind::Audio | TaskKind::Vd)
    }

    pub fn parse(s: &str) -> Result<TaskKind> {
        match s.to_ascii_lowercase().as_str() {
            "expr" => Ok(TaskKind::Expr),
            "va" => Ok(TaskKind::Va),
            "au" => Ok(TaskKind::Au),
            "vd" => Ok(TaskKind::Vd),
            "audio" => Ok(TaskKind::Audio),
            other => Err(Error::Config(format!("unknown task '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Expr => "expr",
            TaskKind::Va => "va",
            TaskKind::Au => "au",
            TaskKind::Vd => "vd",
            TaskKind::Audio => "audio",
        }
    }
}

/// Ordered class/channel names for one task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub task: TaskKind,
    pub names: Vec<String>,
}

impl LabelSet {
    /// Target expression order used by the frame-level annotations.
    pub fn affwild2_expr() -> LabelSet {
        LabelSet {
            task: TaskKind::Expr,
            names: [
                "Neutral",
                "Anger",
                "Disgust",
                "Fear",
                "Happiness",
                "Sadness",
                "Surprise",
                "Other",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }

    /// Source order of the pre-trained static-image classifier.
    pub fn affectnet() -> LabelSet {
        LabelSet {
            task: TaskKind::Expr,
            names: [
                "Anger",
                "Contempt",
                "Disgust",
                "Fear",
                "Happiness",
                "Neutral",
                "Sadness",
                "Surprise",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

fn check_video_id(id: &str) -> Result<()> {
    if id.is_empty() || id.chars().any(|c| c.is_whitespace() || c == ',') {
        return Err(Error::Value(format!(
            "video_id '{id}' must be non-empty and free of whitespace/commas"
        )));
    }
    Ok(())
}

fn check_frame_ids(frame_ids: &[u64]) -> Result<()> {
    for w in frame_ids.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::Order(format!(
                "frame_ids must be strictly increasing, saw {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Per-frame feature matrix for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStream {
    pub video_id: String,
    pub frame_ids: Vec<u64>,
    pub features: Mat,
    pub source_tag: String,
    pub frame_rate_hz: f64,
}

impl FeatureStream {
    pub fn new(
        video_id: String,
        frame_ids: Vec<u64>,
        features: Mat,
        source_tag: String,
        frame_rate_hz: f64,
    ) -> Result<Self> {
        check_video_id(&video_id)?;
        check_frame_ids(&frame_ids)?;
        if features.rows() != frame_ids.len() {
            return Err(Error::Shape(format!(
                "{} frame ids but {} feature rows",
                frame_ids.len(),
                features.rows()
            )));
        }
        if features.cols() == 0 {
            return Err(Error::Shape("feature dimension must be >= 1".into()));
        }
        if !features.all_finite() {
            return Err(Error::Value("non-finite feature value".into()));
        }
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::Value(format!("frame rate must be positive, got {frame_rate_hz}")));
        }
        Ok(FeatureStream {
            video_id,
            frame_ids,
            features,
            source_tag,
            frame_rate_hz,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// What the numbers in a [`ScoreStream`] mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// Per-class probabilities (simplex rows) or per-channel sigmoid outputs
    /// in [0, 1].
    Probability,
    /// Unbounded scores (raw or adjusted logits, raw regression outputs).
    Logit,
    /// Bounded continuous outputs in [-1, 1] (valence/arousal).
    Continuous,
}

impl ScoreKind {
    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Probability => "probability",
            ScoreKind::Logit => "logit",
            ScoreKind::Continuous => "continuous",
        }
    }

    pub fn parse(s: &str) -> Result<ScoreKind> {
        match s {
            "probability" => Ok(ScoreKind::Probability),
            "logit" => Ok(ScoreKind::Logit),
            "continuous" => Ok(ScoreKind::Continuous),
            other => Err(Error::Format(format!("unknown score kind '{other}'"))),
        }
    }
}

/// Per-frame score matrix aligned to a feature stream's timeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreStream {
    pub video_id: String,
    pub frame_ids: Vec<u64>,
    pub scores: Mat,
    pub kind: ScoreKind,
}

impl ScoreStream {
    pub fn new(video_id: String, frame_ids: Vec<u64>, scores: Mat, kind: ScoreKind) -> Result<Self> {
        check_video_id(&video_id)?;
        check_frame_ids(&frame_ids)?;
        if scores.rows() != frame_ids.len() {
            return Err(Error::Shape(format!(
                "{} frame ids but {} score rows",
                frame_ids.len(),
                scores.rows()
            )));
        }
        if !scores.all_finite() {
            return Err(Error::Value("non-finite score".into()));
        }
        match kind {
            ScoreKind::Probability => {
                if scores.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                    return Err(Error::Value("probability outside [0,1]".into()));
                }
            }
            ScoreKind::Continuous => {
                if scores.data().iter().any(|&v| !(-1.0..=1.0).contains(&v)) {
                    return Err(Error::Value("continuous score outside [-1,1]".into()));
                }
            }
            ScoreKind::Logit => {}
        }
        Ok(ScoreStream {
            video_id,
            frame_ids,
            scores,
            kind,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn num_channels(&self) -> usize {
        self.scores.cols()
    }

    /// Checks that every row is a probability simplex within `tol`.
    pub fn check_rows_normalized(&self, tol: f64) -> Result<()> {
        if self.kind != ScoreKind::Probability {
            return Err(Error::Value(format!(
                "expected probability stream, got {}",
                self.kind.name()
            )));
        }
        for (i, row) in self.scores.iter_rows().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > tol {
                return Err(Error::Value(format!("row {i} sums to {s}, not 1")));
            }
        }
        Ok(())
    }
}

/// Number of action-unit channels.
pub const NUM_AU: usize = 12;

/// Per-frame ground-truth payload.
#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    /// Class index per frame (expression / violence).
    Class(Vec<usize>),
    /// 12-bit action-unit vector per frame.
    Au(Vec<[u8; NUM_AU]>),
    /// (valence, arousal) pair per frame.
    Va(Vec<(f64, f64)>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Class(v) => v.len(),
            Labels::Au(v) => v.len(),
            Labels::Va(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-frame ground truth for one task, with an annotation mask
/// (`mask[i] == false` means frame `i` carries no usable label).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTrack {
    pub video_id: String,
    pub task: TaskKind,
    pub frame_ids: Vec<u64>,
    pub labels: Labels,
    pub mask: Vec<bool>,
}

impl LabelTrack {
    pub fn new(
        video_id: String,
        task: TaskKind,
        frame_ids: Vec<u64>,
        labels: Labels,
        mask: Vec<bool>,
    ) -> Result<Self> {
        check_video_id(&video_id)?;
        check_frame_ids(&frame_ids)?;
        if labels.len() != frame_ids.len() || mask.len() != frame_ids.len() {
            return Err(Error::Shape(format!(
                "label track lengths disagree: {} ids, {} labels, {} mask entries",
                frame_ids.len(),
                labels.len(),
                mask.len()
            )));
        }
        match (&labels, task) {
            (Labels::Class(v), TaskKind::Expr | TaskKind::Audio | TaskKind::Vd) => {
                let c = task.num_outputs();
                if let Some(bad) = v.iter().find(|&&y| y >= c) {
                    return Err(Error::Value(format!("class index {bad} out of range for {c} classes")));
                }
            }
            (Labels::Au(v), TaskKind::Au) => {
                if v.iter().flatten().any(|&b| b > 1) {
                    return Err(Error::Value("action-unit bits must be 0 or 1".into()));
                }
            }
            (Labels::Va(v), TaskKind::Va) => {
                for &(a, b) in v {
                    if !(a.is_finite() && b.is_finite() && (-1.0..=1.0).contains(&a) && (-1.0..=1.0).contains(&b)) {
                        return Err(Error::Value(format!("valence/arousal ({a}, {b}) outside [-1,1]")));
                    }
                }
            }
            _ => {
                return Err(Error::Shape(format!(
                    "label payload does not match task {}",
                    task.name()
                )))
            }
        }
        Ok(LabelTrack {
            video_id,
            task,
            frame_ids,
            labels,
            mask,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn num_annotated(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// One video's worth of files in a [`DatasetManifest`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub video_id: String,
    pub feature_path: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub label_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub audio_feature_path: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub audio_rate_hz: Option<f64>,
}

/// List of videos making up one split of a dataset. Paths are interpreted
/// relative to the manifest file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub task: TaskKind,
    pub split: String,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.video_id.as_str()) {
                return Err(Error::Value(format!(
                    "duplicate video_id '{}' in manifest",
                    e.video_id
                )));
            }
        }
        Ok(())
    }
}

/// Per-class training frame counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPriorTable {
    pub counts: Vec<u64>,
    pub total: u64,
}

impl ClassPriorTable {
    /// Table for a single-label task: counts must sum to the total.
    pub fn from_class_counts(counts: Vec<u64>) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::EmptyInput("no annotated frames".into()));
        }
        Ok(ClassPriorTable { counts, total })
    }

    /// Table for a multi-label task: `counts[c]` is the number of frames
    /// where channel `c` is positive; `total` is the number of annotated
    /// frames. Counts need not sum to the total here.
    pub fn from_channel_counts(counts: Vec<u64>, total: u64) -> Result<Self> {
        if total == 0 {
            return Err(Error::EmptyInput("no annotated frames".into()));
        }
        if counts.iter().any(|&c| c > total) {
            return Err(Error::Value("channel count exceeds total".into()));
        }
        Ok(ClassPriorTable { counts, total })
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    /// Normalized priors `N_y / N`.
    pub fn priors(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|&c| c as f64 / self.total as f64)
            .collect()
    }
}

/// Counts annotated frames per class (single-label tasks) or positive
/// frames per channel (action units). Masked frames are excluded.
pub fn class_priors(tracks: &[LabelTrack], task: TaskKind) -> Result<ClassPriorTable> {
    if tracks.is_empty() {
        return Err(Error::EmptyInput("no label tracks".into()));
    }
    match task {
        TaskKind::Expr | TaskKind::Audio | TaskKind::Vd => {
            let c = task.num_outputs();
            let mut counts = vec![0u64; c];
            for t in tracks {
                let Labels::Class(ys) = &t.labels else {
                    return Err(Error::Shape(format!(
                        "track '{}' does not carry class labels",
                        t.video_id
                    )));
                };
                for (y, &m) in ys.iter().zip(&t.mask) {
                    if m {
                        counts[*y] += 1;
                    }
                }
            }
            ClassPriorTable::from_class_counts(counts)
        }
        TaskKind::Au => {
            let mut counts = vec![0u64; NUM_AU];
            let mut total = 0u64;
            for t in tracks {
                let Labels::Au(bits) = &t.labels else {
                    return Err(Error::Shape(format!(
                        "track '{}' does not carry action-unit labels",
                        t.video_id
                    )));
                };
                for (row, &m) in bits.iter().zip(&t.mask) {
                    if m {
                        total += 1;
                        for (c, &b) in row.iter().enumerate() {
                            counts[c] += b as u64;
                        }
                    }
                }
            }
            ClassPriorTable::from_channel_counts(counts, total)
        }
        TaskKind::Va => Err(Error::Config("class priors are undefined for the continuous task".into())),
    }
}

/// Resamples an audio feature stream onto a video frame timeline by
/// nearest timestamp (ties resolve to the earlier audio row). The output
/// has exactly one row per video frame.
pub fn align_audio_to_video(
    audio: &FeatureStream,
    video_frame_ids: &[u64],
    video_rate_hz: f64,
) -> Result<FeatureStream> {
    if audio.num_frames() == 0 {
        return Err(Error::EmptyInput("audio stream has no frames".into()));
    }
    if !(video_rate_hz.is_finite() && video_rate_hz > 0.0) {
        return Err(Error::Value(format!("video rate must be positive, got {video_rate_hz}")));
    }
    check_frame_ids(video_frame_ids)?;

    let audio_times: Vec<f64> = audio
        .frame_ids
        .iter()
        .map(|&f| f as f64 / audio.frame_rate_hz)
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(video_frame_ids.len());
    // audio timestamps are sorted, so advance a cursor instead of scanning
    let mut j = 0usize;
    for &vf in video_frame_ids {
        let t = vf as f64 / video_rate_hz;
        while j + 1 < audio_times.len() {
            let d_cur = (audio_times[j] - t).abs();
            let d_next = (audio_times[j + 1] - t).abs();
            // strict improvement only: ties keep the earlier row
            if d_next < d_cur {
                j += 1;
            } else {
                break;
            }
        }
        rows.push(audio.features.row(j).to_vec());
    }

    FeatureStream::new(
        audio.video_id.clone(),
        video_frame_ids.to_vec(),
        Mat::from_rows(&rows)?,
        audio.source_tag.clone(),
        video_rate_hz,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feat(
        ids: &[u64],
        rows: &[Vec<f64>],
        rate: f64,
    ) -> FeatureStream {
        FeatureStream::new(
            "v".into(),
            ids.to_vec(),
            Mat::from_rows(rows).unwrap(),
            "test".into(),
            rate,
        )
        .unwrap()
    }

    #[test]
    fn feature_stream_rejects_bad_order() {
        let err = FeatureStream::new(
            "v".into(),
            vec![5, 3],
            Mat::from_rows(&[vec![0.0], vec![1.0]]).unwrap(),
            "t".into(),
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Order(_)));
    }

    #[test]
    fn feature_stream_rejects_nan() {
        let err = FeatureStream::new(
            "v".into(),
            vec![0, 1],
            Mat::from_rows(&[vec![0.0], vec![f64::NAN]]).unwrap(),
            "t".into(),
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Value(_)));
    }

    #[test]
    fn expr_label_order_is_fixed() {
        let ls = LabelSet::affwild2_expr();
        assert_eq!(ls.names[0], "Neutral");
        assert_eq!(ls.names[7], "Other");
        assert_eq!(ls.len(), 8);
        let src = LabelSet::affectnet();
        assert_eq!(src.names[1], "Contempt");
        assert_eq!(src.len(), 8);
    }

    #[test]
    fn align_equal_rates_is_identity() {
        let a = feat(&[0, 1, 2], &[vec![1.0], vec![2.0], vec![3.0]], 2.0);
        let out = align_audio_to_video(&a, &[0, 1, 2], 2.0).unwrap();
        assert_eq!(out.features, a.features);
    }

    #[test]
    fn align_half_rate_repeats_rows() {
        // audio 2 rows at 1 Hz (t = 0, 1), video 4 frames at 2 Hz
        // (t = 0, 0.5, 1, 1.5) -> rows [0, 0, 1, 1], tie at 0.5 goes earlier
        let a = feat(&[0, 1], &[vec![10.0], vec![20.0]], 1.0);
        let out = align_audio_to_video(&a, &[0, 1, 2, 3], 2.0).unwrap();
        let got: Vec<f64> = out.features.iter_rows().map(|r| r[0]).collect();
        assert_eq!(got, vec![10.0, 10.0, 20.0, 20.0]);
    }

    #[test]
    fn align_single_audio_row_extends() {
        let a = feat(&[0], &[vec![7.0]], 1.0);
        let out = align_audio_to_video(&a, &[0, 1, 2, 3, 4], 30.0).unwrap();
        assert_eq!(out.num_frames(), 5);
        assert!(out.features.iter_rows().all(|r| r[0] == 7.0));
    }

    #[test]
    fn align_empty_audio_errors() {
        let a = FeatureStream {
            video_id: "v".into(),
            frame_ids: vec![],
            features: Mat::zeros(0, 1),
            source_tag: "t".into(),
            frame_rate_hz: 1.0,
        };
        assert!(matches!(
            align_audio_to_video(&a, &[0], 1.0),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn priors_count_unmasked_only() {
        let t = LabelTrack::new(
            "v".into(),
            TaskKind::Vd,
            vec![0, 1, 2],
            Labels::Class(vec![0, 0, 1]),
            vec![true, true, true],
        )
        .unwrap();
        let p = class_priors(&[t], TaskKind::Vd).unwrap();
        assert_eq!(p.counts, vec![2, 1]);
        assert_eq!(p.total, 3);
    }

    #[test]
    fn priors_all_masked_is_empty_input() {
        let t = LabelTrack::new(
            "v".into(),
            TaskKind::Vd,
            vec![0, 1],
            Labels::Class(vec![0, 1]),
            vec![false, false],
        )
        .unwrap();
        assert!(matches!(
            class_priors(&[t], TaskKind::Vd),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn priors_balanced_eight_class() {
        let t = LabelTrack::new(
            "v".into(),
            TaskKind::Expr,
            (0..8).collect(),
            Labels::Class((0..8).collect()),
            vec![true; 8],
        )
        .unwrap();
        let p = class_priors(&[t], TaskKind::Expr).unwrap();
        assert!(p.priors().iter().all(|&q| (q - 0.125).abs() < 1e-15));
    }

    #[test]
    fn priors_invariant_under_track_order() {
        let a = LabelTrack::new(
            "a".into(),
            TaskKind::Vd,
            vec![0, 1],
            Labels::Class(vec![0, 1]),
            vec![true; 2],
        )
        .unwrap();
        let b = LabelTrack::new(
            "b".into(),
            TaskKind::Vd,
            vec![0],
            Labels::Class(vec![1]),
            vec![true],
        )
        .unwrap();
        let p1 = class_priors(&[a.clone(), b.clone()], TaskKind::Vd).unwrap();
        let p2 = class_priors(&[b, a], TaskKind::Vd).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn score_stream_checks_ranges() {
        let bad = ScoreStream::new(
            "v".into(),
            vec![0],
            Mat::from_rows(&[vec![1.2, -0.2]]).unwrap(),
            ScoreKind::Probability,
        );
        assert!(bad.is_err());
        let ok = ScoreStream::new(
            "v".into(),
            vec![0],
            Mat::from_rows(&[vec![1.2, -0.2]]).unwrap(),
            ScoreKind::Logit,
        );
        assert!(ok.is_ok());
    }
}
