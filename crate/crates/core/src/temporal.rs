//! Inference-time stream transforms: sliding-window smoothing, confidence
//! gating against a pre-trained score stream, late fusion, decoding to
//! label tracks, and overlapping-window aggregation for video-level
//! violence detection.

use serde::{Deserialize, Serialize};

use crate::datamodel::{
    FeatureStream, LabelSet, LabelTrack, Labels, ScoreKind, ScoreStream, TaskKind, NUM_AU,
};
use crate::error::{Error, Result};
use crate::mat::Mat;

/// Centered sliding-mean configuration. The window spans `window + 1`
/// frames (`window / 2` on each side), truncating at stream boundaries.
/// `max_gap`, when set, stops the window at any adjacent pair of frames
/// whose frame-id distance exceeds it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub window: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub max_gap: Option<u64>,
}

impl SmoothingConfig {
    pub fn new(window: usize) -> Result<Self> {
        if !window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "smoothing window must be even (T+1 frames centered), got {window}"
            )));
        }
        Ok(SmoothingConfig {
            window,
            max_gap: None,
        })
    }

    pub fn with_max_gap(mut self, gap: u64) -> Self {
        self.max_gap = Some(gap);
        self
    }
}

/// Mean of index-adjacent rows in a centered window of `window + 1` frames,
/// truncated at the boundaries. Probability rows stay on the simplex
/// (a mean of simplex points is a simplex point); the kind is preserved.
pub fn smooth(scores: &ScoreStream, cfg: &SmoothingConfig) -> Result<ScoreStream> {
    if scores.kind == ScoreKind::Logit {
        return Err(Error::Value(
            "smoothing expects probability or continuous scores".into(),
        ));
    }
    if !cfg.window.is_multiple_of(2) {
        return Err(Error::Config("smoothing window must be even".into()));
    }
    let half = cfg.window / 2;
    let n = scores.num_frames();
    let c = scores.num_channels();
    let mut out = Mat::zeros(n, c);
    for t in 0..n {
        let mut lo = t.saturating_sub(half);
        let mut hi = (t + half).min(n.saturating_sub(1));
        if let Some(gap) = cfg.max_gap {
            // walk outward from t and stop at the first oversized gap
            let mut l = t;
            while l > lo && scores.frame_ids[l] - scores.frame_ids[l - 1] <= gap {
                l -= 1;
            }
            let mut h = t;
            while h < hi && scores.frame_ids[h + 1] - scores.frame_ids[h] <= gap {
                h += 1;
            }
            lo = l;
            hi = h;
        }
        let count = (hi - lo + 1) as f64;
        let row = out.row_mut(t);
        for src in lo..=hi {
            for (o, v) in row.iter_mut().zip(scores.scores.row(src)) {
                *o += v;
            }
        }
        for v in row.iter_mut() {
            *v /= count;
        }
    }
    ScoreStream::new(
        scores.video_id.clone(),
        scores.frame_ids.clone(),
        out,
        scores.kind,
    )
}

/// Confidence-gate configuration: threshold `p0`, the source and target
/// label sets, and the per-source-class mapping into the target set
/// (`None` = class does not exist in the target vocabulary).
#[derive(Debug, Clone, PartialEq)]
pub struct GateConfig {
    pub p0: f64,
    pub source_labels: LabelSet,
    pub target_labels: LabelSet,
    pub mapping: Vec<Option<usize>>,
}

impl GateConfig {
    /// Identity-by-name mapping from the pre-trained model's classes to the
    /// target classes. Contempt has no counterpart and stays unmapped;
    /// nothing maps to Other.
    pub fn affectnet_to_affwild2(p0: f64) -> Result<Self> {
        let source = LabelSet::affectnet();
        let target = LabelSet::affwild2_expr();
        let mapping = source
            .names
            .iter()
            .map(|n| target.index_of(n))
            .collect();
        let cfg = GateConfig {
            p0,
            source_labels: source,
            target_labels: target,
            mapping,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p0.is_finite() && self.p0 > 0.0 && self.p0 <= 1.0) {
            return Err(Error::Config(format!("gate threshold must be in (0,1], got {}", self.p0)));
        }
        if self.mapping.len() != self.source_labels.len() {
            return Err(Error::Config("gate mapping length must match source classes".into()));
        }
        let c = self.target_labels.len();
        if self.mapping.iter().flatten().any(|&i| i >= c) {
            return Err(Error::Config("gate mapping index out of target range".into()));
        }
        Ok(())
    }
}

/// Gate decision per frame: the predicted target class and whether the
/// pre-trained stream supplied it.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedPrediction {
    pub classes: Vec<usize>,
    pub gated: Vec<bool>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Adopts the pre-trained model's class wherever its smoothed top
/// probability strictly exceeds `p0` and that class exists in the target
/// set; everywhere else the fallback stream's argmax is used.
pub fn confidence_gate(
    pretrained: &ScoreStream,
    fallback: &ScoreStream,
    cfg: &GateConfig,
) -> Result<GatedPrediction> {
    cfg.validate()?;
    if pretrained.frame_ids != fallback.frame_ids {
        return Err(Error::Align(
            "pre-trained and fallback streams must share a frame timeline".into(),
        ));
    }
    if pretrained.num_channels() != cfg.source_labels.len() {
        return Err(Error::Shape(format!(
            "pre-trained stream has {} channels, source label set has {}",
            pretrained.num_channels(),
            cfg.source_labels.len()
        )));
    }
    if fallback.num_channels() != cfg.target_labels.len() {
        return Err(Error::Shape(format!(
            "fallback stream has {} channels, target label set has {}",
            fallback.num_channels(),
            cfg.target_labels.len()
        )));
    }
    let n = pretrained.num_frames();
    let mut classes = Vec::with_capacity(n);
    let mut gated = Vec::with_capacity(n);
    for t in 0..n {
        let row = pretrained.scores.row(t);
        let src = argmax(row);
        // strict comparison: a probability equal to p0 is not confident enough
        if row[src] > cfg.p0 {
            if let Some(target) = cfg.mapping[src] {
                classes.push(target);
                gated.push(true);
                continue;
            }
        }
        classes.push(argmax(fallback.scores.row(t)));
        gated.push(false);
    }
    Ok(GatedPrediction { classes, gated })
}

/// Convex combination `w * a + (1 - w) * b` of two probability streams on
/// the same timeline.
pub fn blend(a: &ScoreStream, b: &ScoreStream, w: f64) -> Result<ScoreStream> {
    if !(0.0..=1.0).contains(&w) || !w.is_finite() {
        return Err(Error::Config(format!("fusion weight must be in [0,1], got {w}")));
    }
    if a.kind != ScoreKind::Probability || b.kind != ScoreKind::Probability {
        return Err(Error::Value("fusion expects probability streams".into()));
    }
    if a.frame_ids != b.frame_ids {
        return Err(Error::Align("fusion streams must share a frame timeline".into()));
    }
    if a.num_channels() != b.num_channels() {
        return Err(Error::Shape(format!(
            "fusion streams have {} vs {} channels",
            a.num_channels(),
            b.num_channels()
        )));
    }
    let mut out = a.scores.clone();
    for t in 0..out.rows() {
        for (o, bv) in out.row_mut(t).iter_mut().zip(b.scores.row(t)) {
            *o = w * *o + (1.0 - w) * bv;
        }
    }
    ScoreStream::new(a.video_id.clone(), a.frame_ids.clone(), out, ScoreKind::Probability)
}

/// Default decision thresholds for the 12 action-unit channels.
pub fn default_au_thresholds() -> Vec<f64> {
    vec![0.5; NUM_AU]
}

/// Turns a score stream into a label track: argmax for class tasks (ties
/// to the lowest index), per-channel `score >= threshold` for action
/// units, and clamping to [-1, 1] for valence/arousal.
pub fn decode(
    scores: &ScoreStream,
    task: TaskKind,
    thresholds: Option<&[f64]>,
) -> Result<LabelTrack> {
    let n = scores.num_frames();
    let labels = match task {
        TaskKind::Expr | TaskKind::Audio | TaskKind::Vd => {
            if scores.num_channels() != task.num_outputs() {
                return Err(Error::Shape(format!(
                    "{} channels for task {}",
                    scores.num_channels(),
                    task.name()
                )));
            }
            Labels::Class((0..n).map(|t| argmax(scores.scores.row(t))).collect())
        }
        TaskKind::Au => {
            let thresholds = thresholds.ok_or_else(|| {
                Error::Config("action-unit decoding needs thresholds (pass the 0.5 defaults explicitly)".into())
            })?;
            if thresholds.len() != NUM_AU || scores.num_channels() != NUM_AU {
                return Err(Error::Shape(format!(
                    "expected {NUM_AU} channels and thresholds, got {} and {}",
                    scores.num_channels(),
                    thresholds.len()
                )));
            }
            Labels::Au(
                (0..n)
                    .map(|t| {
                        let row = scores.scores.row(t);
                        let mut bits = [0u8; NUM_AU];
                        for c in 0..NUM_AU {
                            bits[c] = (row[c] >= thresholds[c]) as u8;
                        }
                        bits
                    })
                    .collect(),
            )
        }
        TaskKind::Va => {
            if scores.num_channels() != 2 {
                return Err(Error::Shape(format!(
                    "{} channels for valence/arousal",
                    scores.num_channels()
                )));
            }
            Labels::Va(
                (0..n)
                    .map(|t| {
                        let row = scores.scores.row(t);
                        (row[0].clamp(-1.0, 1.0), row[1].clamp(-1.0, 1.0))
                    })
                    .collect(),
            )
        }
    };
    LabelTrack::new(
        scores.video_id.clone(),
        task,
        scores.frame_ids.clone(),
        labels,
        vec![true; n],
    )
}

/// Clip construction and window aggregation parameters for violence
/// detection: `clip_len` rows sampled every `frame_step` original frames,
/// inference windows advancing by `infer_stride` frames, and the final
/// probability threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VdWindowConfig {
    pub clip_len: usize,
    pub frame_step: usize,
    pub infer_stride: usize,
    pub decision_threshold: f64,
}

impl Default for VdWindowConfig {
    fn default() -> Self {
        VdWindowConfig {
            clip_len: 32,
            frame_step: 2,
            infer_stride: 16,
            decision_threshold: 0.5,
        }
    }
}

impl VdWindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_len == 0 || self.frame_step == 0 {
            return Err(Error::Config("clip length and frame step must be positive".into()));
        }
        if self.infer_stride == 0 || self.infer_stride > self.clip_len * self.frame_step {
            return Err(Error::Config(format!(
                "inference stride must be in [1, {}], got {}",
                self.clip_len * self.frame_step,
                self.infer_stride
            )));
        }
        if !(0.0..=1.0).contains(&self.decision_threshold) {
            return Err(Error::Config("decision threshold must be in [0,1]".into()));
        }
        Ok(())
    }

    /// Number of original frames one clip spans.
    pub fn span(&self) -> usize {
        self.clip_len * self.frame_step
    }

    /// Start offsets of every clip for a stream of `n` frames. Training
    /// clips tile the stream without overlap; inference clips advance by
    /// `infer_stride`. The final clip shifts left so its span ends at the
    /// last frame.
    pub fn clip_starts(&self, n: usize, train_mode: bool) -> Vec<usize> {
        let span = self.span();
        if n <= span {
            return vec![0];
        }
        let stride = if train_mode { span } else { self.infer_stride };
        let mut starts: Vec<usize> = (0..)
            .map(|k| k * stride)
            .take_while(|&s| s + span <= n)
            .collect();
        let tail = n - span;
        if starts.last() != Some(&tail) {
            starts.push(tail);
        }
        starts
    }
}

/// One clip: the sampled feature rows plus the original frame index each
/// row came from. `padded` marks clips from streams shorter than one span,
/// where edge rows repeat.
#[derive(Debug, Clone)]
pub struct VdClip {
    pub rows: Mat,
    pub frame_rows: Vec<usize>,
    pub padded: bool,
}

/// Splits a feature stream into clips of `clip_len` rows sampled every
/// `frame_step` frames. Streams shorter than one clip span produce a
/// single repeat-edge-padded clip.
pub fn vd_make_clips(stream: &FeatureStream, cfg: &VdWindowConfig, train_mode: bool) -> Result<Vec<VdClip>> {
    cfg.validate()?;
    let n = stream.num_frames();
    if n == 0 {
        return Err(Error::EmptyInput("empty feature stream".into()));
    }
    let mut clips = Vec::new();
    for start in cfg.clip_starts(n, train_mode) {
        let mut frame_rows = Vec::with_capacity(cfg.clip_len);
        let mut padded = false;
        for j in 0..cfg.clip_len {
            let idx = start + j * cfg.frame_step;
            if idx < n {
                frame_rows.push(idx);
            } else {
                frame_rows.push(n - 1);
                padded = true;
            }
        }
        let rows: Vec<Vec<f64>> = frame_rows
            .iter()
            .map(|&i| stream.features.row(i).to_vec())
            .collect();
        clips.push(VdClip {
            rows: Mat::from_rows(&rows)?,
            frame_rows,
            padded,
        });
    }
    Ok(clips)
}

/// Per-clip violent probabilities aligned to a clip's `frame_rows`.
#[derive(Debug, Clone)]
pub struct WindowProbs {
    pub probs: Vec<f64>,
    pub frame_rows: Vec<usize>,
}

/// Aggregated per-frame output of the violence pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct VdAggregate {
    pub probs: Vec<f64>,
    pub decisions: Vec<bool>,
}

/// Averages clip-row probabilities over every window covering each frame.
/// Frames skipped by the `frame_step` sampling inherit the probability of
/// the nearest sampled frame (ties to the earlier one); the decision is
/// `prob >= decision_threshold`.
pub fn vd_aggregate(
    windows: &[WindowProbs],
    total_frames: usize,
    cfg: &VdWindowConfig,
) -> Result<VdAggregate> {
    cfg.validate()?;
    if total_frames == 0 {
        return Err(Error::EmptyInput("no frames to aggregate".into()));
    }
    let mut sum = vec![0.0f64; total_frames];
    let mut count = vec![0u32; total_frames];
    for w in windows {
        if w.probs.len() != w.frame_rows.len() {
            return Err(Error::Shape(format!(
                "window has {} probabilities for {} rows",
                w.probs.len(),
                w.frame_rows.len()
            )));
        }
        for (&p, &f) in w.probs.iter().zip(&w.frame_rows) {
            if f >= total_frames {
                return Err(Error::Shape(format!(
                    "window references frame {f} beyond stream length {total_frames}"
                )));
            }
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Value(format!("window probability {p} outside [0,1]")));
            }
            sum[f] += p;
            count[f] += 1;
        }
    }

    let sampled: Vec<usize> = (0..total_frames).filter(|&f| count[f] > 0).collect();
    if sampled.is_empty() {
        return Err(Error::Coverage("no frame is covered by any window".into()));
    }

    let mut probs = vec![0.0f64; total_frames];
    let mut cursor = 0usize;
    for f in 0..total_frames {
        if count[f] > 0 {
            probs[f] = sum[f] / count[f] as f64;
        } else {
            // nearest sampled frame; ties resolve to the earlier one
            while cursor + 1 < sampled.len() {
                let d_cur = sampled[cursor].abs_diff(f);
                let d_next = sampled[cursor + 1].abs_diff(f);
                if d_next < d_cur {
                    cursor += 1;
                } else {
                    break;
                }
            }
            let src = sampled[cursor];
            probs[f] = sum[src] / count[src] as f64;
        }
    }
    let decisions = probs.iter().map(|&p| p >= cfg.decision_threshold).collect();
    Ok(VdAggregate { probs, decisions })
}
