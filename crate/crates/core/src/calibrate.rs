//! Post-hoc calibration.
//!
//! Two fitted artifacts, both maximizing validation F1: a per-class additive
//! bias applied to log-probabilities (coordinate search over a fixed grid),
//! and per-channel decision thresholds for the multi-label task (independent
//! sweep over {0.1, ..., 0.9}).

use serde::{Deserialize, Serialize};

use crate::datamodel::{ClassPriorTable, LabelTrack, Labels, ScoreKind, ScoreStream, TaskKind, NUM_AU};
use crate::error::{Error, Result};
use crate::mat::Mat;

const LOG_FLOOR: f64 = 1e-12;

/// Bias initialization for the coordinate search.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasInit {
    /// Start from the class priors `N_y / N`.
    Prior,
    /// Start from all zeros.
    Zero,
}

/// Coordinate-search configuration for the bias fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlaConfig {
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub grid_step: f64,
    pub max_passes: usize,
    pub init: BiasInit,
}

impl Default for GlaConfig {
    fn default() -> Self {
        GlaConfig {
            grid_lo: -2.0,
            grid_hi: 2.0,
            grid_step: 0.1,
            max_passes: 5,
            init: BiasInit::Prior,
        }
    }
}

impl GlaConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.grid_lo.is_finite() || !self.grid_hi.is_finite() || self.grid_lo > self.grid_hi {
            return Err(Error::Config(format!(
                "grid bounds [{}, {}] must be finite and ordered",
                self.grid_lo, self.grid_hi
            )));
        }
        if !(self.grid_step > 0.0 && self.grid_step.is_finite()) {
            return Err(Error::Config(format!("grid step must be positive, got {}", self.grid_step)));
        }
        if self.max_passes == 0 {
            return Err(Error::Config("need at least one search pass".into()));
        }
        Ok(())
    }

    fn grid(&self) -> Vec<f64> {
        let n = ((self.grid_hi - self.grid_lo) / self.grid_step).round() as usize;
        (0..=n)
            .map(|k| self.grid_lo + k as f64 * self.grid_step)
            .filter(|v| *v <= self.grid_hi + 1e-9)
            .collect()
    }
}

/// One accepted coordinate step: after sweeping `class` in `pass`, the bias
/// kept `best_value` and the calibration objective stood at `f1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchLogEntry {
    pub pass: usize,
    pub class: usize,
    pub best_value: f64,
    pub f1: f64,
}

/// Fitted calibration parameters with the audit log of the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub task: TaskKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bias: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub thresholds: Option<Vec<f64>>,
    pub search_log: Vec<SearchLogEntry>,
    pub source_manifest_hash: String,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl CalibrationArtifact {
    pub fn with_source_hash(mut self, hash: String) -> Self {
        self.source_manifest_hash = hash;
        self
    }

    /// Structural checks applied after deserialization: bias length matches
    /// the task's class count, thresholds cover the 12 channels and sit on
    /// the search grid.
    pub fn validate(&self) -> Result<()> {
        if let Some(b) = &self.bias {
            if self.task.is_classification() && b.len() != self.task.num_outputs() {
                return Err(Error::Shape(format!(
                    "bias has {} entries for task {} ({} classes)",
                    b.len(),
                    self.task.name(),
                    self.task.num_outputs()
                )));
            }
            if !b.iter().all(|v| v.is_finite()) {
                return Err(Error::Value("non-finite bias entry".into()));
            }
        }
        if let Some(t) = &self.thresholds {
            if t.len() != NUM_AU {
                return Err(Error::Shape(format!("{} thresholds for {NUM_AU} channels", t.len())));
            }
            if t.iter().any(|&tau| !threshold_grid().iter().any(|&g| (g - tau).abs() < 1e-12)) {
                return Err(Error::Value("threshold off the 0.1..0.9 grid".into()));
            }
        }
        Ok(())
    }
}

/// Shifts a probability stream into adjusted log space:
/// `s_y(t) = log(p_y(t) + 1e-12) + b_y`. The argmax of the result is the
/// calibrated prediction.
pub fn adjusted_scores(probabilities: &ScoreStream, bias: &[f64]) -> Result<ScoreStream> {
    if probabilities.kind != ScoreKind::Probability {
        return Err(Error::Value("bias adjustment expects a probability stream".into()));
    }
    if bias.len() != probabilities.num_channels() {
        return Err(Error::Shape(format!(
            "bias has {} entries for {} classes",
            bias.len(),
            probabilities.num_channels()
        )));
    }
    let mut out = probabilities.scores.clone();
    for t in 0..out.rows() {
        for (v, b) in out.row_mut(t).iter_mut().zip(bias) {
            *v = (*v + LOG_FLOOR).ln() + b;
        }
    }
    ScoreStream::new(
        probabilities.video_id.clone(),
        probabilities.frame_ids.clone(),
        out,
        ScoreKind::Logit,
    )
}

/// Adjusted scores renormalized back onto the simplex, for pipelines that
/// smooth or fuse after calibration. Argmax-equivalent to
/// [`adjusted_scores`].
pub fn adjusted_probabilities(probabilities: &ScoreStream, bias: &[f64]) -> Result<ScoreStream> {
    let adjusted = adjusted_scores(probabilities, bias)?;
    let mut out = adjusted.scores;
    for t in 0..out.rows() {
        crate::nn::net::softmax_row_in_place(out.row_mut(t));
    }
    ScoreStream::new(
        probabilities.video_id.clone(),
        probabilities.frame_ids.clone(),
        out,
        ScoreKind::Probability,
    )
}

/// Pooled per-frame log-probabilities and labels for the calibration set.
struct CalibSet {
    logp: Mat,
    labels: Vec<usize>,
    num_classes: usize,
}

fn collect_calib_set(scores: &[ScoreStream], labels: &[LabelTrack]) -> Result<CalibSet> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} score streams vs {} label tracks",
            scores.len(),
            labels.len()
        )));
    }
    let mut num_classes = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<usize> = Vec::new();
    for (s, t) in scores.iter().zip(labels) {
        if s.video_id != t.video_id || s.frame_ids != t.frame_ids {
            return Err(Error::Align(format!(
                "score and label timelines differ for video '{}'",
                s.video_id
            )));
        }
        if s.kind != ScoreKind::Probability {
            return Err(Error::Value("calibration expects probability streams".into()));
        }
        let c = s.num_channels();
        if *num_classes.get_or_insert(c) != c {
            return Err(Error::Shape("inconsistent channel counts across streams".into()));
        }
        let Labels::Class(track_ys) = &t.labels else {
            return Err(Error::Shape("bias calibration needs class labels".into()));
        };
        for (i, (&y, &m)) in track_ys.iter().zip(&t.mask).enumerate() {
            if !m {
                continue;
            }
            if y >= c {
                return Err(Error::Value(format!("label {y} out of range for {c} classes")));
            }
            rows.push(
                s.scores
                    .row(i)
                    .iter()
                    .map(|&p| (p + LOG_FLOOR).ln())
                    .collect(),
            );
            ys.push(y);
        }
    }
    if ys.is_empty() {
        return Err(Error::EmptyInput("no annotated frames in the calibration set".into()));
    }
    Ok(CalibSet {
        logp: Mat::from_rows(&rows)?,
        labels: ys,
        num_classes: num_classes.unwrap(),
    })
}

fn macro_f1_fast(preds: impl Iterator<Item = usize>, truth: &[usize], c: usize) -> f64 {
    let mut tp = vec![0u64; c];
    let mut fp = vec![0u64; c];
    let mut fn_ = vec![0u64; c];
    for (p, &t) in preds.zip(truth) {
        if p == t {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[t] += 1;
        }
    }
    let mut sum = 0.0;
    for k in 0..c {
        let denom = 2 * tp[k] + fp[k] + fn_[k];
        if denom > 0 {
            sum += 2.0 * tp[k] as f64 / denom as f64;
        }
    }
    sum / c as f64
}

fn argmax_biased(row: &[f64], bias: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = row[0] + bias[0];
    for (j, (&l, &b)) in row.iter().zip(bias).enumerate().skip(1) {
        let v = l + b;
        if v > best_v {
            best = j;
            best_v = v;
        }
    }
    best
}

/// Macro F1 of `argmax(log p + bias)` over a calibration set. This is the
/// objective the coordinate search maximizes; exposed so callers can score
/// candidate biases independently.
pub fn gla_objective(scores: &[ScoreStream], labels: &[LabelTrack], bias: &[f64]) -> Result<f64> {
    let set = collect_calib_set(scores, labels)?;
    if bias.len() != set.num_classes {
        return Err(Error::Shape(format!(
            "bias has {} entries for {} classes",
            bias.len(),
            set.num_classes
        )));
    }
    Ok(macro_f1_fast(
        (0..set.labels.len()).map(|i| argmax_biased(set.logp.row(i), bias)),
        &set.labels,
        set.num_classes,
    ))
}

/// Fits per-class biases by cyclic coordinate search over the grid.
///
/// Each pass sweeps the classes in order; for class `c` every grid value is
/// scored by the macro F1 of the adjusted argmax with all other coordinates
/// held fixed, and a new value is accepted only on strict improvement (ties
/// among grid values resolve to the smallest). The search stops early after
/// a pass with no accepted change. The objective therefore never decreases
/// and ends at or above its value at initialization.
pub fn fit_logit_biases(
    scores: &[ScoreStream],
    labels: &[LabelTrack],
    priors: &ClassPriorTable,
    cfg: &GlaConfig,
) -> Result<CalibrationArtifact> {
    cfg.validate()?;
    let set = collect_calib_set(scores, labels)?;
    let c = set.num_classes;
    if priors.num_classes() != c {
        return Err(Error::Shape(format!(
            "prior table has {} classes, streams have {c}",
            priors.num_classes()
        )));
    }

    let mut bias: Vec<f64> = match cfg.init {
        BiasInit::Prior => priors.priors(),
        BiasInit::Zero => vec![0.0; c],
    };
    let grid = cfg.grid();
    let n = set.labels.len();

    let mut current_f1 = macro_f1_fast(
        (0..n).map(|i| argmax_biased(set.logp.row(i), &bias)),
        &set.labels,
        c,
    );
    let mut log = Vec::new();

    for pass in 1..=cfg.max_passes {
        let mut changed = false;
        for class in 0..c {
            // everything except coordinate `class` is frozen: cache the
            // best competing score and its argmax per frame
            let mut other_best: Vec<(f64, usize)> = Vec::with_capacity(n);
            for i in 0..n {
                let row = set.logp.row(i);
                let mut bv = f64::NEG_INFINITY;
                let mut ba = 0usize;
                for j in 0..c {
                    if j == class {
                        continue;
                    }
                    let v = row[j] + bias[j];
                    if v > bv {
                        bv = v;
                        ba = j;
                    }
                }
                other_best.push((bv, ba));
            }
            let score_candidate = |b_c: f64| -> f64 {
                macro_f1_fast(
                    (0..n).map(|i| {
                        let s = set.logp.get(i, class) + b_c;
                        let (bv, ba) = other_best[i];
                        if s > bv {
                            class
                        } else if s == bv {
                            class.min(ba)
                        } else {
                            ba
                        }
                    }),
                    &set.labels,
                    c,
                )
            };

            let mut best_value = bias[class];
            let mut best_f1 = current_f1;
            for &v in &grid {
                let f1 = score_candidate(v);
                // strict improvement only: ties keep the earlier (smaller)
                // candidate, and the incumbent wins all ties
                if f1 > best_f1 {
                    best_f1 = f1;
                    best_value = v;
                }
            }
            if best_value != bias[class] {
                bias[class] = best_value;
                current_f1 = best_f1;
                changed = true;
            }
            log.push(SearchLogEntry {
                pass,
                class,
                best_value: bias[class],
                f1: current_f1,
            });
        }
        if !changed {
            break;
        }
    }

    Ok(CalibrationArtifact {
        task: TaskKind::Expr,
        bias: Some(bias),
        thresholds: None,
        search_log: log,
        source_manifest_hash: String::new(),
        warnings: Vec::new(),
    })
}

/// Candidate grid for threshold tuning: 0.1 through 0.9.
pub fn threshold_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

fn binary_f1_at(scores: &[(f64, bool)], tau: f64) -> f64 {
    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for &(s, y) in scores {
        let p = s >= tau;
        match (p, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Tunes one decision threshold per action-unit channel by maximizing the
/// channel's binary F1 over the grid; ties resolve to the lowest threshold.
/// Channels with no positive ground truth keep the 0.5 default and are
/// recorded in `warnings`.
pub fn tune_thresholds(
    scores: &[ScoreStream],
    labels: &[LabelTrack],
) -> Result<CalibrationArtifact> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} score streams vs {} label tracks",
            scores.len(),
            labels.len()
        )));
    }
    let mut channels: Vec<Vec<(f64, bool)>> = vec![Vec::new(); NUM_AU];
    for (s, t) in scores.iter().zip(labels) {
        if s.video_id != t.video_id || s.frame_ids != t.frame_ids {
            return Err(Error::Align(format!(
                "score and label timelines differ for video '{}'",
                s.video_id
            )));
        }
        if s.num_channels() != NUM_AU {
            return Err(Error::Shape(format!(
                "expected {NUM_AU} channels, got {}",
                s.num_channels()
            )));
        }
        let Labels::Au(bits) = &t.labels else {
            return Err(Error::Shape("threshold tuning needs action-unit labels".into()));
        };
        for (i, (bit_row, &m)) in bits.iter().zip(&t.mask).enumerate() {
            if !m {
                continue;
            }
            let row = s.scores.row(i);
            for (ch, channel) in channels.iter_mut().enumerate() {
                channel.push((row[ch], bit_row[ch] == 1));
            }
        }
    }
    if channels[0].is_empty() {
        return Err(Error::EmptyInput("no annotated frames in the tuning set".into()));
    }

    let grid = threshold_grid();
    let mut thresholds = Vec::with_capacity(NUM_AU);
    let mut log = Vec::new();
    let mut warnings = Vec::new();
    for (ch, data) in channels.iter().enumerate() {
        if !data.iter().any(|&(_, y)| y) {
            thresholds.push(0.5);
            warnings.push(format!(
                "channel {ch} has no positive ground truth; keeping the 0.5 default"
            ));
            log.push(SearchLogEntry {
                pass: 1,
                class: ch,
                best_value: 0.5,
                f1: 0.0,
            });
            continue;
        }
        let mut best_tau = grid[0];
        let mut best_f1 = f64::NEG_INFINITY;
        for &tau in &grid {
            let f1 = binary_f1_at(data, tau);
            // strict improvement keeps the lowest threshold on ties
            if f1 > best_f1 {
                best_f1 = f1;
                best_tau = tau;
            }
        }
        thresholds.push(best_tau);
        log.push(SearchLogEntry {
            pass: 1,
            class: ch,
            best_value: best_tau,
            f1: best_f1,
        });
    }

    Ok(CalibrationArtifact {
        task: TaskKind::Au,
        bias: None,
        thresholds: Some(thresholds),
        search_log: log,
        source_manifest_hash: String::new(),
        warnings,
    })
}
