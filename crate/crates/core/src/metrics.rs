//! Challenge metrics: per-class and macro F1, exact-match accuracy, and the
//! concordance correlation coefficient with its valence/arousal composite.
//!
//! All metrics pool annotated frames (masked frames are skipped) and are
//! invariant under frame reordering. F1 with an empty denominator is
//! defined as 0, and absent classes count as 0 in the macro mean.

use serde::{Deserialize, Serialize};

use crate::datamodel::{LabelTrack, Labels, TaskKind, NUM_AU};
use crate::error::{Error, Result};

/// Metric bundle for one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: TaskKind,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ccc_v: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ccc_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub p_va: Option<f64>,
    pub support: Vec<u64>,
    pub num_frames_evaluated: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct BinaryCounts {
    tp: u64,
    fp: u64,
    fn_: u64,
}

impl BinaryCounts {
    fn f1(self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }
}

/// Per-class F1 over pooled frames plus the unweighted macro mean over all
/// `num_classes` classes.
///
/// ```
/// use affectcal_core::metrics::macro_f1;
/// let truth = [0, 0, 1, 1];
/// let pred = [0, 1, 1, 1];
/// let (per_class, macro_mean) = macro_f1(&pred, &truth, 2).unwrap();
/// assert!((per_class[0] - 2.0 / 3.0).abs() < 1e-12);
/// assert!((macro_mean - 11.0 / 15.0).abs() < 1e-12);
/// ```
pub fn macro_f1(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<(Vec<f64>, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no annotated frames to score".into()));
    }
    let mut counts = vec![BinaryCounts::default(); num_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::Value(format!(
                "class index out of range: pred {p}, truth {t}, classes {num_classes}"
            )));
        }
        if p == t {
            counts[p].tp += 1;
        } else {
            counts[p].fp += 1;
            counts[t].fn_ += 1;
        }
    }
    let per_class: Vec<f64> = counts.iter().map(|c| c.f1()).collect();
    let macro_mean = per_class.iter().sum::<f64>() / num_classes as f64;
    Ok((per_class, macro_mean))
}

/// Per-channel binary F1 over the 12 action units plus the macro mean.
pub fn multilabel_f1(
    pred: &[[u8; NUM_AU]],
    truth: &[[u8; NUM_AU]],
) -> Result<(Vec<f64>, f64)> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no annotated frames to score".into()));
    }
    let mut counts = [BinaryCounts::default(); NUM_AU];
    for (p, t) in pred.iter().zip(truth) {
        for c in 0..NUM_AU {
            match (p[c], t[c]) {
                (1, 1) => counts[c].tp += 1,
                (1, 0) => counts[c].fp += 1,
                (0, 1) => counts[c].fn_ += 1,
                _ => {}
            }
        }
    }
    let per_channel: Vec<f64> = counts.iter().map(|c| c.f1()).collect();
    let macro_mean = per_channel.iter().sum::<f64>() / NUM_AU as f64;
    Ok((per_channel, macro_mean))
}

/// Fraction of annotated frames predicted exactly right.
pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no annotated frames to score".into()));
    }
    let correct = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / pred.len() as f64)
}

const CCC_EPS: f64 = 1e-8;

/// Concordance correlation coefficient with population (1/N) statistics:
/// `2 cov / (var_x + var_y + (mean_x - mean_y)^2 + eps)`. Returns 0 when
/// both variances are below `eps` (the degenerate constant-series case).
///
/// ```
/// use affectcal_core::metrics::ccc;
/// let x = vec![0.1, 0.4, -0.2, 0.8];
/// assert!((ccc(&x, &x).unwrap() - 1.0).abs() < 1e-6);
/// let shifted: Vec<f64> = x.iter().map(|v| v + 0.5).collect();
/// assert!(ccc(&x, &shifted).unwrap() < 1.0);
/// ```
pub fn ccc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} vs {} samples", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("no samples for concordance".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    let mut cov = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        var_x += dx * dx;
        var_y += dy * dy;
        cov += dx * dy;
    }
    var_x /= n;
    var_y /= n;
    cov /= n;
    if var_x < CCC_EPS && var_y < CCC_EPS {
        return Ok(0.0);
    }
    let dm = mx - my;
    Ok(2.0 * cov / (var_x + var_y + dm * dm + CCC_EPS))
}

/// Valence/arousal report: per-coordinate concordance and their mean.
pub fn va_report(pred: &[(f64, f64)], truth: &[(f64, f64)]) -> Result<MetricReport> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} truths",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no annotated frames to score".into()));
    }
    let pv: Vec<f64> = pred.iter().map(|p| p.0).collect();
    let pa: Vec<f64> = pred.iter().map(|p| p.1).collect();
    let tv: Vec<f64> = truth.iter().map(|t| t.0).collect();
    let ta: Vec<f64> = truth.iter().map(|t| t.1).collect();
    let ccc_v = ccc(&pv, &tv)?;
    let ccc_a = ccc(&pa, &ta)?;
    Ok(MetricReport {
        task: TaskKind::Va,
        per_class_f1: vec![],
        macro_f1: 0.0,
        accuracy: 0.0,
        ccc_v: Some(ccc_v),
        ccc_a: Some(ccc_a),
        p_va: Some((ccc_v + ccc_a) / 2.0),
        support: vec![],
        num_frames_evaluated: pred.len() as u64,
    })
}

fn paired<'a>(
    preds: &'a [LabelTrack],
    truths: &'a [LabelTrack],
) -> Result<Vec<(&'a LabelTrack, &'a LabelTrack)>> {
    let mut pairs = Vec::new();
    for t in truths {
        let p = preds
            .iter()
            .find(|p| p.video_id == t.video_id)
            .ok_or_else(|| Error::Align(format!("no predictions for video '{}'", t.video_id)))?;
        if p.frame_ids != t.frame_ids {
            return Err(Error::Align(format!(
                "prediction and truth timelines differ for video '{}'",
                t.video_id
            )));
        }
        pairs.push((p, t));
    }
    Ok(pairs)
}

/// Pools annotated frames across videos and scores them for any task.
/// Prediction and truth tracks are matched by `video_id` and must share
/// frame timelines; the truth mask selects which frames count.
pub fn evaluate_tracks(
    preds: &[LabelTrack],
    truths: &[LabelTrack],
    task: TaskKind,
) -> Result<MetricReport> {
    let pairs = paired(preds, truths)?;
    match task {
        TaskKind::Expr | TaskKind::Audio | TaskKind::Vd => {
            let c = task.num_outputs();
            let mut pv = Vec::new();
            let mut tv = Vec::new();
            for (p, t) in &pairs {
                let (Labels::Class(ps), Labels::Class(ts)) = (&p.labels, &t.labels) else {
                    return Err(Error::Shape("expected class labels".into()));
                };
                for i in 0..t.num_frames() {
                    if t.mask[i] {
                        pv.push(ps[i]);
                        tv.push(ts[i]);
                    }
                }
            }
            let (per_class, macro_mean) = macro_f1(&pv, &tv, c)?;
            let acc = accuracy(&pv, &tv)?;
            let mut support = vec![0u64; c];
            for &y in &tv {
                support[y] += 1;
            }
            Ok(MetricReport {
                task,
                per_class_f1: per_class,
                macro_f1: macro_mean,
                accuracy: acc,
                ccc_v: None,
                ccc_a: None,
                p_va: None,
                support,
                num_frames_evaluated: tv.len() as u64,
            })
        }
        TaskKind::Au => {
            let mut pv = Vec::new();
            let mut tv = Vec::new();
            for (p, t) in &pairs {
                let (Labels::Au(ps), Labels::Au(ts)) = (&p.labels, &t.labels) else {
                    return Err(Error::Shape("expected action-unit labels".into()));
                };
                for i in 0..t.num_frames() {
                    if t.mask[i] {
                        pv.push(ps[i]);
                        tv.push(ts[i]);
                    }
                }
            }
            let (per_channel, macro_mean) = multilabel_f1(&pv, &tv)?;
            let exact = pv
                .iter()
                .zip(&tv)
                .filter(|(a, b)| a == b)
                .count() as f64
                / pv.len().max(1) as f64;
            let mut support = vec![0u64; NUM_AU];
            for t in &tv {
                for c in 0..NUM_AU {
                    support[c] += t[c] as u64;
                }
            }
            Ok(MetricReport {
                task,
                per_class_f1: per_channel,
                macro_f1: macro_mean,
                accuracy: exact,
                ccc_v: None,
                ccc_a: None,
                p_va: None,
                support,
                num_frames_evaluated: tv.len() as u64,
            })
        }
        TaskKind::Va => {
            let mut pv = Vec::new();
            let mut tv = Vec::new();
            for (p, t) in &pairs {
                let (Labels::Va(ps), Labels::Va(ts)) = (&p.labels, &t.labels) else {
                    return Err(Error::Shape("expected valence/arousal labels".into()));
                };
                for i in 0..t.num_frames() {
                    if t.mask[i] {
                        pv.push(ps[i]);
                        tv.push(ts[i]);
                    }
                }
            }
            va_report(&pv, &tv)
        }
    }
}

/// Per-video reports plus the pooled report, for the `--per-video` output.
pub fn evaluate_per_video(
    preds: &[LabelTrack],
    truths: &[LabelTrack],
    task: TaskKind,
) -> Result<Vec<(String, MetricReport)>> {
    let mut out = Vec::new();
    for t in truths {
        let p: Vec<LabelTrack> = preds
            .iter()
            .filter(|p| p.video_id == t.video_id)
            .cloned()
            .collect();
        let report = evaluate_tracks(&p, std::slice::from_ref(t), task)?;
        out.push((t.video_id.clone(), report));
    }
    Ok(out)
}

/// Plain-text table for terminal output.
pub fn format_table(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "task: {}    frames: {}\n",
        report.task.name(),
        report.num_frames_evaluated
    ));
    match report.task {
        TaskKind::Va => {
            out.push_str(&format!(
                "{:<10} {:>8}\n",
                "metric", "value"
            ));
            out.push_str(&format!("{:<10} {:>8.4}\n", "ccc_v", report.ccc_v.unwrap_or(0.0)));
            out.push_str(&format!("{:<10} {:>8.4}\n", "ccc_a", report.ccc_a.unwrap_or(0.0)));
            out.push_str(&format!("{:<10} {:>8.4}\n", "p_va", report.p_va.unwrap_or(0.0)));
        }
        _ => {
            out.push_str(&format!("{:<8} {:>10} {:>8}\n", "class", "support", "f1"));
            for (c, f1) in report.per_class_f1.iter().enumerate() {
                out.push_str(&format!(
                    "{:<8} {:>10} {:>8.4}\n",
                    c,
                    report.support.get(c).copied().unwrap_or(0),
                    f1
                ));
            }
            out.push_str(&format!("macro_f1 {:.4}\n", report.macro_f1));
            out.push_str(&format!("accuracy {:.4}\n", report.accuracy));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_macro_one() {
        let y: Vec<usize> = (0..8).chain(0..8).collect();
        let (_, m) = macro_f1(&y, &y, 8).unwrap();
        assert_eq!(m, 1.0);
    }

    #[test]
    fn all_wrong_binary_macro_zero() {
        let truth = vec![0, 1, 0, 1];
        let pred = vec![1, 0, 1, 0];
        let (per, m) = macro_f1(&pred, &truth, 2).unwrap();
        assert_eq!(per, vec![0.0, 0.0]);
        assert_eq!(m, 0.0);
    }

    #[test]
    fn hand_counted_confusion() {
        // truth [0,0,1,1], pred [0,1,1,1]: F1_0 = 2/3, F1_1 = 4/5
        let truth = vec![0, 0, 1, 1];
        let pred = vec![0, 1, 1, 1];
        let (per, m) = macro_f1(&pred, &truth, 2).unwrap();
        assert!((per[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((per[1] - 4.0 / 5.0).abs() < 1e-15);
        assert!((m - 11.0 / 15.0).abs() < 1e-15);
    }

    #[test]
    fn empty_input_is_error() {
        assert!(matches!(macro_f1(&[], &[], 2), Err(Error::EmptyInput(_))));
        assert!(matches!(accuracy(&[], &[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn multilabel_single_bad_channel() {
        // one channel all false positives, others perfect
        let truth: Vec<[u8; NUM_AU]> = vec![[0; NUM_AU]; 6];
        let mut pred = truth.clone();
        for p in &mut pred {
            p[3] = 1;
        }
        let (per, m) = multilabel_f1(&pred, &truth).unwrap();
        assert_eq!(per[3], 0.0);
        // remaining channels have no positives at all: denominator 0 -> F1 0
        assert_eq!(m, 0.0);

        // with real positives elsewhere the macro is 11/12
        let truth: Vec<[u8; NUM_AU]> = vec![[1; NUM_AU]; 6];
        let mut pred = truth.clone();
        for p in &mut pred {
            p[3] = 0; // all false negatives on channel 3
        }
        let (per, m) = multilabel_f1(&pred, &truth).unwrap();
        assert_eq!(per[3], 0.0);
        assert!((m - 11.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn accuracy_half() {
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn ccc_identity_is_one() {
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        let c = ccc(&x, &x).unwrap();
        assert!((c - 1.0).abs() < 1e-6, "ccc {c}");
    }

    #[test]
    fn ccc_shift_matches_closed_form() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.11).cos()).collect();
        let shift = 0.7;
        let y: Vec<f64> = x.iter().map(|&v| v + shift).collect();
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|&v| (v - mx) * (v - mx)).sum::<f64>() / n;
        let expect = 2.0 * var / (2.0 * var + shift * shift);
        let got = ccc(&x, &y).unwrap();
        assert!((got - expect).abs() < 1e-6, "got {got}, expect {expect}");
    }

    #[test]
    fn ccc_constant_series_is_zero() {
        let x = vec![0.5; 10];
        assert_eq!(ccc(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn ccc_symmetry_and_bounds() {
        let mut rng = crate::rng::Rng::new(5);
        for _ in 0..100 {
            let n = 2 + rng.below(50);
            let x: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let a = ccc(&x, &y).unwrap();
            let b = ccc(&y, &x).unwrap();
            assert_eq!(a, b);
            assert!(a.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn va_report_mean_of_coordinates() {
        // valence perfect, arousal anti-correlated: p_va = (1 + -1)/2 = 0
        let truth: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let t = i as f64 / 39.0 * 2.0 - 1.0;
                (t * 0.8, t * 0.5)
            })
            .collect();
        let pred: Vec<(f64, f64)> = truth.iter().map(|&(v, a)| (v, -a)).collect();
        let r = va_report(&pred, &truth).unwrap();
        assert!((r.ccc_v.unwrap() - 1.0).abs() < 1e-6);
        assert!((r.ccc_a.unwrap() + 1.0).abs() < 1e-6);
        assert!(r.p_va.unwrap().abs() < 1e-6);
    }

    #[test]
    fn composite_recomputes_as_mean() {
        // reference shape: CCC_V 0.510, CCC_A 0.615 -> P_VA 0.5625
        let p_va: f64 = (0.510 + 0.615) / 2.0;
        assert!((p_va - 0.5625).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariance() {
        let truth = vec![0usize, 1, 2, 2, 1, 0, 2, 1];
        let pred = vec![0usize, 1, 1, 2, 0, 0, 2, 2];
        let (_, m1) = macro_f1(&pred, &truth, 3).unwrap();
        let perm = [5usize, 2, 7, 0, 3, 6, 1, 4];
        let tp: Vec<usize> = perm.iter().map(|&i| truth[i]).collect();
        let pp: Vec<usize> = perm.iter().map(|&i| pred[i]).collect();
        let (_, m2) = macro_f1(&pp, &tp, 3).unwrap();
        assert_eq!(m1, m2);
    }
}
