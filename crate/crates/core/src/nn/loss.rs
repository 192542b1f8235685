//! Training objectives and their exact gradients with respect to the
//! logits.
//!
//! Every function returns `(loss, dloss/dlogits)` where the loss is a mean
//! over the batch, so gradients stay on a comparable scale across batch
//! sizes. Log-probabilities are computed in stable form (shifted
//! log-sum-exp, softplus) throughout.

use crate::datamodel::ClassPriorTable;
use crate::error::{Error, Result};
use crate::mat::Mat;

use super::WeightMode;

/// Per-class weights for the weighted softmax loss.
///
/// `InverseFrequency` yields `max_c N_c / N_y`, which is 1 for the most
/// frequent class and grows for rare ones; `FrequencyProportional` yields `N_y / N`.
pub fn class_weights_from_priors(priors: &ClassPriorTable, mode: WeightMode) -> Result<Vec<f64>> {
    match mode {
        WeightMode::InverseFrequency => {
            let max = *priors.counts.iter().max().unwrap_or(&0);
            priors
                .counts
                .iter()
                .map(|&c| {
                    if c == 0 {
                        Err(Error::DegenerateClass(
                            "class with zero training examples under inverse-frequency weighting".into(),
                        ))
                    } else {
                        Ok(max as f64 / c as f64)
                    }
                })
                .collect()
        }
        WeightMode::FrequencyProportional => Ok(priors
            .counts
            .iter()
            .map(|&c| c as f64 / priors.total as f64)
            .collect()),
    }
}

/// Positive-class weights for the per-channel binary loss:
/// `(N - N_c) / N_c` under `InverseFrequency`, `N_c / N` literal.
pub fn pos_weights_from_priors(priors: &ClassPriorTable, mode: WeightMode) -> Result<Vec<f64>> {
    match mode {
        WeightMode::InverseFrequency => priors
            .counts
            .iter()
            .map(|&c| {
                if c == 0 {
                    Err(Error::DegenerateClass(
                        "channel with zero positive examples under inverse-frequency weighting".into(),
                    ))
                } else {
                    Ok((priors.total - c) as f64 / c as f64)
                }
            })
            .collect(),
        WeightMode::FrequencyProportional => Ok(priors
            .counts
            .iter()
            .map(|&c| c as f64 / priors.total as f64)
            .collect()),
    }
}

fn check_labels(logits: &Mat, labels: &[usize]) -> Result<()> {
    if logits.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} logit rows vs {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::Shape(format!(
            "label {bad} out of range for {} classes",
            logits.cols()
        )));
    }
    Ok(())
}

/// Row-wise log-softmax; returns (log-probabilities, probabilities).
fn log_softmax(logits: &Mat) -> (Mat, Mat) {
    let mut logp = logits.clone();
    for r in 0..logp.rows() {
        let row = logp.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        for z in row.iter_mut() {
            *z -= lse;
        }
    }
    let p = logp.map(f64::exp);
    (logp, p)
}

/// Softmax cross-entropy with externally supplied per-class weights;
/// the loss is the weighted mean `(1/B) sum_n w_{y_n} * (-log p_{y_n})`.
pub fn weighted_softmax(logits: &Mat, labels: &[usize], weights: &[f64]) -> Result<(f64, Mat)> {
    check_labels(logits, labels)?;
    if weights.len() != logits.cols() {
        return Err(Error::Shape(format!(
            "{} class weights vs {} classes",
            weights.len(),
            logits.cols()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Value("class weights must be positive and finite".into()));
    }
    let b = logits.rows() as f64;
    let (logp, p) = log_softmax(logits);
    let mut loss = 0.0;
    let mut grad = p;
    for (n, &y) in labels.iter().enumerate() {
        let w = weights[y];
        loss += -w * logp.get(n, y);
        let row = grad.row_mut(n);
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v *= w / b;
        }
    }
    Ok((loss / b, grad))
}

/// Two-class cross-entropy with the positive (index 1) class scaled by
/// `violent_weight`.
pub fn weighted_ce(logits: &Mat, labels: &[usize], violent_weight: f64) -> Result<(f64, Mat)> {
    check_labels(logits, labels)?;
    if logits.cols() != 2 {
        return Err(Error::Shape(format!(
            "weighted two-class loss expects 2 logits, got {}",
            logits.cols()
        )));
    }
    let b = logits.rows() as f64;
    let (logp, p) = log_softmax(logits);
    let mut loss = 0.0;
    let mut grad = p;
    for (n, &y) in labels.iter().enumerate() {
        let w = if y == 1 { violent_weight } else { 1.0 };
        loss += -w * logp.get(n, y);
        let row = grad.row_mut(n);
        row[y] -= 1.0;
        for v in row.iter_mut() {
            *v *= w / b;
        }
    }
    Ok((loss / b, grad))
}

/// Focal loss `mean_n -(1 - p_{y_n})^gamma * log p_{y_n}`.
pub fn focal(logits: &Mat, labels: &[usize], gamma: f64) -> Result<(f64, Mat)> {
    check_labels(logits, labels)?;
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::Value(format!("gamma must be >= 0, got {gamma}")));
    }
    let b = logits.rows() as f64;
    let (logp, p) = log_softmax(logits);
    let mut loss = 0.0;
    let mut grad = Mat::zeros(logits.rows(), logits.cols());
    for (n, &y) in labels.iter().enumerate() {
        let q = p.get(n, y);
        // 1 - q computed as the sum of the other probabilities: accurate
        // even when q is close to 1
        let t: f64 = p.row(n).iter().enumerate().filter(|&(j, _)| j != y).map(|(_, &v)| v).sum();
        if gamma == 0.0 {
            loss += -logp.get(n, y);
            let row = grad.row_mut(n);
            for (j, v) in row.iter_mut().enumerate() {
                *v = (p.get(n, j) - if j == y { 1.0 } else { 0.0 }) / b;
            }
            continue;
        }
        if t <= 0.0 {
            // perfectly confident and correct: zero loss, zero gradient
            continue;
        }
        let t_gamma = t.powf(gamma);
        loss += -t_gamma * logp.get(n, y);
        // dL/dq with q = p_y, t = 1 - q
        let dl_dq = gamma * t.powf(gamma - 1.0) * logp.get(n, y) - t_gamma / q;
        let row = grad.row_mut(n);
        for (j, v) in row.iter_mut().enumerate() {
            let dq_dz = q * (if j == y { 1.0 } else { 0.0 } - p.get(n, j));
            *v = dl_dq * dq_dz / b;
        }
    }
    Ok((loss / b, grad))
}

/// Per-channel binary cross-entropy with positive-class weights, averaged
/// over batch and channels.
pub fn weighted_binary(
    logits: &Mat,
    targets: &[[u8; crate::datamodel::NUM_AU]],
    pos_weights: &[f64],
) -> Result<(f64, Mat)> {
    if logits.rows() != targets.len() {
        return Err(Error::Shape(format!(
            "{} logit rows vs {} target rows",
            logits.rows(),
            targets.len()
        )));
    }
    if logits.cols() != crate::datamodel::NUM_AU || pos_weights.len() != logits.cols() {
        return Err(Error::Shape(format!(
            "expected {} channels, got {} logits and {} weights",
            crate::datamodel::NUM_AU,
            logits.cols(),
            pos_weights.len()
        )));
    }
    if pos_weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::Value("positive-class weights must be positive and finite".into()));
    }
    let scale = 1.0 / (logits.rows() as f64 * logits.cols() as f64);
    let mut loss = 0.0;
    let mut grad = Mat::zeros(logits.rows(), logits.cols());
    for (n, target_row) in targets.iter().enumerate() {
        let zr = logits.row(n);
        let gr = grad.row_mut(n);
        for c in 0..zr.len() {
            let z = zr[c];
            let y = target_row[c] as f64;
            let w = pos_weights[c];
            // log sigmoid(z) = -softplus(-z); log(1 - sigmoid(z)) = -softplus(z)
            loss += w * y * softplus(-z) + (1.0 - y) * softplus(z);
            let s = super::net::sigmoid(z);
            gr[c] = scale * (w * y * (s - 1.0) + (1.0 - y) * s);
        }
    }
    Ok((loss * scale, grad))
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Statistics of one concordance term with its gradient w.r.t. the
/// predictions.
fn ccc_term(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let n = pred.len() as f64;
    let mu = pred.iter().sum::<f64>() / n;
    let mv = target.iter().sum::<f64>() / n;
    let mut var_u = 0.0;
    let mut var_v = 0.0;
    let mut cov = 0.0;
    for (&u, &v) in pred.iter().zip(target) {
        let du = u - mu;
        let dv = v - mv;
        var_u += du * du;
        var_v += dv * dv;
        cov += du * dv;
    }
    var_u /= n;
    var_v /= n;
    cov /= n;
    let dm = mu - mv;
    let denom = var_u + var_v + dm * dm;
    if denom < 1e-12 {
        // both series essentially constant and equal: concordance undefined,
        // treated as zero with zero gradient
        return (0.0, vec![0.0; pred.len()]);
    }
    let ccc = 2.0 * cov / denom;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&u, &v)| {
            let du = u - mu;
            let dv = v - mv;
            (2.0 * dv / n) / denom - (2.0 * cov / (denom * denom)) * (2.0 * du / n + 2.0 * dm / n)
        })
        .collect();
    (ccc, grad)
}

/// Valence/arousal objective: per-coordinate mean squared error minus
/// concordance, `MSE_V + MSE_A - CCC_V - CCC_A`. Batch statistics are
/// population moments over the batch, so the loss is bounded below by -2.
pub fn mse_ccc(pred: &Mat, target: &[(f64, f64)]) -> Result<(f64, Mat)> {
    if pred.cols() != 2 {
        return Err(Error::Shape(format!("expected 2 output columns, got {}", pred.cols())));
    }
    if pred.rows() != target.len() {
        return Err(Error::Shape(format!(
            "{} prediction rows vs {} targets",
            pred.rows(),
            target.len()
        )));
    }
    if pred.rows() < 2 {
        return Err(Error::BatchTooSmall(
            "concordance needs a batch of at least 2 samples".into(),
        ));
    }
    let n = pred.rows();
    let nf = n as f64;
    let mut loss = 0.0;
    let mut grad = Mat::zeros(n, 2);
    for col in 0..2 {
        let u: Vec<f64> = (0..n).map(|r| pred.get(r, col)).collect();
        let v: Vec<f64> = target
            .iter()
            .map(|&(a, b)| if col == 0 { a } else { b })
            .collect();
        let mse: f64 = u
            .iter()
            .zip(&v)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<f64>()
            / nf;
        let (ccc, dccc) = ccc_term(&u, &v);
        loss += mse - ccc;
        for r in 0..n {
            let dmse = 2.0 * (u[r] - v[r]) / nf;
            grad.set(r, col, dmse - dccc[r]);
        }
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::NUM_AU;

    fn logits(rows: &[Vec<f64>]) -> Mat {
        Mat::from_rows(rows).unwrap()
    }

    #[test]
    fn balanced_inverse_frequency_weights_are_one() {
        let priors = ClassPriorTable::from_class_counts(vec![10, 10, 10, 10]).unwrap();
        let w = class_weights_from_priors(&priors, WeightMode::InverseFrequency).unwrap();
        assert!(w.iter().all(|&x| (x - 1.0).abs() < 1e-15));
    }

    #[test]
    fn zero_count_class_is_degenerate() {
        let priors = ClassPriorTable::from_class_counts(vec![10, 0, 5]).unwrap();
        assert!(matches!(
            class_weights_from_priors(&priors, WeightMode::InverseFrequency),
            Err(Error::DegenerateClass(_))
        ));
        // literal mode tolerates it
        assert!(class_weights_from_priors(&priors, WeightMode::FrequencyProportional).is_ok());
    }

    #[test]
    fn weighted_softmax_matches_hand_evaluation() {
        // priors [3,1], inverse frequency -> weights [1,3]; one sample of
        // class 1 gives 3x the plain cross-entropy
        let priors = ClassPriorTable::from_class_counts(vec![3, 1]).unwrap();
        let w = class_weights_from_priors(&priors, WeightMode::InverseFrequency).unwrap();
        assert_eq!(w, vec![1.0, 3.0]);
        let z = logits(&[vec![0.2, -0.4]]);
        let (wl, _) = weighted_softmax(&z, &[1], &w).unwrap();
        let (ce, _) = weighted_softmax(&z, &[1], &[1.0, 1.0]).unwrap();
        assert!((wl - 3.0 * ce).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_softmax_loss_is_tiny() {
        let z = logits(&[vec![10.0, 0.0, 0.0, 0.0]]);
        let (l, _) = weighted_softmax(&z, &[0], &[1.0; 4]).unwrap();
        assert!(l < 1e-3);
    }

    #[test]
    fn weighted_ce_scales_violent_samples() {
        let z = logits(&[vec![0.3, -0.7]]);
        let (plain, _) = weighted_ce(&z, &[1], 1.0).unwrap();
        let (scaled, _) = weighted_ce(&z, &[1], 1.15).unwrap();
        assert!((scaled - 1.15 * plain).abs() < 1e-12);
    }

    #[test]
    fn focal_gamma_zero_is_cross_entropy() {
        let z = logits(&[vec![0.5, -1.0, 0.25], vec![-0.5, 2.0, 0.0]]);
        let (f, fg) = focal(&z, &[2, 1], 0.0).unwrap();
        let (ce, cg) = weighted_softmax(&z, &[2, 1], &[1.0; 3]).unwrap();
        assert!((f - ce).abs() < 1e-12);
        for r in 0..2 {
            for c in 0..3 {
                assert!((fg.get(r, c) - cg.get(r, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn focal_hand_value_at_half() {
        // p_y = 0.5, gamma = 2 -> loss = 0.25 * ln 2
        let z = logits(&[vec![0.0, 0.0]]);
        let (l, _) = focal(&z, &[0], 2.0).unwrap();
        assert!((l - 0.25 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn focal_perfect_prediction_is_zero() {
        let z = logits(&[vec![500.0, 0.0]]);
        let (l, g) = focal(&z, &[0], 2.0).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn binary_matches_hand_value() {
        // pos_weight 2, y = 1, sigmoid(0) = 0.5 -> per-channel term 2 ln 2
        let z = Mat::zeros(1, NUM_AU);
        let targets = [[1u8; NUM_AU]];
        let (l, _) = weighted_binary(&z, &targets, &[2.0; NUM_AU]).unwrap();
        assert!((l - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    #[allow(clippy::needless_range_loop)] // brute-force reference kept in index form
    fn binary_unit_weights_is_plain_bce() {
        let z = logits(&[(0..NUM_AU).map(|c| 0.3 * c as f64 - 1.0).collect()]);
        let targets = [[0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1]];
        let (l, _) = weighted_binary(&z, &targets, &[1.0; NUM_AU]).unwrap();
        // direct reference computation
        let mut expect = 0.0;
        for c in 0..NUM_AU {
            let p = 1.0 / (1.0 + (-(z.get(0, c))).exp());
            let y = targets[0][c] as f64;
            expect += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        }
        expect /= NUM_AU as f64;
        assert!((l - expect).abs() < 1e-12);
    }

    #[test]
    fn binary_saturated_positive_loss_vanishes() {
        let z = Mat::from_vec(1, NUM_AU, vec![40.0; NUM_AU]).unwrap();
        let targets = [[1u8; NUM_AU]];
        let (l, _) = weighted_binary(&z, &targets, &[1.0; NUM_AU]).unwrap();
        assert!(l < 1e-12);
    }

    #[test]
    fn mse_ccc_perfect_prediction_is_minus_two() {
        let target: Vec<(f64, f64)> = (0..8)
            .map(|i| ((i as f64 / 7.0) - 0.5, (i as f64 / 7.0).sin() * 0.5))
            .collect();
        let pred = Mat::from_rows(
            &target.iter().map(|&(v, a)| vec![v, a]).collect::<Vec<_>>(),
        )
        .unwrap();
        let (l, _) = mse_ccc(&pred, &target).unwrap();
        assert_eq!(l, -2.0);
    }

    #[test]
    fn mse_ccc_anticorrelated_is_mse_plus_two() {
        // pred = -target with zero-mean targets: CCC = -1 per coordinate
        let target: Vec<(f64, f64)> = vec![(-0.5, -0.25), (0.5, 0.25), (-0.5, -0.25), (0.5, 0.25)];
        let pred = Mat::from_rows(
            &target.iter().map(|&(v, a)| vec![-v, -a]).collect::<Vec<_>>(),
        )
        .unwrap();
        let (l, _) = mse_ccc(&pred, &target).unwrap();
        let mse: f64 = target
            .iter()
            .map(|&(v, a)| (2.0 * v) * (2.0 * v) + (2.0 * a) * (2.0 * a))
            .sum::<f64>()
            / 4.0;
        assert!((l - (mse + 2.0)).abs() < 1e-12);
    }

    #[test]
    fn mse_ccc_loss_never_below_minus_two() {
        let mut rng = crate::rng::Rng::new(77);
        for _ in 0..200 {
            let n = 2 + rng.below(10);
            let target: Vec<(f64, f64)> = (0..n)
                .map(|_| (rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
                .collect();
            let pred = Mat::from_rows(
                &(0..n)
                    .map(|_| vec![rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)])
                    .collect::<Vec<_>>(),
            )
            .unwrap();
            let (l, _) = mse_ccc(&pred, &target).unwrap();
            assert!(l >= -2.0 - 1e-12, "loss {l}");
        }
    }

    #[test]
    fn mse_ccc_rejects_single_sample() {
        let pred = Mat::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(
            mse_ccc(&pred, &[(0.0, 0.0)]),
            Err(Error::BatchTooSmall(_))
        ));
    }
}
