//! Seeded training loop with adaptive-moment updates, plus the
//! finite-difference gradient checker.

use serde::{Deserialize, Serialize};

use crate::datamodel::{ClassPriorTable, FeatureStream, LabelTrack, Labels, NUM_AU};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::rng::Rng;

use super::loss::{
    class_weights_from_priors, focal, mse_ccc, pos_weights_from_priors, weighted_binary,
    weighted_ce, weighted_softmax,
};
use super::net::{backward, forward_cached};
use super::{HeadKind, LossKind, LossSpec, NetworkSpec, NetworkState};

/// Optimizer and schedule hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            lr: 1e-3,
            batch_size: 256,
            epochs: 10,
            seed: 0,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-frame training targets, one variant per task family.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainTargets {
    Class(Vec<usize>),
    Au(Vec<[u8; NUM_AU]>),
    Va(Vec<(f64, f64)>),
}

impl TrainTargets {
    pub fn len(&self) -> usize {
        match self {
            TrainTargets::Class(v) => v.len(),
            TrainTargets::Au(v) => v.len(),
            TrainTargets::Va(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, idx: &[usize]) -> TrainTargets {
        match self {
            TrainTargets::Class(v) => TrainTargets::Class(idx.iter().map(|&i| v[i]).collect()),
            TrainTargets::Au(v) => TrainTargets::Au(idx.iter().map(|&i| v[i]).collect()),
            TrainTargets::Va(v) => TrainTargets::Va(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// One video's (masked-out) frames, or one clip for sequence models.
#[derive(Debug, Clone)]
pub struct TrainVideo {
    pub x: Mat,
    pub y: TrainTargets,
}

/// Training data: independent frames grouped by video, or whole sequences
/// (each sequence is one optimization step for the temporal head).
#[derive(Debug, Clone)]
pub enum TrainData {
    Frames(Vec<TrainVideo>),
    Sequences(Vec<TrainVideo>),
}

/// Builds per-video training data from a feature stream and its label
/// track, dropping unannotated frames. The two must share a frame timeline.
pub fn train_video_from(features: &FeatureStream, track: &LabelTrack) -> Result<TrainVideo> {
    if features.frame_ids != track.frame_ids {
        return Err(Error::Align(format!(
            "feature and label timelines differ for video '{}'",
            features.video_id
        )));
    }
    let keep: Vec<usize> = (0..track.num_frames()).filter(|&i| track.mask[i]).collect();
    let rows: Vec<Vec<f64>> = keep.iter().map(|&i| features.features.row(i).to_vec()).collect();
    let y = match &track.labels {
        Labels::Class(v) => TrainTargets::Class(keep.iter().map(|&i| v[i]).collect()),
        Labels::Au(v) => TrainTargets::Au(keep.iter().map(|&i| v[i]).collect()),
        Labels::Va(v) => TrainTargets::Va(keep.iter().map(|&i| v[i]).collect()),
    };
    Ok(TrainVideo {
        x: Mat::from_rows(&rows)?,
        y,
    })
}

/// One `epoch,step,loss` record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossLogEntry {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

enum LossWeights {
    Class(Vec<f64>),
    Pos(Vec<f64>),
    None,
}

fn derive_weights(
    loss_spec: &LossSpec,
    output_dim: usize,
    priors: Option<&ClassPriorTable>,
) -> Result<LossWeights> {
    match loss_spec.kind {
        LossKind::WeightedSoftmax => {
            let priors = priors.ok_or_else(|| {
                Error::Config("weighted softmax loss needs a class prior table".into())
            })?;
            if priors.num_classes() != output_dim {
                return Err(Error::Shape(format!(
                    "prior table has {} classes, head has {output_dim}",
                    priors.num_classes()
                )));
            }
            Ok(LossWeights::Class(class_weights_from_priors(
                priors,
                loss_spec.class_weight_mode,
            )?))
        }
        LossKind::WeightedBinary => {
            let priors = priors.ok_or_else(|| {
                Error::Config("weighted binary loss needs a channel prior table".into())
            })?;
            Ok(LossWeights::Pos(pos_weights_from_priors(
                priors,
                loss_spec.class_weight_mode,
            )?))
        }
        _ => Ok(LossWeights::None),
    }
}

fn check_compat(spec: &NetworkSpec, loss_spec: &LossSpec) -> Result<()> {
    let ok = match loss_spec.kind {
        LossKind::WeightedSoftmax | LossKind::Focal => spec.head == HeadKind::Softmax,
        LossKind::MseCcc => spec.head == HeadKind::Linear && spec.output_dim == 2,
        LossKind::WeightedBinary => spec.head == HeadKind::Sigmoid && spec.output_dim == NUM_AU,
        LossKind::WeightedCe => spec.head == HeadKind::Softmax && spec.output_dim == 2,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "loss {:?} is incompatible with head {:?} ({} outputs)",
            loss_spec.kind, spec.head, spec.output_dim
        )))
    }
}

fn eval_loss(
    loss_spec: &LossSpec,
    weights: &LossWeights,
    logits: &Mat,
    targets: &TrainTargets,
) -> Result<(f64, Mat)> {
    match (loss_spec.kind, targets) {
        (LossKind::WeightedSoftmax, TrainTargets::Class(ys)) => {
            let LossWeights::Class(w) = weights else {
                return Err(Error::Config("missing class weights".into()));
            };
            weighted_softmax(logits, ys, w)
        }
        (LossKind::Focal, TrainTargets::Class(ys)) => focal(logits, ys, loss_spec.focal_gamma),
        (LossKind::WeightedCe, TrainTargets::Class(ys)) => {
            weighted_ce(logits, ys, loss_spec.violent_weight)
        }
        (LossKind::WeightedBinary, TrainTargets::Au(ys)) => {
            let LossWeights::Pos(w) = weights else {
                return Err(Error::Config("missing positive-class weights".into()));
            };
            weighted_binary(logits, ys, w)
        }
        (LossKind::MseCcc, TrainTargets::Va(ys)) => mse_ccc(logits, ys),
        _ => Err(Error::Config("targets do not match the loss kind".into())),
    }
}

fn adam_step(state: &mut NetworkState, grad: &[f64], hyper: &Hyper) {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - hyper.beta1.powf(t);
    let bc2 = 1.0 - hyper.beta2.powf(t);
    for (i, &g) in grad.iter().enumerate() {
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let mhat = state.m[i] / bc1;
        let vhat = state.v[i] / bc2;
        state.params[i] -=
            hyper.lr * (mhat / (vhat.sqrt() + hyper.eps) + hyper.weight_decay * state.params[i]);
    }
}

fn gather_rows(x: &Mat, idx: &[usize]) -> Mat {
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| x.row(i).to_vec()).collect();
    Mat::from_rows(&rows).expect("gathered rows are rectangular")
}

/// Trains a fresh network. Deterministic given `hyper.seed`: initialization,
/// shuffling, and update order are all driven by that seed.
pub fn train(
    spec: NetworkSpec,
    loss_spec: &LossSpec,
    data: &TrainData,
    priors: Option<&ClassPriorTable>,
    hyper: &Hyper,
) -> Result<(NetworkState, Vec<LossLogEntry>)> {
    loss_spec.validate()?;
    check_compat(&spec, loss_spec)?;
    if hyper.batch_size == 0 || hyper.epochs == 0 {
        return Err(Error::Config("batch size and epochs must be positive".into()));
    }
    if loss_spec.kind == LossKind::MseCcc && hyper.batch_size < 2 {
        return Err(Error::Config("concordance loss needs batch size >= 2".into()));
    }
    let empty = match data {
        TrainData::Frames(v) => v.iter().all(|tv| tv.y.is_empty()),
        TrainData::Sequences(v) => v.is_empty(),
    };
    if empty {
        return Err(Error::EmptyInput("no training examples".into()));
    }

    let weights = derive_weights(loss_spec, spec.output_dim, priors)?;
    let mut state = NetworkState::init(spec, hyper.seed)?;
    // shuffle stream kept distinct from the init stream
    let mut rng = Rng::derive(hyper.seed, 0x5113);
    let mut log = Vec::new();

    for epoch in 0..hyper.epochs {
        let mut step = 0usize;
        let mut run_batch = |state: &mut NetworkState,
                             x: &Mat,
                             y: &TrainTargets,
                             step: &mut usize|
         -> Result<()> {
            let cache = forward_cached(&state.spec, &state.params, x)?;
            let (loss, dlogits) = eval_loss(loss_spec, &weights, &cache.logits, y)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    step: *step,
                    message: format!("loss became {loss}"),
                });
            }
            let grad = backward(&state.spec, &state.params, &cache, &dlogits);
            adam_step(state, &grad, hyper);
            log.push(LossLogEntry {
                epoch,
                step: *step,
                loss,
            });
            *step += 1;
            Ok(())
        };

        match data {
            TrainData::Frames(videos) => {
                if loss_spec.kind == LossKind::MseCcc {
                    // batches are drawn within a single video so the batch
                    // statistics stay meaningful
                    let mut order: Vec<usize> = (0..videos.len()).collect();
                    rng.shuffle(&mut order);
                    for &v in &order {
                        let video = &videos[v];
                        let mut idx: Vec<usize> = (0..video.y.len()).collect();
                        rng.shuffle(&mut idx);
                        for chunk in idx.chunks(hyper.batch_size) {
                            if chunk.len() < 2 {
                                continue; // concordance undefined on singletons
                            }
                            let x = gather_rows(&video.x, chunk);
                            let y = video.y.gather(chunk);
                            run_batch(&mut state, &x, &y, &mut step)?;
                        }
                    }
                } else {
                    let mut pairs: Vec<(usize, usize)> = Vec::new();
                    for (v, video) in videos.iter().enumerate() {
                        for f in 0..video.y.len() {
                            pairs.push((v, f));
                        }
                    }
                    rng.shuffle(&mut pairs);
                    for chunk in pairs.chunks(hyper.batch_size) {
                        let rows: Vec<Vec<f64>> = chunk
                            .iter()
                            .map(|&(v, f)| videos[v].x.row(f).to_vec())
                            .collect();
                        let x = Mat::from_rows(&rows)?;
                        let y = match &videos[chunk[0].0].y {
                            TrainTargets::Class(_) => TrainTargets::Class(
                                chunk
                                    .iter()
                                    .map(|&(v, f)| match &videos[v].y {
                                        TrainTargets::Class(ys) => ys[f],
                                        _ => unreachable!("mixed target kinds"),
                                    })
                                    .collect(),
                            ),
                            TrainTargets::Au(_) => TrainTargets::Au(
                                chunk
                                    .iter()
                                    .map(|&(v, f)| match &videos[v].y {
                                        TrainTargets::Au(ys) => ys[f],
                                        _ => unreachable!("mixed target kinds"),
                                    })
                                    .collect(),
                            ),
                            TrainTargets::Va(_) => TrainTargets::Va(
                                chunk
                                    .iter()
                                    .map(|&(v, f)| match &videos[v].y {
                                        TrainTargets::Va(ys) => ys[f],
                                        _ => unreachable!("mixed target kinds"),
                                    })
                                    .collect(),
                            ),
                        };
                        run_batch(&mut state, &x, &y, &mut step)?;
                    }
                }
            }
            TrainData::Sequences(clips) => {
                let mut order: Vec<usize> = (0..clips.len()).collect();
                rng.shuffle(&mut order);
                for &c in &order {
                    let clip = &clips[c];
                    run_batch(&mut state, &clip.x, &clip.y, &mut step)?;
                }
            }
        }
    }

    Ok((state, log))
}

/// Sample for [`grad_check`]: one batch (or one sequence) with its targets
/// and optional prior table for weight derivation.
#[derive(Debug, Clone)]
pub struct GradSample {
    pub x: Mat,
    pub y: TrainTargets,
    pub priors: Option<ClassPriorTable>,
    pub seed: u64,
}

/// Compares the analytic gradient of every parameter against central finite
/// differences at `h = 1e-5` and returns the maximum relative error
/// (`|a - n| / max(|a|, |n|, 1e-5)`).
///
/// Near a relu kink the +-h interval can straddle the non-differentiable
/// point, making the h-sized difference quotient meaningless. When the
/// first estimate disagrees, the check re-evaluates at h/8 and h/64: a
/// straddled kink leaves the shrinking interval and the error collapses,
/// while a genuinely wrong gradient stays wrong at every step size.
pub fn grad_check(spec: &NetworkSpec, loss_spec: &LossSpec, sample: &GradSample) -> Result<f64> {
    loss_spec.validate()?;
    check_compat(spec, loss_spec)?;
    let weights = derive_weights(loss_spec, spec.output_dim, sample.priors.as_ref())?;
    let state = NetworkState::init(spec.clone(), sample.seed)?;

    let cache = forward_cached(spec, &state.params, &sample.x)?;
    let (_, dlogits) = eval_loss(loss_spec, &weights, &cache.logits, &sample.y)?;
    let analytic = backward(spec, &state.params, &cache, &dlogits);

    let mut params = state.params.clone();
    let mut max_err = 0.0f64;
    let h0 = 1e-5;
    for i in 0..params.len() {
        let orig = params[i];
        let central = |h: f64, params: &mut Vec<f64>| -> Result<f64> {
            params[i] = orig + h;
            let cache = forward_cached(spec, params, &sample.x)?;
            let up = eval_loss(loss_spec, &weights, &cache.logits, &sample.y)?.0;
            params[i] = orig - h;
            let cache = forward_cached(spec, params, &sample.x)?;
            let down = eval_loss(loss_spec, &weights, &cache.logits, &sample.y)?.0;
            params[i] = orig;
            Ok((up - down) / (2.0 * h))
        };
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-5);

        let a = analytic[i];
        let mut err = rel(a, central(h0, &mut params)?);
        if err > 1e-4 {
            for h in [h0 / 8.0, h0 / 64.0] {
                err = err.min(rel(a, central(h, &mut params)?));
            }
        }
        max_err = max_err.max(err);
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{LossKind, LossSpec, NetworkSpec};

    fn separable_two_class(n_per_class: usize, seed: u64) -> TrainVideo {
        let mut rng = Rng::new(seed);
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for c in 0..2usize {
            let center = if c == 0 { -2.0 } else { 2.0 };
            for _ in 0..n_per_class {
                rows.push(vec![center + 0.3 * rng.normal(), center + 0.3 * rng.normal()]);
                ys.push(c);
            }
        }
        TrainVideo {
            x: Mat::from_rows(&rows).unwrap(),
            y: TrainTargets::Class(ys),
        }
    }

    fn two_class_spec() -> NetworkSpec {
        NetworkSpec {
            input_dim: 2,
            hidden_dims: vec![8],
            output_dim: 2,
            activation: crate::nn::Activation::Relu,
            head: crate::nn::HeadKind::Softmax,
            temporal_head: None,
        }
    }

    #[test]
    fn training_learns_separable_data() {
        let video = separable_two_class(60, 4);
        let data = TrainData::Frames(vec![video.clone()]);
        let priors = ClassPriorTable::from_class_counts(vec![60, 60]).unwrap();
        let hyper = Hyper {
            epochs: 50,
            batch_size: 32,
            seed: 1,
            ..Hyper::default()
        };
        let (state, log) = train(
            two_class_spec(),
            &LossSpec::new(LossKind::WeightedSoftmax),
            &data,
            Some(&priors),
            &hyper,
        )
        .unwrap();
        assert!(log.last().unwrap().loss < log.first().unwrap().loss);

        let out = crate::nn::forward(&state, &video.x).unwrap();
        let TrainTargets::Class(ys) = &video.y else { unreachable!() };
        let correct = (0..video.x.rows())
            .filter(|&r| {
                let row = out.head.row(r);
                let pred = if row[1] > row[0] { 1 } else { 0 };
                pred == ys[r]
            })
            .count();
        let acc = correct as f64 / video.x.rows() as f64;
        assert!(acc >= 0.99, "training accuracy {acc}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let data = TrainData::Frames(vec![separable_two_class(20, 9)]);
        let priors = ClassPriorTable::from_class_counts(vec![20, 20]).unwrap();
        let hyper = Hyper {
            epochs: 3,
            batch_size: 8,
            seed: 77,
            ..Hyper::default()
        };
        let spec = two_class_spec();
        let loss = LossSpec::new(LossKind::WeightedSoftmax);
        let (a, la) = train(spec.clone(), &loss, &data, Some(&priors), &hyper).unwrap();
        let (b, lb) = train(spec, &loss, &data, Some(&priors), &hyper).unwrap();
        assert_eq!(a, b);
        assert_eq!(la, lb);
    }

    #[test]
    fn zero_lr_leaves_parameters_at_init() {
        let data = TrainData::Frames(vec![separable_two_class(10, 2)]);
        let priors = ClassPriorTable::from_class_counts(vec![10, 10]).unwrap();
        let hyper = Hyper {
            epochs: 2,
            batch_size: 8,
            seed: 5,
            lr: 0.0,
            ..Hyper::default()
        };
        let spec = two_class_spec();
        let init = NetworkState::init(spec.clone(), hyper.seed).unwrap();
        let (state, _) =
            train(spec, &LossSpec::new(LossKind::WeightedSoftmax), &data, Some(&priors), &hyper)
                .unwrap();
        assert_eq!(state.params, init.params);
    }

    #[test]
    fn incompatible_loss_and_head_is_config_error() {
        let data = TrainData::Frames(vec![separable_two_class(4, 0)]);
        let err = train(
            two_class_spec(),
            &LossSpec::new(LossKind::MseCcc),
            &data,
            None,
            &Hyper::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn grad_check_smoke_on_small_mlp() {
        let sample = {
            let v = separable_two_class(6, 3);
            GradSample {
                x: v.x,
                y: v.y,
                priors: Some(ClassPriorTable::from_class_counts(vec![6, 6]).unwrap()),
                seed: 12,
            }
        };
        let err = grad_check(&two_class_spec(), &LossSpec::new(LossKind::WeightedSoftmax), &sample)
            .unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    fn random_batch(rng: &mut Rng, rows: usize, cols: usize) -> Mat {
        Mat::from_rows(
            &(0..rows)
                .map(|_| (0..cols).map(|_| rng.normal()).collect::<Vec<f64>>())
                .collect::<Vec<_>>(),
        )
        .unwrap()
    }

    #[test]
    fn grad_check_expr_preset_weighted_softmax() {
        let mut rng = Rng::new(41);
        let spec = NetworkSpec::expr_preset(6, 8);
        let sample = GradSample {
            x: random_batch(&mut rng, 5, 6),
            y: TrainTargets::Class((0..5).map(|_| rng.below(8)).collect()),
            priors: Some(
                ClassPriorTable::from_class_counts(vec![40, 20, 10, 8, 7, 6, 5, 4]).unwrap(),
            ),
            seed: 7,
        };
        let err = grad_check(&spec, &LossSpec::new(LossKind::WeightedSoftmax), &sample).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn grad_check_va_preset_mse_ccc() {
        let mut rng = Rng::new(42);
        let spec = NetworkSpec::va_preset(5);
        let sample = GradSample {
            x: random_batch(&mut rng, 6, 5),
            y: TrainTargets::Va(
                (0..6)
                    .map(|_| (rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
                    .collect(),
            ),
            priors: None,
            seed: 8,
        };
        let err = grad_check(&spec, &LossSpec::new(LossKind::MseCcc), &sample).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn grad_check_gelu_hidden_layer() {
        let mut rng = Rng::new(44);
        let spec = NetworkSpec {
            input_dim: 5,
            hidden_dims: vec![7],
            output_dim: 3,
            activation: crate::nn::Activation::Gelu,
            head: crate::nn::HeadKind::Softmax,
            temporal_head: None,
        };
        let sample = GradSample {
            x: random_batch(&mut rng, 6, 5),
            y: TrainTargets::Class((0..6).map(|_| rng.below(3)).collect()),
            priors: None,
            seed: 10,
        };
        let err = grad_check(&spec, &LossSpec::new(LossKind::Focal), &sample).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn grad_check_tcn_with_hidden_layer() {
        let mut rng = Rng::new(45);
        let spec = NetworkSpec {
            input_dim: 3,
            hidden_dims: vec![6],
            output_dim: 2,
            activation: crate::nn::Activation::Relu,
            head: crate::nn::HeadKind::Softmax,
            temporal_head: Some(crate::nn::TcnSpec {
                num_layers: 5,
                kernel_size: 3,
                channels: vec![4; 5],
                dilations: vec![1, 2, 4, 8, 16],
            }),
        };
        let frames = 14;
        let sample = GradSample {
            x: random_batch(&mut rng, frames, 3),
            y: TrainTargets::Class((0..frames).map(|_| rng.below(2)).collect()),
            priors: None,
            seed: 11,
        };
        let err = grad_check(&spec, &LossSpec::new(LossKind::WeightedCe), &sample).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn grad_check_tcn_weighted_ce() {
        let mut rng = Rng::new(43);
        let spec = NetworkSpec::vd_preset(
            4,
            crate::nn::TcnSpec {
                num_layers: 5,
                kernel_size: 3,
                channels: vec![5; 5],
                dilations: vec![1, 2, 4, 8, 16],
            },
        );
        let frames = 16;
        let sample = GradSample {
            x: random_batch(&mut rng, frames, 4),
            y: TrainTargets::Class((0..frames).map(|_| rng.below(2)).collect()),
            priors: None,
            seed: 9,
        };
        let err = grad_check(&spec, &LossSpec::new(LossKind::WeightedCe), &sample).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }
}
