//! Trainable prediction heads with exact backpropagation.
//!
//! Two architectures cover every task: a plain feedforward network applied
//! per frame, and an optional stack of dilated temporal convolutions with
//! residual connections in front of it for sequence inputs. Parameters live
//! in one flat `f64` vector with a shape table, which keeps the optimizer,
//! serialization, and finite-difference checking trivial.

pub mod loss;
pub mod net;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use loss::{class_weights_from_priors, pos_weights_from_priors};
pub use net::{forward, head_outputs, predict_scores, ForwardOutput};
pub use train::{
    grad_check, train, train_video_from, GradSample, Hyper, LossLogEntry, TrainData, TrainTargets,
    TrainVideo,
};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
}

/// Output-layer interpretation of the logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Softmax,
    Sigmoid,
    Linear,
}

/// Dilated temporal convolution stack: `num_layers` residual blocks, each a
/// single centered (non-causal) conv followed by the activation, with an
/// identity skip (1x1 projection on channel change).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcnSpec {
    pub num_layers: usize,
    pub kernel_size: usize,
    pub channels: Vec<usize>,
    pub dilations: Vec<usize>,
}

impl Default for TcnSpec {
    fn default() -> Self {
        TcnSpec {
            num_layers: 5,
            kernel_size: 3,
            channels: vec![256; 5],
            dilations: vec![1, 2, 4, 8, 16],
        }
    }
}

impl TcnSpec {
    pub fn with_channels(width: usize) -> Self {
        TcnSpec {
            channels: vec![width; 5],
            ..TcnSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::Config("tcn needs at least one layer".into()));
        }
        if self.dilations.len() != self.num_layers || self.channels.len() != self.num_layers {
            return Err(Error::Config(format!(
                "tcn layer count {} does not match dilations ({}) / channels ({})",
                self.num_layers,
                self.dilations.len(),
                self.channels.len()
            )));
        }
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config("tcn kernel size must be odd for centered padding".into()));
        }
        if self.channels.contains(&0) || self.dilations.contains(&0) {
            return Err(Error::Config("tcn channels and dilations must be positive".into()));
        }
        Ok(())
    }

    /// `1 + (kernel_size - 1) * sum(dilations)`.
    pub fn receptive_field(&self) -> usize {
        1 + (self.kernel_size - 1) * self.dilations.iter().sum::<usize>()
    }
}

/// Architecture description of one prediction head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub head: HeadKind,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub temporal_head: Option<TcnSpec>,
}

impl NetworkSpec {
    /// Expression head: one hidden layer, 8 softmax outputs.
    pub fn expr_preset(input_dim: usize, hidden: usize) -> Self {
        NetworkSpec {
            input_dim,
            hidden_dims: vec![hidden],
            output_dim: 8,
            activation: Activation::Relu,
            head: HeadKind::Softmax,
            temporal_head: None,
        }
    }

    /// Valence/arousal head: no hidden layer, 2 linear outputs.
    pub fn va_preset(input_dim: usize) -> Self {
        NetworkSpec {
            input_dim,
            hidden_dims: vec![],
            output_dim: 2,
            activation: Activation::Relu,
            head: HeadKind::Linear,
            temporal_head: None,
        }
    }

    /// Action-unit head: one hidden layer, 12 sigmoid outputs.
    pub fn au_preset(input_dim: usize, hidden: usize) -> Self {
        NetworkSpec {
            input_dim,
            hidden_dims: vec![hidden],
            output_dim: 12,
            activation: Activation::Relu,
            head: HeadKind::Sigmoid,
            temporal_head: None,
        }
    }

    /// Violence head: dilated TCN over the frame sequence, 2 softmax outputs.
    pub fn vd_preset(input_dim: usize, tcn: TcnSpec) -> Self {
        NetworkSpec {
            input_dim,
            hidden_dims: vec![],
            output_dim: 2,
            activation: Activation::Relu,
            head: HeadKind::Softmax,
            temporal_head: Some(tcn),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config("input and output dims must be positive".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden dims must be positive".into()));
        }
        if let Some(t) = &self.temporal_head {
            t.validate()?;
        }
        Ok(())
    }

    /// Dense-layer dimensions after the optional temporal stack.
    pub(crate) fn dense_dims(&self) -> Vec<usize> {
        let first = match &self.temporal_head {
            Some(t) => *t.channels.last().expect("validated tcn"),
            None => self.input_dim,
        };
        let mut dims = vec![first];
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims
    }

    /// Deterministic flat parameter layout for this architecture.
    pub fn layout(&self) -> Layout {
        let mut shapes = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, rows: usize, cols: usize, offset: &mut usize| {
            shapes.push(ParamShape {
                name,
                rows,
                cols,
                offset: *offset,
            });
            *offset += rows * cols;
        };

        if let Some(t) = &self.temporal_head {
            let mut in_ch = self.input_dim;
            for l in 0..t.num_layers {
                let out_ch = t.channels[l];
                push(format!("tcn{l}.w"), t.kernel_size * in_ch, out_ch, &mut offset);
                push(format!("tcn{l}.b"), 1, out_ch, &mut offset);
                if in_ch != out_ch {
                    push(format!("tcn{l}.proj"), in_ch, out_ch, &mut offset);
                }
                in_ch = out_ch;
            }
        }
        let dims = self.dense_dims();
        for i in 0..dims.len() - 1 {
            push(format!("dense{i}.w"), dims[i], dims[i + 1], &mut offset);
            push(format!("dense{i}.b"), 1, dims[i + 1], &mut offset);
        }
        Layout {
            shapes,
            total: offset,
        }
    }
}

/// One flat parameter block: a named matrix at `offset` in the parameter
/// vector, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

/// Full parameter layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub shapes: Vec<ParamShape>,
    pub total: usize,
}

impl Layout {
    pub fn find(&self, name: &str) -> Option<&ParamShape> {
        self.shapes.iter().find(|s| s.name == name)
    }
}

/// Learned parameters plus optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub spec: NetworkSpec,
    pub shapes: Vec<ParamShape>,
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub seed: u64,
}

impl NetworkState {
    /// Seeded initialization: every weight and bias is uniform in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        let mut rng = Rng::new(seed);
        let mut params = vec![0.0; layout.total];
        for shape in &layout.shapes {
            // biases (rows == 1) use the fan-in of their layer's weights
            let fan_in = if shape.rows == 1 {
                layout
                    .shapes
                    .iter()
                    .find(|s| s.name == shape.name.replace(".b", ".w"))
                    .map(|s| s.rows)
                    .unwrap_or(shape.cols)
            } else {
                shape.rows
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut params[shape.offset..shape.offset + shape.rows * shape.cols] {
                *p = rng.uniform(-bound, bound);
            }
        }
        Ok(NetworkState {
            spec,
            shapes: layout.shapes,
            params,
            m: vec![0.0; layout.total],
            v: vec![0.0; layout.total],
            step: 0,
            seed,
        })
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Immutable view of a named parameter block.
    pub fn block(&self, name: &str) -> Option<(&ParamShape, &[f64])> {
        let s = self.shapes.iter().find(|s| s.name == name)?;
        Some((s, &self.params[s.offset..s.offset + s.rows * s.cols]))
    }

    /// Mutable view of a named parameter block.
    pub fn block_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let s = self.shapes.iter().find(|s| s.name == name)?.clone();
        Some(&mut self.params[s.offset..s.offset + s.rows * s.cols])
    }

    /// Checks that the stored shapes match the spec's layout and that all
    /// parameters are finite. Used after deserialization.
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let layout = self.spec.layout();
        if layout.shapes != self.shapes || layout.total != self.params.len() {
            return Err(Error::Shape("network state does not match its spec".into()));
        }
        if self.m.len() != self.params.len() || self.v.len() != self.params.len() {
            return Err(Error::Shape("optimizer moments do not match parameters".into()));
        }
        if !self.params.iter().all(|p| p.is_finite()) {
            return Err(Error::Value("non-finite parameter".into()));
        }
        Ok(())
    }
}

/// How per-class loss weights are derived from training priors.
///
/// `InverseFrequency` up-weights rare classes (`max_c N_c / N_y` for the
/// softmax loss, `(N - N_c) / N_c` for binary channels). `FrequencyProportional`
/// applies the frequency-proportional form `N_y / N` as printed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    InverseFrequency,
    FrequencyProportional,
}

/// Which objective to train with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Class-weighted softmax cross-entropy.
    WeightedSoftmax,
    /// Per-coordinate MSE minus concordance, for valence/arousal.
    MseCcc,
    /// Per-channel binary cross-entropy with positive-class weights.
    WeightedBinary,
    /// Two-class cross-entropy with an up-weighted violent class.
    WeightedCe,
    /// Focal loss.
    Focal,
}

/// Loss configuration; weight vectors are derived from a prior table at
/// training time using `class_weight_mode`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub class_weight_mode: WeightMode,
    pub focal_gamma: f64,
    pub violent_weight: f64,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        LossSpec {
            kind,
            class_weight_mode: WeightMode::InverseFrequency,
            focal_gamma: 2.0,
            violent_weight: 1.15,
        }
    }

    pub fn with_mode(mut self, mode: WeightMode) -> Self {
        self.class_weight_mode = mode;
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.focal_gamma = gamma;
        self
    }

    pub fn with_violent_weight(mut self, w: f64) -> Self {
        self.violent_weight = w;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_gamma.is_finite() && self.focal_gamma >= 0.0) {
            return Err(Error::Config(format!("focal gamma must be >= 0, got {}", self.focal_gamma)));
        }
        if !(self.violent_weight.is_finite() && self.violent_weight > 0.0) {
            return Err(Error::Config(format!(
                "violent class weight must be positive, got {}",
                self.violent_weight
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_contract() {
        let e = NetworkSpec::expr_preset(1280, 128);
        assert_eq!(e.hidden_dims.len(), 1);
        assert_eq!(e.output_dim, 8);
        assert_eq!(e.head, HeadKind::Softmax);

        let va = NetworkSpec::va_preset(1280);
        assert!(va.hidden_dims.is_empty());
        assert_eq!(va.output_dim, 2);
        assert_eq!(va.head, HeadKind::Linear);

        let au = NetworkSpec::au_preset(1280, 128);
        assert_eq!(au.hidden_dims.len(), 1);
        assert_eq!(au.output_dim, 12);
        assert_eq!(au.head, HeadKind::Sigmoid);
    }

    #[test]
    fn tcn_receptive_field() {
        let t = TcnSpec::default();
        assert_eq!(t.num_layers, 5);
        assert_eq!(t.dilations, vec![1, 2, 4, 8, 16]);
        assert_eq!(t.receptive_field(), 1 + 2 * 31);
    }

    #[test]
    fn tcn_validate_rejects_mismatched_layers() {
        let t = TcnSpec {
            num_layers: 4,
            ..TcnSpec::default()
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn layout_is_contiguous_and_deterministic() {
        let spec = NetworkSpec::vd_preset(10, TcnSpec::with_channels(8));
        let l1 = spec.layout();
        let l2 = spec.layout();
        assert_eq!(l1, l2);
        let mut cursor = 0;
        for s in &l1.shapes {
            assert_eq!(s.offset, cursor);
            cursor += s.rows * s.cols;
        }
        assert_eq!(cursor, l1.total);
        // first layer changes channel count, so it carries a projection
        assert!(l1.find("tcn0.proj").is_some());
        assert!(l1.find("tcn1.proj").is_none());
    }

    #[test]
    fn init_is_seed_deterministic() {
        let spec = NetworkSpec::expr_preset(16, 8);
        let a = NetworkState::init(spec.clone(), 7).unwrap();
        let b = NetworkState::init(spec, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn state_json_roundtrip() {
        let spec = NetworkSpec::au_preset(6, 4);
        let state = NetworkState::init(spec, 3).unwrap();
        let text = serde_json::to_string(&state).unwrap();
        let back: NetworkState = serde_json::from_str(&text).unwrap();
        assert_eq!(state, back);
        back.validate().unwrap();
    }
}
