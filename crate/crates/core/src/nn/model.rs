use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::scalar::Scalar;
use crate::tensor::{dropout_mask, BatchStats, Conv2dSpec, Padding2d, Tape, Tensor, Var};

use super::batchnorm::{batchnorm_forward, update_running, BnConfig, BnMode};
use super::params::{GradSet, ParamEntry, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    #[serde(rename = "eegnet_lite")]
    EegNetLite,
    TestMlp,
}

/// Shape and width settings of a backbone network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    /// EEG channels (C).
    pub channels: usize,
    /// Samples per trial (T).
    pub samples: usize,
    /// Number of classes (N_c).
    pub classes: usize,
    /// Temporal filters.
    pub f1: usize,
    /// Spatial depth multiplier.
    pub depth: usize,
    /// Pointwise filters of the separable block.
    pub f2: usize,
    pub dropout: f64,
    /// Width of the first temporal kernel; `min(T, 64)` by default.
    pub temporal_kernel: usize,
    /// Hidden width of the test MLP.
    pub hidden: usize,
}

impl BackboneSpec {
    pub fn eegnet(channels: usize, samples: usize, classes: usize) -> Self {
        BackboneSpec {
            kind: BackboneKind::EegNetLite,
            channels,
            samples,
            classes,
            f1: 8,
            depth: 2,
            f2: 16,
            dropout: 0.25,
            temporal_kernel: samples.min(64),
            hidden: 64,
        }
    }

    pub fn test_mlp(channels: usize, samples: usize, classes: usize) -> Self {
        BackboneSpec { kind: BackboneKind::TestMlp, ..Self::eegnet(channels, samples, classes) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.channels == 0 || self.samples == 0 || self.classes == 0 {
            return bad(format!(
                "channels, samples and classes must be positive (C={}, T={}, N_c={})",
                self.channels, self.samples, self.classes
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        match self.kind {
            BackboneKind::EegNetLite => {
                if self.f1 == 0 || self.depth == 0 || self.f2 == 0 || self.temporal_kernel == 0 {
                    return bad("EEGNet widths and temporal kernel must be positive".into());
                }
                if self.samples / POOL1 / POOL2 == 0 {
                    return bad(format!(
                        "T={} too short for the 1x{POOL1} and 1x{POOL2} pooling chain (need T >= {})",
                        self.samples,
                        POOL1 * POOL2
                    ));
                }
            }
            BackboneKind::TestMlp => {
                if self.hidden == 0 {
                    return bad("hidden width must be positive".into());
                }
            }
        }
        Ok(())
    }
}

const POOL1: usize = 4;
const POOL2: usize = 8;
const SEPARABLE_KERNEL: usize = 16;

#[derive(Clone, Debug, PartialEq)]
enum Layer {
    /// `[B, C, T] → [B, 1, C, T]`.
    AddChannelAxis,
    Conv {
        name: String,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        spec: Conv2dSpec,
    },
    BatchNorm { name: String, channels: usize },
    Elu,
    Relu,
    AvgPool(usize, usize),
    Dropout(f64),
    Flatten,
    Linear { name: String, inputs: usize, outputs: usize },
}

/// A backbone: its layer sequence and BN behavior. Parameters live in a
/// separate [`ParamSet`] so they can be copied, exchanged and averaged.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: BackboneSpec,
    bn: BnConfig,
    layers: Vec<Layer>,
}

/// Source of dropout masks for one forward pass.
enum DropoutSource<'r, S> {
    Off,
    Sample { rng: &'r mut SimRng, masks: Vec<Vec<S>> },
    Replay { masks: Vec<Vec<S>>, next: usize },
}

/// Mode of a forward pass: training or inference, and where dropout masks
/// come from. A training pass records its masks so a second pass (the SAM
/// perturbed pass) can replay them.
pub struct ForwardCtx<'r, S> {
    training: bool,
    dropout: DropoutSource<'r, S>,
}

impl<'r, S: Scalar> ForwardCtx<'r, S> {
    pub fn eval() -> Self {
        ForwardCtx { training: false, dropout: DropoutSource::Off }
    }

    pub fn train(rng: &'r mut SimRng) -> Self {
        ForwardCtx { training: true, dropout: DropoutSource::Sample { rng, masks: Vec::new() } }
    }

    /// Training pass that reuses masks recorded by an earlier pass.
    pub fn replay(masks: Vec<Vec<S>>) -> Self {
        ForwardCtx { training: true, dropout: DropoutSource::Replay { masks, next: 0 } }
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn into_masks(self) -> Vec<Vec<S>> {
        match self.dropout {
            DropoutSource::Off => Vec::new(),
            DropoutSource::Sample { masks, .. } | DropoutSource::Replay { masks, .. } => masks,
        }
    }

    fn mask(&mut self, numel: usize, p: f64) -> Result<Option<Vec<S>>> {
        if !self.training || p == 0.0 {
            return Ok(None);
        }
        match &mut self.dropout {
            DropoutSource::Off => Ok(None),
            DropoutSource::Sample { rng, masks } => {
                let m = dropout_mask(numel, p, *rng)?;
                masks.push(m.clone());
                Ok(Some(m))
            }
            DropoutSource::Replay { masks, next } => {
                let m = masks.get(*next).cloned().ok_or_else(|| {
                    Error::shape("dropout", "replay requested more masks than were recorded")
                })?;
                if m.len() != numel {
                    return Err(Error::shape("dropout", "replayed mask has the wrong size"));
                }
                *next += 1;
                Ok(Some(m))
            }
        }
    }
}

/// Handles produced by [`Model::forward`].
pub struct ForwardOutput<S> {
    pub logits: Var,
    /// Input of the final linear layer.
    pub features: Var,
    /// Tape leaves of the trainable parameters, in parameter order.
    pub param_vars: Vec<(String, Var)>,
    /// Batch statistics per BN layer (training passes only).
    pub bn_stats: Vec<(String, BatchStats<S>)>,
}

/// Loss, gradients and BN batch statistics of one training pass.
pub struct LossEval<S> {
    pub loss: S,
    pub grads: GradSet<S>,
    pub bn_stats: Vec<(String, BatchStats<S>)>,
}

fn conv_layer(name: &str, cin: usize, cout: usize, kernel: (usize, usize), padding: Padding2d, groups: usize) -> Layer {
    Layer::Conv {
        name: name.to_string(),
        cin,
        cout,
        kernel,
        spec: Conv2dSpec { stride: (1, 1), padding, groups },
    }
}

fn bn_layer(name: &str, channels: usize) -> Layer {
    Layer::BatchNorm { name: name.to_string(), channels }
}

impl Model {
    pub fn new(spec: BackboneSpec, mode: BnMode) -> Result<Self> {
        spec.validate()?;
        let layers = match spec.kind {
            BackboneKind::EegNetLite => {
                let (f1, fd, f2) = (spec.f1, spec.f1 * spec.depth, spec.f2);
                let k = spec.temporal_kernel;
                let pooled = spec.samples / POOL1 / POOL2;
                vec![
                    Layer::AddChannelAxis,
                    conv_layer("temporal_conv", 1, f1, (1, k), Padding2d::same_width(k), 1),
                    bn_layer("bn1", f1),
                    conv_layer("spatial_conv", f1, fd, (spec.channels, 1), Padding2d::default(), f1),
                    bn_layer("bn2", fd),
                    Layer::Elu,
                    Layer::AvgPool(1, POOL1),
                    Layer::Dropout(spec.dropout),
                    conv_layer(
                        "separable_depthwise",
                        fd,
                        fd,
                        (1, SEPARABLE_KERNEL),
                        Padding2d::same_width(SEPARABLE_KERNEL),
                        fd,
                    ),
                    conv_layer("separable_pointwise", fd, f2, (1, 1), Padding2d::default(), 1),
                    bn_layer("bn3", f2),
                    Layer::Elu,
                    Layer::AvgPool(1, POOL2),
                    Layer::Dropout(spec.dropout),
                    Layer::Flatten,
                    Layer::Linear { name: "classifier".into(), inputs: f2 * pooled, outputs: spec.classes },
                ]
            }
            BackboneKind::TestMlp => vec![
                Layer::Flatten,
                Layer::Linear { name: "fc1".into(), inputs: spec.channels * spec.samples, outputs: spec.hidden },
                bn_layer("bn1", spec.hidden),
                Layer::Relu,
                Layer::Linear { name: "fc2".into(), inputs: spec.hidden, outputs: spec.classes },
            ],
        };
        Ok(Model { spec, bn: BnConfig::new(mode), layers })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn bn_config(&self) -> &BnConfig {
        &self.bn
    }

    pub fn bn_mode(&self) -> BnMode {
        self.bn.mode
    }

    pub fn bn_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| matches!(l, Layer::BatchNorm { .. })).count()
    }

    /// Fresh parameters: conv and linear weights (and linear biases) uniform in
    /// `±1/sqrt(fan_in)`, γ = 1, β = 0, running mean 0, running variance 1.
    pub fn init_params<S: Scalar>(&self, rng: &mut SimRng) -> ParamSet<S> {
        let mut params = ParamSet::new();
        let mut add = |name: String, tensor: Tensor<S>, is_bn: bool, trainable: bool| {
            params
                .insert(name, ParamEntry { tensor, is_bn, trainable })
                .expect("layer names are unique");
        };
        let mut uniform = |shape: &[usize], fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| S::of(rng.gen_range(-bound..bound))).collect();
            Tensor::from_parts(shape.to_vec(), data)
        };
        for layer in &self.layers {
            match layer {
                Layer::Conv { name, cin, cout, kernel, spec } => {
                    let cin_g = cin / spec.groups;
                    let shape = [*cout, cin_g, kernel.0, kernel.1];
                    add(format!("{name}.weight"), uniform(&shape, cin_g * kernel.0 * kernel.1), false, true);
                }
                Layer::Linear { name, inputs, outputs } => {
                    add(format!("{name}.weight"), uniform(&[*inputs, *outputs], *inputs), false, true);
                    add(format!("{name}.bias"), uniform(&[*outputs], *inputs), false, true);
                }
                Layer::BatchNorm { name, channels } => {
                    let c = *channels;
                    add(format!("{name}.gamma"), Tensor::full(&[c], S::one()), true, true);
                    add(format!("{name}.beta"), Tensor::zeros(&[c]), true, true);
                    add(format!("{name}.running_mean"), Tensor::zeros(&[c]), true, false);
                    add(format!("{name}.running_var"), Tensor::full(&[c], S::one()), true, false);
                }
                _ => {}
            }
        }
        params
    }

    /// Records a forward pass of `input: [B, C, T]`. Trainable parameters are
    /// placed on the tape as leaves that require grad only in training passes.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        params: &ParamSet<S>,
        input: Var,
        ctx: &mut ForwardCtx<'_, S>,
    ) -> Result<ForwardOutput<S>> {
        let shape = tape.value(input).shape();
        if shape.len() != 3 || shape[1] != self.spec.channels || shape[2] != self.spec.samples {
            return Err(Error::shape(
                "model input",
                format!("expected [B, {}, {}], got {shape:?}", self.spec.channels, self.spec.samples),
            ));
        }
        let training = ctx.training();
        let mut param_vars = Vec::new();
        for (name, t) in params.trainable() {
            param_vars.push((name.to_string(), tape.leaf(t.clone(), training)?));
        }
        let var_of = |name: &str| {
            param_vars
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| Error::MissingParam(name.to_string()))
        };

        let mut bn_stats = Vec::new();
        let mut x = input;
        let mut features = None;
        let last_linear = self.layers.iter().rposition(|l| matches!(l, Layer::Linear { .. }));
        for (i, layer) in self.layers.iter().enumerate() {
            x = match layer {
                Layer::AddChannelAxis => {
                    let s = tape.value(x).shape().to_vec();
                    tape.reshape(x, &[s[0], 1, s[1], s[2]])?
                }
                Layer::Conv { name, spec, .. } => tape.conv2d(x, var_of(&format!("{name}.weight"))?, *spec)?,
                Layer::BatchNorm { name, .. } => {
                    let gamma = var_of(&format!("{name}.gamma"))?;
                    let beta = var_of(&format!("{name}.beta"))?;
                    let running = BatchStats {
                        mean: params.tensor(&format!("{name}.running_mean"))?.data().to_vec(),
                        var: params.tensor(&format!("{name}.running_var"))?.data().to_vec(),
                    };
                    let out = batchnorm_forward(tape, x, gamma, beta, &running, &self.bn, training)?;
                    if let Some(stats) = out.batch_stats {
                        bn_stats.push((name.clone(), stats));
                    }
                    out.out
                }
                Layer::Elu => tape.elu(x)?,
                Layer::Relu => tape.relu(x)?,
                Layer::AvgPool(kh, kw) => tape.avg_pool2d(x, *kh, *kw)?,
                Layer::Dropout(p) => {
                    let numel = tape.value(x).numel();
                    match ctx.mask(numel, *p)? {
                        Some(mask) => tape.dropout_with_mask(x, mask)?,
                        None => x,
                    }
                }
                Layer::Flatten => tape.flatten(x)?,
                Layer::Linear { name, .. } => {
                    if Some(i) == last_linear {
                        features = Some(x);
                    }
                    let y = tape.matmul(x, var_of(&format!("{name}.weight"))?)?;
                    tape.add_bias(y, var_of(&format!("{name}.bias"))?)?
                }
            };
        }
        Ok(ForwardOutput { logits: x, features: features.unwrap_or(x), param_vars, bn_stats })
    }

    /// Mean cross-entropy of a batch and its gradient w.r.t. every trainable
    /// parameter. `labels` are zero-based.
    pub fn loss_and_grad<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        x: &Tensor<S>,
        labels: &[usize],
        ctx: &mut ForwardCtx<'_, S>,
    ) -> Result<LossEval<S>> {
        let mut tape = Tape::new();
        let input = tape.constant(x.clone())?;
        let out = self.forward(&mut tape, params, input, ctx)?;
        let loss = tape.softmax_cross_entropy(out.logits, labels)?;
        let loss_value = tape.value(loss).item().expect("scalar loss");
        let mut grads = GradSet::new();
        if ctx.training() {
            tape.backward(loss)?;
            for (name, v) in &out.param_vars {
                let g = match tape.grad(*v) {
                    Some(g) => g.into_data(),
                    None => vec![S::zero(); tape.value(*v).numel()],
                };
                grads.insert(name.clone(), g);
            }
        }
        Ok(LossEval { loss: loss_value, grads, bn_stats: out.bn_stats })
    }

    /// Folds training-pass batch statistics into the running estimates.
    pub fn apply_bn_stats<S: Scalar>(&self, params: &mut ParamSet<S>, stats: &[(String, BatchStats<S>)]) -> Result<()> {
        for (name, batch) in stats {
            let mut mean = params.tensor(&format!("{name}.running_mean"))?.data().to_vec();
            let mut var = params.tensor(&format!("{name}.running_var"))?.data().to_vec();
            update_running(&mut mean, &mut var, batch, self.bn.momentum)?;
            params.tensor_mut(&format!("{name}.running_mean"))?.data_mut().copy_from_slice(&mean);
            params.tensor_mut(&format!("{name}.running_var"))?.data_mut().copy_from_slice(&var);
        }
        Ok(())
    }

    /// Inference logits `[B, N_c]` and features for one batch.
    pub fn infer<S: Scalar>(&self, params: &ParamSet<S>, x: &Tensor<S>) -> Result<(Tensor<S>, Tensor<S>)> {
        let mut tape = Tape::new();
        let input = tape.constant(x.clone())?;
        let out = self.forward(&mut tape, params, input, &mut ForwardCtx::eval())?;
        Ok((tape.value(out.logits).clone(), tape.value(out.features).clone()))
    }
}
