//! Central finite-difference gradient checks shared by the integration
//! tests and the acceptance runner.

#![allow(dead_code)]

use fedbs::data::{generate_synthetic, SyntheticSpec};
use fedbs::nn::{BackboneSpec, BnMode, ForwardCtx, Model, ParamSet};
use fedbs::rng::{stream_rng, SimRng, Stream};
use fedbs::tensor::{BatchStats, Conv2dSpec, Padding2d, Tape, Tensor, Var};
use fedbs::Result;
use rand::Rng;
use rand_distr::StandardNormal;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Builds a scalar from tape leaves holding the given inputs.
pub type Build = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

pub fn normal(rng: &mut SimRng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_f64(shape, &data).unwrap()
}

/// Gradients smaller than this are compared absolutely. Some vanish exactly,
/// e.g. the shift of a BN layer whose output feeds another BN layer through
/// a linear map.
pub const NORM_FLOOR: f64 = 1e-6;

/// `‖a − b‖ / max(‖a‖, ‖b‖, NORM_FLOOR)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm(a).max(norm(b)).max(NORM_FLOOR)
}

fn evaluate(build: &Build, inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), false).unwrap()).collect();
    let out = build(&mut tape, &vars).unwrap();
    tape.value(out).item().unwrap()
}

/// Largest relative error over all inputs between reverse-mode gradients and
/// central differences.
pub fn check(build: &Build, inputs: &[Tensor<f64>]) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true).unwrap()).collect();
    let out = build(&mut tape, &vars).unwrap();
    tape.backward(out).unwrap();
    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = tape.grad(*v).map(Tensor::into_data).unwrap_or_else(|| vec![0.0; inputs[i].numel()]);
        let mut numeric = vec![0.0; inputs[i].numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            *slot = (evaluate(build, &plus) - evaluate(build, &minus)) / (2.0 * STEP);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

/// Contracts `y` with a fixed random tensor so every output element matters.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(y).shape().to_vec();
    let weights = tape.constant(normal(&mut stream_rng(seed, Stream::Synthetic, 99, 0), &shape))?;
    let prod = tape.mul(y, weights)?;
    tape.sum(prod)
}

/// Per-layer checks for one seed: `(layer, worst relative error)`.
pub fn layer_checks(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = stream_rng(seed, Stream::Synthetic, 1000, 0);
    let mut out = Vec::new();

    let x = normal(&mut rng, &[4, 6]);
    let w = normal(&mut rng, &[6, 3]);
    let b = normal(&mut rng, &[3]);
    out.push((
        "linear",
        check(
            &move |t, v| {
                let y = t.matmul(v[0], v[1])?;
                let y = t.add_bias(y, v[2])?;
                project(t, y, seed)
            },
            &[x, w, b],
        ),
    ));

    let x = normal(&mut rng, &[2, 1, 3, 12]);
    let k = normal(&mut rng, &[4, 1, 1, 5]);
    out.push((
        "temporal conv (same padding)",
        check(
            &move |t, v| {
                let spec = Conv2dSpec { padding: Padding2d::same_width(5), ..Default::default() };
                let y = t.conv2d(v[0], v[1], spec)?;
                project(t, y, seed)
            },
            &[x, k],
        ),
    ));

    let x = normal(&mut rng, &[2, 4, 3, 6]);
    let k = normal(&mut rng, &[8, 1, 3, 1]);
    out.push((
        "depthwise spatial conv",
        check(
            &move |t, v| {
                let y = t.conv2d(v[0], v[1], Conv2dSpec { groups: 4, ..Default::default() })?;
                project(t, y, seed)
            },
            &[x, k],
        ),
    ));

    let x = normal(&mut rng, &[2, 2, 5, 7]);
    let k = normal(&mut rng, &[3, 2, 2, 3]);
    out.push((
        "strided padded conv",
        check(
            &move |t, v| {
                let spec = Conv2dSpec { stride: (2, 2), padding: Padding2d::symmetric(1, 1), groups: 1 };
                let y = t.conv2d(v[0], v[1], spec)?;
                project(t, y, seed)
            },
            &[x, k],
        ),
    ));

    let x = normal(&mut rng, &[2, 3, 2, 8]);
    out.push((
        "average pooling",
        check(
            &move |t, v| {
                let y = t.avg_pool2d(v[0], 1, 4)?;
                project(t, y, seed)
            },
            &[x],
        ),
    ));

    let x = normal(&mut rng, &[3, 7]);
    out.push((
        "elu",
        check(
            &move |t, v| {
                let y = t.elu(v[0])?;
                project(t, y, seed)
            },
            &[x.clone()],
        ),
    ));
    out.push((
        "relu",
        check(
            &move |t, v| {
                let y = t.relu(v[0])?;
                project(t, y, seed)
            },
            &[x],
        ),
    ));

    let x = normal(&mut rng, &[4, 5]);
    let mask: Vec<f64> = (0..20).map(|i| if (i * 7 + seed as usize) % 4 == 0 { 0.0 } else { 4.0 / 3.0 }).collect();
    out.push((
        "dropout (fixed mask)",
        check(
            &move |t, v| {
                let y = t.dropout_with_mask(v[0], mask.clone())?;
                project(t, y, seed)
            },
            &[x],
        ),
    ));

    let x = normal(&mut rng, &[5, 3, 1, 4]);
    let gamma = normal(&mut rng, &[3]);
    let beta = normal(&mut rng, &[3]);
    out.push((
        "batch norm (batch statistics)",
        check(
            &move |t, v| {
                let (y, _) = t.batch_norm(v[0], v[1], v[2], 1e-5)?;
                project(t, y, seed)
            },
            &[x.clone(), gamma.clone(), beta.clone()],
        ),
    ));
    let stats = BatchStats { mean: vec![0.3, -0.2, 0.1], var: vec![1.5, 0.7, 2.0] };
    out.push((
        "batch norm (running statistics)",
        check(
            &move |t, v| {
                let y = t.batch_norm_frozen(v[0], v[1], v[2], &stats, 1e-5)?;
                project(t, y, seed)
            },
            &[x, gamma, beta],
        ),
    ));

    let logits = normal(&mut rng, &[6, 4]);
    let labels: Vec<usize> = (0..6).map(|i| (i + seed as usize) % 4).collect();
    out.push((
        "softmax cross-entropy",
        check(&move |t, v| t.softmax_cross_entropy(v[0], &labels), &[logits]),
    ));

    let x = normal(&mut rng, &[2, 3, 4]);
    out.push((
        "reshape and flatten",
        check(
            &move |t, v| {
                let y = t.reshape(v[0], &[2, 1, 3, 4])?;
                let y = t.flatten(y)?;
                let y = t.square(y)?;
                project(t, y, seed)
            },
            &[x],
        ),
    ));
    out
}

/// Full EEGNet-lite training loss (batch-specific BN, fixed dropout masks)
/// checked against central differences over every trainable entry.
pub fn eegnet_check(seed: u64, mode: BnMode) -> f64 {
    let data = generate_synthetic(&SyntheticSpec {
        subjects: 1,
        trials_per_subject: 6,
        channels: 3,
        samples: 32,
        classes: 2,
        snr: 1.0,
        shift_strength: 0.3,
        seed,
    })
    .unwrap()
    .remove(0);
    let spec = BackboneSpec { temporal_kernel: 9, ..BackboneSpec::eegnet(3, 32, 2) };
    let model = Model::new(spec, mode).unwrap();
    let params: ParamSet<f64> = model.init_params(&mut stream_rng(seed, Stream::Init, 0, 0));
    let idx: Vec<usize> = (0..data.len()).collect();
    let (x, labels) = data.batch::<f64>(&idx);

    let mut rng = stream_rng(seed, Stream::Dropout, 0, 0);
    let mut ctx = ForwardCtx::train(&mut rng);
    let eval = model.loss_and_grad(&params, &x, &labels, &mut ctx).unwrap();
    let masks = ctx.into_masks();
    let loss_at = |p: &ParamSet<f64>| {
        model.loss_and_grad(p, &x, &labels, &mut ForwardCtx::replay(masks.clone())).unwrap().loss
    };

    let mut worst = 0.0f64;
    let names: Vec<String> = params.trainable().map(|(n, _)| n.to_string()).collect();
    for name in names {
        let analytic = eval.grads.get(&name).unwrap().to_vec();
        let mut numeric = vec![0.0; analytic.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut p = params.clone();
            p.tensor_mut(&name).unwrap().data_mut()[j] += STEP;
            let up = loss_at(&p);
            p.tensor_mut(&name).unwrap().data_mut()[j] -= 2.0 * STEP;
            let down = loss_at(&p);
            *slot = (up - down) / (2.0 * STEP);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}
