//! Central finite differences and the per-layer gradient-check suite.
//!
//! The oracle only ever evaluates forward passes, so it stays independent of
//! every backward implementation it checks.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::layers::{
    conv_comparison_loss, BatchNorm2d, Conv2d, Layer, LeakyRelu, Linear, Mode, Relu, Sigmoid,
};
use crate::network::{Network, Role};
use crate::ops::softmax_cross_entropy;
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Maximum accepted relative error.
pub const TOLERANCE: f64 = 1e-5;
/// Central-difference step.
pub const EPS: f64 = 1e-4;

/// `(f(x+εe_i) − f(x−εe_i)) / 2ε` for every coordinate `i`.
pub fn finite_diff_grad(
    mut f: impl FnMut(&Tensor<f64>) -> Result<f64>,
    point: &Tensor<f64>,
    eps: f64,
) -> Result<Tensor<f64>> {
    let mut x = point.clone();
    let mut grad = Tensor::zeros(point.shape());
    for i in 0..point.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let plus = f(&x)?;
        x.data_mut()[i] = orig - eps;
        let minus = f(&x)?;
        x.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite("finite_diff_grad objective"));
        }
        grad.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(grad)
}

/// Gradients whose largest entry is below this are compared absolutely.
pub const SCALE_FLOOR: f64 = 1e-6;

/// `max_i |a_i − n_i| / max(‖a‖_∞, ‖n‖_∞, SCALE_FLOOR)`.
///
/// The floor matters for gradients that vanish identically, such as a conv
/// bias feeding a batch-statistics batchnorm.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(SCALE_FLOOR, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl GradCheck {
    fn new(name: impl Into<String>, max_rel_error: f64) -> Self {
        Self {
            name: name.into(),
            max_rel_error,
            passed: max_rel_error < TOLERANCE,
        }
    }
}

fn normal(shape: (usize, usize, usize, usize), rng: &mut Prng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

/// Normal draws kept at least 0.05 away from the kink at zero.
fn away_from_zero(shape: (usize, usize, usize, usize), rng: &mut Prng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| loop {
        let v = rng.normal();
        if v.abs() > 0.05 {
            break v;
        }
    })
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Comparison setup: reference activation and blend weight.
struct ComparisonProbe {
    reference: Tensor<f64>,
    alpha: f64,
}

/// Check input and parameter gradients of a single layer against the scalar
/// objective `Σ r⊙y`, or, for a comparison layer, against
/// `(1−α)·Σ r⊙y + α·s·E_c(y)` with the norm-matching factor `s` frozen at
/// the evaluation point.
fn check_layer(
    name: &str,
    layer: Layer<f64>,
    input: &Tensor<f64>,
    mode: Mode,
    probe: Option<ComparisonProbe>,
    rng: &mut Prng,
) -> Result<GradCheck> {
    let mut analytic = layer.clone();
    let y = analytic.forward(input, mode)?;
    let upstream = normal(y.shape().dims().into(), rng);

    let (alpha, scale, reference) = match &probe {
        Some(p) => {
            let g_c = y.sub(&p.reference)?;
            let s = upstream.l2_norm() / g_c.l2_norm();
            (p.alpha, s, Some(p.reference.clone()))
        }
        None => (0.0, 0.0, None),
    };
    let objective = |layer: &mut Layer<f64>, x: &Tensor<f64>| -> Result<f64> {
        let y = layer.forward(x, mode)?;
        let mut value = (1.0 - alpha) * dot(&upstream, &y);
        if let Some(r) = &reference {
            value += alpha * scale * conv_comparison_loss(&y, r)?;
        }
        Ok(value)
    };

    if let (Some(r), Layer::Conv(conv)) = (&reference, &mut analytic) {
        conv.record_reference(r.clone())?;
        conv.set_alpha(alpha)?;
    }
    let grad_in = analytic.backward(&upstream, true)?;

    let mut worst = {
        let mut l = layer.clone();
        let numeric = finite_diff_grad(|x| objective(&mut l, x), input, EPS)?;
        relative_error(grad_in.data(), numeric.data())
    };
    let n_params = layer.params().len();
    for p in 0..n_params {
        let point = layer.params()[p].value.clone();
        let numeric = finite_diff_grad(
            |v| {
                let mut l = layer.clone();
                l.params_mut()[p].value = v.clone();
                objective(&mut l, input)
            },
            &point,
            EPS,
        )?;
        let err = relative_error(analytic.params()[p].grad.data(), numeric.data());
        worst = worst.max(err);
    }
    Ok(GradCheck::new(name, worst))
}

/// Every layer kind, checked in 64-bit on inputs no larger than `(2, 3, 6, 6)`.
pub fn run_suite(seed: u64) -> Result<Vec<GradCheck>> {
    let mut rng = Prng::new(seed);
    let mut checks = Vec::new();
    let x = normal((2, 3, 6, 6), &mut rng);

    let conv = Conv2d::new(3, 4, 3, 1, &mut rng)?;
    checks.push(check_layer(
        "conv",
        Layer::Conv(conv),
        &x,
        Mode::Train,
        None,
        &mut rng,
    )?);

    let conv = Conv2d::new(3, 4, 3, 2, &mut rng)?;
    checks.push(check_layer(
        "conv_stride2",
        Layer::Conv(conv),
        &x,
        Mode::Train,
        None,
        &mut rng,
    )?);

    let mut bn = BatchNorm2d::new(3);
    bn.gamma.value = normal((1, 3, 1, 1), &mut rng);
    bn.beta.value = normal((1, 3, 1, 1), &mut rng);
    checks.push(check_layer(
        "batchnorm",
        Layer::BatchNorm(bn.clone()),
        &x,
        Mode::Train,
        None,
        &mut rng,
    )?);
    bn.running_mean = vec![0.3, -0.2, 0.1];
    bn.running_var = vec![1.5, 0.7, 2.0];
    checks.push(check_layer(
        "batchnorm_eval",
        Layer::BatchNorm(bn),
        &x,
        Mode::Eval,
        None,
        &mut rng,
    )?);

    let kinked = away_from_zero((2, 3, 6, 6), &mut rng);
    checks.push(check_layer(
        "leaky_relu",
        Layer::LeakyRelu(LeakyRelu::new(0.2)),
        &kinked,
        Mode::Train,
        None,
        &mut rng,
    )?);
    checks.push(check_layer(
        "relu",
        Layer::Relu(Relu::new()),
        &kinked,
        Mode::Train,
        None,
        &mut rng,
    )?);
    checks.push(check_layer(
        "sigmoid",
        Layer::Sigmoid(Sigmoid::new()),
        &x,
        Mode::Train,
        None,
        &mut rng,
    )?);

    let fc = Linear::new(3 * 6 * 6, 5, &mut rng);
    checks.push(check_layer(
        "fully_connected",
        Layer::Linear(fc),
        &x,
        Mode::Train,
        None,
        &mut rng,
    )?);

    checks.push(check_softmax_ce(&mut rng)?);

    for alpha in [0.0, 0.3, 0.8, 1.0] {
        let conv = Conv2d::new(3, 4, 3, 1, &mut rng)?.with_comparison(alpha)?;
        let reference = normal((2, 4, 6, 6), &mut rng);
        checks.push(check_layer(
            &format!("conv_comparison_alpha_{alpha}"),
            Layer::Conv(conv),
            &x,
            Mode::Train,
            Some(ComparisonProbe { reference, alpha }),
            &mut rng,
        )?);
    }

    checks.push(check_network_chain(&mut rng)?);
    Ok(checks)
}

fn check_softmax_ce(rng: &mut Prng) -> Result<GradCheck> {
    let logits = normal((2, 5, 1, 1), rng);
    let labels = [2, 5];
    let (_, analytic) = softmax_cross_entropy(&logits, &labels)?;
    let numeric = finite_diff_grad(|z| Ok(softmax_cross_entropy(z, &labels)?.0), &logits, EPS)?;
    Ok(GradCheck::new(
        "softmax_ce",
        relative_error(analytic.data(), numeric.data()),
    ))
}

/// Small conv → batchnorm → leaky → stride-2 conv → fully-connected → softmax-CE
/// chain, checked end to end through the [`Network`] container.
fn check_network_chain(rng: &mut Prng) -> Result<GradCheck> {
    let layers = vec![
        Layer::Conv(Conv2d::new(2, 3, 3, 1, rng)?),
        Layer::BatchNorm(BatchNorm2d::new(3)),
        Layer::LeakyRelu(LeakyRelu::new(0.2)),
        Layer::Conv(Conv2d::new(3, 3, 3, 2, rng)?),
        Layer::Linear(Linear::new(3 * 3 * 3, 4, rng)),
    ];
    let net = Network::new(Role::Discriminator, 2, layers);
    let x = normal((2, 2, 6, 6), rng);
    let labels = [1, 4];
    let loss = |net: &mut Network<f64>, x: &Tensor<f64>| -> Result<f64> {
        Ok(softmax_cross_entropy(&net.forward(x)?, &labels)?.0)
    };

    let mut analytic = net.clone();
    let logits = analytic.forward(&x)?;
    let (_, g) = softmax_cross_entropy(&logits, &labels)?;
    let grad_in = analytic.backward(&g)?;

    let mut probe = net.clone();
    let numeric = finite_diff_grad(|v| loss(&mut probe, v), &x, EPS)?;
    let mut worst = relative_error(grad_in.data(), numeric.data());

    for li in 0..net.layers().len() {
        for pi in 0..net.layers()[li].params().len() {
            let point = net.layers()[li].params()[pi].value.clone();
            let numeric = finite_diff_grad(
                |v| {
                    let mut n = net.clone();
                    n.layers_mut()[li].params_mut()[pi].value = v.clone();
                    loss(&mut n, &x)
                },
                &point,
                EPS,
            )?;
            let analytic_grad = &analytic.layers()[li].params()[pi].grad;
            worst = worst.max(relative_error(analytic_grad.data(), numeric.data()));
        }
    }
    Ok(GradCheck::new("network_chain", worst))
}
