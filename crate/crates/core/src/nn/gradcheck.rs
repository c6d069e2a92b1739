//! Central-difference gradient checks in f64.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};

use super::layers::{LayerSpec, Padding};
use super::network::{GraphSpec, Mode, Network};
use super::params::ParamId;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

pub const LAYER_EPS: f64 = 1e-3;
pub const LAYER_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub checked: usize,
    pub worst: f64,
    /// Where the worst relative error occurred, e.g. `t0.w[3]`.
    pub worst_at: String,
}

impl GradReport {
    pub fn new() -> Self {
        Self {
            checked: 0,
            worst: 0.0,
            worst_at: String::new(),
        }
    }

    pub fn record(&mut self, at: impl FnOnce() -> String, analytic: f64, numeric: f64) {
        let e = rel_err(analytic, numeric);
        self.checked += 1;
        if !(e <= self.worst) {
            self.worst = e;
            self.worst_at = format!("{} (analytic {analytic:.6e}, numeric {numeric:.6e})", at());
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.worst < tol
    }
}

impl Default for GradReport {
    fn default() -> Self {
        Self::new()
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-6)
}

pub struct LayerCase {
    pub name: &'static str,
    pub layers: Vec<LayerSpec>,
    pub item: Vec<usize>,
    pub batch: usize,
    pub mode: Mode,
}

fn case(name: &'static str, layers: Vec<LayerSpec>, item: &[usize], batch: usize, mode: Mode) -> LayerCase {
    LayerCase {
        name,
        layers,
        item: item.to_vec(),
        batch,
        mode,
    }
}

/// One small network per layer kind, plus a mixed encoder/decoder stack.
pub fn layer_cases() -> Vec<LayerCase> {
    use Mode::{Eval, Train};
    vec![
        case("dense tanh + linear", vec![LayerSpec::dense(4).tanh(), LayerSpec::dense(3)], &[5], 3, Train),
        case("dense relu", vec![LayerSpec::dense(6).relu(), LayerSpec::dense(2)], &[4], 4, Train),
        case("conv2d stride 2", vec![LayerSpec::conv2d(3, 3, 2)], &[2, 7, 6], 2, Train),
        case("conv2d stride 1 relu", vec![LayerSpec::conv2d(2, 3, 1).relu()], &[2, 5, 5], 2, Train),
        case("conv1d circular", vec![LayerSpec::conv1d(3, 5, 2, Padding::Circular)], &[2, 13], 2, Train),
        case("conv transpose2d", vec![LayerSpec::conv_transpose2d(2, 3, 2, [8, 6])], &[3, 4, 3], 2, Train),
        case("conv transpose2d odd", vec![LayerSpec::conv_transpose2d(2, 3, 2, [7, 5])], &[2, 4, 3], 2, Train),
        case(
            "conv transpose1d circular",
            vec![LayerSpec::conv_transpose1d(2, 5, 2, 13, Padding::Circular)],
            &[3, 7],
            2,
            Train,
        ),
        case(
            "max pool",
            vec![LayerSpec::max_pool2d(2), LayerSpec::flatten(), LayerSpec::dense(2)],
            &[2, 6, 5],
            2,
            Train,
        ),
        case("avg pool", vec![LayerSpec::avg_pool2d(2)], &[2, 6, 6], 2, Train),
        case("batch norm train (conv)", vec![LayerSpec::conv2d(3, 3, 1).bn().tanh()], &[2, 4, 4], 3, Train),
        case("batch norm train (dense)", vec![LayerSpec::dense(3).bn()], &[4], 5, Train),
        case("batch norm eval", vec![LayerSpec::conv1d(2, 3, 1, Padding::Same).bn()], &[3, 6], 2, Eval),
        case(
            "reshape, flatten, scale",
            vec![
                LayerSpec::flatten(),
                LayerSpec::dense(12),
                LayerSpec::reshape(&[3, 2, 2]),
                LayerSpec::conv2d(1, 3, 1),
                LayerSpec::flatten(),
                LayerSpec::scale(2.0).tanh(),
            ],
            &[2, 3],
            2,
            Train,
        ),
        case(
            "small encoder/decoder",
            vec![
                LayerSpec::conv2d(2, 3, 2).bn().relu(),
                LayerSpec::max_pool2d(2),
                LayerSpec::conv2d(3, 3, 2).bn().relu(),
                LayerSpec::flatten(),
                LayerSpec::dense(4),
                LayerSpec::dense(12).relu(),
                LayerSpec::reshape(&[3, 2, 2]),
                LayerSpec::conv_transpose2d(2, 3, 2, [4, 4]).relu(),
                LayerSpec::conv2d(1, 3, 1),
            ],
            &[1, 8, 8],
            4,
            Train,
        ),
    ]
}

fn projected(net: &Network<f64>, x: &Tensor<f64>, r: &Tensor<f64>, mode: Mode) -> Result<f64> {
    Ok(net.apply(x, mode)?.dot(r))
}

/// Compares analytic gradients of `sum(r * net(x))` with central differences
/// for the input and every trainable parameter. Weights are redrawn from
/// N(0, 0.25) so that every path contributes; in eval mode the running
/// statistics are randomized too.
pub fn check_case(case: &LayerCase, seed: u64) -> Result<GradReport> {
    let mut rng = seeded(seed);
    let spec = GraphSpec {
        input_shape: case.item.clone(),
        layers: case.layers.clone(),
    };
    let mut net = Network::<f64>::new(spec, "t", &mut rng)?;
    for p in net.params.iter_mut().filter(|p| p.trainable) {
        for v in p.value.data_mut() {
            let u: f64 = StandardNormal.sample(&mut rng);
            *v = 0.5 * u;
        }
    }
    if case.mode == Mode::Eval {
        for p in net.params.iter_mut().filter(|p| !p.trainable) {
            for v in p.value.data_mut() {
                let u: f64 = StandardNormal.sample(&mut rng);
                *v = if p.name.ends_with("var") { 0.5 + u * u } else { u };
            }
        }
    }
    // distinct, well-separated inputs keep max-pool windows away from ties
    let mut shape = vec![case.batch];
    shape.extend_from_slice(&case.item);
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| 4.0 * (i as f64 + 0.5) / n as f64 - 2.0).collect();
    vals.shuffle(&mut rng);
    let x = Tensor::from_vec(&shape, vals)?;
    let y = net.infer(&x)?;
    let r = normal_tensor(y.shape(), &mut rng)?;
    let frozen = net.params.clone();
    net.forward(&x, case.mode)?;
    // restore running statistics so finite differences see the same net
    net.params = frozen;
    let dx = net.backward(&r)?;

    let eps = LAYER_EPS;
    let mut report = GradReport::new();
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + eps;
        let lp = projected(&net, &xp, &r, case.mode)?;
        xp.data_mut()[i] = orig - eps;
        let lm = projected(&net, &xp, &r, case.mode)?;
        xp.data_mut()[i] = orig;
        report.record(|| format!("input[{i}]"), dx.data()[i], (lp - lm) / (2.0 * eps));
    }
    for pi in 0..net.params.len() {
        let id = ParamId(pi);
        if !net.params.get(id).trainable {
            continue;
        }
        let grad = net.params.get(id).grad.clone();
        for (i, g) in grad.iter().enumerate() {
            let orig = net.params.get(id).value.data()[i];
            net.params.get_mut(id).value.data_mut()[i] = orig + eps;
            let lp = projected(&net, &x, &r, case.mode)?;
            net.params.get_mut(id).value.data_mut()[i] = orig - eps;
            let lm = projected(&net, &x, &r, case.mode)?;
            net.params.get_mut(id).value.data_mut()[i] = orig;
            report.record(|| format!("{}[{i}]", net.params.get(id).name), *g, (lp - lm) / (2.0 * eps));
        }
    }
    if !report.worst.is_finite() {
        return Err(Error::NonFinite(format!("gradient check {}", case.name)));
    }
    Ok(report)
}

pub fn normal_tensor(shape: &[usize], rng: &mut Rng) -> Result<Tensor<f64>> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| StandardNormal.sample(rng)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_kind_matches_finite_differences() {
        for (i, c) in layer_cases().iter().enumerate() {
            let r = check_case(c, i as u64 + 1).unwrap();
            assert!(r.passes(LAYER_TOL), "{}: {:.2e} at {}", c.name, r.worst, r.worst_at);
        }
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let mut r = GradReport::new();
        r.record(|| "a".into(), 1.0, 1.0);
        assert!(r.passes(LAYER_TOL));
        r.record(|| "b".into(), 1.0, 1.01);
        assert!(!r.passes(LAYER_TOL));
        assert!(r.worst_at.starts_with('b'));
    }
}
