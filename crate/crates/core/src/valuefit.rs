//! Regression of the SCMPC optimal value function, split into a performance network and a
//! constraint network, plus the approximation-error estimate over a dataset.
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;
use crate::nn::{self, Mlp, Objective, OutputAffine, TrainConfig, TrainSummary, Workspace};

/// Approximate (or exact) optimal value function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValueModel {
    /// `V(x) = max(0, net_p(x)) + max(0, net_xi(x))`.
    Network { net_p: Mlp, net_xi: Option<Mlp> },
    /// Closed form `x^T P x`, no constraint part.
    Quadratic { p: Matrix },
}

impl ValueModel {
    /// `V(x) = x^2`, the exact value of the scalar benchmark.
    pub fn exact_quad1d() -> Self {
        ValueModel::Quadratic {
            p: Matrix::identity(1),
        }
    }

    pub fn n_x(&self) -> usize {
        match self {
            ValueModel::Network { net_p, .. } => net_p.n_in(),
            ValueModel::Quadratic { p } => p.rows,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ValueModel::Network { net_p, net_xi } => {
                net_p.validate()?;
                check_len("value network output", 1, net_p.n_out())?;
                if let Some(n) = net_xi {
                    n.validate()?;
                    check_len("constraint network input", net_p.n_in(), n.n_in())?;
                    check_len("constraint network output", 1, n.n_out())?;
                }
                Ok(())
            }
            ValueModel::Quadratic { p } => {
                if !p.is_square() {
                    return Err(Error::InvalidProblem(
                        "quadratic value needs a square matrix".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Clamped performance and constraint parts at `x`.
    pub fn parts(&self, x: &[f64]) -> (f64, f64) {
        match self {
            ValueModel::Network { net_p, net_xi } => {
                let mut ws = Workspace::default();
                let p = net_p.forward_batch(x, 1, &mut ws)[0].max(0.0);
                let xi = net_xi
                    .as_ref()
                    .map_or(0.0, |n| n.forward_batch(x, 1, &mut ws)[0].max(0.0));
                (p, xi)
            }
            ValueModel::Quadratic { p } => (p.quad_form(x).max(0.0), 0.0),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let (p, xi) = self.parts(x);
        p + xi
    }

    /// `max(0, net_xi(x))`; zero without a constraint network.
    pub fn constraint_part(&self, x: &[f64]) -> f64 {
        self.parts(x).1
    }

    /// Values of `n` row-major states into `out`.
    pub fn eval_batch(&self, xs: &[f64], n: usize, ws: &mut ValueWorkspace, out: &mut [f64]) {
        let n_x = self.n_x();
        assert_eq!(xs.len(), n * n_x, "eval_batch: state length");
        match self {
            ValueModel::Network { net_p, net_xi } => {
                for (o, &y) in out.iter_mut().zip(net_p.forward_batch(xs, n, &mut ws.net)) {
                    *o = y.max(0.0);
                }
                if let Some(net) = net_xi {
                    for (o, &y) in out.iter_mut().zip(net.forward_batch(xs, n, &mut ws.net)) {
                        *o += y.max(0.0);
                    }
                }
            }
            ValueModel::Quadratic { p } => {
                for (o, x) in out.iter_mut().zip(xs.chunks_exact(n_x)) {
                    *o = p.quad_form(x).max(0.0);
                }
            }
        }
    }

    /// Values and input gradients of `n` row-major states. Where a clamp is active the
    /// corresponding part contributes zero gradient.
    pub fn eval_grad_batch(
        &self,
        xs: &[f64],
        n: usize,
        ws: &mut ValueWorkspace,
        values: &mut [f64],
        grads: &mut [f64],
    ) {
        let n_x = self.n_x();
        assert_eq!(xs.len(), n * n_x, "eval_grad_batch: state length");
        values[..n].iter_mut().for_each(|v| *v = 0.0);
        grads[..n * n_x].iter_mut().for_each(|g| *g = 0.0);
        match self {
            ValueModel::Network { net_p, net_xi } => {
                for net in core::iter::once(net_p).chain(net_xi.iter()) {
                    let out = net.forward_batch(xs, n, &mut ws.net);
                    ws.upstream.clear();
                    for (v, &o) in values.iter_mut().zip(out) {
                        let active = o > 0.0;
                        if active {
                            *v += o;
                        }
                        ws.upstream.push(if active { 1.0 } else { 0.0 });
                    }
                    ws.grad.resize(n * n_x, 0.0);
                    net.backward_batch(&mut ws.net, &ws.upstream, &mut [], Some(&mut ws.grad));
                    for (g, d) in grads.iter_mut().zip(&ws.grad) {
                        *g += d;
                    }
                }
            }
            ValueModel::Quadratic { p } => {
                for k in 0..n {
                    let x = &xs[k * n_x..(k + 1) * n_x];
                    let v = p.quad_form(x);
                    if v > 0.0 {
                        values[k] = v;
                        p.add_quad_grad(x, &mut grads[k * n_x..(k + 1) * n_x]);
                    }
                }
            }
        }
    }

    /// Single-state value and input gradient.
    pub fn eval_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let mut ws = ValueWorkspace::default();
        let mut v = [0.0];
        let mut g = vec![0.0; self.n_x()];
        self.eval_grad_batch(x, 1, &mut ws, &mut v, &mut g);
        (v[0], g)
    }
}

/// Scratch buffers for [`ValueModel::eval_grad_batch`].
#[derive(Debug, Default, Clone)]
pub struct ValueWorkspace {
    net: Workspace,
    upstream: Vec<f64>,
    grad: Vec<f64>,
}

/// Checked evaluation of `V(x)`.
pub fn value_eval(vm: &ValueModel, x: &[f64]) -> Result<f64> {
    check_len("state", vm.n_x(), x.len())?;
    Ok(vm.eval(x))
}

/// Absolute and relative worst-case errors over a sample set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorBounds {
    pub abs: f64,
    /// Largest `|err| / (|reference| + 1)`.
    pub rel: f64,
}

impl ErrorBounds {
    /// Bounds over `(error, reference)` pairs.
    pub fn from_errors(pairs: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut b = ErrorBounds { abs: 0.0, rel: 0.0 };
        for (err, reference) in pairs {
            b.abs = b.abs.max(err.abs());
            b.rel = b.rel.max(err.abs() / (reference.abs() + 1.0));
        }
        b
    }
}

/// `max_j |V(x_j) - V_MPC(x_j)|` and its relative counterpart.
pub fn estimate_eps_v(vm: &ValueModel, states: &[f64], targets: &[f64]) -> Result<ErrorBounds> {
    let n_x = vm.n_x();
    if targets.is_empty() {
        return Err(Error::EmptyInput("value targets"));
    }
    check_len("states", targets.len() * n_x, states.len())?;
    Ok(ErrorBounds::from_errors(
        states
            .chunks_exact(n_x)
            .zip(targets)
            .map(|(x, &t)| (vm.eval(x) - t, t)),
    ))
}

/// Regression targets for [`fit_value`]: `n` states with performance and constraint parts.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTargets {
    pub n_x: usize,
    pub states: Vec<f64>,
    pub v_p: Vec<f64>,
    pub v_xi: Vec<f64>,
}

impl ValueTargets {
    pub fn len(&self) -> usize {
        self.v_p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_p.is_empty()
    }

    pub fn totals(&self) -> Vec<f64> {
        self.v_p
            .iter()
            .zip(&self.v_xi)
            .map(|(a, b)| a + b)
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyInput("value dataset"));
        }
        check_len("states", self.len() * self.n_x, self.states.len())?;
        check_len("constraint targets", self.len(), self.v_xi.len())?;
        for (step, t) in self.v_p.iter().chain(&self.v_xi).enumerate() {
            if !t.is_finite() {
                return Err(Error::NonFiniteInput { step });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFit {
    pub model: ValueModel,
    pub summary_p: TrainSummary,
    /// Absent when every constraint target is zero.
    pub summary_xi: Option<TrainSummary>,
}

struct Mse<'a> {
    targets: &'a [f64],
}

impl Objective for Mse<'_> {
    fn eval(&mut self, idx: &[usize], y: &[f64], dy: &mut [f64]) -> f64 {
        let mut loss = 0.0;
        for (k, &i) in idx.iter().enumerate() {
            let e = y[k] - self.targets[i];
            loss += e * e;
            dy[k] = 2.0 * e;
        }
        loss
    }
}

fn standardizer(t: &[f64]) -> OutputAffine {
    let n = t.len() as f64;
    let mean = t.iter().sum::<f64>() / n;
    let var = t.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = libm::sqrt(var);
    // Constant targets are reproduced exactly by the shift alone.
    OutputAffine {
        shift: vec![mean],
        scale: vec![if sd > 1e-12 { sd } else { 0.0 }],
    }
}

fn fit_one(
    arch: &[usize],
    data: &ValueTargets,
    t: &[f64],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<nn::TrainOutcome> {
    let affine = standardizer(t);
    nn::train(
        arch,
        &data.states,
        data.len(),
        &mut Mse { targets: t },
        cfg,
        Some(&affine),
        seed,
    )
}

/// Trains the performance and constraint networks by minibatch MSE on standardized targets.
/// `arch` must map `n_x` inputs to one output.
pub fn fit_value(
    data: &ValueTargets,
    arch: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ValueFit> {
    data.validate()?;
    if arch.first() != Some(&data.n_x) || arch.last() != Some(&1) {
        return Err(Error::InvalidProblem(
            "value architecture must map the state to a scalar".into(),
        ));
    }
    let p = fit_one(arch, data, &data.v_p, cfg, crate::rng::derive_seed(seed, 0))?;
    let xi = if data.v_xi.iter().any(|&v| v != 0.0) {
        Some(fit_one(
            arch,
            data,
            &data.v_xi,
            cfg,
            crate::rng::derive_seed(seed, 1),
        )?)
    } else {
        None
    };
    Ok(ValueFit {
        summary_p: p.summary(),
        summary_xi: xi.as_ref().map(|o| o.summary()),
        model: ValueModel::Network {
            net_p: p.net,
            net_xi: xi.map(|o| o.net),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    fn bias_only(b: f64) -> Mlp {
        // 1 -> 1 identity layer: y = 0 * x + b
        Mlp::from_params(&[1, 1], vec![0.0, b]).unwrap()
    }

    #[test]
    fn combine_rule() {
        let vm = ValueModel::Network {
            net_p: bias_only(2.0),
            net_xi: Some(bias_only(3.0)),
        };
        assert_eq!(value_eval(&vm, &[0.3]).unwrap(), 5.0);
        let vm = ValueModel::Network {
            net_p: bias_only(-2.0),
            net_xi: Some(bias_only(-3.0)),
        };
        assert_eq!(value_eval(&vm, &[0.3]).unwrap(), 0.0);
        let vm = ValueModel::Network {
            net_p: bias_only(1.5),
            net_xi: None,
        };
        assert_eq!(value_eval(&vm, &[0.3]).unwrap(), 1.5);
        assert_eq!(vm.constraint_part(&[0.3]), 0.0);
    }

    #[test]
    fn eps_v_direct_formula() {
        let vm = ValueModel::Network {
            net_p: bias_only(2.0),
            net_xi: None,
        };
        let b = estimate_eps_v(&vm, &[0.0], &[1.0]).unwrap();
        assert_eq!((b.abs, b.rel), (1.0, 0.5));
        let exact = ValueModel::exact_quad1d();
        let xs = [-0.5, 0.1, 0.9];
        let t: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let b = estimate_eps_v(&exact, &xs, &t).unwrap();
        assert_eq!((b.abs, b.rel), (0.0, 0.0));
    }

    #[test]
    fn random_network_value_is_nonnegative() {
        let vm = ValueModel::Network {
            net_p: Mlp::new(&[2, 16, 16, 1], 3).unwrap(),
            net_xi: Some(Mlp::new(&[2, 16, 16, 1], 4).unwrap()),
        };
        let mut r = rng::rng_from(9);
        for _ in 0..10_000 {
            let x = [r.gen_range(-5.0..5.0), r.gen_range(-5.0..5.0)];
            assert!(vm.eval(&x) >= 0.0);
        }
    }

    #[test]
    fn batch_gradient_matches_finite_differences() {
        let vm = ValueModel::Network {
            net_p: Mlp::new(&[2, 12, 12, 1], 5).unwrap(),
            net_xi: Some(Mlp::new(&[2, 12, 12, 1], 6).unwrap()),
        };
        let mut r = rng::rng_from(10);
        let xs: Vec<f64> = (0..40).map(|_| r.gen_range(-2.0..2.0)).collect();
        let mut v = vec![0.0; 20];
        let mut g = vec![0.0; 40];
        vm.eval_grad_batch(&xs, 20, &mut ValueWorkspace::default(), &mut v, &mut g);
        for k in 0..20 {
            let x = &xs[2 * k..2 * k + 2];
            assert!((v[k] - vm.eval(x)).abs() <= 1e-12);
            let mut single = [0.0];
            vm.eval_batch(x, 1, &mut ValueWorkspace::default(), &mut single);
            assert!((single[0] - v[k]).abs() <= 1e-12);
            for d in 0..2 {
                let h = 1e-6;
                let (mut a, mut b) = ([x[0], x[1]], [x[0], x[1]]);
                a[d] += h;
                b[d] -= h;
                let fd = (vm.eval(&a) - vm.eval(&b)) / (2.0 * h);
                assert!(
                    (fd - g[2 * k + d]).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "fd {fd} g {}",
                    g[2 * k + d]
                );
            }
        }
    }

    #[test]
    fn quadratic_gradient() {
        let (v, g) = ValueModel::exact_quad1d().eval_grad(&[0.7]);
        assert!((v - 0.49).abs() < 1e-15 && (g[0] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn fits_constant_targets() {
        let states: Vec<f64> = (0..64).map(|i| i as f64 / 32.0 - 1.0).collect();
        let data = ValueTargets {
            n_x: 1,
            states,
            v_p: vec![2.5; 64],
            v_xi: vec![0.0; 64],
        };
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let fit = fit_value(&data, &[1, 8, 1], &cfg, 1).unwrap();
        assert!(
            fit.summary_p.final_loss <= 1e-6,
            "{}",
            fit.summary_p.final_loss
        );
        assert!(fit.summary_xi.is_none());
        assert!(matches!(
            fit.model,
            ValueModel::Network { net_xi: None, .. }
        ));
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        let empty = ValueTargets {
            n_x: 1,
            states: vec![],
            v_p: vec![],
            v_xi: vec![],
        };
        assert!(fit_value(&empty, &[1, 4, 1], &TrainConfig::default(), 0).is_err());
        let bad = ValueTargets {
            n_x: 1,
            states: vec![0.0],
            v_p: vec![f64::NAN],
            v_xi: vec![0.0],
        };
        assert!(matches!(
            fit_value(&bad, &[1, 4, 1], &TrainConfig::default(), 0),
            Err(Error::NonFiniteInput { .. })
        ));
    }
}
