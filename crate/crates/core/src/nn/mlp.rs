use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{gemm, View};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Fully connected network with ReLU hidden layers and an affine output layer.
///
/// Parameters are stored flat, layer by layer: the `n_out x n_in` weight matrix in
/// row-major order followed by the `n_out` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layer_sizes: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
    pub params: Vec<f64>,
    pub init_seed: u64,
}

/// Number of parameters for the given widths.
pub fn param_count(layer_sizes: &[usize]) -> usize {
    layer_sizes.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

impl Mlp {
    /// Uniform `+-sqrt(6 / (n_in + n_out))` weights, zero biases.
    pub fn new(layer_sizes: &[usize], init_seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidProblem(
                "an MLP needs at least two non-zero layer widths".into(),
            ));
        }
        let mut rng = rng::rng_from(init_seed);
        let mut params = Vec::with_capacity(param_count(layer_sizes));
        for w in layer_sizes.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            let lim = libm::sqrt(6.0 / (n_in + n_out) as f64);
            params.extend((0..n_in * n_out).map(|_| rng.gen_range(-lim..lim)));
            params.extend(core::iter::repeat(0.0).take(n_out));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            hidden_activation: Activation::Relu,
            output_activation: Activation::Identity,
            params,
            init_seed,
        })
    }

    pub fn from_params(layer_sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        check_len("mlp params", param_count(layer_sizes), params.len())?;
        let mut net = Self::new(layer_sizes, 0)?;
        net.params = params;
        Ok(net)
    }

    pub fn n_in(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn n_out(&self) -> usize {
        *self.layer_sizes.last().expect("validated on construction")
    }

    pub fn n_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// Offsets of `(weights, biases)` for layer `l`.
    pub fn layer_offsets(&self, l: usize) -> (usize, usize) {
        let w = param_count(&self.layer_sizes[..=l]);
        (w, w + self.layer_sizes[l] * self.layer_sizes[l + 1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::InvalidProblem(
                "an MLP needs at least two non-zero layer widths".into(),
            ));
        }
        check_len(
            "mlp params",
            param_count(&self.layer_sizes),
            self.params.len(),
        )
    }

    fn activation(&self, l: usize) -> Activation {
        if l + 1 == self.n_layers() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("network input", self.n_in(), x.len())?;
        let mut ws = Workspace::default();
        Ok(self.forward_batch(x, 1, &mut ws).to_vec())
    }

    /// Forward pass over `batch` row-major inputs; returns the `batch x n_out` outputs.
    pub fn forward_batch<'w>(&self, x: &[f64], batch: usize, ws: &'w mut Workspace) -> &'w [f64] {
        assert_eq!(x.len(), batch * self.n_in(), "forward_batch: input length");
        ws.prepare(&self.layer_sizes, batch);
        ws.input.clear();
        ws.input.extend_from_slice(x);
        for l in 0..self.n_layers() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let w = &self.params[w_off..b_off];
            let b = &self.params[b_off..b_off + n_out];
            let z = &mut ws.pre[l][..batch * n_out];
            for row in z.chunks_exact_mut(n_out) {
                row.copy_from_slice(b);
            }
            let a_prev: &[f64] = if l == 0 { &ws.input } else { &ws.post[l - 1] };
            // Packing overhead dominates the GEMM kernel for a single row.
            if batch == 1 {
                for (zj, wj) in z.iter_mut().zip(w.chunks_exact(n_in)) {
                    *zj += dot(wj, a_prev);
                }
            } else {
                gemm(
                    batch,
                    n_in,
                    n_out,
                    1.0,
                    View {
                        data: a_prev,
                        rs: n_in,
                        cs: 1,
                    },
                    View {
                        data: w,
                        rs: 1,
                        cs: n_in,
                    },
                    1.0,
                    z,
                );
            }
            let post = &mut ws.post[l][..batch * n_out];
            match self.activation(l) {
                Activation::Relu => {
                    for (p, v) in post.iter_mut().zip(z.iter()) {
                        *p = v.max(0.0);
                    }
                }
                Activation::Identity => post.copy_from_slice(z),
            }
        }
        &ws.post[self.n_layers() - 1][..batch * self.n_out()]
    }

    /// Reverse pass after [`Mlp::forward_batch`] on the same workspace.
    ///
    /// Accumulates `sum_b upstream_b^T d y_b / d theta` into `grad_params` and, when given,
    /// writes `upstream_b^T d y_b / d x_b` into `grad_input` (`batch x n_in`). An empty
    /// `grad_params` skips the parameter gradient.
    pub fn backward_batch(
        &self,
        ws: &mut Workspace,
        upstream: &[f64],
        grad_params: &mut [f64],
        grad_input: Option<&mut [f64]>,
    ) {
        let batch = ws.batch;
        assert_eq!(
            upstream.len(),
            batch * self.n_out(),
            "backward_batch: upstream length"
        );
        let with_params = !grad_params.is_empty();
        assert!(
            !with_params || grad_params.len() == self.params.len(),
            "backward_batch: gradient length"
        );
        let last = self.n_layers() - 1;
        ws.delta.clear();
        ws.delta.extend_from_slice(upstream);
        if self.activation(last) == Activation::Relu {
            mask_relu(&mut ws.delta, &ws.pre[last][..batch * self.n_out()]);
        }
        let mut grad_input = grad_input;
        for l in (0..self.n_layers()).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let a_prev: &[f64] = if l == 0 {
                &ws.input
            } else {
                &ws.post[l - 1][..batch * n_in]
            };
            if with_params {
                // dW += delta^T a_prev
                gemm(
                    n_out,
                    batch,
                    n_in,
                    1.0,
                    View {
                        data: &ws.delta,
                        rs: 1,
                        cs: n_out,
                    },
                    View {
                        data: a_prev,
                        rs: n_in,
                        cs: 1,
                    },
                    1.0,
                    &mut grad_params[w_off..b_off],
                );
                let gb = &mut grad_params[b_off..b_off + n_out];
                for row in ws.delta.chunks_exact(n_out) {
                    for (g, d) in gb.iter_mut().zip(row) {
                        *g += d;
                    }
                }
            }
            if l == 0 && grad_input.is_none() {
                break;
            }
            // delta_prev = delta W
            ws.delta_prev.clear();
            ws.delta_prev.resize(batch * n_in, 0.0);
            gemm(
                batch,
                n_out,
                n_in,
                1.0,
                View {
                    data: &ws.delta,
                    rs: n_out,
                    cs: 1,
                },
                View {
                    data: &self.params[w_off..b_off],
                    rs: n_in,
                    cs: 1,
                },
                0.0,
                &mut ws.delta_prev,
            );
            if l == 0 {
                if let Some(gi) = grad_input.take() {
                    gi[..batch * n_in].copy_from_slice(&ws.delta_prev);
                }
                break;
            }
            if self.activation(l - 1) == Activation::Relu {
                mask_relu(&mut ws.delta_prev, &ws.pre[l - 1][..batch * n_in]);
            }
            core::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
    }

    /// Single-sample gradients of `upstream^T net(x)` w.r.t. parameters and input.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_len("network input", self.n_in(), x.len())?;
        check_len("upstream gradient", self.n_out(), upstream.len())?;
        let mut ws = Workspace::default();
        self.forward_batch(x, 1, &mut ws);
        let mut gp = vec![0.0; self.params.len()];
        let mut gi = vec![0.0; self.n_in()];
        self.backward_batch(&mut ws, upstream, &mut gp, Some(&mut gi));
        Ok((gp, gi))
    }

    /// Rewrites the first layer so that `net'(x) = net((x - shift) / scale)`.
    pub fn fold_input_affine(&mut self, shift: &[f64], scale: &[f64]) {
        let (n_in, n_out) = (self.layer_sizes[0], self.layer_sizes[1]);
        let (w_off, b_off) = self.layer_offsets(0);
        for o in 0..n_out {
            let mut b_adj = 0.0;
            for i in 0..n_in {
                let w = &mut self.params[w_off + o * n_in + i];
                *w /= scale[i];
                b_adj += *w * shift[i];
            }
            self.params[b_off + o] -= b_adj;
        }
    }

    /// Rewrites the last layer so that `net'(x) = shift + scale * net(x)`; identity output only.
    pub fn fold_output_affine(&mut self, shift: &[f64], scale: &[f64]) {
        let l = self.n_layers() - 1;
        let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let (w_off, b_off) = self.layer_offsets(l);
        for o in 0..n_out {
            for i in 0..n_in {
                self.params[w_off + o * n_in + i] *= scale[o];
            }
            let b = &mut self.params[b_off + o];
            *b = *b * scale[o] + shift[o];
        }
    }
}

fn mask_relu(delta: &mut [f64], pre: &[f64]) {
    for (d, z) in delta.iter_mut().zip(pre) {
        if *z <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Reusable activations and deltas for batched passes.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    batch: usize,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    fn prepare(&mut self, sizes: &[usize], batch: usize) {
        self.batch = batch;
        let layers = sizes.len() - 1;
        self.pre.resize_with(layers, Vec::new);
        self.post.resize_with(layers, Vec::new);
        for l in 0..layers {
            let n = batch * sizes[l + 1];
            self.pre[l].resize(n, 0.0);
            self.post[l].resize(n, 0.0);
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (a4, b4) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = a4
        .remainder()
        .iter()
        .zip(b4.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in a4.zip(b4) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fd_check(net: &Mlp, x: &[f64], up: &[f64]) -> (f64, f64) {
        let (gp, gi) = net.backward(x, up).unwrap();
        let f = |n: &Mlp, x: &[f64]| -> f64 {
            n.forward(x)
                .unwrap()
                .iter()
                .zip(up)
                .map(|(a, b)| a * b)
                .sum()
        };
        let h = 1e-5;
        let mut worst_p: f64 = 0.0;
        for k in 0..net.params.len() {
            let (mut p, mut m) = (net.clone(), net.clone());
            p.params[k] += h;
            m.params[k] -= h;
            let fd = (f(&p, x) - f(&m, x)) / (2.0 * h);
            worst_p = worst_p.max((fd - gp[k]).abs() / (1.0 + fd.abs()));
        }
        let mut worst_i: f64 = 0.0;
        for k in 0..x.len() {
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[k] += h;
            xm[k] -= h;
            let fd = (f(net, &xp) - f(net, &xm)) / (2.0 * h);
            worst_i = worst_i.max((fd - gi[k]).abs() / (1.0 + fd.abs()));
        }
        (worst_p, worst_i)
    }

    #[test]
    fn identity_and_constant_networks() {
        let id = Mlp::from_params(&[2, 2], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(id.forward(&[0.3, -0.7]).unwrap(), vec![0.3, -0.7]);
        let c = Mlp::from_params(&[3, 1], vec![0.0, 0.0, 0.0, 2.5]).unwrap();
        assert_eq!(c.forward(&[9.0, -1.0, 4.0]).unwrap(), vec![2.5]);
    }

    #[test]
    fn hand_built_relu() {
        // hidden = relu(x), out = hidden
        let net = Mlp::from_params(&[1, 1, 1], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(net.forward(&[-1.0]).unwrap(), vec![0.0]);
        assert_eq!(net.forward(&[2.0]).unwrap(), vec![2.0]);
    }

    #[test]
    fn dead_unit_gets_no_gradient() {
        // unit 0 has negative pre-activation at x = 1, unit 1 is active.
        let net = Mlp::from_params(&[1, 2, 1], vec![-1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0]).unwrap();
        let (gp, _) = net.backward(&[1.0], &[1.0]).unwrap();
        assert_eq!(gp[0], 0.0); // incoming weight of the dead unit
        assert_eq!(gp[2], 0.0); // its bias
        assert!(gp[1] != 0.0);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let net = Mlp::new(&[3, 8, 8, 2], 5).unwrap();
        let (gp, gi) = net.backward(&[0.1, 0.2, -0.3], &[0.0, 0.0]).unwrap();
        assert!(gp.iter().all(|g| *g == 0.0) && gi.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn gradients_match_fd_on_random_nets() {
        let mut rng = rng::rng_from(42);
        for case in 0..20u64 {
            let depth = rng.gen_range(1..4);
            let mut sizes = vec![rng.gen_range(1..4)];
            for _ in 0..depth {
                sizes.push(rng.gen_range(2..7));
            }
            sizes.push(rng.gen_range(1..3));
            let mut net = Mlp::new(&sizes, case).unwrap();
            net.params
                .iter_mut()
                .for_each(|p| *p += rng.gen_range(-0.1..0.1));
            let x: Vec<f64> = (0..sizes[0]).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let up: Vec<f64> = (0..*sizes.last().unwrap())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let (ep, ei) = fd_check(&net, &x, &up);
            assert!(ep <= 1e-5 && ei <= 1e-5, "case {case}: {ep} {ei}");
        }
    }

    #[test]
    fn batched_matches_single() {
        let net = Mlp::new(&[2, 16, 16, 3], 9).unwrap();
        let xs = [0.1, -0.4, 0.8, 0.3, -1.0, 0.0];
        let mut ws = Workspace::default();
        let out = net.forward_batch(&xs, 3, &mut ws).to_vec();
        for b in 0..3 {
            let single = net.forward(&xs[b * 2..b * 2 + 2]).unwrap();
            for k in 0..3 {
                assert!((single[k] - out[b * 3 + k]).abs() < 1e-12);
            }
        }
        let up = [1.0, 0.0, -1.0, 0.5, 0.5, 0.5, 0.0, 2.0, 0.0];
        let mut gp = vec![0.0; net.params.len()];
        let mut gi = vec![0.0; 6];
        net.backward_batch(&mut ws, &up, &mut gp, Some(&mut gi));
        let mut acc = vec![0.0; net.params.len()];
        for b in 0..3 {
            let (p, i) = net
                .backward(&xs[b * 2..b * 2 + 2], &up[b * 3..b * 3 + 3])
                .unwrap();
            acc.iter_mut().zip(&p).for_each(|(a, v)| *a += v);
            for k in 0..2 {
                assert!((i[k] - gi[b * 2 + k]).abs() < 1e-12);
            }
        }
        for (a, b) in acc.iter().zip(&gp) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn param_count_formula() {
        assert_eq!(param_count(&[1, 2, 1]), 7);
        assert_eq!(
            param_count(&[2, 128, 128, 128, 1]),
            3 * 128 + 129 * 128 * 2 + 129
        );
        assert!(Mlp::from_params(&[1, 2, 1], vec![0.0; 6]).is_err());
    }

    #[test]
    fn same_seed_same_init() {
        assert_eq!(
            Mlp::new(&[2, 5, 1], 3).unwrap(),
            Mlp::new(&[2, 5, 1], 3).unwrap()
        );
        assert_ne!(
            Mlp::new(&[2, 5, 1], 3).unwrap().params,
            Mlp::new(&[2, 5, 1], 4).unwrap().params
        );
    }

    proptest! {
        #[test]
        fn folding_affines_is_exact(x0 in -3.0f64..3.0, x1 in -3.0f64..3.0, seed in 0u64..50) {
            let net = Mlp::new(&[2, 6, 1], seed).unwrap();
            let (shift, scale) = ([0.5, -1.0], [2.0, 0.25]);
            let mut folded = net.clone();
            folded.fold_input_affine(&shift, &scale);
            folded.fold_output_affine(&[3.0], &[-1.5]);
            let xn = [(x0 - shift[0]) / scale[0], (x1 - shift[1]) / scale[1]];
            let want = 3.0 - 1.5 * net.forward(&xn).unwrap()[0];
            let got = folded.forward(&[x0, x1]).unwrap()[0];
            prop_assert!((want - got).abs() <= 1e-10 * (1.0 + want.abs()));
        }
    }
}
