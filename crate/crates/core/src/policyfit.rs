//! Explicit policy training: imitation under the one-step look-ahead loss
//! `L(x, u) = l(x, u) + V(f(x, u))`, the behavioral-cloning baseline, and the policy
//! suboptimality estimate.
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::dynamics::SystemModel;
use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;
use crate::nn::{self, project_in_place, Mlp, Objective, TrainConfig, TrainSummary, Workspace};
use crate::scmpc::ScmpcProblem;
use crate::valuefit::{ErrorBounds, ValueModel, ValueWorkspace};

/// Network policy whose raw output is projected onto the input box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub net: Mlp,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl PolicyModel {
    pub fn new(net: Mlp, model: &SystemModel) -> Result<Self> {
        check_len("policy output", model.n_u(), net.n_out())?;
        check_len("policy input", model.n_x(), net.n_in())?;
        Ok(Self {
            net,
            lo: model.input_lo().to_vec(),
            hi: model.input_hi().to_vec(),
        })
    }

    pub fn n_x(&self) -> usize {
        self.net.n_in()
    }

    pub fn n_u(&self) -> usize {
        self.net.n_out()
    }

    /// `project(net(x))`.
    pub fn act(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut u = self.net.forward(x)?;
        let mut mask = vec![0.0; u.len()];
        project_in_place(&mut u, &mut mask, &self.lo, &self.hi);
        Ok(u)
    }

    /// Batched [`PolicyModel::act`] into `out` (`n x n_u`).
    pub fn act_batch(&self, xs: &[f64], n: usize, ws: &mut Workspace, out: &mut [f64]) {
        let n_u = self.n_u();
        out[..n * n_u].copy_from_slice(self.net.forward_batch(xs, n, ws));
        let mut mask = vec![0.0; n_u];
        for u in out[..n * n_u].chunks_exact_mut(n_u) {
            project_in_place(u, &mut mask, &self.lo, &self.hi);
        }
    }
}

/// The look-ahead loss of a problem paired with a value function.
#[derive(Debug, Clone, Copy)]
pub struct LookAhead<'a> {
    pub model: &'a SystemModel,
    pub q: &'a Matrix,
    pub r: &'a Matrix,
    pub value: &'a ValueModel,
}

impl<'a> LookAhead<'a> {
    pub fn new(problem: &'a ScmpcProblem, value: &'a ValueModel) -> Self {
        Self {
            model: &problem.model,
            q: &problem.q,
            r: &problem.r,
            value,
        }
    }

    pub fn stage_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        self.q.quad_form(x) + self.r.quad_form(u)
    }

    /// `l(x, u) + V(f(x, u))`; `x`, `u` must have model dimensions.
    pub fn loss(&self, x: &[f64], u: &[f64]) -> f64 {
        let mut next = vec![0.0; self.model.n_x()];
        self.model.step_into(x, u, &mut next);
        self.stage_cost(x, u) + self.value.eval(&next)
    }

    /// Loss and its gradient w.r.t. `u`.
    pub fn loss_grad_u(&self, x: &[f64], u: &[f64]) -> (f64, Vec<f64>) {
        let mut s = LossScratch::new(self.model);
        let mut g = vec![0.0; self.model.n_u()];
        let mut v = [0.0];
        let l = self.batch_loss_grad(x, u, 1, &mut s, &mut v, &mut g);
        (l, g)
    }

    /// Per-sample losses into `losses` and gradients w.r.t. `u` into `grad_u`; returns the sum.
    fn batch_loss_grad(
        &self,
        xs: &[f64],
        us: &[f64],
        n: usize,
        s: &mut LossScratch,
        losses: &mut [f64],
        grad_u: &mut [f64],
    ) -> f64 {
        let (n_x, n_u) = (self.model.n_x(), self.model.n_u());
        s.next.resize(n * n_x, 0.0);
        s.v.resize(n, 0.0);
        s.gv.resize(n * n_x, 0.0);
        for k in 0..n {
            self.model.step_into(
                &xs[k * n_x..(k + 1) * n_x],
                &us[k * n_u..(k + 1) * n_u],
                &mut s.next[k * n_x..(k + 1) * n_x],
            );
        }
        self.value
            .eval_grad_batch(&s.next, n, &mut s.vws, &mut s.v, &mut s.gv);
        let mut total = 0.0;
        for k in 0..n {
            let x = &xs[k * n_x..(k + 1) * n_x];
            let u = &us[k * n_u..(k + 1) * n_u];
            let g = &mut grad_u[k * n_u..(k + 1) * n_u];
            self.model.jacobians_into(x, u, &mut s.a, &mut s.b);
            g.iter_mut().for_each(|v| *v = 0.0);
            self.r.add_quad_grad(u, g);
            // B is n_x x n_u row-major: g += B^T dV
            for i in 0..n_x {
                for j in 0..n_u {
                    g[j] += s.b[i * n_u + j] * s.gv[k * n_x + i];
                }
            }
            losses[k] = self.stage_cost(x, u) + s.v[k];
            total += losses[k];
        }
        total
    }
}

struct LossScratch {
    next: Vec<f64>,
    v: Vec<f64>,
    gv: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    vws: ValueWorkspace,
}

impl LossScratch {
    fn new(model: &SystemModel) -> Self {
        Self {
            next: Vec::new(),
            v: Vec::new(),
            gv: Vec::new(),
            a: vec![0.0; model.n_x() * model.n_x()],
            b: vec![0.0; model.n_x() * model.n_u()],
            vws: ValueWorkspace::default(),
        }
    }
}

/// Checked `l(x, u) + V(f(x, u))` with `l(x, u) = x^T Q x + u^T R u`.
pub fn loss_mpc(
    x: &[f64],
    u: &[f64],
    value: &ValueModel,
    model: &SystemModel,
    q: &Matrix,
    r: &Matrix,
) -> Result<f64> {
    check_len("state", model.n_x(), x.len())?;
    check_len("input", model.n_u(), u.len())?;
    check_len("value input", model.n_x(), value.n_x())?;
    Ok(LookAhead { model, q, r, value }.loss(x, u))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyFit {
    pub policy: PolicyModel,
    pub summary: TrainSummary,
}

struct ImitationObjective<'a> {
    look: LookAhead<'a>,
    states: &'a [f64],
    scratch: LossScratch,
    xb: Vec<f64>,
    ub: Vec<f64>,
    mask: Vec<f64>,
    losses: Vec<f64>,
}

impl Objective for ImitationObjective<'_> {
    fn eval(&mut self, idx: &[usize], y: &[f64], dy: &mut [f64]) -> f64 {
        let (n_x, n_u) = (self.look.model.n_x(), self.look.model.n_u());
        let n = idx.len();
        self.xb.clear();
        for &i in idx {
            self.xb
                .extend_from_slice(&self.states[i * n_x..(i + 1) * n_x]);
        }
        self.ub.clear();
        self.ub.extend_from_slice(&y[..n * n_u]);
        self.mask.resize(n * n_u, 0.0);
        for (u, m) in self
            .ub
            .chunks_exact_mut(n_u)
            .zip(self.mask.chunks_exact_mut(n_u))
        {
            project_in_place(u, m, self.look.model.input_lo(), self.look.model.input_hi());
        }
        self.losses.resize(n, 0.0);
        let total = self.look.batch_loss_grad(
            &self.xb,
            &self.ub,
            n,
            &mut self.scratch,
            &mut self.losses,
            dy,
        );
        for (d, m) in dy.iter_mut().zip(&self.mask) {
            *d *= m;
        }
        total
    }
}

fn check_states(states: &[f64], n_x: usize) -> Result<usize> {
    if states.is_empty() {
        return Err(Error::EmptyInput("training states"));
    }
    if states.len() % n_x != 0 {
        return Err(Error::DimensionMismatch {
            what: "training states",
            expected: n_x,
            got: states.len() % n_x,
        });
    }
    Ok(states.len() / n_x)
}

fn check_arch(arch: &[usize], model: &SystemModel) -> Result<()> {
    if arch.first() != Some(&model.n_x()) || arch.last() != Some(&model.n_u()) {
        return Err(Error::InvalidProblem(
            "policy architecture must map the state to the input".into(),
        ));
    }
    Ok(())
}

/// Minimizes the empirical mean of the look-ahead loss over `states` (row-major); the
/// value function stays fixed.
pub fn train_policy_il(
    states: &[f64],
    look: LookAhead<'_>,
    arch: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PolicyFit> {
    check_arch(arch, look.model)?;
    check_len("value input", look.model.n_x(), look.value.n_x())?;
    let n = check_states(states, look.model.n_x())?;
    let mut obj = ImitationObjective {
        look,
        states,
        scratch: LossScratch::new(look.model),
        xb: Vec::new(),
        ub: Vec::new(),
        mask: Vec::new(),
        losses: Vec::new(),
    };
    let out = nn::train(arch, states, n, &mut obj, cfg, None, seed)?;
    Ok(PolicyFit {
        summary: out.summary(),
        policy: PolicyModel::new(out.net, look.model)?,
    })
}

struct CloningObjective<'a> {
    targets: &'a [f64],
    n_u: usize,
    lo: &'a [f64],
    hi: &'a [f64],
    u: Vec<f64>,
    mask: Vec<f64>,
}

impl Objective for CloningObjective<'_> {
    fn eval(&mut self, idx: &[usize], y: &[f64], dy: &mut [f64]) -> f64 {
        let n_u = self.n_u;
        self.u.resize(n_u, 0.0);
        self.mask.resize(n_u, 0.0);
        let mut loss = 0.0;
        for (k, &i) in idx.iter().enumerate() {
            self.u.copy_from_slice(&y[k * n_u..(k + 1) * n_u]);
            project_in_place(&mut self.u, &mut self.mask, self.lo, self.hi);
            for j in 0..n_u {
                let e = self.u[j] - self.targets[i * n_u + j];
                loss += e * e;
                dy[k * n_u + j] = 2.0 * e * self.mask[j];
            }
        }
        loss
    }
}

/// Mean-squared regression of the projected policy output onto recorded inputs.
pub fn train_policy_bc(
    states: &[f64],
    inputs: &[f64],
    model: &SystemModel,
    arch: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<PolicyFit> {
    check_arch(arch, model)?;
    let n = check_states(states, model.n_x())?;
    check_len("recorded inputs", n * model.n_u(), inputs.len())?;
    if let Some(step) = inputs.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput { step });
    }
    let mut obj = CloningObjective {
        targets: inputs,
        n_u: model.n_u(),
        lo: model.input_lo(),
        hi: model.input_hi(),
        u: Vec::new(),
        mask: Vec::new(),
    };
    let out = nn::train(arch, states, n, &mut obj, cfg, None, seed)?;
    Ok(PolicyFit {
        summary: out.summary(),
        policy: PolicyModel::new(out.net, model)?,
    })
}

/// Argmin of the look-ahead loss over `n_grid` equispaced inputs of the box, ties toward
/// the smaller input. Scalar inputs only. Returns `(u, loss)`.
pub fn grid_argmin(x: &[f64], look: &LookAhead<'_>, n_grid: usize) -> Result<(f64, f64)> {
    GridScratch::default().argmin(x, look, n_grid)
}

/// Reusable buffers for repeated [`grid_argmin`] calls.
#[derive(Debug, Default, Clone)]
pub struct GridScratch {
    next: Vec<f64>,
    values: Vec<f64>,
    vws: ValueWorkspace,
}

impl GridScratch {
    pub fn argmin(&mut self, x: &[f64], look: &LookAhead<'_>, n_grid: usize) -> Result<(f64, f64)> {
        if look.model.n_u() != 1 {
            return Err(Error::Unsupported("input gridding needs a scalar input"));
        }
        if n_grid < 2 {
            return Err(Error::InvalidProblem(
                "input grid needs at least two points".into(),
            ));
        }
        let n_x = look.model.n_x();
        check_len("state", n_x, x.len())?;
        let (lo, hi) = (look.model.input_lo()[0], look.model.input_hi()[0]);
        let grid = |k: usize| lo + (hi - lo) * k as f64 / (n_grid - 1) as f64;
        self.next.resize(n_grid * n_x, 0.0);
        self.values.resize(n_grid, 0.0);
        for k in 0..n_grid {
            look.model
                .step_into(x, &[grid(k)], &mut self.next[k * n_x..(k + 1) * n_x]);
        }
        look.value
            .eval_batch(&self.next, n_grid, &mut self.vws, &mut self.values);
        let stage_x = look.q.quad_form(x);
        let mut best = (lo, f64::INFINITY);
        for k in 0..n_grid {
            let u = grid(k);
            let l = stage_x + look.r.quad_form(&[u]) + self.values[k];
            if l < best.1 {
                best = (u, l);
            }
        }
        Ok(best)
    }
}

/// Largest loss gap `L(x, pi(x)) - L(x, pi*(x))` over `states`, with `pi*` from input
/// gridding. Gaps below zero (the policy beating the grid) count as zero.
pub fn estimate_eps_pi(
    policy: &PolicyModel,
    states: &[f64],
    look: &LookAhead<'_>,
    grid_n: usize,
) -> Result<ErrorBounds> {
    let n_x = look.model.n_x();
    check_states(states, n_x)?;
    let mut pairs = Vec::with_capacity(states.len() / n_x);
    let mut scratch = GridScratch::default();
    for x in states.chunks_exact(n_x) {
        let (_, best) = scratch.argmin(x, look, grid_n)?;
        let u = policy.act(x)?;
        pairs.push(((look.loss(x, &u) - best).max(0.0), best));
    }
    Ok(ErrorBounds::from_errors(pairs))
}

/// Distance of `u` to the scalar benchmark's optimal set `{x, -x}`.
pub fn distance_to_signed_pair(x: f64, u: f64) -> f64 {
    (u - x).abs().min((u + x).abs())
}
