//! Soft-constrained MPC.
//!
//! The problem is transcribed by single shooting over the input sequence. State-constraint
//! slacks and the terminal scaling are eliminated in closed form for a given trajectory,
//! leaving only the input box, which a projected Adam iteration handles exactly. Several
//! randomly initialized restarts are run; among restarts whose value lies within a
//! relative tie tolerance of the best one, the returned solution is drawn uniformly. That
//! draw is the sampled solver selection used as the behavioral-cloning label.
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dynamics::SystemModel;
use crate::error::{check_len, Error, Result};
use crate::linalg::{dot, Cholesky, Matrix};
use crate::nn::AdamState;
use crate::rng;

/// Soft state constraints, tightened by `eta` and relaxed by slacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateConstraints {
    None,
    /// `H_x x <= 1 (1 - eta) + xi`.
    Polytope {
        h_x: Matrix,
    },
    /// Keep out of a disc at the origin: `x^T x >= r^2 + eta - xi`.
    ObstacleCircle {
        radius: f64,
    },
}

/// Ellipsoidal terminal set `{x : x^T P x <= h_f}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalSet {
    pub p: Matrix,
    pub h_f: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScmpcProblem {
    pub model: SystemModel,
    pub horizon: usize,
    pub q: Matrix,
    pub r: Matrix,
    pub q_n: Matrix,
    pub rho: f64,
    pub eta: f64,
    pub constraints: StateConstraints,
    pub terminal: Option<TerminalSet>,
}

/// Serializable description of an [`ScmpcProblem`]; the model is referenced by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub model: String,
    pub horizon: usize,
    pub q: Matrix,
    pub r: Matrix,
    pub q_n: Matrix,
    pub rho: f64,
    pub eta: f64,
    pub constraints: StateConstraints,
    pub terminal: Option<TerminalSet>,
}

impl ProblemSpec {
    pub fn from_problem(p: &ScmpcProblem) -> Self {
        Self {
            model: p.model.name().into(),
            horizon: p.horizon,
            q: p.q.clone(),
            r: p.r.clone(),
            q_n: p.q_n.clone(),
            rho: p.rho,
            eta: p.eta,
            constraints: p.constraints.clone(),
            terminal: p.terminal.clone(),
        }
    }

    pub fn to_problem(&self) -> Result<ScmpcProblem> {
        let model = SystemModel::by_name(&self.model)
            .ok_or_else(|| Error::InvalidProblem(format!("unknown model {}", self.model)))?;
        let p = ScmpcProblem {
            model,
            horizon: self.horizon,
            q: self.q.clone(),
            r: self.r.clone(),
            q_n: self.q_n.clone(),
            rho: self.rho,
            eta: self.eta,
            constraints: self.constraints.clone(),
            terminal: self.terminal.clone(),
        };
        p.validate()?;
        Ok(p)
    }
}

impl ScmpcProblem {
    pub fn validate(&self) -> Result<()> {
        let (nx, nu) = (self.model.n_x(), self.model.n_u());
        let bad = |msg: &str| Err(Error::InvalidProblem(msg.into()));
        if self.horizon < 1 {
            return bad("horizon must be at least 1");
        }
        if !(self.rho > 0.0) {
            return bad("rho must be positive");
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return bad("eta must lie in (0, 1]");
        }
        for (name, m, n) in [
            ("Q", &self.q, nx),
            ("R", &self.r, nu),
            ("Q_N", &self.q_n, nx),
        ] {
            if m.rows != n || m.cols != n {
                return Err(Error::InvalidProblem(format!("{name} must be {n}x{n}")));
            }
            if !m.is_psd() {
                return Err(Error::InvalidProblem(format!(
                    "{name} must be positive semidefinite"
                )));
            }
        }
        match &self.constraints {
            StateConstraints::None => {}
            StateConstraints::Polytope { h_x } => {
                if h_x.cols != nx {
                    return bad("H_x must have n_x columns");
                }
            }
            StateConstraints::ObstacleCircle { radius } => {
                if !(*radius > 0.0) || nx == 0 {
                    return bad("obstacle radius must be positive");
                }
            }
        }
        if let Some(ts) = &self.terminal {
            if !matches!(self.constraints, StateConstraints::Polytope { .. }) {
                return bad("terminal set requires polytopic state constraints");
            }
            if ts.p.rows != nx || ts.p.cols != nx || !(ts.h_f > 0.0) {
                return bad("terminal set needs an n_x x n_x matrix P and h_f > 0");
            }
            Cholesky::new(&ts.p)?;
        }
        Ok(())
    }

    /// Number of constraint rows `m_x` (slack components per step).
    pub fn n_rows(&self) -> usize {
        match &self.constraints {
            StateConstraints::None => 0,
            StateConstraints::Polytope { h_x } => h_x.rows,
            StateConstraints::ObstacleCircle { .. } => 1,
        }
    }

    /// `l(x, u) = x^T Q x + u^T R u`.
    #[inline]
    pub fn stage_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        self.q.quad_form(x) + self.r.quad_form(u)
    }

    /// Tightened residuals; positive entries are the slack each row needs.
    pub fn residuals(&self, x: &[f64], out: &mut [f64]) {
        match &self.constraints {
            StateConstraints::None => {}
            StateConstraints::Polytope { h_x } => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = dot(h_x.row(j), x) - (1.0 - self.eta);
                }
            }
            StateConstraints::ObstacleCircle { radius } => {
                out[0] = radius * radius + self.eta - dot(x, x);
            }
        }
    }

    /// Adds `scale * d residual_j / dx` into `out`.
    fn add_residual_grad(&self, j: usize, x: &[f64], scale: f64, out: &mut [f64]) {
        match &self.constraints {
            StateConstraints::None => {}
            StateConstraints::Polytope { h_x } => {
                for (o, h) in out.iter_mut().zip(h_x.row(j)) {
                    *o += scale * h;
                }
            }
            StateConstraints::ObstacleCircle { .. } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o -= 2.0 * scale * xi;
                }
            }
        }
    }

    /// Whether `x` violates the untightened hard constraint (strict interior of the
    /// obstacle, or any `H_x x > 1`).
    pub fn violates(&self, x: &[f64]) -> bool {
        match &self.constraints {
            StateConstraints::None => false,
            StateConstraints::Polytope { h_x } => (0..h_x.rows).any(|j| dot(h_x.row(j), x) > 1.0),
            StateConstraints::ObstacleCircle { radius } => dot(x, x) < radius * radius,
        }
    }

    /// Support values of the terminal ellipsoid along each constraint row.
    fn terminal_supports(&self) -> Result<Vec<f64>> {
        match (&self.terminal, &self.constraints) {
            (Some(ts), StateConstraints::Polytope { h_x }) => (0..h_x.rows)
                .map(|j| ellipsoid_support(&ts.p, ts.h_f, h_x.row(j)))
                .collect(),
            _ => Ok(Vec::new()),
        }
    }
}

/// Predicted states `x_0 .. x_len` for a flat input sequence (`len * n_u` entries).
pub fn rollout(model: &SystemModel, x0: &[f64], u_seq: &[f64]) -> Result<Vec<f64>> {
    let (nx, nu) = (model.n_x(), model.n_u());
    check_len("initial state", nx, x0.len())?;
    if nu == 0 || u_seq.len() % nu != 0 {
        return Err(Error::DimensionMismatch {
            what: "input sequence",
            expected: nu,
            got: u_seq.len(),
        });
    }
    let steps = u_seq.len() / nu;
    let mut traj = vec![0.0; (steps + 1) * nx];
    traj[..nx].copy_from_slice(x0);
    for i in 0..steps {
        let (head, tail) = traj.split_at_mut((i + 1) * nx);
        model.step_into(
            &head[i * nx..],
            &u_seq[i * nu..(i + 1) * nu],
            &mut tail[..nx],
        );
    }
    Ok(traj)
}

/// `sup { a^T x : x^T P x <= h_f } = sqrt(h_f a^T P^-1 a)`.
pub fn ellipsoid_support(p: &Matrix, h_f: f64, a: &[f64]) -> Result<f64> {
    check_len("support direction", p.rows, a.len())?;
    if !(h_f > 0.0) {
        return Err(Error::InvalidProblem("h_f must be positive".into()));
    }
    let y = Cholesky::new(p)?.solve(a);
    Ok(libm::sqrt(h_f * dot(a, &y)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Containment {
    pub satisfied: bool,
    /// `1 - eta + xi_N[j] - alpha * support_j`; non-negative rows are satisfied.
    pub margins: Vec<f64>,
}

/// Checks that the scaled terminal set lies inside the softened, tightened constraint set.
pub fn terminal_containment(
    alpha: f64,
    p: &Matrix,
    h_f: f64,
    h_x: &Matrix,
    eta: f64,
    xi_n: &[f64],
) -> Result<Containment> {
    check_len("terminal slack", h_x.rows, xi_n.len())?;
    let mut margins = Vec::with_capacity(h_x.rows);
    for j in 0..h_x.rows {
        let s = ellipsoid_support(p, h_f, h_x.row(j))?;
        margins.push(1.0 - eta + xi_n[j] - alpha * s);
    }
    // Rounding slack so that exact boundary cases count as contained.
    let satisfied = margins.iter().all(|m| *m >= -1e-12);
    Ok(Containment { satisfied, margins })
}

/// Slack values for a fixed trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slacks {
    /// Rows per step (`m_x`).
    pub rows: usize,
    /// Stage slacks `xi_0 .. xi_{N-1}`, flattened.
    pub stages: Vec<f64>,
    /// Terminal slack `xi_N`.
    pub terminal: Vec<f64>,
    /// Softening of the terminal-set membership when even `alpha = 1` is too small.
    pub terminal_set: f64,
    /// Terminal scaling factor (1 when no terminal set is used).
    pub alpha: f64,
}

/// Penalty cost and optional gradient w.r.t. every predicted state, for fixed states.
///
/// Closed form of the inner slack minimization with the 1-norm penalty: the terminal
/// scaling is the smallest value that keeps `x_N` in the scaled ellipsoid, `xi_N` covers
/// exactly the containment margins it induces, and each stage slack covers whatever
/// residual `xi_N` leaves. Raising `xi_N` beyond that never pays off because it is charged
/// `N + 1` times while relieving at most `N` stage terms.
fn penalty(
    problem: &ScmpcProblem,
    supports: &[f64],
    traj: &[f64],
    mut grad_x: Option<&mut [f64]>,
    slacks: Option<&mut Slacks>,
    scratch: &mut [f64],
) -> f64 {
    let m = problem.n_rows();
    if m == 0 {
        if let Some(s) = slacks {
            *s = Slacks {
                rows: 0,
                stages: Vec::new(),
                terminal: Vec::new(),
                terminal_set: 0.0,
                alpha: 1.0,
            };
        }
        return 0.0;
    }
    let nx = problem.model.n_x();
    let n = problem.horizon;
    let rho = problem.rho;
    let x_n = &traj[n * nx..(n + 1) * nx];

    let (xi_n, counts) = scratch.split_at_mut(m);
    let counts = &mut counts[..m];
    let (mut alpha, mut xi_f, mut ratio) = (1.0, 0.0, 0.0);
    let mut q_grad_scale = 0.0;
    match &problem.terminal {
        Some(ts) => {
            let q = ts.p.quad_form(x_n);
            ratio = libm::sqrt(q.max(0.0) / ts.h_f);
            alpha = ratio.min(1.0);
            xi_f = (ratio - 1.0).max(0.0);
            for j in 0..m {
                xi_n[j] = (alpha * supports[j] - (1.0 - problem.eta)).max(0.0);
            }
            q_grad_scale = ts.h_f;
        }
        None => xi_n.iter_mut().for_each(|v| *v = 0.0),
    }
    counts.iter_mut().for_each(|c| *c = 0.0);

    let mut stage_sum = 0.0;
    let mut res = [0.0f64; 16];
    let mut res_vec;
    let res: &mut [f64] = if m <= res.len() {
        &mut res[..m]
    } else {
        res_vec = vec![0.0; m];
        &mut res_vec
    };
    let mut stages_out = slacks.as_ref().map(|_| vec![0.0; n * m]);
    for i in 0..n {
        let x = &traj[i * nx..(i + 1) * nx];
        problem.residuals(x, res);
        for j in 0..m {
            let xi = (res[j] - xi_n[j]).max(0.0);
            if xi > 0.0 {
                stage_sum += xi;
                counts[j] += 1.0;
                if let Some(g) = grad_x.as_deref_mut() {
                    problem.add_residual_grad(j, x, rho, &mut g[i * nx..(i + 1) * nx]);
                }
            }
            if let Some(st) = stages_out.as_mut() {
                st[i * m + j] = xi;
            }
        }
    }
    let xi_n_sum: f64 = xi_n.iter().sum();
    let total = rho * ((n as f64 + 1.0) * xi_n_sum + xi_f + stage_sum);

    if let (Some(g), Some(ts)) = (grad_x, &problem.terminal) {
        if ratio > 0.0 {
            let mut d_alpha = 0.0;
            for j in 0..m {
                if xi_n[j] > 0.0 {
                    d_alpha += rho * ((n as f64 + 1.0) - counts[j]) * supports[j];
                }
            }
            let mut coef = 0.0;
            if ratio < 1.0 {
                coef += d_alpha;
            }
            if ratio > 1.0 {
                coef += rho;
            }
            if coef != 0.0 {
                // d ratio / d x_N = (P + P^T) x_N / (2 h_f ratio)
                let mut dq = [0.0f64; 16];
                let mut dq_vec;
                let dq: &mut [f64] = if nx <= 16 {
                    &mut dq[..nx]
                } else {
                    dq_vec = vec![0.0; nx];
                    &mut dq_vec
                };
                ts.p.add_quad_grad(x_n, dq);
                let s = coef / (2.0 * q_grad_scale * ratio);
                for (o, d) in g[n * nx..(n + 1) * nx].iter_mut().zip(dq.iter()) {
                    *o += s * d;
                }
            }
        }
    }

    if let Some(s) = slacks {
        *s = Slacks {
            rows: m,
            stages: stages_out.unwrap_or_default(),
            terminal: xi_n.to_vec(),
            terminal_set: xi_f,
            alpha,
        };
    }
    total
}

/// Minimizing slacks (and terminal scaling) for a fixed predicted trajectory.
pub fn optimal_slacks(problem: &ScmpcProblem, x_traj: &[f64]) -> Result<Slacks> {
    check_len(
        "trajectory",
        (problem.horizon + 1) * problem.model.n_x(),
        x_traj.len(),
    )?;
    let supports = problem.terminal_supports()?;
    let mut scratch = vec![0.0; 2 * problem.n_rows()];
    let mut s = Slacks {
        rows: 0,
        stages: Vec::new(),
        terminal: Vec::new(),
        terminal_set: 0.0,
        alpha: 1.0,
    };
    penalty(problem, &supports, x_traj, None, Some(&mut s), &mut scratch);
    Ok(s)
}

/// Penalty cost of explicit slack values (no optimization).
pub fn slack_cost(problem: &ScmpcProblem, slacks: &Slacks) -> f64 {
    let m = slacks.rows;
    let xi_n_sum: f64 = slacks.terminal.iter().sum();
    let mut total = xi_n_sum + slacks.terminal_set;
    for i in 0..problem.horizon {
        for j in 0..m {
            total += slacks.terminal[j] + slacks.stages[i * m + j];
        }
    }
    problem.rho * total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub j_p: f64,
    pub j_xi: f64,
    pub total: f64,
}

/// Performance cost plus optimal penalty cost for an input sequence of length `N`.
pub fn scmpc_cost(problem: &ScmpcProblem, x0: &[f64], u_seq: &[f64]) -> Result<CostBreakdown> {
    check_len(
        "input sequence",
        problem.horizon * problem.model.n_u(),
        u_seq.len(),
    )?;
    let traj = rollout(&problem.model, x0, u_seq)?;
    let j_p = performance_cost(problem, &traj, u_seq);
    let supports = problem.terminal_supports()?;
    let mut scratch = vec![0.0; 2 * problem.n_rows()];
    let j_xi = penalty(problem, &supports, &traj, None, None, &mut scratch);
    Ok(CostBreakdown {
        j_p,
        j_xi,
        total: j_p + j_xi,
    })
}

fn performance_cost(problem: &ScmpcProblem, traj: &[f64], u_seq: &[f64]) -> f64 {
    let (nx, nu, n) = (problem.model.n_x(), problem.model.n_u(), problem.horizon);
    let mut j = 0.0;
    for i in 0..n {
        j += problem.stage_cost(&traj[i * nx..(i + 1) * nx], &u_seq[i * nu..(i + 1) * nu]);
    }
    j + problem.q_n.quad_form(&traj[n * nx..])
}

/// Buffers for repeated cost/gradient evaluations on one problem.
struct Workspace {
    supports: Vec<f64>,
    traj: Vec<f64>,
    a: Vec<f64>,
    b: Vec<f64>,
    gx: Vec<f64>,
    lam: Vec<f64>,
    tmp: Vec<f64>,
    scratch: Vec<f64>,
}

impl Workspace {
    fn new(problem: &ScmpcProblem) -> Result<Self> {
        let (nx, nu, n) = (problem.model.n_x(), problem.model.n_u(), problem.horizon);
        Ok(Self {
            supports: problem.terminal_supports()?,
            traj: vec![0.0; (n + 1) * nx],
            a: vec![0.0; n * nx * nx],
            b: vec![0.0; n * nx * nu],
            gx: vec![0.0; (n + 1) * nx],
            lam: vec![0.0; nx],
            tmp: vec![0.0; nx],
            scratch: vec![0.0; 2 * problem.n_rows()],
        })
    }

    /// Cost split `(J_p, J_xi)`; writes `dJ/du` into `grad_u` via the adjoint recursion.
    fn cost_grad(
        &mut self,
        problem: &ScmpcProblem,
        x0: &[f64],
        u: &[f64],
        grad_u: &mut [f64],
    ) -> (f64, f64) {
        let model = &problem.model;
        let (nx, nu, n) = (model.n_x(), model.n_u(), problem.horizon);
        self.traj[..nx].copy_from_slice(x0);
        for i in 0..n {
            let (head, tail) = self.traj.split_at_mut((i + 1) * nx);
            let x = &head[i * nx..];
            let ui = &u[i * nu..(i + 1) * nu];
            model.step_into(x, ui, &mut tail[..nx]);
            model.jacobians_into(
                x,
                ui,
                &mut self.a[i * nx * nx..(i + 1) * nx * nx],
                &mut self.b[i * nx * nu..(i + 1) * nx * nu],
            );
        }
        let j_p = performance_cost(problem, &self.traj, u);
        self.gx.iter_mut().for_each(|g| *g = 0.0);
        let j_xi = penalty(
            problem,
            &self.supports,
            &self.traj,
            Some(&mut self.gx),
            None,
            &mut self.scratch,
        );

        for i in 1..n {
            problem.q.add_quad_grad(
                &self.traj[i * nx..(i + 1) * nx],
                &mut self.gx[i * nx..(i + 1) * nx],
            );
        }
        problem
            .q_n
            .add_quad_grad(&self.traj[n * nx..], &mut self.gx[n * nx..]);

        // lam holds dJ/dx_{i+1} while processing step i.
        self.lam.copy_from_slice(&self.gx[n * nx..]);
        for i in (0..n).rev() {
            let gu = &mut grad_u[i * nu..(i + 1) * nu];
            gu.iter_mut().for_each(|g| *g = 0.0);
            problem.r.add_quad_grad(&u[i * nu..(i + 1) * nu], gu);
            let b = &self.b[i * nx * nu..(i + 1) * nx * nu];
            for k in 0..nx {
                for j in 0..nu {
                    gu[j] += b[k * nu + j] * self.lam[k];
                }
            }
            if i > 0 {
                let a = &self.a[i * nx * nx..(i + 1) * nx * nx];
                for j in 0..nx {
                    let mut acc = self.gx[i * nx + j];
                    for k in 0..nx {
                        acc += a[k * nx + j] * self.lam[k];
                    }
                    self.tmp[j] = acc;
                }
                self.lam.copy_from_slice(&self.tmp);
            }
        }
        (j_p, j_xi)
    }
}

/// Gradient of the total cost w.r.t. the flat input sequence.
pub fn scmpc_cost_gradient(
    problem: &ScmpcProblem,
    x0: &[f64],
    u_seq: &[f64],
) -> Result<(CostBreakdown, Vec<f64>)> {
    check_len("initial state", problem.model.n_x(), x0.len())?;
    check_len(
        "input sequence",
        problem.horizon * problem.model.n_u(),
        u_seq.len(),
    )?;
    let mut ws = Workspace::new(problem)?;
    let mut g = vec![0.0; u_seq.len()];
    let (j_p, j_xi) = ws.cost_grad(problem, x0, u_seq, &mut g);
    Ok((
        CostBreakdown {
            j_p,
            j_xi,
            total: j_p + j_xi,
        },
        g,
    ))
}

/// How restart initial guesses are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitRule {
    /// Every input uniform in the input box.
    UniformBox,
    /// Every input set to `+x0` or `-x0` (fair coin per restart); scalar systems only.
    SignedState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub restarts: usize,
    pub iterations: usize,
    /// Initial Adam step size.
    pub step: f64,
    /// Per-iteration step-size decay.
    pub decay: f64,
    /// Stop a restart once the largest input change of an iteration falls below this.
    pub tol: f64,
    /// Restarts within `tie_rel * (1 + |best|)` of the best value are treated as optimal.
    pub tie_rel: f64,
    pub init: InitRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            iterations: 400,
            step: 0.1,
            decay: 0.995,
            tol: 1e-10,
            tie_rel: 1e-3,
            init: InitRule::UniformBox,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmpcSolution {
    /// `N * n_u` inputs, step-major.
    pub u_seq: Vec<f64>,
    /// `(N + 1) * n_x` predicted states.
    pub x_traj: Vec<f64>,
    pub slacks: Slacks,
    pub alpha: f64,
    pub v: f64,
    pub v_p: f64,
    pub v_xi: f64,
    /// Lowest value over all restarts (the returned solution is within the tie tolerance).
    pub best_value: f64,
    pub restarts_used: usize,
    pub n_u: usize,
    /// Max minus min final value across restarts that finished with a finite cost.
    pub value_spread: f64,
}

impl ScmpcSolution {
    pub fn first_input(&self) -> &[f64] {
        &self.u_seq[..self.n_u]
    }
}

struct RestartResult {
    value: f64,
    u: Vec<f64>,
}

fn run_restart(
    problem: &ScmpcProblem,
    x0: &[f64],
    cfg: &SolverConfig,
    seed: u64,
    ws: &mut Workspace,
) -> Option<RestartResult> {
    let model = &problem.model;
    let (nu, n) = (model.n_u(), problem.horizon);
    let mut rng = rng::rng_from(seed);
    let mut u = vec![0.0; n * nu];
    match cfg.init {
        InitRule::UniformBox => {
            for i in 0..n {
                for j in 0..nu {
                    let (lo, hi) = (model.input_lo()[j], model.input_hi()[j]);
                    u[i * nu + j] = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                }
            }
        }
        InitRule::SignedState => {
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            u.iter_mut().for_each(|v| *v = sign * x0[0]);
            for i in 0..n {
                model.clamp_input(&mut u[i * nu..(i + 1) * nu]);
            }
        }
    }
    let mut grad = vec![0.0; u.len()];
    let mut adam = AdamState::new(u.len(), cfg.step, cfg.decay);
    let mut best: Option<RestartResult> = None;
    let mut prev = u.clone();
    for it in 0..cfg.iterations.max(1) {
        let (jp, jx) = ws.cost_grad(problem, x0, &u, &mut grad);
        let value = jp + jx;
        if !value.is_finite() {
            break;
        }
        if best.as_ref().map_or(true, |b| value < b.value) {
            best = Some(RestartResult {
                value,
                u: u.clone(),
            });
        }
        if it + 1 == cfg.iterations.max(1) {
            break;
        }
        prev.copy_from_slice(&u);
        // The solver's step schedule decays per iteration, so the iteration plays the
        // role of the optimizer's epoch counter.
        if adam.step(&mut u, &grad, it).is_err() {
            break;
        }
        for i in 0..n {
            model.clamp_input(&mut u[i * nu..(i + 1) * nu]);
        }
        let change = u
            .iter()
            .zip(&prev)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if change < cfg.tol {
            let (jp, jx) = ws.cost_grad(problem, x0, &u, &mut grad);
            let value = jp + jx;
            if value.is_finite() && best.as_ref().map_or(true, |b| value < b.value) {
                best = Some(RestartResult {
                    value,
                    u: u.clone(),
                });
            }
            break;
        }
    }
    best
}

/// Multi-start projected-Adam solve of the soft-constrained MPC problem at `x0`.
pub fn solve_scmpc(
    problem: &ScmpcProblem,
    x0: &[f64],
    cfg: &SolverConfig,
    seed: u64,
) -> Result<ScmpcSolution> {
    problem.validate()?;
    check_len("initial state", problem.model.n_x(), x0.len())?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidProblem("initial state must be finite".into()));
    }
    if cfg.init == InitRule::SignedState && (problem.model.n_x() != 1 || problem.model.n_u() != 1) {
        return Err(Error::Unsupported(
            "signed-state initialization needs n_x = n_u = 1",
        ));
    }
    let restarts = cfg.restarts.max(1);
    let mut ws = Workspace::new(problem)?;
    let results: Vec<RestartResult> = (0..restarts)
        .filter_map(|r| run_restart(problem, x0, cfg, rng::derive_seed(seed, r as u64), &mut ws))
        .collect();
    if results.is_empty() {
        return Err(Error::SolverFailure { restarts });
    }
    let best_value = results
        .iter()
        .map(|r| r.value)
        .fold(f64::INFINITY, f64::min);
    let worst = results
        .iter()
        .map(|r| r.value)
        .fold(f64::NEG_INFINITY, f64::max);
    let tie_tol = cfg.tie_rel * (1.0 + best_value.abs());
    let tied: Vec<&RestartResult> = results
        .iter()
        .filter(|r| r.value <= best_value + tie_tol)
        .collect();
    let pick = rng::stream(seed, u64::MAX).gen_range(0..tied.len());
    let chosen = tied[pick];

    let x_traj = rollout(&problem.model, x0, &chosen.u)?;
    let v_p = performance_cost(problem, &x_traj, &chosen.u);
    let slacks = optimal_slacks(problem, &x_traj)?;
    let v_xi = slack_cost(problem, &slacks);
    Ok(ScmpcSolution {
        u_seq: chosen.u.clone(),
        alpha: slacks.alpha,
        x_traj,
        slacks,
        v: v_p + v_xi,
        v_p,
        v_xi,
        best_value,
        restarts_used: restarts,
        n_u: problem.model.n_u(),
        value_spread: worst - best_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;
    use proptest::prelude::*;

    fn quad_problem(horizon: usize) -> ScmpcProblem {
        presets::quad1d_problem_with_horizon(horizon)
    }

    #[test]
    fn problem_spec_round_trip() {
        for p in [presets::unicycle_problem(), presets::quad1d_problem()] {
            assert_eq!(ProblemSpec::from_problem(&p).to_problem().unwrap(), p);
        }
        let mut bad = ProblemSpec::from_problem(&presets::quad1d_problem());
        bad.model = "pendulum".into();
        assert!(bad.to_problem().is_err());
    }

    #[test]
    fn rollout_examples() {
        let q = SystemModel::quad1d();
        assert_eq!(rollout(&q, &[1.0], &[1.0]).unwrap(), vec![1.0, 0.0]);
        let u = SystemModel::unicycle();
        let t = rollout(&u, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!(
            (t[2] - 0.05).abs() < 1e-15
                && (t[4] - 0.10).abs() < 1e-15
                && t[3] == 0.0
                && t[5] == 0.0
        );
        assert_eq!(rollout(&q, &[0.7], &[]).unwrap(), vec![0.7]);
    }

    #[test]
    fn ellipsoid_support_examples() {
        let e1 = [1.0, 0.0];
        assert!((ellipsoid_support(&Matrix::identity(2), 1.0, &e1).unwrap() - 1.0).abs() < 1e-15);
        assert!(
            (ellipsoid_support(&Matrix::identity(2).scaled(4.0), 1.0, &e1).unwrap() - 0.5).abs()
                < 1e-15
        );
        let p = Matrix::diag(&[1.0, 4.0]);
        let s = ellipsoid_support(&p, 2.0, &[1.0, 1.0]).unwrap();
        // Boundary parametrization x = sqrt(h_f) (cos t, sin t / 2), 10^6 angles.
        let mut oracle = f64::NEG_INFINITY;
        for k in 0..1_000_000 {
            let t = 2.0 * core::f64::consts::PI * k as f64 / 1e6;
            let v = libm::sqrt(2.0) * (libm::cos(t) + libm::sin(t) / 2.0);
            oracle = oracle.max(v);
        }
        assert!((s - oracle).abs() < 1e-9);
        assert!((s - libm::sqrt(2.5)).abs() < 1e-12);
        assert_eq!(
            ellipsoid_support(&Matrix::diag(&[1.0, -1.0]), 1.0, &e1),
            Err(Error::NotPositiveDefinite)
        );
    }

    #[test]
    fn terminal_containment_examples() {
        let h_x = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, -1.0],
        ])
        .unwrap();
        let p = Matrix::identity(2);
        let z = [0.0; 4];
        assert!(
            terminal_containment(0.0, &p, 1.0, &h_x, 1.0, &z)
                .unwrap()
                .satisfied
        );
        let c = terminal_containment(0.9, &p, 1.0, &h_x, 0.1, &z).unwrap();
        assert!(c.satisfied);
        assert!(c.margins.iter().all(|m| m.abs() < 1e-12));
        assert!(
            !terminal_containment(0.95, &p, 1.0, &h_x, 0.1, &z)
                .unwrap()
                .satisfied
        );
    }

    #[test]
    fn optimal_slacks_examples() {
        let uni = presets::unicycle_problem_with_horizon(1);
        let s = optimal_slacks(&uni, &[0.0, 0.0, 0.05, 0.0]).unwrap();
        assert!((s.stages[0] - 0.26).abs() < 1e-15);
        assert_eq!(s.terminal, vec![0.0]);
        let s = optimal_slacks(&uni, &[2.0, 0.0, 2.05, 0.0]).unwrap();
        assert_eq!(s.stages, vec![0.0]);

        let mut poly = quad_problem(1);
        poly.constraints = StateConstraints::Polytope {
            h_x: Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap(),
        };
        poly.eta = 1e-300; // effectively untightened
        let s = optimal_slacks(&poly, &[1.2, 0.0]).unwrap();
        assert!((s.stages[0] - 0.2).abs() < 1e-12 && s.stages[1] == 0.0);
    }

    #[test]
    fn scmpc_cost_examples() {
        let p = quad_problem(1);
        let c = scmpc_cost(&p, &[0.3], &[0.3]).unwrap();
        assert!((c.j_p - 0.09).abs() < 1e-15 && c.j_xi == 0.0);
        assert_eq!(scmpc_cost(&p, &[0.0], &[0.0]).unwrap().total, 0.0);
        assert!(scmpc_cost(&p, &[0.0], &[0.0, 0.0]).is_err());

        // Closed form: xi_0 = 0.5^2 + 0.01 - 0 = 0.26; x_1 = (0.05, 0) is not a stage state
        // for N = 1 and no terminal set is used, so J_xi = 15000 * 0.26.
        let uni = presets::unicycle_problem_with_horizon(1);
        let c = scmpc_cost(&uni, &[0.0, 0.0], &[0.0]).unwrap();
        assert!((c.j_xi - 3900.0).abs() < 1e-9);
        assert_eq!(c.j_p, 0.0);
    }

    #[test]
    fn solver_examples_1d() {
        let p = quad_problem(1);
        let cfg = presets::quad1d_solver_config();
        let mut signs = [0usize; 2];
        for seed in 0..100 {
            let s = solve_scmpc(&p, &[0.3], &cfg, seed).unwrap();
            assert!((s.v - 0.09).abs() <= 1e-4);
            let u0 = s.u_seq[0];
            assert!((u0.abs() - 0.3).abs() <= 1e-2);
            signs[(u0 > 0.0) as usize] += 1;
        }
        assert!(signs[0] > 0 && signs[1] > 0);
        let s = solve_scmpc(&p, &[0.0], &cfg, 3).unwrap();
        assert_eq!((s.u_seq[0], s.v), (0.0, 0.0));
    }

    #[test]
    fn uniform_init_also_finds_both_signs() {
        let p = quad_problem(1);
        let cfg = SolverConfig::default();
        let mut signs = [0usize; 2];
        for seed in 0..40 {
            let s = solve_scmpc(&p, &[0.3], &cfg, seed).unwrap();
            assert!((s.v - 0.09).abs() <= 1e-4, "{}", s.v);
            signs[(s.u_seq[0] > 0.0) as usize] += 1;
        }
        assert!(signs[0] > 0 && signs[1] > 0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let uni = presets::unicycle_problem_with_horizon(4);
        let x0 = [-0.6, 0.1];
        let u = [0.2, -0.4, 0.6, 0.1];
        let (_, g) = scmpc_cost_gradient(&uni, &x0, &u).unwrap();
        for k in 0..u.len() {
            let h = 1e-6;
            let (mut up, mut um) = (u, u);
            up[k] += h;
            um[k] -= h;
            let fd = (scmpc_cost(&uni, &x0, &up).unwrap().total
                - scmpc_cost(&uni, &x0, &um).unwrap().total)
                / (2.0 * h);
            assert!(
                (fd - g[k]).abs() <= 1e-5 * (1.0 + fd.abs()),
                "k={k} fd={fd} g={}",
                g[k]
            );
        }
    }

    #[test]
    fn terminal_gradient_matches_finite_differences() {
        let mut p = presets::unicycle_problem_with_horizon(3);
        p.constraints = StateConstraints::Polytope {
            h_x: Matrix::from_rows(&[vec![0.0, 4.0], vec![0.0, -4.0], vec![1.0, 0.0]]).unwrap(),
        };
        p.terminal = Some(TerminalSet {
            p: Matrix::diag(&[2.0, 30.0]),
            h_f: 0.5,
        });
        for (x0, u) in [
            ([0.0, 0.2], [0.3, 0.5, 0.9]),
            ([0.8, -0.3], [-0.7, 0.2, 0.0]),
            ([0.6, 0.1], [0.1, 0.1, 0.1]),
        ] {
            let (c, g) = scmpc_cost_gradient(&p, &x0, &u).unwrap();
            assert!(c.j_xi > 0.0);
            for k in 0..3 {
                let h = 1e-7;
                let (mut up, mut um) = (u, u);
                up[k] += h;
                um[k] -= h;
                let fd = (scmpc_cost(&p, &x0, &up).unwrap().total
                    - scmpc_cost(&p, &x0, &um).unwrap().total)
                    / (2.0 * h);
                assert!(
                    (fd - g[k]).abs() <= 1e-5 * (1.0 + fd.abs()),
                    "k={k} fd={fd} g={}",
                    g[k]
                );
            }
        }
    }

    #[test]
    fn terminal_slacks_cover_containment() {
        let mut p = quad_problem(2);
        let h_x = Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        p.constraints = StateConstraints::Polytope { h_x: h_x.clone() };
        p.eta = 0.1;
        p.terminal = Some(TerminalSet {
            p: Matrix::identity(1),
            h_f: 4.0,
        });
        let s = optimal_slacks(&p, &[0.5, 0.3, 1.5]).unwrap();
        // alpha = |x_N| / sqrt(h_f) = 0.75; support = 2; xi_N = 0.75 * 2 - 0.9 = 0.6.
        assert!((s.alpha - 0.75).abs() < 1e-12);
        assert!((s.terminal[0] - 0.6).abs() < 1e-12);
        let c = terminal_containment(s.alpha, &Matrix::identity(1), 4.0, &h_x, 0.1, &s.terminal)
            .unwrap();
        assert!(c.satisfied);
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let mut p = quad_problem(1);
        p.rho = 0.0;
        assert!(matches!(p.validate(), Err(Error::InvalidProblem(_))));
        let mut p = quad_problem(1);
        p.eta = 1.5;
        assert!(p.validate().is_err());
        let mut p = quad_problem(1);
        p.horizon = 0;
        assert!(p.validate().is_err());
        let mut p = quad_problem(1);
        p.q = Matrix::diag(&[-1.0]);
        assert!(p.validate().is_err());
        let mut p = presets::unicycle_problem_with_horizon(2);
        p.terminal = Some(TerminalSet {
            p: Matrix::identity(2),
            h_f: 1.0,
        });
        assert!(p.validate().is_err());
    }

    #[test]
    fn decomposition_holds() {
        let uni = presets::unicycle_problem_with_horizon(5);
        let cfg = SolverConfig {
            restarts: 4,
            iterations: 100,
            ..SolverConfig::default()
        };
        for (k, x0) in [[-0.6, 0.0], [0.0, 0.2], [-1.0, 0.3]].iter().enumerate() {
            let s = solve_scmpc(&uni, x0, &cfg, k as u64).unwrap();
            assert!((s.v - (s.v_p + s.v_xi)).abs() <= 1e-9);
            assert!(s.slacks.stages.iter().all(|v| *v >= 0.0));
            assert!(s.u_seq.iter().all(|u| uni.model.contains_input(&[*u])));
            let traj = rollout(&uni.model, x0, &s.u_seq).unwrap();
            assert_eq!(traj, s.x_traj);
        }
    }

    #[test]
    fn best_value_is_monotone_in_restarts() {
        let uni = presets::unicycle_problem_with_horizon(4);
        let mut last = f64::INFINITY;
        for r in 1..=6 {
            let cfg = SolverConfig {
                restarts: r,
                iterations: 60,
                ..SolverConfig::default()
            };
            let s = solve_scmpc(&uni, &[-0.7, 0.05], &cfg, 11).unwrap();
            assert!(s.best_value <= last);
            last = s.best_value;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn slack_cost_is_nonnegative_and_decomposes(x1 in -1.0f64..1.0, x2 in -1.0f64..1.0, u in proptest::collection::vec(-1.0f64..1.0, 3)) {
            let uni = presets::unicycle_problem_with_horizon(3);
            let c = scmpc_cost(&uni, &[x1, x2], &u).unwrap();
            prop_assert!(c.j_xi >= 0.0 && c.j_p >= 0.0);
            prop_assert!((c.total - c.j_p - c.j_xi).abs() <= 1e-9);
        }
    }
}
