//! Closed-loop rollouts, the trajectory benchmark suite, and the scalar consistency sweep.
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::{generate_dataset, inputs_of, sample_states, states_of};
use crate::error::{check_len, Error, Result};
use crate::exec::Executor;
use crate::nn::{Mlp, TrainConfig, Workspace};
use crate::policyfit::{
    distance_to_signed_pair, train_policy_bc, train_policy_il, GridScratch, LookAhead, PolicyModel,
};
use crate::presets;
use crate::rng;
use crate::scmpc::{solve_scmpc, ScmpcProblem, SolverConfig};
use crate::valuefit::ValueModel;

/// State-feedback law evaluated once per closed-loop step.
pub trait Policy {
    fn n_u(&self) -> usize;
    fn act(&mut self, x: &[f64], u: &mut [f64]) -> Result<()>;

    /// `n` row-major states at once; `us` receives `n x n_u` inputs.
    fn act_batch(&mut self, xs: &[f64], n: usize, us: &mut [f64]) -> Result<()> {
        let (n_x, n_u) = (xs.len() / n.max(1), self.n_u());
        for (x, u) in xs
            .chunks_exact(n_x.max(1))
            .zip(us.chunks_exact_mut(n_u))
            .take(n)
        {
            self.act(x, u)?;
        }
        Ok(())
    }
}

/// Trained network policy with a reusable workspace.
#[derive(Debug, Clone)]
pub struct NetPolicy<'a> {
    pub model: &'a PolicyModel,
    ws: Workspace,
}

impl<'a> NetPolicy<'a> {
    pub fn new(model: &'a PolicyModel) -> Self {
        Self {
            model,
            ws: Workspace::default(),
        }
    }
}

impl Policy for NetPolicy<'_> {
    fn n_u(&self) -> usize {
        self.model.n_u()
    }

    fn act(&mut self, x: &[f64], u: &mut [f64]) -> Result<()> {
        check_len("state", self.model.n_x(), x.len())?;
        self.model.act_batch(x, 1, &mut self.ws, u);
        Ok(())
    }

    fn act_batch(&mut self, xs: &[f64], n: usize, us: &mut [f64]) -> Result<()> {
        check_len("states", n * self.model.n_x(), xs.len())?;
        check_len("inputs", n * self.model.n_u(), us.len())?;
        self.model.act_batch(xs, n, &mut self.ws, us);
        Ok(())
    }
}

/// Network output used directly as the input, without projection.
#[derive(Debug, Clone)]
pub struct RawNetPolicy<'a> {
    pub net: &'a Mlp,
    ws: Workspace,
}

impl<'a> RawNetPolicy<'a> {
    pub fn new(net: &'a Mlp) -> Self {
        Self {
            net,
            ws: Workspace::default(),
        }
    }
}

impl Policy for RawNetPolicy<'_> {
    fn n_u(&self) -> usize {
        self.net.n_out()
    }

    fn act(&mut self, x: &[f64], u: &mut [f64]) -> Result<()> {
        check_len("state", self.net.n_in(), x.len())?;
        u.copy_from_slice(self.net.forward_batch(x, 1, &mut self.ws));
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPolicy(pub Vec<f64>);

impl Policy for ConstantPolicy {
    fn n_u(&self) -> usize {
        self.0.len()
    }

    fn act(&mut self, _x: &[f64], u: &mut [f64]) -> Result<()> {
        u.copy_from_slice(&self.0);
        Ok(())
    }
}

/// `pi*(x)` by input gridding of the look-ahead loss.
#[derive(Debug, Clone)]
pub struct GridPolicy<'a> {
    pub look: LookAhead<'a>,
    pub n_grid: usize,
    scratch: GridScratch,
}

impl<'a> GridPolicy<'a> {
    pub fn new(look: LookAhead<'a>, n_grid: usize) -> Self {
        Self {
            look,
            n_grid,
            scratch: GridScratch::default(),
        }
    }
}

impl Policy for GridPolicy<'_> {
    fn n_u(&self) -> usize {
        1
    }

    fn act(&mut self, x: &[f64], u: &mut [f64]) -> Result<()> {
        u[0] = self.scratch.argmin(x, &self.look, self.n_grid)?.0;
        Ok(())
    }
}

/// The SCMPC itself; call `k` uses solver seed `derive_seed(seed, k)`.
#[derive(Debug, Clone)]
pub struct MpcPolicy<'a> {
    pub problem: &'a ScmpcProblem,
    pub cfg: SolverConfig,
    pub seed: u64,
    calls: u64,
}

impl<'a> MpcPolicy<'a> {
    pub fn new(problem: &'a ScmpcProblem, cfg: SolverConfig, seed: u64) -> Self {
        Self {
            problem,
            cfg,
            seed,
            calls: 0,
        }
    }
}

impl Policy for MpcPolicy<'_> {
    fn n_u(&self) -> usize {
        self.problem.model.n_u()
    }

    fn act(&mut self, x: &[f64], u: &mut [f64]) -> Result<()> {
        let s = solve_scmpc(
            self.problem,
            x,
            &self.cfg,
            rng::derive_seed(self.seed, self.calls),
        )?;
        self.calls += 1;
        u.copy_from_slice(s.first_input());
        Ok(())
    }
}

/// `pi*(x)` for a single state.
pub fn pi_star_grid(
    x: &[f64],
    value: &ValueModel,
    problem: &ScmpcProblem,
    n_grid: usize,
) -> Result<f64> {
    Ok(GridScratch::default()
        .argmin(x, &LookAhead::new(problem, value), n_grid)?
        .0)
}

/// Monotonic time source in seconds.
pub trait Clock {
    fn now(&self) -> f64;
}

/// Always zero; for deterministic runs that do not need timings.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub x0: Vec<f64>,
    /// `(T + 1) x n_x`.
    pub states: Vec<f64>,
    /// `T x n_u`.
    pub inputs: Vec<f64>,
    /// `sum_{k<T} l(x(k), u(k))`.
    pub p_t: f64,
    /// `sum_{k<T} max(0, net_xi(x(k)))`.
    pub p_c: f64,
    /// States `x(k)`, `k < T`, violating the state constraints.
    pub violations: usize,
    /// Wall time of each policy call.
    #[serde(skip)]
    pub step_times: Vec<f64>,
}

impl Trajectory {
    pub fn perf(&self) -> f64 {
        self.p_t + self.p_c
    }
}

/// Recomputes `(p_t, violations)` from stored states and inputs.
pub fn recompute_metrics(problem: &ScmpcProblem, traj: &Trajectory) -> (f64, usize) {
    let (n_x, n_u) = (problem.model.n_x(), problem.model.n_u());
    let t = traj.inputs.len() / n_u;
    let mut p_t = 0.0;
    let mut violations = 0;
    for k in 0..t {
        let x = &traj.states[k * n_x..(k + 1) * n_x];
        p_t += problem.stage_cost(x, &traj.inputs[k * n_u..(k + 1) * n_u]);
        violations += problem.violates(x) as usize;
    }
    (p_t, violations)
}

/// Runs `u(k) = policy(x(k))`, `x(k+1) = f(x(k), u(k))` for `steps` steps.
pub fn closed_loop(
    policy: &mut dyn Policy,
    problem: &ScmpcProblem,
    value: Option<&ValueModel>,
    x0: &[f64],
    steps: usize,
    clock: &dyn Clock,
) -> Result<Trajectory> {
    let model = &problem.model;
    let (n_x, n_u) = (model.n_x(), model.n_u());
    check_len("initial state", n_x, x0.len())?;
    check_len("policy output", n_u, policy.n_u())?;
    if steps == 0 {
        return Err(Error::InvalidProblem(
            "closed loop needs at least one step".into(),
        ));
    }
    let mut states = Vec::with_capacity((steps + 1) * n_x);
    let mut inputs = vec![0.0; steps * n_u];
    let mut step_times = Vec::with_capacity(steps);
    states.extend_from_slice(x0);
    let (mut p_t, mut p_c, mut violations) = (0.0, 0.0, 0);
    let mut next = vec![0.0; n_x];
    for k in 0..steps {
        let x = &states[k * n_x..(k + 1) * n_x];
        let u = &mut inputs[k * n_u..(k + 1) * n_u];
        let t0 = clock.now();
        policy.act(x, u)?;
        step_times.push(clock.now() - t0);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { step: k });
        }
        p_t += problem.stage_cost(x, u);
        p_c += value.map_or(0.0, |v| v.constraint_part(x));
        violations += problem.violates(x) as usize;
        model.step_into(x, u, &mut next);
        states.extend_from_slice(&next);
    }
    Ok(Trajectory {
        x0: x0.to_vec(),
        states,
        inputs,
        p_t,
        p_c,
        violations,
        step_times,
    })
}

/// Benchmark protocol: uniform starts in a box, starts violating the constraints redrawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub n_traj: usize,
    pub steps: usize,
    pub start_lo: Vec<f64>,
    pub start_hi: Vec<f64>,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            n_traj: 500,
            steps: 100,
            start_lo: vec![-1.0, -0.7],
            start_hi: vec![0.0, 0.7],
        }
    }
}

/// `cfg.n_traj` starting states, deterministic in `seed`.
pub fn suite_starts(problem: &ScmpcProblem, cfg: &SuiteConfig, seed: u64) -> Result<Vec<Vec<f64>>> {
    check_len("suite start box", problem.model.n_x(), cfg.start_lo.len())?;
    check_len("suite start box", problem.model.n_x(), cfg.start_hi.len())?;
    let mut r = rng::rng_from(seed);
    let mut starts = Vec::with_capacity(cfg.n_traj);
    let mut draws = 0usize;
    while starts.len() < cfg.n_traj {
        draws += 1;
        if draws > 1000 * (cfg.n_traj + 1) {
            return Err(Error::InvalidProblem(
                "start box lies inside the constraint violation region".into(),
            ));
        }
        let x: Vec<f64> = cfg
            .start_lo
            .iter()
            .zip(&cfg.start_hi)
            .map(|(&a, &b)| if a < b { r.gen_range(a..b) } else { a })
            .collect();
        if !problem.violates(&x) {
            starts.push(x);
        }
    }
    Ok(starts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteAggregates {
    pub n_traj: usize,
    pub mean_perf: f64,
    pub mean_p_t: f64,
    pub mean_p_c: f64,
    pub total_violations: usize,
    /// Median policy call time over all steps of the suite.
    pub median_step_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub aggregates: SuiteAggregates,
    pub trajectories: Vec<Trajectory>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn aggregate(trajectories: &[Trajectory]) -> SuiteAggregates {
    let n = trajectories.len().max(1) as f64;
    SuiteAggregates {
        n_traj: trajectories.len(),
        mean_perf: trajectories.iter().map(|t| t.perf()).sum::<f64>() / n,
        mean_p_t: trajectories.iter().map(|t| t.p_t).sum::<f64>() / n,
        mean_p_c: trajectories.iter().map(|t| t.p_c).sum::<f64>() / n,
        total_violations: trajectories.iter().map(|t| t.violations).sum(),
        median_step_time_s: median(
            trajectories
                .iter()
                .flat_map(|t| t.step_times.iter().copied())
                .collect(),
        ),
    }
}

/// Closed-loop benchmark of one policy; `p_c` uses the constraint network of `value`.
pub fn evaluate_suite(
    policy: &mut dyn Policy,
    problem: &ScmpcProblem,
    value: Option<&ValueModel>,
    cfg: &SuiteConfig,
    seed: u64,
    clock: &dyn Clock,
) -> Result<SuiteReport> {
    let starts = suite_starts(problem, cfg, seed)?;
    let trajectories = starts
        .iter()
        .map(|x0| closed_loop(policy, problem, value, x0, cfg.steps, clock))
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport {
        aggregates: aggregate(&trajectories),
        trajectories,
    })
}

/// Sweep of training-set sizes on the scalar benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsistencyConfig {
    pub ns_list: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Sampling interval `[a, b]` of training and test states.
    pub interval: [f64; 2],
    pub test_points: usize,
    pub arch: Vec<usize>,
    pub il_train: TrainConfig,
    pub bc_train: TrainConfig,
    pub solver: SolverConfig,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            ns_list: vec![50, 10_000],
            seeds: vec![0, 1, 2, 3, 4],
            interval: [-1.0, 1.0],
            test_points: 401,
            arch: presets::quad1d_policy_arch(),
            il_train: presets::quad1d_train_config(),
            bc_train: presets::quad1d_train_config(),
            solver: presets::quad1d_solver_config(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyRow {
    pub method: String,
    pub n_s: usize,
    pub seed: u64,
    /// Mean of `d(pi(x), {x, -x})` over the test grid.
    pub mean_dist: f64,
    pub sup_dist: f64,
    pub max_abs_u: f64,
    pub final_loss: f64,
}

/// `n` equispaced points of `[a, b]`, endpoints included.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..n)
            .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

fn distance_row(
    method: &str,
    n_s: usize,
    seed: u64,
    policy: &PolicyModel,
    test: &[f64],
    final_loss: f64,
) -> Result<ConsistencyRow> {
    let mut mean = 0.0;
    let mut sup: f64 = 0.0;
    let mut max_u: f64 = 0.0;
    for &x in test {
        let u = policy.act(&[x])?[0];
        let d = distance_to_signed_pair(x, u);
        mean += d;
        sup = sup.max(d);
        max_u = max_u.max(u.abs());
    }
    Ok(ConsistencyRow {
        method: method.into(),
        n_s,
        seed,
        mean_dist: mean / test.len().max(1) as f64,
        sup_dist: sup,
        max_abs_u: max_u,
        final_loss,
    })
}

/// One run of the sweep: both policies trained on the same `n_s` states.
pub fn consistency_cell(
    cfg: &ConsistencyConfig,
    n_s: usize,
    seed: u64,
) -> Result<[ConsistencyRow; 2]> {
    let problem = presets::quad1d_problem();
    let value = ValueModel::exact_quad1d();
    let [a, b] = cfg.interval;
    let cell_seed = rng::derive_seed(seed, n_s as u64);
    let states = sample_states(
        &presets::quad1d_plan(n_s, a, b),
        rng::derive_seed(cell_seed, 0),
    )?;
    let records = generate_dataset(
        &problem,
        &states,
        &cfg.solver,
        rng::derive_seed(cell_seed, 1),
        &crate::exec::Sequential,
    )?;
    let test = linspace(a, b, cfg.test_points);
    let il = train_policy_il(
        &states,
        LookAhead::new(&problem, &value),
        &cfg.arch,
        &cfg.il_train,
        rng::derive_seed(cell_seed, 2),
    )?;
    let bc = train_policy_bc(
        &states_of(&records),
        &inputs_of(&records),
        &problem.model,
        &cfg.arch,
        &cfg.bc_train,
        rng::derive_seed(cell_seed, 3),
    )?;
    Ok([
        distance_row("il", n_s, seed, &il.policy, &test, il.summary.final_loss)?,
        distance_row("bc", n_s, seed, &bc.policy, &test, bc.summary.final_loss)?,
    ])
}

/// Rows ordered by `(n_s, seed)` as listed, IL before BC.
pub fn consistency_experiment<E: Executor>(
    cfg: &ConsistencyConfig,
    exec: &E,
) -> Result<Vec<ConsistencyRow>> {
    let cells: Vec<(usize, u64)> = cfg
        .ns_list
        .iter()
        .flat_map(|&n| cfg.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let out = exec.map(cells.len(), |i| {
        consistency_cell(cfg, cells[i].0, cells[i].1)
    });
    let mut rows = Vec::with_capacity(2 * cells.len());
    for r in out {
        rows.extend(r?);
    }
    Ok(rows)
}
