//! Empirical audits of the learning assumptions and a convergence diagnostic for closed-loop
//! trajectories.
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};
use crate::policyfit::LookAhead;
use crate::rng;
use crate::scmpc::{solve_scmpc, ScmpcProblem, SolverConfig};
use crate::simulate::Policy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionAudit {
    pub id: String,
    pub samples: usize,
    /// Largest observed violation; for the descent audit, minus the worst margin.
    pub max_violation: f64,
    pub tolerance: f64,
    /// Samples whose check exceeded the tolerance.
    pub violated: usize,
    /// Samples that could not be evaluated.
    pub skipped: usize,
    pub pass: bool,
    pub notes: Vec<String>,
}

impl AssumptionAudit {
    fn finish(
        id: &str,
        samples: usize,
        max_violation: f64,
        tolerance: f64,
        violated: usize,
        skipped: usize,
        notes: Vec<String>,
    ) -> Self {
        Self {
            id: id.into(),
            samples,
            max_violation,
            tolerance,
            violated,
            skipped,
            pass: max_violation <= tolerance,
            notes,
        }
    }
}

/// Notes for the assumptions that are modelling premises rather than checkable properties.
pub fn unchecked_assumptions() -> Vec<AssumptionAudit> {
    [
        (
            "stabilizing_mpc",
            "the SCMPC is assumed to stabilize the closed loop; not machine-checked",
        ),
        (
            "realizable_policy_class",
            "a minimizing parameter set is assumed to exist; not machine-checked",
        ),
    ]
    .iter()
    .map(|(id, note)| AssumptionAudit {
        id: (*id).into(),
        samples: 0,
        max_violation: 0.0,
        tolerance: 0.0,
        violated: 0,
        skipped: 0,
        pass: true,
        notes: vec![(*note).into()],
    })
    .collect()
}

/// Samples `n_samples` states uniformly from `[state_lo, state_hi]` and measures how far the
/// policy output leaves the input box. Zero tolerance.
pub fn audit_input_constraint(
    policy: &mut dyn Policy,
    input_lo: &[f64],
    input_hi: &[f64],
    state_lo: &[f64],
    state_hi: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<AssumptionAudit> {
    check_len("input box", policy.n_u(), input_lo.len())?;
    check_len("input box", policy.n_u(), input_hi.len())?;
    check_len("state box", state_lo.len(), state_hi.len())?;
    let mut notes = Vec::new();
    if n_samples == 0 {
        notes.push("no samples; vacuous pass".into());
    }
    const CHUNK: usize = 256;
    let (n_x, n_u) = (state_lo.len(), policy.n_u());
    let mut r = rng::rng_from(seed);
    let mut xs = vec![0.0; CHUNK * n_x];
    let mut us = vec![0.0; CHUNK * n_u];
    let (mut worst, mut violated) = (0.0f64, 0);
    let mut done = 0;
    while done < n_samples {
        let n = CHUNK.min(n_samples - done);
        for x in xs.chunks_exact_mut(n_x.max(1)).take(n) {
            for (xi, (&a, &b)) in x.iter_mut().zip(state_lo.iter().zip(state_hi)) {
                *xi = if a < b { r.gen_range(a..b) } else { a };
            }
        }
        policy.act_batch(&xs[..n * n_x], n, &mut us[..n * n_u])?;
        done += n;
        for u in us[..n * n_u].chunks_exact(n_u.max(1)) {
            let out = u
                .iter()
                .zip(input_lo.iter().zip(input_hi))
                .map(|(&v, (&lo, &hi))| {
                    if v.is_nan() {
                        f64::INFINITY
                    } else {
                        (lo - v).max(v - hi).max(0.0)
                    }
                })
                .fold(0.0, f64::max);
            if out > 0.0 {
                violated += 1;
            }
            worst = worst.max(out);
        }
    }
    Ok(AssumptionAudit::finish(
        "input_constraint",
        n_samples,
        worst,
        0.0,
        violated,
        0,
        notes,
    ))
}

/// Error estimates entering the descent inequality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentTerms {
    /// Estimated bound on the policy's look-ahead suboptimality.
    pub eps_pi: f64,
    pub tolerance: f64,
}

/// Per-state check of
/// `L(x, pi(x)) <= l(x, u_MPC) + V_MPC(x+_MPC) + |V(x+_MPC) - V_MPC(x+_MPC)| + eps_pi`,
/// where `L` uses the approximate value `look.value`, `u_MPC` is the SCMPC input at `x`
/// and `x+_MPC` its successor (whose value needs a second solve).
/// Margin = right side minus left side; the audit fails if any margin is below
/// `-terms.tolerance`. States where a solve fails are skipped.
pub fn audit_descent_inequality(
    policy: &mut dyn Policy,
    look: &LookAhead<'_>,
    problem: &ScmpcProblem,
    solver: &SolverConfig,
    states: &[f64],
    terms: DescentTerms,
    seed: u64,
) -> Result<(AssumptionAudit, Vec<f64>)> {
    let n_x = problem.model.n_x();
    check_len("state rows", 0, states.len() % n_x)?;
    let n = states.len() / n_x;
    let mut u = vec![0.0; problem.model.n_u()];
    let mut margins = Vec::with_capacity(n);
    let (mut skipped, mut violated) = (0, 0);
    let mut worst = f64::NEG_INFINITY;
    for (j, x) in states.chunks_exact(n_x).enumerate() {
        let s = match solve_scmpc(problem, x, solver, rng::derive_seed(seed, 2 * j as u64)) {
            Ok(s) => s,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        let u_mpc = s.first_input();
        let next = problem.model.step(x, u_mpc)?;
        let v_next = match solve_scmpc(
            problem,
            &next,
            solver,
            rng::derive_seed(seed, 2 * j as u64 + 1),
        ) {
            Ok(s) => s.v,
            Err(_) => {
                skipped += 1;
                continue;
            }
        };
        policy.act(x, &mut u)?;
        let lhs = look.loss(x, &u);
        let rhs = problem.stage_cost(x, u_mpc)
            + v_next
            + (look.value.eval(&next) - v_next).abs()
            + terms.eps_pi;
        let margin = rhs - lhs;
        if margin < -terms.tolerance {
            violated += 1;
        }
        worst = worst.max(-margin);
        margins.push(margin);
    }
    let mut notes = Vec::new();
    if margins.is_empty() {
        notes.push("no state evaluated".into());
        worst = 0.0;
    }
    if skipped > 0 {
        notes.push(alloc::format!("{skipped} solver failures skipped"));
    }
    Ok((
        AssumptionAudit::finish(
            "descent_inequality",
            n,
            worst,
            terms.tolerance,
            violated,
            skipped,
            notes,
        ),
        margins,
    ))
}

/// What the convergence diagnostic tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssTarget {
    /// Euclidean norm of the state.
    Norm,
    /// Absolute value of one coordinate.
    Component(usize),
}

impl IssTarget {
    pub fn error(&self, x: &[f64]) -> f64 {
        match *self {
            IssTarget::Norm => libm::sqrt(x.iter().map(|v| v * v).sum()),
            IssTarget::Component(i) => x[i].abs(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            IssTarget::Norm => "norm".into(),
            IssTarget::Component(i) => alloc::format!("x{}", i + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IssConfig {
    /// Accepted size of the neighborhood the tail must stay in.
    pub neighborhood: f64,
    /// Fraction of the trajectory (the end) over which the offset is measured.
    pub tail_fraction: f64,
    /// Largest admissible envelope constant `c`.
    pub c_max: f64,
}

impl Default for IssConfig {
    fn default() -> Self {
        Self {
            neighborhood: 0.05,
            tail_fraction: 0.1,
            c_max: 10.0,
        }
    }
}

/// Exponential-plus-offset envelope `e(k) <= c * lambda^k * e(0) + offset` fitted to one
/// trajectory. This is a diagnostic, not a stability certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssDiagnostic {
    pub target: String,
    pub e0: f64,
    pub final_error: f64,
    /// Largest target error over the tail window.
    pub offset: f64,
    pub lambda: f64,
    pub c: f64,
    pub pass: bool,
}

/// Fits the envelope to `states` (`(T + 1) x n_x`). `offset` is the worst tail error;
/// `lambda` is the smallest value on a 0.001 grid whose required `c` stays within
/// `cfg.c_max` (1.0 when none does).
pub fn iss_diagnostic(
    states: &[f64],
    n_x: usize,
    target: IssTarget,
    cfg: &IssConfig,
) -> IssDiagnostic {
    let e: Vec<f64> = states.chunks_exact(n_x).map(|x| target.error(x)).collect();
    let t = e.len();
    let e0 = e.first().copied().unwrap_or(0.0);
    let tail_len = (libm::ceil(t as f64 * cfg.tail_fraction) as usize).clamp(1, t.max(1));
    let offset = e[t.saturating_sub(tail_len)..]
        .iter()
        .copied()
        .fold(0.0, f64::max);
    let c_of = |lambda: f64| {
        let mut c: f64 = 0.0;
        let mut pow = 1.0;
        for &ek in &e {
            let excess = ek - offset;
            if excess > 0.0 {
                c = if pow * e0 > 0.0 {
                    c.max(excess / (pow * e0))
                } else {
                    f64::INFINITY
                };
            }
            pow *= lambda;
        }
        c
    };
    let (mut lambda, mut c) = (1.0, c_of(1.0));
    if e0 > 0.0 {
        for k in 1..=1000 {
            let l = k as f64 / 1000.0;
            let cl = c_of(l);
            if cl <= cfg.c_max {
                lambda = l;
                c = cl;
                break;
            }
        }
    } else {
        lambda = 0.0;
        c = 0.0;
    }
    IssDiagnostic {
        target: target.label(),
        e0,
        final_error: e.last().copied().unwrap_or(0.0),
        offset,
        lambda,
        c,
        pass: offset <= cfg.neighborhood,
    }
}

/// Aggregate over several trajectories: passes iff every trajectory passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssSummary {
    pub pass: bool,
    pub n_traj: usize,
    pub n_pass: usize,
    pub worst_offset: f64,
    pub per_trajectory: Vec<IssDiagnostic>,
}

pub fn iss_summary(per_trajectory: Vec<IssDiagnostic>) -> IssSummary {
    IssSummary {
        pass: per_trajectory.iter().all(|d| d.pass),
        n_traj: per_trajectory.len(),
        n_pass: per_trajectory.iter().filter(|d| d.pass).count(),
        worst_offset: per_trajectory.iter().map(|d| d.offset).fold(0.0, f64::max),
        per_trajectory,
    }
}

impl core::fmt::Display for AssumptionAudit {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(
            f,
            "{}: {} ({} samples, max violation {:.3e}, tolerance {:.1e})",
            self.id,
            if self.pass { "pass" } else { "fail" },
            self.samples,
            self.max_violation,
            self.tolerance
        )
    }
}

impl IssDiagnostic {
    pub fn summary(&self) -> String {
        alloc::format!(
            "offset {:.4} lambda {:.3} c {:.2}",
            self.offset,
            self.lambda,
            self.c
        )
    }
}
