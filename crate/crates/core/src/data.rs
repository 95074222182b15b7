//! State sampling and SCMPC-labelled datasets.
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::exec::Executor;
use crate::rng;
use crate::scmpc::{solve_scmpc, ScmpcProblem, SolverConfig};
use crate::valuefit::ValueTargets;

/// Inclusive range with `count` equispaced points (a single point sits at `lo`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, count: usize) -> Self {
        Self { lo, hi, count }
    }

    fn point(&self, k: usize) -> f64 {
        if self.count == 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * k as f64 / (self.count - 1) as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingPlan {
    /// `n` i.i.d. uniform samples of the box `[lo, hi]`.
    UniformBox {
        lo: Vec<f64>,
        hi: Vec<f64>,
        n: usize,
    },
    /// Tensor grid, `x1` varying slowest.
    Grid2D { x1: Axis, x2: Axis },
    /// Concatenation of sub-plans.
    Composite { parts: Vec<SamplingPlan> },
}

impl SamplingPlan {
    pub fn dim(&self) -> usize {
        match self {
            SamplingPlan::UniformBox { lo, .. } => lo.len(),
            SamplingPlan::Grid2D { .. } => 2,
            SamplingPlan::Composite { parts } => parts.first().map_or(0, |p| p.dim()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SamplingPlan::UniformBox { n, .. } => *n,
            SamplingPlan::Grid2D { x1, x2 } => x1.count * x2.count,
            SamplingPlan::Composite { parts } => parts.iter().map(|p| p.len()).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidProblem(m.into()));
        match self {
            SamplingPlan::UniformBox { lo, hi, n } => {
                check_len("sampling box", lo.len(), hi.len())?;
                if lo.is_empty() || *n == 0 {
                    return bad("uniform plan needs a dimension and at least one sample");
                }
                if lo
                    .iter()
                    .zip(hi)
                    .any(|(a, b)| !(a <= b) || !a.is_finite() || !b.is_finite())
                {
                    return bad("uniform plan has an empty or non-finite range");
                }
                Ok(())
            }
            SamplingPlan::Grid2D { x1, x2 } => {
                for a in [x1, x2] {
                    if a.count == 0 || !(a.lo <= a.hi) || !a.lo.is_finite() || !a.hi.is_finite() {
                        return bad("grid axis needs a nonempty finite range and count >= 1");
                    }
                }
                Ok(())
            }
            SamplingPlan::Composite { parts } => {
                if parts.is_empty() {
                    return bad("composite plan has no parts");
                }
                for p in parts {
                    p.validate()?;
                    check_len("composite part dimension", self.dim(), p.dim())?;
                }
                Ok(())
            }
        }
    }
}

/// Row-major states of `plan`; uniform parts draw from a stream derived from `seed` and
/// the part index.
pub fn sample_states(plan: &SamplingPlan, seed: u64) -> Result<Vec<f64>> {
    plan.validate()?;
    let mut out = Vec::with_capacity(plan.len() * plan.dim());
    push_states(plan, seed, &mut out);
    Ok(out)
}

fn push_states(plan: &SamplingPlan, seed: u64, out: &mut Vec<f64>) {
    match plan {
        SamplingPlan::UniformBox { lo, hi, n } => {
            let mut r = rng::rng_from(seed);
            for _ in 0..*n {
                for (a, b) in lo.iter().zip(hi) {
                    out.push(if a < b { r.gen_range(*a..*b) } else { *a });
                }
            }
        }
        SamplingPlan::Grid2D { x1, x2 } => {
            for i in 0..x1.count {
                for j in 0..x2.count {
                    out.push(x1.point(i));
                    out.push(x2.point(j));
                }
            }
        }
        SamplingPlan::Composite { parts } => {
            for (k, p) in parts.iter().enumerate() {
                push_states(p, rng::derive_seed(seed, k as u64), out);
            }
        }
    }
}

/// One labelled state. Failed solves keep the state, carry NaN labels and set `flag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub x: Vec<f64>,
    pub u_mpc: Vec<f64>,
    pub v: f64,
    pub v_p: f64,
    pub v_xi: f64,
    pub solver_seed: u64,
    pub spread: f64,
    pub flag: bool,
}

/// Seed of the solve for record `j`.
pub fn record_seed(seed: u64, j: usize) -> u64 {
    rng::derive_seed(seed, j as u64)
}

/// Labels one state; solver failures yield a flagged record.
pub fn label_state(
    problem: &ScmpcProblem,
    x: &[f64],
    cfg: &SolverConfig,
    solver_seed: u64,
) -> DatasetRecord {
    match solve_scmpc(problem, x, cfg, solver_seed) {
        Ok(s) => DatasetRecord {
            x: x.to_vec(),
            u_mpc: s.first_input().to_vec(),
            v: s.v,
            v_p: s.v_p,
            v_xi: s.v_xi,
            solver_seed,
            spread: s.value_spread,
            flag: false,
        },
        Err(_) => DatasetRecord {
            x: x.to_vec(),
            u_mpc: vec![f64::NAN; problem.model.n_u()],
            v: f64::NAN,
            v_p: f64::NAN,
            v_xi: f64::NAN,
            solver_seed,
            spread: f64::NAN,
            flag: true,
        },
    }
}

/// One SCMPC solve per state (row-major `states`), record `j` seeded by
/// [`record_seed`]`(seed, j)`. Output order follows `states`.
pub fn generate_dataset<E: Executor>(
    problem: &ScmpcProblem,
    states: &[f64],
    cfg: &SolverConfig,
    seed: u64,
    exec: &E,
) -> Result<Vec<DatasetRecord>> {
    problem.validate()?;
    let n_x = problem.model.n_x();
    if states.len() % n_x != 0 {
        return Err(Error::DimensionMismatch {
            what: "dataset states",
            expected: n_x,
            got: states.len() % n_x,
        });
    }
    let n = states.len() / n_x;
    Ok(exec.map(n, |j| {
        label_state(
            problem,
            &states[j * n_x..(j + 1) * n_x],
            cfg,
            record_seed(seed, j),
        )
    }))
}

/// Unflagged records.
pub fn usable(records: &[DatasetRecord]) -> impl Iterator<Item = &DatasetRecord> {
    records.iter().filter(|r| !r.flag)
}

/// Flattened states of unflagged records.
pub fn states_of(records: &[DatasetRecord]) -> Vec<f64> {
    usable(records).flat_map(|r| r.x.iter().copied()).collect()
}

/// Flattened recorded inputs of unflagged records.
pub fn inputs_of(records: &[DatasetRecord]) -> Vec<f64> {
    usable(records)
        .flat_map(|r| r.u_mpc.iter().copied())
        .collect()
}

/// Value regression targets from unflagged records.
pub fn value_targets(records: &[DatasetRecord]) -> Result<ValueTargets> {
    let first = usable(records)
        .next()
        .ok_or(Error::EmptyInput("usable dataset records"))?;
    Ok(ValueTargets {
        n_x: first.x.len(),
        states: states_of(records),
        v_p: usable(records).map(|r| r.v_p).collect(),
        v_xi: usable(records).map(|r| r.v_xi).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Sequential;
    use crate::presets;

    #[test]
    fn grid_corners_row_major() {
        let plan = SamplingPlan::Grid2D {
            x1: Axis::new(0.0, 1.0, 2),
            x2: Axis::new(0.0, 1.0, 2),
        };
        assert_eq!(
            sample_states(&plan, 0).unwrap(),
            vec![0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0]
        );
    }

    #[test]
    fn unicycle_plan_size() {
        let plan = presets::unicycle_plan();
        assert_eq!(plan.len(), 3262);
        assert_eq!(sample_states(&plan, 0).unwrap().len(), 2 * 3262);
    }

    #[test]
    fn uniform_plan_is_reproducible() {
        let plan = presets::quad1d_plan(50, -1.0, 1.0);
        let a = sample_states(&plan, 11).unwrap();
        assert_eq!(a, sample_states(&plan, 11).unwrap());
        assert_ne!(a, sample_states(&plan, 12).unwrap());
        assert!(a.iter().all(|x| (-1.0..1.0).contains(x)));
    }

    #[test]
    fn invalid_plans_rejected() {
        assert!(SamplingPlan::Grid2D {
            x1: Axis::new(0.0, 1.0, 0),
            x2: Axis::new(0.0, 1.0, 2)
        }
        .validate()
        .is_err());
        assert!(SamplingPlan::UniformBox {
            lo: vec![1.0],
            hi: vec![0.0],
            n: 3
        }
        .validate()
        .is_err());
        assert!(SamplingPlan::Composite { parts: vec![] }
            .validate()
            .is_err());
    }

    #[test]
    fn scalar_labels() {
        let p = presets::quad1d_problem();
        let cfg = presets::quad1d_solver_config();
        let recs = generate_dataset(&p, &[0.4, 0.0], &cfg, 5, &Sequential).unwrap();
        assert!((recs[0].v - 0.16).abs() <= 1e-4);
        assert!((recs[0].u_mpc[0].abs() - 0.4).abs() <= 1e-2);
        assert!(recs[1].v.abs() <= 1e-12 && recs[1].u_mpc[0].abs() <= 1e-6);
        for r in &recs {
            assert!(!r.flag && (r.v - r.v_p - r.v_xi).abs() <= 1e-9);
        }
    }

    #[test]
    fn obstacle_interior_has_constraint_cost() {
        let p = presets::unicycle_problem();
        let recs =
            generate_dataset(&p, &[0.1, 0.05], &SolverConfig::default(), 2, &Sequential).unwrap();
        assert!(recs[0].v_xi > 0.0);
        assert!(p.model.contains_input(&recs[0].u_mpc));
    }

    #[test]
    fn seeds_are_isolated_per_record() {
        let p = presets::quad1d_problem();
        let cfg = presets::quad1d_solver_config();
        let a = generate_dataset(&p, &[0.3, 0.7, -0.5], &cfg, 9, &Sequential).unwrap();
        let b = generate_dataset(&p, &[0.9, 0.7, -0.5], &cfg, 9, &Sequential).unwrap();
        assert_eq!(a[1..], b[1..]);
    }
}
