//! Problem and training setups of the two reference experiments: the scalar set-valued
//! map `x+ = x^2 - u^2` and the unicycle obstacle-avoidance task.
use alloc::vec;
use alloc::vec::Vec;

use crate::data::{Axis, SamplingPlan};
use crate::dynamics::SystemModel;
use crate::linalg::Matrix;
use crate::nn::{HyperGrid, TrainConfig};
use crate::scmpc::{InitRule, ScmpcProblem, SolverConfig, StateConstraints};

pub const UNICYCLE_HORIZON: usize = 20;
pub const OBSTACLE_RADIUS: f64 = 0.5;

/// `min sum_{i=0}^{N} x_i^2` subject to `x+ = x^2 - u^2`; one step by default.
pub fn quad1d_problem() -> ScmpcProblem {
    quad1d_problem_with_horizon(1)
}

pub fn quad1d_problem_with_horizon(horizon: usize) -> ScmpcProblem {
    ScmpcProblem {
        model: SystemModel::quad1d(),
        horizon,
        q: Matrix::identity(1),
        r: Matrix::zeros(1, 1),
        q_n: Matrix::identity(1),
        rho: 1.0,
        eta: 1.0,
        constraints: StateConstraints::None,
        terminal: None,
    }
}

/// Unicycle around a disc of radius 0.5: `Q = diag(0, 1)`, `R = 5`, `Q_N = 100 Q`,
/// 1-norm penalty with `rho = 15000`, `eta = 0.01`, no terminal set.
pub fn unicycle_problem() -> ScmpcProblem {
    unicycle_problem_with_horizon(UNICYCLE_HORIZON)
}

pub fn unicycle_problem_with_horizon(horizon: usize) -> ScmpcProblem {
    let q = Matrix::diag(&[0.0, 1.0]);
    ScmpcProblem {
        model: SystemModel::unicycle(),
        horizon,
        q_n: q.scaled(100.0),
        q,
        r: Matrix::diag(&[5.0]),
        rho: 15000.0,
        eta: 0.01,
        constraints: StateConstraints::ObstacleCircle {
            radius: OBSTACLE_RADIUS,
        },
        terminal: None,
    }
}

pub fn problem_by_name(name: &str) -> Option<ScmpcProblem> {
    match name {
        "quad1d" => Some(quad1d_problem()),
        "unicycle" => Some(unicycle_problem()),
        _ => None,
    }
}

/// Restarts initialized at `+x` or `-x`.
pub fn quad1d_solver_config() -> SolverConfig {
    SolverConfig {
        init: InitRule::SignedState,
        ..SolverConfig::default()
    }
}

pub fn unicycle_solver_config() -> SolverConfig {
    SolverConfig::default()
}

pub fn solver_config_by_name(name: &str) -> SolverConfig {
    match name {
        "quad1d" => quad1d_solver_config(),
        _ => SolverConfig::default(),
    }
}

/// Sixteen closed-loop starting points in front of the obstacle.
pub fn fig2_starts() -> Vec<[f64; 2]> {
    let mut v = Vec::with_capacity(16);
    for x1 in [-1.0, -0.75] {
        for x2 in [-0.7, -0.5, -0.3, -0.1, 0.1, 0.3, 0.5, 0.7] {
            v.push([x1, x2]);
        }
    }
    v
}

pub fn unicycle_network_arch() -> Vec<usize> {
    vec![2, 128, 128, 128, 1]
}

/// One hidden layer of two ReLU units.
pub fn quad1d_policy_arch() -> Vec<usize> {
    vec![1, 2, 1]
}

/// Coarse 41 x 41 grid over `[-2, 2] x [-1.5, 1.5]` plus a 51 x 31 refinement over
/// `[-1.5, 1.5] x [-0.5, 0.5]`.
pub fn unicycle_plan() -> SamplingPlan {
    SamplingPlan::Composite {
        parts: vec![
            SamplingPlan::Grid2D {
                x1: Axis::new(-2.0, 2.0, 41),
                x2: Axis::new(-1.5, 1.5, 41),
            },
            SamplingPlan::Grid2D {
                x1: Axis::new(-1.5, 1.5, 51),
                x2: Axis::new(-0.5, 0.5, 31),
            },
        ],
    }
}

/// `n` uniform states on `[a, b]`.
pub fn quad1d_plan(n: usize, a: f64, b: f64) -> SamplingPlan {
    SamplingPlan::UniformBox {
        lo: vec![a],
        hi: vec![b],
        n,
    }
}

/// Scalar benchmark training: minibatch 64, 2000 epochs.
pub fn quad1d_train_config() -> TrainConfig {
    TrainConfig {
        lr: 1e-2,
        lr_decay: 0.999,
        ..TrainConfig::default()
    }
}

/// Single-cell default for the unicycle networks; [`unicycle_grid_train_config`] runs the
/// full learning-rate / decay search.
pub fn unicycle_train_config() -> TrainConfig {
    TrainConfig::default()
}

pub fn unicycle_grid_train_config() -> TrainConfig {
    TrainConfig {
        grid: Some(HyperGrid::extended()),
        ..TrainConfig::default()
    }
}
