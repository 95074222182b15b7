//! Discrete-time system models `x+ = f(x, u)` with analytic Jacobians.
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_3;
use core::fmt;

use crate::error::{check_len, Error, Result};

/// Writes `f(x, u)` into the output slice.
pub type StepFn = fn(x: &[f64], u: &[f64], out: &mut [f64]);
/// Writes the row-major state Jacobian `A` (`n_x * n_x`) and input Jacobian `B` (`n_x * n_u`).
pub type JacFn = fn(x: &[f64], u: &[f64], a: &mut [f64], b: &mut [f64]);

/// Unicycle translation per step.
pub const UNICYCLE_SPEED: f64 = 0.05;

#[derive(Clone)]
pub struct SystemModel {
    name: &'static str,
    n_x: usize,
    n_u: usize,
    input_lo: Vec<f64>,
    input_hi: Vec<f64>,
    step_fn: StepFn,
    jac_fn: JacFn,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("n_x", &self.n_x)
            .field("n_u", &self.n_u)
            .field("input_lo", &self.input_lo)
            .field("input_hi", &self.input_hi)
            .finish()
    }
}

impl PartialEq for SystemModel {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.n_x == other.n_x
            && self.n_u == other.n_u
            && self.input_lo == other.input_lo
            && self.input_hi == other.input_hi
    }
}

impl SystemModel {
    pub fn new(
        name: &'static str,
        n_x: usize,
        n_u: usize,
        input_lo: Vec<f64>,
        input_hi: Vec<f64>,
        step_fn: StepFn,
        jac_fn: JacFn,
    ) -> Result<Self> {
        check_len("input_lo", n_u, input_lo.len())?;
        check_len("input_hi", n_u, input_hi.len())?;
        if input_lo.iter().zip(&input_hi).any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::InvalidProblem(format!(
                "empty input box for model {name}"
            )));
        }
        Ok(Self {
            name,
            n_x,
            n_u,
            input_lo,
            input_hi,
            step_fn,
            jac_fn,
        })
    }

    /// `x+ = x + 0.05 (cos u, sin u)`, heading `u` in `[-pi/3, pi/3]`.
    pub fn unicycle() -> Self {
        Self::new(
            "unicycle",
            2,
            1,
            vec![-FRAC_PI_3],
            vec![FRAC_PI_3],
            unicycle_step,
            unicycle_jac,
        )
        .expect("static model data is valid")
    }

    /// Scalar map `x+ = x^2 - u^2`, input box `[-2, 2]`.
    pub fn quad1d() -> Self {
        Self::new(
            "quad1d",
            1,
            1,
            vec![-2.0],
            vec![2.0],
            quad1d_step,
            quad1d_jac,
        )
        .expect("static model data is valid")
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "unicycle" => Some(Self::unicycle()),
            "quad1d" => Some(Self::quad1d()),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn input_lo(&self) -> &[f64] {
        &self.input_lo
    }

    pub fn input_hi(&self) -> &[f64] {
        &self.input_hi
    }

    pub fn contains_input(&self, u: &[f64]) -> bool {
        u.iter()
            .zip(self.input_lo.iter().zip(&self.input_hi))
            .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    pub fn clamp_input(&self, u: &mut [f64]) {
        for (v, (lo, hi)) in u.iter_mut().zip(self.input_lo.iter().zip(&self.input_hi)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        self.check(x, u)?;
        let mut out = vec![0.0; self.n_x];
        (self.step_fn)(x, u, &mut out);
        Ok(out)
    }

    pub fn jacobians(&self, x: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(x, u)?;
        let mut a = vec![0.0; self.n_x * self.n_x];
        let mut b = vec![0.0; self.n_x * self.n_u];
        (self.jac_fn)(x, u, &mut a, &mut b);
        Ok((a, b))
    }

    /// Unchecked step for inner loops; slices must already have model dimensions.
    #[inline]
    pub fn step_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        debug_assert!(x.len() == self.n_x && u.len() == self.n_u && out.len() == self.n_x);
        (self.step_fn)(x, u, out);
    }

    #[inline]
    pub fn jacobians_into(&self, x: &[f64], u: &[f64], a: &mut [f64], b: &mut [f64]) {
        debug_assert!(a.len() == self.n_x * self.n_x && b.len() == self.n_x * self.n_u);
        (self.jac_fn)(x, u, a, b);
    }

    fn check(&self, x: &[f64], u: &[f64]) -> Result<()> {
        check_len("state", self.n_x, x.len())?;
        check_len("input", self.n_u, u.len())
    }
}

fn unicycle_step(x: &[f64], u: &[f64], out: &mut [f64]) {
    let (s, c) = libm::sincos(u[0]);
    out[0] = x[0] + UNICYCLE_SPEED * c;
    out[1] = x[1] + UNICYCLE_SPEED * s;
}

fn unicycle_jac(_x: &[f64], u: &[f64], a: &mut [f64], b: &mut [f64]) {
    let (s, c) = libm::sincos(u[0]);
    a.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    b[0] = -UNICYCLE_SPEED * s;
    b[1] = UNICYCLE_SPEED * c;
}

fn quad1d_step(x: &[f64], u: &[f64], out: &mut [f64]) {
    out[0] = x[0] * x[0] - u[0] * u[0];
}

fn quad1d_jac(x: &[f64], u: &[f64], a: &mut [f64], b: &mut [f64]) {
    a[0] = 2.0 * x[0];
    b[0] = -2.0 * u[0];
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Central-difference Jacobians of `step`, independent of the analytic `jac_fn`.
    fn fd_jacobians(m: &SystemModel, x: &[f64], u: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
        let (nx, nu) = (m.n_x(), m.n_u());
        let mut a = vec![0.0; nx * nx];
        let mut b = vec![0.0; nx * nu];
        for j in 0..nx {
            let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
            xp[j] += h;
            xm[j] -= h;
            let (fp, fm) = (m.step(&xp, u).unwrap(), m.step(&xm, u).unwrap());
            for i in 0..nx {
                a[i * nx + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        for j in 0..nu {
            let (mut up, mut um) = (u.to_vec(), u.to_vec());
            up[j] += h;
            um[j] -= h;
            let (fp, fm) = (m.step(x, &up).unwrap(), m.step(x, &um).unwrap());
            for i in 0..nx {
                b[i * nu + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        (a, b)
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(p, q)| (p - q).abs() / (1.0 + q.abs()))
            .fold(0.0, f64::max)
    }

    #[test]
    fn step_examples() {
        assert_eq!(
            SystemModel::unicycle().step(&[0.0, 0.0], &[0.0]).unwrap(),
            vec![0.05, 0.0]
        );
        assert_eq!(
            SystemModel::quad1d().step(&[0.6], &[0.6]).unwrap(),
            vec![0.0]
        );
        assert_eq!(
            SystemModel::quad1d().step(&[0.0], &[0.0]).unwrap(),
            vec![0.0]
        );
    }

    #[test]
    fn step_rejects_bad_dimensions() {
        let err = SystemModel::unicycle().step(&[0.0], &[0.0]).unwrap_err();
        assert_eq!(
            err,
            Error::DimensionMismatch {
                what: "state",
                expected: 2,
                got: 1
            }
        );
        assert!(SystemModel::quad1d()
            .jacobians(&[0.0], &[0.0, 1.0])
            .is_err());
    }

    #[test]
    fn jacobian_examples() {
        let (a, b) = SystemModel::unicycle()
            .jacobians(&[0.3, -0.2], &[0.0])
            .unwrap();
        assert_eq!(a, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(b, vec![0.0, 0.05]);
        let (a, b) = SystemModel::quad1d().jacobians(&[0.5], &[0.3]).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-15 && (b[0] + 0.6).abs() < 1e-15);
        assert_eq!(
            SystemModel::quad1d().jacobians(&[0.0], &[0.0]).unwrap(),
            (vec![0.0], vec![0.0])
        );
    }

    #[test]
    fn jacobian_examples_match_finite_differences() {
        let m = SystemModel::unicycle();
        let (a, b) = fd_jacobians(&m, &[0.0, 0.0], &[0.0], 1e-6);
        assert!(rel_err(&a, &[1.0, 0.0, 0.0, 1.0]) < 1e-8);
        assert!(rel_err(&b, &[0.0, 0.05]) < 1e-8);
        let (a, b) = fd_jacobians(&SystemModel::quad1d(), &[0.5], &[0.3], 1e-6);
        assert!((a[0] - 1.0).abs() < 1e-8 && (b[0] + 0.6).abs() < 1e-8);
    }

    #[test]
    fn invalid_box_is_rejected() {
        let r = SystemModel::new("bad", 1, 1, vec![1.0], vec![0.0], quad1d_step, quad1d_jac);
        assert!(matches!(r, Err(Error::InvalidProblem(_))));
    }

    proptest! {
        #[test]
        fn quad1d_jacobian_matches_fd(x in -1.5f64..1.5, u in -1.5f64..1.5) {
            let m = SystemModel::quad1d();
            let (a, b) = m.jacobians(&[x], &[u]).unwrap();
            let (fa, fb) = fd_jacobians(&m, &[x], &[u], 1e-6);
            prop_assert!(rel_err(&a, &fa) <= 1e-5);
            prop_assert!(rel_err(&b, &fb) <= 1e-5);
        }

        #[test]
        fn unicycle_jacobian_matches_fd(x1 in -2.0f64..2.0, x2 in -1.5f64..1.5, u in -FRAC_PI_3..FRAC_PI_3) {
            let m = SystemModel::unicycle();
            let (a, b) = m.jacobians(&[x1, x2], &[u]).unwrap();
            let (fa, fb) = fd_jacobians(&m, &[x1, x2], &[u], 1e-6);
            prop_assert!(rel_err(&a, &fa) <= 1e-5);
            prop_assert!(rel_err(&b, &fb) <= 1e-5);
        }

        #[test]
        fn unicycle_moves_at_constant_speed(x1 in -2.0f64..2.0, x2 in -1.5f64..1.5, u in -FRAC_PI_3..FRAC_PI_3) {
            let xp = SystemModel::unicycle().step(&[x1, x2], &[u]).unwrap();
            let d = libm::hypot(xp[0] - x1, xp[1] - x2);
            prop_assert!((d - 0.05).abs() < 1e-12);
        }
    }
}
