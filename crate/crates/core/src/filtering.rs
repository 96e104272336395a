//! Kalman-Bucy filtering for the partially observed system.
//!
//! The error covariance solves the forward Riccati equation
//!
//! ```text
//! dSigma/dt = A Sigma + Sigma A' + C C' + D D' - K H K',
//! K = (Sigma E' + C F') H^-1,   H = F F',
//! ```
//!
//! and is independent of the control and disturbance, so it is solved once
//! per scenario and shared by every simulated path.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    condition_number, min_symmetric_eigenvalue, MatrixSignal, SystemModel, TimeGrid,
};
use crate::odeint::{integrate, IntegrateOptions, OdeProblem, ResidualReport};
use crate::simulate::BrownianIncrements;

/// Largest accepted condition number of `H = F F'`.
pub const MAX_H_CONDITION: f64 = 1e24;

/// Deterministic part of the filter: covariance, gain and the error-dynamics
/// matrix `Acal = A - K E`.
#[derive(Debug, Clone)]
pub struct FilterPlan {
    pub sigma: MatrixSignal,
    pub gain: MatrixSignal,
    pub h: MatrixSignal,
    pub acal: MatrixSignal,
    pub f_inv: MatrixSignal,
}

impl FilterPlan {
    /// `K F - C`: noise loading of the estimation error on `dW`.
    /// Equals `-Sigma E' F'^-1`.
    pub fn error_noise_loading(&self, model: &SystemModel, k: usize) -> DMatrix<f64> {
        self.gain.node(k) * model.f.node(k) - model.c.node(k)
    }

    /// `K F`: loading of the estimate on the normalized innovation.
    pub fn estimate_noise_loading(&self, model: &SystemModel, k: usize) -> DMatrix<f64> {
        self.gain.node(k) * model.f.node(k)
    }

    /// Smallest eigenvalue of `Sigma` over all nodes.
    pub fn min_sigma_eigenvalue(&self, grid: &TimeGrid) -> f64 {
        (0..grid.node_count())
            .map(|k| min_symmetric_eigenvalue(self.sigma.node(k)))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Gain `K = (Sigma E' + C F') H^-1` for a given covariance.
fn kalman_gain(
    sigma: &DMatrix<f64>,
    c: &DMatrix<f64>,
    e: &DMatrix<f64>,
    f: &DMatrix<f64>,
    h_inv: &DMatrix<f64>,
) -> DMatrix<f64> {
    (sigma * e.transpose() + c * f.transpose()) * h_inv
}

fn nan_like(rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_element(rows, cols, f64::NAN)
}

/// Solve the error-covariance Riccati equation from `Sigma(0) = Sigma0`.
pub fn solve_filter_covariance(model: &SystemModel, grid: &TimeGrid) -> Result<FilterPlan> {
    let n = model.dims().n;
    for k in 0..grid.node_count() {
        let f = model.f.node(k);
        let h = f * f.transpose();
        if condition_number(&h) > MAX_H_CONDITION {
            return Err(Error::Singular {
                what: "H = F F'",
                node: k,
            });
        }
        if model.f.is_constant() {
            break;
        }
    }

    let rhs = |t: f64, sigma: &DMatrix<f64>| -> DMatrix<f64> {
        let (a, c, d, e, f) = (
            model.a.at(t),
            model.c.at(t),
            model.d.at(t),
            model.e.at(t),
            model.f.at(t),
        );
        let h = &*f * f.transpose();
        let Some(h_inv) = h.clone().try_inverse() else {
            return nan_like(n, n);
        };
        let gain = kalman_gain(sigma, &c, &e, &f, &h_inv);
        &*a * sigma + sigma * a.transpose() + &*c * c.transpose() + &*d * d.transpose()
            - &gain * h * gain.transpose()
    };
    let problem = OdeProblem::forward(model.sigma0.clone(), rhs);
    let sigma = integrate(&problem, grid, &IntegrateOptions::symmetric())?;

    let mut gains = Vec::with_capacity(grid.node_count());
    let mut hs = Vec::with_capacity(grid.node_count());
    let mut acals = Vec::with_capacity(grid.node_count());
    let mut f_invs = Vec::with_capacity(grid.node_count());
    for k in 0..grid.node_count() {
        let f = model.f.node(k);
        let h = f * f.transpose();
        let h_inv = h.clone().try_inverse().ok_or(Error::Singular {
            what: "H = F F'",
            node: k,
        })?;
        let f_inv = f
            .clone()
            .try_inverse()
            .ok_or(Error::Singular { what: "F", node: k })?;
        let gain = kalman_gain(sigma.node(k), model.c.node(k), model.e.node(k), f, &h_inv);
        acals.push(model.a.node(k) - &gain * model.e.node(k));
        gains.push(gain);
        hs.push(h);
        f_invs.push(f_inv);
    }
    Ok(FilterPlan {
        sigma,
        gain: MatrixSignal::sampled(*grid, gains)?,
        h: MatrixSignal::sampled(*grid, hs)?,
        acal: MatrixSignal::sampled(*grid, acals)?,
        f_inv: MatrixSignal::sampled(*grid, f_invs)?,
    })
}

/// One Euler step of the filtering equation from node `k`.
///
/// Returns the next estimate and the innovation increment
/// `dI = dy - (E xhat + beta) h`.
#[allow(clippy::too_many_arguments)]
pub fn filter_step(
    model: &SystemModel,
    plan: &FilterPlan,
    grid: &TimeGrid,
    k: usize,
    xhat: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
    dy: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let h = grid.step();
    let predicted = model.e.node(k) * xhat + model.beta.node(k).column(0);
    let d_innov = dy - predicted * h;
    let drift = model.a.node(k) * xhat
        + model.b2.node(k) * u
        + model.b1.node(k) * v
        + model.b.node(k).column(0);
    let next = xhat + drift * h + plan.gain.node(k) * &d_innov;
    (next, d_innov)
}

/// Estimate path with the raw and normalized innovation processes.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrajectory {
    pub xhat: Vec<DVector<f64>>,
    pub innovation: Vec<DVector<f64>>,
    pub innovation_hat: Vec<DVector<f64>>,
}

/// Run the filter on recorded inputs and observation increments.
///
/// `u_path` and `v_path` hold one sample per node; `y_increments` one per
/// step.
pub fn run_filter(
    model: &SystemModel,
    plan: &FilterPlan,
    grid: &TimeGrid,
    u_path: &[DVector<f64>],
    v_path: &[DVector<f64>],
    y_increments: &[DVector<f64>],
) -> Result<FilterTrajectory> {
    let steps = grid.steps();
    for (name, len, want) in [
        ("u", u_path.len(), steps + 1),
        ("v", v_path.len(), steps + 1),
        ("y increments", y_increments.len(), steps),
    ] {
        if len != want {
            return Err(Error::PathLength {
                name,
                expected: want,
                found: len,
            });
        }
    }
    let r = model.dims().r;
    let mut xhat = Vec::with_capacity(steps + 1);
    let mut innovation = Vec::with_capacity(steps + 1);
    let mut innovation_hat = Vec::with_capacity(steps + 1);
    xhat.push(model.xhat0.clone());
    innovation.push(DVector::zeros(r));
    innovation_hat.push(DVector::zeros(r));
    for k in 0..steps {
        let (next, d_innov) = filter_step(
            model,
            plan,
            grid,
            k,
            &xhat[k],
            &u_path[k],
            &v_path[k],
            &y_increments[k],
        );
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node: k + 1,
                time: grid.time(k + 1),
                path: None,
            });
        }
        innovation_hat.push(&innovation_hat[k] + plan.f_inv.node(k) * &d_innov);
        innovation.push(&innovation[k] + d_innov);
        xhat.push(next);
    }
    Ok(FilterTrajectory {
        xhat,
        innovation,
        innovation_hat,
    })
}

/// Check that `x - xhat` follows the discretized error dynamics
///
/// ```text
/// dx~ = Acal x~ dt + (C - K F) dW + D dW~
/// ```
///
/// driven by the increments that generated the paths.
pub fn error_dynamics_check(
    model: &SystemModel,
    plan: &FilterPlan,
    grid: &TimeGrid,
    x_path: &[DVector<f64>],
    xhat_path: &[DVector<f64>],
    noise: &BrownianIncrements,
) -> ResidualReport {
    let h = grid.step();
    let mut report = ResidualReport::zero();
    let steps = grid
        .steps()
        .min(x_path.len().saturating_sub(1))
        .min(xhat_path.len().saturating_sub(1));
    for k in 0..steps {
        let err = &x_path[k] - &xhat_path[k];
        let err_next = &x_path[k + 1] - &xhat_path[k + 1];
        let c_minus_kf = model.c.node(k) - plan.gain.node(k) * model.f.node(k);
        let mut predicted = &err + plan.acal.node(k) * &err * h + c_minus_kf * &noise.dw[k];
        if model.dims().p > 0 {
            predicted += model.d.node(k) * &noise.dw_tilde[k];
        }
        report.record(k + 1, (err_next - predicted).amax());
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SystemModel;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn tanh_covariance() {
        // A = 0, C = 0, D = 1, E = 1, F = 1: Sigma' = 1 - Sigma^2.
        let model = SystemModel::builder(
            s(0.0),
            s(0.0),
            s(0.0),
            s(0.0),
            s(1.0),
            s(1.0),
            s(1.0),
            s(1.0),
        )
        .d(s(1.0))
        .build()
        .unwrap();
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let plan = solve_filter_covariance(&model, &grid).unwrap();
        assert!((plan.sigma.node(1000)[(0, 0)] - 1f64.tanh()).abs() < 1e-6);
        // K H = Sigma E' + C F'.
        for k in [0, 500, 1000] {
            let lhs = plan.gain.node(k) * plan.h.node(k);
            assert!((lhs[(0, 0)] - plan.sigma.node(k)[(0, 0)]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_inputs_keep_estimate_at_zero() {
        let model = SystemModel::builder(
            s(-1.0),
            s(1.0),
            s(1.0),
            s(0.0),
            s(1.0),
            s(1.0),
            s(1.0),
            s(1.0),
        )
        .build()
        .unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let plan = solve_filter_covariance(&model, &grid).unwrap();
        let zeros = vec![DVector::zeros(1); 51];
        let traj = run_filter(&model, &plan, &grid, &zeros, &zeros, &zeros[..50]).unwrap();
        assert!(traj.xhat.iter().all(|x| x[0] == 0.0));
        assert!(traj.innovation.iter().all(|x| x[0] == 0.0));
    }

    #[test]
    fn path_length_mismatch_is_rejected() {
        let model = SystemModel::builder(
            s(0.0),
            s(1.0),
            s(1.0),
            s(0.0),
            s(1.0),
            s(1.0),
            s(1.0),
            s(1.0),
        )
        .build()
        .unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let plan = solve_filter_covariance(&model, &grid).unwrap();
        let zeros = vec![DVector::zeros(1); 11];
        let err = run_filter(&model, &plan, &grid, &zeros[..5], &zeros, &zeros[..10]).unwrap_err();
        assert!(matches!(err, Error::PathLength { name: "u", .. }));
    }

    #[test]
    fn singular_f_rejected_at_plan_construction() {
        let model = SystemModel::builder(
            s(0.0),
            s(1.0),
            s(1.0),
            s(0.0),
            s(1.0),
            s(0.0),
            s(1.0),
            s(1.0),
        )
        .build()
        .unwrap();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        assert!(matches!(
            solve_filter_covariance(&model, &grid),
            Err(Error::Singular { .. })
        ));
    }
}
