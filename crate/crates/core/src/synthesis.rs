//! Mixed H2/H-infinity synthesis: coupled Riccati equations, affine
//! corrections, feedback gains, estimation-error Lyapunov equations and the
//! bounded real test.
//!
//! Sign conventions: `P1` belongs to the disturbance player (cost
//! `gamma^2 |v|^2 - |z|^2`) and is negative semidefinite on well-posed
//! problems; `P2` belongs to the controller (cost `|z|^2`) and is positive
//! semidefinite. All backward equations have zero terminal data.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::filtering::FilterPlan;
use crate::model::{MatrixSignal, SystemModel, TimeGrid};
use crate::odeint::{integrate, IntegrateOptions, OdeProblem, ResidualReport};
use crate::stats::trapezoid;

#[derive(Debug, Clone)]
pub struct RiccatiPair {
    pub p1: MatrixSignal,
    pub p2: MatrixSignal,
}

#[derive(Debug, Clone)]
pub struct AffinePair {
    pub eta1: MatrixSignal,
    pub eta2: MatrixSignal,
}

/// Which form of the disturbance player's affine equation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AffineVariant {
    /// Keeps the `U' U0` cross terms of `|N1 u|^2`, so the value formula
    /// matches the simulated cost when `U0 != 0`.
    #[default]
    Consistent,
    /// Drops the `U' U0` forcing and the `|U0|^2` value term.
    Reduced,
}

/// Regulated output used by the bounded real test and the energy gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GainVariant {
    /// `z = [Q x; N1 u]` with the feedback control in the loop.
    #[default]
    FullOutput,
    /// `z = Q x` only.
    StateOutput,
}

/// Feedback gains `u = U xhat + U0`, `v = V xhat + V0`.
#[derive(Debug, Clone)]
pub struct GainSchedule {
    pub u: MatrixSignal,
    pub u0: MatrixSignal,
    pub v: MatrixSignal,
    pub v0: MatrixSignal,
}

impl GainSchedule {
    /// Zero gains of the right shapes.
    pub fn zeros(model: &SystemModel) -> Self {
        let d = model.dims();
        Self {
            u: MatrixSignal::zeros(d.s, d.n),
            u0: MatrixSignal::zeros(d.s, 1),
            v: MatrixSignal::zeros(d.m, d.n),
            v0: MatrixSignal::zeros(d.m, 1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LyapunovPair {
    pub pi1: MatrixSignal,
    pub pi2: MatrixSignal,
    pub phi1: MatrixSignal,
    pub phi2: MatrixSignal,
    /// Largest node norm of the integrated `phi` equations before they were
    /// replaced by exact zeros.
    pub phi_max_norm: f64,
}

fn vstack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    m.rows_mut(0, top.nrows()).copy_from(top);
    m.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    m
}

fn split(stacked: &DMatrix<f64>, n: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        stacked.rows(0, n).into_owned(),
        stacked.rows(n, n).into_owned(),
    )
}

fn split_signal(
    sol: &MatrixSignal,
    grid: &TimeGrid,
    n: usize,
) -> Result<(MatrixSignal, MatrixSignal)> {
    Ok((
        MatrixSignal::from_fn(*grid, |k| sol.node(k).rows(0, n).into_owned())?,
        MatrixSignal::from_fn(*grid, |k| sol.node(k).rows(n, n).into_owned())?,
    ))
}

fn gamma_factor(model: &SystemModel) -> f64 {
    model.gamma.powi(-2)
}

/// Right-hand sides `(dP1/dt, dP2/dt)` of the coupled equations at `t`.
pub fn coupled_riccati_rhs(
    model: &SystemModel,
    t: f64,
    p1: &DMatrix<f64>,
    p2: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (a, b1, b2, q) = (model.a.at(t), model.b1.at(t), model.b2.at(t), model.q.at(t));
    let g = gamma_factor(model);
    let u = -(b2.transpose() * p2);
    let v = -(b1.transpose() * p1) * g;
    let qq = q.transpose() * &*q;
    let a_u = &*a + &*b2 * &u;
    let a_v = &*a + &*b1 * &v;
    let dp1 = -(p1 * &a_u) - a_u.transpose() * p1
        + &qq
        + u.transpose() * &u
        + p1 * &*b1 * b1.transpose() * p1 * g;
    let dp2 = -(p2 * &a_v) - a_v.transpose() * p2 - &qq + p2 * &*b2 * b2.transpose() * p2;
    (dp1, dp2)
}

/// Solve the coupled Riccati equations as one stacked `2n x n` backward ODE.
pub fn solve_coupled_riccati(model: &SystemModel, grid: &TimeGrid) -> Result<RiccatiPair> {
    let n = model.dims().n;
    let rhs = |t: f64, y: &DMatrix<f64>| {
        let (p1, p2) = split(y, n);
        let (dp1, dp2) = coupled_riccati_rhs(model, t, &p1, &p2);
        vstack(&dp1, &dp2)
    };
    let problem = OdeProblem::backward(DMatrix::zeros(2 * n, n), rhs);
    let sol = integrate(&problem, grid, &IntegrateOptions::symmetric())?;
    let (p1, p2) = split_signal(&sol, grid, n)?;
    Ok(RiccatiPair { p1, p2 })
}

/// Right-hand side of the stacked affine equations `[eta1; eta2]` at `t`.
#[allow(clippy::too_many_arguments)]
pub fn coupled_affine_rhs(
    model: &SystemModel,
    t: f64,
    p1: &DMatrix<f64>,
    p2: &DMatrix<f64>,
    eta1: &DMatrix<f64>,
    eta2: &DMatrix<f64>,
    variant: AffineVariant,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let (a, b1, b2, b) = (model.a.at(t), model.b1.at(t), model.b2.at(t), model.b.at(t));
    let g = gamma_factor(model);
    let u = -(b2.transpose() * p2);
    let v = -(b1.transpose() * p1) * g;
    let u0 = -(b2.transpose() * eta2);
    let v0 = -(b1.transpose() * eta1) * g;
    let m1 = &*a + &*b2 * &u - &*b1 * b1.transpose() * p1 * g;
    let m2 = &*a + &*b1 * &v - &*b2 * b2.transpose() * p2;
    let mut d1 = -(m1.transpose() * eta1) - p1 * (&*b2 * &u0 + &*b);
    if variant == AffineVariant::Consistent {
        d1 += u.transpose() * &u0;
    }
    let d2 = -(m2.transpose() * eta2) - p2 * (&*b1 * &v0 + &*b);
    (d1, d2)
}

/// Value of `sig` at time `t`, using cubic Hermite midpoints between nodes.
struct HermiteSignal<'a> {
    grid: TimeGrid,
    nodes: &'a MatrixSignal,
    mids: Vec<DMatrix<f64>>,
}

impl<'a> HermiteSignal<'a> {
    fn new(
        grid: &TimeGrid,
        nodes: &'a MatrixSignal,
        derivative: impl Fn(usize) -> DMatrix<f64>,
    ) -> Self {
        let h = grid.step();
        let derivs: Vec<_> = (0..grid.node_count()).map(derivative).collect();
        let mids = (0..grid.steps())
            .map(|k| {
                (nodes.node(k) + nodes.node(k + 1)) * 0.5
                    + (&derivs[k] - &derivs[k + 1]) * (h / 8.0)
            })
            .collect();
        Self {
            grid: *grid,
            nodes,
            mids,
        }
    }

    fn at(&self, t: f64) -> &DMatrix<f64> {
        let (k, frac) = self.grid.locate(t);
        if frac == 0.0 {
            self.nodes.node(k)
        } else {
            debug_assert!(
                (frac - 0.5).abs() < 1e-6,
                "only nodes and midpoints are stored"
            );
            &self.mids[k]
        }
    }
}

/// Solve the affine correction equations backward from zero.
pub fn solve_coupled_affine(
    model: &SystemModel,
    pair: &RiccatiPair,
    grid: &TimeGrid,
    variant: AffineVariant,
) -> Result<AffinePair> {
    let n = model.dims().n;
    let (p1s, p2s) = hermite_pair(model, pair, grid);
    let rhs = |t: f64, y: &DMatrix<f64>| {
        let (e1, e2) = split(y, n);
        let (d1, d2) = coupled_affine_rhs(model, t, p1s.at(t), p2s.at(t), &e1, &e2, variant);
        vstack(&d1, &d2)
    };
    let problem = OdeProblem::backward(DMatrix::zeros(2 * n, 1), rhs);
    let sol = integrate(&problem, grid, &IntegrateOptions::default())?;
    let (eta1, eta2) = split_signal(&sol, grid, n)?;
    Ok(AffinePair { eta1, eta2 })
}

fn hermite_pair<'a>(
    model: &SystemModel,
    pair: &'a RiccatiPair,
    grid: &TimeGrid,
) -> (HermiteSignal<'a>, HermiteSignal<'a>) {
    let derivs: Vec<_> = (0..grid.node_count())
        .map(|k| coupled_riccati_rhs(model, grid.time(k), pair.p1.node(k), pair.p2.node(k)))
        .collect();
    (
        HermiteSignal::new(grid, &pair.p1, |k| derivs[k].0.clone()),
        HermiteSignal::new(grid, &pair.p2, |k| derivs[k].1.clone()),
    )
}

/// Nodewise `U = -B2' P2`, `V = -gamma^-2 B1' P1`, `U0 = -B2' eta2`,
/// `V0 = -gamma^-2 B1' eta1`.
pub fn gains_from(
    model: &SystemModel,
    pair: &RiccatiPair,
    affine: &AffinePair,
    grid: &TimeGrid,
) -> Result<GainSchedule> {
    let g = gamma_factor(model);
    let b1t = |k: usize| model.b1.node(k).transpose();
    let b2t = |k: usize| model.b2.node(k).transpose();
    Ok(GainSchedule {
        u: MatrixSignal::from_fn(*grid, |k| -(b2t(k) * pair.p2.node(k)))?,
        u0: MatrixSignal::from_fn(*grid, |k| -(b2t(k) * affine.eta2.node(k)))?,
        v: MatrixSignal::from_fn(*grid, |k| -(b1t(k) * pair.p1.node(k)) * g)?,
        v0: MatrixSignal::from_fn(*grid, |k| -(b1t(k) * affine.eta1.node(k)) * g)?,
    })
}

/// Largest deviation of `gains` from their defining formulas.
pub fn gain_definition_residual(
    model: &SystemModel,
    pair: &RiccatiPair,
    affine: &AffinePair,
    gains: &GainSchedule,
    grid: &TimeGrid,
) -> f64 {
    let g = gamma_factor(model);
    (0..grid.node_count())
        .map(|k| {
            let b1t = model.b1.node(k).transpose();
            let b2t = model.b2.node(k).transpose();
            [
                (gains.u.node(k) + &b2t * pair.p2.node(k)).amax(),
                (gains.u0.node(k) + &b2t * affine.eta2.node(k)).amax(),
                (gains.v.node(k) + &b1t * pair.p1.node(k) * g).amax(),
                (gains.v0.node(k) + &b1t * affine.eta1.node(k) * g).amax(),
            ]
            .into_iter()
            .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// Estimation-error Lyapunov equations
/// `dPi1/dt = -Pi1 Acal - Acal' Pi1 + Q'Q`, `Pi2` with `-Q'Q`, and the
/// homogeneous `dphi/dt = -Acal' phi`.
pub fn solve_lyapunov(
    model: &SystemModel,
    plan: &FilterPlan,
    grid: &TimeGrid,
) -> Result<LyapunovPair> {
    let n = model.dims().n;
    let rhs = |t: f64, y: &DMatrix<f64>| {
        let (pi1, pi2) = split(y, n);
        let (d1, d2) = lyapunov_rhs(model, plan, t, &pi1, &pi2);
        vstack(&d1, &d2)
    };
    let sol = integrate(
        &OdeProblem::backward(DMatrix::zeros(2 * n, n), rhs),
        grid,
        &IntegrateOptions::symmetric(),
    )?;
    let (pi1, pi2) = split_signal(&sol, grid, n)?;

    let phi_rhs = |t: f64, phi: &DMatrix<f64>| -(plan.acal.at(t).transpose() * phi);
    let phi = integrate(
        &OdeProblem::backward(DMatrix::zeros(n, 2), phi_rhs),
        grid,
        &IntegrateOptions::default(),
    )?;
    Ok(LyapunovPair {
        pi1,
        pi2,
        phi1: MatrixSignal::zeros(n, 1),
        phi2: MatrixSignal::zeros(n, 1),
        phi_max_norm: phi.max_norm(),
    })
}

fn lyapunov_rhs(
    model: &SystemModel,
    plan: &FilterPlan,
    t: f64,
    pi1: &DMatrix<f64>,
    pi2: &DMatrix<f64>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let acal = plan.acal.at(t);
    let q = model.q.at(t);
    let qq = q.transpose() * &*q;
    let d1 = -(pi1 * &*acal) - acal.transpose() * pi1 + &qq;
    let d2 = -(pi2 * &*acal) - acal.transpose() * pi2 - &qq;
    (d1, d2)
}

/// Outcome of the bounded real test.
#[derive(Debug, Clone)]
pub enum BoundedReal {
    Solvable { p: MatrixSignal, eta: MatrixSignal },
    NotSolvable { node: usize, time: f64 },
}

impl BoundedReal {
    pub fn is_solvable(&self) -> bool {
        matches!(self, BoundedReal::Solvable { .. })
    }
}

/// Backward-integrate the bounded real Riccati equation for the loop
/// closed with `u = U xhat + U0`:
///
/// ```text
/// dP/dt = -P (A + B2 U) - (A + B2 U)' P + Q'Q [+ U'U] + gamma^-2 P B1 B1' P
/// ```
///
/// The bracketed term is present for [`GainVariant::FullOutput`]. Finite
/// escape or a non-finite value means `||L|| >= gamma`.
pub fn bounded_real_check(
    model: &SystemModel,
    u: &MatrixSignal,
    u0: &MatrixSignal,
    grid: &TimeGrid,
    variant: GainVariant,
) -> Result<BoundedReal> {
    let g = gamma_factor(model);
    let with_u = variant == GainVariant::FullOutput;
    let p_rhs = |t: f64, p: &DMatrix<f64>| {
        let (a, b1, b2, q, uu) = (
            model.a.at(t),
            model.b1.at(t),
            model.b2.at(t),
            model.q.at(t),
            u.at(t),
        );
        let a_u = &*a + &*b2 * &*uu;
        let mut d = -(p * &a_u) - a_u.transpose() * p
            + q.transpose() * &*q
            + p * &*b1 * b1.transpose() * p * g;
        if with_u {
            d += uu.transpose() * &*uu;
        }
        d
    };
    let n = model.dims().n;
    let p = match integrate(
        &OdeProblem::backward(DMatrix::zeros(n, n), p_rhs),
        grid,
        &IntegrateOptions::symmetric(),
    ) {
        Ok(p) => p,
        Err(crate::Error::FiniteEscape { node, time, .. })
        | Err(crate::Error::NonFinite { node, time, .. }) => {
            return Ok(BoundedReal::NotSolvable { node, time })
        }
        Err(e) => return Err(e),
    };
    let eta_rhs = |t: f64, eta: &DMatrix<f64>| {
        let (a, b1, b2, b, uu, uu0, pp) = (
            model.a.at(t),
            model.b1.at(t),
            model.b2.at(t),
            model.b.at(t),
            u.at(t),
            u0.at(t),
            p.at(t),
        );
        let m = &*a + &*b2 * &*uu - &*b1 * b1.transpose() * &*pp * g;
        let mut d = -(m.transpose() * eta) - &*pp * (&*b2 * &*uu0 + &*b);
        if with_u {
            d += uu.transpose() * &*uu0;
        }
        d
    };
    let eta = integrate(
        &OdeProblem::backward(DMatrix::zeros(n, 1), eta_rhs),
        grid,
        &IntegrateOptions::default(),
    )?;
    Ok(BoundedReal::Solvable { p, eta })
}

/// `tr(M' P M)`.
fn weighted_trace(m: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    (m.transpose() * p * m).trace()
}

/// Noise contributions shared by both value formulas at node `k`.
fn noise_terms(
    model: &SystemModel,
    plan: &FilterPlan,
    k: usize,
    p: &DMatrix<f64>,
    pi: &DMatrix<f64>,
) -> f64 {
    let kf = plan.estimate_noise_loading(model, k);
    let err = plan.error_noise_loading(model, k);
    weighted_trace(&kf, p) + weighted_trace(&err, pi) + weighted_trace(model.d.node(k), pi)
}

/// Optimal value of the disturbance player's cost `gamma^2 |v|^2 - |z|^2`.
///
/// `u0` is the affine control term (`None` for the uncontrolled problem);
/// the `-|U0|^2` term is included for [`AffineVariant::Consistent`].
#[allow(clippy::too_many_arguments)]
pub fn optimal_value_j1(
    model: &SystemModel,
    plan: &FilterPlan,
    p1: &MatrixSignal,
    eta1: &MatrixSignal,
    pi1: &MatrixSignal,
    u0: Option<&MatrixSignal>,
    variant: AffineVariant,
    grid: &TimeGrid,
) -> f64 {
    let g = gamma_factor(model);
    let x0 = &model.xhat0;
    let initial = (x0.transpose() * p1.node(0) * x0)[(0, 0)]
        + 2.0 * eta1.node_vector(0).dot(x0)
        + (pi1.node(0) * &model.sigma0).trace();
    let integral = trapezoid(grid, |k| {
        let eta = eta1.node(k);
        let mut sigma = model.b.node(k).clone();
        let mut u0_cost = 0.0;
        if let Some(u0) = u0 {
            sigma += model.b2.node(k) * u0.node(k);
            if variant == AffineVariant::Consistent {
                u0_cost = u0.node(k).norm_squared();
            }
        }
        2.0 * eta.dot(&sigma) - g * (model.b1.node(k).transpose() * eta).norm_squared() - u0_cost
            + noise_terms(model, plan, k, p1.node(k), pi1.node(k))
    });
    initial + integral
}

/// Optimal value of the controller's cost `|z|^2`.
#[allow(clippy::too_many_arguments)]
pub fn optimal_value_j2(
    model: &SystemModel,
    plan: &FilterPlan,
    p2: &MatrixSignal,
    eta2: &MatrixSignal,
    pi2: &MatrixSignal,
    v0: Option<&MatrixSignal>,
    grid: &TimeGrid,
) -> f64 {
    let x0 = &model.xhat0;
    let initial = (x0.transpose() * p2.node(0) * x0)[(0, 0)]
        + 2.0 * eta2.node_vector(0).dot(x0)
        + (pi2.node(0) * &model.sigma0).trace();
    let integral = trapezoid(grid, |k| {
        let eta = eta2.node(k);
        let mut sigma = model.b.node(k).clone();
        if let Some(v0) = v0 {
            sigma += model.b1.node(k) * v0.node(k);
        }
        2.0 * eta.dot(&sigma) - (model.b2.node(k).transpose() * eta).norm_squared()
            + noise_terms(model, plan, k, p2.node(k), pi2.node(k))
    });
    initial + integral
}

/// Centered-difference derivative at node `k`: five-point stencil where it
/// fits, three-point next to the ends.
fn centered_derivative(sig: &MatrixSignal, grid: &TimeGrid, k: usize) -> DMatrix<f64> {
    let h = grid.step();
    if k >= 2 && k + 2 <= grid.steps() {
        (sig.node(k - 2) - sig.node(k + 2) + (sig.node(k + 1) - sig.node(k - 1)) * 8.0) / (12.0 * h)
    } else {
        (sig.node(k + 1) - sig.node(k - 1)) / (2.0 * h)
    }
}

fn stacked_residual(
    grid: &TimeGrid,
    first: &MatrixSignal,
    second: &MatrixSignal,
    rhs: impl Fn(usize) -> (DMatrix<f64>, DMatrix<f64>),
) -> ResidualReport {
    let mut report = ResidualReport::zero();
    for k in 1..grid.steps() {
        let (d1, d2) = rhs(k);
        let c1 = centered_derivative(first, grid, k);
        let c2 = centered_derivative(second, grid, k);
        report.record(k, (c1 - d1).amax().max((c2 - d2).amax()));
    }
    report
}

/// Centered-difference residual of the coupled Riccati equations.
pub fn riccati_residual(
    model: &SystemModel,
    pair: &RiccatiPair,
    grid: &TimeGrid,
) -> ResidualReport {
    stacked_residual(grid, &pair.p1, &pair.p2, |k| {
        coupled_riccati_rhs(model, grid.time(k), pair.p1.node(k), pair.p2.node(k))
    })
}

/// Centered-difference residual of the affine equations.
pub fn affine_residual(
    model: &SystemModel,
    pair: &RiccatiPair,
    affine: &AffinePair,
    grid: &TimeGrid,
    variant: AffineVariant,
) -> ResidualReport {
    stacked_residual(grid, &affine.eta1, &affine.eta2, |k| {
        coupled_affine_rhs(
            model,
            grid.time(k),
            pair.p1.node(k),
            pair.p2.node(k),
            affine.eta1.node(k),
            affine.eta2.node(k),
            variant,
        )
    })
}

/// Centered-difference residual of the Lyapunov equations.
pub fn lyapunov_residual(
    model: &SystemModel,
    plan: &FilterPlan,
    lyap: &LyapunovPair,
    grid: &TimeGrid,
) -> ResidualReport {
    stacked_residual(grid, &lyap.pi1, &lyap.pi2, |k| {
        lyapunov_rhs(
            model,
            plan,
            grid.time(k),
            lyap.pi1.node(k),
            lyap.pi2.node(k),
        )
    })
}

/// Everything the closed loop and the value formulas need.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub riccati: RiccatiPair,
    pub affine: AffinePair,
    pub gains: GainSchedule,
    pub lyapunov: LyapunovPair,
    pub variant: AffineVariant,
}

impl Synthesis {
    pub fn value_j1(&self, model: &SystemModel, plan: &FilterPlan, grid: &TimeGrid) -> f64 {
        optimal_value_j1(
            model,
            plan,
            &self.riccati.p1,
            &self.affine.eta1,
            &self.lyapunov.pi1,
            Some(&self.gains.u0),
            self.variant,
            grid,
        )
    }

    pub fn value_j2(&self, model: &SystemModel, plan: &FilterPlan, grid: &TimeGrid) -> f64 {
        optimal_value_j2(
            model,
            plan,
            &self.riccati.p2,
            &self.affine.eta2,
            &self.lyapunov.pi2,
            Some(&self.gains.v0),
            grid,
        )
    }
}

/// Full synthesis with the consistent affine equations.
pub fn synthesize(model: &SystemModel, plan: &FilterPlan, grid: &TimeGrid) -> Result<Synthesis> {
    synthesize_with(model, plan, grid, AffineVariant::Consistent)
}

pub fn synthesize_with(
    model: &SystemModel,
    plan: &FilterPlan,
    grid: &TimeGrid,
    variant: AffineVariant,
) -> Result<Synthesis> {
    let riccati = solve_coupled_riccati(model, grid)?;
    let affine = solve_coupled_affine(model, &riccati, grid, variant)?;
    let gains = gains_from(model, &riccati, &affine, grid)?;
    let lyapunov = solve_lyapunov(model, plan, grid)?;
    Ok(Synthesis {
        riccati,
        affine,
        gains,
        lyapunov,
        variant,
    })
}
