//! Euler-Maruyama simulation of the closed loop: state, observation and
//! filter advance together, and the filter only ever sees `y`, `u` and `v`.
//!
//! Random streams. Path `i` of an ensemble with base seed `s` uses
//! `ChaCha8Rng::seed_from_u64(s + i)`. Stream 0 of that generator supplies
//! the Brownian increments (per step: `dW` then `dW~`), stream 1 the initial
//! state draw when `Sigma0 != 0`, and stream 2 random perturbations.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filtering::{filter_step, FilterPlan};
use crate::model::{SystemModel, TimeGrid};
use crate::stats::{estimate, trapezoid, Estimate};
use crate::synthesis::GainSchedule;

pub const NOISE_STREAM: u64 = 0;
pub const INITIAL_STATE_STREAM: u64 = 1;
pub const PERTURBATION_STREAM: u64 = 2;

/// Generator for one random stream of one path.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Brownian increments over each step. `dw_tilde` is empty when `p = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianIncrements {
    pub dw: Vec<DVector<f64>>,
    pub dw_tilde: Vec<DVector<f64>>,
}

pub fn sample_brownian(grid: &TimeGrid, r: usize, p: usize, seed: u64) -> BrownianIncrements {
    let mut rng = stream_rng(seed, NOISE_STREAM);
    let sd = grid.step().sqrt();
    let steps = grid.steps();
    let mut dw = Vec::with_capacity(steps);
    let mut dw_tilde = Vec::with_capacity(if p > 0 { steps } else { 0 });
    for _ in 0..steps {
        dw.push(DVector::from_fn(r, |_, _| {
            sd * rng.sample::<f64, _>(StandardNormal)
        }));
        if p > 0 {
            dw_tilde.push(DVector::from_fn(p, |_, _| {
                sd * rng.sample::<f64, _>(StandardNormal)
            }));
        }
    }
    BrownianIncrements { dw, dw_tilde }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceMode {
    Zero,
    Constant(DVector<f64>),
    /// `v = V xhat + V0`.
    WorstCase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub mode: DisturbanceMode,
}

/// Piecewise disturbance law on a partition of `[0, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbancePolicy {
    segments: Vec<Segment>,
    horizon: f64,
}

impl DisturbancePolicy {
    /// Segments must be contiguous, start at 0 and reach `horizon`.
    pub fn new(segments: Vec<Segment>, horizon: f64) -> Result<Self> {
        let tol = node_tolerance(horizon);
        let mut cursor = 0.0;
        for seg in &segments {
            if (seg.start - cursor).abs() > tol || seg.end <= seg.start {
                return Err(Error::Policy(format!(
                    "segment [{}, {}) does not continue the partition at {cursor}",
                    seg.start, seg.end
                )));
            }
            cursor = seg.end;
        }
        if cursor < horizon - tol {
            return Err(Error::Policy(format!(
                "segments end at {cursor}, before the horizon {horizon}"
            )));
        }
        Ok(Self { segments, horizon })
    }

    pub fn uniform(horizon: f64, mode: DisturbanceMode) -> Self {
        Self {
            segments: vec![Segment {
                start: 0.0,
                end: horizon,
                mode,
            }],
            horizon,
        }
    }

    pub fn zero(horizon: f64) -> Self {
        Self::uniform(horizon, DisturbanceMode::Zero)
    }

    pub fn worst_case(horizon: f64) -> Self {
        Self::uniform(horizon, DisturbanceMode::WorstCase)
    }

    /// Unit step on `[0, 1)`, worst-case feedback on `[1, 5)`, zero
    /// afterwards, clipped to the horizon.
    pub fn uav_schedule(horizon: f64, m: usize) -> Self {
        let pieces = [
            (
                0.0,
                1.0,
                DisturbanceMode::Constant(DVector::from_element(m, 1.0)),
            ),
            (1.0, 5.0, DisturbanceMode::WorstCase),
            (5.0, f64::INFINITY, DisturbanceMode::Zero),
        ];
        let segments = pieces
            .into_iter()
            .filter(|(start, _, _)| *start < horizon)
            .map(|(start, end, mode)| Segment {
                start,
                end: end.min(horizon),
                mode,
            })
            .collect();
        Self { segments, horizon }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Mode active at `t`; the final node belongs to the last segment.
    pub fn mode_at(&self, t: f64) -> &DisturbanceMode {
        let tol = node_tolerance(self.horizon);
        self.segments
            .iter()
            .find(|s| t < s.end - tol)
            .or(self.segments.last())
            .map(|s| &s.mode)
            .expect("policy has at least one segment")
    }

    /// True when no segment can produce a nonzero disturbance.
    pub fn is_identically_zero(&self) -> bool {
        self.segments.iter().all(|s| match &s.mode {
            DisturbanceMode::Zero => true,
            DisturbanceMode::Constant(c) => c.iter().all(|v| *v == 0.0),
            DisturbanceMode::WorstCase => false,
        })
    }

    fn value(&self, t: f64, k: usize, xhat: &DVector<f64>, gains: &GainSchedule) -> DVector<f64> {
        match self.mode_at(t) {
            DisturbanceMode::Zero => DVector::zeros(gains.v.rows()),
            DisturbanceMode::Constant(c) => c.clone(),
            DisturbanceMode::WorstCase => gains.v.node(k) * xhat + gains.v0.node(k).column(0),
        }
    }
}

fn node_tolerance(horizon: f64) -> f64 {
    1e-9 * horizon.max(1.0)
}

/// Piecewise-constant additive perturbation with equal-length pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub pieces: Vec<DVector<f64>>,
    pub horizon: f64,
}

impl Perturbation {
    /// Entries i.i.d. uniform in `[-magnitude, magnitude]`.
    pub fn random(
        dim: usize,
        pieces: usize,
        magnitude: f64,
        horizon: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let pieces = (0..pieces)
            .map(|_| DVector::from_fn(dim, |_, _| magnitude * rng.random_range(-1.0..=1.0)))
            .collect();
        Self { pieces, horizon }
    }

    pub fn value(&self, t: f64) -> &DVector<f64> {
        let n = self.pieces.len();
        let idx = ((t / self.horizon * n as f64 + 1e-9).floor() as usize).min(n - 1);
        &self.pieces[idx]
    }

    /// `int |delta|^2 dt` by the trapezoid rule on `grid`.
    pub fn energy(&self, grid: &TimeGrid) -> f64 {
        trapezoid(grid, |k| self.value(grid.time(k)).norm_squared())
    }
}

/// Which player's feedback is perturbed.
#[derive(Debug, Clone, PartialEq)]
pub enum PathPerturbation {
    None,
    Control(Perturbation),
    Disturbance(Perturbation),
}

/// Reference runs for energy-gain differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Baseline {
    /// Same feedback control, `v = 0`.
    #[default]
    Undisturbed,
    /// `u = 0`, `v = 0`.
    OpenLoop,
}

/// One simulated path sampled at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub x: Vec<DVector<f64>>,
    pub xhat: Vec<DVector<f64>>,
    pub xtilde: Vec<DVector<f64>>,
    pub y: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    /// Normalized innovation increments `F^-1 dI`, one per step.
    pub innovation_hat_increments: Vec<DVector<f64>>,
    /// `gamma^2 |v|^2 - |z|^2` at each node.
    pub j1_integrand: Vec<f64>,
    /// `|z|^2` at each node.
    pub j2_integrand: Vec<f64>,
    pub noise: BrownianIncrements,
    pub seed: u64,
}

impl SimResult {
    pub fn node_count(&self) -> usize {
        self.x.len()
    }
}

/// Initial state: `x0`, plus `Sigma0^(1/2) xi` when `Sigma0` is nonzero.
pub fn initial_state(model: &SystemModel, seed: u64) -> DVector<f64> {
    if model.sigma0.iter().all(|v| *v == 0.0) {
        return model.x0.clone();
    }
    let n = model.x0.len();
    let eig = model.sigma0.clone().symmetric_eigen();
    let sqrt_vals = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let root = &eig.eigenvectors * sqrt_vals;
    let mut rng = stream_rng(seed, INITIAL_STATE_STREAM);
    let xi = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    &model.x0 + root * xi
}

/// Inputs shared by every path of a run.
#[derive(Debug, Clone, Copy)]
pub struct LoopSetup<'a> {
    pub model: &'a SystemModel,
    pub grid: &'a TimeGrid,
    pub plan: &'a FilterPlan,
    pub gains: &'a GainSchedule,
}

impl<'a> LoopSetup<'a> {
    pub fn new(
        model: &'a SystemModel,
        grid: &'a TimeGrid,
        plan: &'a FilterPlan,
        gains: &'a GainSchedule,
    ) -> Self {
        Self {
            model,
            grid,
            plan,
            gains,
        }
    }
}

/// Closed loop `u = U xhat + U0` with `v` from `policy`.
pub fn simulate_closed_loop(
    setup: &LoopSetup<'_>,
    policy: &DisturbancePolicy,
    seed: u64,
) -> Result<SimResult> {
    run_path(setup, policy, true, &PathPerturbation::None, seed)
}

/// Closed loop with an additive perturbation of one player's feedback.
pub fn simulate_perturbed(
    setup: &LoopSetup<'_>,
    policy: &DisturbancePolicy,
    perturbation: &PathPerturbation,
    seed: u64,
) -> Result<SimResult> {
    run_path(setup, policy, true, perturbation, seed)
}

/// Reference run without disturbance on the same noise as `seed`.
pub fn simulate_baseline(setup: &LoopSetup<'_>, kind: Baseline, seed: u64) -> Result<SimResult> {
    let policy = DisturbancePolicy::zero(setup.grid.horizon());
    run_path(
        setup,
        &policy,
        kind == Baseline::Undisturbed,
        &PathPerturbation::None,
        seed,
    )
}

fn run_path(
    setup: &LoopSetup<'_>,
    policy: &DisturbancePolicy,
    control_on: bool,
    perturbation: &PathPerturbation,
    seed: u64,
) -> Result<SimResult> {
    let LoopSetup {
        model,
        grid,
        plan,
        gains,
    } = *setup;
    let dims = model.dims();
    let steps = grid.steps();
    let h = grid.step();
    let g2 = model.gamma * model.gamma;
    let noise = sample_brownian(grid, dims.r, dims.p, seed);

    let mut res = SimResult {
        x: Vec::with_capacity(steps + 1),
        xhat: Vec::with_capacity(steps + 1),
        xtilde: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        v: Vec::with_capacity(steps + 1),
        z: Vec::with_capacity(steps + 1),
        innovation_hat_increments: Vec::with_capacity(steps),
        j1_integrand: Vec::with_capacity(steps + 1),
        j2_integrand: Vec::with_capacity(steps + 1),
        noise: BrownianIncrements {
            dw: Vec::new(),
            dw_tilde: Vec::new(),
        },
        seed,
    };
    let mut x = initial_state(model, seed);
    let mut xhat = model.xhat0.clone();
    let mut y = DVector::zeros(dims.r);

    for k in 0..=steps {
        let t = grid.time(k);
        let mut u = if control_on {
            gains.u.node(k) * &xhat + gains.u0.node(k).column(0)
        } else {
            DVector::zeros(dims.s)
        };
        let mut v = policy.value(t, k, &xhat, gains);
        match perturbation {
            PathPerturbation::None => {}
            PathPerturbation::Control(p) => u += p.value(t),
            PathPerturbation::Disturbance(p) => v += p.value(t),
        }
        let qx = model.q.node(k) * &x;
        let nu = model.n1.node(k) * &u;
        let mut z = DVector::zeros(qx.len() + nu.len());
        z.rows_mut(0, qx.len()).copy_from(&qx);
        z.rows_mut(qx.len(), nu.len()).copy_from(&nu);
        let z2 = z.norm_squared();
        res.j1_integrand.push(g2 * v.norm_squared() - z2);
        res.j2_integrand.push(z2);

        if k < steps {
            let dw = &noise.dw[k];
            let dy =
                (model.e.node(k) * &x + model.beta.node(k).column(0)) * h + model.f.node(k) * dw;
            let mut x_next = &x
                + (model.a.node(k) * &x
                    + model.b2.node(k) * &u
                    + model.b1.node(k) * &v
                    + model.b.node(k).column(0))
                    * h
                + model.c.node(k) * dw;
            if dims.p > 0 {
                x_next += model.d.node(k) * &noise.dw_tilde[k];
            }
            let (xhat_next, d_innov) = filter_step(model, plan, grid, k, &xhat, &u, &v, &dy);
            if x_next
                .iter()
                .chain(xhat_next.iter())
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite {
                    node: k + 1,
                    time: grid.time(k + 1),
                    path: None,
                });
            }
            res.innovation_hat_increments
                .push(plan.f_inv.node(k) * d_innov);
            let y_next = &y + dy;
            res.xtilde.push(&x - &xhat);
            res.x.push(std::mem::replace(&mut x, x_next));
            res.xhat.push(std::mem::replace(&mut xhat, xhat_next));
            res.y.push(std::mem::replace(&mut y, y_next));
        } else {
            res.xtilde.push(&x - &xhat);
            res.x.push(x.clone());
            res.xhat.push(xhat.clone());
            res.y.push(y.clone());
        }
        res.u.push(u);
        res.v.push(v);
        res.z.push(z);
    }
    res.noise = noise;
    Ok(res)
}

/// Values computed on each successful path, with failed path indices kept
/// alongside.
#[derive(Debug, Clone)]
pub struct Ensemble<T> {
    /// `(path index, value)` in path order.
    pub values: Vec<(usize, T)>,
    pub failures: Vec<(usize, Error)>,
}

impl<T> Ensemble<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn estimate_of(&self, f: impl Fn(&T) -> f64) -> Estimate {
        let samples: Vec<f64> = self.values.iter().map(|(_, v)| f(v)).collect();
        estimate(&samples)
    }
}

/// Evaluate `f(path_index, seed)` for every path in parallel. Results are
/// kept in path order so reductions are reproducible.
pub fn map_paths<T, F>(n_paths: usize, base_seed: u64, f: F) -> Ensemble<T>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    let results: Vec<(usize, Result<T>)> = (0..n_paths)
        .into_par_iter()
        .map(|i| (i, f(i, base_seed.wrapping_add(i as u64))))
        .collect();
    let mut ensemble = Ensemble {
        values: Vec::with_capacity(n_paths),
        failures: Vec::new(),
    };
    for (i, r) in results {
        match r {
            Ok(v) => ensemble.values.push((i, v)),
            Err(Error::NonFinite { node, time, .. }) => ensemble.failures.push((
                i,
                Error::NonFinite {
                    node,
                    time,
                    path: Some(i),
                },
            )),
            Err(e) => ensemble.failures.push((i, e)),
        }
    }
    ensemble
}

/// Per-path summary kept by [`monte_carlo`].
#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary {
    pub seed: u64,
    pub j1: f64,
    pub j2: f64,
    pub disturbance_energy: f64,
    pub final_state_norm: f64,
}

impl PathSummary {
    pub fn from_result(res: &SimResult, grid: &TimeGrid) -> Self {
        Self {
            seed: res.seed,
            j1: trapezoid(grid, |k| res.j1_integrand[k]),
            j2: trapezoid(grid, |k| res.j2_integrand[k]),
            disturbance_energy: trapezoid(grid, |k| res.v[k].norm_squared()),
            final_state_norm: res.x.last().map_or(0.0, |x| x.norm()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloReport {
    pub paths: Ensemble<PathSummary>,
    pub j1: Estimate,
    pub j2: Estimate,
}

pub fn monte_carlo(
    setup: &LoopSetup<'_>,
    policy: &DisturbancePolicy,
    n_paths: usize,
    base_seed: u64,
) -> MonteCarloReport {
    let grid = setup.grid;
    let paths = map_paths(n_paths, base_seed, |_, seed| {
        simulate_closed_loop(setup, policy, seed).map(|r| PathSummary::from_result(&r, grid))
    });
    let j1 = paths.estimate_of(|p| p.j1);
    let j2 = paths.estimate_of(|p| p.j2);
    MonteCarloReport { paths, j1, j2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtering::solve_filter_covariance;

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn brownian_is_deterministic_and_scaled() {
        let grid = TimeGrid::new(10.0, 100_000).unwrap();
        let a = sample_brownian(&grid, 1, 0, 5);
        assert_eq!(a, sample_brownian(&grid, 1, 0, 5));
        assert!(a.dw_tilde.is_empty());
        let n = a.dw.len() as f64;
        let h = grid.step();
        let mean = a.dw.iter().map(|d| d[0]).sum::<f64>() / n;
        let var = a.dw.iter().map(|d| (d[0] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 5.0 * (h * n).sqrt() / n);
        assert!((var / h - 1.0).abs() < 0.05);
    }

    #[test]
    fn uav_schedule_segments() {
        let p = DisturbancePolicy::uav_schedule(20.0, 2);
        assert_eq!(p.segments().len(), 3);
        assert!(matches!(p.mode_at(0.0), DisturbanceMode::Constant(_)));
        assert!(matches!(p.mode_at(0.99), DisturbanceMode::Constant(_)));
        assert!(matches!(p.mode_at(1.0), DisturbanceMode::WorstCase));
        assert!(matches!(p.mode_at(4.99), DisturbanceMode::WorstCase));
        assert!(matches!(p.mode_at(5.0), DisturbanceMode::Zero));
        assert!(matches!(p.mode_at(20.0), DisturbanceMode::Zero));
        assert_eq!(DisturbancePolicy::uav_schedule(3.0, 2).segments().len(), 2);
    }

    #[test]
    fn policy_partition_is_checked() {
        let gap = vec![
            Segment {
                start: 0.0,
                end: 1.0,
                mode: DisturbanceMode::Zero,
            },
            Segment {
                start: 1.5,
                end: 2.0,
                mode: DisturbanceMode::Zero,
            },
        ];
        assert!(matches!(
            DisturbancePolicy::new(gap, 2.0),
            Err(Error::Policy(_))
        ));
    }

    #[test]
    fn zero_dynamics_stay_zero() {
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
        .x0(DVector::zeros(1))
        .build()
        .unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let plan = solve_filter_covariance(&model, &grid).unwrap();
        let gains = GainSchedule::zeros(&model);
        let setup = LoopSetup::new(&model, &grid, &plan, &gains);
        let r = simulate_closed_loop(&setup, &DisturbancePolicy::zero(1.0), 3).unwrap();
        assert!(r.x.iter().chain(&r.xhat).all(|v| v[0] == 0.0));
        assert_eq!(r.x.len(), 21);
        assert_eq!(r.innovation_hat_increments.len(), 20);
    }

    #[test]
    fn baseline_shares_noise_with_closed_loop() {
        let model = SystemModel::builder(
            s(-1.0),
            s(1.0),
            s(1.0),
            s(0.3),
            s(1.0),
            s(1.0),
            s(1.0),
            s(1.0),
        )
        .d(s(0.2))
        .build()
        .unwrap();
        let grid = TimeGrid::new(1.0, 50).unwrap();
        let plan = solve_filter_covariance(&model, &grid).unwrap();
        let gains = GainSchedule::zeros(&model);
        let setup = LoopSetup::new(&model, &grid, &plan, &gains);
        let a = simulate_closed_loop(&setup, &DisturbancePolicy::worst_case(1.0), 11).unwrap();
        let b = simulate_baseline(&setup, Baseline::OpenLoop, 11).unwrap();
        assert_eq!(a.noise, b.noise);
        assert_eq!(
            a,
            simulate_closed_loop(&setup, &DisturbancePolicy::worst_case(1.0), 11).unwrap()
        );
    }

    #[test]
    fn map_paths_keeps_order_and_failures() {
        let e = map_paths(8, 100, |i, seed| {
            if i == 3 {
                Err(Error::NonFinite {
                    node: 1,
                    time: 0.1,
                    path: None,
                })
            } else {
                Ok(seed)
            }
        });
        assert_eq!(
            e.values.iter().map(|(i, _)| *i).collect::<Vec<_>>(),
            vec![0, 1, 2, 4, 5, 6, 7]
        );
        assert_eq!(e.values[3].1, 104);
        assert!(matches!(
            e.failures[0].1,
            Error::NonFinite { path: Some(3), .. }
        ));
    }
}
