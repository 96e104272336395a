//! Cost functionals, the energy-gain ratio and Monte Carlo verification of
//! the equilibrium.
//!
//! Every paired comparison runs both sides on the same seeds, so the noise
//! realizations coincide path by path.

use std::fmt;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::TimeGrid;
use crate::simulate::{
    map_paths, simulate_baseline, simulate_closed_loop, simulate_perturbed, stream_rng, Baseline,
    DisturbancePolicy, Ensemble, LoopSetup, PathPerturbation, Perturbation, SimResult,
    PERTURBATION_STREAM,
};
use crate::stats::{estimate, pooled_se, trapezoid, Estimate};
use crate::synthesis::{GainVariant, Synthesis};

/// `int gamma^2 |v|^2 - |z|^2 dt` along one path.
pub fn cost_j1(res: &SimResult, grid: &TimeGrid, gamma: f64) -> f64 {
    let g2 = gamma * gamma;
    trapezoid(grid, |k| {
        g2 * res.v[k].norm_squared() - res.z[k].norm_squared()
    })
}

/// `int |z|^2 dt` along one path.
pub fn cost_j2(res: &SimResult, grid: &TimeGrid) -> f64 {
    trapezoid(grid, |k| res.z[k].norm_squared())
}

/// One line of a verification report.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub name: String,
    pub estimate: f64,
    pub reference: f64,
    pub stderr: Option<f64>,
    pub pass: bool,
}

impl CheckRow {
    pub fn new(
        name: impl Into<String>,
        estimate: f64,
        reference: f64,
        stderr: Option<f64>,
        pass: bool,
    ) -> Self {
        Self {
            name: name.into(),
            estimate,
            reference,
            stderr,
            pass,
        }
    }

    /// Row that passes when `estimate` is within `k` standard errors of
    /// `reference`.
    pub fn within_se(name: impl Into<String>, est: &Estimate, reference: f64, k: f64) -> Self {
        Self::new(
            name,
            est.mean,
            reference,
            est.stderr,
            est.agrees_with(reference, k),
        )
    }
}

impl fmt::Display for CheckRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let se = self
            .stderr
            .map_or_else(|| "n/a".to_string(), |s| format!("{s:.3e}"));
        write!(
            f,
            "{:<5} {} estimate={:.6e} reference={:.6e} stderr={}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.estimate,
            self.reference,
            se
        )
    }
}

/// Measured ratio of output energy to disturbance energy.
#[derive(Debug, Clone, PartialEq)]
pub struct GainReport {
    /// `sqrt(mean int |z~|^2)`.
    pub numerator: f64,
    /// `sqrt(mean int |v|^2)`.
    pub denominator: f64,
    pub ratio: f64,
    pub n_paths: usize,
    /// Delta-method standard error of `ratio`.
    pub stderr: f64,
    pub failed_paths: Vec<usize>,
}

/// Energy-gain options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct GainOptions {
    pub variant: GainVariant,
    pub baseline: Baseline,
}

/// Energy gain of the closed loop under `policy`.
///
/// Each path is paired with a baseline run on the same seed and
/// `z~ = [Q (x - x_b); N1 (u - u_b)]` (or `Q (x - x_b)` for
/// [`GainVariant::StateOutput`]). With the default undisturbed baseline
/// `u - u_b = U (xhat - xhat_b)`.
pub fn energy_gain(
    setup: &LoopSetup<'_>,
    policy: &DisturbancePolicy,
    n_paths: usize,
    seed: u64,
    opts: GainOptions,
) -> Result<GainReport> {
    let grid = setup.grid;
    let model = setup.model;
    let ensemble = map_paths(n_paths, seed, |_, s| {
        let run = simulate_closed_loop(setup, policy, s)?;
        let base = simulate_baseline(setup, opts.baseline, s)?;
        let out = trapezoid(grid, |k| {
            let qx = (model.q.node(k) * (&run.x[k] - &base.x[k])).norm_squared();
            match opts.variant {
                GainVariant::StateOutput => qx,
                GainVariant::FullOutput => {
                    qx + (model.n1.node(k) * (&run.u[k] - &base.u[k])).norm_squared()
                }
            }
        });
        let dist = trapezoid(grid, |k| run.v[k].norm_squared());
        Ok((out, dist))
    });
    gain_from_energies(&ensemble)
}

fn gain_from_energies(ensemble: &Ensemble<(f64, f64)>) -> Result<GainReport> {
    let failed_paths = ensemble.failures.iter().map(|(i, _)| *i).collect();
    let n = ensemble.len();
    let out = ensemble.estimate_of(|e| e.0);
    let dist = ensemble.estimate_of(|e| e.1);
    if n == 0 || dist.mean <= 0.0 {
        return Err(Error::ZeroDisturbance);
    }
    let r2 = out.mean / dist.mean;
    let ratio = r2.sqrt();
    // Linearization of A/B around the means.
    let residuals: Vec<f64> = ensemble
        .values
        .iter()
        .map(|(_, (a, b))| (a - r2 * b) / dist.mean)
        .collect();
    let se_r2 = estimate(&residuals).se();
    let stderr = if ratio > 0.0 {
        se_r2 / (2.0 * ratio)
    } else {
        0.0
    };
    Ok(GainReport {
        numerator: out.mean.sqrt(),
        denominator: dist.mean.sqrt(),
        ratio,
        n_paths: n,
        stderr,
        failed_paths,
    })
}

/// Effect of one perturbation on the perturbed player's cost.
#[derive(Debug, Clone, PartialEq)]
pub struct NashRow {
    /// Perturbed mean cost minus equilibrium mean cost.
    pub difference: f64,
    /// `gamma^2 int |dv|^2` or `int |du|^2`: the exact expected increase.
    pub expected: f64,
    /// Three pooled standard errors.
    pub tolerance: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NashReport {
    pub j1: Estimate,
    pub j2: Estimate,
    pub disturbance_rows: Vec<NashRow>,
    pub control_rows: Vec<NashRow>,
}

impl NashReport {
    pub fn violations(&self) -> usize {
        self.disturbance_rows
            .iter()
            .chain(&self.control_rows)
            .filter(|r| r.violated)
            .count()
    }
}

/// Nash inequalities under random piecewise-constant perturbations.
///
/// The disturbance player plays `v* = V xhat + V0` on the whole horizon.
/// Each perturbation is added to one player's feedback, and its mean cost is
/// compared with the equilibrium cost on the same seeds.
pub fn nash_check(
    setup: &LoopSetup<'_>,
    n_perturbations: usize,
    magnitude: f64,
    n_paths: usize,
    seed: u64,
) -> Result<NashReport> {
    const PIECES: usize = 10;
    let grid = setup.grid;
    let model = setup.model;
    let dims = model.dims();
    let horizon = grid.horizon();
    let policy = DisturbancePolicy::worst_case(horizon);

    let costs = |perturbation: &PathPerturbation| -> Result<(Estimate, Estimate)> {
        let e = map_paths(n_paths, seed, |_, s| {
            let r = simulate_perturbed(setup, &policy, perturbation, s)?;
            Ok((cost_j1(&r, grid, model.gamma), cost_j2(&r, grid)))
        });
        if let Some((_, err)) = e.failures.into_iter().next() {
            return Err(err);
        }
        let j1 = estimate(&e.values.iter().map(|(_, c)| c.0).collect::<Vec<_>>());
        let j2 = estimate(&e.values.iter().map(|(_, c)| c.1).collect::<Vec<_>>());
        Ok((j1, j2))
    };
    let (j1, j2) = costs(&PathPerturbation::None)?;

    let mut rng = stream_rng(seed, PERTURBATION_STREAM);
    let dvs: Vec<_> = (0..n_perturbations)
        .map(|_| Perturbation::random(dims.m, PIECES, magnitude, horizon, &mut rng))
        .collect();
    let dus: Vec<_> = (0..n_perturbations)
        .map(|_| Perturbation::random(dims.s, PIECES, magnitude, horizon, &mut rng))
        .collect();

    let g2 = model.gamma * model.gamma;
    let mut disturbance_rows = Vec::with_capacity(n_perturbations);
    for dv in dvs {
        let expected = g2 * dv.energy(grid);
        let (p1, _) = costs(&PathPerturbation::Disturbance(dv))?;
        disturbance_rows.push(nash_row(&p1, &j1, expected));
    }
    let mut control_rows = Vec::with_capacity(n_perturbations);
    for du in dus {
        let expected = du.energy(grid);
        let (_, p2) = costs(&PathPerturbation::Control(du))?;
        control_rows.push(nash_row(&p2, &j2, expected));
    }
    Ok(NashReport {
        j1,
        j2,
        disturbance_rows,
        control_rows,
    })
}

fn nash_row(perturbed: &Estimate, base: &Estimate, expected: f64) -> NashRow {
    let difference = perturbed.mean - base.mean;
    let tolerance = 3.0 * pooled_se(perturbed, base);
    NashRow {
        difference,
        expected,
        tolerance,
        violated: difference < -tolerance,
    }
}

/// Simulated equilibrium costs against the value formulas.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueReport {
    pub j1: Estimate,
    pub j1_formula: f64,
    pub j2: Estimate,
    pub j2_formula: f64,
    pub failed_paths: Vec<usize>,
}

impl ValueReport {
    pub fn rows(&self, k: f64) -> Vec<CheckRow> {
        vec![
            CheckRow::within_se("value J1", &self.j1, self.j1_formula, k),
            CheckRow::within_se("value J2", &self.j2, self.j2_formula, k),
        ]
    }
}

/// Mean costs under `(u*, v*)` and the corresponding value formulas.
pub fn value_consistency(
    setup: &LoopSetup<'_>,
    synthesis: &Synthesis,
    n_paths: usize,
    seed: u64,
) -> ValueReport {
    let LoopSetup {
        model, grid, plan, ..
    } = *setup;
    let policy = DisturbancePolicy::worst_case(grid.horizon());
    let e = map_paths(n_paths, seed, |_, s| {
        let r = simulate_closed_loop(setup, &policy, s)?;
        Ok((cost_j1(&r, grid, model.gamma), cost_j2(&r, grid)))
    });
    ValueReport {
        j1: e.estimate_of(|c| c.0),
        j1_formula: synthesis.value_j1(model, plan, grid),
        j2: e.estimate_of(|c| c.1),
        j2_formula: synthesis.value_j2(model, plan, grid),
        failed_paths: e.failures.iter().map(|(i, _)| *i).collect(),
    }
}

/// Per-path pieces of the split `J1 = J1^ + J1~`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionTerms {
    pub j1: f64,
    /// `int gamma^2 |v|^2 - |Q xhat|^2 - |N1 u|^2`.
    pub j1_hat: f64,
    /// `int -|Q x~|^2`.
    pub j1_tilde: f64,
}

pub fn decomposition_terms(res: &SimResult, setup: &LoopSetup<'_>) -> DecompositionTerms {
    let LoopSetup { model, grid, .. } = *setup;
    let g2 = model.gamma * model.gamma;
    DecompositionTerms {
        j1: cost_j1(res, grid, model.gamma),
        j1_hat: trapezoid(grid, |k| {
            g2 * res.v[k].norm_squared()
                - (model.q.node(k) * &res.xhat[k]).norm_squared()
                - (model.n1.node(k) * &res.u[k]).norm_squared()
        }),
        j1_tilde: trapezoid(grid, |k| -(model.q.node(k) * &res.xtilde[k]).norm_squared()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionReport {
    pub j1: Estimate,
    pub j1_hat: Estimate,
    pub j1_tilde: Estimate,
    /// Paired estimate of `J1^ + J1~ - J1`.
    pub gap: Estimate,
}

impl DecompositionReport {
    pub fn from_terms(terms: &[DecompositionTerms]) -> Self {
        let col =
            |f: fn(&DecompositionTerms) -> f64| estimate(&terms.iter().map(f).collect::<Vec<_>>());
        Self {
            j1: col(|t| t.j1),
            j1_hat: col(|t| t.j1_hat),
            j1_tilde: col(|t| t.j1_tilde),
            gap: col(|t| t.j1_hat + t.j1_tilde - t.j1),
        }
    }

    pub fn row(&self, k: f64) -> CheckRow {
        CheckRow::new(
            "decomposition J1 = J1^ + J1~",
            self.j1_hat.mean + self.j1_tilde.mean,
            self.j1.mean,
            self.gap.stderr,
            self.gap.agrees_with(0.0, k),
        )
    }
}

/// Decomposition check on stored paths.
pub fn decomposition_check(setup: &LoopSetup<'_>, results: &[SimResult]) -> DecompositionReport {
    let terms: Vec<_> = results
        .iter()
        .map(|r| decomposition_terms(r, setup))
        .collect();
    DecompositionReport::from_terms(&terms)
}

/// Per-path statistics for the orthogonality and decomposition checks.
#[derive(Debug, Clone, PartialEq)]
struct PathMoments {
    terms: DecompositionTerms,
    /// `<xhat, x~>` at each probe node.
    cross: Vec<f64>,
    /// `|x|^2 - |xhat|^2 - |x~|^2` at each probe node.
    variance_gap: Vec<f64>,
}

/// Orthogonality, variance split and cost decomposition on one ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationReport {
    pub nodes: Vec<usize>,
    pub cross: Vec<Estimate>,
    pub variance_gap: Vec<Estimate>,
    pub decomposition: DecompositionReport,
    pub failed_paths: Vec<usize>,
}

impl EstimationReport {
    pub fn rows(&self, grid: &TimeGrid, k: f64) -> Vec<CheckRow> {
        let mut rows = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let t = grid.time(*node);
            rows.push(CheckRow::within_se(
                format!("orthogonality E<xhat,x~>(t={t})"),
                &self.cross[i],
                0.0,
                k,
            ));
            rows.push(CheckRow::within_se(
                format!("variance split E|x|^2 - E|xhat|^2 - E|x~|^2 (t={t})"),
                &self.variance_gap[i],
                0.0,
                k,
            ));
        }
        rows.push(self.decomposition.row(k));
        rows
    }
}

/// Estimation checks at the middle and final nodes.
pub fn estimation_check(
    setup: &LoopSetup<'_>,
    policy: &DisturbancePolicy,
    n_paths: usize,
    seed: u64,
) -> EstimationReport {
    let steps = setup.grid.steps();
    let nodes = vec![steps / 2, steps];
    let e = map_paths(n_paths, seed, |_, s| {
        let r = simulate_closed_loop(setup, policy, s)?;
        Ok(PathMoments {
            terms: decomposition_terms(&r, setup),
            cross: nodes.iter().map(|&k| r.xhat[k].dot(&r.xtilde[k])).collect(),
            variance_gap: nodes
                .iter()
                .map(|&k| {
                    r.x[k].norm_squared() - r.xhat[k].norm_squared() - r.xtilde[k].norm_squared()
                })
                .collect(),
        })
    });
    let per_node = |f: fn(&PathMoments) -> &Vec<f64>| -> Vec<Estimate> {
        (0..nodes.len())
            .map(|i| estimate(&e.values.iter().map(|(_, m)| f(m)[i]).collect::<Vec<_>>()))
            .collect()
    };
    let terms: Vec<_> = e.values.iter().map(|(_, m)| m.terms).collect();
    EstimationReport {
        cross: per_node(|m| &m.cross),
        variance_gap: per_node(|m| &m.variance_gap),
        decomposition: DecompositionReport::from_terms(&terms),
        nodes: nodes.clone(),
        failed_paths: e.failures.iter().map(|(i, _)| *i).collect(),
    }
}

/// Per-step covariance of the normalized innovation increments.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationReport {
    /// Largest `|c_ij - h delta_ij| / se` over all steps and entries.
    pub max_z: f64,
    pub worst_step: usize,
    /// Sample covariance entry and its standard error at the worst step.
    pub worst_entry: (usize, usize),
    pub worst_estimate: f64,
    pub worst_stderr: f64,
    /// Mean over steps of the diagonal covariance divided by `h`.
    pub mean_diagonal_ratio: f64,
    pub n_paths: usize,
}

impl InnovationReport {
    pub fn row(&self, h: f64, k: f64) -> CheckRow {
        let (i, j) = self.worst_entry;
        let reference = if i == j { h } else { 0.0 };
        CheckRow::new(
            format!(
                "innovation covariance (worst step {}, entry {i},{j}, max z {:.2})",
                self.worst_step, self.max_z
            ),
            self.worst_estimate,
            reference,
            Some(self.worst_stderr),
            self.max_z <= k,
        )
    }
}

/// Compare the per-step sample second moments of `F^-1 dI` with `h I`.
pub fn innovation_statistics(
    setup: &LoopSetup<'_>,
    policy: &DisturbancePolicy,
    n_paths: usize,
    seed: u64,
) -> InnovationReport {
    let grid = setup.grid;
    let r = setup.model.dims().r;
    let e = map_paths(n_paths, seed, |_, s| {
        simulate_closed_loop(setup, policy, s).map(|res| res.innovation_hat_increments)
    });
    let steps = grid.steps();
    let h = grid.step();
    let mut report = InnovationReport {
        max_z: 0.0,
        worst_step: 0,
        worst_entry: (0, 0),
        worst_estimate: 0.0,
        worst_stderr: 0.0,
        mean_diagonal_ratio: 0.0,
        n_paths: e.len(),
    };
    let mut diag_sum = 0.0;
    for k in 0..steps {
        let incs: Vec<&DVector<f64>> = e.values.iter().map(|(_, v)| &v[k]).collect();
        for i in 0..r {
            for j in i..r {
                let products: Vec<f64> = incs.iter().map(|d| d[i] * d[j]).collect();
                let est = estimate(&products);
                let reference = if i == j { h } else { 0.0 };
                if i == j {
                    diag_sum += est.mean / h;
                }
                let z = est.z_score(reference);
                if z > report.max_z || (k == 0 && i == 0 && j == 0) {
                    report.max_z = z;
                    report.worst_step = k;
                    report.worst_entry = (i, j);
                    report.worst_estimate = est.mean;
                    report.worst_stderr = est.se();
                }
            }
        }
    }
    report.mean_diagonal_ratio = diag_sum / (steps * r.max(1)) as f64;
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filtering::solve_filter_covariance;
    use crate::model::SystemModel;
    use crate::simulate::BrownianIncrements;
    use crate::synthesis::GainSchedule;
    use nalgebra::DMatrix;

    fn blank(steps: usize) -> SimResult {
        let z = vec![DVector::zeros(2); steps + 1];
        SimResult {
            x: z.clone(),
            xhat: z.clone(),
            xtilde: z.clone(),
            y: z.clone(),
            u: z.clone(),
            v: z.clone(),
            z,
            innovation_hat_increments: vec![],
            j1_integrand: vec![0.0; steps + 1],
            j2_integrand: vec![0.0; steps + 1],
            noise: BrownianIncrements {
                dw: vec![],
                dw_tilde: vec![],
            },
            seed: 0,
        }
    }

    #[test]
    fn costs_of_simple_paths() {
        let grid = TimeGrid::new(2.0, 10).unwrap();
        let mut r = blank(10);
        assert_eq!(cost_j1(&r, &grid, 0.8), 0.0);
        assert_eq!(cost_j2(&r, &grid), 0.0);
        for z in &mut r.z {
            *z = DVector::from_vec(vec![3.0, 0.0]);
        }
        assert!((cost_j2(&r, &grid) - 18.0).abs() < 1e-12);
        assert!((cost_j1(&r, &grid, 0.8) + 18.0).abs() < 1e-12);
    }

    fn s(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn zero_policy_has_no_gain() {
        let model = SystemModel::builder(
            s(-1.0),
            s(1.0),
            s(1.0),
            s(0.1),
            s(1.0),
            s(1.0),
            s(1.0),
            s(1.0),
        )
        .build()
        .unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let plan = solve_filter_covariance(&model, &grid).unwrap();
        let gains = GainSchedule::zeros(&model);
        let setup = LoopSetup::new(&model, &grid, &plan, &gains);
        let err = energy_gain(
            &setup,
            &DisturbancePolicy::zero(1.0),
            4,
            1,
            GainOptions::default(),
        )
        .unwrap_err();
        assert_eq!(err, Error::ZeroDisturbance);
    }

    #[test]
    fn blocked_disturbance_channel_gives_zero_ratio() {
        let model = SystemModel::builder(
            s(-1.0),
            s(0.0),
            s(1.0),
            s(0.1),
            s(1.0),
            s(1.0),
            s(1.0),
            s(1.0),
        )
        .build()
        .unwrap();
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let plan = solve_filter_covariance(&model, &grid).unwrap();
        let gains = GainSchedule::zeros(&model);
        let setup = LoopSetup::new(&model, &grid, &plan, &gains);
        let policy = DisturbancePolicy::uav_schedule(1.0, 1);
        let rep = energy_gain(&setup, &policy, 4, 1, GainOptions::default()).unwrap();
        assert_eq!(rep.ratio, 0.0);
        assert!(rep.denominator > 0.0);
    }
}
