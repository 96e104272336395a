//! Fixed-step classical Runge-Kutta integration of matrix ODEs, forward or
//! backward in time, with finite-escape detection.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{MatrixSignal, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Boundary value given at `t = 0`.
    Forward,
    /// Boundary value given at `t = T`.
    Backward,
}

/// `dM/dt = rhs(t, M)` with a boundary value at one end of the grid.
pub struct OdeProblem<F> {
    pub rhs: F,
    pub boundary: DMatrix<f64>,
    pub direction: Direction,
}

impl<F> OdeProblem<F>
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    pub fn forward(initial: DMatrix<f64>, rhs: F) -> Self {
        Self {
            rhs,
            boundary: initial,
            direction: Direction::Forward,
        }
    }

    pub fn backward(terminal: DMatrix<f64>, rhs: F) -> Self {
        Self {
            rhs,
            boundary: terminal,
            direction: Direction::Backward,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.boundary.shape()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrateOptions {
    /// Replace each square block of the state (blocks stacked vertically)
    /// by its symmetric part after every step.
    pub symmetrize: bool,
    /// Frobenius-norm threshold that signals finite escape.
    pub blowup_norm: f64,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            symmetrize: false,
            blowup_norm: 1e9,
        }
    }
}

impl IntegrateOptions {
    pub fn symmetric() -> Self {
        Self {
            symmetrize: true,
            ..Self::default()
        }
    }
}

/// Integrate `problem` over every node of `grid`.
pub fn integrate<F>(
    problem: &OdeProblem<F>,
    grid: &TimeGrid,
    opts: &IntegrateOptions,
) -> Result<MatrixSignal>
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    assert!(opts.blowup_norm > 0.0, "blowup_norm must be positive");
    let n = grid.steps();
    let mut out: Vec<DMatrix<f64>> = vec![DMatrix::zeros(0, 0); n + 1];
    let start = match problem.direction {
        Direction::Forward => 0,
        Direction::Backward => n,
    };
    let mut state = problem.boundary.clone();
    if opts.symmetrize {
        symmetrize_blocks(&mut state);
    }
    check_state(&state, start, grid, opts)?;
    out[start] = state.clone();

    for step in 0..n {
        let (from, to) = match problem.direction {
            Direction::Forward => (step, step + 1),
            Direction::Backward => (n - step, n - step - 1),
        };
        state = rk4_step(&problem.rhs, grid.time(from), grid.time(to), &state);
        if opts.symmetrize {
            symmetrize_blocks(&mut state);
        }
        check_state(&state, to, grid, opts)?;
        out[to] = state.clone();
    }
    MatrixSignal::sampled(*grid, out)
}

/// One classical fourth-order step from `t0` to `t1` (either direction).
pub fn rk4_step<F>(rhs: &F, t0: f64, t1: f64, y: &DMatrix<f64>) -> DMatrix<f64>
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let dt = t1 - t0;
    let tm = 0.5 * (t0 + t1);
    let k1 = rhs(t0, y);
    let k2 = rhs(tm, &(y + &k1 * (0.5 * dt)));
    let k3 = rhs(tm, &(y + &k2 * (0.5 * dt)));
    let k4 = rhs(t1, &(y + &k3 * dt));
    y + (k1 + (k2 + k3) * 2.0 + k4) * (dt / 6.0)
}

fn check_state(
    state: &DMatrix<f64>,
    node: usize,
    grid: &TimeGrid,
    opts: &IntegrateOptions,
) -> Result<()> {
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            node,
            time: grid.time(node),
            path: None,
        });
    }
    let norm = state.norm();
    if norm > opts.blowup_norm {
        return Err(Error::FiniteEscape {
            node,
            time: grid.time(node),
            norm,
        });
    }
    Ok(())
}

/// Symmetrize every `c x c` block of an `(q*c) x c` matrix in place.
pub fn symmetrize_blocks(m: &mut DMatrix<f64>) {
    let c = m.ncols();
    if c == 0 || !m.nrows().is_multiple_of(c) {
        return;
    }
    for block in 0..m.nrows() / c {
        let off = block * c;
        for i in 0..c {
            for j in (i + 1)..c {
                let avg = 0.5 * (m[(off + i, j)] + m[(off + j, i)]);
                m[(off + i, j)] = avg;
                m[(off + j, i)] = avg;
            }
        }
    }
}

/// Largest deviation found by a residual check and where it occurred.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub max_residual: f64,
    pub worst_node: usize,
}

impl ResidualReport {
    pub(crate) fn zero() -> Self {
        Self {
            max_residual: 0.0,
            worst_node: 0,
        }
    }

    pub(crate) fn record(&mut self, node: usize, value: f64) {
        if value > self.max_residual || value.is_nan() {
            self.max_residual = value;
            self.worst_node = node;
        }
    }
}

/// Max-norm residual of `dM/dt = rhs(t, M)` at interior nodes, with the
/// derivative of the stored signal taken by centered differences.
pub fn centered_residual<F>(signal: &MatrixSignal, grid: &TimeGrid, rhs: F) -> ResidualReport
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let h = grid.step();
    let mut report = ResidualReport::zero();
    for k in 1..grid.steps() {
        let derivative = (signal.node(k + 1) - signal.node(k - 1)) / (2.0 * h);
        let value = (derivative - rhs(grid.time(k), signal.node(k))).amax();
        report.record(k, value);
    }
    report
}

/// What the coarse and refined solutions are compared against.
pub enum Reference<'a> {
    Analytic(&'a dyn Fn(f64) -> DMatrix<f64>),
    /// A solution on a grid eight times finer than the coarse one.
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderEstimate {
    /// Both step sizes reproduce the reference to rounding.
    Exact,
    Estimated {
        order: f64,
        coarse_error: f64,
        fine_error: f64,
    },
}

impl OrderEstimate {
    pub fn order(&self) -> Option<f64> {
        match self {
            OrderEstimate::Exact => None,
            OrderEstimate::Estimated { order, .. } => Some(*order),
        }
    }
}

/// Observed order from solutions at `h` and `h/2`, using the max error over
/// the coarse nodes.
pub fn convergence_order<F>(
    problem: &OdeProblem<F>,
    coarse: &TimeGrid,
    reference: Reference<'_>,
) -> Result<OrderEstimate>
where
    F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>,
{
    let opts = IntegrateOptions::default();
    let sol_h = integrate(problem, coarse, &opts)?;
    let sol_h2 = integrate(problem, &coarse.refined(2), &opts)?;
    let refined = match reference {
        Reference::Refined => Some(integrate(problem, &coarse.refined(8), &opts)?),
        Reference::Analytic(_) => None,
    };
    let truth = |k: usize| -> DMatrix<f64> {
        match &reference {
            Reference::Analytic(f) => f(coarse.time(k)),
            Reference::Refined => refined_node(&refined, k),
        }
    };
    let mut e_h: f64 = 0.0;
    let mut e_h2: f64 = 0.0;
    let scale = (0..coarse.node_count())
        .map(|k| truth(k).norm())
        .fold(1.0, f64::max);
    for k in 0..coarse.node_count() {
        let t = truth(k);
        e_h = e_h.max((sol_h.node(k) - &t).norm());
        e_h2 = e_h2.max((sol_h2.node(2 * k) - &t).norm());
    }
    if e_h <= 1e-14 * scale && e_h2 <= 1e-14 * scale {
        return Ok(OrderEstimate::Exact);
    }
    Ok(OrderEstimate::Estimated {
        order: (e_h / e_h2).log2(),
        coarse_error: e_h,
        fine_error: e_h2,
    })
}

fn refined_node(refined: &Option<MatrixSignal>, k: usize) -> DMatrix<f64> {
    refined
        .as_ref()
        .expect("refined reference computed")
        .node(8 * k)
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn exponential_decay_matches_analytic() {
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let p = OdeProblem::forward(scalar(1.0), |_t, m: &DMatrix<f64>| -m);
        let sol = integrate(&p, &grid, &IntegrateOptions::default()).unwrap();
        assert!((sol.node(100)[(0, 0)] - (-1.0f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn zero_field_is_constant() {
        let grid = TimeGrid::new(2.0, 7).unwrap();
        let m0 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let p = OdeProblem::forward(m0.clone(), |_t, m: &DMatrix<f64>| {
            DMatrix::zeros(m.nrows(), m.ncols())
        });
        let sol = integrate(&p, &grid, &IntegrateOptions::default()).unwrap();
        for k in 0..=7 {
            assert_eq!(sol.node(k), &m0);
        }
    }

    #[test]
    fn quadratic_field_escapes_near_pole() {
        let grid = TimeGrid::new(2.0, 2000).unwrap();
        let p = OdeProblem::forward(scalar(1.0), |_t, m: &DMatrix<f64>| m.component_mul(m));
        let opts = IntegrateOptions {
            symmetrize: false,
            blowup_norm: 1e6,
        };
        match integrate(&p, &grid, &opts) {
            Err(Error::FiniteEscape { time, .. }) => {
                assert!((time - 1.0).abs() < 0.01, "escape at {time}")
            }
            other => panic!("expected finite escape, got {other:?}"),
        }
    }

    #[test]
    fn backward_equals_time_reversed_forward() {
        let grid = TimeGrid::new(1.5, 60).unwrap();
        let a = DMatrix::from_row_slice(2, 2, &[0.3, -1.0, 0.5, -0.2]);
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]);
        let t_end = grid.horizon();
        let back = OdeProblem::backward(g.clone(), |t: f64, m: &DMatrix<f64>| {
            &a * m + DMatrix::from_element(2, 2, t)
        });
        let fwd = OdeProblem::forward(g, |s: f64, m: &DMatrix<f64>| {
            -(&a * m + DMatrix::from_element(2, 2, t_end - s))
        });
        let opts = IntegrateOptions::default();
        let b = integrate(&back, &grid, &opts).unwrap();
        let f = integrate(&fwd, &grid, &opts).unwrap();
        for k in 0..=60 {
            assert!((b.node(k) - f.node(60 - k)).amax() < 1e-12);
        }
    }

    #[test]
    fn symmetrize_blocks_handles_stacks() {
        let mut m = DMatrix::from_row_slice(4, 2, &[1.0, 2.0, 4.0, 3.0, 5.0, 0.0, 2.0, 6.0]);
        symmetrize_blocks(&mut m);
        assert_eq!(
            m,
            DMatrix::from_row_slice(4, 2, &[1.0, 3.0, 3.0, 3.0, 5.0, 1.0, 1.0, 6.0])
        );
    }

    #[test]
    fn nan_is_reported() {
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let p = OdeProblem::forward(scalar(1.0), |t: f64, _m: &DMatrix<f64>| {
            scalar(if t > 0.45 { f64::NAN } else { 0.0 })
        });
        assert!(matches!(
            integrate(&p, &grid, &IntegrateOptions::default()),
            Err(Error::NonFinite { node: 5, .. })
        ));
    }
}
