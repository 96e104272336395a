//! Domain types: the time grid, matrix-valued coefficient signals, the
//! system model and validation of its standing assumptions.

use std::borrow::Cow;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Uniform grid `t_k = k * T / N`, `k = 0..=N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "horizon must be positive, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidGrid("at least one step is required".into()));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn step(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn node_count(&self) -> usize {
        self.steps + 1
    }

    /// Time of node `k`; the last node is exactly the horizon.
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.horizon
        } else {
            k as f64 * self.step()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.steps).map(move |k| self.time(k))
    }

    /// Same horizon with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        Self {
            horizon: self.horizon,
            steps: self.steps * factor.max(1),
        }
    }

    /// Node index `k` and fraction in `[0, 1)` such that `t = t_k + frac * h`.
    /// Times within 1e-9 steps of a node snap to it, so node queries are exact.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let s = (t / self.step()).clamp(0.0, self.steps as f64);
        let nearest = s.round();
        if (s - nearest).abs() < 1e-9 {
            return (nearest as usize, 0.0);
        }
        let k = (s.floor() as usize).min(self.steps - 1);
        (k, s - k as f64)
    }

    /// Index of the node closest to `t`.
    pub fn nearest_node(&self, t: f64) -> usize {
        ((t / self.step()).round().max(0.0) as usize).min(self.steps)
    }
}

#[derive(Debug, Clone, PartialEq)]
enum SignalData {
    Constant(DMatrix<f64>),
    Sampled {
        grid: TimeGrid,
        nodes: Vec<DMatrix<f64>>,
    },
}

/// Deterministic matrix-valued function of time.
///
/// Sampled signals are exact at grid nodes and linearly interpolated
/// between them.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSignal {
    rows: usize,
    cols: usize,
    data: SignalData,
}

impl MatrixSignal {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: SignalData::Constant(m),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn sampled(grid: TimeGrid, nodes: Vec<DMatrix<f64>>) -> Result<Self> {
        if nodes.len() != grid.node_count() {
            return Err(Error::PathLength {
                name: "signal",
                expected: grid.node_count(),
                found: nodes.len(),
            });
        }
        let (rows, cols) = nodes[0].shape();
        if let Some(bad) = nodes.iter().find(|m| m.shape() != (rows, cols)) {
            return Err(Error::Dimension {
                field: "signal".into(),
                expected: format!("{rows}x{cols}"),
                found: format!("{}x{}", bad.nrows(), bad.ncols()),
            });
        }
        Ok(Self {
            rows,
            cols,
            data: SignalData::Sampled { grid, nodes },
        })
    }

    /// Evaluate `f` at every node of `grid` and store the result.
    pub fn from_fn(grid: TimeGrid, mut f: impl FnMut(usize) -> DMatrix<f64>) -> Result<Self> {
        Self::sampled(grid, (0..grid.node_count()).map(&mut f).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.data, SignalData::Constant(_))
    }

    /// The constant value, if this signal is constant.
    pub fn as_constant(&self) -> Option<&DMatrix<f64>> {
        match &self.data {
            SignalData::Constant(m) => Some(m),
            SignalData::Sampled { .. } => None,
        }
    }

    pub fn node_values(&self) -> Option<&[DMatrix<f64>]> {
        match &self.data {
            SignalData::Constant(_) => None,
            SignalData::Sampled { nodes, .. } => Some(nodes),
        }
    }

    /// Value at node `k`. Constant signals ignore `k`.
    pub fn node(&self, k: usize) -> &DMatrix<f64> {
        match &self.data {
            SignalData::Constant(m) => m,
            SignalData::Sampled { nodes, .. } => &nodes[k.min(nodes.len() - 1)],
        }
    }

    /// Value at time `t`: exact at nodes, linear in between.
    pub fn at(&self, t: f64) -> Cow<'_, DMatrix<f64>> {
        match &self.data {
            SignalData::Constant(m) => Cow::Borrowed(m),
            SignalData::Sampled { grid, nodes } => {
                let (k, frac) = grid.locate(t);
                if frac == 0.0 {
                    Cow::Borrowed(&nodes[k])
                } else {
                    Cow::Owned(&nodes[k] * (1.0 - frac) + &nodes[k + 1] * frac)
                }
            }
        }
    }

    /// Column vector view of node `k` for `n x 1` signals.
    pub fn node_vector(&self, k: usize) -> DVector<f64> {
        self.node(k).column(0).into_owned()
    }

    /// Number of distinct node evaluations needed to cover `grid`.
    pub(crate) fn distinct_nodes(&self, grid: &TimeGrid) -> usize {
        if self.is_constant() {
            1
        } else {
            grid.node_count()
        }
    }

    /// Largest Frobenius norm over the stored values.
    pub fn max_norm(&self) -> f64 {
        match &self.data {
            SignalData::Constant(m) => m.norm(),
            SignalData::Sampled { nodes, .. } => nodes.iter().map(|m| m.norm()).fold(0.0, f64::max),
        }
    }
}

impl From<DMatrix<f64>> for MatrixSignal {
    fn from(m: DMatrix<f64>) -> Self {
        Self::constant(m)
    }
}

/// Problem dimensions: state `n`, disturbance `m`, control `s`,
/// observation / correlated noise `r`, independent noise `p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub r: usize,
    pub p: usize,
}

/// Coefficients and initial data of the partially observed system
///
/// ```text
/// dx = (A x + B1 v + B2 u + b) dt + C dW + D dW~,   z = [Q x; N1 u]
/// dy = (E x + beta) dt + F dW,                      y(0) = 0
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub a: MatrixSignal,
    pub b1: MatrixSignal,
    pub b2: MatrixSignal,
    pub c: MatrixSignal,
    pub d: MatrixSignal,
    pub b: MatrixSignal,
    pub e: MatrixSignal,
    pub f: MatrixSignal,
    pub beta: MatrixSignal,
    pub q: MatrixSignal,
    pub n1: MatrixSignal,
    pub gamma: f64,
    pub x0: DVector<f64>,
    pub xhat0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
}

impl SystemModel {
    /// Start a model from the required coefficients. Optional terms default
    /// to zero (`D` is `n x 0`) and `xhat0` to `x0`.
    #[allow(clippy::too_many_arguments)]
    pub fn builder(
        a: impl Into<MatrixSignal>,
        b1: impl Into<MatrixSignal>,
        b2: impl Into<MatrixSignal>,
        c: impl Into<MatrixSignal>,
        e: impl Into<MatrixSignal>,
        f: impl Into<MatrixSignal>,
        q: impl Into<MatrixSignal>,
        n1: impl Into<MatrixSignal>,
    ) -> ModelBuilder {
        ModelBuilder {
            a: a.into(),
            b1: b1.into(),
            b2: b2.into(),
            c: c.into(),
            e: e.into(),
            f: f.into(),
            q: q.into(),
            n1: n1.into(),
            d: None,
            b: None,
            beta: None,
            gamma: 1.0,
            x0: None,
            xhat0: None,
            sigma0: None,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            n: self.a.rows(),
            m: self.b1.cols(),
            s: self.b2.cols(),
            r: self.c.cols(),
            p: self.d.cols(),
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    /// Checks every field's shape against `(n, m, s, r, p)`.
    pub fn check_dimensions(&self) -> Result<()> {
        let Dims { n, m, s, r, p } = self.dims();
        let expect = |field: &str, shape: (usize, usize), want: (usize, usize)| {
            if shape == want {
                Ok(())
            } else {
                Err(Error::Dimension {
                    field: field.to_string(),
                    expected: format!("{}x{}", want.0, want.1),
                    found: format!("{}x{}", shape.0, shape.1),
                })
            }
        };
        expect("A", self.a.shape(), (n, n))?;
        expect("B1", self.b1.shape(), (n, m))?;
        expect("B2", self.b2.shape(), (n, s))?;
        expect("C", self.c.shape(), (n, r))?;
        expect("D", self.d.shape(), (n, p))?;
        expect("b", self.b.shape(), (n, 1))?;
        expect("E", self.e.shape(), (r, n))?;
        expect("F", self.f.shape(), (r, r))?;
        expect("beta", self.beta.shape(), (r, 1))?;
        expect("Q", self.q.shape(), (n, n))?;
        expect("N1", self.n1.shape(), (s, s))?;
        expect("x0", (self.x0.len(), 1), (n, 1))?;
        expect("xhat0", (self.xhat0.len(), 1), (n, 1))?;
        expect("Sigma0", self.sigma0.shape(), (n, n))?;
        Ok(())
    }

    /// Runs every standing-assumption check on `grid`.
    pub fn validate(&self, grid: &TimeGrid) -> ValidationReport {
        self.validate_with(grid, &ValidationOptions::default())
    }

    pub fn validate_with(&self, grid: &TimeGrid, opts: &ValidationOptions) -> ValidationReport {
        let mut checks = Vec::new();
        let dims_ok = self.check_dimensions();
        checks.push(Check {
            name: "dimensions",
            assumption: None,
            passed: dims_ok.is_ok(),
            worst_node: 0,
            worst_value: if dims_ok.is_ok() { 0.0 } else { 1.0 },
            threshold: 0.0,
            detail: dims_ok.err().map(|e| e.to_string()).unwrap_or_default(),
        });
        if !checks[0].passed {
            return ValidationReport { checks };
        }

        checks.push(Check {
            name: "gamma positive",
            assumption: None,
            passed: self.gamma.is_finite() && self.gamma > 0.0,
            worst_node: 0,
            worst_value: self.gamma,
            threshold: 0.0,
            detail: String::new(),
        });

        let signals: [(&str, &MatrixSignal); 11] = [
            ("A", &self.a),
            ("B1", &self.b1),
            ("B2", &self.b2),
            ("C", &self.c),
            ("D", &self.d),
            ("b", &self.b),
            ("E", &self.e),
            ("F", &self.f),
            ("beta", &self.beta),
            ("Q", &self.q),
            ("N1", &self.n1),
        ];
        let mut bad_finite = None;
        for (name, sig) in signals {
            for k in 0..sig.distinct_nodes(grid) {
                if sig.node(k).iter().any(|v| !v.is_finite()) && bad_finite.is_none() {
                    bad_finite = Some((name, k));
                }
            }
        }
        let initial_finite = self
            .x0
            .iter()
            .chain(self.xhat0.iter())
            .chain(self.sigma0.iter())
            .all(|v| v.is_finite());
        checks.push(Check {
            name: "bounded coefficients",
            assumption: Some("coefficient boundedness"),
            passed: bad_finite.is_none() && initial_finite,
            worst_node: bad_finite.map(|(_, k)| k).unwrap_or(0),
            worst_value: if bad_finite.is_none() && initial_finite {
                0.0
            } else {
                f64::INFINITY
            },
            threshold: 0.0,
            detail: bad_finite
                .map(|(name, _)| format!("non-finite entry in {name}"))
                .unwrap_or_else(|| {
                    if initial_finite {
                        String::new()
                    } else {
                        "non-finite initial data".into()
                    }
                }),
        });

        let (worst_node, worst_cond) = worst_over(&self.f, grid, condition_number);
        checks.push(Check {
            name: "F invertible",
            assumption: Some("nondegenerate observation noise"),
            passed: worst_cond < opts.max_f_condition,
            worst_node,
            worst_value: worst_cond,
            threshold: opts.max_f_condition,
            detail: "condition number of F".into(),
        });

        let (worst_node, residual) = worst_over(&self.n1, grid, |n1| {
            let gram = n1.transpose() * n1;
            (gram - DMatrix::identity(n1.ncols(), n1.ncols())).amax()
        });
        checks.push(Check {
            name: "N1 orthonormal columns",
            assumption: Some("orthonormal control weighting"),
            passed: residual <= opts.orthonormal_tol,
            worst_node,
            worst_value: residual,
            threshold: opts.orthonormal_tol,
            detail: "max |N1^T N1 - I|".into(),
        });

        let asym = (&self.sigma0 - self.sigma0.transpose()).amax();
        checks.push(Check {
            name: "Sigma0 symmetric",
            assumption: None,
            passed: asym <= opts.psd_tol,
            worst_node: 0,
            worst_value: asym,
            threshold: opts.psd_tol,
            detail: "max |Sigma0 - Sigma0^T|".into(),
        });
        let min_eig = min_symmetric_eigenvalue(&self.sigma0);
        checks.push(Check {
            name: "Sigma0 positive semidefinite",
            assumption: None,
            passed: min_eig >= -opts.psd_tol,
            worst_node: 0,
            worst_value: min_eig,
            threshold: -opts.psd_tol,
            detail: "smallest eigenvalue of Sigma0".into(),
        });

        ValidationReport { checks }
    }

    /// Validate and turn the first failure into an error.
    pub fn ensure_valid(&self, grid: &TimeGrid) -> Result<()> {
        self.check_dimensions()?;
        let report = self.validate(grid);
        let result = match report.failures().next() {
            None => Ok(()),
            Some(check) => Err(Error::Assumption {
                assumption: check.assumption.unwrap_or(check.name),
                node: check.worst_node,
                detail: format!(
                    "{} = {:.3e} (limit {:.3e})",
                    check.detail, check.worst_value, check.threshold
                ),
            }),
        };
        result
    }
}

/// Accumulates optional fields before a [`SystemModel`] is assembled.
#[derive(Debug, Clone)]
pub struct ModelBuilder {
    a: MatrixSignal,
    b1: MatrixSignal,
    b2: MatrixSignal,
    c: MatrixSignal,
    e: MatrixSignal,
    f: MatrixSignal,
    q: MatrixSignal,
    n1: MatrixSignal,
    d: Option<MatrixSignal>,
    b: Option<MatrixSignal>,
    beta: Option<MatrixSignal>,
    gamma: f64,
    x0: Option<DVector<f64>>,
    xhat0: Option<DVector<f64>>,
    sigma0: Option<DMatrix<f64>>,
}

impl ModelBuilder {
    pub fn d(mut self, d: impl Into<MatrixSignal>) -> Self {
        self.d = Some(d.into());
        self
    }

    pub fn affine(mut self, b: impl Into<MatrixSignal>) -> Self {
        self.b = Some(b.into());
        self
    }

    pub fn beta(mut self, beta: impl Into<MatrixSignal>) -> Self {
        self.beta = Some(beta.into());
        self
    }

    pub fn gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn x0(mut self, x0: DVector<f64>) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn xhat0(mut self, xhat0: DVector<f64>) -> Self {
        self.xhat0 = Some(xhat0);
        self
    }

    pub fn sigma0(mut self, sigma0: DMatrix<f64>) -> Self {
        self.sigma0 = Some(sigma0);
        self
    }

    pub fn build(self) -> Result<SystemModel> {
        let n = self.a.rows();
        let r = self.c.cols();
        let x0 = self.x0.unwrap_or_else(|| DVector::zeros(n));
        let model = SystemModel {
            d: self.d.unwrap_or_else(|| MatrixSignal::zeros(n, 0)),
            b: self.b.unwrap_or_else(|| MatrixSignal::zeros(n, 1)),
            beta: self.beta.unwrap_or_else(|| MatrixSignal::zeros(r, 1)),
            xhat0: self.xhat0.unwrap_or_else(|| x0.clone()),
            sigma0: self.sigma0.unwrap_or_else(|| DMatrix::zeros(n, n)),
            x0,
            gamma: self.gamma,
            a: self.a,
            b1: self.b1,
            b2: self.b2,
            c: self.c,
            e: self.e,
            f: self.f,
            q: self.q,
            n1: self.n1,
        };
        model.check_dimensions()?;
        Ok(model)
    }
}

/// Thresholds used by [`SystemModel::validate_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidationOptions {
    pub max_f_condition: f64,
    pub orthonormal_tol: f64,
    pub psd_tol: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            max_f_condition: 1e12,
            orthonormal_tol: 1e-10,
            psd_tol: 1e-10,
        }
    }
}

/// Outcome of one invariant check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub assumption: Option<&'static str>,
    pub passed: bool,
    pub worst_node: usize,
    pub worst_value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            let tag = c.assumption.map(|a| format!(" [{a}]")).unwrap_or_default();
            writeln!(
                f,
                "{} {}{}: worst {:.6e} at node {}{}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                tag,
                c.worst_value,
                c.worst_node,
                if c.detail.is_empty() {
                    String::new()
                } else {
                    format!(" ({})", c.detail)
                }
            )?;
        }
        Ok(())
    }
}

/// Largest value of `metric` over the nodes of `signal`.
fn worst_over(
    signal: &MatrixSignal,
    grid: &TimeGrid,
    metric: impl Fn(&DMatrix<f64>) -> f64,
) -> (usize, f64) {
    let mut worst = (0, f64::NEG_INFINITY);
    for k in 0..signal.distinct_nodes(grid) {
        let v = metric(signal.node(k));
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v > worst.1 {
            worst = (k, v);
        }
    }
    worst
}

/// 2-norm condition number; infinite for singular or empty-rank input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

pub(crate) fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar_model() -> ModelBuilder {
        let one = || DMatrix::from_element(1, 1, 1.0);
        SystemModel::builder(one() * 0.0, one(), one(), one(), one(), one(), one(), one())
    }

    #[test]
    fn grid_nodes_end_at_horizon() {
        let g = TimeGrid::new(20.0, 2000).unwrap();
        assert_eq!(g.time(2000), 20.0);
        assert!((g.step() - 0.01).abs() < 1e-15);
        let times: Vec<f64> = g.times().collect();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert!(TimeGrid::new(0.0, 10).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn sampled_signal_is_exact_at_nodes_and_linear_between() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let s = MatrixSignal::from_fn(g, |k| DMatrix::from_element(1, 1, k as f64)).unwrap();
        for k in 0..=4 {
            assert_eq!(s.at(g.time(k))[(0, 0)], k as f64);
        }
        assert!((s.at(0.375)[(0, 0)] - 1.5).abs() < 1e-12);
        assert_eq!(s.at(1.0)[(0, 0)], 4.0);
    }

    #[test]
    fn sampled_signal_rejects_wrong_length() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        assert!(MatrixSignal::sampled(g, vec![DMatrix::zeros(1, 1); 3]).is_err());
    }

    #[test]
    fn defaults_fill_optional_terms() {
        let m = scalar_model()
            .x0(DVector::from_element(1, 2.0))
            .build()
            .unwrap();
        assert_eq!(m.d.shape(), (1, 0));
        assert_eq!(m.dims().p, 0);
        assert_eq!(m.xhat0, m.x0);
        assert_eq!(m.sigma0, DMatrix::zeros(1, 1));
        assert_eq!(m.beta.as_constant().unwrap(), &DMatrix::zeros(1, 1));
    }

    #[test]
    fn dimension_mismatch_names_field() {
        let err = scalar_model()
            .affine(DMatrix::zeros(2, 1))
            .build()
            .unwrap_err();
        match err {
            Error::Dimension { field, .. } => assert_eq!(field, "b"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn scaled_n1_fails_orthonormality_with_residual_three() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let m = SystemModel::builder(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 2),
            one,
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 2.0,
        )
        .build()
        .unwrap();
        let g = TimeGrid::new(1.0, 10).unwrap();
        let report = m.validate(&g);
        assert!(!report.passed());
        let c = report.check("N1 orthonormal columns").unwrap();
        assert!(!c.passed);
        assert_eq!(c.assumption, Some("orthonormal control weighting"));
        assert!((c.worst_value - 3.0).abs() < 1e-12);
    }

    #[test]
    fn indefinite_sigma0_fails_psd() {
        let m = SystemModel::builder(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(1, 2),
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::identity(2, 2),
            DMatrix::identity(1, 1),
        )
        .sigma0(dmatrix![1.0, 0.0; 0.0, -0.5])
        .build()
        .unwrap();
        let report = m.validate(&TimeGrid::new(1.0, 1).unwrap());
        let c = report.check("Sigma0 positive semidefinite").unwrap();
        assert!(!c.passed);
        assert!((c.worst_value + 0.5).abs() < 1e-12);
    }

    #[test]
    fn singular_f_is_assumption_error() {
        let m = scalar_model().build().unwrap();
        let m = SystemModel {
            f: MatrixSignal::zeros(1, 1),
            ..m
        };
        let err = m
            .ensure_valid(&TimeGrid::new(1.0, 10).unwrap())
            .unwrap_err();
        match err {
            Error::Assumption { assumption, .. } => {
                assert_eq!(assumption, "nondegenerate observation noise")
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sampled_n1_reports_worst_node() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let n1 = MatrixSignal::from_fn(g, |k| {
            DMatrix::from_element(1, 1, if k == 3 { 1.5 } else { 1.0 })
        })
        .unwrap();
        let m = scalar_model().build().unwrap();
        let m = SystemModel { n1, ..m };
        let c = m
            .validate(&g)
            .check("N1 orthonormal columns")
            .cloned()
            .unwrap();
        assert!(!c.passed);
        assert_eq!(c.worst_node, 3);
    }
}
