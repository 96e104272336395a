//! JSON scenario files.
//!
//! Matrices are row-major nested arrays; vectors (`b`, `beta`, `x0`,
//! `xhat0`) may be flat arrays or single-column nested arrays. Omitted
//! optional fields take their defaults: `D` is `n x 0`, `b`, `beta` and
//! `Sigma0` are zero and `xhat0` equals `x0`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{MatrixSignal, SystemModel, TimeGrid};

/// The bundled quadrotor longitudinal-dynamics scenario.
pub const UAV_SCENARIO_JSON: &str = include_str!("../scenarios/uav.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum JsonMatrix {
    Nested(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl JsonMatrix {
    fn into_matrix(self, field: &str) -> Result<DMatrix<f64>> {
        match self {
            JsonMatrix::Flat(v) => Ok(DMatrix::from_column_slice(v.len(), 1, &v)),
            JsonMatrix::Nested(rows) => {
                let nrows = rows.len();
                let ncols = rows.first().map_or(0, Vec::len);
                if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
                    return Err(Error::Parse(format!(
                        "`{field}` is ragged: rows of length {ncols} and {}",
                        bad.len()
                    )));
                }
                Ok(DMatrix::from_row_iterator(
                    nrows,
                    ncols,
                    rows.into_iter().flatten(),
                ))
            }
        }
    }

    fn from_matrix(m: &DMatrix<f64>) -> Self {
        JsonMatrix::Nested(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    fn from_vector(v: &DVector<f64>) -> Self {
        JsonMatrix::Flat(v.iter().copied().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    horizon: f64,
    steps: usize,
    gamma: f64,
    #[serde(rename = "A")]
    a: JsonMatrix,
    #[serde(rename = "B1")]
    b1: JsonMatrix,
    #[serde(rename = "B2")]
    b2: JsonMatrix,
    #[serde(rename = "C")]
    c: JsonMatrix,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    d: Option<JsonMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<JsonMatrix>,
    #[serde(rename = "E")]
    e: JsonMatrix,
    #[serde(rename = "F")]
    f: JsonMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    beta: Option<JsonMatrix>,
    #[serde(rename = "Q")]
    q: JsonMatrix,
    #[serde(rename = "N1")]
    n1: JsonMatrix,
    x0: JsonMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    xhat0: Option<JsonMatrix>,
    #[serde(rename = "Sigma0", default, skip_serializing_if = "Option::is_none")]
    sigma0: Option<JsonMatrix>,
}

fn as_vector(m: DMatrix<f64>, field: &str) -> Result<DVector<f64>> {
    if m.ncols() != 1 {
        return Err(Error::Dimension {
            field: field.into(),
            expected: "column vector".into(),
            found: format!("{}x{}", m.nrows(), m.ncols()),
        });
    }
    Ok(m.column(0).into_owned())
}

impl ScenarioFile {
    fn into_model(self) -> Result<(SystemModel, TimeGrid)> {
        let grid = TimeGrid::new(self.horizon, self.steps)?;
        let a = self.a.into_matrix("A")?;
        let n = a.nrows();
        let c = self.c.into_matrix("C")?;
        let mut builder = SystemModel::builder(
            a,
            self.b1.into_matrix("B1")?,
            self.b2.into_matrix("B2")?,
            c,
            self.e.into_matrix("E")?,
            self.f.into_matrix("F")?,
            self.q.into_matrix("Q")?,
            self.n1.into_matrix("N1")?,
        )
        .gamma(self.gamma)
        .x0(as_vector(self.x0.into_matrix("x0")?, "x0")?);
        if let Some(d) = self.d {
            let d = d.into_matrix("D")?;
            // `[]` means no independent noise channel.
            let d = if d.is_empty() {
                DMatrix::zeros(n, 0)
            } else {
                d
            };
            builder = builder.d(d);
        }
        if let Some(b) = self.b {
            builder = builder.affine(b.into_matrix("b")?);
        }
        if let Some(beta) = self.beta {
            builder = builder.beta(beta.into_matrix("beta")?);
        }
        if let Some(xhat0) = self.xhat0 {
            builder = builder.xhat0(as_vector(xhat0.into_matrix("xhat0")?, "xhat0")?);
        }
        if let Some(s0) = self.sigma0 {
            builder = builder.sigma0(s0.into_matrix("Sigma0")?);
        }
        Ok((builder.build()?, grid))
    }

    fn from_model(model: &SystemModel, grid: &TimeGrid) -> Result<Self> {
        let constant = |sig: &MatrixSignal, field: &str| {
            sig.as_constant()
                .map(JsonMatrix::from_matrix)
                .ok_or_else(|| {
                    Error::Parse(format!(
                        "`{field}` is time-varying; only constant matrices can be saved"
                    ))
                })
        };
        let d = if model.d.cols() == 0 {
            None
        } else {
            Some(constant(&model.d, "D")?)
        };
        let column = |sig: &MatrixSignal, field: &str| -> Result<JsonMatrix> {
            let m = sig.as_constant().ok_or_else(|| {
                Error::Parse(format!(
                    "`{field}` is time-varying; only constant vectors can be saved"
                ))
            })?;
            Ok(JsonMatrix::from_vector(&m.column(0).into_owned()))
        };
        Ok(Self {
            horizon: grid.horizon(),
            steps: grid.steps(),
            gamma: model.gamma,
            a: constant(&model.a, "A")?,
            b1: constant(&model.b1, "B1")?,
            b2: constant(&model.b2, "B2")?,
            c: constant(&model.c, "C")?,
            d,
            b: Some(column(&model.b, "b")?),
            e: constant(&model.e, "E")?,
            f: constant(&model.f, "F")?,
            beta: Some(column(&model.beta, "beta")?),
            q: constant(&model.q, "Q")?,
            n1: constant(&model.n1, "N1")?,
            x0: JsonMatrix::from_vector(&model.x0),
            xhat0: Some(JsonMatrix::from_vector(&model.xhat0)),
            sigma0: Some(JsonMatrix::from_matrix(&model.sigma0)),
        })
    }
}

/// Parse a scenario without checking the standing assumptions.
pub fn parse_scenario_unchecked(json: &str) -> Result<(SystemModel, TimeGrid)> {
    let file: ScenarioFile = serde_json::from_str(json).map_err(|e| Error::Parse(e.to_string()))?;
    file.into_model()
}

/// Parse and validate a scenario.
pub fn parse_scenario(json: &str) -> Result<(SystemModel, TimeGrid)> {
    let (model, grid) = parse_scenario_unchecked(json)?;
    model.ensure_valid(&grid)?;
    Ok((model, grid))
}

/// Read, parse and validate a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<(SystemModel, TimeGrid)> {
    parse_scenario(&read(path.as_ref())?)
}

/// Read and parse a scenario file, leaving assumption checks to the caller.
pub fn load_scenario_unchecked(path: impl AsRef<Path>) -> Result<(SystemModel, TimeGrid)> {
    parse_scenario_unchecked(&read(path.as_ref())?)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn scenario_to_json(model: &SystemModel, grid: &TimeGrid) -> Result<String> {
    let file = ScenarioFile::from_model(model, grid)?;
    serde_json::to_string_pretty(&file).map_err(|e| Error::Parse(e.to_string()))
}

pub fn save_scenario(path: impl AsRef<Path>, model: &SystemModel, grid: &TimeGrid) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, scenario_to_json(model, grid)?).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// The bundled UAV scenario (T = 20 s, h = 0.01 s, gamma = 0.8).
pub fn uav_scenario() -> (SystemModel, TimeGrid) {
    parse_scenario(UAV_SCENARIO_JSON).expect("bundled UAV scenario is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uav_scenario_has_expected_shape() {
        let (m, g) = uav_scenario();
        let d = m.dims();
        assert_eq!((d.n, d.m, d.s, d.r, d.p), (4, 2, 2, 2, 0));
        assert_eq!(m.gamma, 0.8);
        assert_eq!(g.horizon(), 20.0);
        assert!((g.step() - 0.01).abs() < 1e-15);
        // B2 carries 1/m and 1/I_y for m = 2 kg, I_y = 0.005 kg m^2.
        assert_eq!(m.b2.node(0)[(1, 0)], 0.5);
        assert_eq!(m.b2.node(0)[(3, 1)], 200.0);
        assert_eq!(m.x0.as_slice(), &[0.5, 0.0, 0.1, 0.0]);
        assert_eq!(m.xhat0, m.x0);
        assert!(m.validate(&g).passed());
    }

    #[test]
    fn omitted_d_and_beta_default_to_zero() {
        let json = r#"{"horizon":1,"steps":10,"gamma":1,
            "A":[[0]],"B1":[[1]],"B2":[[1]],"C":[[1]],"E":[[1]],"F":[[1]],
            "Q":[[1]],"N1":[[1]],"x0":[1]}"#;
        let (m, _) = parse_scenario(json).unwrap();
        assert_eq!(m.d.shape(), (1, 0));
        assert_eq!(m.beta.as_constant().unwrap()[(0, 0)], 0.0);
        assert_eq!(m.b.as_constant().unwrap()[(0, 0)], 0.0);
    }

    #[test]
    fn singular_f_is_rejected() {
        let json = r#"{"horizon":1,"steps":10,"gamma":1,
            "A":[[0]],"B1":[[1]],"B2":[[1]],"C":[[1]],"E":[[1]],"F":[[0]],
            "Q":[[1]],"N1":[[1]],"x0":[1]}"#;
        let err = parse_scenario(json).unwrap_err();
        assert!(
            matches!(
                err,
                Error::Assumption {
                    assumption: "nondegenerate observation noise",
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn malformed_json_is_parse_error() {
        assert!(matches!(parse_scenario("{not json"), Err(Error::Parse(_))));
        let ragged = r#"{"horizon":1,"steps":10,"gamma":1,
            "A":[[0,1],[0]],"B1":[[1]],"B2":[[1]],"C":[[1]],"E":[[1]],"F":[[1]],
            "Q":[[1]],"N1":[[1]],"x0":[1]}"#;
        assert!(matches!(parse_scenario(ragged), Err(Error::Parse(_))));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_scenario("/nonexistent/scenario.json"),
            Err(Error::Io { .. })
        ));
    }
}
