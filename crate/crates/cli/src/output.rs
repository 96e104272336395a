//! CSV writers. Floats use Rust's shortest round-trip formatting, so
//! identical inputs give byte-identical files.

use std::path::Path;

use h2hinf_core::evaluate::CheckRow;
use h2hinf_core::simulate::{PathSummary, SimResult};
use h2hinf_core::synthesis::{AffinePair, GainSchedule, RiccatiPair};
use h2hinf_core::{MatrixSignal, TimeGrid};
use nalgebra::DVector;

pub type CsvResult = Result<(), String>;

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>, String> {
    csv::Writer::from_path(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn finish(mut w: csv::Writer<std::fs::File>, path: &Path) -> CsvResult {
    w.flush().map_err(|e| format!("{}: {e}", path.display()))
}

fn write_row(w: &mut csv::Writer<std::fs::File>, row: &[String], path: &Path) -> CsvResult {
    w.write_record(row)
        .map_err(|e| format!("{}: {e}", path.display()))
}

/// Header names `{name}_{i}{j}` (1-based) for every entry, row-major.
fn matrix_header(name: &str, rows: usize, cols: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(rows * cols);
    for i in 1..=rows {
        for j in 1..=cols {
            out.push(format!("{name}_{i}{j}"));
        }
    }
    out
}

fn vector_header(name: &str, len: usize) -> Vec<String> {
    (1..=len).map(|i| format!("{name}{i}")).collect()
}

fn push_matrix(row: &mut Vec<String>, sig: &MatrixSignal, k: usize) {
    let m = sig.node(k);
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            row.push(m[(i, j)].to_string());
        }
    }
}

fn push_vector(row: &mut Vec<String>, v: &DVector<f64>) {
    row.extend(v.iter().map(|x| x.to_string()));
}

pub fn write_gains(path: &Path, grid: &TimeGrid, gains: &GainSchedule) -> CsvResult {
    let mut w = writer(path)?;
    let mut header = vec!["t".to_string()];
    header.extend(matrix_header("U", gains.u.rows(), gains.u.cols()));
    header.extend(vector_header("U0_", gains.u0.rows()));
    header.extend(matrix_header("V", gains.v.rows(), gains.v.cols()));
    header.extend(vector_header("V0_", gains.v0.rows()));
    write_row(&mut w, &header, path)?;
    for k in 0..grid.node_count() {
        let mut row = vec![grid.time(k).to_string()];
        for sig in [&gains.u, &gains.u0, &gains.v, &gains.v0] {
            push_matrix(&mut row, sig, k);
        }
        write_row(&mut w, &row, path)?;
    }
    finish(w, path)
}

pub fn write_riccati(
    path: &Path,
    grid: &TimeGrid,
    pair: &RiccatiPair,
    affine: &AffinePair,
) -> CsvResult {
    let mut w = writer(path)?;
    let n = pair.p1.rows();
    let mut header = vec!["t".to_string()];
    header.extend(matrix_header("P1", n, n));
    header.extend(matrix_header("P2", n, n));
    header.extend(vector_header("eta1_", n));
    header.extend(vector_header("eta2_", n));
    write_row(&mut w, &header, path)?;
    for k in 0..grid.node_count() {
        let mut row = vec![grid.time(k).to_string()];
        for sig in [&pair.p1, &pair.p2, &affine.eta1, &affine.eta2] {
            push_matrix(&mut row, sig, k);
        }
        write_row(&mut w, &row, path)?;
    }
    finish(w, path)
}

/// Columns `t, x1..xn, xhat1..xhatn, y1..yr, u1..us, v1..vm, z1..z(n+s)`.
pub fn write_trajectory(path: &Path, grid: &TimeGrid, res: &SimResult) -> CsvResult {
    let mut w = writer(path)?;
    let first = |v: &[DVector<f64>]| v.first().map_or(0, |x| x.len());
    let mut header = vec!["t".to_string()];
    header.extend(vector_header("x", first(&res.x)));
    header.extend(vector_header("xhat", first(&res.xhat)));
    header.extend(vector_header("y", first(&res.y)));
    header.extend(vector_header("u", first(&res.u)));
    header.extend(vector_header("v", first(&res.v)));
    header.extend(vector_header("z", first(&res.z)));
    write_row(&mut w, &header, path)?;
    for k in 0..res.node_count() {
        let mut row = vec![grid.time(k).to_string()];
        for v in [
            &res.x[k],
            &res.xhat[k],
            &res.y[k],
            &res.u[k],
            &res.v[k],
            &res.z[k],
        ] {
            push_vector(&mut row, v);
        }
        write_row(&mut w, &row, path)?;
    }
    finish(w, path)
}

pub fn write_summary(path: &Path, paths: &[(usize, PathSummary)], failures: &[usize]) -> CsvResult {
    let mut w = writer(path)?;
    let header = [
        "path",
        "seed",
        "j1",
        "j2",
        "disturbance_energy",
        "final_state_norm",
        "status",
    ];
    write_row(&mut w, &header.map(String::from), path)?;
    for (i, s) in paths {
        write_row(
            &mut w,
            &[
                i.to_string(),
                s.seed.to_string(),
                s.j1.to_string(),
                s.j2.to_string(),
                s.disturbance_energy.to_string(),
                s.final_state_norm.to_string(),
                "ok".to_string(),
            ],
            path,
        )?;
    }
    for i in failures {
        let mut row = vec![i.to_string()];
        row.extend(std::iter::repeat_n(String::new(), 5));
        row.push("failed".to_string());
        write_row(&mut w, &row, path)?;
    }
    finish(w, path)
}

pub fn write_report(path: &Path, rows: &[CheckRow]) -> CsvResult {
    let mut w = writer(path)?;
    write_row(
        &mut w,
        &["name", "estimate", "reference", "stderr", "pass"].map(String::from),
        path,
    )?;
    for r in rows {
        write_row(
            &mut w,
            &[
                r.name.clone(),
                r.estimate.to_string(),
                r.reference.to_string(),
                r.stderr.map_or_else(String::new, |s| s.to_string()),
                r.pass.to_string(),
            ],
            path,
        )?;
    }
    finish(w, path)
}
