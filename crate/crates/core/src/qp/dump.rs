//! Plain-text serialization of a [`QpProblem`] for reproducing solver
//! failures offline.
//!
//! ```text
//! qp-dump v1
//! dims <d> <m_eq> <m_in>
//! P
//! <d rows of d values>
//! lin
//! <d values>
//! A_eq
//! <m_eq rows of d values>
//! b_eq
//! <m_eq values>
//! A_in
//! <m_in rows of d values>
//! b_in
//! <m_in values>
//! ```
//!
//! Values are written with `{:e}`, which round-trips `f64` exactly.

use std::fmt::Write;

use nalgebra::{DMatrix, DVector};

use super::QpProblem;
use crate::error::{Error, Result};

const MAGIC: &str = "qp-dump v1";

pub fn write_dump(problem: &QpProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(
        out,
        "dims {} {} {}",
        problem.dim(),
        problem.n_eq(),
        problem.n_in()
    );
    let row = |out: &mut String, vals: &mut dyn Iterator<Item = f64>| {
        let line: Vec<String> = vals.map(|v| format!("{v:e}")).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    };
    let matrix = |out: &mut String, name: &str, m: &DMatrix<f64>| {
        let _ = writeln!(out, "{name}");
        for r in 0..m.nrows() {
            row(out, &mut m.row(r).iter().copied());
        }
    };
    let vector = |out: &mut String, name: &str, v: &DVector<f64>| {
        let _ = writeln!(out, "{name}");
        if !v.is_empty() {
            row(out, &mut v.iter().copied());
        }
    };
    matrix(&mut out, "P", &problem.p);
    vector(&mut out, "lin", &problem.lin);
    matrix(&mut out, "A_eq", &problem.a_eq);
    vector(&mut out, "b_eq", &problem.b_eq);
    matrix(&mut out, "A_in", &problem.a_in);
    vector(&mut out, "b_in", &problem.b_in);
    out
}

pub fn parse_dump(text: &str) -> Result<QpProblem> {
    let bad = |msg: String| Error::Parse(format!("qp dump: {msg}"));
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some(MAGIC) {
        return Err(bad("missing header".into()));
    }
    let dims: Vec<usize> = lines
        .next()
        .and_then(|l| l.strip_prefix("dims "))
        .ok_or_else(|| bad("missing dims".into()))?
        .split_whitespace()
        .map(|v| v.parse().map_err(|e| bad(format!("dims: {e}"))))
        .collect::<Result<_>>()?;
    let [d, m_eq, m_in] = dims[..] else {
        return Err(bad("dims needs three values".into()));
    };

    let mut section = |name: &str, rows: usize, cols: usize| -> Result<Vec<f64>> {
        if lines.next() != Some(name) {
            return Err(bad(format!("expected section {name}")));
        }
        let mut vals = Vec::with_capacity(rows * cols);
        let line_count = if cols == 0 { 0 } else { rows };
        for _ in 0..line_count {
            let line = lines
                .next()
                .ok_or_else(|| bad(format!("{name}: truncated")))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|e| bad(format!("{name}: {e}"))))
                .collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(bad(format!(
                    "{name}: expected {cols} values, got {}",
                    row.len()
                )));
            }
            vals.extend(row);
        }
        Ok(vals)
    };

    let p = section("P", d, d)?;
    let lin = section("lin", 1, d)?;
    let a_eq = section("A_eq", m_eq, d)?;
    let b_eq = section("b_eq", 1, m_eq)?;
    let a_in = section("A_in", m_in, d)?;
    let b_in = section("b_in", 1, m_in)?;
    Ok(QpProblem {
        p: DMatrix::from_row_slice(d, d, &p),
        lin: DVector::from_vec(lin),
        a_eq: DMatrix::from_row_slice(m_eq, d, &a_eq),
        b_eq: DVector::from_vec(b_eq),
        a_in: DMatrix::from_row_slice(m_in, d, &a_in),
        b_in: DVector::from_vec(b_in),
    })
}
