//! CP tensor files.
//!
//! A file is one JSON document:
//!
//! ```json
//! {
//!   "format_version": 1,
//!   "dims": [3, 2],
//!   "weights": [2.0],
//!   "factors": [
//!     [[1.0], [0.0], [0.0]],
//!     [[0.0], [1.0]]
//!   ]
//! }
//! ```
//!
//! Each factor is a list of `N_j` rows with one entry per term. Reals are
//! written with 17 significant digits so reading a written file reproduces
//! the tensor bit for bit. Non-finite entries may appear only as the strings
//! `"NaN"`, `"Infinity"` or `"-Infinity"`; they are reported as
//! [`Error::NonFinite`].

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::{CpTensor, Grid};

pub const FORMAT_VERSION: u64 = 1;

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

fn real_list(values: impl Iterator<Item = f64>) -> String {
    let items: Vec<String> = values.map(real).collect();
    format!("[{}]", items.join(", "))
}

/// Serializes `a` in the CP file format.
pub fn to_json_string(a: &CpTensor) -> String {
    let mut s = String::new();
    let dims: Vec<String> = a.grid().dims().iter().map(|n| n.to_string()).collect();
    let _ = writeln!(s, "{{");
    let _ = writeln!(s, "  \"format_version\": {FORMAT_VERSION},");
    let _ = writeln!(s, "  \"dims\": [{}],", dims.join(", "));
    let _ = writeln!(s, "  \"weights\": {},", real_list(a.weights().iter().copied()));
    let _ = writeln!(s, "  \"factors\": [");
    for (k, f) in a.factors().iter().enumerate() {
        let rows: Vec<String> = (0..f.nrows())
            .map(|i| format!("      {}", real_list(f.row(i).iter().copied())))
            .collect();
        let sep = if k + 1 < a.order() { "," } else { "" };
        let _ = writeln!(s, "    [\n{}\n    ]{sep}", rows.join(",\n"));
    }
    let _ = writeln!(s, "  ]");
    let _ = writeln!(s, "}}");
    s
}

/// Parses a CP tensor from the text of a CP file.
pub fn from_json_str(text: &str) -> Result<CpTensor> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::parse("document", e.to_string()))?;
    let obj = doc
        .as_object()
        .ok_or_else(|| Error::parse("document", "expected a JSON object"))?;
    for key in obj.keys() {
        if !matches!(key.as_str(), "format_version" | "dims" | "weights" | "factors") {
            return Err(Error::parse(key.clone(), "unknown field"));
        }
    }
    let field = |name: &str| obj.get(name).ok_or_else(|| Error::parse(name, "missing field"));

    let version = field("format_version")?
        .as_u64()
        .ok_or_else(|| Error::parse("format_version", "expected a non-negative integer"))?;
    if version != FORMAT_VERSION {
        return Err(Error::parse("format_version", format!("unsupported version {version}")));
    }

    let dims: Vec<usize> = array(field("dims")?, "dims")?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_u64()
                .filter(|&n| n > 0)
                .map(|n| n as usize)
                .ok_or_else(|| Error::parse(format!("dims[{i}]"), "expected a positive integer"))
        })
        .collect::<Result<_>>()?;
    let grid = Grid::new(dims).map_err(|e| Error::parse("dims", e.to_string()))?;

    let weights: Vec<f64> = array(field("weights")?, "weights")?
        .iter()
        .enumerate()
        .map(|(i, v)| number(v, &format!("weights[{i}]")))
        .collect::<Result<_>>()?;
    let r = weights.len();

    let factors_v = array(field("factors")?, "factors")?;
    if factors_v.len() != grid.order() {
        return Err(Error::parse(
            "factors",
            format!("expected {} factor matrices, found {}", grid.order(), factors_v.len()),
        ));
    }
    let mut factors = Vec::with_capacity(grid.order());
    for (k, fv) in factors_v.iter().enumerate() {
        let name = format!("factors[{k}]");
        let rows = array(fv, &name)?;
        let n = grid.len(k);
        if rows.len() != n {
            return Err(Error::parse(name, format!("expected {n} rows, found {}", rows.len())));
        }
        let mut m = DMatrix::zeros(n, r);
        for (i, row) in rows.iter().enumerate() {
            let rname = format!("factors[{k}][{i}]");
            let entries = array(row, &rname)?;
            if entries.len() != r {
                return Err(Error::parse(
                    rname,
                    format!("expected {r} columns (one per weight), found {}", entries.len()),
                ));
            }
            for (t, v) in entries.iter().enumerate() {
                m[(i, t)] = number(v, &format!("factors[{k}][{i}][{t}]"))?;
            }
        }
        factors.push(m);
    }
    CpTensor::new(grid, weights, factors)
}

fn array<'a>(v: &'a Value, name: &str) -> Result<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| Error::parse(name, "expected a list"))
}

fn number(v: &Value, name: &str) -> Result<f64> {
    match v {
        Value::Number(x) => x
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| Error::NonFinite(name.to_string())),
        Value::String(s) if matches!(s.as_str(), "NaN" | "Infinity" | "-Infinity" | "inf" | "-inf") => {
            Err(Error::NonFinite(name.to_string()))
        }
        _ => Err(Error::parse(name, "expected a number")),
    }
}

pub fn write_cp(a: &CpTensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_json_string(a))?;
    Ok(())
}

pub fn read_cp(path: impl AsRef<Path>) -> Result<CpTensor> {
    from_json_str(&fs::read_to_string(path)?)
}
