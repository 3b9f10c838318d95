//! Flat key-value configuration files and CSV matrix I/O.
//!
//! Config files are `key = value` lines with `#` comments. Specs use the
//! keys `clusters`, `dof`, `mu`, `xi` (rows separated by `;`), and
//! `standardized`; structures add `structure` and optional `partition`.
//! All numeric output is written with 17 significant digits so determinism
//! is byte-testable.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::distribution::CTSpec;
use crate::error::{Error, Result};
use crate::identification::{ClusterStructure, Restriction};

/// Parsed flat key-value file.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    /// Parse `key = value` lines; `#` starts a comment, blank lines ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { map })
    }

    /// Insert or replace a key.
    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.map.insert(key.to_string(), value.into());
    }

    /// Raw value lookup.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    /// Value lookup, erroring when absent.
    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Parse(format!("missing key `{key}`")))
    }

    /// Parse a value of any `FromStr` type.
    pub fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Parse(format!("key `{key}`: cannot parse {raw:?}")))
    }

    /// Parse a boolean (`true`/`false`).
    pub fn parse_bool(&self, key: &str) -> Result<bool> {
        self.parse_value(key)
    }

    /// Comma-separated f64 list; `inf` allowed.
    pub fn parse_f64_list(&self, key: &str) -> Result<Vec<f64>> {
        parse_f64_list(self.require(key)?)
            .map_err(|e| Error::Parse(format!("key `{key}`: {e}")))
    }

    /// Comma-separated usize list.
    pub fn parse_usize_list(&self, key: &str) -> Result<Vec<usize>> {
        self.require(key)?
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("key `{key}`: bad integer {s:?}")))
            })
            .collect()
    }

    /// Render back to file format (sorted keys).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

fn parse_f64_list(raw: &str) -> std::result::Result<Vec<f64>, String> {
    raw.split(',')
        .map(|s| {
            let s = s.trim();
            if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("gaussian") {
                Ok(f64::INFINITY)
            } else {
                s.parse().map_err(|_| format!("bad number {s:?}"))
            }
        })
        .collect()
}

/// Format with 17 significant digits (round-trips f64 exactly).
pub fn format_g17(x: f64) -> String {
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    format!("{x:.16e}")
}

/// Build a [`CTSpec`] from keys `clusters`, `dof`, `mu`, `xi`,
/// `standardized` (optional, default false).
pub fn parse_spec(kv: &KeyValues) -> Result<CTSpec> {
    let sizes = kv.parse_usize_list("clusters")?;
    let dof = kv.parse_f64_list("dof")?;
    let mu = DVector::from_vec(kv.parse_f64_list("mu")?);
    let n: usize = sizes.iter().sum();
    let rows: Vec<Vec<f64>> = kv
        .require("xi")?
        .split(';')
        .map(|row| parse_f64_list(row).map_err(|e| Error::Parse(format!("key `xi`: {e}"))))
        .collect::<Result<_>>()?;
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Parse(format!("key `xi`: expected {n} rows of {n} entries")));
    }
    let xi = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    let standardized = match kv.get("standardized") {
        Some(v) => v
            .parse()
            .map_err(|_| Error::Parse(format!("key `standardized`: bad bool {v:?}")))?,
        None => false,
    };
    CTSpec::new(&sizes, &dof, mu, xi, standardized)
}

/// Serialize a spec to key-value text (17 significant digits).
pub fn spec_to_key_values(spec: &CTSpec) -> KeyValues {
    let mut kv = KeyValues::default();
    let join = |vals: Vec<String>| vals.join(",");
    kv.set(
        "clusters",
        join(spec.cluster_sizes().iter().map(|s| s.to_string()).collect()),
    );
    kv.set("dof", join(spec.dof().iter().map(|&v| format_g17(v)).collect()));
    kv.set("mu", join(spec.location().iter().map(|&v| format_g17(v)).collect()));
    let n = spec.n();
    let rows: Vec<String> = (0..n)
        .map(|i| join((0..n).map(|j| format_g17(spec.xi()[(i, j)])).collect()))
        .collect();
    kv.set("xi", rows.join(";"));
    kv.set("standardized", spec.standardized().to_string());
    kv
}

/// Build a [`ClusterStructure`] from `clusters`, `structure`
/// (`just|sym|block|block-asym`, default `just`) and optional `partition`.
pub fn parse_structure(kv: &KeyValues) -> Result<ClusterStructure> {
    let sizes = kv.parse_usize_list("clusters")?;
    let restriction = match kv.get("structure").unwrap_or("just") {
        "just" => Restriction::JustIdentified,
        "sym" => Restriction::SymmetricXi,
        "block" => Restriction::Block,
        "block-asym" => Restriction::BlockAsymmetric,
        other => {
            return Err(Error::Parse(format!(
                "structure must be just|sym|block|block-asym, got {other:?}"
            )))
        }
    };
    match kv.get("partition") {
        Some(_) => {
            let partition = kv.parse_usize_list("partition")?;
            ClusterStructure::with_partition(&sizes, restriction, &partition)
        }
        None => ClusterStructure::new(&sizes, restriction),
    }
}

/// Render a numeric matrix as CSV with a header row.
pub fn write_csv_matrix(headers: &[String], m: &DMatrix<f64>) -> Result<String> {
    if headers.len() != m.ncols() {
        return Err(Error::InvalidArgument(format!(
            "{} headers for {} columns",
            headers.len(),
            m.ncols()
        )));
    }
    let mut out = headers.join(",");
    out.push('\n');
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format_g17(m[(r, c)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Parse a numeric CSV with a header row into (headers, matrix).
pub fn read_csv_matrix(text: &str) -> Result<(Vec<String>, DMatrix<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty CSV".into()))?;
    let headers: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    let ncols = headers.len();
    let mut values = Vec::new();
    let mut nrows = 0usize;
    for (i, line) in lines.enumerate() {
        let row: Vec<f64> = line
            .split(',')
            .map(|s| {
                let s = s.trim();
                if s.eq_ignore_ascii_case("inf") {
                    Ok(f64::INFINITY)
                } else if s.eq_ignore_ascii_case("-inf") {
                    Ok(f64::NEG_INFINITY)
                } else if s.eq_ignore_ascii_case("nan") {
                    Ok(f64::NAN)
                } else {
                    s.parse::<f64>()
                        .map_err(|_| Error::Parse(format!("row {}: bad number {s:?}", i + 2)))
                }
            })
            .collect::<Result<_>>()?;
        if row.len() != ncols {
            return Err(Error::Parse(format!(
                "row {}: {} fields, header has {ncols}",
                i + 2,
                row.len()
            )));
        }
        values.extend(row);
        nrows += 1;
    }
    Ok((headers, DMatrix::from_row_slice(nrows, ncols, &values)))
}
