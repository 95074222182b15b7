//! Dataset CSV/JSON files and small CSV helpers.
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ampc_core::data::DatasetRecord;
use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

pub fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|e| anyhow!("bad number {s:?}: {e}"))
}

pub fn dataset_header(n_x: usize, n_u: usize) -> String {
    let mut cols: Vec<String> = (0..n_x).map(|i| format!("x{i}")).collect();
    cols.extend((0..n_u).map(|i| format!("u{i}")));
    cols.extend(["V", "V_p", "V_xi", "solver_seed", "spread", "flag"].map(String::from));
    cols.join(",")
}

pub fn dataset_to_csv(records: &[DatasetRecord]) -> String {
    let (n_x, n_u) = records.first().map_or((0, 0), |r| (r.x.len(), r.u_mpc.len()));
    let mut out = dataset_header(n_x, n_u);
    out.push('\n');
    for r in records {
        let mut fields: Vec<String> = r.x.iter().chain(&r.u_mpc).map(|&v| fmt_f64(v)).collect();
        fields.extend([fmt_f64(r.v), fmt_f64(r.v_p), fmt_f64(r.v_xi), r.solver_seed.to_string(), fmt_f64(r.spread)]);
        fields.push(if r.flag { "1" } else { "0" }.into());
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn dataset_from_csv(text: &str) -> Result<Vec<DatasetRecord>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| anyhow!("empty dataset file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    let n_x = cols.iter().filter(|c| c.starts_with('x')).count();
    let n_u = cols.iter().filter(|c| c.starts_with('u')).count();
    if header != dataset_header(n_x, n_u) || n_x == 0 || n_u == 0 {
        bail!("unexpected dataset header {header:?}");
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            bail!("row {}: expected {} fields, got {}", i + 1, cols.len(), f.len());
        }
        let num = |k: usize| parse_f64(f[k]).with_context(|| format!("row {}", i + 1));
        let x = (0..n_x).map(num).collect::<Result<Vec<_>>>()?;
        let u_mpc = (n_x..n_x + n_u).map(num).collect::<Result<Vec<_>>>()?;
        let b = n_x + n_u;
        records.push(DatasetRecord {
            x,
            u_mpc,
            v: num(b)?,
            v_p: num(b + 1)?,
            v_xi: num(b + 2)?,
            solver_seed: f[b + 3].parse().with_context(|| format!("row {}: solver_seed", i + 1))?,
            spread: num(b + 4)?,
            flag: match f[b + 5] {
                "0" => false,
                "1" => true,
                other => bail!("row {}: bad flag {other:?}", i + 1),
            },
        });
    }
    Ok(records)
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("missing input {}", path.display()))?;
    dataset_from_csv(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Pretty JSON with a trailing newline; non-finite numbers become `null`.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("missing input {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Minimal CSV builder for numeric reports.
#[derive(Debug, Clone, Default)]
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut c = Self::default();
        c.text.push_str(&header.join(","));
        c.text.push('\n');
        c
    }

    pub fn row(&mut self, fields: &[String]) {
        let _ = writeln!(self.text, "{}", fields.join(","));
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(x: f64, flag: bool) -> DatasetRecord {
        DatasetRecord {
            x: vec![x, -x / 3.0],
            u_mpc: vec![if flag { f64::NAN } else { 0.1 + x }],
            v: 1.0 / 3.0,
            v_p: 0.25,
            v_xi: 1.0 / 3.0 - 0.25,
            solver_seed: u64::MAX - 5,
            spread: 1e-300,
            flag,
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let recs = vec![record(0.1, false), record(std::f64::consts::PI, true), record(-7.25e-12, false)];
        let text = dataset_to_csv(&recs);
        assert!(text.starts_with("x0,x1,u0,V,V_p,V_xi,solver_seed,spread,flag\n"));
        let back = dataset_from_csv(&text).unwrap();
        for (a, b) in recs.iter().zip(&back) {
            for (p, q) in a.x.iter().chain(&a.u_mpc).zip(b.x.iter().chain(&b.u_mpc)) {
                assert_eq!(p.to_bits(), q.to_bits());
            }
            assert_eq!((a.v.to_bits(), a.v_p.to_bits(), a.v_xi.to_bits()), (b.v.to_bits(), b.v_p.to_bits(), b.v_xi.to_bits()));
            assert_eq!((a.solver_seed, a.flag, a.spread.to_bits()), (b.solver_seed, b.flag, b.spread.to_bits()));
        }
        assert_eq!(dataset_to_csv(&back), text);
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(dataset_from_csv("").is_err());
        assert!(dataset_from_csv("a,b\n1,2\n").is_err());
        let good = dataset_to_csv(&[record(0.5, false)]);
        let truncated = good.trim_end().rsplit_once(',').unwrap().0.to_string();
        assert!(dataset_from_csv(&truncated).is_err());
    }
}
