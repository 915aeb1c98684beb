//! File formats: path CSV (`t,v0,...`), trajectory and study tables, and
//! JSON reports. Every file is written through a temporary sibling and
//! renamed into place, so it is either complete or absent.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use proxsweep_core::experiments::{OrderStudy, StudyResult};
use proxsweep_core::explicit::{SweepProblem, Trajectory};
use proxsweep_core::paths::{PLPath, TimeGrid};
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

/// Round-trip exact: 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("temporary file in {}", dir.display()))?;
    tmp.write_all(bytes).with_context(|| format!("writing {}", path.display()))?;
    tmp.as_file().sync_all().with_context(|| format!("syncing {}", path.display()))?;
    tmp.persist(path).map_err(|e| e.error).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn csv_bytes(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).context("csv header")?;
    for r in rows {
        w.write_record(&r).context("csv row")?;
    }
    w.into_inner().map_err(|e| anyhow!("csv flush: {e}"))
}

pub fn path_csv(p: &PLPath) -> Result<Vec<u8>> {
    let mut header = vec!["t".to_string()];
    header.extend((0..p.dim()).map(|i| format!("v{i}")));
    let rows = p.grid().nodes().iter().enumerate().map(|(k, &t)| {
        let mut r = vec![num(t)];
        r.extend(p.value(k).iter().map(|v| num(*v)));
        r
    });
    csv_bytes(&header, rows)
}

pub fn parse_path_csv(text: &str) -> Result<PLPath> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = rd.headers().context("csv header")?.clone();
    let dim = header.len().saturating_sub(1);
    if dim == 0 || &header[0] != "t" || (1..header.len()).any(|i| header[i] != *format!("v{}", i - 1)) {
        return Err(anyhow!(
            "expected header t,v0,...,v{{d-1}}, found {}",
            header.iter().collect::<Vec<_>>().join(",")
        ));
    }
    let mut nodes = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.with_context(|| format!("row {}", i + 2))?;
        if rec.len() != dim + 1 {
            return Err(anyhow!("row {}: expected {} fields, found {}", i + 2, dim + 1, rec.len()));
        }
        let parse = |s: &str| s.parse::<f64>().with_context(|| format!("row {}: `{s}`", i + 2));
        nodes.push(parse(&rec[0])?);
        for f in rec.iter().skip(1) {
            values.push(parse(f)?);
        }
    }
    let grid = TimeGrid::new(nodes).context("time nodes")?;
    PLPath::new(grid, dim, values).context("path values")
}

pub fn read_path_csv(path: &Path) -> Result<PLPath> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_path_csv(&text).with_context(|| path.display().to_string())
}

/// `t, x*, xi*, active, G, B, xidot_norm, vi_residual`, one row per node.
/// Step diagnostics sit on the node that ends the step; the first row leaves them empty.
pub fn trajectory_csv(prob: &SweepProblem, traj: &Trajectory) -> Result<Vec<u8>> {
    let n = traj.x.dim();
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("x{i}")));
    header.extend((0..n).map(|i| format!("xi{i}")));
    header.extend(["active", "G", "B", "xidot_norm", "vi_residual"].map(String::from));
    let grid = traj.x.grid();
    let rows = grid.nodes().iter().enumerate().map(|(k, &t)| {
        let mut r = vec![num(t)];
        r.extend(traj.x.value(k).iter().map(|v| num(*v)));
        r.extend(traj.xi.value(k).iter().map(|v| num(*v)));
        let level = prob.cons.value(traj.x.value(k), prob.w.value(k));
        match k.checked_sub(1).map(|j| &traj.steps[j]) {
            Some(s) => r.extend([
                u8::from(s.active).to_string(),
                num(level),
                num(s.b),
                num(s.xidot_norm),
                num(s.vi_residual),
            ]),
            None => r.extend([String::new(), num(level), String::new(), String::new(), String::new()]),
        }
        r
    });
    csv_bytes(&header, rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn study_csv(res: &StudyResult) -> Result<Vec<u8>> {
    let header = ["scale", "input_distance", "output_distance", "ratio", "pointwise_margin", "error"].map(String::from);
    let rows = res.rows.iter().map(|r| {
        vec![
            num(r.scale),
            num(r.input_distance),
            num(r.output_distance),
            opt(r.ratio),
            opt(r.pointwise_margin),
            r.error.clone().unwrap_or_default(),
        ]
    });
    csv_bytes(&header, rows)
}

pub fn order_csv(res: &OrderStudy) -> Result<Vec<u8>> {
    let header = ["steps", "sup_error", "w11_error", "sup_order", "w11_order"].map(String::from);
    let rows = (0..res.steps.len()).map(|i| {
        let prev = |o: &[Option<f64>]| if i == 0 { None } else { o[i - 1] };
        vec![
            res.steps[i].to_string(),
            num(res.sup_errors[i]),
            num(res.w11_errors[i]),
            opt(prev(&res.sup_orders)),
            opt(prev(&res.w11_orders)),
        ]
    });
    csv_bytes(&header, rows)
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: u32,
    command: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON with `schema_version` and `command` ahead of the body's fields.
pub fn report_json<T: Serialize>(command: &str, body: &T) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(&Versioned { schema_version: SCHEMA_VERSION, command, body }).context("serializing report")?;
    v.push(b'\n');
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_csv_round_trips_exactly() {
        let g = TimeGrid::new(vec![0.0, 0.1, 0.35, 1.0]).unwrap();
        let p = PLPath::from_fn(g, 2, |t, o| {
            o[0] = (3.0 * t).sin();
            o[1] = 1.0 / 3.0 + t;
        });
        let bytes = path_csv(&p).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("t,v0,v1\n"));
        assert_eq!(parse_path_csv(&text).unwrap(), p);
    }

    #[test]
    fn path_csv_rejects_bad_input() {
        assert!(parse_path_csv("time,v0\n0,1\n1,2\n").is_err());
        assert!(parse_path_csv("t,v0\n0,1\n1\n").is_err());
        assert!(parse_path_csv("t,v0\n0,1\n1,abc\n").is_err());
        assert!(parse_path_csv("t,v0\n0,1\n0,2\n").is_err());
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.txt");
        write_atomic(&p, b"first").unwrap();
        write_atomic(&p, b"second").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"second");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn report_carries_schema_version() {
        #[derive(Serialize)]
        struct B {
            x: f64,
        }
        let v: serde_json::Value = serde_json::from_slice(&report_json("solve", &B { x: 1.5 }).unwrap()).unwrap();
        assert_eq!(v["schema_version"], 1);
        assert_eq!(v["command"], "solve");
        assert_eq!(v["x"], 1.5);
    }
}
