//! File formats shared with external models and generators.
//!
//! * dataset: CSV with header `id,f0,...,f{d-1},label`
//! * losses: CSV with header `id,loss`
//! * region masses: CSV with header `region,mass`
//! * run report: pretty-printed JSON with sorted keys
//!
//! Numbers are written in the shortest form that parses back to the same
//! value. Paths ending in `.gz` are gzip-compressed transparently.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::BaselineResult;
use crate::bound::BoundReport;
use crate::data::{Dataset, LabeledSample};
use crate::error::{Error, Result};
use crate::generator::RegionMass;
use crate::osyn::TrajectoryPoint;
use crate::scalar::Real;

pub const SCHEMA_VERSION: u32 = 1;

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

fn open_reader(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path)?;
    Ok(if is_gz(path) {
        Box::new(BufReader::new(GzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let file = BufWriter::new(File::create(path)?);
    if is_gz(path) {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(bytes)?;
        enc.finish()?.flush()?;
    } else {
        let mut file = file;
        file.write_all(bytes)?;
        file.flush()?;
    }
    Ok(())
}

fn csv_reader(path: &Path) -> Result<csv::Reader<Box<dyn Read>>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(open_reader(path)?))
}

fn parse_cell<T: Real>(cell: &str, line: u64, column: &str) -> Result<T> {
    let v: T = cell.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("column {column}: {cell:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("column {column}: non-finite value {cell:?}"),
        });
    }
    Ok(v)
}

fn record_line(r: &csv::StringRecord, fallback: u64) -> u64 {
    r.position().map_or(fallback, |p| p.line())
}

/// Dataset header for `dim` features.
pub fn dataset_header(dim: usize) -> Vec<String> {
    std::iter::once("id".to_string())
        .chain((0..dim).map(|j| format!("f{j}")))
        .chain(std::iter::once("label".to_string()))
        .collect()
}

pub fn parse_dataset<T: Real, R: Read>(reader: R) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    read_dataset_records(&mut rdr)
}

fn read_dataset_records<T: Real, R: Read>(rdr: &mut csv::Reader<R>) -> Result<Dataset<T>> {
    let mut records = rdr.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    };
    let cols: Vec<&str> = header.iter().collect();
    if cols.len() < 2 || cols[0] != "id" || cols[cols.len() - 1] != "label" {
        return Err(Error::Parse {
            line: 1,
            message: "header must be id,f0,...,label".into(),
        });
    }
    let dim = cols.len() - 2;
    let expected = dataset_header(dim);
    if cols.iter().zip(&expected).any(|(a, b)| a != b) {
        return Err(Error::Parse {
            line: 1,
            message: format!("header must be {}", expected.join(",")),
        });
    }
    let mut seen = HashSet::new();
    let mut data = Dataset::empty(dim);
    for (i, rec) in records.enumerate() {
        let fallback = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(fallback, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record_line(&rec, fallback);
        if rec.len() != dim + 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} columns, found {}", dim + 2, rec.len()),
            });
        }
        let id = rec[0].trim();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty id".into(),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate id {id:?}"),
            });
        }
        let features = (0..dim)
            .map(|j| parse_cell(&rec[j + 1], line, &expected[j + 1]))
            .collect::<Result<Vec<T>>>()?;
        let label = parse_cell(&rec[dim + 1], line, "label")?;
        data.push(LabeledSample::new(features, label).with_id(id))?;
    }
    Ok(data)
}

pub fn read_dataset<T: Real>(path: impl AsRef<Path>) -> Result<Dataset<T>> {
    read_dataset_records(&mut csv_reader(path.as_ref())?)
}

/// Serializes a dataset. Samples without ids get their row index.
pub fn format_dataset<T: Real>(data: &Dataset<T>) -> Result<String> {
    let mut out = dataset_header(data.dim()).join(",");
    out.push('\n');
    let mut seen = HashSet::new();
    for (i, s) in data.iter().enumerate() {
        let id = s.id.clone().unwrap_or_else(|| i.to_string());
        if id.is_empty() || id.contains([',', '"', '\n', '\r']) {
            return Err(Error::InvalidInput(format!("id {id:?} cannot be written")));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::InvalidInput(format!("duplicate id {id:?}")));
        }
        out.push_str(&id);
        for v in s.features.iter().chain(std::iter::once(&s.label)) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset<T: Real>(data: &Dataset<T>, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), format_dataset(data)?.as_bytes())
}

/// Reads an `id,loss` file, preserving row order.
pub fn read_losses<T: Real>(path: impl AsRef<Path>) -> Result<Vec<(String, T)>> {
    let mut rdr = csv_reader(path.as_ref())?;
    let mut records = rdr.records();
    let header = records
        .next()
        .transpose()
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .ok_or(Error::Parse {
            line: 1,
            message: "missing header".into(),
        })?;
    if header.iter().collect::<Vec<_>>() != ["id", "loss"] {
        return Err(Error::Parse {
            line: 1,
            message: "header must be id,loss".into(),
        });
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, rec) in records.enumerate() {
        let fallback = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map_or(fallback, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record_line(&rec, fallback);
        if rec.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 columns, found {}", rec.len()),
            });
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                line,
                message: "empty id".into(),
            });
        }
        let loss: T = parse_cell(&rec[1], line, "loss")?;
        if loss < T::zero() {
            return Err(Error::Parse {
                line,
                message: format!("negative loss {loss}"),
            });
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Parse {
                line,
                message: format!("duplicate id {id:?}"),
            });
        }
        out.push((id, loss));
    }
    Ok(out)
}

pub fn write_losses<T: Real>(losses: &[(String, T)], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("id,loss\n");
    for (id, l) in losses {
        out.push_str(id);
        out.push(',');
        out.push_str(&l.to_string());
        out.push('\n');
    }
    write_bytes(path.as_ref(), out.as_bytes())
}

/// Per-sample losses in dataset order. Every sample needs an id present in
/// `losses`.
pub fn join_losses<T: Real>(data: &Dataset<T>, losses: &[(String, T)]) -> Result<Vec<T>> {
    let map: HashMap<&str, T> = losses.iter().map(|(id, l)| (id.as_str(), *l)).collect();
    data.iter()
        .enumerate()
        .map(|(i, s)| {
            let id = s
                .id
                .as_deref()
                .ok_or_else(|| Error::Join(format!("row {i} has no id")))?;
            map.get(id).copied().ok_or_else(|| Error::Join(id.to_string()))
        })
        .collect()
}

pub fn write_mass<T: Real>(mass: &RegionMass<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("region,mass\n");
    for (i, p) in mass.proportions().iter().enumerate() {
        out.push_str(&format!("{i},{p}\n"));
    }
    write_bytes(path.as_ref(), out.as_bytes())
}

/// Reads a `region,mass` file written by [`write_mass`]. The sample count
/// is not stored and comes back as zero.
pub fn read_mass<T: Real>(path: impl AsRef<Path>) -> Result<RegionMass<T>> {
    let mut rdr = csv_reader(path.as_ref())?;
    let mut records = rdr.records();
    match records.next() {
        Some(Ok(h)) if h.iter().collect::<Vec<_>>() == ["region", "mass"] => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "header must be region,mass".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (i, rec) in records.enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        if rec.len() != 2 || rec[0].trim() != i.to_string() {
            return Err(Error::Parse {
                line,
                message: format!("expected row for region {i}"),
            });
        }
        out.push(parse_cell(&rec[1], line, "mass")?);
    }
    RegionMass::from_proportions(out, 0)
}

/// Generic CSV table with a header row.
pub fn write_table(header: &[&str], rows: &[Vec<String>], path: impl AsRef<Path>) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    write_bytes(path.as_ref(), out.as_bytes())
}

/// Formats an optional number for a CSV cell; missing values are empty.
pub fn cell(v: Option<f64>) -> String {
    v.filter(|x| x.is_finite()).map(|x| x.to_string()).unwrap_or_default()
}

/// Everything one CLI invocation produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: String,
    /// Effective configuration after defaults.
    pub config: Value,
    pub bound: Option<BoundReport>,
    pub baselines: Vec<BaselineResult>,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Per-iteration wall-clock seconds; only present when requested since
    /// it breaks byte-for-byte reproducibility.
    pub timings: Option<Vec<f64>>,
    pub valid: bool,
    pub reasons: Vec<String>,
    pub a_from_synthetic: bool,
    pub p_from_generator: bool,
    /// Command-specific tables.
    pub results: Value,
}

impl RunReport {
    pub fn new(command: impl Into<String>, config: Value) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.into(),
            config,
            bound: None,
            baselines: Vec::new(),
            trajectory: Vec::new(),
            timings: None,
            valid: true,
            reasons: Vec::new(),
            a_from_synthetic: false,
            p_from_generator: false,
            results: Value::Null,
        }
    }
}

/// Canonical JSON: object keys sorted, shortest round-trip floats, two-space
/// indentation, trailing newline.
pub fn to_canonical_json<S: Serialize>(value: &S) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

/// Fails on non-finite numbers, which serde_json would silently turn into
/// `null`.
pub fn write_report(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    for (name, v) in report_numbers(report) {
        if !v.is_finite() {
            return Err(Error::InvalidInput(format!("report field {name} is not finite")));
        }
    }
    write_bytes(path.as_ref(), to_canonical_json(report)?.as_bytes())
}

fn report_numbers(r: &RunReport) -> Vec<(&'static str, f64)> {
    let mut out = Vec::new();
    if let Some(b) = &r.bound {
        out.extend([
            ("bound.f_g", b.f_g),
            ("bound.eps_h", b.eps_h),
            ("bound.b", b.b),
            ("bound.d", b.d),
            ("bound.beta", b.beta),
            ("bound.a_hat", b.a_hat),
            ("bound.x_raw", b.x_raw),
        ]);
    }
    for b in &r.baselines {
        out.push(("baselines.estimate", b.estimate));
    }
    for t in &r.trajectory {
        out.push(("trajectory.objective", t.objective));
    }
    out
}

pub fn read_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let mut s = String::new();
    open_reader(path.as_ref())?.read_to_string(&mut s)?;
    Ok(serde_json::from_str(&s)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn header_only_is_empty() {
        let d: Dataset<f64> = parse_dataset("id,f0,f1,label\n".as_bytes()).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.dim(), 2);
    }

    #[test]
    fn single_row() {
        let d: Dataset<f64> = parse_dataset("id,f0,f1,label\na,0.5,1.0,2\n".as_bytes()).unwrap();
        let s = &d.samples()[0];
        assert_eq!(s.features, vec![0.5, 1.0]);
        assert_eq!(s.label, 2.0);
        assert_eq!(s.id.as_deref(), Some("a"));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let cases = [
            ("id,f0,label\na,1,0\nb,1\n", 3),
            ("id,f0,label\na,1,0\na,2,0\n", 3),
            ("id,f0,label\na,x,0\n", 2),
            ("id,f0,label\na,1,0\nb,NaN,0\n", 3),
            ("id,f0,label\na,inf,0\n", 2),
        ];
        for (text, want) in cases {
            match parse_dataset::<f64, _>(text.as_bytes()) {
                Err(Error::Parse { line, .. }) => assert_eq!(line, want, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(parse_dataset::<f64, _>("x,f0,label\n".as_bytes()).is_err());
        assert!(parse_dataset::<f64, _>("id,f1,label\n".as_bytes()).is_err());
    }

    #[test]
    fn random_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = crate::rng::rng(3);
        let samples = (0..1000)
            .map(|i| {
                let f = vec![r.random::<f64>() * 1e3 - 500.0, r.random::<f64>() * 1e-7];
                LabeledSample::new(f, r.random_range(0..5) as f64).with_id(format!("s{i}"))
            })
            .collect();
        let d = Dataset::new(2, samples).unwrap();
        for name in ["a.csv", "a.csv.gz"] {
            let p1 = dir.path().join(name);
            write_dataset(&d, &p1).unwrap();
            let back: Dataset<f64> = read_dataset(&p1).unwrap();
            assert_eq!(back, d);
            let p2 = dir.path().join(format!("b_{name}"));
            write_dataset(&back, &p2).unwrap();
            assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        }
    }

    #[test]
    fn loss_join() {
        let dir = tempfile::tempdir().unwrap();
        let d: Dataset<f64> = parse_dataset("id,f0,label\na,1,0\nb,2,1\n".as_bytes()).unwrap();
        let p = dir.path().join("l.csv");
        write_losses(&[("b".to_string(), 1.0), ("a".to_string(), 0.0)], &p).unwrap();
        let l = read_losses::<f64>(&p).unwrap();
        assert_eq!(join_losses(&d, &l).unwrap(), vec![0.0, 1.0]);
        match join_losses(&d, &l[..1]) {
            Err(Error::Join(id)) => assert_eq!(id, "a"),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "id,loss\na,0\na,1\n").unwrap();
        assert!(matches!(read_losses::<f64>(&p), Err(Error::Parse { line: 3, .. })));
        std::fs::write(&p, "id,loss\na,-1\n").unwrap();
        assert!(matches!(read_losses::<f64>(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn mass_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = RegionMass::from_proportions(vec![0.1, 0.2, 0.7], 10).unwrap();
        let p = dir.path().join("m.csv");
        write_mass(&m, &p).unwrap();
        assert_eq!(read_mass::<f64>(&p).unwrap().proportions(), m.proportions());
    }

    #[test]
    fn report_reserialization_is_byte_identical() {
        let mut r = RunReport::new("evaluate", serde_json::json!({"seed": 7, "delta1": 0.01, "b": 1.0}));
        r.baselines.push(BaselineResult {
            method: "bootstrap".into(),
            estimate: 0.1 + 0.2,
            resamples: Some(2000),
            delta: Some(0.21),
            g_star: None,
            seed: 3,
        });
        r.results = serde_json::json!({"z": [1.5e-300, 2.0], "a": null});
        let s1 = to_canonical_json(&r).unwrap();
        let back: RunReport = serde_json::from_str(&s1).unwrap();
        assert_eq!(back, r);
        assert_eq!(to_canonical_json(&back).unwrap(), s1);
        let v: Value = serde_json::from_str(&s1).unwrap();
        assert_eq!(to_canonical_json(&v).unwrap(), s1);
    }

    #[test]
    fn non_finite_report_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = RunReport::new("x", Value::Null);
        r.baselines.push(BaselineResult {
            method: "bootstrap".into(),
            estimate: f64::NAN,
            resamples: None,
            delta: None,
            g_star: None,
            seed: 0,
        });
        assert!(write_report(&r, dir.path().join("r.json")).is_err());
    }
}
