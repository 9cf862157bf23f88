//! CSV and JSON records.
//!
//! CSV files start with a `# schema=1` comment line followed by a header.
//! Reals are written with 17 significant digits so that reading a file back
//! reproduces the in-memory values bit for bit.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::asymptotics::CalibrationCurve;
use crate::error::{Error, Result};
use crate::simulator::BinnedReliability;

pub const SCHEMA_VERSION: u32 = 1;

const CURVE_HEADER: [&str; 6] = ["p", "delta", "kind", "kappa", "gamma", "family"];
const RUN_HEADER: [&str; 4] = ["seed", "d", "n", "replica"];

/// Provenance of a simulated record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunTag {
    pub seed: u64,
    pub d: usize,
    pub n: usize,
    pub replica: usize,
}

/// One line of a curve CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub p: f64,
    pub delta: f64,
    pub kind: String,
    #[serde(default)]
    pub kappa: Option<f64>,
    pub gamma: f64,
    pub family: String,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub replica: Option<usize>,
}

impl CurveRow {
    pub fn tag(&self) -> Option<RunTag> {
        Some(RunTag {
            seed: self.seed?,
            d: self.d?,
            n: self.n?,
            replica: self.replica?,
        })
    }
}

/// Flatten a curve into rows, optionally tagged with simulation provenance.
pub fn curve_rows(curve: &CalibrationCurve, tag: Option<RunTag>) -> Vec<CurveRow> {
    curve
        .iter()
        .map(|(p, delta)| CurveRow {
            p,
            delta,
            kind: curve.kind.as_str().to_string(),
            kappa: curve.params.kappa,
            gamma: curve.params.gamma,
            family: curve.family.clone(),
            seed: tag.map(|t| t.seed),
            d: tag.map(|t| t.d),
            n: tag.map(|t| t.n),
            replica: tag.map(|t| t.replica),
        })
        .collect()
}

/// 17 significant digits in scientific form; parses back to the same bits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt_real(x: Option<f64>) -> String {
    x.map(fmt_real).unwrap_or_default()
}

fn fmt_opt<T: ToString>(x: Option<T>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

fn io_err(e: std::io::Error) -> Error {
    Error::InvalidArgument(format!("io: {e}"))
}

fn schema_line<W: Write>(out: &mut W) -> Result<()> {
    writeln!(out, "# schema={SCHEMA_VERSION}").map_err(io_err)
}

/// Incremental curve writer; rows are flushed as they are written so that
/// partial output survives a later failure.
pub struct CurveCsvWriter<W: Write> {
    inner: csv::Writer<W>,
    with_tags: bool,
}

impl<W: Write> CurveCsvWriter<W> {
    pub fn new(mut out: W, with_tags: bool) -> Result<Self> {
        schema_line(&mut out)?;
        let mut inner = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = CURVE_HEADER.to_vec();
        if with_tags {
            header.extend(RUN_HEADER);
        }
        inner.write_record(&header).map_err(csv_err)?;
        Ok(Self { inner, with_tags })
    }

    pub fn write_row(&mut self, row: &CurveRow) -> Result<()> {
        let mut rec = vec![
            fmt_real(row.p),
            fmt_real(row.delta),
            row.kind.clone(),
            fmt_opt_real(row.kappa),
            fmt_real(row.gamma),
            row.family.clone(),
        ];
        if self.with_tags {
            rec.extend([
                fmt_opt(row.seed),
                fmt_opt(row.d),
                fmt_opt(row.n),
                fmt_opt(row.replica),
            ]);
        }
        self.inner.write_record(&rec).map_err(csv_err)
    }

    pub fn write_rows(&mut self, rows: &[CurveRow]) -> Result<()> {
        rows.iter().try_for_each(|r| self.write_row(r))?;
        self.flush()
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner.flush().map_err(io_err)
    }
}

pub fn write_curve_csv<W: Write>(out: W, rows: &[CurveRow]) -> Result<()> {
    let with_tags = rows.iter().any(|r| r.tag().is_some());
    let mut w = CurveCsvWriter::new(out, with_tags)?;
    w.write_rows(rows)
}

/// Parse a curve CSV written by [`write_curve_csv`]. The schema line is
/// required.
pub fn read_curve_csv<R: Read>(mut input: R) -> Result<Vec<CurveRow>> {
    let mut text = String::new();
    input.read_to_string(&mut text).map_err(io_err)?;
    let first = text.lines().next().unwrap_or_default();
    if first.trim() != format!("# schema={SCHEMA_VERSION}") {
        return Err(Error::InvalidArgument(format!(
            "expected '# schema={SCHEMA_VERSION}' as first line, found '{first}'"
        )));
    }
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    reader
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

/// One bin of a reliability CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
    pub confidence: Option<f64>,
    pub accuracy: Option<f64>,
    pub kappa: Option<f64>,
    pub gamma: f64,
    pub family: String,
    pub seed: u64,
    pub d: usize,
    pub n: usize,
    pub replica: usize,
}

pub fn reliability_rows(
    table: &BinnedReliability,
    family: &str,
    kappa: Option<f64>,
    gamma: f64,
    tag: RunTag,
) -> Vec<ReliabilityRow> {
    (0..table.bins())
        .map(|k| ReliabilityRow {
            bin_lo: table.bin_edges[k],
            bin_hi: table.bin_edges[k + 1],
            count: table.bin_counts[k],
            confidence: table.avg_confidence[k],
            accuracy: table.avg_accuracy[k],
            kappa,
            gamma,
            family: family.to_string(),
            seed: tag.seed,
            d: tag.d,
            n: tag.n,
            replica: tag.replica,
        })
        .collect()
}

pub fn write_reliability_csv<W: Write>(mut out: W, rows: &[ReliabilityRow]) -> Result<()> {
    schema_line(&mut out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "bin_lo", "bin_hi", "count", "confidence", "accuracy", "kappa", "gamma", "family",
        "seed", "d", "n", "replica",
    ])
    .map_err(csv_err)?;
    for r in rows {
        w.write_record([
            fmt_real(r.bin_lo),
            fmt_real(r.bin_hi),
            r.count.to_string(),
            fmt_opt_real(r.confidence),
            fmt_opt_real(r.accuracy),
            fmt_opt_real(r.kappa),
            fmt_real(r.gamma),
            r.family.clone(),
            r.seed.to_string(),
            r.d.to_string(),
            r.n.to_string(),
            r.replica.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_reliability_csv<R: Read>(input: R) -> Result<Vec<ReliabilityRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    reader
        .deserialize()
        .map(|r| r.map_err(csv_err))
        .collect()
}

/// Write a schema-tagged CSV table of pre-formatted cells.
pub fn write_table<W: Write>(mut out: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    schema_line(&mut out)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err)
}

/// Wrap a payload as `{"schema": 1, "command": ..., ...payload}`.
pub fn json_record<T: Serialize>(command: &str, payload: &T) -> Result<Value> {
    let body = serde_json::to_value(payload)
        .map_err(|e| Error::InvalidArgument(format!("json: {e}")))?;
    let mut out = json!({ "schema": SCHEMA_VERSION, "command": command });
    match body {
        Value::Object(map) => {
            out.as_object_mut().unwrap().extend(map);
        }
        other => {
            out["data"] = other;
        }
    }
    Ok(out)
}
