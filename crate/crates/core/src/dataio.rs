//! CSV and text files exchanged between pipeline stages.
//!
//! Lengths are written with 3 decimals (millimeters), so a record whose
//! fields are already on the millimeter grid survives a write/read cycle
//! unchanged. Readers accept only the exact expected header.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use csv::StringRecord;
use thiserror::Error;

use crate::boarding::PaxState;
use crate::scene::{Anchor, Point3};
use crate::visibility::{VisibilityMap, VisibilityState};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {msg}")]
    Csv { path: PathBuf, line: u64, msg: String },
    #[error("{path}: expected header `{expected}`, found `{found}`")]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },
    #[error("{path}: line {line}: cannot parse {column} from `{value}`")]
    Parse {
        path: PathBuf,
        line: u64,
        column: &'static str,
        value: String,
    },
    #[error("{path}: line {line}: {msg}")]
    Invalid { path: PathBuf, line: u64, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Rounds to the millimeter grid; also maps `-0.0` to `0.0`.
pub fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0 + 0.0
}

fn f3(v: f64) -> String {
    format!("{:.3}", v + 0.0)
}

fn f6(v: f64) -> String {
    format!("{:.6}", v + 0.0)
}

/// Position of a row inside a file, for error messages.
pub struct RowCtx<'a> {
    path: &'a Path,
    line: u64,
}

impl RowCtx<'_> {
    fn field<T: FromStr>(&self, rec: &StringRecord, idx: usize, column: &'static str) -> Result<T, DataError> {
        let raw = rec.get(idx).unwrap_or("");
        raw.trim().parse().map_err(|_| DataError::Parse {
            path: self.path.to_path_buf(),
            line: self.line,
            column,
            value: raw.to_string(),
        })
    }

    fn invalid(&self, msg: impl Into<String>) -> DataError {
        DataError::Invalid {
            path: self.path.to_path_buf(),
            line: self.line,
            msg: msg.into(),
        }
    }
}

/// A row type of one of the CSV files.
pub trait CsvRecord: Sized {
    const HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
    fn parse(rec: &StringRecord, ctx: &RowCtx) -> Result<Self, DataError>;
}

pub fn write_records<R: CsvRecord>(path: &Path, records: &[R]) -> Result<(), DataError> {
    write_records_with_header(path, R::HEADER, records.iter().map(|r| r.fields()))
}

fn write_records_with_header<I>(path: &Path, header: &[&str], rows: I) -> Result<(), DataError>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut line = header.join(",");
    line.push('\n');
    w.write_all(line.as_bytes()).map_err(io_err(path))?;
    for row in rows {
        line.clear();
        line.push_str(&row.join(","));
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn open_checked(path: &Path, accepted: &[&[&str]]) -> Result<(csv::Reader<File>, usize), DataError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let found: Vec<&str> = header.iter().collect();
    match accepted.iter().position(|h| *h == found.as_slice()) {
        Some(i) => Ok((reader, i)),
        None => Err(DataError::Header {
            path: path.to_path_buf(),
            expected: accepted[0].join(","),
            found: found.join(","),
        }),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> DataError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    DataError::Csv {
        path: path.to_path_buf(),
        line,
        msg: e.to_string(),
    }
}

pub fn read_records<R: CsvRecord>(path: &Path) -> Result<Vec<R>, DataError> {
    let (mut reader, _) = open_checked(path, &[R::HEADER])?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        out.push(R::parse(&rec, &RowCtx { path, line })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibilityRecord {
    pub x: f64,
    pub y: f64,
    pub height: f64,
    pub anchor_id: u8,
    /// 1 = LOS, 2 = OLOS, 3 = NLOS; non-receivable links are written as 3.
    pub visibility: u8,
    /// Present only when the file carries the `receivable` column.
    pub receivable: Option<bool>,
}

impl VisibilityRecord {
    /// State as far as the file can tell.
    pub fn state(&self) -> VisibilityState {
        match self.receivable {
            Some(false) => VisibilityState::NotReceivable,
            _ => VisibilityState::from_code(self.visibility).unwrap_or(VisibilityState::Nlos),
        }
    }
}

pub const VISIBILITY_HEADER: &[&str] = &["x", "y", "height", "anchor_id", "visibility"];
const VISIBILITY_HEADER_FLAGGED: &[&str] = &["x", "y", "height", "anchor_id", "visibility", "receivable"];

/// One record per (cell, anchor), cells in grid order, anchors in scene order.
pub fn visibility_records(map: &VisibilityMap, with_receivable: bool) -> Vec<VisibilityRecord> {
    let mut out = Vec::with_capacity(map.total());
    for cell in 0..map.grid.len() {
        let (x, y) = map.grid.cell_xy(cell);
        for (k, &anchor_id) in map.anchor_ids.iter().enumerate() {
            let state = map.states[k][cell];
            out.push(VisibilityRecord {
                x: round3(x),
                y: round3(y),
                height: round3(map.height),
                anchor_id,
                visibility: if state.is_receivable() { state.code() } else { 3 },
                receivable: with_receivable.then_some(state.is_receivable()),
            });
        }
    }
    out
}

pub fn write_visibility_csv(map: &VisibilityMap, path: &Path, with_receivable: bool) -> Result<(), DataError> {
    let header = if with_receivable {
        VISIBILITY_HEADER_FLAGGED
    } else {
        VISIBILITY_HEADER
    };
    let rows = visibility_records(map, with_receivable).into_iter().map(|r| {
        let mut f = vec![
            f3(r.x),
            f3(r.y),
            f3(r.height),
            r.anchor_id.to_string(),
            r.visibility.to_string(),
        ];
        if let Some(flag) = r.receivable {
            f.push(u8::from(flag).to_string());
        }
        f
    });
    write_records_with_header(path, header, rows)
}

pub fn read_visibility_csv(path: &Path) -> Result<Vec<VisibilityRecord>, DataError> {
    let (mut reader, variant) = open_checked(path, &[VISIBILITY_HEADER, VISIBILITY_HEADER_FLAGGED])?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let ctx = RowCtx {
            path,
            line: rec.position().map(|p| p.line()).unwrap_or(0),
        };
        let visibility: u8 = ctx.field(&rec, 4, "visibility")?;
        if !(1..=3).contains(&visibility) {
            return Err(ctx.invalid(format!("visibility code {visibility} not in 1..=3")));
        }
        let receivable = if variant == 1 {
            match ctx.field::<u8>(&rec, 5, "receivable")? {
                0 => Some(false),
                1 => Some(true),
                v => return Err(ctx.invalid(format!("receivable flag {v} not 0 or 1"))),
            }
        } else {
            None
        };
        out.push(VisibilityRecord {
            x: ctx.field(&rec, 0, "x")?,
            y: ctx.field(&rec, 1, "y")?,
            height: ctx.field(&rec, 2, "height")?,
            anchor_id: ctx.field(&rec, 3, "anchor_id")?,
            visibility,
            receivable,
        });
    }
    Ok(out)
}

/// A successful range measurement at a static reference position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeRecord {
    pub ref_pos_x: f64,
    pub ref_pos_y: f64,
    pub height: f64,
    pub anchor_id: u8,
    pub range: f64,
}

impl CsvRecord for RangeRecord {
    const HEADER: &'static [&'static str] = &["ref_pos_x", "ref_pos_y", "height", "anchor_id", "range"];

    fn fields(&self) -> Vec<String> {
        vec![
            f3(self.ref_pos_x),
            f3(self.ref_pos_y),
            f3(self.height),
            self.anchor_id.to_string(),
            f3(self.range),
        ]
    }

    fn parse(rec: &StringRecord, ctx: &RowCtx) -> Result<Self, DataError> {
        let range: f64 = ctx.field(rec, 4, "range")?;
        if !(range >= 0.0) {
            return Err(ctx.invalid(format!("negative range {range}")));
        }
        Ok(Self {
            ref_pos_x: ctx.field(rec, 0, "ref_pos_x")?,
            ref_pos_y: ctx.field(rec, 1, "ref_pos_y")?,
            height: ctx.field(rec, 2, "height")?,
            anchor_id: ctx.field(rec, 3, "anchor_id")?,
            range,
        })
    }
}

/// Range measurement with its epoch and tag, for moving tags.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynRangeRecord {
    pub epoch: u64,
    pub tag_id: u64,
    pub ref_pos_x: f64,
    pub ref_pos_y: f64,
    pub height: f64,
    pub anchor_id: u8,
    pub range: f64,
}

impl CsvRecord for DynRangeRecord {
    const HEADER: &'static [&'static str] = &[
        "epoch",
        "tag_id",
        "ref_pos_x",
        "ref_pos_y",
        "height",
        "anchor_id",
        "range",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            self.tag_id.to_string(),
            f3(self.ref_pos_x),
            f3(self.ref_pos_y),
            f3(self.height),
            self.anchor_id.to_string(),
            f3(self.range),
        ]
    }

    fn parse(rec: &StringRecord, ctx: &RowCtx) -> Result<Self, DataError> {
        let range: f64 = ctx.field(rec, 6, "range")?;
        if !(range >= 0.0) {
            return Err(ctx.invalid(format!("negative range {range}")));
        }
        Ok(Self {
            epoch: ctx.field(rec, 0, "epoch")?,
            tag_id: ctx.field(rec, 1, "tag_id")?,
            ref_pos_x: ctx.field(rec, 2, "ref_pos_x")?,
            ref_pos_y: ctx.field(rec, 3, "ref_pos_y")?,
            height: ctx.field(rec, 4, "height")?,
            anchor_id: ctx.field(rec, 5, "anchor_id")?,
            range,
        })
    }
}

/// One localization epoch of one tag with its measurement counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: u64,
    pub tag_id: u64,
    pub ref_pos_x: f64,
    pub ref_pos_y: f64,
    pub height: f64,
    pub attempted: u32,
    pub valid: u32,
}

impl CsvRecord for EpochRecord {
    const HEADER: &'static [&'static str] = &[
        "epoch",
        "tag_id",
        "ref_pos_x",
        "ref_pos_y",
        "height",
        "attempted",
        "valid",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            self.tag_id.to_string(),
            f3(self.ref_pos_x),
            f3(self.ref_pos_y),
            f3(self.height),
            self.attempted.to_string(),
            self.valid.to_string(),
        ]
    }

    fn parse(rec: &StringRecord, ctx: &RowCtx) -> Result<Self, DataError> {
        let r = Self {
            epoch: ctx.field(rec, 0, "epoch")?,
            tag_id: ctx.field(rec, 1, "tag_id")?,
            ref_pos_x: ctx.field(rec, 2, "ref_pos_x")?,
            ref_pos_y: ctx.field(rec, 3, "ref_pos_y")?,
            height: ctx.field(rec, 4, "height")?,
            attempted: ctx.field(rec, 5, "attempted")?,
            valid: ctx.field(rec, 6, "valid")?,
        };
        if r.valid > r.attempted {
            return Err(ctx.invalid("more valid than attempted measurements"));
        }
        Ok(r)
    }
}

/// Filter estimate against the reference position.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub epoch: u64,
    pub tag_id: u64,
    pub est_x: f64,
    pub est_y: f64,
    pub ref_x: f64,
    pub ref_y: f64,
    pub error: f64,
    pub status: String,
}

impl CsvRecord for TrajectoryRecord {
    const HEADER: &'static [&'static str] =
        &["epoch", "tag_id", "est_x", "est_y", "ref_x", "ref_y", "error", "status"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            self.tag_id.to_string(),
            f3(self.est_x),
            f3(self.est_y),
            f3(self.ref_x),
            f3(self.ref_y),
            f6(self.error),
            self.status.clone(),
        ]
    }

    fn parse(rec: &StringRecord, ctx: &RowCtx) -> Result<Self, DataError> {
        Ok(Self {
            epoch: ctx.field(rec, 0, "epoch")?,
            tag_id: ctx.field(rec, 1, "tag_id")?,
            est_x: ctx.field(rec, 2, "est_x")?,
            est_y: ctx.field(rec, 3, "est_y")?,
            ref_x: ctx.field(rec, 4, "ref_x")?,
            ref_y: ctx.field(rec, 5, "ref_y")?,
            error: ctx.field(rec, 6, "error")?,
            status: ctx.field(rec, 7, "status")?,
        })
    }
}

/// Position of one passenger at one boarding epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoardingRecord {
    pub epoch: u64,
    pub pax_id: u32,
    pub x: f64,
    pub y: f64,
    pub state: PaxState,
}

impl CsvRecord for BoardingRecord {
    const HEADER: &'static [&'static str] = &["epoch", "pax_id", "x", "y", "state"];

    fn fields(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            self.pax_id.to_string(),
            f3(self.x),
            f3(self.y),
            self.state.as_str().to_string(),
        ]
    }

    fn parse(rec: &StringRecord, ctx: &RowCtx) -> Result<Self, DataError> {
        let raw: String = ctx.field(rec, 4, "state")?;
        let state = PaxState::parse(&raw).ok_or_else(|| ctx.invalid(format!("unknown passenger state `{raw}`")))?;
        Ok(Self {
            epoch: ctx.field(rec, 0, "epoch")?,
            pax_id: ctx.field(rec, 1, "pax_id")?,
            x: ctx.field(rec, 2, "x")?,
            y: ctx.field(rec, 3, "y")?,
            state,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatRecord {
    pub scenario: String,
    pub metric: String,
    pub value: f64,
}

impl CsvRecord for StatRecord {
    const HEADER: &'static [&'static str] = &["scenario", "metric", "value"];

    fn fields(&self) -> Vec<String> {
        vec![self.scenario.clone(), self.metric.clone(), f6(self.value)]
    }

    fn parse(rec: &StringRecord, ctx: &RowCtx) -> Result<Self, DataError> {
        Ok(Self {
            scenario: ctx.field(rec, 0, "scenario")?,
            metric: ctx.field(rec, 1, "metric")?,
            value: ctx.field(rec, 2, "value")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcdfRecord {
    pub value: f64,
    pub fraction: f64,
}

impl CsvRecord for EcdfRecord {
    const HEADER: &'static [&'static str] = &["value", "fraction"];

    fn fields(&self) -> Vec<String> {
        vec![f6(self.value), f6(self.fraction)]
    }

    fn parse(rec: &StringRecord, ctx: &RowCtx) -> Result<Self, DataError> {
        Ok(Self {
            value: ctx.field(rec, 0, "value")?,
            fraction: ctx.field(rec, 1, "fraction")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramRecord {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: u64,
}

impl CsvRecord for HistogramRecord {
    const HEADER: &'static [&'static str] = &["bin_lo", "bin_hi", "count"];

    fn fields(&self) -> Vec<String> {
        vec![f3(self.bin_lo), f3(self.bin_hi), self.count.to_string()]
    }

    fn parse(rec: &StringRecord, ctx: &RowCtx) -> Result<Self, DataError> {
        Ok(Self {
            bin_lo: ctx.field(rec, 0, "bin_lo")?,
            bin_hi: ctx.field(rec, 1, "bin_hi")?,
            count: ctx.field(rec, 2, "count")?,
        })
    }
}

/// `id x y z` per line. Coordinates use 2 decimals when that is exact and 3
/// otherwise.
pub fn format_anchors(anchors: &[Anchor]) -> String {
    let two = anchors.iter().all(|a| {
        [a.position.x, a.position.y, a.position.z]
            .iter()
            .all(|v| ((v * 100.0).round() / 100.0 - v).abs() < 1e-12)
    });
    let mut s = String::new();
    for a in anchors {
        let p = a.position;
        if two {
            let _ = writeln!(s, "{} {:.2} {:.2} {:.2}", a.id, p.x + 0.0, p.y + 0.0, p.z + 0.0);
        } else {
            let _ = writeln!(s, "{} {} {} {}", a.id, f3(p.x), f3(p.y), f3(p.z));
        }
    }
    s
}

pub fn write_anchors(anchors: &[Anchor], path: &Path) -> Result<(), DataError> {
    std::fs::write(path, format_anchors(anchors)).map_err(io_err(path))
}

pub fn read_anchors(path: &Path) -> Result<Vec<Anchor>, DataError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut out: Vec<Anchor> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = (i + 1) as u64;
        let ctx = RowCtx { path, line };
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let rec = StringRecord::from(raw.split_whitespace().collect::<Vec<_>>());
        if rec.len() != 4 {
            return Err(ctx.invalid(format!("expected `id x y z`, got {} fields", rec.len())));
        }
        let id: u8 = ctx.field(&rec, 0, "anchor_id")?;
        if out.iter().any(|a| a.id == id) {
            return Err(ctx.invalid(format!("duplicate anchor id {id}")));
        }
        out.push(Anchor {
            id,
            position: Point3::new(ctx.field(&rec, 1, "x")?, ctx.field(&rec, 2, "y")?, ctx.field(&rec, 3, "z")?),
        });
    }
    Ok(out)
}

/// Writes a text file produced elsewhere (scene export, manifest).
pub fn write_text(path: &Path, text: &str) -> Result<(), DataError> {
    std::fs::write(path, text).map_err(io_err(path))
}
