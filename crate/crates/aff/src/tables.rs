//! CSV tables. Reals are written with six decimals; booleans as `0`/`1`.

use std::fmt::Write as _;
use std::path::Path;

use aff_core::clustering::ClusterAssignment;
use aff_core::model::{EpochMetrics, StageRecord};
use aff_core::Point;

use crate::{Error, Result};

pub const TOKEN_HEADER: &str = "stage,x,y,g,s,reserved,selected";
pub const ASSIGNMENT_HEADER: &str = "token_index,x,y,cluster_id";
pub const METRICS_HEADER: &str = "epoch,loss,acc,focus_ratio";

/// One token of one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TokenRow {
    pub stage: usize,
    pub x: f64,
    pub y: f64,
    pub g: f64,
    pub s: f64,
    pub reserved: bool,
    pub selected: bool,
}

/// Rows of one stage. The last stage has no downsampling step: its tokens
/// are written with `g = s = 0` and all selected.
pub fn stage_rows(record: &StageRecord) -> Vec<TokenRow> {
    (0..record.positions.len())
        .map(|i| {
            let p = record.positions[i];
            let g = record.prior.as_ref().is_some_and(|pr| pr.g[i]);
            let reserved = record.prior.as_ref().is_some_and(|pr| pr.reserved[i]);
            TokenRow {
                stage: record.stage,
                x: p.x,
                y: p.y,
                g: if g { 1.0 } else { 0.0 },
                s: record.scores.as_ref().map_or(0.0, |s| s[i]),
                reserved,
                selected: record.selected[i],
            }
        })
        .collect()
}

pub fn format_tokens(rows: &[TokenRow]) -> String {
    let mut out = String::from(TOKEN_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{},{}",
            r.stage,
            r.x,
            r.y,
            r.g,
            r.s,
            u8::from(r.reserved),
            u8::from(r.selected)
        );
    }
    out
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn line_of(record: &csv::StringRecord) -> usize {
    record.position().map_or(0, |p| p.line() as usize)
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, col: usize, name: &str) -> Result<T> {
    let raw = record.get(col).unwrap_or("");
    raw.parse().map_err(|_| Error::Table {
        line: line_of(record),
        message: format!("bad {name} {raw:?}"),
    })
}

fn flag(record: &csv::StringRecord, col: usize, name: &str) -> Result<bool> {
    match record.get(col) {
        Some("0") => Ok(false),
        Some("1") => Ok(true),
        other => Err(Error::Table {
            line: line_of(record),
            message: format!("{name} must be 0 or 1, got {other:?}"),
        }),
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Table {
        line,
        message: e.to_string(),
    }
}

pub fn parse_tokens(text: &str) -> Result<Vec<TokenRow>> {
    let mut rdr = reader(text);
    let header = rdr.headers().map_err(csv_error)?.iter().collect::<Vec<_>>().join(",");
    if header != TOKEN_HEADER {
        return Err(Error::Table {
            line: 1,
            message: format!("expected header {TOKEN_HEADER:?}, got {header:?}"),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        rows.push(TokenRow {
            stage: field(&rec, 0, "stage")?,
            x: field(&rec, 1, "x")?,
            y: field(&rec, 2, "y")?,
            g: field(&rec, 3, "g")?,
            s: field(&rec, 4, "s")?,
            reserved: flag(&rec, 5, "reserved")?,
            selected: flag(&rec, 6, "selected")?,
        });
    }
    Ok(rows)
}

/// Positions from a CSV with `x` and `y` columns; other columns are ignored.
pub fn parse_positions(text: &str) -> Result<Vec<Point>> {
    let mut rdr = reader(text);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Table {
            line: 1,
            message: format!("missing column {name:?}"),
        })
    };
    let (cx, cy) = (col("x")?, col("y")?);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let x: f64 = field(&rec, cx, "x")?;
        let y: f64 = field(&rec, cy, "y")?;
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Table {
                line: line_of(&rec),
                message: "non-finite coordinate".into(),
            });
        }
        out.push(Point::new(x, y));
    }
    Ok(out)
}

pub fn format_assignment(positions: &[Point], assignment: &ClusterAssignment) -> String {
    let mut out = String::from(ASSIGNMENT_HEADER);
    out.push('\n');
    for (i, p) in positions.iter().enumerate() {
        let _ = writeln!(out, "{i},{:.6},{:.6},{}", p.x, p.y, assignment.cluster_of[i]);
    }
    out
}

pub fn format_metrics(log: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in log {
        let _ = writeln!(out, "{},{:.6},{:.6},{:.6}", m.epoch, m.loss, m.acc, m.focus_ratio);
    }
    out
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
