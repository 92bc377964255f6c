//! CSV report schemas.
//!
//! Every report is RFC 4180 CSV with CRLF line endings and a fixed header.
//! Floats are written in scientific notation with 17 significant digits,
//! which round-trips `f64` exactly. Missing values are empty cells. Lists of
//! positions are space-separated inside a single cell.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use keydiff_core::analysis::{CorrelationRow, DiversityReport};
use keydiff_core::theory::{BoundPipelineReport, VerificationSummary};
use keydiff_core::SimulationReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Int,
    Float,
    /// A float or an empty cell.
    OptFloat,
    Text,
    Ids,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Null,
    Text(String),
    Ids(Vec<u64>),
}

impl Cell {
    fn fits(&self, kind: ColumnKind) -> bool {
        matches!(
            (self, kind),
            (Cell::Int(_), ColumnKind::Int)
                | (Cell::Float(_), ColumnKind::Float | ColumnKind::OptFloat)
                | (Cell::Null, ColumnKind::OptFloat)
                | (Cell::Text(_), ColumnKind::Text)
                | (Cell::Ids(_), ColumnKind::Ids)
        )
    }

    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:.16e}"),
            Cell::Null => String::new(),
            Cell::Text(s) => s.clone(),
            Cell::Ids(ids) => ids.iter().map(u64::to_string).collect::<Vec<_>>().join(" "),
        }
    }

    fn parse(raw: &str, kind: ColumnKind) -> Option<Cell> {
        match kind {
            ColumnKind::Int => raw.parse().ok().map(Cell::Int),
            ColumnKind::Float => raw.parse().ok().map(Cell::Float),
            ColumnKind::OptFloat if raw.is_empty() => Some(Cell::Null),
            ColumnKind::OptFloat => raw.parse().ok().map(Cell::Float),
            ColumnKind::Text => Some(Cell::Text(raw.to_owned())),
            ColumnKind::Ids => raw
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<Vec<u64>, _>>()
                .ok()
                .map(Cell::Ids),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Simulation,
    Correlation,
    Bounds,
    Scaling,
    Diversity,
    Overlap,
    Scatter,
}

use ColumnKind::*;

const SIMULATION: &[(&str, ColumnKind)] = &[
    ("layer", Int),
    ("head", Int),
    ("block", Int),
    ("start_pos", Int),
    ("block_len", Int),
    ("pre_evict_len", Int),
    ("retained_len", Int),
    ("retained_time_ids", Ids),
];
const CORRELATION: &[(&str, ColumnKind)] = &[("layer", Int), ("head", Int), ("rho", OptFloat)];
const BOUNDS: &[(&str, ColumnKind)] = &[
    ("check", Text),
    ("instances", Int),
    ("violations", Int),
    ("max_slack", OptFloat),
];
const SCALING: &[(&str, ColumnKind)] = &[
    ("policy", Text),
    ("n", Int),
    ("d", Int),
    ("median_seconds", Float),
];
const DIVERSITY: &[(&str, ColumnKind)] = &[
    ("seed", Int),
    ("policy", Text),
    ("layer", Int),
    ("head", Int),
    ("log_det_before", Float),
    ("log_det_after", Float),
    ("mean_cos_after", OptFloat),
];
const OVERLAP: &[(&str, ColumnKind)] = &[
    ("seed", Int),
    ("policy_a", Text),
    ("policy_b", Text),
    ("layer", Int),
    ("head", Int),
    ("overlap", Float),
];
const SCATTER: &[(&str, ColumnKind)] = &[
    ("layer", Int),
    ("q_head", Int),
    ("position", Int),
    ("w", Float),
    ("beta_q", Float),
    ("keydiff_score", Float),
];

impl Schema {
    pub const ALL: [Schema; 7] = [
        Schema::Simulation,
        Schema::Correlation,
        Schema::Bounds,
        Schema::Scaling,
        Schema::Diversity,
        Schema::Overlap,
        Schema::Scatter,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Schema::Simulation => "simulation",
            Schema::Correlation => "correlation",
            Schema::Bounds => "bounds",
            Schema::Scaling => "scaling",
            Schema::Diversity => "diversity",
            Schema::Overlap => "overlap",
            Schema::Scatter => "scatter",
        }
    }

    pub fn columns(self) -> &'static [(&'static str, ColumnKind)] {
        match self {
            Schema::Simulation => SIMULATION,
            Schema::Correlation => CORRELATION,
            Schema::Bounds => BOUNDS,
            Schema::Scaling => SCALING,
            Schema::Diversity => DIVERSITY,
            Schema::Overlap => OVERLAP,
            Schema::Scatter => SCATTER,
        }
    }

    pub fn header(self) -> String {
        self.columns()
            .iter()
            .map(|c| c.0)
            .collect::<Vec<_>>()
            .join(",")
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Schema {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Schema::ALL
            .into_iter()
            .find(|schema| schema.name() == s)
            .ok_or_else(|| ReportError::UnknownSchema(s.to_owned()))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{schema} schema violation at row {row}, column {column}: {message}")]
    Schema {
        schema: Schema,
        row: usize,
        column: usize,
        message: String,
    },
    #[error("unknown report schema {0:?}")]
    UnknownSchema(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn check_row(schema: Schema, row_index: usize, row: &[Cell]) -> Result<(), ReportError> {
    let cols = schema.columns();
    let violation = |column, message: String| ReportError::Schema {
        schema,
        row: row_index,
        column,
        message,
    };
    if row.len() != cols.len() {
        return Err(violation(
            row.len().min(cols.len()),
            format!("expected {} cells, found {}", cols.len(), row.len()),
        ));
    }
    for (column, (cell, (name, kind))) in row.iter().zip(cols).enumerate() {
        if !cell.fits(*kind) {
            return Err(violation(
                column,
                format!("{name} must be {kind:?}, found {cell:?}"),
            ));
        }
        if let Cell::Float(v) = cell {
            if v.is_nan() {
                return Err(violation(column, format!("{name} is NaN")));
            }
        }
    }
    Ok(())
}

/// Validate every row against `schema`, then write the CSV.
pub fn write_report_csv<W: Write>(
    schema: Schema,
    rows: &[Vec<Cell>],
    w: W,
) -> Result<(), ReportError> {
    for (i, row) in rows.iter().enumerate() {
        check_row(schema, i, row)?;
    }
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(w);
    out.write_record(schema.columns().iter().map(|c| c.0))?;
    for row in rows {
        out.write_record(row.iter().map(Cell::render))?;
    }
    out.flush()?;
    Ok(())
}

/// Parse a CSV written by [`write_report_csv`].
pub fn read_report_csv<R: Read>(schema: Schema, r: R) -> Result<Vec<Vec<Cell>>, ReportError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let cols = schema.columns();
    let header = reader.headers()?.clone();
    if header.iter().ne(cols.iter().map(|c| c.0)) {
        return Err(ReportError::Schema {
            schema,
            row: 0,
            column: 0,
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .iter()
            .zip(cols)
            .enumerate()
            .map(|(column, (raw, (name, kind)))| {
                Cell::parse(raw, *kind).ok_or_else(|| ReportError::Schema {
                    schema,
                    row: i,
                    column,
                    message: format!("cannot parse {raw:?} as {name}"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        check_row(schema, i, &row)?;
        rows.push(row);
    }
    Ok(rows)
}

fn int(v: impl TryInto<u64>) -> Cell {
    Cell::Int(v.try_into().unwrap_or(u64::MAX))
}

fn opt_float(v: Option<f64>) -> Cell {
    v.map_or(Cell::Null, Cell::Float)
}

pub fn simulation_rows(report: &SimulationReport) -> Vec<Vec<Cell>> {
    report
        .heads
        .iter()
        .flat_map(|h| {
            h.blocks.iter().map(move |b| {
                vec![
                    int(h.layer),
                    int(h.kv_head),
                    int(b.index),
                    Cell::Int(b.start_pos),
                    int(b.len),
                    int(b.pre_evict_len),
                    int(b.retained_time_ids.len()),
                    Cell::Ids(b.retained_time_ids.clone()),
                ]
            })
        })
        .collect()
}

pub fn correlation_rows(rows: &[CorrelationRow]) -> Vec<Vec<Cell>> {
    rows.iter()
        .map(|r| vec![int(r.layer), int(r.head), opt_float(r.rho)])
        .collect()
}

pub fn bounds_rows(summaries: &[VerificationSummary]) -> Vec<Vec<Cell>> {
    summaries
        .iter()
        .map(|s| {
            vec![
                Cell::Text(s.check.to_owned()),
                int(s.instances),
                int(s.violations),
                opt_float(s.max_slack),
            ]
        })
        .collect()
}

pub fn scatter_rows(report: &BoundPipelineReport) -> Vec<Vec<Cell>> {
    report
        .points
        .iter()
        .map(|p| {
            vec![
                int(p.layer),
                int(p.q_head),
                int(p.position),
                Cell::Float(p.w),
                Cell::Float(p.beta_q),
                Cell::Float(p.keydiff_score),
            ]
        })
        .collect()
}

pub fn diversity_row(
    seed: u64,
    policy: &str,
    layer: usize,
    head: usize,
    d: &DiversityReport,
) -> Vec<Cell> {
    vec![
        Cell::Int(seed),
        Cell::Text(policy.to_owned()),
        int(layer),
        int(head),
        Cell::Float(d.log_det_before),
        Cell::Float(d.log_det_after),
        opt_float(d.mean_cos_after),
    ]
}
