use std::io::{Read, Write};
use std::path::Path;

use crate::diagnostics::{CoordCheckRecord, SpectralProbe};
use crate::error::{Error, Result};

use super::sweep::ResultRow;

/// A CSV layout: exact header plus a version bumped on any column change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Schema {
    pub name: &'static str,
    pub version: u32,
    pub columns: &'static [&'static str],
}

pub const RESULTS_SCHEMA: Schema = Schema {
    name: "lr-sweep",
    version: 1,
    columns: &["width", "lr", "seed", "steps", "train_loss", "val_loss", "diverged"],
};

pub const COORD_SCHEMA: Schema = Schema {
    name: "coord-check",
    version: 1,
    columns: &["width", "step", "layer", "rms_coord", "rel_to_first"],
};

pub const PROBE_SCHEMA: Schema = Schema {
    name: "spectral-probe",
    version: 1,
    columns: &["width", "layer", "spec_w", "spec_dw", "target", "w_ratio", "dw_ratio", "converged"],
};

/// Rows read back from one of the known CSV layouts.
#[derive(Clone, Debug, PartialEq)]
pub enum Table {
    Results(Vec<ResultRow>),
    Coord(Vec<CoordCheckRecord>),
}

pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULTS_SCHEMA.columns)?;
    for r in rows {
        w.write_record([
            r.width.to_string(),
            r.lr.to_string(),
            r.seed.to_string(),
            r.steps.to_string(),
            r.train_loss.to_string(),
            r.val_loss.to_string(),
            r.diverged.to_string(),
        ])?;
    }
    flush(w)
}

/// Diverged records are written with infinite values.
pub fn write_coord<W: Write>(records: &[CoordCheckRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COORD_SCHEMA.columns)?;
    for r in records {
        w.write_record([
            r.width.to_string(),
            r.step.to_string(),
            r.layer.to_string(),
            r.rms_coord.to_string(),
            r.rel_to_first.to_string(),
        ])?;
    }
    flush(w)
}

pub fn write_probes<W: Write>(probes: &[(usize, Vec<SpectralProbe>)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PROBE_SCHEMA.columns)?;
    for (width, layers) in probes {
        for p in layers {
            w.write_record([
                width.to_string(),
                p.layer.to_string(),
                p.spec_w.to_string(),
                p.spec_dw.to_string(),
                p.target.to_string(),
                p.w_ratio.to_string(),
                p.dw_ratio.to_string(),
                p.converged.to_string(),
            ])?;
        }
    }
    flush(w)
}

fn flush<W: Write>(w: csv::Writer<W>) -> Result<()> {
    w.into_inner()
        .map_err(|e| Error::Plot(format!("failed to flush CSV: {}", e.error())))?
        .flush()
        .map_err(|e| Error::Plot(format!("failed to flush CSV: {e}")))
}

/// Reads a results or coordinate-check CSV, telling them apart by header.
pub fn read_table<R: Read>(input: R) -> Result<Table> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let matches = |s: &Schema| header.iter().map(String::as_str).eq(s.columns.iter().copied());
    if matches(&RESULTS_SCHEMA) {
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(ResultRow {
                width: field(&rec, 0)?,
                lr: field(&rec, 1)?,
                seed: field(&rec, 2)?,
                steps: field(&rec, 3)?,
                train_loss: field(&rec, 4)?,
                val_loss: field(&rec, 5)?,
                diverged: field(&rec, 6)?,
            });
        }
        Ok(Table::Results(rows))
    } else if matches(&COORD_SCHEMA) {
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let rms_coord: f64 = field(&rec, 3)?;
            rows.push(CoordCheckRecord {
                width: field(&rec, 0)?,
                step: field(&rec, 1)?,
                layer: field(&rec, 2)?,
                rms_coord,
                rel_to_first: field(&rec, 4)?,
                diverged: !rms_coord.is_finite(),
            });
        }
        Ok(Table::Coord(rows))
    } else {
        Err(Error::Plot(format!("unrecognized CSV header: {}", header.join(","))))
    }
}

pub fn read_table_file(path: impl AsRef<Path>) -> Result<Table> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_table(file)
}

/// Writes through a closure into `path`, mapping I/O failures to the path.
pub fn write_file(path: impl AsRef<Path>, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    f(&mut buf)?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse().map_err(|_| {
        let line = rec.position().map_or(0, |p| p.line());
        Error::Plot(format!("line {line}: cannot parse `{raw}` in column {}", i + 1))
    })
}
