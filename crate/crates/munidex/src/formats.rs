//! CSV layouts for panels, price indices and centroids.
//!
//! Values are written in shortest round-trip form, so reading a written file
//! reproduces every `f64` bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use munidex_core::econometrics::hedonic::PriceIndex;
use munidex_core::spatial::Centroid;
use munidex_core::{AreaCode, Panel, PanelKind, Year};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PANEL_HEADER: [&str; 3] = ["year", "area_code", "value"];
pub const INDEX_HEADER: [&str; 4] = ["area_code", "year", "index", "yoy"];
pub const CENTROID_HEADER: [&str; 3] = ["area_code", "x_km", "y_km"];

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let ok = found.len() == expected.len() && found.iter().zip(expected).all(|(a, b)| a.trim() == *b);
    if ok {
        Ok(())
    } else {
        Err(Error::Header(format!(
            "expected `{}`, found `{}`",
            expected.join(","),
            found.iter().collect::<Vec<_>>().join(",")
        )))
    }
}

pub(crate) fn parse_area(s: &str, line: u64) -> Result<AreaCode> {
    s.parse().map_err(|e| Error::Row {
        line,
        reason: format!("{e}"),
    })
}

pub(crate) fn parse_f64(s: &str, what: &str, line: u64) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Row {
        line,
        reason: format!("invalid {what} `{s}`"),
    })
}

pub(crate) fn parse_year(s: &str, line: u64) -> Result<Year> {
    s.trim().parse().map_err(|_| Error::Row {
        line,
        reason: format!("invalid year `{s}`"),
    })
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

/// `year,area_code,value` rows in the panel's key order.
pub fn write_panel<W: Write>(panel: &Panel, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(PANEL_HEADER)?;
    for o in panel.iter() {
        out.write_record([o.year.to_string(), o.area_code.to_string(), o.value.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<panel>", e))?;
    Ok(())
}

pub fn read_panel<R: Read>(r: R, name: &str, kind: PanelKind) -> Result<Panel> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    check_header(rd.headers()?, &PANEL_HEADER)?;
    let mut panel = Panel::new(name, "", kind);
    for rec in rd.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let year = parse_year(&rec[0], line)?;
        let area = parse_area(&rec[1], line)?;
        let value = parse_f64(&rec[2], "value", line)?;
        panel.insert(area, year, value)?;
    }
    Ok(panel)
}

pub fn save_panel(panel: &Panel, path: &Path) -> Result<()> {
    write_panel(panel, create(path)?)
}

pub fn load_panel(path: &Path, name: &str, kind: PanelKind) -> Result<Panel> {
    read_panel(open(path)?, name, kind)
}

/// One row of an index table; `yoy` is blank when not reported.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub area_code: AreaCode,
    pub year: Year,
    pub index: f64,
    pub yoy: Option<f64>,
}

pub fn index_rows(indices: &[PriceIndex]) -> Vec<IndexRow> {
    indices
        .iter()
        .flat_map(|idx| {
            idx.points.iter().map(|p| IndexRow {
                area_code: idx.area_code,
                year: p.year,
                index: p.value,
                yoy: p.yoy,
            })
        })
        .collect()
}

pub fn write_index<W: Write>(rows: &[IndexRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(INDEX_HEADER)?;
    for r in rows {
        out.write_record([
            r.area_code.to_string(),
            r.year.to_string(),
            r.index.to_string(),
            r.yoy.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush().map_err(|e| Error::io("<index>", e))?;
    Ok(())
}

pub fn read_index<R: Read>(r: R) -> Result<Vec<IndexRow>> {
    let mut rd = csv::Reader::from_reader(r);
    check_header(rd.headers()?, &INDEX_HEADER)?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let yoy = match rec[3].trim() {
            "" => None,
            s => Some(parse_f64(s, "yoy", line)?),
        };
        rows.push(IndexRow {
            area_code: parse_area(&rec[0], line)?,
            year: parse_year(&rec[1], line)?,
            index: parse_f64(&rec[2], "index", line)?,
            yoy,
        });
    }
    Ok(rows)
}

pub fn index_panel(rows: &[IndexRow]) -> Result<Panel> {
    let panel = Panel::from_triples(
        "price_index",
        PanelKind::Level,
        rows.iter().map(|r| (r.area_code, r.year, r.index)),
    )?;
    Ok(panel.with_unit("index"))
}

/// Reads an index table straight into a level panel.
pub fn load_index_panel(path: &Path) -> Result<Panel> {
    index_panel(&read_index(open(path)?)?)
}

pub fn write_centroids<W: Write>(centroids: &[Centroid], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CENTROID_HEADER)?;
    for c in centroids {
        out.write_record([c.area_code.to_string(), c.x_km.to_string(), c.y_km.to_string()])?;
    }
    out.flush().map_err(|e| Error::io("<centroids>", e))?;
    Ok(())
}

pub fn read_centroids<R: Read>(r: R) -> Result<Vec<Centroid>> {
    let mut rd = csv::Reader::from_reader(r);
    check_header(rd.headers()?, &CENTROID_HEADER)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let line = line_of(&rec);
        out.push(Centroid {
            area_code: parse_area(&rec[0], line)?,
            x_km: parse_f64(&rec[1], "x_km", line)?,
            y_km: parse_f64(&rec[2], "y_km", line)?,
        });
    }
    Ok(out)
}
