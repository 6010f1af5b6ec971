//! Transaction price files: one sale per row with about thirty attribute
//! columns.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use munidex_core::transactions::{split_multi, AttributeValue, TransactionRecord};
use munidex_core::{AreaCode, Year};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps file columns onto record fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColumnMap {
    pub area_code: String,
    pub year: String,
    pub trade_price: String,
    pub unit_area: String,
    /// Attribute columns parsed as numbers; every other column is categorical.
    pub numeric: Vec<String>,
    /// Columns ignored entirely.
    pub exclude: Vec<String>,
    /// Separators of multi-valued categorical cells.
    pub delimiters: Vec<char>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            area_code: "MunicipalityCode".into(),
            year: "Year".into(),
            trade_price: "TradePrice".into(),
            unit_area: "Area".into(),
            numeric: [
                "BuildingAge",
                "BuildingYear",
                "TimeToNearestStation",
                "Breadth",
                "Frontage",
                "TotalFloorArea",
                "CoverageRatio",
                "FloorAreaRatio",
            ]
            .map(String::from)
            .to_vec(),
            exclude: [
                "No",
                "Prefecture",
                "Municipality",
                "DistrictName",
                "PricePerUnit",
                "UnitPrice",
            ]
            .map(String::from)
            .to_vec(),
            delimiters: vec![',', '、'],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    pub rows: usize,
    pub accepted: usize,
    pub rejected: Vec<Rejection>,
    /// Rejections per reason.
    pub reasons: BTreeMap<String, usize>,
    /// Numeric attribute cells that failed to parse and were kept as missing.
    pub unparsed_numeric: usize,
}

impl ParseDiagnostics {
    fn reject(&mut self, line: u64, reason: &str) {
        self.rejected.push(Rejection {
            line,
            reason: reason.into(),
        });
        *self.reasons.entry(reason.into()).or_default() += 1;
    }
}

fn parse_amount(cell: &str) -> Option<f64> {
    let s: String = cell.chars().filter(|c| !matches!(c, ',' | ' ' | '¥' | '円')).collect();
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// The first run of four digits, so `2015`, `2015年第1四半期` and
/// `1st quarter 2015` all give 2015.
fn parse_year_cell(cell: &str) -> Option<Year> {
    let b = cell.as_bytes();
    (0..(b.len() + 1).saturating_sub(4))
        .find(|&i| {
            b[i..i + 4].iter().all(u8::is_ascii_digit)
                && (i == 0 || !b[i - 1].is_ascii_digit())
                && (i + 4 == b.len() || !b[i + 4].is_ascii_digit())
        })
        .and_then(|i| cell[i..i + 4].parse().ok())
}

enum Column {
    Attribute { name: String, numeric: bool },
    Skip,
}

struct Layout {
    area: usize,
    year: usize,
    price: usize,
    unit_area: usize,
    columns: Vec<Column>,
}

fn layout(header: &csv::StringRecord, map: &ColumnMap) -> Result<Layout> {
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Header(format!("missing column `{name}`")))
    };
    let area = find(&map.area_code)?;
    let year = find(&map.year)?;
    let price = find(&map.trade_price)?;
    let unit_area = find(&map.unit_area)?;
    let mut seen = std::collections::BTreeSet::new();
    let mut columns = Vec::with_capacity(header.len());
    for (i, h) in header.iter().enumerate() {
        let h = h.trim();
        if !seen.insert(h) {
            return Err(Error::Header(format!("duplicate column `{h}`")));
        }
        columns.push(
            if [area, year, price, unit_area].contains(&i) || map.exclude.iter().any(|e| e == h) {
                Column::Skip
            } else {
                Column::Attribute {
                    name: h.into(),
                    numeric: map.numeric.iter().any(|n| n == h),
                }
            },
        );
    }
    Ok(Layout {
        area,
        year,
        price,
        unit_area,
        columns,
    })
}

fn parse_row(
    rec: &csv::StringRecord,
    lay: &Layout,
    map: &ColumnMap,
    diag: &mut ParseDiagnostics,
) -> std::result::Result<TransactionRecord, &'static str> {
    if rec.len() != lay.columns.len() {
        return Err("field count");
    }
    let cell = |i: usize| rec[i].trim();
    let area: AreaCode = match cell(lay.area) {
        "" => return Err("missing area code"),
        s => s.parse().map_err(|_| "invalid area code")?,
    };
    let year = match cell(lay.year) {
        "" => return Err("missing year"),
        s => parse_year_cell(s).ok_or("invalid year")?,
    };
    let price = match cell(lay.price) {
        "" => return Err("missing price"),
        s => parse_amount(s).filter(|v| *v > 0.0).ok_or("invalid price")?,
    };
    let unit_area = match cell(lay.unit_area) {
        "" => return Err("missing area"),
        s => parse_amount(s).filter(|v| *v > 0.0).ok_or("invalid area")?,
    };
    let mut attributes = Vec::new();
    for (i, col) in lay.columns.iter().enumerate() {
        let Column::Attribute { name, numeric } = col else {
            continue;
        };
        let c = cell(i);
        let value = if c.is_empty() {
            AttributeValue::Missing
        } else if *numeric {
            match parse_amount(c) {
                Some(v) => AttributeValue::Numeric(v),
                None => {
                    diag.unparsed_numeric += 1;
                    AttributeValue::Missing
                }
            }
        } else {
            split_multi(c, &map.delimiters)
        };
        attributes.push((name.clone(), value));
    }
    TransactionRecord::new(area, year, price, unit_area, attributes).map_err(|_| "invalid year")
}

/// Streams a transaction file. A header lacking a mapped column is fatal;
/// malformed rows are skipped and tallied by reason.
pub fn parse_transactions<R: Read>(r: R, map: &ColumnMap) -> Result<(Vec<TransactionRecord>, ParseDiagnostics)> {
    let mut rd = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let header = rd.headers()?.clone();
    let lay = layout(&header, map)?;
    let mut diag = ParseDiagnostics::default();
    let mut out = Vec::new();
    let mut rec = csv::StringRecord::new();
    loop {
        match rd.read_record(&mut rec) {
            Ok(true) => {}
            Ok(false) => break,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                diag.rows += 1;
                diag.reject(line, "unreadable row");
                continue;
            }
        }
        diag.rows += 1;
        let line = rec.position().map_or(0, |p| p.line());
        match parse_row(&rec, &lay, map, &mut diag) {
            Ok(r) => out.push(r),
            Err(reason) => diag.reject(line, reason),
        }
    }
    diag.accepted = out.len();
    Ok((out, diag))
}

fn attribute_names(records: &[TransactionRecord]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for r in records {
        for (n, _) in &r.attributes {
            if !names.contains(n) {
                names.push(n.clone());
            }
        }
    }
    names
}

fn cells(r: &TransactionRecord, names: &[String]) -> Vec<String> {
    let mut row = vec![
        r.area_code.to_string(),
        r.year.to_string(),
        r.trade_price.to_string(),
        r.unit_area.to_string(),
    ];
    for n in names {
        let v = r.attributes.iter().find(|(k, _)| k == n).map(|(_, v)| v);
        row.push(match v {
            Some(AttributeValue::Numeric(x)) => x.to_string(),
            Some(AttributeValue::Category(s)) => s.clone(),
            Some(AttributeValue::Categories(v)) => v.join(", "),
            Some(AttributeValue::Missing) | None => String::new(),
        });
    }
    row
}

/// Writes records under `map`'s column names, attributes in first-seen order.
pub fn write_transactions<W: Write>(records: &[TransactionRecord], w: W, map: &ColumnMap) -> Result<()> {
    write_with_corruption(records, w, map, &[])
}

/// Ways a row is spoiled by [`write_corrupted`].
const CORRUPTIONS: [&str; 4] = ["missing price", "invalid area", "invalid year", "invalid price"];

fn write_with_corruption<W: Write>(
    records: &[TransactionRecord],
    w: W,
    map: &ColumnMap,
    spoiled: &[usize],
) -> Result<()> {
    let names = attribute_names(records);
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec![
        map.area_code.clone(),
        map.year.clone(),
        map.trade_price.clone(),
        map.unit_area.clone(),
    ];
    header.extend(names.iter().cloned());
    out.write_record(&header)?;
    for (i, r) in records.iter().enumerate() {
        let mut row = cells(r, &names);
        if let Some(k) = spoiled.iter().position(|&s| s == i) {
            match CORRUPTIONS[k % CORRUPTIONS.len()] {
                "missing price" => row[2].clear(),
                "invalid area" => row[3] = "-12.5".into(),
                "invalid year" => row[1] = "n/a".into(),
                _ => row[2] = "abc".into(),
            }
        }
        out.write_record(&row)?;
    }
    out.flush().map_err(|e| Error::io("<transactions>", e))?;
    Ok(())
}

/// Writes `records` with `n_corrupt` rows, chosen by `seed`, made unparseable.
/// Returns the spoiled record indices in ascending order.
pub fn write_corrupted<W: Write>(
    records: &[TransactionRecord],
    w: W,
    map: &ColumnMap,
    n_corrupt: usize,
    seed: u64,
) -> Result<Vec<usize>> {
    if n_corrupt > records.len() {
        return Err(Error::Invalid(format!(
            "cannot corrupt {n_corrupt} of {} rows",
            records.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spoiled = sample(&mut rng, records.len(), n_corrupt).into_vec();
    spoiled.sort_unstable();
    write_with_corruption(records, w, map, &spoiled)?;
    Ok(spoiled)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "No,MunicipalityCode,Year,TradePrice,Area,Use,BuildingAge,Structure";

    fn parse(body: &str) -> (Vec<TransactionRecord>, ParseDiagnostics) {
        parse_transactions(format!("{HEADER}\n{body}").as_bytes(), &ColumnMap::default()).unwrap()
    }

    #[test]
    fn typical_row() {
        let (recs, diag) = parse("1,13103,2015年第1四半期,\"50,000,000\",50,\"Residential, Commercial\",12,RC\n");
        assert_eq!(diag.accepted, 1);
        let r = &recs[0];
        assert_eq!(r.year, 2015);
        assert!((r.log_unit_price() - 1_000_000f64.ln()).abs() < 1e-12);
        assert!((r.log_unit_price() - 13.8155).abs() < 1e-4);
        assert_eq!(
            r.attributes[0],
            (
                "Use".into(),
                AttributeValue::Categories(vec!["Residential".into(), "Commercial".into()])
            )
        );
        assert_eq!(r.attributes[1], ("BuildingAge".into(), AttributeValue::Numeric(12.0)));
    }

    #[test]
    fn rejections_are_tallied() {
        let (recs, diag) = parse(
            "1,13103,2015,,50,Residential,12,RC\n\
             2,13103,2015,1000,0,Residential,12,RC\n\
             3,13103,1999,1000,10,Residential,12,RC\n\
             4,13103,2015,1000,10\n\
             5,ABCDE,2015,1000,10,Residential,,RC\n\
             6,13103,2016,1000,10,,old,\n",
        );
        assert_eq!(diag.rows, 6);
        assert_eq!(recs.len(), 1);
        assert_eq!(diag.reasons["missing price"], 1);
        assert_eq!(diag.reasons["invalid area"], 1);
        assert_eq!(diag.reasons["invalid year"], 1);
        assert_eq!(diag.reasons["field count"], 1);
        assert_eq!(diag.reasons["invalid area code"], 1);
        assert_eq!(
            diag.rejected[0],
            Rejection {
                line: 2,
                reason: "missing price".into()
            }
        );
        assert_eq!(diag.unparsed_numeric, 1);
        assert_eq!(recs[0].attributes[0].1, AttributeValue::Missing);
    }

    #[test]
    fn header_must_carry_mapped_columns() {
        let err = parse_transactions("Year,TradePrice,Area\n".as_bytes(), &ColumnMap::default());
        assert!(matches!(err, Err(Error::Header(_))));
    }

    #[test]
    fn year_cells() {
        assert_eq!(parse_year_cell("2015"), Some(2015));
        assert_eq!(parse_year_cell("1st quarter 2015"), Some(2015));
        assert_eq!(parse_year_cell("20150"), None);
        assert_eq!(parse_year_cell("H27"), None);
    }
}
