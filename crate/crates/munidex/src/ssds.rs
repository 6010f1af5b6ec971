//! Municipal statistics tables (population, migration, income, dwellings).

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use munidex_core::{Panel, PanelKind};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{parse_area, parse_year};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemaId {
    Population,
    InMigration,
    OutMigration,
    TaxableIncome,
    Taxpayers,
    DwellingStock,
    NewStarts,
}

impl SchemaId {
    pub const ALL: [SchemaId; 7] = [
        SchemaId::Population,
        SchemaId::InMigration,
        SchemaId::OutMigration,
        SchemaId::TaxableIncome,
        SchemaId::Taxpayers,
        SchemaId::DwellingStock,
        SchemaId::NewStarts,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemaId::Population => "population",
            SchemaId::InMigration => "in_migration",
            SchemaId::OutMigration => "out_migration",
            SchemaId::TaxableIncome => "taxable_income",
            SchemaId::Taxpayers => "taxpayers",
            SchemaId::DwellingStock => "dwelling_stock",
            SchemaId::NewStarts => "new_starts",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            SchemaId::Population => "persons",
            SchemaId::InMigration | SchemaId::OutMigration => "persons per year",
            SchemaId::TaxableIncome => "thousand JPY",
            SchemaId::Taxpayers => "persons",
            SchemaId::DwellingStock => "dwellings",
            SchemaId::NewStarts => "dwellings per year",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.csv", self.as_str())
    }
}

impl fmt::Display for SchemaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemaId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemaId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| Error::UnknownSchema(s.into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPanel {
    pub panel: Panel,
    pub warnings: Vec<String>,
}

/// Placeholders statistical tables use for unavailable cells.
const MISSING_MARKS: [&str; 6] = ["", "-", "…", "...", "***", "x"];

/// Reads a `year,area_code,<value>` table where the value column is named
/// `value` or after the schema. Thousands separators are accepted; missing
/// markers are skipped with a warning. Duplicate keys are fatal.
pub fn load_factor_csv<R: Read>(mut r: R, schema: SchemaId) -> Result<LoadedPanel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::io(schema.file_name(), e))?;
    let mut panel = Panel::new(schema.as_str(), schema.unit(), PanelKind::Level);
    let mut warnings = Vec::new();
    if bytes.iter().all(u8::is_ascii_whitespace) {
        warnings.push(format!("{schema}: empty file"));
        return Ok(LoadedPanel { panel, warnings });
    }
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(&bytes[..]);
    let header = rd.headers()?.clone();
    let valid = header.len() == 3
        && &header[0] == "year"
        && &header[1] == "area_code"
        && (&header[2] == "value" || &header[2] == schema.as_str());
    if !valid {
        return Err(Error::Header(format!(
            "{schema}: expected `year,area_code,value` or `year,area_code,{schema}`"
        )));
    }
    let mut missing = 0usize;
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let year = parse_year(&rec[0], line)?;
        let area = parse_area(&rec[1], line)?;
        let cell = rec[2].replace(',', "");
        if MISSING_MARKS.contains(&cell.as_str()) {
            missing += 1;
            continue;
        }
        let value: f64 = cell.parse().map_err(|_| Error::Row {
            line,
            reason: format!("invalid {schema} value `{}`", &rec[2]),
        })?;
        panel.insert(area, year, value)?;
    }
    if missing > 0 {
        warnings.push(format!("{schema}: {missing} missing cells skipped"));
    }
    if panel.is_empty() {
        warnings.push(format!("{schema}: no observations"));
    }
    Ok(LoadedPanel { panel, warnings })
}
