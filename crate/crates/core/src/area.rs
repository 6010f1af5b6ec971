use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Calendar year.
pub type Year = i32;

/// Earliest year a panel observation may carry.
pub const MIN_PANEL_YEAR: Year = 1985;
/// Latest year a panel observation may carry.
pub const MAX_PANEL_YEAR: Year = 2030;

/// Five digit municipality code (JIS X 0402 without the check digit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AreaCode(u32);

impl AreaCode {
    pub const MAX: u32 = 99_999;

    pub fn new(code: u32) -> Option<Self> {
        (code <= Self::MAX).then_some(Self(code))
    }

    pub fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for AreaCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:05}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid area code `{0}`")]
pub struct ParseAreaCodeError(pub alloc::string::String);

impl FromStr for AreaCode {
    type Err = ParseAreaCodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.is_empty() || t.len() > 5 || !t.bytes().all(|b| b.is_ascii_digit()) {
            return Err(ParseAreaCodeError(s.into()));
        }
        t.parse::<u32>()
            .ok()
            .and_then(AreaCode::new)
            .ok_or_else(|| ParseAreaCodeError(s.into()))
    }
}

impl Serialize for AreaCode {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AreaCode {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = alloc::string::String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
