//! Flat `key = value` run-configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are
//! case-sensitive; a repeated key keeps its last value.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key = value", n + 1))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(format!("line {}: empty key", n + 1));
            }
            entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::format(path, e))
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.entries
            .get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::InvalidParam(format!("config key {key}: {e}"))))
            .transpose()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Formats `x` with six significant digits, keeping trailing zeros;
/// scientific notation outside `1e-4 <= |x| < 1e6`.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0.00000".to_string() } else { format!("{x}") };
    }
    // exponent after rounding to six significant digits
    let sci = format!("{x:.5e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if !(-4..6).contains(&exp) {
        return sci;
    }
    format!("{x:.*}", (5 - exp) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_get() {
        let kv = KeyValues::parse("# run\nalpha = 0.3\n\nepochs=20\nalpha = 0.4\nkind = wlt\n").unwrap();
        assert_eq!(kv.get::<f64>("alpha").unwrap(), Some(0.4));
        assert_eq!(kv.get::<usize>("epochs").unwrap(), Some(20));
        assert_eq!(kv.get_str("kind"), Some("wlt"));
        assert_eq!(kv.get::<f64>("beta").unwrap(), None);
        assert!(kv.get::<usize>("kind").is_err());
    }

    #[test]
    fn six_significant_digits() {
        assert_eq!(format_sig6(9.691982580768437), "9.69198");
        assert_eq!(format_sig6(-0.8941547118603604), "-0.894155");
        assert_eq!(format_sig6(0.5), "0.500000");
        assert_eq!(format_sig6(48.16), "48.1600");
        assert_eq!(format_sig6(999999.7), "1.00000e6");
        assert_eq!(format_sig6(0.00012345678), "0.000123457");
        assert_eq!(format_sig6(1.5e-7), "1.50000e-7");
        assert_eq!(format_sig6(0.0), "0.00000");
        assert_eq!(format_sig6(-16.11809565), "-16.1181");
    }

    #[test]
    fn malformed_lines() {
        assert!(KeyValues::parse("alpha 0.3").is_err());
        assert!(KeyValues::parse("= 3").is_err());
    }
}
