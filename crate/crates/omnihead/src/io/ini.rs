//! Minimal INI-style configuration.
//!
//! Supported syntax: `[section]` headers, `key = value` pairs, blank lines,
//! and full-line comments starting with `#` or `;`. Values are kept as raw
//! trimmed strings; typed getters parse on demand. Keys before the first
//! section header live in the "" section.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Default)]
pub struct Ini {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Ini {
    pub fn parse(text: &str) -> Result<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current = String::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Config(format!("line {}: unterminated section header", ln + 1)))?
                    .trim();
                if name.is_empty() {
                    return Err(Error::Config(format!("line {}: empty section name", ln + 1)));
                }
                current = name.to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", ln + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", ln + 1)));
            }
            let prev = sections
                .entry(current.clone())
                .or_default()
                .insert(key.to_string(), value.trim().to_string());
            if prev.is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", ln + 1)));
            }
        }
        Ok(Ini { sections })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn sections(&self) -> impl Iterator<Item = &str> {
        self.sections.keys().map(|s| s.as_str())
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(|s| s.as_str())
    }

    fn parsed<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        match self.get(section, key) {
            None => Ok(None),
            Some(s) => s.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("[{section}] {key} = '{s}' is not a valid value"))
            }),
        }
    }

    pub fn get_f64(&self, section: &str, key: &str, default: f64) -> Result<f64> {
        Ok(self.parsed(section, key)?.unwrap_or(default))
    }

    pub fn get_usize(&self, section: &str, key: &str, default: usize) -> Result<usize> {
        Ok(self.parsed(section, key)?.unwrap_or(default))
    }

    pub fn get_u64(&self, section: &str, key: &str, default: u64) -> Result<u64> {
        Ok(self.parsed(section, key)?.unwrap_or(default))
    }

    pub fn get_bool(&self, section: &str, key: &str, default: bool) -> Result<bool> {
        match self.get(section, key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(s) => Err(Error::Config(format!(
                "[{section}] {key} = '{s}' is not a boolean"
            ))),
        }
    }

    pub fn get_str<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.get(section, key).unwrap_or(default)
    }

    /// Comma-separated list of numbers.
    pub fn get_list_f64(&self, section: &str, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.get(section, key) {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|t| {
                    t.trim().parse::<f64>().map_err(|_| {
                        Error::Config(format!("[{section}] {key}: '{t}' is not a number"))
                    })
                })
                .collect(),
        }
    }

    pub fn get_list_usize(&self, section: &str, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.get(section, key) {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|t| {
                    t.trim().parse::<usize>().map_err(|_| {
                        Error::Config(format!("[{section}] {key}: '{t}' is not an integer"))
                    })
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
# top comment
top_key = 3

[train]
epochs = 8
lr = 1e-3
hidden = 192, 192, 192
resume = false
; another comment
name = stage one

[render]
width = 128
"#;

    #[test]
    fn parses_sections_and_types() {
        let ini = Ini::parse(SAMPLE).unwrap();
        assert_eq!(ini.get_usize("", "top_key", 0).unwrap(), 3);
        assert_eq!(ini.get_usize("train", "epochs", 0).unwrap(), 8);
        assert_eq!(ini.get_f64("train", "lr", 0.0).unwrap(), 1e-3);
        assert_eq!(
            ini.get_list_usize("train", "hidden", &[]).unwrap(),
            vec![192, 192, 192]
        );
        assert!(!ini.get_bool("train", "resume", true).unwrap());
        assert_eq!(ini.get_str("train", "name", ""), "stage one");
        assert_eq!(ini.get_usize("render", "width", 0).unwrap(), 128);
        // Defaults for absent keys.
        assert_eq!(ini.get_f64("train", "absent", 2.5).unwrap(), 2.5);
        assert_eq!(ini.get_str("nosection", "k", "d"), "d");
    }

    #[test]
    fn malformed_inputs_rejected() {
        assert!(Ini::parse("[unterminated").is_err());
        assert!(Ini::parse("no equals sign").is_err());
        assert!(Ini::parse("= novalue").is_err());
        assert!(Ini::parse("a = 1\na = 2").is_err());
        let ini = Ini::parse("[s]\nk = notanumber").unwrap();
        assert!(ini.get_f64("s", "k", 0.0).is_err());
        assert!(ini.get_bool("s", "k", false).is_err());
    }
}
