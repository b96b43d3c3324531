//! CSV and JSON emitters shared by every module.
//!
//! CSV files start with `#`-prefixed `key=value` metadata lines followed by a
//! header row. JSON is emitted with sorted keys.

use serde::Serialize;

use crate::error::Result;

/// Shortest round-trip representation in scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

/// Ordered metadata block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata {
    entries: Vec<(String, String)>,
}

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds or replaces a key.
    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.set(key, value);
        self
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        let key = key.into();
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }
}

/// Renders a CSV document.
pub fn csv(meta: &Metadata, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut s = String::new();
    for (k, v) in meta.entries() {
        s.push_str(&format!("# {k}={v}\n"));
    }
    s.push_str(&header.join(","));
    s.push('\n');
    for row in rows {
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Pretty JSON with lexicographically sorted object keys.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json::Map is a BTreeMap unless `preserve_order` is enabled
    let v = serde_json::to_value(value)?;
    Ok(serde_json::to_string_pretty(&v)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let m = Metadata::new().with("L", 16).with("alpha2", 1.5).with("L", 8);
        let s = csv(&m, &["j", "a"], vec![vec!["0".into(), fmt_f64(0.25)]]);
        assert_eq!(s, "# L=8\n# alpha2=1.5\nj,a\n0,2.5e-1\n");
    }

    #[test]
    fn json_keys_sorted() {
        #[derive(Serialize)]
        struct T {
            zeta: u8,
            alpha: u8,
        }
        let s = to_sorted_json(&T { zeta: 1, alpha: 2 }).unwrap();
        assert!(s.find("alpha").unwrap() < s.find("zeta").unwrap());
    }

    #[test]
    fn float_round_trip() {
        for x in [0.1, -3.25e-300, 1.0 / 3.0, 6.02e23] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
