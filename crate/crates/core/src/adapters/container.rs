//! Versioned text container for named tensors and scalar metadata.
//!
//! ```text
//! lora-mgpo-container 1
//! meta <key> <value>
//! tensor <name> <rows> <cols>
//! <cols hex words>          (one line per row)
//! end
//! ```
//!
//! Floats are written as the 16-digit hex of their IEEE-754 bit pattern so
//! that a load reproduces every value bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Matrix;

const MAGIC: &str = "lora-mgpo-container";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorContainer {
    meta: BTreeMap<String, String>,
    tensors: Vec<(String, Matrix)>,
}

pub fn f64_to_hex(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

pub fn hex_to_f64(s: &str) -> Result<f64> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| Error::Format(format!("bad float word `{s}`")))
}

fn check_token(s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::Format(format!("`{s}` is not a valid container token")));
    }
    Ok(())
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) -> Result<()> {
        let value = value.to_string();
        check_token(key)?;
        check_token(&value)?;
        self.meta.insert(key.to_string(), value);
        Ok(())
    }

    pub fn set_f64(&mut self, key: &str, value: f64) -> Result<()> {
        self.set_meta(key, f64_to_hex(value))
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("missing metadata `{key}`")))
    }

    pub fn has_meta(&self, key: &str) -> bool {
        self.meta.contains_key(key)
    }

    pub fn parse_meta<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::Format(format!("metadata `{key}` has bad value `{raw}`")))
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        hex_to_f64(self.meta(key)?)
    }

    pub fn push_tensor(&mut self, name: &str, tensor: Matrix) -> Result<()> {
        check_token(name)?;
        if self.tensors.iter().any(|(n, _)| n == name) {
            return Err(Error::Format(format!("duplicate tensor `{name}`")));
        }
        self.tensors.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&Matrix> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    /// Copies every entry of `other` in, prefixing names with `prefix`.
    pub fn merge_prefixed(&mut self, prefix: &str, other: &TensorContainer) -> Result<()> {
        for (k, v) in &other.meta {
            self.set_meta(&format!("{prefix}{k}"), v)?;
        }
        for (n, t) in &other.tensors {
            self.push_tensor(&format!("{prefix}{n}"), t.clone())?;
        }
        Ok(())
    }

    /// Entries whose names start with `prefix`, with the prefix stripped.
    pub fn extract_prefixed(&self, prefix: &str) -> TensorContainer {
        TensorContainer {
            meta: self
                .meta
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|k| (k.to_string(), v.clone())))
                .collect(),
            tensors: self
                .tensors
                .iter()
                .filter_map(|(n, t)| n.strip_prefix(prefix).map(|n| (n.to_string(), t.clone())))
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {CONTAINER_VERSION}\n");
        for (k, v) in &self.meta {
            out.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, t) in &self.tensors {
            out.push_str(&format!("tensor {name} {} {}\n", t.rows(), t.cols()));
            for r in 0..t.rows() {
                let words: Vec<String> = t.row(r).iter().map(|&x| f64_to_hex(x)).collect();
                out.push_str(&words.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| Error::Format("not a lora-mgpo container".into()))?;
        if version != CONTAINER_VERSION.to_string() {
            return Err(Error::Format(format!(
                "unsupported container version {version} (expected {CONTAINER_VERSION})"
            )));
        }
        let mut out = TensorContainer::new();
        let mut saw_end = false;
        while let Some(line) = lines.next() {
            let parts: Vec<&str> = line.split_whitespace().collect();
            match parts.as_slice() {
                ["meta", k, v] => out.set_meta(k, v)?,
                ["tensor", name, rows, cols] => {
                    let parse = |s: &str| {
                        s.parse::<usize>()
                            .map_err(|_| Error::Format(format!("bad dimension `{s}`")))
                    };
                    let (rows, cols) = (parse(rows)?, parse(cols)?);
                    let mut data = Vec::with_capacity(rows * cols);
                    for _ in 0..rows {
                        let row = lines
                            .next()
                            .ok_or_else(|| Error::Format(format!("tensor `{name}` truncated")))?;
                        let before = data.len();
                        for w in row.split_whitespace() {
                            data.push(hex_to_f64(w)?);
                        }
                        if data.len() - before != cols {
                            return Err(Error::Format(format!("tensor `{name}` has a short row")));
                        }
                    }
                    let m = Matrix::new(rows, cols, data)
                        .map_err(|e| Error::Format(format!("tensor `{name}`: {e}")))?;
                    out.push_tensor(name, m)?;
                }
                ["end"] => {
                    saw_end = true;
                    break;
                }
                [] => {}
                _ => return Err(Error::Format(format!("unexpected line `{line}`"))),
            }
        }
        if !saw_end {
            return Err(Error::Format("container missing `end` marker".into()));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn text_round_trip_is_bit_exact(
            vals in proptest::collection::vec(any::<f64>(), 6),
            s in any::<f64>(),
        ) {
            let mut c = TensorContainer::new();
            c.set_f64("x", s).unwrap();
            c.set_meta("step", 17).unwrap();
            c.push_tensor("w", Matrix::new(2, 3, vals).unwrap()).unwrap();
            let back = TensorContainer::from_text(&c.to_text()).unwrap();
            prop_assert_eq!(back.get_f64("x").unwrap().to_bits(), s.to_bits());
            prop_assert!(back.tensor("w").unwrap().bitwise_eq(c.tensor("w").unwrap()));
            prop_assert_eq!(back.parse_meta::<u64>("step").unwrap(), 17);
        }
    }

    #[test]
    fn rejects_wrong_version_and_truncation() {
        assert!(TensorContainer::from_text("lora-mgpo-container 2\nend\n").is_err());
        assert!(TensorContainer::from_text("lora-mgpo-container 1\ntensor w 2 1\n0000000000000000\n").is_err());
        assert!(TensorContainer::from_text("lora-mgpo-container 1\n").is_err());
        assert!(TensorContainer::from_text("garbage").is_err());
    }
}
