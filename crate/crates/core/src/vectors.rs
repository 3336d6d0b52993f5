//! Measurement vectors as text: one value per line, `#` starts a comment line.
//!
//! Values are written in shortest round-trip form, so a write/read cycle is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub fn to_text(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 12);
    for v in values {
        let _ = writeln!(s, "{v}");
    }
    s
}

pub fn from_text(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            let v: f64 = t
                .parse()
                .map_err(|_| Error::parse("value", offset, format!("`{t}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::parse("value", offset, format!("`{t}` is not finite")));
            }
            out.push(v);
        }
        offset += line.len();
    }
    Ok(out)
}

pub fn write_file(path: impl AsRef<Path>, values: &[f64]) -> Result<()> {
    fs::write(path, to_text(values))?;
    Ok(())
}

pub fn read_file(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    from_text(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let v = [0.1, 1e-300, 12345.678, 0.0, 2f64.powi(60) + 3.0, 1.0 / 3.0];
        let back = from_text(&to_text(&v)).unwrap();
        assert!(v.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn comments_and_errors() {
        assert_eq!(from_text("# y\n1\n\n 2.5 \n").unwrap(), vec![1.0, 2.5]);
        match from_text("1\n2\nthree\n") {
            Err(Error::Parse { field, offset, .. }) => assert_eq!((field, offset), ("value", 4)),
            other => panic!("{other:?}"),
        }
        assert!(from_text("inf\n").is_err());
    }
}
