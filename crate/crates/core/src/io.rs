//! Atomic file output and small formatting helpers shared by the exporters.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use crate::error::{EspError, Result};

/// Writes `contents` to `path` through a temporary file in the same
/// directory, so a failed write never leaves a partial file behind.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| EspError::io(path, e))?;
    tmp.write_all(contents).map_err(|e| EspError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| EspError::io(path, e))?;
    tmp.persist(path).map_err(|e| EspError::io(path, e.error))?;
    Ok(())
}

pub fn create_dir_all(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| EspError::io(dir, e))
}

/// Shortest round-trip representation; non-finite values become `inf`,
/// `-inf` or `nan`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:?}")
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Builds a CSV document from a header and rows of preformatted cells.
pub fn csv<I, R>(header: &str, rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut out = String::with_capacity(1024);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let mut first = true;
        for cell in row {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(out, "{cell}");
        }
        out.push('\n');
    }
    out
}

/// Two-column `x,value`-style table.
pub fn xy_csv(header: &str, xs: &[f64], ys: &[f64]) -> String {
    csv(header, xs.iter().zip(ys).map(|(&x, &y)| [fmt_f64(x), fmt_f64(y)]))
}

/// Serde helper for `f64` fields that may be infinite: non-finite values are
/// written as strings, finite values as numbers.
pub mod lossless_f64 {
    use serde::de::{self, Deserializer};
    use serde::{Deserialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&super::fmt_f64(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!("not a number: {other}"))),
            },
        }
    }
}
