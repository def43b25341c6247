//! Plain-text matrix format.
//!
//! Optional `#`-prefixed header lines, then `rows cols`, then one
//! whitespace-separated row per line with 17 significant digits.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        }
    } else {
        format!("{v:.16e}")
    }
}

/// Serialize `m`, prefixing each header entry as `# key = value`.
pub fn to_string(m: &DMatrix<f64>, header: &[(String, String)]) -> String {
    let mut out = String::new();
    for (k, v) in header {
        let _ = writeln!(out, "# {k} = {v}");
    }
    let _ = writeln!(out, "{} {}", m.nrows(), m.ncols());
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format_value(m[(r, c)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

/// Key/value lines above the matrix body.
pub type Header = Vec<(String, String)>;

/// Parse a matrix and its header entries.
pub fn from_str(text: &str) -> Result<(DMatrix<f64>, Header)> {
    let mut header = Vec::new();
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (dims_line, dims) = loop {
        let Some((no, line)) = lines.next() else {
            return Err(Error::Parse { line: 0, message: "missing dimension line".into() });
        };
        if let Some(rest) = line.trim_start().strip_prefix('#') {
            if let Some((k, v)) = rest.split_once('=') {
                header.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        break (no + 1, line);
    };
    let parts: Vec<&str> = dims.split_whitespace().collect();
    let parse_dim = |s: &str| {
        s.parse::<usize>().map_err(|e| Error::Parse { line: dims_line, message: format!("bad dimension {s:?}: {e}") })
    };
    if parts.len() != 2 {
        return Err(Error::Parse { line: dims_line, message: "expected `rows cols`".into() });
    }
    let (rows, cols) = (parse_dim(parts[0])?, parse_dim(parts[1])?);
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let Some((no, line)) = lines.next() else {
            return Err(Error::Parse { line: dims_line + r + 1, message: format!("expected {rows} rows, found {r}") });
        };
        let before = data.len();
        for tok in line.split_whitespace() {
            let v = tok
                .parse::<f64>()
                .map_err(|e| Error::Parse { line: no + 1, message: format!("bad number {tok:?}: {e}") })?;
            data.push(v);
        }
        if data.len() - before != cols {
            return Err(Error::Parse {
                line: no + 1,
                message: format!("expected {cols} columns, found {}", data.len() - before),
            });
        }
    }
    Ok((DMatrix::from_row_slice(rows, cols, &data), header))
}

/// Writes through a sibling temporary file so readers never see a partial
/// matrix.
pub fn save(path: &Path, m: &DMatrix<f64>, header: &[(String, String)]) -> Result<()> {
    write_atomic(path, to_string(m, header).as_bytes())
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(DMatrix<f64>, Header)> {
    from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.1, f64::NAN]);
        let s = to_string(&m, &[("seed".into(), "3".into())]);
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("# seed = 3"));
        assert_eq!(lines.next(), Some("2 2"));
        assert_eq!(lines.next(), Some("1.0000000000000000e0 -5.0000000000000000e-1"));
        let (back, header) = from_str(&s).unwrap();
        assert_eq!(header, vec![("seed".to_string(), "3".to_string())]);
        assert_eq!(back[(1, 0)], 0.1);
        assert!(back[(1, 1)].is_nan());
    }

    #[test]
    fn short_row_reports_line() {
        let err = from_str("2 2\n1 2\n3\n").unwrap_err();
        assert_eq!(err, Error::Parse { line: 3, message: "expected 2 columns, found 1".into() });
    }

    proptest! {
        #[test]
        fn roundtrip_is_exact(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1e6..1e6) * rng.random::<f64>().powi(7));
            let (back, _) = from_str(&to_string(&m, &[])).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
