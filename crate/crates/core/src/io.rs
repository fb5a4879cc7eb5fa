//! Small text-file helpers: numeric formatting and line-oriented CSV access.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Significant digits used for every numeric field written to disk.
pub const SIG_DIGITS: usize = 12;

/// Format like C's `%.12g`: 12 significant digits, trailing zeros trimmed,
/// scientific notation only for very large or small magnitudes.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", SIG_DIGITS - 1, x);
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= SIG_DIGITS as i32 {
        let mant = trim_zeros(mant);
        format!("{mant}e{exp}")
    } else {
        let decimals = (SIG_DIGITS as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn parse_num(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" | "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse::<f64>().ok(),
    }
}

/// A parsed CSV body: header fields plus `(line_number, fields)` rows.
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let header = match lines.next() {
        Some((_, h)) => h.trim_start_matches('\u{feff}').split(',').map(|s| s.trim().to_string()).collect(),
        None => return Err(Error::malformed(path, 1, "empty file (header required)")),
    };
    let rows = lines.map(|(i, l)| (i + 1, l.split(',').map(|s| s.trim().to_string()).collect())).collect();
    Ok(CsvTable { header, rows })
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formats_with_twelve_significant_digits() {
        assert_eq!(fmt_num(0.01), "0.01");
        assert_eq!(fmt_num(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt_num(-2.5), "-2.5");
        assert_eq!(fmt_num(123456.789), "123456.789");
        assert_eq!(fmt_num(1e-7), "1e-7");
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!(fmt_num(2.0f64.sqrt() * 1e15), "1.41421356237e15");
    }

    #[test]
    fn formatted_values_parse_back_within_precision() {
        for &x in &[0.123456789012345, -9.87654321e-3, 42.0, 1.5e-9] {
            let y = parse_num(&fmt_num(x)).unwrap();
            assert!(((x - y) / x).abs() < 1e-11);
        }
    }
}
