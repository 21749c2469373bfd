//! Plain-text numeric formatting and matrix CSV files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;

/// Formats with 9 significant digits, like C's `%.9g`.
pub fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{v:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Writes a matrix with a header row, using shortest round-trip formatting.
pub fn write_matrix_csv(path: &Path, header: &[String], m: &Array2<f64>) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    if !header.is_empty() {
        writeln!(w, "{}", header.join(","))?;
    }
    let mut line = String::new();
    for row in m.rows() {
        line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}")?;
    }
    w.flush()
}

/// Reads a matrix written by [`write_matrix_csv`]; the first line is a
/// header. Returns the header and the values.
pub fn read_matrix_csv(path: &Path) -> std::io::Result<(Vec<String>, Array2<f64>)> {
    let invalid = |msg: String| std::io::Error::new(std::io::ErrorKind::InvalidData, msg);
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let header: Vec<String> = match lines.next() {
        Some(line) => line?.split(',').map(str::to_string).collect(),
        None => return Err(invalid(format!("{}: empty file", path.display()))),
    };
    let cols = header.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let before = values.len();
        for cell in line.split(',') {
            values.push(cell.trim().parse::<f64>().map_err(|_| {
                invalid(format!("{}:{}: bad number {cell:?}", path.display(), i + 2))
            })?);
        }
        if values.len() - before != cols {
            return Err(invalid(format!(
                "{}:{}: expected {cols} columns",
                path.display(),
                i + 2
            )));
        }
        rows += 1;
    }
    let m = Array2::from_shape_vec((rows, cols), values).expect("column count checked");
    Ok((header, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_formatting() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1");
        assert_eq!(fmt_sig9(-12.5), "-12.5");
        assert_eq!(fmt_sig9(0.1234567891234), "0.123456789");
        assert_eq!(fmt_sig9(123456789.4), "123456789");
        assert_eq!(fmt_sig9(1234567891.0), "1.23456789e9");
        assert_eq!(fmt_sig9(1.5e-7), "1.5e-7");
        assert_eq!(fmt_sig9(0.00012), "0.00012");
    }

    #[test]
    fn matrix_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = Array2::from_shape_fn((5, 3), |(i, j)| (i as f64 + 0.1) / (j as f64 + 3.0));
        let header = vec!["a".to_string(), "b".into(), "c".into()];
        write_matrix_csv(&path, &header, &m).unwrap();
        let (h, back) = read_matrix_csv(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(back, m);
    }
}
