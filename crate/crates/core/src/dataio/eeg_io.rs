//! EEG on disk. `.csv` files carry a `ch01..ch31` header and one row per
//! time sample; `.eegbin` files are a little-endian binary variant:
//!
//! ```text
//! magic "EEGB" | version u32 | channels u32 | samples u32 | rate_hz u32 |
//! samples x channels f32 values, row-major (time outer)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use super::{DataError, EegRecording, EEG_CHANNELS, EEG_RATE_HZ};
use crate::textfmt::fmt_sig9;

const BIN_MAGIC: &[u8; 4] = b"EEGB";
const BIN_VERSION: u32 = 1;

pub fn channel_names() -> Vec<String> {
    (1..=EEG_CHANNELS).map(|i| format!("ch{i:02}")).collect()
}

/// Dispatches on the file extension (`.eegbin` binary, anything else CSV).
pub fn read_eeg(path: &Path) -> Result<EegRecording, DataError> {
    if is_binary(path) {
        read_eeg_bin(path)
    } else {
        read_eeg_csv(path)
    }
}

pub fn write_eeg(path: &Path, rec: &EegRecording) -> Result<(), DataError> {
    if is_binary(path) {
        write_eeg_bin(path, rec)
    } else {
        write_eeg_csv(path, rec)
    }
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "eegbin")
}

pub fn read_eeg_csv(path: &Path) -> Result<EegRecording, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(BufReader::new(file));
    let headers = reader
        .headers()
        .map_err(|e| DataError::csv(path, e))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(DataError::EmptyFile(path.to_path_buf()));
    }
    if headers.len() != EEG_CHANNELS {
        return Err(DataError::WrongColumnCount {
            path: path.to_path_buf(),
            line: 1,
            expected: EEG_CHANNELS,
            got: headers.len(),
        });
    }
    let mut values: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| DataError::csv(path, e))?;
        let line = i + 2;
        if record.len() != EEG_CHANNELS {
            return Err(DataError::WrongColumnCount {
                path: path.to_path_buf(),
                line,
                expected: EEG_CHANNELS,
                got: record.len(),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| DataError::NonNumeric {
                path: path.to_path_buf(),
                line,
                column: col + 1,
                cell: cell.to_string(),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(DataError::EmptyFile(path.to_path_buf()));
    }
    let time_major = Array2::from_shape_vec((rows, EEG_CHANNELS), values)
        .expect("row lengths checked above");
    EegRecording::new(time_major.t().to_owned(), EEG_RATE_HZ)
}

pub fn write_eeg_csv(path: &Path, rec: &EegRecording) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| DataError::io(path, e);
    writeln!(w, "{}", channel_names().join(",")).map_err(io_err)?;
    let data = rec.data();
    let mut line = String::new();
    for t in 0..rec.samples() {
        line.clear();
        for c in 0..rec.channels() {
            if c > 0 {
                line.push(',');
            }
            line.push_str(&fmt_sig9(data[[c, t]]));
        }
        writeln!(w, "{line}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_eeg_bin(path: &Path) -> Result<EegRecording, DataError> {
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: &str| DataError::MalformedBinary(format!("{}: {msg}", path.display()));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("missing header"))?;
    if &magic != BIN_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    if version != BIN_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let channels = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    let samples = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    let rate = r.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    if channels != EEG_CHANNELS {
        return Err(DataError::WrongColumnCount {
            path: path.to_path_buf(),
            line: 0,
            expected: EEG_CHANNELS,
            got: channels,
        });
    }
    let mut values = vec![0f32; channels * samples];
    r.read_f32_into::<LittleEndian>(&mut values)
        .map_err(|_| bad("truncated sample data"))?;
    let time_major = Array2::from_shape_vec((samples, channels), values)
        .expect("length matches header")
        .mapv(f64::from);
    EegRecording::new(time_major.t().to_owned(), rate)
}

pub fn write_eeg_bin(path: &Path, rec: &EegRecording) -> Result<(), DataError> {
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| DataError::io(path, e);
    w.write_all(BIN_MAGIC).map_err(io_err)?;
    for v in [
        BIN_VERSION,
        rec.channels() as u32,
        rec.samples() as u32,
        rec.sample_rate_hz(),
    ] {
        w.write_u32::<LittleEndian>(v).map_err(io_err)?;
    }
    let data = rec.data();
    for t in 0..rec.samples() {
        for c in 0..rec.channels() {
            w.write_f32::<LittleEndian>(data[[c, t]] as f32).map_err(io_err)?;
        }
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_recording(samples: usize) -> EegRecording {
        let data = Array2::from_shape_fn((EEG_CHANNELS, samples), |(c, t)| {
            (c as f64 + 1.0) * 0.123_456_789_1 * (t as f64 - 7.5)
        });
        EegRecording::new(data, EEG_RATE_HZ).unwrap()
    }

    #[test]
    fn csv_shape_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let rec = ramp_recording(1000);
        write_eeg(&path, &rec).unwrap();
        let back = read_eeg(&path).unwrap();
        assert_eq!(back.channels(), 31);
        assert_eq!(back.samples(), 1000);
        for (a, b) in rec.data().iter().zip(back.data().iter()) {
            assert!((a - b).abs() <= 1e-8 * a.abs().max(1e-30));
        }
        // rewriting what was read reproduces the file byte for byte
        let again = dir.path().join("b.csv");
        write_eeg(&again, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("ch01,ch02,"));
        assert!(header.lines().next().unwrap().ends_with(",ch31"));
    }

    #[test]
    fn csv_wrong_column_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("thirty.csv");
        let header: Vec<String> = (1..=30).map(|i| format!("ch{i:02}")).collect();
        let row = vec!["0.5"; 30].join(",");
        std::fs::write(&path, format!("{}\n{row}\n", header.join(","))).unwrap();
        let err = read_eeg(&path).unwrap_err();
        assert!(err.to_string().contains("wrong column count"), "{err}");

        let path = dir.path().join("ragged.csv");
        let row31 = vec!["0.5"; 31].join(",");
        std::fs::write(
            &path,
            format!("{}\n{row31}\n{row}\n", channel_names().join(",")),
        )
        .unwrap();
        match read_eeg(&path).unwrap_err() {
            DataError::WrongColumnCount { line, got, .. } => {
                assert_eq!((line, got), (3, 30));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn csv_non_numeric_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        let mut cells = vec!["1.0"; 31];
        cells[4] = "abc";
        std::fs::write(&path, format!("{}\n{}\n", channel_names().join(","), cells.join(",")))
            .unwrap();
        assert!(matches!(
            read_eeg(&path),
            Err(DataError::NonNumeric { column: 5, .. })
        ));

        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(read_eeg(&empty), Err(DataError::EmptyFile(_))));
        let header_only = dir.path().join("header.csv");
        std::fs::write(&header_only, format!("{}\n", channel_names().join(","))).unwrap();
        assert!(matches!(read_eeg(&header_only), Err(DataError::EmptyFile(_))));
    }

    #[test]
    fn binary_round_trip_at_f32_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.eegbin");
        let rec = ramp_recording(257);
        write_eeg(&path, &rec).unwrap();
        let back = read_eeg(&path).unwrap();
        assert_eq!(back.samples(), 257);
        for (a, b) in rec.data().iter().zip(back.data().iter()) {
            assert_eq!(*a as f32 as f64, *b);
        }
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 20 + 4 * 31 * 257);
        std::fs::write(&path, &bytes[..100]).unwrap();
        assert!(matches!(read_eeg(&path), Err(DataError::MalformedBinary(_))));
    }
}
