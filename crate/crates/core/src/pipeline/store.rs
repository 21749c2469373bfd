//! Binary container for intermediate `f64` matrices.
//!
//! Layout (little-endian): magic `EEGSPMX\0`, `u32` version, `u64` rows,
//! `u64` cols, then `rows × cols` row-major `f64` values. Values round-trip
//! bit-exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

pub const MATRIX_MAGIC: &[u8; 8] = b"EEGSPMX\0";
const MATRIX_VERSION: u32 = 1;

fn invalid(path: &Path, msg: &str) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{}: {msg}", path.display()))
}

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MATRIX_MAGIC)?;
    w.write_u32::<LittleEndian>(MATRIX_VERSION)?;
    w.write_u64::<LittleEndian>(m.nrows() as u64)?;
    w.write_u64::<LittleEndian>(m.ncols() as u64)?;
    for &v in m.iter() {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.flush()
}

pub fn read_matrix(path: &Path) -> std::io::Result<Array2<f64>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| invalid(path, "missing header"))?;
    if &magic != MATRIX_MAGIC {
        return Err(invalid(path, "not a matrix file"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != MATRIX_VERSION {
        return Err(invalid(path, &format!("unsupported version {version}")));
    }
    let rows = r.read_u64::<LittleEndian>()? as usize;
    let cols = r.read_u64::<LittleEndian>()? as usize;
    let n = rows
        .checked_mul(cols)
        .filter(|&n| n <= (1 << 32))
        .ok_or_else(|| invalid(path, "implausible dimensions"))?;
    let mut values = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut values)
        .map_err(|_| invalid(path, "truncated data"))?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(invalid(path, "trailing bytes"));
    }
    Ok(Array2::from_shape_vec((rows, cols), values).expect("length checked"))
}
