//! File formats: the binary column-major matrix container used for trajectories and
//! bases, and the plain-text parameter field dump.
//!
//! Binary layout, little endian: `magic: u32`, `rows: u32`, `cols: u32`, `dtype: u32`,
//! then `rows * cols` values in column-major order. The only dtype is `f64` (code 1).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::timestep::{Trajectory, TrajectoryRole};

/// `b"TRMX"` read as a little-endian `u32`.
pub const MATRIX_MAGIC: u32 = u32::from_le_bytes(*b"TRMX");
pub const DTYPE_F64: u32 = 1;

/// FNV-1a hash of the bit patterns, as 16 hex digits.
pub fn fingerprint(values: &[f64]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for x in values {
        for b in x.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    format!("{h:016x}")
}

pub fn write_matrix_to(w: &mut impl Write, m: &DMatrix<f64>) -> Result<()> {
    let dim = |n: usize| u32::try_from(n).map_err(|_| Error::Dimension(format!("matrix dimension {n} exceeds u32")));
    w.write_u32::<LittleEndian>(MATRIX_MAGIC)?;
    w.write_u32::<LittleEndian>(dim(m.nrows())?)?;
    w.write_u32::<LittleEndian>(dim(m.ncols())?)?;
    w.write_u32::<LittleEndian>(DTYPE_F64)?;
    for &x in m.as_slice() {
        w.write_f64::<LittleEndian>(x)?;
    }
    Ok(())
}

pub fn read_matrix_from(r: &mut impl Read) -> Result<DMatrix<f64>> {
    let magic = r.read_u32::<LittleEndian>()?;
    if magic != MATRIX_MAGIC {
        return Err(Error::Config(format!("bad matrix magic {magic:#010x}")));
    }
    let rows = r.read_u32::<LittleEndian>()? as usize;
    let cols = r.read_u32::<LittleEndian>()? as usize;
    let dtype = r.read_u32::<LittleEndian>()?;
    if dtype != DTYPE_F64 {
        return Err(Error::Config(format!("unsupported matrix dtype code {dtype}")));
    }
    let mut data = vec![0.0; rows * cols];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    Ok(DMatrix::from_vec(rows, cols, data))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix_to(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    read_matrix_from(&mut BufReader::new(File::open(path)?))
}

/// Displacement record followed by the velocity record, both `N x (K + 1)`.
pub fn write_trajectory(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_matrix_to(&mut w, &traj.displacement)?;
    write_matrix_to(&mut w, &traj.velocity)?;
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: impl AsRef<Path>, role: TrajectoryRole) -> Result<Trajectory> {
    let mut r = BufReader::new(File::open(path)?);
    let displacement = read_matrix_from(&mut r)?;
    let velocity = read_matrix_from(&mut r)?;
    if displacement.shape() != velocity.shape() {
        return Err(Error::Dimension("trajectory records disagree in shape".into()));
    }
    Ok(Trajectory { role, displacement, velocity })
}

/// Writes a 2D nodal field as whitespace-separated rows, first index down the rows.
///
/// Lines starting with `#` carry the grid metadata and are skipped by [`read_field`].
pub fn write_field(path: impl AsRef<Path>, values: &DMatrix<f64>, header: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for h in header {
        writeln!(w, "# {h}")?;
    }
    for i in 0..values.nrows() {
        let row: Vec<String> = (0..values.ncols()).map(|j| format!("{:.17e}", values[(i, j)])).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            l.split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| Error::Config(format!("field value {t:?}: {e}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension("ragged field dump".into()));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_and_header_layout() {
        let m = DMatrix::from_fn(3, 2, |i, j| (i as f64) - 0.5 * j as f64 + 1e-300);
        let mut buf = Vec::new();
        write_matrix_to(&mut buf, &m).unwrap();
        assert_eq!(buf.len(), 16 + 6 * 8);
        assert_eq!(&buf[0..4], b"TRMX");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        let back = read_matrix_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let buf = [0u8; 16];
        assert!(matches!(read_matrix_from(&mut buf.as_slice()), Err(Error::Config(_))));
    }
}
