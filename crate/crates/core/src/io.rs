//! CSV, JSON and binary artifacts.
//!
//! Binary ensemble layout, all little-endian:
//!
//! | field      | type  |
//! |------------|-------|
//! | magic      | `b"VTHE"` |
//! | version    | u32 (= 1) |
//! | d, k, N    | u64 each |
//! | path_count | u64 |
//! | seed       | u64 |
//! | horizon    | f64 |
//! | states     | path_count·(N+1)·d f64 |
//! | noise      | path_count·N·k f64 |

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path as FsPath;

use serde::Serialize;
use thiserror::Error;

use crate::simulate::{PathEnsemble, TimeGrid};

pub const MAGIC: &[u8; 4] = b"VTHE";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("format: {0}")]
    Format(String),
}

/// One row per (path, time): `path,time,x0,..,x{d-1}`.
pub fn write_ensemble_csv<W: Write>(ensemble: &PathEnsemble, out: W) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["path".to_string(), "time".to_string()];
    header.extend((0..ensemble.dim_state).map(|c| format!("x{c}")));
    w.write_record(&header)?;
    let nodes = ensemble.grid.nodes();
    for p in 0..ensemble.path_count {
        for (i, t) in nodes.iter().enumerate() {
            let mut rec = vec![p.to_string(), t.to_string()];
            rec.extend(ensemble.state(p, i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ensemble_binary<W: Write>(ensemble: &PathEnsemble, out: W) -> Result<(), IoError> {
    let mut w = BufWriter::new(out);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [ensemble.dim_state, ensemble.dim_noise, ensemble.grid.n_steps, ensemble.path_count] {
        w.write_all(&(v as u64).to_le_bytes())?;
    }
    w.write_all(&ensemble.seed.to_le_bytes())?;
    w.write_all(&ensemble.grid.horizon.to_le_bytes())?;
    for v in ensemble.states.iter().chain(&ensemble.noise) {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, IoError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>, IoError> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

pub fn read_ensemble_binary<R: Read>(input: R) -> Result<PathEnsemble, IoError> {
    let mut r = BufReader::new(input);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(IoError::Format("bad magic".into()));
    }
    let mut vb = [0u8; 4];
    r.read_exact(&mut vb)?;
    let version = u32::from_le_bytes(vb);
    if version != VERSION {
        return Err(IoError::Format(format!("unsupported version {version}")));
    }
    let d = read_u64(&mut r)? as usize;
    let k = read_u64(&mut r)? as usize;
    let n = read_u64(&mut r)? as usize;
    let path_count = read_u64(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    let horizon = read_f64s(&mut r, 1)?[0];
    let grid = TimeGrid::new(horizon, n).map_err(|e| IoError::Format(e.to_string()))?;
    let states = read_f64s(&mut r, path_count * (n + 1) * d)?;
    let noise = read_f64s(&mut r, path_count * n * k)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(IoError::Format(format!("{} trailing bytes", rest.len())));
    }
    Ok(PathEnsemble { grid, dim_state: d, dim_noise: k, seed, path_count, noise, states })
}

/// Columns of equal length written as a CSV table.
pub fn write_columns<W: Write>(out: W, headers: &[&str], columns: &[&[f64]]) -> Result<(), IoError> {
    if headers.len() != columns.len() {
        return Err(IoError::Format("header and column counts differ".into()));
    }
    let rows = columns.first().map_or(0, |c| c.len());
    if columns.iter().any(|c| c.len() != rows) {
        return Err(IoError::Format("columns have different lengths".into()));
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(headers)?;
    for i in 0..rows {
        w.write_record(columns.iter().map(|c| c[i].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized, W: Write>(out: W, value: &T) -> Result<(), IoError> {
    let mut w = BufWriter::new(out);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn create(path: impl AsRef<FsPath>) -> Result<File, IoError> {
    Ok(File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{KernelSpec, SeparableCoefficients};
    use crate::simulate::simulate_ensemble;

    fn sample() -> PathEnsemble {
        let c = SeparableCoefficients::gaussian(KernelSpec::riemann_liouville(0.3).unwrap(), 0.1);
        simulate_ensemble(&c, TimeGrid::new(0.5, 8).unwrap(), 3, 11).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let e = sample();
        let mut buf = Vec::new();
        write_ensemble_binary(&e, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"VTHE");
        assert_eq!(buf.len(), 4 + 4 + 5 * 8 + 8 + 8 * (3 * 9 + 3 * 8));
        assert_eq!(read_ensemble_binary(&buf[..]).unwrap(), e);
        buf.push(0);
        assert!(read_ensemble_binary(&buf[..]).is_err());
        buf[0] = b'X';
        assert!(read_ensemble_binary(&buf[..]).is_err());
    }

    #[test]
    fn csv_rows_per_path_and_time() {
        let e = sample();
        let mut buf = Vec::new();
        write_ensemble_csv(&e, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path,time,x0");
        assert_eq!(lines.len(), 1 + 3 * 9);
        let last: Vec<f64> = lines[27].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(last[0], 2.0);
        assert_eq!(last[1], 0.5);
        assert_eq!(last[2], e.state(2, 8)[0]);
    }

    #[test]
    fn columns_must_align() {
        let mut buf = Vec::new();
        write_columns(&mut buf, &["a", "b"], &[&[1.0, 2.0], &[3.0, 4.5]]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n1,3\n2,4.5\n");
        assert!(write_columns(Vec::new(), &["a"], &[&[1.0], &[2.0]]).is_err());
        assert!(write_columns(Vec::new(), &["a", "b"], &[&[1.0], &[2.0, 3.0]]).is_err());
    }
}
