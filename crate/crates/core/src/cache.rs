//! Operator export: CSV triplets and the `ODF1` binary cache.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! "ODF1"            4 bytes magic
//! version           u8 (= 1)
//! N                 u32  component size
//! steps             u32  number of operators
//! N × cell id       u32 byte length + UTF-8 bytes
//! steps × operator:
//!   t               u64
//!   nnz             u64
//!   col_ptr         (N + 1) × u64
//!   row_idx         nnz × u32
//!   values          nnz × f64
//!   distance        nnz × f64   (NaN = missing)
//!   duration        nnz × f64   (NaN = missing)
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::geo::CellId;
use crate::markov::{Measure, StepOperator};
use crate::matrix::CscMatrix;

pub const MAGIC: &[u8; 4] = b"ODF1";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("not an operator cache (bad magic)")]
    BadMagic,
    #[error("unsupported cache version {0}")]
    BadVersion(u8),
    #[error("corrupt cache: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Component cells plus their step operators, in step order.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorCache {
    pub cells: Vec<CellId>,
    pub ops: Vec<StepOperator>,
}

fn put_f64s<W: Write>(w: &mut W, xs: impl Iterator<Item = f64>) -> io::Result<()> {
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

impl OperatorCache {
    pub fn write<W: Write>(&self, mut w: W) -> Result<(), CacheError> {
        let n = self.cells.len();
        w.write_all(MAGIC)?;
        w.write_all(&[VERSION])?;
        w.write_all(&(n as u32).to_le_bytes())?;
        w.write_all(&(self.ops.len() as u32).to_le_bytes())?;
        for c in &self.cells {
            let b = c.as_str().as_bytes();
            w.write_all(&(b.len() as u32).to_le_bytes())?;
            w.write_all(b)?;
        }
        for op in &self.ops {
            if op.n() != n {
                return Err(CacheError::Corrupt(format!("operator at step {} has size {}", op.t(), op.n())));
            }
            let m = op.matrix();
            w.write_all(&(op.t() as u64).to_le_bytes())?;
            w.write_all(&(m.nnz() as u64).to_le_bytes())?;
            for &p in m.col_ptr() {
                w.write_all(&(p as u64).to_le_bytes())?;
            }
            for &r in m.row_idx() {
                w.write_all(&(r as u32).to_le_bytes())?;
            }
            put_f64s(&mut w, m.values().iter().copied())?;
            for measure in [Measure::Distance, Measure::Duration] {
                put_f64s(&mut w, op.costs(measure).iter().map(|c| c.unwrap_or(f64::NAN)))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, CacheError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CacheError::BadMagic);
        }
        let version = read_u8(&mut r)?;
        if version != VERSION {
            return Err(CacheError::BadVersion(version));
        }
        let n = read_u32(&mut r)? as usize;
        let steps = read_u32(&mut r)? as usize;
        let mut cells = Vec::with_capacity(n);
        for _ in 0..n {
            let len = read_u32(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            let s = String::from_utf8(buf).map_err(|e| CacheError::Corrupt(e.to_string()))?;
            cells.push(CellId::new(s).map_err(|e| CacheError::Corrupt(e.to_string()))?);
        }
        let mut ops = Vec::with_capacity(steps);
        for _ in 0..steps {
            let t = read_u64(&mut r)? as usize;
            let nnz = read_u64(&mut r)? as usize;
            let col_ptr = (0..=n).map(|_| read_u64(&mut r).map(|v| v as usize)).collect::<io::Result<Vec<_>>>()?;
            let row_idx = (0..nnz).map(|_| read_u32(&mut r).map(|v| v as usize)).collect::<io::Result<Vec<_>>>()?;
            let values = (0..nnz).map(|_| read_f64(&mut r)).collect::<io::Result<Vec<_>>>()?;
            let mut costs = || -> io::Result<Vec<Option<f64>>> {
                (0..nnz).map(|_| read_f64(&mut r).map(|v| (!v.is_nan()).then_some(v))).collect()
            };
            let dist = costs()?;
            let dur = costs()?;
            let m = CscMatrix::from_parts(n, col_ptr, row_idx, values)
                .ok_or_else(|| CacheError::Corrupt(format!("invalid sparse structure at step {t}")))?;
            ops.push(StepOperator::new(t, m, dist, dur).map_err(|e| CacheError::Corrupt(e.to_string()))?);
        }
        Ok(OperatorCache { cells, ops })
    }
}

fn read_u8<R: Read>(r: &mut R) -> io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Writes `row_cell,col_cell,value` triplets of one operator.
pub fn write_triplets<W: Write>(op: &StepOperator, cells: &[CellId], w: W) -> Result<(), CacheError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["row_cell", "col_cell", "value"])?;
    let m = op.matrix();
    for j in 0..m.n() {
        for (i, v) in m.column(j) {
            out.write_record([cells[i].as_str(), cells[j].as_str(), &v.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}
