//! Flat little-endian binary dump of the parameters, the frozen features and
//! the seed that produced them.
//!
//! Layout: magic `STGNNCK1`, `u64` seed, then six tensors (`w1_self`,
//! `w1_nbr`, `w2_self`, `w2_nbr`, `beta` as `1 x m`, features), each as
//! `u64 rows`, `u64 cols`, `rows * cols` `f64` values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::model::{ModelParams, NodeFeatures};

const MAGIC: &[u8; 8] = b"STGNNCK1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub seed: u64,
    pub params: ModelParams,
    pub features: NodeFeatures,
}

fn put_matrix(buf: &mut Vec<u8>, m: &Matrix) {
    buf.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for x in m.as_slice() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn matrix(&mut self) -> Result<Matrix> {
        let rows = self.u64()? as usize;
        let cols = self.u64()? as usize;
        let len = rows
            .checked_mul(cols)
            .filter(|&l| l <= self.bytes.len() / 8)
            .ok_or_else(|| Error::Checkpoint(format!("implausible shape {rows}x{cols}")))?;
        let raw = self.take(len * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Matrix::from_vec(rows, cols, data))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&self.seed.to_le_bytes());
        let p = &self.params;
        for m in [&p.w1_self, &p.w1_nbr, &p.w2_self, &p.w2_nbr] {
            put_matrix(&mut buf, m);
        }
        put_matrix(&mut buf, &Matrix::from_vec(1, p.beta.len(), p.beta.clone()));
        put_matrix(&mut buf, &self.features.x);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let seed = r.u64()?;
        let w1_self = r.matrix()?;
        let w1_nbr = r.matrix()?;
        let w2_self = r.matrix()?;
        let w2_nbr = r.matrix()?;
        let beta = r.matrix()?.as_slice().to_vec();
        let x = r.matrix()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let shapes_ok = w1_nbr.rows() == w1_self.rows()
            && w1_nbr.cols() == w1_self.cols()
            && w2_self.rows() == w1_self.cols()
            && w2_nbr.rows() == w2_self.rows()
            && w2_nbr.cols() == w2_self.cols()
            && x.cols() == w1_self.rows();
        if !shapes_ok {
            return Err(Error::Checkpoint("inconsistent tensor shapes".into()));
        }
        Ok(Checkpoint {
            seed,
            params: ModelParams {
                w1_self,
                w1_nbr,
                w2_self,
                w2_nbr,
                beta,
            },
            features: NodeFeatures { x },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
