//! Serialization helpers and file output shared by the runners.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::Result;

/// Complex matrices as `{"rows", "cols", "data": [[[re, im], ...], ...]}`.
pub mod cmatrix_serde {
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    use crate::linalg::{CMatrix, C64};

    #[derive(Serialize, Deserialize)]
    struct Repr {
        rows: usize,
        cols: usize,
        data: Vec<Vec<[f64; 2]>>,
    }

    pub fn to_repr(m: &CMatrix) -> impl Serialize {
        Repr {
            rows: m.nrows(),
            cols: m.ncols(),
            data: (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect(),
        }
    }

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        to_repr(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
        let r = Repr::deserialize(d)?;
        if r.data.len() != r.rows || r.data.iter().any(|row| row.len() != r.cols) {
            return Err(D::Error::custom("matrix data does not match rows/cols"));
        }
        Ok(CMatrix::from_fn(r.rows, r.cols, |i, j| C64::new(r.data[i][j][0], r.data[i][j][1])))
    }
}

/// Writes pretty JSON.
pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let s = serde_json::to_string_pretty(value)?;
    fs::write(path, s + "\n")?;
    Ok(())
}
