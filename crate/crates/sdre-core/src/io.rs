//! Flat binary matrix exchange: little-endian f64 payload in column-major
//! order next to a JSON sidecar describing the shape. Used for snapshot
//! sets, low-rank factor checkpoints, and cached reference trajectories.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::densela::Mat;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct MatrixSidecar {
    rows: usize,
    cols: usize,
    layout: String,
    file: String,
}

/// Write `name.bin` and `name.json` under `dir`.
pub fn write_matrix(dir: &Path, name: &str, m: &Mat) -> Result<()> {
    fs::create_dir_all(dir)?;
    let bin_name = format!("{name}.bin");
    let sidecar = MatrixSidecar {
        rows: m.nrows(),
        cols: m.ncols(),
        layout: "column-major".into(),
        file: bin_name.clone(),
    };
    let mut bin = fs::File::create(dir.join(&bin_name))?;
    for v in m.iter() {
        bin.write_all(&v.to_le_bytes())?;
    }
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::GridMismatch(format!("sidecar serialization: {e}")))?;
    fs::write(dir.join(format!("{name}.json")), json)?;
    Ok(())
}

/// Read a matrix written by [`write_matrix`].
pub fn read_matrix(dir: &Path, name: &str) -> Result<Mat> {
    let sidecar: MatrixSidecar = serde_json::from_str(
        &fs::read_to_string(dir.join(format!("{name}.json")))?,
    )
    .map_err(|e| Error::GridMismatch(format!("sidecar parse: {e}")))?;
    if sidecar.layout != "column-major" {
        return Err(Error::GridMismatch(format!(
            "unsupported layout {}",
            sidecar.layout
        )));
    }
    let mut bytes = Vec::new();
    fs::File::open(dir.join(&sidecar.file))?.read_to_end(&mut bytes)?;
    let expect = sidecar.rows * sidecar.cols * 8;
    if bytes.len() != expect {
        return Err(Error::GridMismatch(format!(
            "payload has {} bytes, expected {expect}",
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    Ok(Mat::from_iterator(sidecar.rows, sidecar.cols, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip() {
        let dir = std::env::temp_dir().join("sdre-io-test");
        let m = Mat::from_fn(7, 3, |i, j| (i as f64) - 1.5 * (j as f64));
        write_matrix(&dir, "sample", &m).unwrap();
        let back = read_matrix(&dir, "sample").unwrap();
        assert_eq!(m, back);
    }
}
