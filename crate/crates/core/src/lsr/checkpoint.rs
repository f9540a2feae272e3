//! Encoder checkpoints: the token table as a float-matrix record file (one
//! record per token id, generation field = step) plus a JSON sidecar.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::index::{read_records, write_records, IndexError};
use crate::numeric::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub vocab_size: usize,
    pub dim: usize,
    pub step: u64,
    pub seed: u64,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `<dir>/encoder-step<step>.rpix` and its `.json` sidecar, returning
/// the matrix path.
pub fn save_checkpoint<T: Scalar>(dir: &Path, params: &EncoderParams<T>, step: u64, seed: u64) -> Result<PathBuf, IndexError> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("encoder-step{step:08}.rpix"));
    let ids: Vec<String> = (0..params.vocab_size()).map(|t| t.to_string()).collect();
    let dim = params.dim();
    let rows = ids.iter().enumerate().map(|(t, id)| (id.as_str(), &params.table()[t * dim..(t + 1) * dim]));
    write_records(BufWriter::new(File::create(&path)?), dim, step, ids.len(), rows)?;
    let meta = CheckpointMeta { vocab_size: params.vocab_size(), dim, step, seed };
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| IndexError::Format(e.to_string()))?;
    std::fs::write(sidecar(&path), json)?;
    Ok(path)
}

pub fn load_checkpoint(path: &Path) -> Result<(EncoderParams<f64>, CheckpointMeta), IndexError> {
    let meta: CheckpointMeta = serde_json::from_slice(&std::fs::read(sidecar(path))?)
        .map_err(|e| IndexError::Format(format!("checkpoint sidecar: {e}")))?;
    let file = read_records(BufReader::new(File::open(path)?))?;
    if file.dim != meta.dim || file.records.len() != meta.vocab_size {
        return Err(IndexError::Format("checkpoint shape disagrees with its sidecar".into()));
    }
    let mut table = vec![0.0f64; meta.vocab_size * meta.dim];
    let mut seen = vec![false; meta.vocab_size];
    for (id, row) in &file.records {
        let t: usize = id.parse().map_err(|_| IndexError::Format(format!("bad token id {id:?}")))?;
        if t >= meta.vocab_size || seen[t] {
            return Err(IndexError::Format(format!("token id {t} out of range or repeated")));
        }
        seen[t] = true;
        for (dst, &v) in table[t * meta.dim..(t + 1) * meta.dim].iter_mut().zip(row) {
            *dst = v as f64;
        }
    }
    let params = EncoderParams::from_table(meta.vocab_size, meta.dim, table)
        .map_err(|e| IndexError::Format(e.to_string()))?;
    Ok((params, meta))
}
