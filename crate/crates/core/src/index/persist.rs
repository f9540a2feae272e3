//! Binary snapshot format, little-endian throughout:
//!
//! ```text
//! "RPIX" | version u16 | dim u32 | count u64 | generation u64
//! count × ( id_len u32 | id UTF-8 bytes | dim × f32 )
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{IndexError, IndexMode, IndexSnapshot};
use crate::encoder::Embedding;
use crate::numeric::Scalar;

pub const MAGIC: &[u8; 4] = b"RPIX";
pub const VERSION: u16 = 1;

/// A decoded record file: header fields plus `(id, row)` records.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordFile {
    pub dim: usize,
    pub generation: u64,
    pub records: Vec<(String, Vec<f32>)>,
}

pub fn write_records<'a, W, T, I>(mut w: W, dim: usize, generation: u64, count: usize, records: I) -> Result<(), IndexError>
where
    W: Write,
    T: Scalar,
    I: IntoIterator<Item = (&'a str, &'a [T])>,
{
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(count as u64).to_le_bytes())?;
    w.write_all(&generation.to_le_bytes())?;
    let mut written = 0usize;
    for (id, row) in records {
        if row.len() != dim {
            return Err(IndexError::Format(format!("record {id} has {} values, dim is {dim}", row.len())));
        }
        w.write_all(&(id.len() as u32).to_le_bytes())?;
        w.write_all(id.as_bytes())?;
        for &v in row {
            let f = v.to_f32().ok_or_else(|| IndexError::Format("value not representable as f32".into()))?;
            w.write_all(&f.to_le_bytes())?;
        }
        written += 1;
    }
    if written != count {
        return Err(IndexError::Format(format!("declared {count} records, wrote {written}")));
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N], IndexError> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_records<R: Read>(mut r: R) -> Result<RecordFile, IndexError> {
    let magic: [u8; 4] = take(&mut r)?;
    if &magic != MAGIC {
        return Err(IndexError::Format("bad magic".into()));
    }
    let version = u16::from_le_bytes(take(&mut r)?);
    if version != VERSION {
        return Err(IndexError::Format(format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(take(&mut r)?) as usize;
    let count = u64::from_le_bytes(take(&mut r)?) as usize;
    let generation = u64::from_le_bytes(take(&mut r)?);
    let mut records = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let len = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut id = vec![0u8; len];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|_| IndexError::Format("record id is not UTF-8".into()))?;
        let mut row = Vec::with_capacity(dim);
        for _ in 0..dim {
            row.push(f32::from_le_bytes(take(&mut r)?));
        }
        records.push((id, row));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(IndexError::Format("trailing bytes after last record".into()));
    }
    Ok(RecordFile { dim, generation, records })
}

impl<T: Scalar> IndexSnapshot<T> {
    pub fn write_to<W: Write>(&self, w: W) -> Result<(), IndexError> {
        let records = (0..self.len()).map(|i| (self.ids[i].as_str(), self.vector(i)));
        write_records(w, self.dim, self.generation, self.len(), records)
    }

    /// Loads a snapshot file, rebuilding any approximate structure for `mode`.
    pub fn read_from<R: Read>(r: R, mode: IndexMode) -> Result<Self, IndexError> {
        let file = read_records(r)?;
        let entries = file
            .records
            .into_iter()
            .map(|(id, row)| {
                let row = row.into_iter().map(|v| T::of(f64::from(v))).collect();
                Embedding::new(row)
                    .map(|e| (id, e))
                    .map_err(|_| IndexError::Format("non-finite value".into()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let snap = Self::build(entries, mode, file.generation)?;
        if snap.dim != file.dim {
            return Err(IndexError::Format(format!("header dim {} but records have {}", file.dim, snap.dim)));
        }
        Ok(snap)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path, mode: IndexMode) -> Result<Self, IndexError> {
        Self::read_from(BufReader::new(File::open(path)?), mode)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_exact() {
        let e = Embedding::new(vec![1.5f32, -2.0]).unwrap();
        let snap = IndexSnapshot::build(vec![("ab".to_string(), e)], IndexMode::Exact, 7).unwrap();
        let mut buf = Vec::new();
        snap.write_to(&mut buf).unwrap();
        let mut expected = b"RPIX".to_vec();
        expected.extend_from_slice(&1u16.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&7u64.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(b"ab");
        expected.extend_from_slice(&1.5f32.to_le_bytes());
        expected.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn f32_snapshot_reloads_bit_exact() {
        let entries: Vec<(String, Embedding<f32>)> = (0..20)
            .map(|i| (format!("doc{i}"), Embedding::new(vec![i as f32 * 0.1 + 0.01, 1.0 / (i as f32 + 1.0), -0.3]).unwrap()))
            .collect();
        let snap = IndexSnapshot::build(entries, IndexMode::Exact, 3).unwrap();
        let mut buf = Vec::new();
        snap.write_to(&mut buf).unwrap();
        let back = IndexSnapshot::<f32>::read_from(buf.as_slice(), IndexMode::Exact).unwrap();
        assert_eq!(back.generation(), 3);
        assert_eq!(back.ids(), snap.ids());
        assert_eq!(back.vectors, snap.vectors);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(matches!(read_records(&b"XXXX"[..]), Err(IndexError::Format(_))));
        let e = Embedding::new(vec![1.0f32]).unwrap();
        let snap = IndexSnapshot::build(vec![("a".to_string(), e)], IndexMode::Exact, 1).unwrap();
        let mut buf = Vec::new();
        snap.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_records(buf.as_slice()).is_err());
        let mut longer = Vec::new();
        snap.write_to(&mut longer).unwrap();
        longer.push(0);
        assert!(matches!(read_records(longer.as_slice()), Err(IndexError::Format(_))));
    }
}
