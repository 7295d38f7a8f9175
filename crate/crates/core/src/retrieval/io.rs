//! Binary index files and TSV result export.
//!
//! Index layout, little-endian:
//!
//! ```text
//! magic "XLRINDEX" | version u32 | kind u8 | dim u64 | n u64 | n_clusters u64
//! | nprobe u64 | seed u64 | model_version u64
//! | ids u32 * n | embeddings f64 * n * dim
//! | ivf only: centroids f64 * n_clusters * dim, then per list: len u64, rows u32 * len
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{FlatIndex, Index, IvfIndex, RetrievalResult};
use crate::error::{Error, Result};

pub const INDEX_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"XLRINDEX";

fn encode(index: &Index) -> Vec<u8> {
    let flat = index.flat();
    let mut b = Vec::with_capacity(64 + flat.embeddings.len() * 8 + flat.ids.len() * 4);
    b.extend_from_slice(MAGIC);
    b.extend_from_slice(&INDEX_FORMAT_VERSION.to_le_bytes());
    let (kind, n_clusters, nprobe, seed) = match index {
        Index::Flat(_) => (0u8, 0u64, 0u64, 0u64),
        Index::Ivf(i) => (1, i.n_clusters() as u64, i.nprobe as u64, i.seed),
    };
    b.push(kind);
    for v in [flat.dim as u64, flat.len() as u64, n_clusters, nprobe, seed, flat.version] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    for id in &flat.ids {
        b.extend_from_slice(&id.to_le_bytes());
    }
    for x in &flat.embeddings {
        b.extend_from_slice(&x.to_le_bytes());
    }
    if let Index::Ivf(i) = index {
        for x in &i.centroids {
            b.extend_from_slice(&x.to_le_bytes());
        }
        for list in &i.lists {
            b.extend_from_slice(&(list.len() as u64).to_le_bytes());
            for r in list {
                b.extend_from_slice(&r.to_le_bytes());
            }
        }
    }
    b
}

pub fn write_index(index: &Index, path: &Path) -> Result<()> {
    std::fs::write(path, encode(index)).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Corrupt {
                path: self.path.to_path_buf(),
                message: format!("truncated at byte {}", self.pos),
            });
        };
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self, per_item: usize) -> Result<usize> {
        let n = self.u64()? as usize;
        // reject counts that cannot fit in what is left of the file
        if n.saturating_mul(per_item) > self.buf.len() - self.pos {
            return Err(self.corrupt(format!("count {n} exceeds file size")));
        }
        Ok(n)
    }

    fn corrupt(&self, message: String) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            message,
        }
    }
}

pub fn read_index(path: &Path) -> Result<Index> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let incompatible = |message: String| Error::Incompatible {
        path: path.to_path_buf(),
        message,
    };
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(incompatible("not an index file".into()));
    }
    let mut r = Reader {
        buf: &buf,
        pos: MAGIC.len(),
        path,
    };
    let version = r.u32()?;
    if version != INDEX_FORMAT_VERSION {
        return Err(incompatible(format!(
            "index format version {version}, expected {INDEX_FORMAT_VERSION}"
        )));
    }
    let kind = r.u8()?;
    let dim = r.u64()? as usize;
    let n = r.u64()? as usize;
    let n_clusters = r.u64()? as usize;
    let nprobe = r.u64()? as usize;
    let seed = r.u64()?;
    let model_version = r.u64()?;
    let payload = n.saturating_mul(4 + 8 * dim);
    if payload > buf.len() - r.pos {
        return Err(r.corrupt(format!("{n} rows of dimension {dim} exceed file size")));
    }
    let ids = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let embeddings = (0..n * dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let flat = FlatIndex {
        ids,
        dim,
        embeddings,
        version: model_version,
    };
    let index = match kind {
        0 => Index::Flat(flat),
        1 => {
            if n_clusters.saturating_mul(dim * 8) > buf.len() - r.pos {
                return Err(r.corrupt("centroids exceed file size".into()));
            }
            let centroids = (0..n_clusters * dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let mut lists = Vec::with_capacity(n_clusters);
            for _ in 0..n_clusters {
                let len = r.len(4)?;
                let rows = (0..len).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                if rows.iter().any(|&x| x as usize >= n) {
                    return Err(r.corrupt("posting list row out of range".into()));
                }
                lists.push(rows);
            }
            Index::Ivf(IvfIndex {
                flat,
                centroids,
                lists,
                nprobe,
                seed,
            })
        }
        k => return Err(incompatible(format!("unknown index kind {k}"))),
    };
    if r.pos != buf.len() {
        return Err(r.corrupt(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(index)
}

/// `query_id, rank, passage_id, score` rows with a header; ranks start at 1.
pub fn write_results_tsv(results: &[RetrievalResult], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut go = || -> std::io::Result<()> {
        writeln!(w, "query_id\trank\tpassage_id\tscore")?;
        for r in results {
            for (rank, (id, s)) in r.ids.iter().zip(&r.scores).enumerate() {
                writeln!(w, "{}\t{}\t{}\t{}", r.query_id, rank + 1, id, s)?;
            }
        }
        w.flush()
    };
    go().map_err(|e| Error::io(path, e))
}
