//! Single-file index persistence.
//!
//! Layout (little-endian):
//! `"MIXIDX1"`, version u32, granularity u64, stride u64, k1 f64, b f64, N u64,
//! then N chunk records, then the term table (term, posting count, `(chunk u32, tf u32)*`).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Bm25Params, IndexError, InvertedIndex, Posting};
use crate::binio::*;
use crate::corpus::{Chunk, ChunkConfig, Token};

pub const INDEX_MAGIC: &[u8; 7] = b"MIXIDX1";
pub const INDEX_VERSION: u32 = 1;

pub fn write_index<W: Write>(index: &InvertedIndex, w: &mut W) -> Result<(), IndexError> {
    w.write_all(INDEX_MAGIC)?;
    write_u32(w, INDEX_VERSION)?;
    write_u64(w, index.chunking.granularity as u64)?;
    write_u64(w, index.chunking.stride as u64)?;
    write_f64(w, index.params.k1)?;
    write_f64(w, index.params.b)?;
    write_u64(w, index.chunks.len() as u64)?;
    for c in &index.chunks {
        write_str(w, &c.chunk_id)?;
        write_str(w, &c.doc_id)?;
        write_u64(w, c.window_start as u64)?;
        write_u64(w, c.char_start as u64)?;
        write_u64(w, c.char_end as u64)?;
        write_str(w, &c.text)?;
        write_u64(w, c.tokens.len() as u64)?;
        for t in &c.tokens {
            write_str(w, &t.surface)?;
            write_u64(w, t.char_start as u64)?;
            write_u64(w, t.char_end as u64)?;
        }
    }
    write_u64(w, index.postings.len() as u64)?;
    for (term, postings) in &index.postings {
        write_str(w, term)?;
        write_u64(w, postings.len() as u64)?;
        for p in postings {
            write_u32(w, p.chunk)?;
            write_u32(w, p.tf)?;
        }
    }
    Ok(())
}

pub fn read_index<R: Read>(r: &mut R) -> Result<InvertedIndex, IndexError> {
    if !expect_magic(r, INDEX_MAGIC)? {
        return Err(IndexError::BadMagic);
    }
    let version = read_u32(r)?;
    if version != INDEX_VERSION {
        return Err(IndexError::UnsupportedVersion(version));
    }
    let granularity = read_usize(r)?;
    let stride = read_usize(r)?;
    let k1 = read_f64(r)?;
    let b = read_f64(r)?;
    let params = Bm25Params::new(k1, b)?;
    let chunking = ChunkConfig::new(granularity, stride).map_err(|_| invalid("bad chunking"))?;

    let n = read_usize(r)?;
    let mut chunks = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let chunk_id = read_str(r)?;
        let doc_id = read_str(r)?;
        let window_start = read_usize(r)?;
        let char_start = read_usize(r)?;
        let char_end = read_usize(r)?;
        let text = read_str(r)?;
        let n_tokens = read_usize(r)?;
        let mut tokens = Vec::with_capacity(n_tokens.min(1 << 16));
        for _ in 0..n_tokens {
            let surface = read_str(r)?;
            let start = read_usize(r)?;
            let end = read_usize(r)?;
            tokens.push(Token {
                surface,
                char_start: start,
                char_end: end,
            });
        }
        chunks.push(Chunk {
            chunk_id,
            doc_id,
            window_start,
            tokens,
            char_start,
            char_end,
            text,
        });
    }
    if chunks.windows(2).any(|w| w[0].chunk_id >= w[1].chunk_id) {
        return Err(invalid("chunk table not sorted").into());
    }

    let n_terms = read_usize(r)?;
    let mut postings = BTreeMap::new();
    for _ in 0..n_terms {
        let term = read_str(r)?;
        let len = read_usize(r)?;
        let mut list = Vec::with_capacity(len.min(n));
        for _ in 0..len {
            let chunk = read_u32(r)?;
            let tf = read_u32(r)?;
            if chunk as usize >= n {
                return Err(invalid("posting refers to unknown chunk").into());
            }
            list.push(Posting { chunk, tf });
        }
        postings.insert(term, list);
    }
    Ok(InvertedIndex::from_parts(params, chunking, chunks, postings))
}

pub fn save_index(index: &InvertedIndex, path: impl AsRef<Path>) -> Result<(), IndexError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_index(index, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_index(path: impl AsRef<Path>) -> Result<InvertedIndex, IndexError> {
    let mut r = BufReader::new(File::open(path)?);
    read_index(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ingest_documents, Document};

    fn index() -> InvertedIndex {
        let docs: Vec<Document> = (0..5)
            .map(|i| Document {
                doc_id: format!("d{i}"),
                title: String::new(),
                text: format!("alpha beta {i} gamma. Ünïcode word{i} and more words here"),
            })
            .collect();
        let corpus = ingest_documents(&docs, ChunkConfig::new(4, 2).unwrap()).unwrap();
        InvertedIndex::build(corpus.chunks, Bm25Params::new(0.9, 0.4).unwrap(), corpus.config).unwrap()
    }

    #[test]
    fn round_trip() {
        let idx = index();
        let mut buf = Vec::new();
        write_index(&idx, &mut buf).unwrap();
        assert_eq!(&buf[..7], INDEX_MAGIC);
        let back = read_index(&mut buf.as_slice()).unwrap();
        assert_eq!(back, idx);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let idx = index();
        let mut buf = Vec::new();
        write_index(&idx, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_index(&mut bad.as_slice()), Err(IndexError::BadMagic)));
        let mut bad = buf.clone();
        bad[7] = 9;
        assert!(matches!(
            read_index(&mut bad.as_slice()),
            Err(IndexError::UnsupportedVersion(9))
        ));
        assert!(read_index(&mut &buf[..buf.len() - 3]).is_err());
    }
}
