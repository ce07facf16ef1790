//! Parameter checkpoints.
//!
//! Layout (little-endian): `"MIXCKPT1"`, the seven `EncoderConfig` fields
//! (six u64 + dropout f64), tensor count u64, then per tensor: name, rank u64,
//! dims u64*, row-major f64 data. The vocabulary is written next to the
//! checkpoint as `<checkpoint>.vocab`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::{EncoderConfig, ModelError, ModelParameters, Vocab};
use crate::binio::*;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MIXCKPT1";

pub fn write_checkpoint<W: Write>(params: &ModelParameters, w: &mut W) -> Result<(), ModelError> {
    let c = &params.config;
    w.write_all(CHECKPOINT_MAGIC)?;
    for v in [c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.d_ff, c.max_seq_len] {
        write_u64(w, v as u64)?;
    }
    write_f64(w, c.dropout_rate)?;
    let tensors = params.tensors();
    write_u64(w, tensors.len() as u64)?;
    for (name, t) in tensors {
        write_str(w, &name)?;
        write_u64(w, t.ndim() as u64)?;
        for &d in t.shape() {
            write_u64(w, d as u64)?;
        }
        for &x in t.iter() {
            write_f64(w, x)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<ModelParameters, ModelError> {
    if !expect_magic(r, CHECKPOINT_MAGIC)? {
        return Err(ModelError::BadMagic);
    }
    let mut dims = [0usize; 6];
    for d in dims.iter_mut() {
        *d = read_usize(r)?;
    }
    let config = EncoderConfig {
        vocab_size: dims[0],
        d_model: dims[1],
        n_layers: dims[2],
        n_heads: dims[3],
        d_ff: dims[4],
        max_seq_len: dims[5],
        dropout_rate: read_f64(r)?,
    };
    config.validate()?;
    let mut params = ModelParameters::zeros(config);
    let count = read_usize(r)?;
    let mut expected = params.tensors_mut();
    if count != expected.len() {
        return Err(ModelError::BadTensor {
            name: "*".into(),
            reason: format!("expected {} tensors, found {count}", expected.len()),
        });
    }
    for (name, view) in expected.iter_mut() {
        let found = read_str(r)?;
        if &found != name {
            return Err(ModelError::BadTensor {
                name: found,
                reason: format!("expected {name}"),
            });
        }
        let rank = read_usize(r)?;
        let shape = (0..rank).map(|_| read_usize(r)).collect::<Result<Vec<_>, _>>()?;
        if shape != view.shape() {
            return Err(ModelError::BadTensor {
                name: name.clone(),
                reason: format!("shape {shape:?}, expected {:?}", view.shape()),
            });
        }
        for x in view.iter_mut() {
            *x = read_f64(r)?;
        }
    }
    drop(expected);
    if !params.all_finite() {
        return Err(ModelError::NonFinite {
            stage: "checkpoint load".into(),
        });
    }
    Ok(params)
}

pub fn vocab_path_for(checkpoint: impl AsRef<Path>) -> PathBuf {
    let mut s = checkpoint.as_ref().as_os_str().to_owned();
    s.push(".vocab");
    PathBuf::from(s)
}

pub fn save_checkpoint(
    params: &ModelParameters,
    vocab: &Vocab,
    path: impl AsRef<Path>,
) -> Result<(), ModelError> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    let mut v = BufWriter::new(File::create(vocab_path_for(path))?);
    vocab.write(&mut v)?;
    v.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParameters, Vocab), ModelError> {
    let path = path.as_ref();
    let params = read_checkpoint(&mut BufReader::new(File::open(path)?))?;
    let vocab = Vocab::read(BufReader::new(File::open(vocab_path_for(path))?))?;
    if vocab.len() != params.config.vocab_size {
        return Err(ModelError::InvalidConfig(format!(
            "vocabulary has {} entries but the checkpoint expects {}",
            vocab.len(),
            params.config.vocab_size
        )));
    }
    Ok((params, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelParameters {
        ModelParameters::init(
            EncoderConfig {
                vocab_size: 7,
                d_model: 8,
                n_layers: 2,
                n_heads: 2,
                d_ff: 8,
                max_seq_len: 12,
                dropout_rate: 0.1,
            },
            3,
        )
    }

    #[test]
    fn round_trip_in_memory() {
        let p = small();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        assert_eq!(read_checkpoint(&mut buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn round_trip_with_vocab() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let vocab = Vocab::build(["a", "b", "c"], 1);
        save_checkpoint(&small(), &vocab, &path).unwrap();
        let (p, v) = load_checkpoint(&path).unwrap();
        assert_eq!(p, small());
        assert_eq!(v, vocab);
        assert!(vocab_path_for(&path).ends_with("model.ckpt.vocab"));
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_checkpoint(&small(), &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[3] = b'x';
        assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(ModelError::BadMagic)));
        assert!(read_checkpoint(&mut &buf[..buf.len() - 8]).is_err());
    }
}
