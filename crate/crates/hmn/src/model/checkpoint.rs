//! Versioned binary checkpoint: magic `HMN1`, a JSON snapshot of the model
//! and training configuration, the vocabulary in index order, then every
//! parameter as (name, shape, row-major little-endian f32 values). Values are
//! written at training precision, so save/load round-trips bit-exactly.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HmnModel, ModelConfig, ModelError};
use crate::corpus::Vocabulary;
use crate::numerics::{Array, NamedArrays, Real, TrainReal};

const MAGIC: &[u8; 4] = b"HMN1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Meta {
    config: ModelConfig,
    #[serde(default)]
    extra: serde_json::Value,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> std::io::Result<()> {
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(bytes)
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_bytes<R: Read>(r: &mut R) -> std::io::Result<Vec<u8>> {
    let len = read_u64(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_string<R: Read>(r: &mut R, what: &str) -> Result<String, ModelError> {
    let bytes = read_bytes(r).map_err(|e| ModelError::Checkpoint(format!("{what}: {e}")))?;
    String::from_utf8(bytes).map_err(|_| ModelError::Checkpoint(format!("{what}: invalid utf-8")))
}

/// Write a checkpoint. `extra` is an arbitrary JSON snapshot stored alongside
/// the model configuration (the trainer records its full configuration here).
pub fn save_checkpoint<R: Real>(
    path: &Path,
    model: &HmnModel<R>,
    extra: &serde_json::Value,
) -> Result<(), ModelError> {
    let err = io_err(path);
    let mut w = BufWriter::new(std::fs::File::create(path).map_err(&err)?);
    w.write_all(MAGIC).map_err(&err)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(&err)?;

    let meta = Meta {
        config: model.config,
        extra: extra.clone(),
    };
    write_bytes(&mut w, serde_json::to_string(&meta).expect("meta").as_bytes()).map_err(&err)?;

    w.write_all(&(model.vocab.len() as u64).to_le_bytes())
        .map_err(&err)?;
    for word in model.vocab.words() {
        write_bytes(&mut w, word.as_bytes()).map_err(&err)?;
    }

    w.write_all(&(model.params.len() as u64).to_le_bytes())
        .map_err(&err)?;
    for (name, array) in model.params.iter() {
        write_bytes(&mut w, name.as_bytes()).map_err(&err)?;
        w.write_all(&(array.shape().len() as u32).to_le_bytes())
            .map_err(&err)?;
        for &dim in array.shape() {
            w.write_all(&(dim as u64).to_le_bytes()).map_err(&err)?;
        }
        for x in array.data() {
            w.write_all(&(x.as_f64() as f32).to_le_bytes()).map_err(&err)?;
        }
    }
    w.flush().map_err(&err)
}

/// Read a checkpoint back at training precision, validating magic, version,
/// and that the stored parameters exactly match the layout implied by the
/// stored configuration and vocabulary.
pub fn load_checkpoint(
    path: &Path,
) -> Result<(HmnModel<TrainReal>, serde_json::Value), ModelError> {
    let err = io_err(path);
    let mut r = BufReader::new(std::fs::File::open(path).map_err(&err)?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(&err)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(&mut r).map_err(&err)?;
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!(
            "unsupported version {version}"
        )));
    }

    let meta: Meta = serde_json::from_str(&read_string(&mut r, "meta")?)
        .map_err(|e| ModelError::Checkpoint(format!("meta: {e}")))?;

    let word_count = read_u64(&mut r).map_err(&err)? as usize;
    let mut words = Vec::with_capacity(word_count);
    for _ in 0..word_count {
        words.push(read_string(&mut r, "vocab word")?);
    }
    let vocab = Vocabulary::from_words(words);

    let param_count = read_u64(&mut r).map_err(&err)? as usize;
    let mut params = NamedArrays::new();
    for _ in 0..param_count {
        let name = read_string(&mut r, "parameter name")?;
        let rank = read_u32(&mut r).map_err(&err)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r).map_err(&err)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut buf = [0u8; 4];
        for _ in 0..len {
            r.read_exact(&mut buf).map_err(&err)?;
            data.push(f32::from_le_bytes(buf));
        }
        params.insert(&name, Array::new(shape, data)?)?;
    }

    let model = HmnModel::from_parts(meta.config, vocab, params)?;
    Ok((model, meta.extra))
}
