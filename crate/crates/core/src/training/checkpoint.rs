//! Binary checkpoint container.
//!
//! Layout (little endian): magic, format version, header (`d_emb`, `d_h`,
//! variant code, `init_scale`, SHA-256 of the common vocabulary), the
//! common-word list, then named `f64` tensors.

use std::fs;
use std::path::Path;

use crate::corpus::vocab::hash_words;
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::kb::KnowledgeBase;
use crate::model::{Model, ModelConfig, ParamStore, Tensor, Variant};

const MAGIC: &[u8; 8] = b"GENDSCKP";
pub const FORMAT_VERSION: u32 = 1;

/// A model together with the common vocabulary it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub common_words: Vec<String>,
}

impl Checkpoint {
    pub fn vocab_hash(&self) -> [u8; 32] {
        hash_words(&self.common_words)
    }

    /// Rebuilds the vocabulary over `kb`, which must provide embeddings for
    /// all of its types and relations.
    pub fn vocabulary(&self, kb: &KnowledgeBase) -> Result<Vocabulary> {
        let vocab = Vocabulary::from_common_words(self.common_words.clone(), kb)?;
        vocab.check_covers(kb)?;
        Ok(vocab)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("size fits in u32").to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

pub fn encode(model: &Model, common_words: &[String]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, model.config.d_emb);
    put_u32(&mut out, model.config.d_h);
    out.push(model.config.variant.code());
    out.extend_from_slice(&model.config.init_scale.to_le_bytes());
    out.extend_from_slice(&hash_words(common_words));
    put_u32(&mut out, common_words.len());
    for w in common_words {
        put_str(&mut out, w);
    }
    put_u32(&mut out, model.store.len());
    for id in model.store.ids() {
        put_str(&mut out, model.store.name(id));
        let t = model.store.get(id);
        put_u32(&mut out, t.rows);
        put_u32(&mut out, t.cols);
        for x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file: needed {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (this build reads version {FORMAT_VERSION})"
        )));
    }
    let d_emb = r.u32()?;
    let d_h = r.u32()?;
    let code = r.take(1)?[0];
    let variant = Variant::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown variant code {code}")))?;
    let init_scale = r.f64()?;
    let stored_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let n_words = r.u32()?;
    let mut common_words = Vec::with_capacity(n_words.min(1 << 20));
    for _ in 0..n_words {
        common_words.push(r.string()?);
    }
    if hash_words(&common_words) != stored_hash {
        return Err(Error::Checkpoint("vocabulary hash does not match the stored word list".into()));
    }
    let n_params = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..n_params {
        let name = r.string()?;
        let rows = r.u32()?;
        let cols = r.u32()?;
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint(format!("parameter {name} is too large")))?;
        let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        store.add(name, Tensor { rows, cols, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let config = ModelConfig {
        d_emb,
        d_h,
        variant,
        init_scale,
    };
    let model = Model::from_store(config, common_words.len(), store)?;
    Ok(Checkpoint { model, common_words })
}

pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model, vocab: &Vocabulary) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model, vocab.common_words())).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Loads a checkpoint and refuses it unless it was trained on `vocab`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.vocab_hash() != vocab.common_hash() {
        return Err(Error::Checkpoint(
            "vocabulary hash mismatch: checkpoint was trained with a different vocabulary".into(),
        ));
    }
    Ok(ckpt)
}
