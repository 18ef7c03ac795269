//! On-disk run directory: checkpoint, vocabularies and a JSON sidecar.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::data::{Vocab, Vocabs};
use crate::error::{Error, Result};
use crate::model::{param_shapes, Model, ModelConfig};
use crate::tensor::{read_checkpoint, write_checkpoint};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const META_FILE: &str = "model.json";
const VOCAB_FILES: [&str; 3] = ["words.vocab", "pos.vocab", "dep.vocab"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// SHA-256 of each vocabulary dump, keyed by file name.
    pub vocab_sha256: BTreeMap<String, String>,
}

fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_run(dir: &Path, model: &Model, vocabs: &Vocabs, train: &TrainConfig) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut vocab_sha256 = BTreeMap::new();
    for (name, v) in VOCAB_FILES.iter().zip([&vocabs.words, &vocabs.pos, &vocabs.dep]) {
        let dump = v.dump();
        write_file(&dir.join(name), dump.as_bytes())?;
        vocab_sha256.insert(name.to_string(), sha256_hex(&dump));
    }
    let ckpt = dir.join(CHECKPOINT_FILE);
    let file = File::create(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    let mut w = BufWriter::new(file);
    write_checkpoint(&mut w, &model.params).map_err(|e| Error::io(&ckpt, e))?;
    w.flush().map_err(|e| Error::io(&ckpt, e))?;
    let meta = RunMeta {
        model: model.config.clone(),
        train: train.clone(),
        vocab_sha256,
    };
    write_file(&dir.join(META_FILE), serde_json::to_string_pretty(&meta)?.as_bytes())
}

pub fn load_run(dir: &Path) -> Result<(Model, Vocabs, RunMeta)> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: RunMeta = serde_json::from_str(&text)?;
    let mut loaded = Vec::with_capacity(3);
    for name in VOCAB_FILES {
        let path = dir.join(name);
        let dump = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let expected = meta.vocab_sha256.get(name).map(String::as_str);
        if expected != Some(sha256_hex(&dump).as_str()) {
            return Err(Error::Checkpoint(format!("{name} does not match the hash recorded in {META_FILE}")));
        }
        loaded.push(Vocab::parse_dump(&dump)?);
    }
    let dep = loaded.pop().expect("three vocabularies");
    let pos = loaded.pop().expect("three vocabularies");
    let words = loaded.pop().expect("three vocabularies");

    let ckpt = dir.join(CHECKPOINT_FILE);
    let file = File::open(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
    let params = read_checkpoint(&mut BufReader::new(file))?;
    let shapes = param_shapes(&meta.model);
    if shapes.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors for {}, found {}",
            shapes.len(),
            meta.model.variant,
            params.len()
        )));
    }
    for (name, shape) in &shapes {
        match params.get(name) {
            Some(t) if t.shape() == shape.as_slice() => {}
            Some(t) => {
                return Err(Error::Checkpoint(format!("{name}: shape {:?}, expected {shape:?}", t.shape())));
            }
            None => return Err(Error::Checkpoint(format!("missing tensor {name}"))),
        }
    }
    if words.len() != meta.model.vocab_size {
        return Err(Error::Checkpoint(format!(
            "word vocabulary has {} entries, model expects {}",
            words.len(),
            meta.model.vocab_size
        )));
    }
    let model = Model {
        config: meta.model.clone(),
        params,
    };
    Ok((model, Vocabs { words, pos, dep }, meta))
}
