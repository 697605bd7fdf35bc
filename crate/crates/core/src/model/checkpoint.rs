//! Checkpoint directories: HF-style `config.json`, `model.safetensors`, and
//! either a `vocab.txt` (WordPiece) or a hash-tokenizer entry in the config.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use safetensors::{Dtype, SafeTensors};
use serde_json::{json, Value};

use super::encoder::{init_tensor, Encoder, EncoderConfig, CLASSIFIER_BIAS, CLASSIFIER_WEIGHT};
use super::tokenizer::{HashTokenizer, Tokenizer, WordPieceTokenizer};
use crate::error::{Error, Result};
use crate::label::{SentimentLabel, NUM_LABELS};

pub const CONFIG_FILE: &str = "config.json";
pub const WEIGHTS_FILE: &str = "model.safetensors";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const TOKENIZER_CONFIG_FILE: &str = "tokenizer_config.json";
const HASH_TOKENIZER_KEY: &str = "polysent_tokenizer";

/// Environment variable overriding the checkpoint cache directory.
pub const CACHE_ENV: &str = "POLYSENT_CACHE_DIR";
/// Environment variable overriding the remote registry base URL.
pub const REGISTRY_ENV: &str = "POLYSENT_REGISTRY_URL";
pub const DEFAULT_REGISTRY: &str = "https://huggingface.co";

pub fn cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_ENV) {
        return PathBuf::from(dir);
    }
    let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    home.join(".cache").join("polysent")
}

/// Directory name of a registry id inside the cache (`org/name` → `org--name`).
pub fn cache_key(checkpoint_id: &str) -> String {
    checkpoint_id.replace('/', "--")
}

fn is_checkpoint_dir(dir: &Path) -> bool {
    dir.join(CONFIG_FILE).is_file()
}

/// Local directory, then cache, then (with the `remote` feature) the registry.
pub fn resolve(checkpoint_id: &str) -> Result<PathBuf> {
    let local = Path::new(checkpoint_id);
    if is_checkpoint_dir(local) {
        return Ok(local.to_path_buf());
    }
    let cached = cache_dir().join(cache_key(checkpoint_id));
    if is_checkpoint_dir(&cached) {
        return Ok(cached);
    }
    fetch_remote(checkpoint_id, &cached)
}

#[cfg(feature = "remote")]
fn fetch_remote(checkpoint_id: &str, dest: &Path) -> Result<PathBuf> {
    let base = std::env::var(REGISTRY_ENV).unwrap_or_else(|_| DEFAULT_REGISTRY.to_string());
    let unresolvable = |why: String| {
        log::warn!("{checkpoint_id}: {why}");
        Error::UnresolvableCheckpoint(checkpoint_id.to_string())
    };
    let get = |file: &str| -> Result<Option<Vec<u8>>> {
        let url = format!("{}/{checkpoint_id}/resolve/main/{file}", base.trim_end_matches('/'));
        match ureq::get(&url).call() {
            Ok(mut resp) => resp
                .body_mut()
                .with_config()
                .limit(u64::MAX)
                .read_to_vec()
                .map(Some)
                .map_err(|e| unresolvable(format!("{url}: {e}"))),
            Err(ureq::Error::StatusCode(404)) => Ok(None),
            Err(e) => Err(unresolvable(format!("{url}: {e}"))),
        }
    };
    let config = get(CONFIG_FILE)?.ok_or_else(|| unresolvable("no config.json in registry".into()))?;
    let staging = dest.with_extension("partial");
    std::fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let path = staging.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))
    };
    write(CONFIG_FILE, &config)?;
    for file in [WEIGHTS_FILE, VOCAB_FILE, TOKENIZER_CONFIG_FILE] {
        if let Some(bytes) = get(file)? {
            write(file, &bytes)?;
        }
    }
    std::fs::rename(&staging, dest).map_err(|e| Error::io(dest, e))?;
    Ok(dest.to_path_buf())
}

#[cfg(not(feature = "remote"))]
fn fetch_remote(checkpoint_id: &str, _dest: &Path) -> Result<PathBuf> {
    log::debug!("{checkpoint_id}: not local or cached, and remote fetching is disabled");
    Err(Error::UnresolvableCheckpoint(checkpoint_id.to_string()))
}

pub struct LoadedCheckpoint {
    pub encoder: Encoder,
    pub tokenizer: Tokenizer,
    pub head_reinitialized: bool,
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Map legacy and prefix-less tensor names onto the canonical layout.
fn canonical_name(name: &str) -> String {
    let mut name = name.to_string();
    for prefix in ["embeddings.", "encoder.", "pooler."] {
        if name.starts_with(prefix) {
            name = format!("bert.{name}");
            break;
        }
    }
    if name.contains("LayerNorm") {
        if let Some(stem) = name.strip_suffix(".gamma") {
            name = format!("{stem}.weight");
        } else if let Some(stem) = name.strip_suffix(".beta") {
            name = format!("{stem}.bias");
        }
    }
    name
}

fn to_f32(dtype: Dtype, data: &[u8]) -> Result<Vec<f32>> {
    let chunks = |width: usize| data.chunks_exact(width);
    Ok(match dtype {
        Dtype::F32 => chunks(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect(),
        Dtype::F64 => chunks(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()) as f32).collect(),
        Dtype::F16 => chunks(2)
            .map(|b| half::f16::from_le_bytes(b.try_into().unwrap()).to_f32())
            .collect(),
        Dtype::BF16 => chunks(2)
            .map(|b| half::bf16::from_le_bytes(b.try_into().unwrap()).to_f32())
            .collect(),
        other => {
            return Err(Error::IncompatibleArchitecture(format!("unsupported tensor dtype {other:?}")))
        }
    })
}

fn read_tensors(path: &Path) -> Result<HashMap<String, ArrayD<f32>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let tensors = SafeTensors::deserialize(&bytes)
        .map_err(|e| Error::IncompatibleArchitecture(format!("{}: {e}", path.display())))?;
    let mut out = HashMap::new();
    for (name, view) in tensors.tensors() {
        let values = to_f32(view.dtype(), view.data())?;
        let array = ArrayD::from_shape_vec(IxDyn(view.shape()), values)
            .map_err(|e| Error::ShapeMismatch(format!("{name}: {e}")))?;
        out.insert(canonical_name(&name), array);
    }
    Ok(out)
}

fn encoder_config(config: &Value) -> Result<EncoderConfig> {
    let model_type = config.get("model_type").and_then(Value::as_str).unwrap_or("bert");
    if model_type != "bert" {
        return Err(Error::IncompatibleArchitecture(format!(
            "model_type `{model_type}` (only BERT-family encoders are supported)"
        )));
    }
    let mut cfg: EncoderConfig = serde_json::from_value(config.clone())
        .map_err(|e| Error::IncompatibleArchitecture(format!("config.json: {e}")))?;
    if let Some(act) = config.get("hidden_act").and_then(Value::as_str) {
        if act != "gelu" {
            return Err(Error::IncompatibleArchitecture(format!("hidden_act `{act}`")));
        }
    }
    cfg.num_labels = NUM_LABELS;
    Ok(cfg)
}

fn load_tokenizer(dir: &Path, config: &Value) -> Result<Tokenizer> {
    if let Some(entry) = config.get(HASH_TOKENIZER_KEY) {
        let hash: HashTokenizer = serde_json::from_value(entry.clone())?;
        if hash.vocab_size <= 4 {
            return Err(Error::InvalidConfig("hash tokenizer needs more than 4 ids".into()));
        }
        return Ok(Tokenizer::Hash(hash));
    }
    let vocab = dir.join(VOCAB_FILE);
    if !vocab.is_file() {
        return Err(Error::IncompatibleArchitecture(format!(
            "{}: no {VOCAB_FILE} (only WordPiece vocabularies are supported)",
            dir.display()
        )));
    }
    let tok_cfg = dir.join(TOKENIZER_CONFIG_FILE);
    let lowercase = if tok_cfg.is_file() {
        read_json(&tok_cfg)?.get("do_lower_case").and_then(Value::as_bool).unwrap_or(true)
    } else {
        true
    };
    Ok(Tokenizer::WordPiece(WordPieceTokenizer::from_vocab_file(&vocab, lowercase)?))
}

/// Load a checkpoint directory. A classification head whose width is not
/// three (or that is absent) is replaced by a fresh one seeded by `seed`.
pub fn load_dir(dir: &Path, seed: u64) -> Result<LoadedCheckpoint> {
    let config = read_json(&dir.join(CONFIG_FILE))?;
    let cfg = encoder_config(&config)?;
    let tokenizer = load_tokenizer(dir, &config)?;
    if tokenizer.vocab_size() > cfg.vocab_size {
        return Err(Error::IncompatibleArchitecture(format!(
            "tokenizer has {} ids but the embedding table only {}",
            tokenizer.vocab_size(),
            cfg.vocab_size
        )));
    }
    let weights = dir.join(WEIGHTS_FILE);
    if !weights.is_file() {
        return Err(Error::IncompatibleArchitecture(format!(
            "{}: no {WEIGHTS_FILE}",
            dir.display()
        )));
    }
    let mut tensors = read_tensors(&weights)?;

    let head_ok = matches!(
        (tensors.get(CLASSIFIER_WEIGHT), tensors.get(CLASSIFIER_BIAS)),
        (Some(w), Some(b)) if w.shape() == [NUM_LABELS, cfg.hidden_size] && b.shape() == [NUM_LABELS]
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let encoder = Encoder::from_tensors(cfg, |name, shape| {
        let is_head = name == CLASSIFIER_WEIGHT || name == CLASSIFIER_BIAS;
        if is_head && !head_ok {
            return Ok(init_tensor(name, shape, &mut rng));
        }
        match tensors.remove(name) {
            Some(t) => Ok(t),
            None if name.starts_with("bert.pooler.") => Ok(init_tensor(name, shape, &mut rng)),
            None => Err(Error::IncompatibleArchitecture(format!("missing tensor {name}"))),
        }
    })?;
    Ok(LoadedCheckpoint { encoder, tokenizer, head_reinitialized: !head_ok })
}

/// Write a checkpoint directory readable by [`load_dir`].
pub fn save_dir(dir: &Path, encoder: &Encoder, tokenizer: &Tokenizer) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let cfg = encoder.config();
    let mut config = serde_json::to_value(cfg)?;
    let obj = config.as_object_mut().unwrap();
    obj.insert("model_type".into(), json!("bert"));
    obj.insert("architectures".into(), json!(["BertForSequenceClassification"]));
    obj.insert("hidden_act".into(), json!("gelu"));
    if cfg.num_labels == NUM_LABELS {
        let id2label: serde_json::Map<String, Value> = SentimentLabel::ALL
            .iter()
            .map(|l| (l.ordinal().to_string(), json!(l.name())))
            .collect();
        obj.insert("id2label".into(), Value::Object(id2label));
    }
    match tokenizer {
        Tokenizer::Hash(h) => {
            obj.insert(HASH_TOKENIZER_KEY.into(), serde_json::to_value(h)?);
        }
        Tokenizer::WordPiece(w) => {
            let vocab = w.ordered_vocab().join("\n") + "\n";
            let path = dir.join(VOCAB_FILE);
            std::fs::write(&path, vocab).map_err(|e| Error::io(path, e))?;
            let path = dir.join(TOKENIZER_CONFIG_FILE);
            std::fs::write(&path, json!({ "do_lower_case": w.lowercase() }).to_string())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    let path = dir.join(CONFIG_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&config)? + "\n").map_err(|e| Error::io(path, e))?;

    let params = encoder.params();
    let buffers: Vec<Vec<u8>> = params
        .values()
        .iter()
        .map(|v| v.iter().flat_map(|x| x.to_le_bytes()).collect())
        .collect();
    let views = params
        .names()
        .iter()
        .zip(params.values())
        .zip(&buffers)
        .map(|((name, value), bytes)| {
            safetensors::tensor::TensorView::new(Dtype::F32, value.shape().to_vec(), bytes)
                .map(|view| (name.clone(), view))
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let bytes = safetensors::serialize(views, None).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let path = dir.join(WEIGHTS_FILE);
    std::fs::write(&path, bytes).map_err(|e| Error::io(path, e))
}
