//! Encoder classifiers behind one interface: checkpoint loading,
//! tokenization with truncation, batched scoring and label resolution.

pub mod checkpoint;
pub mod encoder;
pub mod ops;
pub mod tokenizer;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledSample;
use crate::error::{Error, Result};
use crate::label::{SentimentLabel, NUM_LABELS};

pub use encoder::{Encoder, EncoderConfig};
pub use tokenizer::{HashTokenizer, Tokenizer};

/// Checkpoint id of the randomly initialized toy encoder.
pub const TOY_CHECKPOINT: &str = "toy";
/// Default members: the multilingual star-rating BERT and XLM-R base.
pub const DEFAULT_CHECKPOINTS: [&str; 2] = [
    "nlptown/bert-base-multilingual-uncased-sentiment",
    "xlm-roberta-base",
];
pub const DEFAULT_MAX_SEQ_LEN: usize = 128;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Device {
    #[default]
    Cpu,
    Accelerator,
}

impl FromStr for Device {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cpu" => Ok(Device::Cpu),
            "accelerator" | "gpu" | "cuda" => Ok(Device::Accelerator),
            other => Err(Error::InvalidConfig(format!("unknown device {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub checkpoint_id: String,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
    #[serde(default = "default_num_labels")]
    pub num_labels: usize,
    #[serde(default)]
    pub device: Device,
    /// Seed for anything initialized fresh: the toy encoder or a replaced head.
    #[serde(default)]
    pub init_seed: u64,
}

fn default_max_seq_len() -> usize {
    DEFAULT_MAX_SEQ_LEN
}

fn default_num_labels() -> usize {
    NUM_LABELS
}

impl ModelConfig {
    pub fn new(checkpoint_id: impl Into<String>) -> Self {
        ModelConfig {
            checkpoint_id: checkpoint_id.into(),
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            num_labels: NUM_LABELS,
            device: Device::Cpu,
            init_seed: 0,
        }
    }

    pub fn toy(init_seed: u64) -> Self {
        ModelConfig { init_seed, ..Self::new(TOY_CHECKPOINT) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_labels != NUM_LABELS {
            return Err(Error::InvalidConfig(format!(
                "num_labels must be {NUM_LABELS}, got {}",
                self.num_labels
            )));
        }
        if self.max_seq_len < 3 {
            return Err(Error::InvalidConfig("max_seq_len must be at least 3".into()));
        }
        Ok(())
    }
}

/// Class probabilities indexed by [`SentimentLabel`] ordinal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassScores {
    pub probs: [f64; NUM_LABELS],
}

impl ClassScores {
    pub fn new(probs: [f64; NUM_LABELS]) -> Result<Self> {
        let valid = probs.iter().all(|p| (0.0..=1.0).contains(p))
            && (probs.iter().sum::<f64>() - 1.0).abs() <= 1e-6;
        if !valid {
            return Err(Error::Malformed(format!("not a probability vector: {probs:?}")));
        }
        Ok(ClassScores { probs })
    }

    pub fn from_logits(logits: &[f32]) -> Self {
        let p = ops::softmax(logits);
        ClassScores { probs: [p[0], p[1], p[2]] }
    }
}

/// Argmax with ties going to the lowest ordinal.
pub fn predicted_label(scores: &ClassScores) -> SentimentLabel {
    let mut best = 0;
    for i in 1..NUM_LABELS {
        if scores.probs[i] > scores.probs[best] {
            best = i;
        }
    }
    SentimentLabel::ALL[best]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub language: String,
    #[serde(rename = "true", default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<SentimentLabel>,
    pub scores: ClassScores,
    pub predicted: SentimentLabel,
}

impl PredictionRecord {
    pub fn new(sample_id: String, language: String, true_label: Option<SentimentLabel>, scores: ClassScores) -> Self {
        let predicted = predicted_label(&scores);
        PredictionRecord { sample_id, language, true_label, scores, predicted }
    }
}

/// Token ids and attention mask, padded to the longest row.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub token_ids: Array2<u32>,
    pub attention_mask: Array2<u8>,
    pub sample_ids: Vec<String>,
}

impl EncodedBatch {
    pub fn rows(&self) -> usize {
        self.token_ids.nrows()
    }

    /// Number of real (unpadded) tokens in each row.
    pub fn lengths(&self) -> Vec<usize> {
        self.attention_mask
            .rows()
            .into_iter()
            .map(|r| r.iter().filter(|&&m| m == 1).count())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelHandle {
    pub config: ModelConfig,
    encoder: Encoder,
    tokenizer: Tokenizer,
    /// The checkpoint's head was not 3-way and has been replaced.
    pub head_reinitialized: bool,
    /// Directory the weights came from, if any.
    pub source: Option<PathBuf>,
}

pub fn load_model(config: &ModelConfig) -> Result<ModelHandle> {
    config.validate()?;
    if config.device == Device::Accelerator {
        log::warn!("no accelerator backend in this build; running on cpu");
    }
    let (encoder, tokenizer, head_reinitialized, source) = if config.checkpoint_id == TOY_CHECKPOINT {
        let cfg = EncoderConfig::toy();
        let tokenizer = Tokenizer::Hash(HashTokenizer { vocab_size: cfg.vocab_size, lowercase: true });
        (Encoder::random(cfg, config.init_seed)?, tokenizer, false, None)
    } else {
        let dir = checkpoint::resolve(&config.checkpoint_id)?;
        let loaded = checkpoint::load_dir(&dir, config.init_seed)?;
        (loaded.encoder, loaded.tokenizer, loaded.head_reinitialized, Some(dir))
    };
    if config.max_seq_len > encoder.config().max_position_embeddings {
        return Err(Error::InvalidConfig(format!(
            "max_seq_len {} exceeds the checkpoint's {} positions",
            config.max_seq_len,
            encoder.config().max_position_embeddings
        )));
    }
    if head_reinitialized {
        log::info!("{}: classification head reinitialized for 3 labels", config.checkpoint_id);
    }
    Ok(ModelHandle { config: config.clone(), encoder, tokenizer, head_reinitialized, source })
}

impl ModelHandle {
    pub fn from_parts(config: ModelConfig, encoder: Encoder, tokenizer: Tokenizer) -> Self {
        ModelHandle { config, encoder, tokenizer, head_reinitialized: false, source: None }
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub(crate) fn encoder_mut(&mut self) -> &mut Encoder {
        &mut self.encoder
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    /// Digest of every weight; equal digests mean identical models.
    pub fn weights_digest(&self) -> String {
        self.encoder.params().digest()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save_dir(dir, &self.encoder, &self.tokenizer)
    }

    /// Reload a handle saved with [`ModelHandle::save`], keeping `config`'s
    /// sequence length and device.
    pub fn load_saved(dir: &Path, config: &ModelConfig) -> Result<Self> {
        let config = ModelConfig { checkpoint_id: dir.display().to_string(), ..config.clone() };
        load_model(&config)
    }

    pub fn encode_batch<S: AsRef<str>>(&self, texts: &[S], max_seq_len: usize) -> Result<EncodedBatch> {
        let ids = (0..texts.len()).map(|i| i.to_string()).collect();
        self.encode_with_ids(texts, ids, max_seq_len)
    }

    pub fn encode_samples(&self, samples: &[&LabeledSample]) -> Result<EncodedBatch> {
        let texts: Vec<&str> = samples.iter().map(|s| s.text_clean.as_str()).collect();
        let ids = samples.iter().map(|s| s.id.clone()).collect();
        self.encode_with_ids(&texts, ids, self.config.max_seq_len)
    }

    fn encode_with_ids<S: AsRef<str>>(
        &self,
        texts: &[S],
        sample_ids: Vec<String>,
        max_seq_len: usize,
    ) -> Result<EncodedBatch> {
        if texts.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if max_seq_len < 3 {
            return Err(Error::InvalidConfig("max_seq_len must be at least 3".into()));
        }
        let max_seq_len = max_seq_len.min(self.encoder.config().max_position_embeddings);
        let rows: Vec<Vec<u32>> = texts
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let t = t.as_ref();
                if t.trim().is_empty() {
                    Err(Error::EmptyText(i))
                } else {
                    Ok(self.tokenizer.encode(t, max_seq_len))
                }
            })
            .collect::<Result<_>>()?;
        let width = rows.iter().map(Vec::len).max().unwrap();
        let pad = self.tokenizer.special().pad;
        let mut token_ids = Array2::from_elem((rows.len(), width), pad);
        let mut attention_mask = Array2::zeros((rows.len(), width));
        for (r, row) in rows.iter().enumerate() {
            for (c, &id) in row.iter().enumerate() {
                token_ids[[r, c]] = id;
                attention_mask[[r, c]] = 1;
            }
        }
        Ok(EncodedBatch { token_ids, attention_mask, sample_ids })
    }

    /// Unpadded token rows of a batch, after checking its invariants.
    pub(crate) fn batch_rows(&self, batch: &EncodedBatch) -> Result<Vec<Vec<u32>>> {
        if batch.token_ids.dim() != batch.attention_mask.dim() {
            return Err(Error::ShapeMismatch(format!(
                "token ids {:?} vs mask {:?}",
                batch.token_ids.dim(),
                batch.attention_mask.dim()
            )));
        }
        if !batch.sample_ids.is_empty() && batch.sample_ids.len() != batch.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} sample ids for {} rows",
                batch.sample_ids.len(),
                batch.rows()
            )));
        }
        if batch.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut out = Vec::with_capacity(batch.rows());
        for (r, (ids, mask)) in batch.token_ids.rows().into_iter().zip(batch.attention_mask.rows()).enumerate() {
            let len = mask.iter().take_while(|&&m| m == 1).count();
            if len == 0 || mask.iter().skip(len).any(|&m| m != 0) {
                return Err(Error::ShapeMismatch(format!("row {r}: mask is not a nonempty prefix")));
            }
            out.push(ids.iter().take(len).copied().collect());
        }
        Ok(out)
    }

    pub fn predict_batch(&self, batch: &EncodedBatch) -> Result<Vec<ClassScores>> {
        let rows = self.batch_rows(batch)?;
        rows.par_iter()
            .map(|ids| self.encoder.logits(ids).map(|l| ClassScores::from_logits(&l)))
            .collect()
    }

    /// Score samples in chunks of `batch_size`, in input order.
    pub fn predict_samples(&self, samples: &[LabeledSample], batch_size: usize) -> Result<Vec<PredictionRecord>> {
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(batch_size.max(1)) {
            let refs: Vec<&LabeledSample> = chunk.iter().collect();
            let batch = self.encode_samples(&refs)?;
            let scores = self.predict_batch(&batch)?;
            out.extend(chunk.iter().zip(scores).map(|(s, sc)| {
                PredictionRecord::new(s.id.clone(), s.language.clone(), Some(s.label), sc)
            }));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> ModelHandle {
        load_model(&ModelConfig::toy(7)).unwrap()
    }

    #[test]
    fn argmax_ties_go_low() {
        let l = |p| predicted_label(&ClassScores { probs: p });
        assert_eq!(l([0.1, 0.2, 0.7]), SentimentLabel::Positive);
        assert_eq!(l([0.4, 0.4, 0.2]), SentimentLabel::Negative);
        assert_eq!(l([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]), SentimentLabel::Negative);
        assert_eq!(l([0.2, 0.4, 0.4]), SentimentLabel::Neutral);
    }

    #[test]
    fn toy_handle_has_three_labels() {
        let h = toy();
        assert_eq!(h.encoder().config().num_labels, 3);
        assert!(!h.head_reinitialized);
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::toy(0);
        c.num_labels = 5;
        assert!(matches!(load_model(&c), Err(Error::InvalidConfig(_))));
        let mut c = ModelConfig::toy(0);
        c.max_seq_len = 4096;
        assert!(matches!(load_model(&c), Err(Error::InvalidConfig(_))));
        assert!(matches!(
            load_model(&ModelConfig::new("definitely/not-a-real-checkpoint-xyz")),
            Err(Error::UnresolvableCheckpoint(_))
        ));
    }

    #[test]
    fn short_input_encodes_with_full_mask() {
        let h = toy();
        let b = h.encode_batch(&["hola"], 128).unwrap();
        assert_eq!(b.rows(), 1);
        assert!(b.token_ids.ncols() <= 128);
        assert!(b.attention_mask.iter().all(|&m| m == 1));
    }

    #[test]
    fn long_input_is_truncated_to_exactly_max_len() {
        let h = toy();
        let text: String = "palabra ".repeat(1250);
        assert_eq!(text.len(), 10_000);
        let b = h.encode_batch(&[text], 128).unwrap();
        assert_eq!(b.token_ids.ncols(), 128);
        assert_eq!(b.lengths(), vec![128]);
    }

    #[test]
    fn padding_follows_the_longest_row() {
        let h = toy();
        // 3 content pieces and 60 content pieces.
        let short = "uno dos tres";
        let long = (0..60).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ");
        let b = h.encode_batch(&[short, long.as_str()], 128).unwrap();
        assert_eq!(b.token_ids.ncols(), 62);
        assert_eq!(b.lengths(), vec![5, 62]);
        let pad = h.tokenizer().special().pad;
        for (id, m) in b.token_ids.iter().zip(b.attention_mask.iter()) {
            assert_eq!(*m == 0, *id == pad);
        }
    }

    #[test]
    fn encode_errors() {
        let h = toy();
        let empty: [&str; 0] = [];
        assert!(matches!(h.encode_batch(&empty, 128), Err(Error::EmptyBatch)));
        assert!(matches!(h.encode_batch(&["ok", " "], 128), Err(Error::EmptyText(1))));
    }

    #[test]
    fn scores_are_distributions_and_deterministic() {
        let h = toy();
        let b = h.encode_batch(&["que buen partido", "que buen partido", "terrible"], 128).unwrap();
        let s = h.predict_batch(&b).unwrap();
        assert_eq!(s.len(), 3);
        for sc in &s {
            assert!((sc.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(sc.probs.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        assert_eq!(s[0], s[1]);
        assert_eq!(s, h.predict_batch(&b).unwrap());
    }

    #[test]
    fn batch_size_does_not_change_scores() {
        let h = toy();
        let texts = ["a", "un partido muy largo y aburrido de verdad", "ok ok"];
        let together = h.predict_batch(&h.encode_batch(&texts, 128).unwrap()).unwrap();
        for (i, t) in texts.iter().enumerate() {
            let alone = h.predict_batch(&h.encode_batch(&[t], 128).unwrap()).unwrap();
            for c in 0..3 {
                assert!((alone[0].probs[c] - together[i].probs[c]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn malformed_batches_are_rejected() {
        let h = toy();
        let mut b = h.encode_batch(&["x y", "x"], 128).unwrap();
        b.attention_mask[[1, 0]] = 0;
        assert!(matches!(h.predict_batch(&b), Err(Error::ShapeMismatch(_))));
        let mut b = h.encode_batch(&["x"], 128).unwrap();
        b.attention_mask = Array2::ones((2, 3));
        assert!(matches!(h.predict_batch(&b), Err(Error::ShapeMismatch(_))));
    }
}
