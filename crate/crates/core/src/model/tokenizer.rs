use std::collections::HashMap;
use std::hash::Hasher;
use std::path::Path;
use std::sync::OnceLock;

use fnv::FnvHasher;
use regex::Regex;
use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub pad: u32,
    pub unk: u32,
    pub cls: u32,
    pub sep: u32,
}

/// Words (runs of letters, marks and digits) and single punctuation/symbol
/// characters, BERT basic-tokenizer style.
fn word_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| {
        Regex::new(r"[\p{P}\p{S}]|[^\s\p{P}\p{S}\p{Cc}\p{Cf}]+").unwrap()
    })
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x20000..=0x2A6DF | 0x2A700..=0x2B73F
        | 0x2B740..=0x2B81F | 0x2B820..=0x2CEAF | 0xF900..=0xFAFF | 0x2F800..=0x2FA1F)
}

fn basic_pieces(text: &str, lowercase: bool) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len());
    for c in text.chars() {
        if is_cjk(c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    let prepared: String = if lowercase {
        spaced.to_lowercase().nfd().filter(|&c| !is_combining_mark(c)).collect()
    } else {
        spaced
    };
    word_pattern()
        .find_iter(&prepared)
        .map(|m| m.as_str().to_string())
        .collect()
}

/// Vocabulary-free tokenizer for the toy encoder: pieces are hashed into
/// `vocab_size - 4` buckets after the four special ids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashTokenizer {
    pub vocab_size: usize,
    #[serde(default = "yes")]
    pub lowercase: bool,
}

fn yes() -> bool {
    true
}

impl HashTokenizer {
    const SPECIAL: SpecialTokens = SpecialTokens { pad: 0, unk: 1, cls: 2, sep: 3 };

    fn piece_id(&self, piece: &str) -> u32 {
        let mut hasher = FnvHasher::default();
        hasher.write(piece.as_bytes());
        let buckets = (self.vocab_size - 4) as u64;
        (4 + hasher.finish() % buckets) as u32
    }
}

/// Greedy longest-match WordPiece over a BERT `vocab.txt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WordPieceTokenizer {
    vocab: HashMap<String, u32>,
    lowercase: bool,
    special: SpecialTokens,
}

const MAX_WORD_CHARS: usize = 100;

impl WordPieceTokenizer {
    pub fn from_vocab_file(path: &Path, lowercase: bool) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_vocab(text.lines().map(str::to_string), lowercase)
    }

    pub fn from_vocab<I: IntoIterator<Item = String>>(tokens: I, lowercase: bool) -> Result<Self> {
        let vocab: HashMap<String, u32> = tokens
            .into_iter()
            .enumerate()
            .map(|(i, t)| (t.trim_end_matches(['\r', '\n']).to_string(), i as u32))
            .collect();
        let lookup = |t: &str| {
            vocab
                .get(t)
                .copied()
                .ok_or_else(|| Error::IncompatibleArchitecture(format!("vocabulary lacks {t}")))
        };
        let special = SpecialTokens {
            pad: lookup("[PAD]")?,
            unk: lookup("[UNK]")?,
            cls: lookup("[CLS]")?,
            sep: lookup("[SEP]")?,
        };
        Ok(WordPieceTokenizer { vocab, lowercase, special })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.values().max().map_or(0, |&m| m as usize + 1)
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    /// Tokens ordered by id; ids missing from the map become `[unusedN]`.
    pub fn ordered_vocab(&self) -> Vec<String> {
        let mut out: Vec<String> = (0..self.vocab_size()).map(|i| format!("[unused{i}]")).collect();
        for (tok, &id) in &self.vocab {
            out[id as usize] = tok.clone();
        }
        out
    }

    fn word_pieces(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(self.special.unk);
            return;
        }
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                let mut candidate: String = chars[start..end].iter().collect();
                if start > 0 {
                    candidate.insert_str(0, "##");
                }
                if let Some(&id) = self.vocab.get(&candidate) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    pieces.push(id);
                    start = end;
                }
                None => {
                    out.push(self.special.unk);
                    return;
                }
            }
        }
        out.extend(pieces);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tokenizer {
    Hash(HashTokenizer),
    WordPiece(WordPieceTokenizer),
}

impl Tokenizer {
    pub fn special(&self) -> SpecialTokens {
        match self {
            Tokenizer::Hash(_) => HashTokenizer::SPECIAL,
            Tokenizer::WordPiece(w) => w.special,
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Tokenizer::Hash(h) => h.vocab_size,
            Tokenizer::WordPiece(w) => w.vocab_size(),
        }
    }

    /// Content token ids, without special tokens or truncation.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        match self {
            Tokenizer::Hash(h) => basic_pieces(text, h.lowercase)
                .iter()
                .map(|p| h.piece_id(p))
                .collect(),
            Tokenizer::WordPiece(w) => {
                let mut out = Vec::new();
                for word in basic_pieces(text, w.lowercase) {
                    w.word_pieces(&word, &mut out);
                }
                out
            }
        }
    }

    /// `[CLS] tokens [SEP]`, keeping the head of the content so the whole
    /// sequence fits in `max_len`.
    pub fn encode(&self, text: &str, max_len: usize) -> Vec<u32> {
        let special = self.special();
        let mut content = self.tokenize(text);
        content.truncate(max_len.saturating_sub(2));
        let mut ids = Vec::with_capacity(content.len() + 2);
        ids.push(special.cls);
        ids.extend(content);
        ids.push(special.sep);
        ids
    }
}
