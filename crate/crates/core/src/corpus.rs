//! Raw tweet ingestion, star-rating parsing and label distributions.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{map_stars_to_label, SentimentLabel, NUM_LABELS};

/// Reserved tag for rows whose language is absent or not a two-letter code.
pub const UNDETERMINED_LANGUAGE: &str = "und";

const TWEET_COLUMN: &str = "tweet";
const LANGUAGE_COLUMN: &str = "language";
const SENTIMENT_COLUMN: &str = "sentiment";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub language: String,
    pub stars: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: String,
    pub text: String,
    pub text_clean: String,
    pub language: String,
    pub label: SentimentLabel,
    /// Original rating, kept for audit.
    pub stars: u8,
}

impl LabeledSample {
    pub fn from_sample(sample: Sample) -> Result<Self> {
        let label = map_stars_to_label(sample.stars)?;
        Ok(LabeledSample {
            text_clean: sample.text.trim().to_string(),
            id: sample.id,
            text: sample.text,
            language: sample.language,
            label,
            stars: sample.stars,
        })
    }
}

/// A row that failed to parse. `row` is the 0-based data row index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Csv,
    Jsonl,
}

impl CorpusFormat {
    /// Guess from the file extension; anything but `.jsonl`/`.json` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") | Some("ndjson") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Csv,
        }
    }
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(CorpusFormat::Csv),
            "jsonl" => Ok(CorpusFormat::Jsonl),
            other => Err(Error::InvalidConfig(format!("unknown corpus format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub samples: Vec<Sample>,
    pub rejects: Vec<Reject>,
}

fn rating_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"(?i)^([0-9]+)(?:\s*stars?)?$").unwrap())
}

/// Parse `"N stars"`, `"N star"` or a bare `"N"` into a rating in 1..=5.
pub fn parse_star_rating(raw: &str) -> Result<u8> {
    let trimmed = raw.trim();
    let caps = rating_pattern()
        .captures(trimmed)
        .ok_or_else(|| Error::RatingSyntax(raw.to_string()))?;
    let n: i64 = caps[1]
        .parse()
        .map_err(|_| Error::RatingSyntax(raw.to_string()))?;
    if !(1..=5).contains(&n) {
        return Err(Error::RatingOutOfRange(n));
    }
    Ok(n as u8)
}

/// Lowercase a language tag; keep a two-letter primary subtag, otherwise `und`.
pub fn normalize_language(raw: &str) -> String {
    let lower = raw.trim().to_ascii_lowercase();
    let primary = lower.split(['-', '_']).next().unwrap_or("");
    if primary.len() == 2 && primary.bytes().all(|b| b.is_ascii_lowercase()) {
        primary.to_string()
    } else {
        UNDETERMINED_LANGUAGE.to_string()
    }
}

fn build_sample(
    stem: &str,
    row: usize,
    tweet: Option<&str>,
    language: Option<&str>,
    sentiment: Option<&str>,
) -> std::result::Result<Sample, String> {
    let text = tweet.ok_or("missing field `tweet`")?;
    if text.trim().is_empty() {
        return Err("empty tweet".into());
    }
    let sentiment = sentiment.ok_or("missing field `sentiment`")?;
    let stars = parse_star_rating(sentiment).map_err(|e| e.to_string())?;
    Ok(Sample {
        id: format!("{stem}:{row}"),
        text: text.to_string(),
        language: normalize_language(language.unwrap_or("")),
        stars,
    })
}

/// Load a tweet table. Bad rows are collected into `rejects`; only a
/// missing file, a missing column, an empty table or a table where every
/// row is rejected is an error.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<LoadedCorpus> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("corpus")
        .to_string();
    let loaded = match format {
        CorpusFormat::Csv => parse_csv(&stem, &bytes)?,
        CorpusFormat::Jsonl => parse_jsonl(&stem, &bytes)?,
    };
    if loaded.samples.is_empty() {
        if loaded.rejects.is_empty() {
            return Err(Error::NoRows);
        }
        return Err(Error::AllRowsRejected(loaded.rejects.len()));
    }
    Ok(loaded)
}

fn parse_csv(stem: &str, bytes: &[u8]) -> Result<LoadedCorpus> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(bytes);
    let headers = reader.headers()?.clone();
    if headers.iter().all(|h| h.trim().is_empty()) {
        return Err(Error::NoRows);
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let tweet_at = column(TWEET_COLUMN)?;
    let language_at = column(LANGUAGE_COLUMN)?;
    let sentiment_at = column(SENTIMENT_COLUMN)?;

    let mut out = LoadedCorpus::default();
    for (row, record) in reader.records().enumerate() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                out.rejects.push(Reject { row, reason: e.to_string() });
                continue;
            }
        };
        match build_sample(
            stem,
            row,
            record.get(tweet_at),
            record.get(language_at),
            record.get(sentiment_at),
        ) {
            Ok(s) => out.samples.push(s),
            Err(reason) => out.rejects.push(Reject { row, reason }),
        }
    }
    Ok(out)
}

fn parse_jsonl(stem: &str, bytes: &[u8]) -> Result<LoadedCorpus> {
    let text = String::from_utf8_lossy(bytes);
    let mut out = LoadedCorpus::default();
    for (row, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                out.rejects.push(Reject { row, reason: format!("invalid JSON: {e}") });
                continue;
            }
        };
        let field = |key: &str| -> Option<String> {
            match value.get(key)? {
                serde_json::Value::String(s) => Some(s.clone()),
                serde_json::Value::Number(n) => Some(n.to_string()),
                _ => None,
            }
        };
        match build_sample(
            stem,
            row,
            field(TWEET_COLUMN).as_deref(),
            field(LANGUAGE_COLUMN).as_deref(),
            field(SENTIMENT_COLUMN).as_deref(),
        ) {
            Ok(s) => out.samples.push(s),
            Err(reason) => out.rejects.push(Reject { row, reason }),
        }
    }
    Ok(out)
}

/// Attach 3-class labels to parsed samples.
pub fn label_samples(samples: Vec<Sample>) -> Result<Vec<LabeledSample>> {
    samples.into_iter().map(LabeledSample::from_sample).collect()
}

/// Label counts and shares for one scope (`overall` or a language tag).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionTable {
    pub scope: String,
    pub counts: [u64; NUM_LABELS],
    pub percentages: [f64; NUM_LABELS],
}

impl DistributionTable {
    fn from_counts(scope: String, counts: [u64; NUM_LABELS]) -> Self {
        let population: u64 = counts.iter().sum();
        let percentages = counts.map(|c| c as f64 / population as f64);
        DistributionTable { scope, counts, percentages }
    }

    pub fn population(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub const OVERALL_SCOPE: &str = "overall";

/// Label distribution over `(language, label)` pairs. With `by_language`
/// the overall table comes first, then one table per language in tag order.
pub fn distribution_of<'a, I>(items: I, by_language: bool) -> Result<Vec<DistributionTable>>
where
    I: IntoIterator<Item = (&'a str, SentimentLabel)>,
{
    let mut overall = [0u64; NUM_LABELS];
    let mut per_language: BTreeMap<&str, [u64; NUM_LABELS]> = BTreeMap::new();
    for (language, label) in items {
        overall[label.ordinal()] += 1;
        if by_language {
            per_language.entry(language).or_default()[label.ordinal()] += 1;
        }
    }
    if overall.iter().sum::<u64>() == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut tables = vec![DistributionTable::from_counts(OVERALL_SCOPE.to_string(), overall)];
    tables.extend(
        per_language
            .into_iter()
            .map(|(lang, counts)| DistributionTable::from_counts(lang.to_string(), counts)),
    );
    Ok(tables)
}

pub fn distribution(corpus: &[LabeledSample], by_language: bool) -> Result<Vec<DistributionTable>> {
    distribution_of(corpus.iter().map(|s| (s.language.as_str(), s.label)), by_language)
}
