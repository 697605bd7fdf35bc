//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use polysent::corpus::LabeledSample;
use polysent::train::TrainConfig;
use polysent::SentimentLabel;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sample(id: &str, text: &str, language: &str, label: SentimentLabel) -> LabeledSample {
    LabeledSample {
        id: id.to_string(),
        text: text.to_string(),
        text_clean: text.to_string(),
        language: language.to_string(),
        label,
        stars: [1, 3, 5][label.ordinal()],
    }
}

/// 200 samples where each text repeats its class token three times among
/// two filler words.
pub fn separable_corpus() -> Vec<LabeledSample> {
    let tokens = ["awful", "meh", "great"];
    let fillers = ["the", "a", "day", "phone", "movie", "today", "food", "this"];
    (0..200)
        .map(|i| {
            let label = SentimentLabel::ALL[i % 3];
            let tok = tokens[label.ordinal()];
            let text = format!("{} {tok} {} {tok} {tok}", fillers[i % 8], fillers[(i / 3 + 1) % 8]);
            sample(&format!("sep:{i}"), &text, "en", label)
        })
        .collect()
}

/// Training settings that converge on [`separable_corpus`] within three epochs.
pub fn toy_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        learning_rate: 1e-3,
        batch_size: 2,
        seed: 42,
        ..TrainConfig::default()
    }
}

/// Bag-of-words baseline: each token votes for the classes it was seen
/// with; the sample goes to the class with the most votes (lowest ordinal
/// on ties). Returns accuracy on `eval`.
pub fn bag_of_words_accuracy(train: &[LabeledSample], eval: &[LabeledSample]) -> f64 {
    let mut table: HashMap<&str, [u32; 3]> = HashMap::new();
    for s in train {
        for tok in s.text_clean.split_whitespace() {
            table.entry(tok).or_default()[s.label.ordinal()] += 1;
        }
    }
    let correct = eval
        .iter()
        .filter(|s| {
            let mut votes = [0u64; 3];
            for tok in s.text_clean.split_whitespace() {
                if let Some(counts) = table.get(tok) {
                    // Only tokens seen with a single class are informative.
                    let seen: Vec<usize> = (0..3).filter(|&c| counts[c] > 0).collect();
                    if seen.len() == 1 {
                        votes[seen[0]] += 1;
                    }
                }
            }
            let best = (0..3).fold(0, |b, c| if votes[c] > votes[b] { c } else { b });
            best == s.label.ordinal()
        })
        .count();
    correct as f64 / eval.len() as f64
}

/// `per_stratum` samples for every (language, label) pair, ids shuffled so
/// input order carries no structure.
pub fn stratified_corpus(languages: &[&str], per_stratum: usize, seed: u64) -> Vec<LabeledSample> {
    let mut out = Vec::new();
    for lang in languages {
        for label in SentimentLabel::ALL {
            for i in 0..per_stratum {
                let id = format!("{lang}-{}-{i}", label.name());
                out.push(sample(&id, &format!("text {i}"), lang, label));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..out.len()).rev() {
        out.swap(i, rng.random_range(0..=i));
    }
    out
}

/// Labels with the most votes, ascending by ordinal.
pub fn plurality_leaders(votes: &[usize]) -> Vec<usize> {
    let mut counts = [0usize; 3];
    for &v in votes {
        counts[v] += 1;
    }
    let top = *counts.iter().max().unwrap();
    (0..3).filter(|&c| counts[c] == top).collect()
}

/// Probability vector that puts `peak` on `label` and splits the rest.
pub fn peaked(label: usize, peak: f64) -> [f64; 3] {
    let mut p = [(1.0 - peak) / 2.0; 3];
    p[label] = peak;
    p
}

/// Scores drawn uniformly from the simplex.
pub fn random_scores(rng: &mut ChaCha8Rng) -> [f64; 3] {
    let raw: [f64; 3] = std::array::from_fn(|_| -rng.random::<f64>().max(1e-12).ln());
    let total: f64 = raw.iter().sum();
    raw.map(|x| x / total)
}

/// Metrics recomputed from (truth, predicted) pairs without the confusion
/// matrix: per-class (precision, recall, f1, support), then accuracy.
pub struct Recount {
    pub per_class: [(f64, f64, f64, u64); 3],
    pub accuracy: f64,
}

pub fn recount(pairs: &[(usize, usize)]) -> Recount {
    let per_class = std::array::from_fn(|c| {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as f64;
        let predicted = pairs.iter().filter(|&&(_, p)| p == c).count() as f64;
        let support = pairs.iter().filter(|&&(t, _)| t == c).count();
        let precision = if predicted == 0.0 { 0.0 } else { tp / predicted };
        let recall = if support == 0 { 0.0 } else { tp / support as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        (precision, recall, f1, support as u64)
    });
    let correct = pairs.iter().filter(|(t, p)| t == p).count();
    Recount { per_class, accuracy: correct as f64 / pairs.len() as f64 }
}

/// Tally per language with a plain map, independent of the library.
pub fn tally_by_language(rows: &[(String, usize, usize)]) -> BTreeMap<String, [[u64; 3]; 3]> {
    let mut out: BTreeMap<String, [[u64; 3]; 3]> = BTreeMap::new();
    for (lang, t, p) in rows {
        out.entry(lang.clone()).or_default()[*t][*p] += 1;
    }
    out
}

/// One piece of a synthetic tweet, tagged with whether its letters are
/// expected to survive normalization.
#[derive(Debug, Clone)]
pub struct Segment {
    pub text: String,
    pub keeps_letters: bool,
}

fn plain(pattern: &'static str) -> BoxedStrategy<Segment> {
    pattern.prop_map(|text| Segment { text, keeps_letters: true }).boxed()
}

pub fn segment() -> impl Strategy<Value = Segment> {
    prop_oneof![
        plain("[a-zA-Z]{1,8}"),
        plain("[àáâäçèéêëíñóöúüßøÅÉ]{1,6}"),
        plain("[\u{0627}-\u{064A}]{1,8}"),
        plain("[\u{0905}-\u{0939}][\u{093E}-\u{094C}]?"),
        plain("[\u{4E00}-\u{4E2F}]{1,4}"),
        plain("[0-9]{1,4}"),
        plain("[.,!?¡¿'\":;-]{1,4}"),
        plain("[\u{1F600}-\u{1F64F}\u{2600}-\u{26FF}#$%&*+=<>|~^]{1,3}"),
        "(https?://|www\\.|HTTP://)[a-z0-9./?=_-]{1,12}".prop_map(|text| Segment { text, keeps_letters: false }),
        "@[a-zA-Z0-9_]{1,10}".prop_map(|text| Segment { text, keeps_letters: false }),
    ]
}

/// Tweet-like text: segments joined by whitespace runs.
pub fn tweet() -> impl Strategy<Value = (String, Vec<Segment>)> {
    prop::collection::vec((segment(), "[ \t\n]{1,3}"), 0..12).prop_map(|parts| {
        let mut text = String::new();
        let mut segments = Vec::new();
        for (seg, gap) in parts {
            text.push_str(&seg.text);
            text.push_str(&gap);
            segments.push(seg);
        }
        (text, segments)
    })
}

/// Letters that must survive, counted per codepoint.
fn is_letter(c: char) -> bool {
    static LETTER: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    let re = LETTER.get_or_init(|| regex::Regex::new(r"^\p{L}$").unwrap());
    let mut buf = [0u8; 4];
    re.is_match(c.encode_utf8(&mut buf))
}

pub fn required_letters(segments: &[Segment]) -> BTreeMap<char, usize> {
    let mut out = BTreeMap::new();
    for seg in segments.iter().filter(|s| s.keeps_letters) {
        for c in seg.text.chars().filter(|&c| is_letter(c)) {
            *out.entry(c).or_default() += 1;
        }
    }
    out
}

pub fn letter_counts(text: &str) -> BTreeMap<char, usize> {
    let mut out = BTreeMap::new();
    for c in text.chars().filter(|&c| is_letter(c)) {
        *out.entry(c).or_default() += 1;
    }
    out
}

pub fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub struct CliOutput {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn polysent(args: &[&std::ffi::OsStr]) -> CliOutput {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_polysent"))
        .args(args)
        .output()
        .expect("spawn polysent");
    CliOutput {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

/// Build an argument list from mixed strings and paths.
#[macro_export]
macro_rules! args {
    ($($a:expr),* $(,)?) => {
        &[$(std::ffi::OsStr::new(&$a)),*]
    };
}

/// ingest → preprocess → split → train → evaluate → report on the bundled
/// fixture, all under `out`. Returns the report directory.
pub fn run_pipeline(out: &std::path::Path, seed: u64) -> std::path::PathBuf {
    let config = fixture("pipeline.toml");
    let seed = seed.to_string();
    let steps: Vec<Vec<std::ffi::OsString>> = vec![
        vec!["ingest".into(), "--input".into(), fixture("tweets.csv").into()],
        vec!["preprocess".into(), "--input".into(), out.join("corpus.jsonl").into()],
        vec!["split".into(), "--input".into(), out.join("corpus.clean.jsonl").into()],
        vec!["train".into(), "--data".into(), out.join("split-manifest.json").into()],
        vec![
            "evaluate".into(),
            "--run".into(),
            out.join("runs/toy").into(),
            "--data".into(),
            out.join("split-manifest.json").into(),
        ],
        vec!["report".into(), "--predictions".into(), out.join("predictions.jsonl").into()],
    ];
    let reports = out.join("report");
    for step in steps {
        let target = if step[0] == "report" { reports.clone() } else { out.to_path_buf() };
        let mut args: Vec<std::ffi::OsString> =
            vec!["--config".into(), config.clone().into(), "--seed".into(), seed.clone().into(), "--out".into(), target.into()];
        args.extend(step.iter().cloned());
        let refs: Vec<&std::ffi::OsStr> = args.iter().map(|a| a.as_os_str()).collect();
        let res = polysent(&refs);
        assert_eq!(res.code, 0, "{:?} failed: {}", step[0], res.stderr);
    }
    reports
}
