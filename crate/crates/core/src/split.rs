//! Stratified train/validation/test partitioning over (language, label).

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::LabeledSample;
use crate::error::{Error, Result};
use crate::label::SentimentLabel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSpec {
    /// Train, validation and test fractions.
    pub ratios: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { ratios: [0.8, 0.1, 0.1], seed: 42 }
    }
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], seed: u64) -> Result<Self> {
        let spec = SplitSpec { ratios, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidSplit(format!("{:?} has a negative ratio", self.ratios)));
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!("{:?} sums to {sum}", self.ratios)));
        }
        Ok(())
    }
}

/// Largest-remainder (Hamilton) apportionment of `n` seats over the three
/// ratios. Equal remainders go to train, then val, then test.
pub fn stratum_allocation(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    const EPS: f64 = 1e-9;
    let quotas = ratios.map(|r| n as f64 * r);
    let mut seats = quotas.map(|q| (q + EPS).floor().max(0.0) as usize);
    let remainders: [f64; 3] = std::array::from_fn(|i| (quotas[i] - seats[i] as f64).max(0.0));

    let mut assigned: usize = seats.iter().sum();
    // Only reachable when the ratios overshoot 1.0 within tolerance.
    while assigned > n {
        let i = (0..3).rev().find(|&i| seats[i] > 0).unwrap();
        seats[i] -= 1;
        assigned -= 1;
    }
    let mut order = [0usize, 1, 2];
    // Stable sort keeps the train > val > test priority among equal remainders.
    order.sort_by(|&a, &b| {
        let (ra, rb) = (remainders[a], remainders[b]);
        if (ra - rb).abs() <= EPS {
            std::cmp::Ordering::Equal
        } else {
            rb.partial_cmp(&ra).unwrap()
        }
    });
    for &i in order.iter().cycle().take(n - assigned) {
        seats[i] += 1;
    }
    seats
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<LabeledSample>,
    pub val: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-(language, label) counts of each partition.
    pub fn stratum_counts(&self) -> Vec<StratumCount> {
        let mut counts: BTreeMap<(String, SentimentLabel), [usize; 3]> = BTreeMap::new();
        for (slot, part) in [&self.train, &self.val, &self.test].into_iter().enumerate() {
            for s in part {
                counts.entry((s.language.clone(), s.label)).or_default()[slot] += 1;
            }
        }
        counts
            .into_iter()
            .map(|((language, label), [train, val, test])| StratumCount {
                language,
                label,
                total: train + val + test,
                train,
                val,
                test,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumCount {
    pub language: String,
    pub label: SentimentLabel,
    pub total: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

/// Seed for one stratum, independent of which other strata exist.
pub fn stratum_seed(seed: u64, language: &str, label: SentimentLabel) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(language.as_bytes());
    hasher.update([0u8, label.ordinal() as u8]);
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Group by (language, label), shuffle each stratum with its own seeded
/// generator, then deal the first seats to train, the next to val and the
/// rest to test. Members are sorted by id before shuffling so input order
/// never affects membership.
pub fn stratified_split(corpus: Vec<LabeledSample>, spec: &SplitSpec) -> Result<DatasetSplit> {
    spec.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut strata: BTreeMap<(String, SentimentLabel), Vec<LabeledSample>> = BTreeMap::new();
    for sample in corpus {
        strata
            .entry((sample.language.clone(), sample.label))
            .or_default()
            .push(sample);
    }

    let mut split = DatasetSplit::default();
    for ((language, label), mut members) in strata {
        members.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = ChaCha8Rng::seed_from_u64(stratum_seed(spec.seed, &language, label));
        members.shuffle(&mut rng);
        let [n_train, n_val, _] = stratum_allocation(members.len(), spec.ratios);
        let mut rest = members.into_iter();
        split.train.extend(rest.by_ref().take(n_train));
        split.val.extend(rest.by_ref().take(n_val));
        split.test.extend(rest);
    }
    Ok(split)
}
