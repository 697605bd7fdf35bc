//! Majority voting over member classifiers.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::LabeledSample;
use crate::error::{Error, Result};
use crate::label::{SentimentLabel, NUM_LABELS};
use crate::metrics::Outcome;
use crate::model::{predicted_label, ClassScores, ModelConfig, ModelHandle};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Highest summed probability among the tied labels, then lowest ordinal.
    #[default]
    SumScores,
    LowestOrdinal,
}

impl FromStr for TieBreak {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum_scores" => Ok(TieBreak::SumScores),
            "lowest_ordinal" => Ok(TieBreak::LowestOrdinal),
            other => Err(Error::InvalidConfig(format!("unknown tie break {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub members: Vec<ModelConfig>,
    #[serde(default)]
    pub tie_break: TieBreak,
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::TooFewMembers(self.members.len()));
        }
        Ok(())
    }
}

/// Each member votes for its argmax; the strict plurality wins, and ties
/// among the top vote-getters are settled by `tie_break`.
pub fn vote(member_scores: &[ClassScores], tie_break: TieBreak) -> Result<SentimentLabel> {
    if member_scores.len() < 2 {
        return Err(Error::TooFewMembers(member_scores.len()));
    }
    let mut votes = [0usize; NUM_LABELS];
    let mut summed = [0.0f64; NUM_LABELS];
    for scores in member_scores {
        votes[predicted_label(scores).ordinal()] += 1;
        for (s, p) in summed.iter_mut().zip(scores.probs) {
            *s += p;
        }
    }
    let top = *votes.iter().max().unwrap();
    let mut tied = (0..NUM_LABELS).filter(|&i| votes[i] == top);
    let first = tied.next().unwrap();
    let winner = match tie_break {
        TieBreak::LowestOrdinal => first,
        TieBreak::SumScores => tied.fold(first, |best, i| if summed[i] > summed[best] { i } else { best }),
    };
    Ok(SentimentLabel::ALL[winner])
}

/// One voted prediction, with each member's argmax and the renormalized sum
/// of member probabilities kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRecord {
    pub sample_id: String,
    pub language: String,
    #[serde(rename = "true", default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<SentimentLabel>,
    pub predicted: SentimentLabel,
    pub member_predictions: Vec<SentimentLabel>,
    pub scores: ClassScores,
}

impl Outcome for EnsembleRecord {
    fn sample_id(&self) -> &str {
        &self.sample_id
    }
    fn language(&self) -> &str {
        &self.language
    }
    fn true_label(&self) -> Option<SentimentLabel> {
        self.true_label
    }
    fn predicted(&self) -> SentimentLabel {
        self.predicted
    }
}

/// Combine per-member scores (outer index: member, inner: sample).
pub fn combine(
    samples: &[LabeledSample],
    member_scores: &[Vec<ClassScores>],
    tie_break: TieBreak,
) -> Result<Vec<EnsembleRecord>> {
    if member_scores.len() < 2 {
        return Err(Error::TooFewMembers(member_scores.len()));
    }
    for (m, scores) in member_scores.iter().enumerate() {
        if scores.len() != samples.len() {
            return Err(Error::ShapeMismatch(format!(
                "member {m} scored {} of {} samples",
                scores.len(),
                samples.len()
            )));
        }
    }
    samples
        .iter()
        .enumerate()
        .map(|(i, sample)| {
            let per_member: Vec<ClassScores> = member_scores.iter().map(|s| s[i]).collect();
            let mut summed = [0.0; NUM_LABELS];
            for s in &per_member {
                for (acc, p) in summed.iter_mut().zip(s.probs) {
                    *acc += p;
                }
            }
            let n = per_member.len() as f64;
            Ok(EnsembleRecord {
                sample_id: sample.id.clone(),
                language: sample.language.clone(),
                true_label: Some(sample.label),
                predicted: vote(&per_member, tie_break)?,
                member_predictions: per_member.iter().map(predicted_label).collect(),
                scores: ClassScores { probs: summed.map(|p| p / n) },
            })
        })
        .collect()
}

pub fn ensemble_predict(
    members: &[ModelHandle],
    samples: &[LabeledSample],
    cfg: &EnsembleConfig,
    batch_size: usize,
) -> Result<Vec<EnsembleRecord>> {
    cfg.validate()?;
    if members.len() != cfg.members.len() {
        return Err(Error::InvalidConfig(format!(
            "{} handles for {} configured members",
            members.len(),
            cfg.members.len()
        )));
    }
    let member_scores: Vec<Vec<ClassScores>> = members
        .par_iter()
        .map(|m| {
            m.predict_samples(samples, batch_size)
                .map(|records| records.into_iter().map(|r| r.scores).collect())
                .map_err(|e| Error::MemberFailure {
                    member: m.config.checkpoint_id.clone(),
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;
    combine(samples, &member_scores, cfg.tie_break)
}

#[cfg(test)]
mod tests {
    use super::*;
    use SentimentLabel::*;

    fn one_hot(l: SentimentLabel) -> ClassScores {
        let mut probs = [0.1; 3];
        probs[l.ordinal()] = 0.8;
        ClassScores { probs }
    }

    fn sample(id: &str, label: SentimentLabel) -> LabeledSample {
        LabeledSample {
            id: id.into(),
            text: id.into(),
            text_clean: id.into(),
            language: "en".into(),
            label,
            stars: 3,
        }
    }

    #[test]
    fn strict_majority_wins() {
        let s = [one_hot(Negative), one_hot(Negative), one_hot(Positive)];
        assert_eq!(vote(&s, TieBreak::SumScores).unwrap(), Negative);
        assert_eq!(vote(&s, TieBreak::LowestOrdinal).unwrap(), Negative);
    }

    #[test]
    fn tie_uses_summed_scores() {
        let a = ClassScores { probs: [0.7, 0.2, 0.1] };
        let b = ClassScores { probs: [0.2, 0.1, 0.7] };
        // Negative 0.9 vs Positive 0.8.
        assert_eq!(vote(&[a, b], TieBreak::SumScores).unwrap(), Negative);
        let a = ClassScores { probs: [0.5, 0.1, 0.4] };
        let b = ClassScores { probs: [0.1, 0.1, 0.8] };
        // Negative 0.6 vs Positive 1.2.
        assert_eq!(vote(&[a, b], TieBreak::SumScores).unwrap(), Positive);
        assert_eq!(vote(&[a, b], TieBreak::LowestOrdinal).unwrap(), Negative);
    }

    #[test]
    fn exact_sum_ties_fall_to_lowest_ordinal() {
        let a = ClassScores { probs: [0.0, 0.75, 0.25] };
        let b = ClassScores { probs: [0.0, 0.25, 0.75] };
        assert_eq!(vote(&[a, b], TieBreak::SumScores).unwrap(), Neutral);
    }

    #[test]
    fn needs_two_members() {
        assert!(matches!(vote(&[], TieBreak::SumScores), Err(Error::TooFewMembers(0))));
        assert!(matches!(vote(&[one_hot(Neutral)], TieBreak::SumScores), Err(Error::TooFewMembers(1))));
        let cfg = EnsembleConfig { members: vec![ModelConfig::toy(0)], tie_break: TieBreak::SumScores };
        assert!(matches!(cfg.validate(), Err(Error::TooFewMembers(1))));
    }

    #[test]
    fn three_fixed_members_on_five_fixtures() {
        let samples: Vec<_> = ["a", "b", "c", "d", "e"].iter().map(|id| sample(id, Neutral)).collect();
        let p = |n, u, q| ClassScores { probs: [n, u, q] };
        let m1 = vec![p(0.6, 0.3, 0.1), p(0.2, 0.5, 0.3), p(0.1, 0.1, 0.8), p(0.5, 0.4, 0.1), p(0.3, 0.3, 0.4)];
        let m2 = vec![p(0.5, 0.4, 0.1), p(0.6, 0.2, 0.2), p(0.2, 0.7, 0.1), p(0.1, 0.8, 0.1), p(0.4, 0.3, 0.3)];
        let m3 = vec![p(0.1, 0.2, 0.7), p(0.1, 0.6, 0.3), p(0.3, 0.3, 0.4), p(0.1, 0.2, 0.7), p(0.2, 0.6, 0.2)];
        // a: N,N,P → N. b: U,N,U → U. c: P,U,P → P.
        // d: N,U,P three-way tie, sums N 0.7 U 1.4 P 0.9 → U.
        // e: P,N,U three-way tie, sums N 0.9 U 1.2 P 0.9 → U.
        let recs = combine(&samples, &[m1, m2, m3], TieBreak::SumScores).unwrap();
        let got: Vec<_> = recs.iter().map(|r| r.predicted).collect();
        assert_eq!(got, vec![Negative, Neutral, Positive, Neutral, Neutral]);
        assert_eq!(recs[3].member_predictions, vec![Negative, Neutral, Positive]);
        let s = recs[3].scores.probs;
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((s[1] - 1.4 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identical_members_match_single_member() {
        let handle = crate::model::load_model(&ModelConfig::toy(3)).unwrap();
        let samples: Vec<_> = ["hola amigos", "que mal", "bien", "no sé"]
            .iter()
            .enumerate()
            .map(|(i, t)| LabeledSample { text_clean: t.to_string(), ..sample(&i.to_string(), Neutral) })
            .collect();
        let cfg = EnsembleConfig { members: vec![ModelConfig::toy(3); 2], tie_break: TieBreak::SumScores };
        let ens = ensemble_predict(&[handle.clone(), handle.clone()], &samples, &cfg, 2).unwrap();
        let single = handle.predict_samples(&samples, 4).unwrap();
        for (e, s) in ens.iter().zip(&single) {
            assert_eq!(e.predicted, s.predicted);
        }
    }
}
