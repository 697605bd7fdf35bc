//! Confusion matrices, per-class precision/recall/F1 and macro/weighted
//! aggregates.

use std::collections::BTreeMap;
use std::io::Write;
use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::{SentimentLabel, NUM_LABELS};

/// Anything carrying a language, an optional gold label and a prediction.
pub trait Outcome {
    fn sample_id(&self) -> &str;
    fn language(&self) -> &str;
    fn true_label(&self) -> Option<SentimentLabel>;
    fn predicted(&self) -> SentimentLabel;
}

impl Outcome for crate::model::PredictionRecord {
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

/// Rows are true labels, columns predicted labels, both by ordinal.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConfusionMatrix {
    pub counts: [[u64; NUM_LABELS]; NUM_LABELS],
}

impl ConfusionMatrix {
    pub fn new(counts: [[u64; NUM_LABELS]; NUM_LABELS]) -> Self {
        ConfusionMatrix { counts }
    }

    pub fn record(&mut self, truth: SentimentLabel, predicted: SentimentLabel) {
        self.counts[truth.ordinal()][predicted.ordinal()] += 1;
    }

    pub fn get(&self, truth: SentimentLabel, predicted: SentimentLabel) -> u64 {
        self.counts[truth.ordinal()][predicted.ordinal()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..NUM_LABELS).map(|i| self.counts[i][i]).sum()
    }

    /// Class supports.
    pub fn row_sums(&self) -> [u64; NUM_LABELS] {
        self.counts.map(|row| row.iter().sum())
    }

    pub fn col_sums(&self) -> [u64; NUM_LABELS] {
        std::array::from_fn(|c| self.counts.iter().map(|row| row[c]).sum())
    }

    /// CSV with a header row and a header column of label names.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["true\\predicted".to_string()];
        header.extend(SentimentLabel::ALL.iter().map(|l| l.name().to_string()));
        w.write_record(&header)?;
        for label in SentimentLabel::ALL {
            let mut row = vec![label.name().to_string()];
            row.extend(self.counts[label.ordinal()].iter().map(u64::to_string));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

impl AddAssign for ConfusionMatrix {
    fn add_assign(&mut self, rhs: Self) {
        for t in 0..NUM_LABELS {
            for p in 0..NUM_LABELS {
                self.counts[t][p] += rhs.counts[t][p];
            }
        }
    }
}

impl Add for ConfusionMatrix {
    type Output = Self;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl std::iter::Sum for ConfusionMatrix {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(ConfusionMatrix::default(), Add::add)
    }
}

pub fn confusion_matrix<R: Outcome>(records: &[R]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::default();
    for r in records {
        let truth = r
            .true_label()
            .ok_or_else(|| Error::MissingTrueLabel(r.sample_id().to_string()))?;
        cm.record(truth, r.predicted());
    }
    Ok(cm)
}

/// One confusion matrix per language tag.
pub fn per_language_matrices<R: Outcome>(records: &[R]) -> Result<BTreeMap<String, ConfusionMatrix>> {
    let mut out: BTreeMap<String, ConfusionMatrix> = BTreeMap::new();
    for r in records {
        let truth = r
            .true_label()
            .ok_or_else(|| Error::MissingTrueLabel(r.sample_id().to_string()))?;
        out.entry(r.language().to_string()).or_default().record(truth, r.predicted());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class table keyed by label name in the JSON report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub negative: ClassMetrics,
    pub neutral: ClassMetrics,
    pub positive: ClassMetrics,
}

impl PerClass {
    pub fn get(&self, label: SentimentLabel) -> &ClassMetrics {
        match label {
            SentimentLabel::Negative => &self.negative,
            SentimentLabel::Neutral => &self.neutral,
            SentimentLabel::Positive => &self.positive,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (SentimentLabel, &ClassMetrics)> {
        SentimentLabel::ALL.into_iter().map(move |l| (l, self.get(l)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub classes: PerClass,
    pub accuracy: f64,
    #[serde(rename = "macro")]
    pub macro_avg: Averages,
    #[serde(rename = "weighted")]
    pub weighted_avg: Averages,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Zero denominators yield 0 for the affected precision, recall or F1.
pub fn classification_report(cm: &ConfusionMatrix) -> Result<ClassReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyMatrix);
    }
    let rows = cm.row_sums();
    let cols = cm.col_sums();
    let per: [ClassMetrics; NUM_LABELS] = std::array::from_fn(|c| {
        let precision = ratio(cm.counts[c][c], cols[c]);
        let recall = ratio(cm.counts[c][c], rows[c]);
        ClassMetrics { precision, recall, f1: harmonic(precision, recall), support: rows[c] }
    });
    let mean = |f: fn(&ClassMetrics) -> f64| per.iter().map(f).sum::<f64>() / NUM_LABELS as f64;
    let weighted = |f: fn(&ClassMetrics) -> f64| {
        per.iter().map(|m| f(m) * m.support as f64).sum::<f64>() / total as f64
    };
    Ok(ClassReport {
        classes: PerClass { negative: per[0], neutral: per[1], positive: per[2] },
        accuracy: ratio(cm.trace(), total),
        macro_avg: Averages { precision: mean(|m| m.precision), recall: mean(|m| m.recall), f1: mean(|m| m.f1) },
        weighted_avg: Averages {
            precision: weighted(|m| m.precision),
            recall: weighted(|m| m.recall),
            f1: weighted(|m| m.f1),
        },
    })
}

/// Round half to even at `places` decimals, for display.
pub fn round_half_even(x: f64, places: u32) -> f64 {
    let scale = 10f64.powi(places as i32);
    let scaled = x * scale;
    let floor = scaled.floor();
    let diff = scaled - floor;
    let rounded = if (diff - 0.5).abs() < 1e-9 {
        if floor % 2.0 == 0.0 { floor } else { floor + 1.0 }
    } else {
        scaled.round()
    };
    rounded / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use SentimentLabel::*;

    struct Row(&'static str, SentimentLabel, SentimentLabel);

    impl Outcome for Row {
        fn sample_id(&self) -> &str {
            "x"
        }
        fn language(&self) -> &str {
            self.0
        }
        fn true_label(&self) -> Option<SentimentLabel> {
            Some(self.1)
        }
        fn predicted(&self) -> SentimentLabel {
            self.2
        }
    }

    #[test]
    fn perfect_predictor() {
        let rows: Vec<_> = (0..15).map(|i| Row("en", SentimentLabel::ALL[i % 3], SentimentLabel::ALL[i % 3])).collect();
        let cm = confusion_matrix(&rows).unwrap();
        assert_eq!(cm.counts, [[5, 0, 0], [0, 5, 0], [0, 0, 5]]);
        let r = classification_report(&cm).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_avg.f1, 1.0);
        assert_eq!(r.weighted_avg.precision, 1.0);
    }

    #[test]
    fn small_hand_tally() {
        let rows = [
            Row("en", Negative, Negative),
            Row("en", Negative, Neutral),
            Row("en", Neutral, Neutral),
            Row("en", Positive, Positive),
        ];
        let cm = confusion_matrix(&rows).unwrap();
        assert_eq!(cm.counts, [[1, 1, 0], [0, 1, 0], [0, 0, 1]]);
        let r = classification_report(&cm).unwrap();
        let p: Vec<_> = r.classes.iter().map(|(_, m)| m.precision).collect();
        let rc: Vec<_> = r.classes.iter().map(|(_, m)| m.recall).collect();
        assert_eq!(p, vec![1.0, 0.5, 1.0]);
        assert_eq!(rc, vec![0.5, 1.0, 1.0]);
        // F1s: 2/3, 2/3, 1 → mean 7/9
        assert!((r.macro_avg.f1 - 7.0 / 9.0).abs() < 1e-12);
        assert!((r.macro_avg.f1 - 0.7778).abs() < 1e-4);
        assert_eq!(r.accuracy, 0.75);
    }

    #[test]
    fn zero_denominators_give_zero() {
        let cm = ConfusionMatrix::new([[2, 0, 0], [3, 0, 0], [0, 0, 0]]);
        let r = classification_report(&cm).unwrap();
        assert_eq!(r.classes.neutral.precision, 0.0);
        assert_eq!(r.classes.neutral.recall, 0.0);
        assert_eq!(r.classes.positive.f1, 0.0);
        assert_eq!(r.classes.positive.support, 0);
        assert!(matches!(classification_report(&ConfusionMatrix::default()), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn missing_truth_is_an_error() {
        let rec = crate::model::PredictionRecord::new(
            "a:1".into(),
            "en".into(),
            None,
            crate::model::ClassScores { probs: [1.0, 0.0, 0.0] },
        );
        match confusion_matrix(&[rec]) {
            Err(Error::MissingTrueLabel(id)) => assert_eq!(id, "a:1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn language_partition() {
        let rows = [
            Row("es", Negative, Negative),
            Row("es", Positive, Neutral),
            Row("fr", Neutral, Neutral),
            Row("fr", Neutral, Positive),
            Row("fr", Positive, Positive),
        ];
        let per = per_language_matrices(&rows).unwrap();
        assert_eq!(per.len(), 2);
        assert_eq!(per["es"].counts, [[1, 0, 0], [0, 0, 0], [0, 1, 0]]);
        assert_eq!(per["fr"].counts, [[0, 0, 0], [0, 1, 1], [0, 0, 1]]);
        let sum: ConfusionMatrix = per.values().copied().sum();
        assert_eq!(sum, confusion_matrix(&rows).unwrap());

        let single = [Row("en", Negative, Positive), Row("en", Neutral, Neutral)];
        let per = per_language_matrices(&single).unwrap();
        assert_eq!(per.len(), 1);
        assert_eq!(per["en"], confusion_matrix(&single).unwrap());
    }

    #[test]
    fn half_even_rounding() {
        assert_eq!(round_half_even(0.125, 2), 0.12);
        assert_eq!(round_half_even(0.135, 2), 0.14);
        assert_eq!(round_half_even(0.8917, 2), 0.89);
        assert_eq!(round_half_even(2.5, 0), 2.0);
        assert_eq!(round_half_even(3.5, 0), 4.0);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        ConfusionMatrix::new([[354, 18, 16], [20, 355, 14], [23, 25, 341]]).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "true\\predicted,negative,neutral,positive\nnegative,354,18,16\nneutral,20,355,14\npositive,23,25,341\n"
        );
    }
}
