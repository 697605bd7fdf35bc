use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_LABELS: usize = 3;

/// Three-way sentiment polarity. Ordinals index matrices, reports and score vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum SentimentLabel {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl SentimentLabel {
    pub const ALL: [SentimentLabel; NUM_LABELS] = [
        SentimentLabel::Negative,
        SentimentLabel::Neutral,
        SentimentLabel::Positive,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(ordinal: usize) -> Option<Self> {
        Self::ALL.get(ordinal).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            SentimentLabel::Negative => "negative",
            SentimentLabel::Neutral => "neutral",
            SentimentLabel::Positive => "positive",
        }
    }
}

impl fmt::Display for SentimentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SentimentLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" => Ok(SentimentLabel::Negative),
            "neutral" => Ok(SentimentLabel::Neutral),
            "positive" => Ok(SentimentLabel::Positive),
            other => Err(Error::Malformed(format!("unknown label {other:?}"))),
        }
    }
}

/// Collapse a 1..=5 star rating: 1-2 negative, 3 neutral, 4-5 positive.
pub fn map_stars_to_label(stars: u8) -> Result<SentimentLabel> {
    match stars {
        1 | 2 => Ok(SentimentLabel::Negative),
        3 => Ok(SentimentLabel::Neutral),
        4 | 5 => Ok(SentimentLabel::Positive),
        other => Err(Error::RatingOutOfRange(other.into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mapping_examples() {
        assert_eq!(map_stars_to_label(1).unwrap(), SentimentLabel::Negative);
        assert_eq!(map_stars_to_label(3).unwrap(), SentimentLabel::Neutral);
        assert_eq!(map_stars_to_label(5).unwrap(), SentimentLabel::Positive);
        assert!(matches!(map_stars_to_label(0), Err(Error::RatingOutOfRange(0))));
        assert!(matches!(map_stars_to_label(6), Err(Error::RatingOutOfRange(6))));
    }

    #[test]
    fn mapping_is_monotone_and_surjective() {
        let labels: Vec<_> = (1..=5).map(|s| map_stars_to_label(s).unwrap()).collect();
        assert!(labels.windows(2).all(|w| w[0] <= w[1]));
        for l in SentimentLabel::ALL {
            assert!(labels.contains(&l));
        }
    }

    #[test]
    fn ordinals_round_trip() {
        for l in SentimentLabel::ALL {
            assert_eq!(SentimentLabel::from_ordinal(l.ordinal()), Some(l));
            assert_eq!(l.name().parse::<SentimentLabel>().unwrap(), l);
        }
        assert_eq!(SentimentLabel::from_ordinal(3), None);
    }
}
