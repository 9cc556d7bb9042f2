//! Two-way confidence from first-token probabilities.
//!
//! Normalizing the two raw logits with a softmax and renormalizing the two
//! probabilities give the same ratio, so both entry points agree.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Score used when the model only answered in text with the positive token.
pub const TEXTUAL_POSITIVE: f64 = 0.75;
/// Score used when the model only answered in text with the negative token.
pub const TEXTUAL_NEGATIVE: f64 = 0.25;
/// Score used when the text answer could not be read either way.
pub const TEXTUAL_UNKNOWN: f64 = 0.5;

/// First-token distribution, token string to probability.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenDistribution(pub BTreeMap<String, f64>);

impl TokenDistribution {
    pub fn from_probs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        TokenDistribution(
            pairs
                .into_iter()
                .map(|(t, p)| (t.into(), p.clamp(0.0, 1.0)))
                .collect(),
        )
    }

    pub fn from_logprobs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self::from_probs(pairs.into_iter().map(|(t, lp)| (t, lp.exp())))
    }

    /// Softmax over raw logits of the listed tokens.
    pub fn from_logits<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let pairs: Vec<(String, f64)> = pairs.into_iter().map(|(t, l)| (t.into(), l)).collect();
        let max = pairs.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = pairs.iter().map(|(_, l)| (l - max).exp()).sum();
        Self::from_probs(pairs.into_iter().map(|(t, l)| (t, (l - max).exp() / total)))
    }

    /// Total probability of all tokens that normalize to `token`
    /// (case-insensitive, surrounding whitespace ignored).
    pub fn mass(&self, token: &str) -> f64 {
        let want = normalize_token(token);
        self.0
            .iter()
            .filter(|(t, _)| normalize_token(t) == want)
            .map(|(_, p)| *p)
            .sum()
    }
}

fn normalize_token(t: &str) -> String {
    t.trim()
        .trim_matches(|c: char| c.is_ascii_punctuation())
        .to_lowercase()
}

/// `e^a / (e^a + e^b)` computed without overflow.
pub fn softmax_pair(positive_logit: f64, negative_logit: f64) -> f64 {
    1.0 / (1.0 + (negative_logit - positive_logit).exp())
}

/// `p / (p + n)`; `None` when both are zero.
pub fn normalize_pair(positive: f64, negative: f64) -> Option<f64> {
    let total = positive + negative;
    if total > 0.0 && total.is_finite() {
        Some((positive / total).clamp(0.0, 1.0))
    } else {
        None
    }
}

pub fn score_from_distribution(
    dist: &TokenDistribution,
    positive: &str,
    negative: &str,
) -> Option<f64> {
    normalize_pair(dist.mass(positive), dist.mass(negative))
}

/// Reads a plain-text answer. Only the first word counts.
pub fn textual_fallback(text: &str, positive: &str, negative: &str) -> f64 {
    let first = text.split_whitespace().next().map(normalize_token);
    match first {
        Some(w) if w == normalize_token(positive) => TEXTUAL_POSITIVE,
        Some(w) if w == normalize_token(negative) => TEXTUAL_NEGATIVE,
        _ => TEXTUAL_UNKNOWN,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_logits_are_even() {
        assert_eq!(softmax_pair(1.3, 1.3), 0.5);
        assert_eq!(normalize_pair(0.2, 0.2), Some(0.5));
    }

    #[test]
    fn normalized_probs_pass_through() {
        let d = TokenDistribution::from_probs([("True", 0.9), ("False", 0.1)]);
        assert!((score_from_distribution(&d, "True", "False").unwrap() - 0.9).abs() < 1e-15);
    }

    #[test]
    fn logits_two_and_zero() {
        // e^2 / (e^2 + 1) = 7.389056 / 8.389056
        let s = softmax_pair(2.0, 0.0);
        assert!((s - 0.880_797).abs() < 1e-6, "{s}");
        let d = TokenDistribution::from_logits([("True", 2.0), ("False", 0.0)]);
        assert!((score_from_distribution(&d, "True", "False").unwrap() - s).abs() < 1e-12);
    }

    #[test]
    fn token_variants_are_pooled() {
        let d = TokenDistribution::from_probs([(" True", 0.3), ("true", 0.3), ("FALSE", 0.2), ("maybe", 0.2)]);
        assert!((score_from_distribution(&d, "True", "False").unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn missing_tokens_give_none() {
        let d = TokenDistribution::from_probs([("Yes", 1.0)]);
        assert_eq!(score_from_distribution(&d, "True", "False"), None);
    }

    #[test]
    fn textual_answers() {
        assert_eq!(textual_fallback("True.", "True", "False"), 0.75);
        assert_eq!(textual_fallback("false, because", "True", "False"), 0.25);
        assert_eq!(textual_fallback("I cannot tell", "True", "False"), 0.5);
        assert_eq!(textual_fallback("", "True", "False"), 0.5);
    }

    proptest! {
        #[test]
        fn complement_symmetry(p in 0.0f64..=1.0, n in 0.0f64..=1.0) {
            prop_assume!(p + n > 0.0);
            let a = normalize_pair(p, n).unwrap();
            let b = normalize_pair(n, p).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmax_matches_renormalized_probs(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let via_probs = normalize_pair(a.exp(), b.exp()).unwrap();
            prop_assert!((softmax_pair(a, b) - via_probs).abs() < 1e-12);
            prop_assert!((softmax_pair(a, b) + softmax_pair(b, a) - 1.0).abs() < 1e-12);
        }
    }
}
