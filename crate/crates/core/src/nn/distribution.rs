use rand::Rng;
use serde::{Deserialize, Serialize};

/// Action probabilities at one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDistribution {
    probs: Vec<f64>,
}

impl PolicyDistribution {
    /// Wraps raw probabilities. Returns `None` unless they are finite,
    /// non-negative and sum to one within `1e-9`.
    pub fn from_probs(probs: Vec<f64>) -> Option<Self> {
        let sum: f64 = probs.iter().sum();
        let valid = !probs.is_empty()
            && probs.iter().all(|p| p.is_finite() && *p >= 0.0)
            && (sum - 1.0).abs() <= 1e-9;
        valid.then_some(PolicyDistribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Shannon entropy in nats.
    pub fn entropy(&self) -> f64 {
        entropy(self)
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    /// Inverse-CDF sample; consumes exactly one uniform draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        // Rounding left the cumulative sum just below u; take the last
        // action with non-zero mass.
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> PolicyDistribution {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    PolicyDistribution {
        probs: exps.into_iter().map(|e| e / sum).collect(),
    }
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// `-Σ p ln p` with `0 ln 0 = 0`.
pub fn entropy(dist: &PolicyDistribution) -> f64 {
    -dist
        .probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).probs(), &[0.5, 0.5]);
        for c in [-40.0, 0.0, 3.5, 700.0] {
            let d = softmax(&[c, c, c, c]);
            assert!(d.probs().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        }
        let e = std::f64::consts::E;
        let d = softmax(&[1.0, 0.0]);
        assert!((d.probs()[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((d.probs()[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((d.probs()[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn entropy_examples() {
        let half = PolicyDistribution::from_probs(vec![0.5, 0.5]).unwrap();
        assert!((entropy(&half) - LN_2).abs() < 1e-15);
        let det = PolicyDistribution::from_probs(vec![1.0, 0.0]).unwrap();
        assert_eq!(entropy(&det), 0.0);
        // Direct summation for softmax(1, 0).
        let e = std::f64::consts::E;
        let (p, q) = (e / (e + 1.0), 1.0 / (e + 1.0));
        let expected = -(p * p.ln() + q * q.ln());
        let h = softmax(&[1.0, 0.0]).entropy();
        assert!((h - expected).abs() < 1e-15);
        assert!((h - 0.5822).abs() < 1e-4);
    }

    #[test]
    fn binary_entropy_is_unimodal_on_grid() {
        let h = |p: f64| PolicyDistribution::from_probs(vec![p, 1.0 - p]).unwrap().entropy();
        let grid: Vec<f64> = (1..=999).map(|i| i as f64 / 1000.0).collect();
        for w in grid.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= 0.5 {
                assert!(h(a) < h(b), "not increasing at {a}");
            } else if a >= 0.5 {
                assert!(h(a) > h(b), "not decreasing at {a}");
            }
        }
        assert!(grid.iter().all(|&p| p == 0.5 || h(p) < LN_2));
    }

    #[test]
    fn sample_respects_support() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let d = PolicyDistribution::from_probs(vec![0.0, 1.0, 0.0]).unwrap();
        assert!((0..100).all(|_| d.sample(&mut rng) == 1));
    }

    proptest! {
        #[test]
        fn softmax_is_normalized_and_positive(logits in prop::collection::vec(-30.0f64..30.0, 1..8)) {
            let d = softmax(&logits);
            let sum: f64 = d.probs().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            prop_assert!(d.probs().iter().all(|&p| p > 0.0));
            let h = d.entropy();
            prop_assert!(h >= 0.0 && h <= (logits.len() as f64).ln() + 1e-12);
        }

        #[test]
        fn softmax_is_shift_invariant(
            logits in prop::collection::vec(-30.0f64..30.0, 1..8),
            c in -100.0f64..100.0,
        ) {
            let a = softmax(&logits);
            let shifted: Vec<f64> = logits.iter().map(|z| z + c).collect();
            let b = softmax(&shifted);
            for (x, y) in a.probs().iter().zip(b.probs()) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn log_softmax_agrees_with_softmax(logits in prop::collection::vec(-20.0f64..20.0, 1..6)) {
            let d = softmax(&logits);
            for (lp, p) in log_softmax(&logits).iter().zip(d.probs()) {
                prop_assert!((lp.exp() - p).abs() <= 1e-12);
            }
        }
    }
}
