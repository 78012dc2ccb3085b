//! Adaptive reward mixing: `r_total = r_ext + (1 - alpha) * r_int`.

use serde::{Deserialize, Serialize};

use crate::autoencoder::{Reconstruction, StateAutoencoder};
use crate::env::Observation;
use crate::error::{Error, Result};
use crate::mastery::MasteryEvaluator;

/// Everything that went into one step's training reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_ext: f64,
    pub r_int_raw: f64,
    pub alpha: f64,
    pub r_total: f64,
}

/// Mixes the reward streams. Rejects alpha outside `[0, 1]` and negative
/// or non-finite rewards.
pub fn combine(r_ext: f64, r_int_raw: f64, alpha: f64) -> Result<RewardBreakdown> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    if !(r_ext.is_finite() && r_ext >= 0.0) {
        return Err(Error::invalid(format!("extrinsic reward {r_ext} must be finite and >= 0")));
    }
    if !(r_int_raw.is_finite() && r_int_raw >= 0.0) {
        return Err(Error::invalid(format!("intrinsic reward {r_int_raw} must be finite and >= 0")));
    }
    Ok(RewardBreakdown {
        r_ext,
        r_int_raw,
        alpha,
        r_total: r_ext + (1.0 - alpha) * r_int_raw,
    })
}

/// Where alpha comes from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AlphaSource {
    /// Score the reconstruction with the evaluator.
    Evaluator,
    /// Use a constant; 0 keeps the full intrinsic bonus, 1 removes it.
    Forced(f64),
}

/// Reconstruct, score the reconstruction, combine.
///
/// `intrinsic_scale` multiplies the reconstruction error before mixing
/// (1.0 unless running-std normalization is on). The evaluator only ever
/// sees `ŝ`, never the raw observation.
pub fn per_step_pipeline(
    obs: &Observation,
    r_ext: f64,
    ae: &StateAutoencoder,
    ev: &MasteryEvaluator,
    alpha_source: AlphaSource,
    intrinsic_scale: f64,
) -> Result<(RewardBreakdown, Reconstruction)> {
    let rec = ae.reconstruct(obs)?;
    let alpha = match alpha_source {
        AlphaSource::Evaluator => ev.score(&rec.obs_hat)?.alpha(),
        AlphaSource::Forced(a) => a,
    };
    let breakdown = combine(r_ext, rec.r_int * intrinsic_scale, alpha)?;
    Ok((breakdown, rec))
}

/// Welford running mean/variance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    count: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.m2 / (self.count - 1) as f64).sqrt()
        }
    }

    /// `1 / std`, or 1 until there is enough data for a usable estimate.
    pub fn inverse_scale(&self) -> f64 {
        let s = self.std();
        if self.count < 2 || s < 1e-8 {
            1.0
        } else {
            1.0 / s
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::AutoencoderConfig;
    use crate::env::{GridSpec, GridWorld};
    use crate::mastery::EvaluatorConfig;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn case_examples() {
        assert_eq!(combine(0.7, 0.4, 1.0).unwrap().r_total, 0.7);
        assert!((combine(0.7, 0.4, 0.0).unwrap().r_total - 1.1).abs() < 1e-15);
        assert!((combine(1.0, 0.4, 0.5).unwrap().r_total - 1.2).abs() < 1e-15);
    }

    #[test]
    fn contract_violations() {
        assert!(combine(0.0, 0.1, 1.5).is_err());
        assert!(combine(0.0, 0.1, -0.1).is_err());
        assert!(combine(0.0, 0.1, f64::NAN).is_err());
        assert!(combine(-1.0, 0.1, 0.5).is_err());
        assert!(combine(0.0, -0.1, 0.5).is_err());
    }

    fn components(seed: u64) -> (GridWorld, StateAutoencoder, MasteryEvaluator) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let env = GridWorld::new(GridSpec::open_room(9, 9)).unwrap();
        let ae = StateAutoencoder::new(&[1, 9, 9], &AutoencoderConfig::default(), &mut rng).unwrap();
        let ev = MasteryEvaluator::new(&[1, 9, 9], &EvaluatorConfig::default(), &mut rng).unwrap();
        (env, ae, ev)
    }

    #[test]
    fn pipeline_is_deterministic_and_ordered() {
        let (env, ae, ev) = components(1);
        let obs = env.render_observation();
        let (a, rec) = per_step_pipeline(&obs, 0.0, &ae, &ev, AlphaSource::Evaluator, 1.0).unwrap();
        let (b, _) = per_step_pipeline(&obs, 0.0, &ae, &ev, AlphaSource::Evaluator, 1.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.r_int_raw, rec.r_int);
        assert_eq!(a.alpha, ev.score(&rec.obs_hat).unwrap().alpha());
        // No extrinsic reward: the total is the weighted bonus and is non-negative.
        assert_eq!(a.r_total, (1.0 - a.alpha) * a.r_int_raw);
        assert!(a.r_total >= 0.0);
    }

    #[test]
    fn forced_alpha_bypasses_evaluator() {
        let (env, ae, ev) = components(2);
        let obs = env.render_observation();
        let (one, _) = per_step_pipeline(&obs, 0.25, &ae, &ev, AlphaSource::Forced(1.0), 1.0).unwrap();
        assert_eq!(one.r_total, 0.25);
        let (zero, _) = per_step_pipeline(&obs, 0.25, &ae, &ev, AlphaSource::Forced(0.0), 1.0).unwrap();
        assert_eq!(zero.r_total, 0.25 + zero.r_int_raw);
    }

    #[test]
    fn running_stats() {
        let mut s = RunningStats::default();
        assert_eq!(s.inverse_scale(), 1.0);
        for x in [1.0, 2.0, 3.0, 4.0] {
            s.push(x);
        }
        assert!((s.mean() - 2.5).abs() < 1e-15);
        assert!((s.std() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn mixing_algebra(r_ext in 0.0f64..10.0, r_int in 0.0f64..10.0, a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let x = combine(r_ext, r_int, a).unwrap();
            prop_assert_eq!(x.r_total, r_ext + (1.0 - a) * r_int);
            prop_assert!(r_ext <= x.r_total && x.r_total <= r_ext + r_int);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(combine(r_ext, r_int, hi).unwrap().r_total <= combine(r_ext, r_int, lo).unwrap().r_total);
            prop_assert_eq!(combine(r_ext, r_int, 1.0).unwrap().r_total, r_ext);
        }
    }
}
