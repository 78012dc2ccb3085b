//! Numerical checks of the entropy results behind adaptive mixing, on
//! two-action Q specifications with Boltzmann policies.
//!
//! Action `a1` is the optimal one. With `π ∝ exp Q`:
//! * adding an exploration return `δ` with
//!   `0 ≤ δ(a2) − δ(a1) ≤ 2 (Q(a1) − Q(a2))` never lowers policy entropy;
//! * weighting `δ` by `1 − α` moves between that regime (`α ≡ 0`), a
//!   regime where only the optimal action keeps a bonus and entropy
//!   drops, and pure exploitation (`α ≡ 1`) where the policy is unchanged;
//! * binary entropy rises on `(0, ½)`, falls on `(½, 1)`, peaks at `ln 2`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax, PolicyDistribution};

/// Absolute tolerance for entropy comparisons.
pub const ENTROPY_TOL: f64 = 1e-12;

/// `Q_ext` and the intrinsic return `δ` for two actions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QSpec {
    pub q_ext: [f64; 2],
    pub delta: [f64; 2],
}

impl QSpec {
    pub fn new(q_ext: [f64; 2], delta: [f64; 2]) -> Result<Self> {
        if !q_ext.iter().chain(&delta).all(|v| v.is_finite()) {
            return Err(Error::invalid("QSpec values must be finite"));
        }
        if delta[0] > delta[1] {
            return Err(Error::invalid("QSpec requires delta(a1) <= delta(a2)"));
        }
        Ok(QSpec { q_ext, delta })
    }

    pub fn q_total(&self) -> [f64; 2] {
        [self.q_ext[0] + self.delta[0], self.q_ext[1] + self.delta[1]]
    }

    pub fn pi_ext(&self) -> PolicyDistribution {
        softmax(&self.q_ext)
    }

    pub fn pi_total(&self) -> PolicyDistribution {
        softmax(&self.q_total())
    }
}

/// `Q_ext` with the mastery-weighted bonus `δ̂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveQSpec {
    pub q_ext: [f64; 2],
    pub delta_hat: [f64; 2],
}

impl AdaptiveQSpec {
    /// `δ̂(a) = (1 − α(a)) δ(a)`, where `α(a)` is the effective mastery
    /// along the trajectories that follow action `a`.
    pub fn from_alpha(spec: &QSpec, alpha: [f64; 2]) -> Result<Self> {
        if !alpha.iter().all(|a| (0.0..=1.0).contains(a)) {
            return Err(Error::invalid("alpha must lie in [0, 1]"));
        }
        Ok(AdaptiveQSpec {
            q_ext: spec.q_ext,
            delta_hat: [(1.0 - alpha[0]) * spec.delta[0], (1.0 - alpha[1]) * spec.delta[1]],
        })
    }

    pub fn pi_total(&self) -> PolicyDistribution {
        softmax(&[self.q_ext[0] + self.delta_hat[0], self.q_ext[1] + self.delta_hat[1]])
    }
}

pub fn bounded_bonus_condition(spec: &QSpec) -> bool {
    let gap = spec.delta[1] - spec.delta[0];
    0.0 <= gap && gap <= 2.0 * (spec.q_ext[0] - spec.q_ext[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BonusCheck {
    pub h_ext: f64,
    pub h_total: f64,
    pub holds: bool,
}

/// Computes both entropies for a spec inside the bounded-bonus region.
pub fn check_bounded_bonus(spec: &QSpec) -> Result<BonusCheck> {
    if !bounded_bonus_condition(spec) {
        return Err(Error::invalid("spec is outside the bounded-bonus region"));
    }
    Ok(entropy_pair(spec))
}

fn entropy_pair(spec: &QSpec) -> BonusCheck {
    let h_ext = spec.pi_ext().entropy();
    let h_total = spec.pi_total().entropy();
    BonusCheck {
        h_ext,
        h_total,
        holds: h_ext <= h_total + ENTROPY_TOL,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseLabel {
    /// `α ≡ 0`: the full bonus applies.
    ExplorationDominant,
    /// Only the optimal action keeps a bonus.
    AdaptiveMixed,
    /// `α ≡ 1`: no bonus at all.
    ExploitationDominant,
    /// Any other α pattern.
    Unclassified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EntropyRelation {
    /// `H(π_ext) < H(π_total)`.
    Increased,
    /// Equal within [`ENTROPY_TOL`].
    Unchanged,
    /// `H(π_ext) > H(π_total)`.
    Decreased,
}

impl EntropyRelation {
    fn between(h_ext: f64, h_total: f64) -> Self {
        if (h_ext - h_total).abs() <= ENTROPY_TOL {
            EntropyRelation::Unchanged
        } else if h_ext < h_total {
            EntropyRelation::Increased
        } else {
            EntropyRelation::Decreased
        }
    }

    /// The `≤` side of the comparison.
    pub fn is_non_decreasing(self) -> bool {
        !matches!(self, EntropyRelation::Decreased)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub case_label: CaseLabel,
    pub h_ext: f64,
    pub h_total: f64,
    pub relation: EntropyRelation,
    /// Largest elementwise gap between `π_ext` and the adaptive policy.
    pub max_policy_diff: f64,
}

/// Labels the regime produced by a δ̂ and reports the entropy relation.
pub fn classify_adaptive(adaptive: &AdaptiveQSpec, delta: [f64; 2]) -> CaseReport {
    let case_label = if adaptive.delta_hat == delta {
        CaseLabel::ExplorationDominant
    } else if adaptive.delta_hat == [0.0, 0.0] {
        CaseLabel::ExploitationDominant
    } else if adaptive.delta_hat[0] > 0.0 && adaptive.delta_hat[1] == 0.0 {
        CaseLabel::AdaptiveMixed
    } else {
        CaseLabel::Unclassified
    };
    let pi_ext = softmax(&adaptive.q_ext);
    let pi_total = adaptive.pi_total();
    let (h_ext, h_total) = (pi_ext.entropy(), pi_total.entropy());
    let max_policy_diff = pi_ext
        .probs()
        .iter()
        .zip(pi_total.probs())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    CaseReport {
        case_label,
        h_ext,
        h_total,
        relation: EntropyRelation::between(h_ext, h_total),
        max_policy_diff,
    }
}

/// Applies per-action mastery to `spec` and classifies the result.
pub fn classify_mixing(spec: &QSpec, alpha: [f64; 2]) -> Result<CaseReport> {
    let adaptive = AdaptiveQSpec::from_alpha(spec, alpha)?;
    Ok(classify_adaptive(&adaptive, spec.delta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonusSweep {
    pub seed: u64,
    /// Specs drawn in total.
    pub drawn: u64,
    /// Specs inside the condition region (all checked).
    pub checked: u64,
    pub violations: u64,
    /// Largest `H(π_ext) − H(π_total)` inside the region.
    pub max_excess: f64,
    pub worst_spec: Option<QSpec>,
    /// Specs inside the region where `δ(a2) − δ(a1)` sits within 1e-9 of
    /// the upper bound, i.e. where the bound is tight.
    pub near_tight: u64,
    /// Specs drawn outside the region (with `δ` ordered).
    pub outside_checked: u64,
    /// Of those, how many lower the entropy.
    pub outside_violations: u64,
    pub outside_example: Option<QSpec>,
}

/// Draws `q_ext` and `δ` uniformly from `[-range, range]`, orders `δ`,
/// and checks the entropy inequality on every spec inside the region until `samples`
/// specs have been checked. Specs outside the region are kept as a
/// control that shows the condition matters.
pub fn bounded_bonus_sweep(samples: u64, range: f64, seed: u64) -> BonusSweep {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sweep = BonusSweep {
        seed,
        drawn: 0,
        checked: 0,
        violations: 0,
        max_excess: f64::NEG_INFINITY,
        worst_spec: None,
        near_tight: 0,
        outside_checked: 0,
        outside_violations: 0,
        outside_example: None,
    };
    while sweep.checked < samples {
        let mut draw = || rng.gen_range(-range..=range);
        let q_ext = [draw(), draw()];
        let (d1, d2) = (draw(), draw());
        let spec = QSpec {
            q_ext,
            delta: [d1.min(d2), d1.max(d2)],
        };
        sweep.drawn += 1;
        let check = entropy_pair(&spec);
        let excess = check.h_ext - check.h_total;
        if bounded_bonus_condition(&spec) {
            sweep.checked += 1;
            if !check.holds {
                sweep.violations += 1;
            }
            if excess > sweep.max_excess {
                sweep.max_excess = excess;
                sweep.worst_spec = Some(spec);
            }
            let bound = 2.0 * (spec.q_ext[0] - spec.q_ext[1]);
            if (bound - (spec.delta[1] - spec.delta[0])).abs() < 1e-9 {
                sweep.near_tight += 1;
            }
        } else {
            sweep.outside_checked += 1;
            if excess > ENTROPY_TOL {
                sweep.outside_violations += 1;
                sweep.outside_example.get_or_insert(spec);
            }
        }
    }
    sweep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingCaseSuite {
    pub specs: u64,
    /// α ≡ 0 specs whose entropy relation was not `≤`.
    pub case1_failures: u64,
    /// α ≡ 1 specs whose policy moved at all.
    pub case3_failures: u64,
    pub case3_max_policy_diff: f64,
    /// Constructed mixed specs whose entropy did not strictly drop.
    pub case2_failures: u64,
    pub mislabelled: u64,
}

impl MixingCaseSuite {
    pub fn passed(&self) -> bool {
        self.case1_failures == 0 && self.case2_failures == 0 && self.case3_failures == 0 && self.mislabelled == 0
    }
}

/// Runs the three regimes over `samples` random specs from the bounded-bonus
/// region with non-negative `δ` (a discounted sum of non-negative
/// intrinsic rewards).
pub fn mixing_case_suite(samples: u64, range: f64, seed: u64) -> Result<MixingCaseSuite> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut suite = MixingCaseSuite {
        specs: 0,
        case1_failures: 0,
        case3_failures: 0,
        case3_max_policy_diff: 0.0,
        case2_failures: 0,
        mislabelled: 0,
    };
    while suite.specs < samples {
        let q_ext = [rng.gen_range(-range..=range), rng.gen_range(-range..=range)];
        let (d1, d2) = (rng.gen_range(0.0..=range), rng.gen_range(0.0..=range));
        let spec = QSpec::new(q_ext, [d1.min(d2), d1.max(d2)])?;
        if !bounded_bonus_condition(&spec) {
            continue;
        }
        suite.specs += 1;

        let c1 = classify_mixing(&spec, [0.0, 0.0])?;
        if !c1.relation.is_non_decreasing() {
            suite.case1_failures += 1;
        }
        let c3 = classify_mixing(&spec, [1.0, 1.0])?;
        suite.case3_max_policy_diff = suite.case3_max_policy_diff.max(c3.max_policy_diff);
        if c3.max_policy_diff != 0.0 || c3.h_ext != c3.h_total {
            suite.case3_failures += 1;
        }
        // Mixed regime: a strictly positive bonus on a1 only.
        let adaptive = AdaptiveQSpec {
            q_ext,
            delta_hat: [rng.gen_range(0.01..=range), 0.0],
        };
        let c2 = classify_adaptive(&adaptive, spec.delta);
        if c2.relation != EntropyRelation::Decreased {
            suite.case2_failures += 1;
        }
        let labels_ok = c3.case_label == CaseLabel::ExploitationDominant
            && c2.case_label == CaseLabel::AdaptiveMixed
            && (c1.case_label == CaseLabel::ExplorationDominant
                // δ = 0 makes α ≡ 0 and α ≡ 1 coincide.
                || spec.delta == [0.0, 0.0]);
        if !labels_ok {
            suite.mislabelled += 1;
        }
    }
    Ok(suite)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityScan {
    pub grid_points: usize,
    pub increase_violations: usize,
    pub decrease_violations: usize,
    pub argmax: f64,
    pub max_entropy: f64,
    /// `|H(½, ½) − ln 2|`.
    pub peak_error: f64,
}

impl MonotonicityScan {
    pub fn passed(&self) -> bool {
        self.increase_violations == 0 && self.decrease_violations == 0 && self.peak_error < 1e-12
    }
}

pub fn binary_entropy(p: f64) -> f64 {
    PolicyDistribution::from_probs(vec![p, 1.0 - p])
        .map(|d| d.entropy())
        .unwrap_or(f64::NAN)
}

/// Evaluates `H(p, 1 − p)` at `p = i / (n + 1)`, `i = 1..=n`, and counts
/// adjacent pairs that break strict monotonicity on either side of ½.
pub fn entropy_monotonicity_scan(grid_points: usize) -> Result<MonotonicityScan> {
    if grid_points < 3 {
        return Err(Error::invalid("monotonicity scan needs at least 3 grid points"));
    }
    let denom = (grid_points + 1) as f64;
    let grid: Vec<(f64, f64)> = (1..=grid_points)
        .map(|i| {
            let p = i as f64 / denom;
            (p, binary_entropy(p))
        })
        .collect();
    let mut scan = MonotonicityScan {
        grid_points,
        increase_violations: 0,
        decrease_violations: 0,
        argmax: f64::NAN,
        max_entropy: f64::NEG_INFINITY,
        peak_error: (binary_entropy(0.5) - std::f64::consts::LN_2).abs(),
    };
    for w in grid.windows(2) {
        let ((p0, h0), (p1, h1)) = (w[0], w[1]);
        if p1 <= 0.5 && h1 <= h0 {
            scan.increase_violations += 1;
        }
        if p0 >= 0.5 && h1 >= h0 {
            scan.decrease_violations += 1;
        }
    }
    for &(p, h) in &grid {
        if h > scan.max_entropy {
            scan.max_entropy = h;
            scan.argmax = p;
        }
    }
    Ok(scan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub bounded_bonus: BonusSweep,
    pub mixing_cases: MixingCaseSuite,
    pub monotonicity: MonotonicityScan,
    pub passed: bool,
}

/// Everything the `verify-theory` command reports.
pub fn verify_all(samples: u64, seed: u64) -> Result<TheoryReport> {
    let bounded_bonus = bounded_bonus_sweep(samples, 5.0, seed);
    let mixing_cases = mixing_case_suite(samples.min(10_000).max(1), 5.0, seed.wrapping_add(1))?;
    let monotonicity = entropy_monotonicity_scan(999)?;
    let passed = bounded_bonus.violations == 0
        && bounded_bonus.outside_violations > 0
        && mixing_cases.passed()
        && monotonicity.passed();
    Ok(TheoryReport {
        bounded_bonus,
        mixing_cases,
        monotonicity,
        passed,
    })
}
