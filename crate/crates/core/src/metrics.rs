//! Evaluation statistics: ROC AUC, thresholded confusion metrics,
//! percentile-bootstrap confidence intervals, and paired permutation tests.
//!
//! Everything is deterministic under a fixed seed; resampling draws use one
//! counter-based RNG stream per iteration so results do not depend on
//! evaluation order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidConfig(format!("scores must be finite, found {s}")));
    }
    Ok(())
}

/// Area under the ROC curve via the rank-sum (Mann-Whitney) statistic with
/// average ranks for ties; equals the probability that a random positive
/// outscores a random negative, counting ties as one half.
///
/// Needs at least one positive and one negative label, otherwise
/// [`Error::DegenerateLabels`].
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n = scores.len();
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Average 1-based ranks over tie groups, accumulated for positives.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1 ..= j
        for &idx in &order[i..j] {
            if labels[idx] != 0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }

    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Counts at a decision threshold; scores at the threshold are positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_pos: usize,
    pub false_pos: usize,
    pub true_neg: usize,
    pub false_neg: usize,
}

pub fn confusion_at(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Confusion> {
    check_inputs(scores, labels)?;
    let mut c = Confusion {
        true_pos: 0,
        false_pos: 0,
        true_neg: 0,
        false_neg: 0,
    };
    for (&s, &l) in scores.iter().zip(labels.iter()) {
        match (s >= threshold, l != 0) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, false) => c.true_neg += 1,
            (false, true) => c.false_neg += 1,
        }
    }
    Ok(c)
}

/// Derived rates at one threshold. Ratios with an empty denominator are
/// reported as 0 and flagged via `degenerate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub confusion: Confusion,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    /// True when any ratio above had a zero denominator.
    pub degenerate: bool,
}

pub fn threshold_metrics(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ThresholdMetrics> {
    let c = confusion_at(scores, labels, threshold)?;
    let (tp, fp, tn, fn_) = (
        c.true_pos as f64,
        c.false_pos as f64,
        c.true_neg as f64,
        c.false_neg as f64,
    );
    let mut degenerate = false;
    let mut ratio = |num: f64, den: f64| {
        if den == 0.0 {
            degenerate = true;
            0.0
        } else {
            num / den
        }
    };
    let total = tp + fp + tn + fn_;
    let accuracy = ratio(tp + tn, total);
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let specificity = ratio(tn, tn + fp);
    let f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn_);
    Ok(ThresholdMetrics {
        confusion: c,
        accuracy,
        precision,
        recall,
        specificity,
        f1,
        degenerate,
    })
}

/// Linear-interpolation percentile of an ascending-sorted slice at
/// `q in [0, 1]` (position `q * (len - 1)`).
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] * (1.0 - frac) + sorted[hi] * frac
    }
}

/// Percentile-bootstrap confidence interval for the AUC.
///
/// Iteration `i` resamples cases with replacement using its own RNG stream;
/// a resample containing only one class is redrawn (up to 100 attempts,
/// then [`Error::BootstrapDegenerate`]). Returns `(lower, upper)` at
/// levels `alpha/2` and `1 - alpha/2`.
pub fn bootstrap_auc_ci(
    scores: &[f64],
    labels: &[u8],
    n_boot: u32,
    alpha: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    check_inputs(scores, labels)?;
    if !(0.0..1.0).contains(&alpha) || alpha <= 0.0 {
        return Err(Error::InvalidConfig(format!("alpha must be in (0, 1), got {alpha}")));
    }
    if n_boot == 0 {
        return Err(Error::InvalidConfig("n_boot must be at least 1".into()));
    }
    roc_auc(scores, labels)?; // validates both classes are present
    let n = scores.len();

    let aucs: Result<Vec<f64>> = (0..n_boot)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let mut s = vec![0.0; n];
            let mut l = vec![0u8; n];
            for attempt in 0..100u32 {
                for k in 0..n {
                    let idx = rng.random_range(0..n);
                    s[k] = scores[idx];
                    l[k] = labels[idx];
                }
                let pos = l.iter().filter(|&&v| v != 0).count();
                if pos > 0 && pos < n {
                    return roc_auc(&s, &l);
                }
                let _ = attempt;
            }
            Err(Error::BootstrapDegenerate(i))
        })
        .collect();
    let mut aucs = aucs?;
    aucs.sort_by(f64::total_cmp);
    Ok((
        percentile_sorted(&aucs, alpha / 2.0),
        percentile_sorted(&aucs, 1.0 - alpha / 2.0),
    ))
}

/// Paired two-sided permutation test for the AUC difference of two score
/// vectors over the same cases.
///
/// Each permutation swaps the two methods' scores per case with
/// probability one half and recomputes `|AUC_a - AUC_b|`; the p-value is
/// `(1 + #{perm >= observed}) / (1 + n_perm)`. With `n_perm = 0` the
/// p-value is 1.
pub fn permutation_test_auc(
    scores_a: &[f64],
    scores_b: &[f64],
    labels: &[u8],
    n_perm: u32,
    seed: u64,
) -> Result<f64> {
    check_inputs(scores_a, labels)?;
    check_inputs(scores_b, labels)?;
    let observed = (roc_auc(scores_a, labels)? - roc_auc(scores_b, labels)?).abs();
    let n = labels.len();
    let mut exceed = 0u64;
    for i in 0..n_perm {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut a = scores_a.to_vec();
        let mut b = scores_b.to_vec();
        for k in 0..n {
            if rng.random::<bool>() {
                std::mem::swap(&mut a[k], &mut b[k]);
            }
        }
        let delta = (roc_auc(&a, labels)? - roc_auc(&b, labels)?).abs();
        if delta >= observed {
            exceed += 1;
        }
    }
    Ok((1 + exceed) as f64 / (1 + n_perm as u64) as f64)
}

/// Evaluation settings; all fields have conventional defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub threshold: f64,
    pub n_boot: u32,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            threshold: 0.5,
            n_boot: 2000,
            alpha: 0.05,
            seed: 0,
        }
    }
}

/// Full evaluation of one score vector. Serializes with a stable field
/// order and contains no timestamps, so identical inputs produce
/// byte-identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: String,
    pub n: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub auc: f64,
    /// `[lower, upper]` percentile-bootstrap interval at `1 - alpha`.
    pub auc_ci: [f64; 2],
    pub threshold: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub specificity: f64,
    pub f1: f64,
    pub degenerate_rates: bool,
    pub config: EvalConfig,
}

pub fn evaluate(scores: &[f64], labels: &[u8], cfg: &EvalConfig) -> Result<EvalReport> {
    let auc = roc_auc(scores, labels)?;
    let (lo, hi) = bootstrap_auc_ci(scores, labels, cfg.n_boot, cfg.alpha, cfg.seed)?;
    let tm = threshold_metrics(scores, labels, cfg.threshold)?;
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    Ok(EvalReport {
        version: crate::VERSION.to_string(),
        n: labels.len(),
        n_pos,
        n_neg: labels.len() - n_pos,
        auc,
        auc_ci: [lo, hi],
        threshold: cfg.threshold,
        accuracy: tm.accuracy,
        precision: tm.precision,
        recall: tm.recall,
        specificity: tm.specificity,
        f1: tm.f1,
        degenerate_rates: tm.degenerate,
        config: cfg.clone(),
    })
}

/// Brute-force pairwise AUC used as an independent oracle in tests and
/// acceptance checks: mean over all positive/negative pairs of
/// `1`, `0.5`, or `0` for win/tie/loss.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let mut wins = 0.0f64;
    let mut pairs = 0u64;
    for (i, (&si, &li)) in scores.iter().zip(labels.iter()).enumerate() {
        if li == 0 {
            continue;
        }
        for (j, (&sj, &lj)) in scores.iter().zip(labels.iter()).enumerate() {
            if lj != 0 {
                continue;
            }
            let _ = (i, j);
            pairs += 1;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    if pairs == 0 {
        return Err(Error::DegenerateLabels);
    }
    Ok(wins / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn auc_matches_worked_example() {
        let auc = roc_auc(&[0.8, 0.4, 0.6, 0.2], &[1, 1, 0, 0]).unwrap();
        assert_abs_diff_eq!(auc, 0.75, epsilon = 1e-15);
    }

    #[test]
    fn auc_extremes() {
        assert_abs_diff_eq!(
            roc_auc(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]).unwrap(),
            1.0,
            epsilon = 0.0
        );
        assert_abs_diff_eq!(
            roc_auc(&[0.1, 0.2, 0.8, 0.9], &[1, 1, 0, 0]).unwrap(),
            0.0,
            epsilon = 0.0
        );
        // Constant scores tie every pair.
        assert_abs_diff_eq!(
            roc_auc(&[0.5, 0.5, 0.5, 0.5], &[1, 0, 1, 0]).unwrap(),
            0.5,
            epsilon = 0.0
        );
    }

    #[test]
    fn auc_rejects_degenerate_and_malformed_inputs() {
        assert!(matches!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(Error::DegenerateLabels)));
        assert!(matches!(roc_auc(&[], &[]), Err(Error::DegenerateLabels)));
        assert!(matches!(roc_auc(&[0.1], &[1, 0]), Err(Error::ShapeMismatch(_))));
        assert!(roc_auc(&[f64::NAN, 0.2], &[1, 0]).is_err());
    }

    fn lcg_cases(seed: u64, n: usize, tie_prone: bool) -> (Vec<f64>, Vec<u8>) {
        let mut state = seed.wrapping_add(0x9e3779b97f4a7c15);
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            state >> 33
        };
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let raw = next();
            let s = if tie_prone {
                (raw % 8) as f64 / 8.0
            } else {
                (raw % 100_000) as f64 / 100_000.0
            };
            scores.push(s);
            labels.push(if i < 2 {
                (i % 2) as u8 // guarantee both classes
            } else {
                (next() % 2) as u8
            });
        }
        (scores, labels)
    }

    #[test]
    fn rank_auc_equals_pairwise_auc() {
        for seed in 0..40u64 {
            let (scores, labels) = lcg_cases(seed, 60, seed % 2 == 0);
            let a = roc_auc(&scores, &labels).unwrap();
            let b = pairwise_auc(&scores, &labels).unwrap();
            assert!((a - b).abs() < 1e-12, "seed {seed}: {a} vs {b}");
        }
    }

    #[test]
    fn confusion_counts_with_threshold_inclusive() {
        let c = confusion_at(&[0.9, 0.5, 0.4, 0.1], &[1, 0, 1, 0], 0.5).unwrap();
        assert_eq!(
            c,
            Confusion {
                true_pos: 1,
                false_pos: 1,
                true_neg: 1,
                false_neg: 1
            }
        );
    }

    #[test]
    fn threshold_metrics_on_hand_example() {
        // Predictions: 0.9 -> +, 0.6 -> +, 0.4 -> -, 0.1 -> -.
        let m = threshold_metrics(&[0.9, 0.6, 0.4, 0.1], &[1, 0, 1, 0], 0.5).unwrap();
        assert_abs_diff_eq!(m.accuracy, 0.5, epsilon = 0.0);
        assert_abs_diff_eq!(m.precision, 0.5, epsilon = 0.0);
        assert_abs_diff_eq!(m.recall, 0.5, epsilon = 0.0);
        assert_abs_diff_eq!(m.specificity, 0.5, epsilon = 0.0);
        assert_abs_diff_eq!(m.f1, 0.5, epsilon = 0.0);
        assert!(!m.degenerate);
    }

    #[test]
    fn zero_denominators_are_flagged_not_nan() {
        // No predicted positives and no true positives: precision and
        // recall are 0/0.
        let m = threshold_metrics(&[0.1, 0.2], &[0, 0], 0.5).unwrap();
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.f1, 0.0);
        assert!(m.degenerate);
        assert!(m.accuracy == 1.0);
    }

    #[test]
    fn percentile_interpolates_linearly() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(percentile_sorted(&v, 0.0), 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(percentile_sorted(&v, 1.0), 4.0, epsilon = 0.0);
        assert_abs_diff_eq!(percentile_sorted(&v, 0.5), 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(percentile_sorted(&v, 0.25), 1.75, epsilon = 1e-15);
    }

    #[test]
    fn bootstrap_ci_is_seed_deterministic_and_ordered() {
        let (scores, labels) = lcg_cases(5, 80, false);
        let a = bootstrap_auc_ci(&scores, &labels, 300, 0.05, 42).unwrap();
        let b = bootstrap_auc_ci(&scores, &labels, 300, 0.05, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.0 <= a.1);
        let point = roc_auc(&scores, &labels).unwrap();
        assert!(a.0 <= point && point <= a.1, "CI {a:?} should cover {point}");
        let c = bootstrap_auc_ci(&scores, &labels, 300, 0.05, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn bootstrap_interval_narrows_with_lower_confidence() {
        let (scores, labels) = lcg_cases(9, 60, false);
        let wide = bootstrap_auc_ci(&scores, &labels, 400, 0.05, 1).unwrap();
        let narrow = bootstrap_auc_ci(&scores, &labels, 400, 0.5, 1).unwrap();
        assert!(narrow.1 - narrow.0 <= wide.1 - wide.0);
    }

    #[test]
    fn bootstrap_flags_hopeless_class_imbalance() {
        // One positive among many negatives: some resample eventually
        // misses the positive 100 times in a row is not guaranteed, so use
        // the truly degenerate-prone case of n = 1 being impossible; here
        // we force failure with a tiny sample where all-negative draws are
        // common.
        let scores = [0.9, 0.1];
        let labels = [1u8, 0u8];
        let r = bootstrap_auc_ci(&scores, &labels, 2000, 0.05, 0);
        // With n = 2 a resample is single-class with probability 1/2, so
        // 100 consecutive failures (p = 2^-100) cannot realistically occur;
        // the call should succeed. This documents the redraw behavior.
        assert!(r.is_ok());
    }

    #[test]
    fn permutation_null_edge_cases() {
        let labels = [1u8, 0, 1, 0, 1, 0];
        let s = [0.9, 0.1, 0.8, 0.2, 0.7, 0.3];
        // No permutations: p is 1 by construction.
        assert_eq!(permutation_test_auc(&s, &s, &labels, 0, 0).unwrap(), 1.0);
        // Identical methods: observed delta 0 is never exceeded strictly.
        assert_eq!(permutation_test_auc(&s, &s, &labels, 200, 0).unwrap(), 1.0);
    }

    #[test]
    fn permutation_detects_a_real_difference() {
        // Method A separates perfectly, method B is anti-correlated noise.
        let n = 40;
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let a: Vec<f64> = labels.iter().map(|&l| if l != 0 { 0.9 } else { 0.1 }).collect();
        let mut state = 77u64;
        let b: Vec<f64> = (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
                (state >> 33) as f64 / 2f64.powi(31)
            })
            .collect();
        let p = permutation_test_auc(&a, &b, &labels, 500, 3).unwrap();
        assert!(p <= 0.02, "p = {p}");
    }

    #[test]
    fn permutation_is_seed_deterministic() {
        let (sa, labels) = lcg_cases(1, 30, false);
        let (sb, _) = lcg_cases(2, 30, false);
        let p1 = permutation_test_auc(&sa, &sb, &labels, 300, 9).unwrap();
        let p2 = permutation_test_auc(&sa, &sb, &labels, 300, 9).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn evaluate_produces_stable_json() {
        let (scores, labels) = lcg_cases(3, 50, false);
        let cfg = EvalConfig {
            n_boot: 200,
            ..EvalConfig::default()
        };
        let r1 = evaluate(&scores, &labels, &cfg).unwrap();
        let r2 = evaluate(&scores, &labels, &cfg).unwrap();
        let j1 = serde_json::to_string_pretty(&r1).unwrap();
        let j2 = serde_json::to_string_pretty(&r2).unwrap();
        assert_eq!(j1, j2);
        assert!(j1.contains("\"auc\""));
        let back: EvalReport = serde_json::from_str(&j1).unwrap();
        assert_eq!(back, r1);
    }
}
