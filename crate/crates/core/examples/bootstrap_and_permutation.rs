//! Evaluation statistics on classifier scores: rank-based ROC AUC,
//! percentile-bootstrap confidence intervals, and paired permutation tests
//! for comparing two models on the same cases.
//!
//! Run with: `cargo run --example bootstrap_and_permutation`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use multiview_mri::metrics::{
    bootstrap_auc_ci, evaluate, pairwise_auc, permutation_test_auc, roc_auc, EvalConfig,
};

fn main() -> multiview_mri::Result<()> {
    // A tiny worked example: scores (0.8, 0.4, 0.6, 0.2) with labels
    // (1, 1, 0, 0). Of the four positive/negative pairs, three are ranked
    // correctly and one is not: AUC = 3/4.
    let scores = [0.8, 0.4, 0.6, 0.2];
    let labels = [1u8, 1, 0, 0];
    let auc = roc_auc(&scores, &labels)?;
    println!("worked example: AUC = {auc}");
    assert_eq!(auc, 0.75);
    // The rank-based computation agrees with explicit pair counting
    // (ties count one half) to floating-point exactness.
    assert_eq!(auc, pairwise_auc(&scores, &labels)?);

    // Simulated test set: 60 cases, positives score higher on average.
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let pos = Normal::new(0.62, 0.18).unwrap();
    let neg = Normal::new(0.38, 0.18).unwrap();
    let labels: Vec<u8> = (0..60).map(|_| u8::from(rng.random::<f64>() < 0.5)).collect();
    let scores: Vec<f64> = labels
        .iter()
        .map(|&l| if l == 1 { pos.sample(&mut rng) } else { neg.sample(&mut rng) })
        .collect();

    // Percentile bootstrap: resample cases with replacement, recompute the
    // AUC each time, and take the alpha/2 and 1-alpha/2 quantiles.
    let (lo, hi) = bootstrap_auc_ci(&scores, &labels, 2000, 0.05, 7)?;
    println!("\nsimulated 60-case test set:");
    println!("  AUC {:.3}, 95% bootstrap CI [{lo:.3}, {hi:.3}]", roc_auc(&scores, &labels)?);

    // The full report bundles AUC, CI, and thresholded confusion metrics.
    let report = evaluate(&scores, &labels, &EvalConfig::default())?;
    println!(
        "  accuracy {:.3}, precision {:.3}, recall {:.3}, specificity {:.3}, F1 {:.3}",
        report.accuracy, report.precision, report.recall, report.specificity, report.f1
    );

    // Paired permutation test: model B is model A plus noise, so the AUC
    // difference should not be significant.
    let noisy: Vec<f64> = scores.iter().map(|s| s + 0.05 * rng.random::<f64>()).collect();
    let p_same = permutation_test_auc(&scores, &noisy, &labels, 2000, 11)?;

    // Model C is anti-correlated with the labels: clearly different.
    let inverted: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
    let p_diff = permutation_test_auc(&scores, &inverted, &labels, 2000, 11)?;
    println!("\npaired permutation tests (2000 permutations):");
    println!("  A vs A+noise:   p = {p_same:.4}");
    println!("  A vs inverted:  p = {p_diff:.4}");
    assert!(p_same > 0.05, "equivalent models should not look different (p = {p_same})");
    assert!(p_diff < 0.01, "opposite models should look different (p = {p_diff})");
    Ok(())
}
