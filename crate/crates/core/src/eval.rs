//! AUC, thresholded confusion counts and one-sided t-tests on AUC samples.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SnapshotView;
use crate::model::{forward, score_pairs, ModelParams};
use crate::splits::FoldTask;

/// How a tied positive/negative score pair counts toward the AUC.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TiePolicy {
    /// Ties count zero: the literal `1[s+ > s-]` indicator.
    Strict,
    /// Ties count one half.
    #[default]
    Half,
}

impl FromStr for TiePolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "strict" => Ok(TiePolicy::Strict),
            "half" => Ok(TiePolicy::Half),
            _ => Err(format!("tie policy must be \"strict\" or \"half\", got {s:?}")),
        }
    }
}

fn check_nonempty(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::AucUndefined {
            n_pos: pos.len(),
            n_neg: neg.len(),
        });
    }
    Ok(())
}

/// Fraction of (positive, negative) pairs ranked correctly, by enumeration.
pub fn auc_pairwise(pos: &[f64], neg: &[f64], ties: TiePolicy) -> Result<f64> {
    check_nonempty(pos, neg)?;
    let tie_credit = match ties {
        TiePolicy::Strict => 0u64,
        TiePolicy::Half => 1,
    };
    // Doubled counts keep the half credit integral.
    let mut doubled: u64 = 0;
    for &p in pos {
        for &n in neg {
            if p > n {
                doubled += 2;
            } else if p == n {
                doubled += tie_credit;
            }
        }
    }
    Ok(doubled as f64 / (2.0 * pos.len() as f64 * neg.len() as f64))
}

/// Mann-Whitney rank-sum AUC with average ranks for ties. Equals
/// [`auc_pairwise`] under [`TiePolicy::Half`] in `O(n log n)`.
pub fn auc_rank(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_nonempty(pos, neg)?;
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Sum of doubled 1-based ranks of the positives.
    let mut doubled_rank_sum: u128 = 0;
    let mut start = 0;
    while start < all.len() {
        let mut end = start + 1;
        while end < all.len() && all[end].0 == all[start].0 {
            end += 1;
        }
        // Ranks start+1 ..= end average to (start + 1 + end) / 2.
        let doubled_avg = (start + 1 + end) as u128;
        let n_pos_here = all[start..end].iter().filter(|e| e.1).count() as u128;
        doubled_rank_sum += doubled_avg * n_pos_here;
        start = end;
    }
    let n_pos = pos.len() as u128;
    let doubled_u = doubled_rank_sum - n_pos * (n_pos + 1);
    Ok(doubled_u as f64 / (2.0 * pos.len() as f64 * neg.len() as f64))
}

pub fn auc(pos: &[f64], neg: &[f64], ties: TiePolicy) -> Result<f64> {
    match ties {
        TiePolicy::Half => auc_rank(pos, neg),
        TiePolicy::Strict => auc_pairwise(pos, neg, TiePolicy::Strict),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_positives: usize,
    pub false_positives: usize,
    pub true_negatives: usize,
    pub false_negatives: usize,
}

/// A link is predicted iff its probability is strictly above `threshold`.
pub fn confusion_at_threshold(pos_prob: &[f64], neg_prob: &[f64], threshold: f64) -> Confusion {
    let tp = pos_prob.iter().filter(|&&p| p > threshold).count();
    let fp = neg_prob.iter().filter(|&&p| p > threshold).count();
    Confusion {
        true_positives: tp,
        false_negatives: pos_prob.len() - tp,
        false_positives: fp,
        true_negatives: neg_prob.len() - fp,
    }
}

pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub confusion: Confusion,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold_index: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

const RELU_OUTPUT_NOTE: &str = "output rectifier is on: every probability is >= 0.5, so only pairs strictly above 0.5 count as predicted links";

/// Scores a fold's held-out pairs with `params` on `snapshot`.
pub fn evaluate_fold(params: &ModelParams, snapshot: &SnapshotView, task: &FoldTask, ties: TiePolicy) -> Result<EvalReport> {
    let trace = forward(params, snapshot)?;
    let pos = score_pairs(&trace, &task.test_positives)?;
    let neg = score_pairs(&trace, &task.test_negatives)?;
    let auc = auc(&pos.raw, &neg.raw, ties)?;
    Ok(EvalReport {
        auc,
        n_pos: pos.raw.len(),
        n_neg: neg.raw.len(),
        confusion: confusion_at_threshold(&pos.prob, &neg.prob, DECISION_THRESHOLD),
        fold_index: Some(task.fold_index),
        note: params.final_activation.then(|| RELU_OUTPUT_NOTE.to_string()),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Reject,
    FailToReject,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::Reject => "Reject H0",
            Decision::FailToReject => "Fail to Reject H0",
        })
    }
}

/// One-sided test of `mean(a) > mean(b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_statistic: f64,
    pub degrees_of_freedom: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub decision: Decision,
    pub mean_a: f64,
    pub mean_b: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

fn finish(t: f64, df: f64, alpha: f64, mean_a: f64, mean_b: f64) -> TTestResult {
    let p_value = student_t_upper_tail(t, df);
    TTestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value,
        alpha,
        decision: if p_value < alpha {
            Decision::Reject
        } else {
            Decision::FailToReject
        },
        mean_a,
        mean_b,
    }
}

/// Welch's unequal-variance t-test with Satterthwaite degrees of freedom;
/// alternative hypothesis `mean(a) > mean(b)`.
pub fn welch_t_one_sided(a: &[f64], b: &[f64], alpha: f64) -> Result<TTestResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::TooFewSamples {
            len_a: a.len(),
            len_b: b.len(),
        });
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    if va == 0.0 && vb == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    Ok(finish(t, df, alpha, ma, mb))
}

/// Paired t-test on `a[i] - b[i]`; alternative `mean(a - b) > 0`.
pub fn paired_t_one_sided(a: &[f64], b: &[f64], alpha: f64) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::config(
            "eval",
            format!("paired t-test needs equal lengths, got {} and {}", a.len(), b.len()),
        ));
    }
    if a.len() < 2 {
        return Err(Error::TooFewSamples {
            len_a: a.len(),
            len_b: b.len(),
        });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (md, vd) = mean_var(&diffs);
    if vd == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let n = diffs.len() as f64;
    let t = md / (vd / n).sqrt();
    Ok(finish(t, n - 1.0, alpha, mean_var(a).0, mean_var(b).0))
}

/// `P(T > t)` for Student's t with `df` degrees of freedom.
pub fn student_t_upper_tail(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return if t > 0.0 { 0.0 } else { 1.0 };
    }
    let x = df / (df + t * t);
    let half_two_sided = 0.5 * regularized_incomplete_beta(0.5 * df, 0.5, x);
    if t >= 0.0 {
        half_two_sided
    } else {
        1.0 - half_two_sided
    }
}

/// `ln Gamma(x)` for `x > 0` (Lanczos, g = 7, 9 terms).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + G + 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// `I_x(a, b)`, evaluated with Lentz's continued fraction on whichever side
/// of the mean converges fastest.
pub fn regularized_incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    const MAX_ITER: usize = 10_000;
    let (qab, qap, qam) = (a + b, a + 1.0, a - 1.0);
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use crate::model::Dims;
    use approx::assert_relative_eq;

    #[test]
    fn auc_small_cases() {
        assert_eq!(auc_pairwise(&[0.9], &[0.1], TiePolicy::Strict).unwrap(), 1.0);
        assert_eq!(auc_pairwise(&[0.9], &[0.1], TiePolicy::Half).unwrap(), 1.0);
        assert_eq!(auc_pairwise(&[0.8, 0.4], &[0.6, 0.2], TiePolicy::Half).unwrap(), 0.75);
        assert_eq!(auc_pairwise(&[0.5], &[0.5], TiePolicy::Strict).unwrap(), 0.0);
        assert_eq!(auc_pairwise(&[0.5], &[0.5], TiePolicy::Half).unwrap(), 0.5);
        assert!(matches!(auc_pairwise(&[], &[0.5], TiePolicy::Half), Err(Error::AucUndefined { .. })));
        assert!(auc_rank(&[0.5], &[]).is_err());
    }

    #[test]
    fn auc_rank_edge_cases() {
        assert_eq!(auc_rank(&[0.3; 5], &[0.3; 7]).unwrap(), 0.5);
        assert_eq!(auc_rank(&[0.1, 0.2], &[0.3, 0.4, 0.5]).unwrap(), 0.0);
        assert_eq!(auc_rank(&[0.8, 0.4], &[0.6, 0.2]).unwrap(), 0.75);
    }

    #[test]
    fn confusion_boundaries() {
        let c = confusion_at_threshold(&[0.9], &[0.1], 0.5);
        assert_eq!((c.true_positives, c.true_negatives), (1, 1));
        let c = confusion_at_threshold(&[0.5], &[0.5], 0.5);
        assert_eq!(c.true_positives + c.false_positives, 0);
        assert_eq!((c.false_negatives, c.true_negatives), (1, 1));
    }

    #[test]
    fn zero_embeddings_predict_nothing() {
        let s = SnapshotView::from_pairs(4, [(0, 1)], 0.5);
        let mut p = init_params(4, Dims::default(), 2).unwrap();
        p.embeddings.fill(0.0);
        let task = FoldTask {
            fold_index: 0,
            train_positives: vec![],
            test_positives: vec![(1, 2)],
            test_negatives: vec![(0, 3), (2, 3)],
        };
        let r = evaluate_fold(&p, &s, &task, TiePolicy::Half).unwrap();
        assert_eq!(r.confusion.true_positives + r.confusion.false_positives, 0);
        assert_eq!(r.auc, 0.5);
        assert!(r.note.is_some());
        let empty = FoldTask {
            test_negatives: vec![],
            ..task
        };
        assert!(evaluate_fold(&p, &s, &empty, TiePolicy::Half).is_err());
    }

    #[test]
    fn ln_gamma_known_values() {
        assert_relative_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_relative_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-14);
        assert_relative_eq!(ln_gamma(10.0), (362_880.0f64).ln(), max_relative = 1e-14);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a.
        assert_relative_eq!(regularized_incomplete_beta(1.0, 1.0, 0.3), 0.3, epsilon = 1e-14);
        assert_relative_eq!(regularized_incomplete_beta(2.5, 1.0, 0.7), 0.7f64.powf(2.5), epsilon = 1e-13);
        assert_eq!(regularized_incomplete_beta(2.0, 3.0, 0.0), 0.0);
        assert_eq!(regularized_incomplete_beta(2.0, 3.0, 1.0), 1.0);
    }

    #[test]
    fn t_tail_closed_form_df1() {
        // Cauchy: P(T > t) = 1/2 - atan(t)/pi.
        for t in [-3.0, -0.5, 0.0, 0.7, 4.0] {
            let expected = 0.5 - f64::atan(t) / std::f64::consts::PI;
            assert_relative_eq!(student_t_upper_tail(t, 1.0), expected, epsilon = 1e-13);
        }
    }

    #[test]
    fn welch_symmetries() {
        let a = [0.7, 0.72, 0.69, 0.75];
        let r = welch_t_one_sided(&a, &a, 0.1).unwrap();
        assert_eq!(r.t_statistic, 0.0);
        assert_relative_eq!(r.p_value, 0.5, epsilon = 1e-12);
        assert_eq!(r.decision, Decision::FailToReject);

        let b = [0.6, 0.66, 0.61, 0.7, 0.64];
        let ab = welch_t_one_sided(&a, &b, 0.1).unwrap();
        let ba = welch_t_one_sided(&b, &a, 0.1).unwrap();
        assert_relative_eq!(ab.p_value + ba.p_value, 1.0, epsilon = 1e-12);
        assert_eq!(ab.decision, Decision::Reject);

        assert!(matches!(welch_t_one_sided(&[1.0, 1.0], &[2.0, 2.0], 0.1), Err(Error::ZeroVariance)));
        assert!(matches!(welch_t_one_sided(&[1.0], &[2.0, 3.0], 0.1), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn paired_test() {
        let a = [0.8, 0.82, 0.79, 0.85];
        let b = [0.78, 0.8, 0.78, 0.8];
        let r = paired_t_one_sided(&a, &b, 0.1).unwrap();
        assert_eq!(r.degrees_of_freedom, 3.0);
        assert!(r.p_value < 0.1);
        assert!(paired_t_one_sided(&a, &b[..3], 0.1).is_err());
    }
}
