//! Rank and distribution statistics: Spearman correlation, two-sample
//! Kolmogorov-Smirnov test, and the cross-model transferability report.
//!
//! Degenerate inputs (constant vectors) are errors rather than NaN so that
//! downstream reports never silently carry poisoned values.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::difficulty::{self, ceil_fraction};
use crate::records::DifficultyRanking;
use crate::scalar::Real;

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("degenerate input: a constant vector has no rank correlation")]
    Degenerate,
    #[error("non-finite value in input")]
    NonFinite,
    #[error("empty input")]
    EmptyInput,
    #[error("rankings share fewer than 2 common prompts")]
    NoCommonPrompts,
    #[error("band fraction {0} must lie in (0, 1)")]
    BadBandFraction(f64),
}

fn check_finite<T: Real>(xs: &[T]) -> Result<(), StatsError> {
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// Average (fractional) ranks, 1-based: ties receive the mean of the rank
/// positions they occupy.
fn average_ranks<T: Real>(xs: &[T]) -> Vec<T> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).expect("finite values"));

    let mut ranks = vec![T::zero(); xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share the average of ranks i+1..=j+1.
        let avg = T::from_usize_lossy(i + 1 + j + 1) / T::from_usize_lossy(2);
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson<T: Real>(x: &[T], y: &[T]) -> Result<T, StatsError> {
    let n = T::from_usize_lossy(x.len());
    let mean_x = x.iter().copied().sum::<T>() / n;
    let mean_y = y.iter().copied().sum::<T>() / n;
    let mut cov = T::zero();
    let mut var_x = T::zero();
    let mut var_y = T::zero();
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        cov = cov + dx * dy;
        var_x = var_x + dx * dx;
        var_y = var_y + dy * dy;
    }
    if var_x == T::zero() || var_y == T::zero() {
        return Err(StatsError::Degenerate);
    }
    Ok(cov / (var_x * var_y).sqrt())
}

/// Spearman rank correlation with average-rank tie handling.
///
/// Uses the closed form `1 - 6*sum(d^2)/(n*(n^2-1))` when neither input has
/// ties (the closed form is biased under ties) and Pearson-on-average-ranks
/// otherwise. The result lies in [-1, 1].
pub fn spearman<T: Real>(x: &[T], y: &[T]) -> Result<T, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(StatsError::TooShort {
            need: 2,
            got: x.len(),
        });
    }
    check_finite(x)?;
    check_finite(y)?;
    let all_equal = |v: &[T]| v.iter().all(|&e| e == v[0]);
    if all_equal(x) || all_equal(y) {
        return Err(StatsError::Degenerate);
    }

    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let has_ties = |v: &[T]| {
        let mut sorted: Vec<T> = v.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
        sorted.windows(2).any(|w| w[0] == w[1])
    };
    if has_ties(x) || has_ties(y) {
        return pearson(&rx, &ry);
    }
    let n = T::from_usize_lossy(x.len());
    let six = T::from_usize_lossy(6);
    let d2: T = rx
        .iter()
        .zip(&ry)
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(T::one() - six * d2 / (n * (n * n - T::one())))
}

/// Two-sample KS test result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult<T> {
    /// Supremum distance between the two empirical CDFs, in [0, 1].
    pub statistic: T,
    /// Asymptotic p-value under the Kolmogorov distribution, in [0, 1].
    pub p_value: T,
}

/// Two-sample Kolmogorov-Smirnov test on unpaired samples.
///
/// The p-value uses the asymptotic Kolmogorov survival function with
/// effective size `na*nb/(na+nb)`; the series is truncated once terms fall
/// below 1e-10. It is an approximation for small samples.
pub fn ks_two_sample<T: Real>(a: &[T], b: &[T]) -> Result<KsResult<T>, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    check_finite(a)?;
    check_finite(b)?;

    let mut xs: Vec<T> = a.to_vec();
    let mut ys: Vec<T> = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("finite values"));
    ys.sort_by(|p, q| p.partial_cmp(q).expect("finite values"));

    let n = xs.len();
    let m = ys.len();
    let nf = T::from_usize_lossy(n);
    let mf = T::from_usize_lossy(m);
    let mut i = 0usize;
    let mut j = 0usize;
    let mut statistic = T::zero();
    while i < n && j < m {
        let current = if xs[i] <= ys[j] { xs[i] } else { ys[j] };
        while i < n && xs[i] == current {
            i += 1;
        }
        while j < m && ys[j] == current {
            j += 1;
        }
        let diff = (T::from_usize_lossy(i) / nf - T::from_usize_lossy(j) / mf).abs();
        if diff > statistic {
            statistic = diff;
        }
    }
    // Once one sample is exhausted the gap only shrinks back to 0, so the
    // remaining sweep cannot raise the supremum.

    let n_eff = nf * mf / (nf + mf);
    let p_value = kolmogorov_survival(n_eff.sqrt() * statistic);
    Ok(KsResult { statistic, p_value })
}

/// Asymptotic Kolmogorov survival function
/// `Q(t) = 2 * sum_{k>=1} (-1)^(k-1) * exp(-2 k^2 t^2)`, clamped to [0, 1].
fn kolmogorov_survival<T: Real>(t: T) -> T {
    // Below 0.25 the series converges too slowly to truncate; the true
    // survival there is 1 to within ~3e-8, so short-circuit.
    if t < T::from_f64_lossy(0.25) {
        return T::one();
    }
    let threshold = T::from_f64_lossy(1e-10);
    let two = T::from_usize_lossy(2);
    let mut sum = T::zero();
    let mut sign = T::one();
    for k in 1..=1000usize {
        let kf = T::from_usize_lossy(k);
        let term = (-two * kf * kf * t * t).exp();
        sum = sum + sign * term;
        if term < threshold {
            break;
        }
        sign = -sign;
    }
    (two * sum).max(T::zero()).min(T::one())
}

/// Agreement between two difficulty rankings restricted to their common
/// prompts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferReport {
    pub spearman: f64,
    /// Size of the intersection of the two hardest bands.
    pub hardest_band_overlap: usize,
    pub band_fraction: f64,
    pub n_common_prompts: usize,
}

/// Spearman correlation of the two mean-reward vectors plus the overlap of
/// the hardest bands, both computed over the prompts the rankings share.
pub fn transfer_report(
    rank_a: &DifficultyRanking,
    rank_b: &DifficultyRanking,
    band_fraction: f64,
) -> Result<TransferReport, StatsError> {
    if !(band_fraction > 0.0 && band_fraction < 1.0) {
        return Err(StatsError::BadBandFraction(band_fraction));
    }
    let ids_a: BTreeSet<&str> = rank_a.iter().map(|e| e.prompt_id.as_str()).collect();
    let ids_b: BTreeSet<&str> = rank_b.iter().map(|e| e.prompt_id.as_str()).collect();
    let common: BTreeSet<&str> = ids_a.intersection(&ids_b).copied().collect();
    if common.len() < 2 {
        return Err(StatsError::NoCommonPrompts);
    }

    // Mean-reward vectors aligned on the sorted common prompt ids.
    let collect_means = |rank: &DifficultyRanking| {
        let mut by_id: Vec<(&str, f64)> = rank
            .iter()
            .filter(|e| common.contains(e.prompt_id.as_str()))
            .map(|e| (e.prompt_id.as_str(), e.mean_reward))
            .collect();
        by_id.sort_by_key(|(id, _)| *id);
        by_id.into_iter().map(|(_, m)| m).collect::<Vec<f64>>()
    };
    let means_a = collect_means(rank_a);
    let means_b = collect_means(rank_b);
    let rho = spearman(&means_a, &means_b)?;

    let common_owned: BTreeSet<String> = common.iter().map(|s| s.to_string()).collect();
    let filtered_a = rank_a.filtered(|id| common_owned.contains(id));
    let filtered_b = rank_b.filtered(|id| common_owned.contains(id));
    let bands_a = difficulty::partition_bands(&filtered_a, &[band_fraction])
        .expect("validated fraction on non-empty ranking");
    let bands_b = difficulty::partition_bands(&filtered_b, &[band_fraction])
        .expect("validated fraction on non-empty ranking");
    let hardest_a: BTreeSet<&String> = bands_a.hardest().iter().collect();
    let overlap = bands_b
        .hardest()
        .iter()
        .filter(|id| hardest_a.contains(id))
        .count();
    debug_assert!(overlap <= ceil_fraction(band_fraction, common.len()));

    Ok(TransferReport {
        spearman: rho,
        hardest_band_overlap: overlap,
        band_fraction,
        n_common_prompts: common.len(),
    })
}
