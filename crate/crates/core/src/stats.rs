//! Sample summaries and two-sample equivalence checks.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::engines::SampleSet;

pub const DEFAULT_COVERAGE: f64 = 0.95;
pub const DEFAULT_BINS: usize = 200;
pub const DEFAULT_KS_ALPHA: f64 = 0.001;
pub const DEFAULT_NSIGMA: f64 = 5.0;
/// Accepted band for the ratio of standard deviations.
pub const STD_RATIO_BAND: (f64, f64) = (0.98, 1.02);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {need} values, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("value at index {index} is not finite")]
    NonFinite { index: usize },
    #[error("coverage probability must lie in (0, 1), got {0}")]
    BadCoverage(f64),
    #[error("significance level must lie in (0, 1), got {0}")]
    BadAlpha(f64),
    #[error("histogram needs at least one bin")]
    NoBins,
    #[error("input is not sorted ascending at index {0}")]
    NotSorted(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub bin_high: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryReport {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub coverage_p: f64,
    pub histogram: Vec<HistogramBin>,
}

fn check_finite(values: &[f64]) -> Result<(), StatsError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(StatsError::NonFinite { index }),
        None => Ok(()),
    }
}

fn check_coverage(p: f64) -> Result<(), StatsError> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(StatsError::BadCoverage(p))
    }
}

/// Compensated (Neumaier) sum.
fn sum_compensated(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Mean and sample standard deviation (divisor n − 1), two passes with
/// compensated sums.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64), StatsError> {
    if values.len() < 2 {
        return Err(StatsError::TooFew {
            need: 2,
            got: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = sum_compensated(values.iter().copied()) / n;
    let ss = sum_compensated(values.iter().map(|x| (x - mean) * (x - mean)));
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

/// Number of samples a coverage interval must hold: `ceil(p·n)`, with `p·n`
/// snapped to the nearest integer when it is within rounding error of one
/// (so 0.95·100 gives 95 rather than 96).
pub fn coverage_count(n: usize, p: f64) -> usize {
    let t = p * n as f64;
    let r = t.round();
    let k = if (t - r).abs() <= 4.0 * f64::EPSILON * t.max(1.0) {
        r
    } else {
        t.ceil()
    };
    (k as usize).clamp(1, n)
}

/// Narrowest window `[v[i], v[i+k−1]]` with `k = ceil(p·n)`; ties go to the
/// smallest `i`.
pub fn shortest_coverage_interval(sorted: &[f64], p: f64) -> Result<(f64, f64), StatsError> {
    check_coverage(p)?;
    if sorted.len() < 2 {
        return Err(StatsError::TooFew {
            need: 2,
            got: sorted.len(),
        });
    }
    check_finite(sorted)?;
    if let Some(i) = sorted.windows(2).position(|w| w[1] < w[0]) {
        return Err(StatsError::NotSorted(i + 1));
    }
    let k = coverage_count(sorted.len(), p);
    let mut best = 0;
    let mut best_width = f64::INFINITY;
    for i in 0..=sorted.len() - k {
        let width = sorted[i + k - 1] - sorted[i];
        if width < best_width {
            best_width = width;
            best = i;
        }
    }
    Ok((sorted[best], sorted[best + k - 1]))
}

/// `bins` equal-width bins over `[min, max]`; the last bin is closed.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<HistogramBin>, StatsError> {
    if bins == 0 {
        return Err(StatsError::NoBins);
    }
    if values.is_empty() {
        return Err(StatsError::TooFew { need: 1, got: 0 });
    }
    check_finite(values)?;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(vec![HistogramBin {
            bin_low: lo,
            bin_high: hi,
            count: values.len() as u64,
        }]);
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &v in values {
        let idx = (((v - lo) / width) as usize).min(bins - 1);
        counts[idx] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            bin_low: lo + i as f64 * width,
            bin_high: if i + 1 == bins {
                hi
            } else {
                lo + (i + 1) as f64 * width
            },
            count,
        })
        .collect())
}

pub fn summarize_values(
    values: &[f64],
    coverage_p: f64,
    bins: usize,
) -> Result<SummaryReport, StatsError> {
    check_coverage(coverage_p)?;
    check_finite(values)?;
    let (mean, std) = mean_std(values)?;
    let mut sorted = values.to_vec();
    sorted.par_sort_unstable_by(f64::total_cmp);
    let (ci_low, ci_high) = shortest_coverage_interval(&sorted, coverage_p)?;
    Ok(SummaryReport {
        n: values.len(),
        mean,
        std,
        ci_low,
        ci_high,
        coverage_p,
        histogram: histogram(&sorted, bins)?,
    })
}

pub fn summarize(
    samples: &SampleSet,
    coverage_p: f64,
    bins: usize,
) -> Result<SummaryReport, StatsError> {
    summarize_values(&samples.values, coverage_p, bins)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub stat: f64,
    pub critical: f64,
    pub pass: bool,
}

/// Asymptotic two-sample coefficient `c(α) = √(−ln(α/2)/2)`.
pub fn ks_coefficient(alpha: f64) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt()
}

/// Largest gap between the two empirical CDFs.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.par_sort_unstable_by(f64::total_cmp);
    b.par_sort_unstable_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> Result<KsResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::TooFew {
            need: 1,
            got: a.len().min(b.len()),
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(StatsError::BadAlpha(alpha));
    }
    check_finite(a)?;
    check_finite(b)?;
    let stat = ks_statistic(a, b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let critical = ks_coefficient(alpha) * ((na + nb) / (na * nb)).sqrt();
    Ok(KsResult {
        stat,
        critical,
        pass: stat <= critical,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentComparison {
    pub mean_diff_sigmas: f64,
    pub std_ratio: f64,
    pub nsigma: f64,
    pub pass: bool,
}

pub fn moment_equivalence(
    a: &[f64],
    b: &[f64],
    nsigma: f64,
) -> Result<MomentComparison, StatsError> {
    let (ma, sa) = mean_std(a)?;
    let (mb, sb) = mean_std(b)?;
    let se = (sa * sa / a.len() as f64 + sb * sb / b.len() as f64).sqrt();
    let diff = ma - mb;
    let mean_diff_sigmas = if diff == 0.0 { 0.0 } else { diff / se };
    let std_ratio = if sa == sb { 1.0 } else { sa / sb };
    let pass = mean_diff_sigmas.abs() <= nsigma
        && (STD_RATIO_BAND.0..=STD_RATIO_BAND.1).contains(&std_ratio);
    Ok(MomentComparison {
        mean_diff_sigmas,
        std_ratio,
        nsigma,
        pass,
    })
}

/// Combined KS and moment verdict. Thresholds are carried in the report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub n_a: usize,
    pub n_b: usize,
    pub ks_stat: f64,
    pub ks_critical: f64,
    pub ks_pass: bool,
    pub mean_diff_sigmas: f64,
    pub std_ratio: f64,
    pub pass: bool,
    pub alpha: f64,
    pub nsigma: f64,
    pub std_ratio_min: f64,
    pub std_ratio_max: f64,
}

pub fn equivalence(
    a: &[f64],
    b: &[f64],
    alpha: f64,
    nsigma: f64,
) -> Result<EquivalenceReport, StatsError> {
    let ks = ks_two_sample(a, b, alpha)?;
    let mom = moment_equivalence(a, b, nsigma)?;
    Ok(EquivalenceReport {
        n_a: a.len(),
        n_b: b.len(),
        ks_stat: ks.stat,
        ks_critical: ks.critical,
        ks_pass: ks.pass,
        mean_diff_sigmas: mom.mean_diff_sigmas,
        std_ratio: mom.std_ratio,
        pass: ks.pass && mom.pass,
        alpha,
        nsigma,
        std_ratio_min: STD_RATIO_BAND.0,
        std_ratio_max: STD_RATIO_BAND.1,
    })
}
