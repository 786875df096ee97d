//! Estimators used by the Monte Carlo harness: means with standard errors,
//! Kolmogorov-Smirnov distances, chi-square goodness of fit, permutation
//! tests and log-log slopes.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("empty sample")]
    EmptySample,
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a − F_b|.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut a: Vec<f64> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut diff: f64 = 0.0;
    let mut best: f64 = 0.0;
    while i < a.len() || j < b.len() {
        let xa = a.get(i).copied().unwrap_or(f64::INFINITY);
        let xb = b.get(j).copied().unwrap_or(f64::INFINITY);
        if xa <= xb {
            // advance over ties in a
            let x = xa;
            while i < a.len() && a[i] == x {
                diff += 1.0 / na;
                i += 1;
            }
            if xb == x {
                while j < b.len() && b[j] == x {
                    diff -= 1.0 / nb;
                    j += 1;
                }
            }
        } else {
            let x = xb;
            while j < b.len() && b[j] == x {
                diff -= 1.0 / nb;
                j += 1;
            }
        }
        best = best.max(diff.abs());
    }
    Ok(best)
}

/// One-sample Kolmogorov-Smirnov statistic against a CDF.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> Result<f64, StatsError> {
    if xs.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut xs: Vec<f64> = xs.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut best: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        best = best.max((f - i as f64 / n).abs());
        best = best.max(((i + 1) as f64 / n - f).abs());
    }
    Ok(best)
}

/// Chi-square p-value for observed counts against expected counts.
///
/// Degrees of freedom = #cells − 1 (expected counts are assumed to come from
/// a fully specified distribution).
pub fn chi_square_pvalue(observed: &[u64], expected: &[f64]) -> Result<f64, StatsError> {
    if observed.is_empty() || observed.len() != expected.len() {
        return Err(StatsError::EmptySample);
    }
    let mut stat = 0.0;
    let mut cells = 0usize;
    for (&o, &e) in observed.iter().zip(expected) {
        if e <= 0.0 {
            continue;
        }
        let d = o as f64 - e;
        stat += d * d / e;
        cells += 1;
    }
    if cells < 2 {
        return Err(StatsError::EmptySample);
    }
    let dof = (cells - 1) as f64;
    Ok(crate::numerics::gamma_q(dof / 2.0, stat / 2.0))
}

/// Permutation p-value for exchangeability of a sequence of block statistics.
///
/// The test statistic is the absolute lag-1 autocovariance; under
/// exchangeability its permutation distribution is the null.
pub fn permutation_pvalue_exchangeable<R: rand::Rng>(
    blocks: &[f64],
    n_perm: usize,
    rng: &mut R,
) -> Result<f64, StatsError> {
    if blocks.len() < 3 {
        return Err(StatsError::EmptySample);
    }
    fn stat(xs: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        xs.windows(2)
            .map(|w| (w[0] - m) * (w[1] - m))
            .sum::<f64>()
            .abs()
            / n
    }
    let observed = stat(blocks);
    let mut work = blocks.to_vec();
    let mut ge = 0usize;
    for _ in 0..n_perm {
        // Fisher-Yates
        for i in (1..work.len()).rev() {
            let j = rng.random_range(0..=i);
            work.swap(i, j);
        }
        if stat(&work) >= observed {
            ge += 1;
        }
    }
    Ok((ge as f64 + 1.0) / (n_perm as f64 + 1.0))
}

/// Least-squares slope of ln(y) against ln(x).
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(StatsError::EmptySample);
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}
