//! Small statistics toolkit for the Monte Carlo reports.

/// One-sided 95% normal quantile.
pub const Z_95_ONE_SIDED: f64 = 1.644_853_626_951_472_2;

/// Two-sided 95% normal quantile, used for the autocorrelation cutoff.
const Z_95_TWO_SIDED: f64 = 1.959_963_984_540_054;

/// Sample mean and standard error of the mean (`n - 1` denominator; zero for a
/// single value).
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64 / n as f64).sqrt())
}

/// Mann-Kendall trend statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannKendall {
    pub s: f64,
    pub variance: f64,
    pub z: f64,
    /// Variance inflation applied for autocorrelation (1 for the classic test).
    pub inflation: f64,
}

impl MannKendall {
    /// Significant increasing trend at the one-sided 95% level.
    pub fn increasing(&self) -> bool {
        self.z > Z_95_ONE_SIDED
    }

    pub fn decreasing(&self) -> bool {
        self.z < -Z_95_ONE_SIDED
    }
}

fn mk_score(x: &[f64]) -> f64 {
    let mut s = 0i64;
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            s += match x[j].partial_cmp(&x[i]) {
                Some(std::cmp::Ordering::Greater) => 1,
                Some(std::cmp::Ordering::Less) => -1,
                _ => 0,
            };
        }
    }
    s as f64
}

fn tie_groups(x: &[f64]) -> Vec<usize> {
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.chunk_by(|a, b| a == b).map(<[f64]>::len).collect()
}

fn mk_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let ties: f64 = tie_groups(x)
        .into_iter()
        .map(|t| {
            let t = t as f64;
            t * (t - 1.0) * (2.0 * t + 5.0)
        })
        .sum();
    (n * (n - 1.0) * (2.0 * n + 5.0) - ties) / 18.0
}

fn z_score(s: f64, variance: f64) -> f64 {
    if s > 0.0 {
        (s - 1.0) / variance.sqrt()
    } else if s < 0.0 {
        (s + 1.0) / variance.sqrt()
    } else {
        0.0
    }
}

/// Classic Mann-Kendall test with the tie-corrected variance. Needs at least
/// three points for a meaningful statistic.
pub fn mann_kendall(x: &[f64]) -> MannKendall {
    let s = mk_score(x);
    let variance = mk_variance(x);
    MannKendall { s, variance, z: z_score(s, variance), inflation: 1.0 }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Theil-Sen slope: median of pairwise slopes.
pub fn sen_slope(x: &[f64]) -> f64 {
    let mut slopes = Vec::with_capacity(x.len() * x.len().saturating_sub(1) / 2);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            slopes.push((x[j] - x[i]) / (j - i) as f64);
        }
    }
    median(slopes)
}

/// Ranks starting at 1, ties get their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        let rank = 0.5 * ((start + 1) + end) as f64;
        for &k in &order[start..end] {
            ranks[k] = rank;
        }
        start = end;
    }
    ranks
}

/// Biased sample autocorrelation at lags `0..=max_lag`.
pub fn autocorrelation(x: &[f64], max_lag: usize) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let y: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0: f64 = y.iter().map(|v| v * v).sum();
    (0..=max_lag.min(n - 1))
        .map(|k| y[..n - k].iter().zip(&y[k..]).map(|(a, b)| a * b).sum::<f64>() / c0)
        .collect()
}

/// Mann-Kendall test with the Hamed-Rao variance correction for serially
/// correlated series: the variance is inflated by
/// `1 + 2 / (n(n-1)(n-2)) * sum_k (n-k)(n-k-1)(n-k-2) r_k`, where `r_k` are the
/// significant (two-sided 95%) autocorrelations of the ranks of the
/// Sen-detrended series. A non-positive inflation falls back to 1.
pub fn mann_kendall_hamed_rao(x: &[f64]) -> MannKendall {
    let n = x.len();
    let classic = mann_kendall(x);
    if n < 3 {
        return classic;
    }
    let slope = sen_slope(x);
    let detrended: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(i, v)| v - (i + 1) as f64 * slope)
        .collect();
    let ranks = average_ranks(&detrended);
    if ranks.iter().all(|&r| r == ranks[0]) {
        return classic;
    }
    let acf = autocorrelation(&ranks, n - 1);
    let cutoff = Z_95_TWO_SIDED / (n as f64).sqrt();
    let nf = n as f64;
    let sum: f64 = (1..n)
        .filter(|&k| acf[k].abs() > cutoff)
        .map(|k| {
            let m = (n - k) as f64;
            m * (m - 1.0) * (m - 2.0) * acf[k]
        })
        .sum();
    let mut inflation = 1.0 + 2.0 / (nf * (nf - 1.0) * (nf - 2.0)) * sum;
    if !(inflation > 0.0) {
        inflation = 1.0;
    }
    let variance = classic.variance * inflation;
    MannKendall { z: z_score(classic.s, variance), variance, inflation, ..classic }
}

/// Ordinary least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// `None` for fewer than two points or constant `x`.
pub fn least_squares(x: &[f64], y: &[f64]) -> Option<LinearFit> {
    let n = x.len().min(y.len());
    if n < 2 {
        return None;
    }
    let mx = x[..n].iter().sum::<f64>() / n as f64;
    let my = y[..n].iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        sxy += (a - mx) * (b - my);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let residual = syy - slope * sxy;
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - residual / syy };
    Some(LinearFit { slope, intercept: my - slope * mx, r_squared })
}
