//! Small descriptive and rank statistics used by replicate summaries and tests.

use alloc::vec::Vec;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Linear-interpolation quantile (type 7) of unsorted data.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    let frac = pos - lo as f64;
    v[lo] + (v[hi] - v[lo]) * frac
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Average ranks (1-based), ties share the mean rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = alloc::vec![0.0; xs.len()];
    let mut k = 0;
    while k < idx.len() {
        let mut j = k;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[k]] {
            j += 1;
        }
        let avg = (k + j) as f64 / 2.0 + 1.0;
        for &i in &idx[k..=j] {
            r[i] = avg;
        }
        k = j + 1;
    }
    r
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / libm::sqrt(sxx * syy)
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&ranks(xs), &ranks(ys))
}

/// One-sided p-value for a positive Spearman correlation against the
/// sequence `0..n`. Exact by permutation enumeration for `n <= 9`,
/// Student-t approximation above.
pub fn spearman_trend_pvalue(ys: &[f64]) -> f64 {
    let n = ys.len();
    if n < 3 {
        return 1.0;
    }
    let xs: Vec<f64> = (0..n).map(|k| k as f64).collect();
    let observed = spearman(&xs, ys);
    if n <= 9 {
        let ry = ranks(ys);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut hits = 0u64;
        let mut total = 0u64;
        loop {
            let permuted: Vec<f64> = perm.iter().map(|&p| ry[p]).collect();
            if pearson(&xs, &permuted) >= observed - 1e-12 {
                hits += 1;
            }
            total += 1;
            if !next_permutation(&mut perm) {
                break;
            }
        }
        return hits as f64 / total as f64;
    }
    let t = observed * libm::sqrt((n - 2) as f64 / (1.0 - observed * observed).max(1e-300));
    student_t_sf(t, (n - 2) as f64)
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

// Survival function of Student's t via the regularized incomplete beta,
// evaluated by continued fraction.
fn student_t_sf(t: f64, nu: f64) -> f64 {
    let x = nu / (nu + t * t);
    let tail = 0.5 * reg_inc_beta(0.5 * nu, 0.5, x);
    if t >= 0.0 {
        tail
    } else {
        1.0 - tail
    }
}

fn reg_inc_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b)
        + a * libm::log(x)
        + b * libm::log(1.0 - x);
    if x < (a + 1.0) / (a + b + 2.0) {
        libm::exp(ln_front) * beta_cf(a, b, x) / a
    } else {
        1.0 - libm::exp(ln_front) * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if libm::fabs(d) < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..300 {
        let m = m as f64;
        let aa = m * (b - m) * x / ((a + 2.0 * m - 1.0) * (a + 2.0 * m));
        d = 1.0 + aa * d;
        d = if libm::fabs(d) < tiny { tiny } else { d };
        c = 1.0 + aa / c;
        c = if libm::fabs(c) < tiny { tiny } else { c };
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (a + b + m) * x / ((a + 2.0 * m) * (a + 2.0 * m + 1.0));
        d = 1.0 + aa * d;
        d = if libm::fabs(d) < tiny { tiny } else { d };
        c = 1.0 + aa / c;
        c = if libm::fabs(c) < tiny { tiny } else { c };
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if libm::fabs(del - 1.0) < 1e-15 {
            break;
        }
    }
    h
}

/// Ordinary least squares fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LinearFit {
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LinearFit { slope, intercept: my - slope * mx, r_squared }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn quantiles() {
        let xs = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(median(&xs), 2.5);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
        assert_abs_diff_eq!(quantile(&xs, 0.25), 1.75, epsilon = 1e-15);
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 5.0]), alloc::vec![2.5, 4.0, 2.5, 1.0]);
    }

    #[test]
    fn spearman_and_exact_pvalue() {
        let ys = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        assert_abs_diff_eq!(spearman(&xs, &ys), 1.0, epsilon = 1e-15);
        // only the identity permutation reaches rho = 1
        assert_abs_diff_eq!(spearman_trend_pvalue(&ys), 1.0 / 720.0, epsilon = 1e-15);
        let flat = [0.3, 0.1, 0.5, 0.2, 0.6, 0.4];
        assert!(spearman_trend_pvalue(&flat) > 0.05);
    }

    #[test]
    fn t_approximation_is_sane() {
        // rho = 1 on 12 points
        let ys: alloc::vec::Vec<f64> = (0..12).map(|k| k as f64).collect();
        assert!(spearman_trend_pvalue(&ys) < 1e-6);
        // t = 0 gives one half
        assert_abs_diff_eq!(student_t_sf(0.0, 5.0), 0.5, epsilon = 1e-12);
        // t(1) at 1.0: 0.25
        assert_abs_diff_eq!(student_t_sf(1.0, 1.0), 0.25, epsilon = 1e-10);
    }

    #[test]
    fn ols() {
        let fit = linear_fit(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
        assert_abs_diff_eq!(fit.slope, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(fit.intercept, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(fit.r_squared, 1.0, epsilon = 1e-14);
    }
}
