//! Closed-form bound calculus.
//!
//! Every bound here is an "up to constant" quantity: the hidden universal
//! constants are fixed to 1, so values are comparable across configurations
//! but not calibrated against measured TV.
//!
//! The central object is the coefficient table `A_0..A_i` of the recursion
//! `A_i = 1`, `A_{i-k} = sum_{j=i-k+1}^{i} beta_j^{i-k+1} A_j`, which weights
//! the per-generation estimation error of generation `k` in the final bound.

use alloc::format;
use alloc::vec::Vec;

use crate::mixing::MixtureSchedule;
use crate::special::{ceil_count, gamma_ratio};
use crate::{Error, Result};

/// `values[j]` is `A_j` for `j = 0..=generation`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    pub generation: usize,
    pub values: Vec<f64>,
}

impl CoefficientTable {
    pub fn a(&self, j: usize) -> f64 {
        self.values[j]
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// Backward recursion over the schedule rows `1..=i`.
pub fn coefficients(schedule: &MixtureSchedule, i: usize) -> Result<CoefficientTable> {
    let rows = (1..=i).map(|j| schedule.weights_at(j)).collect::<Result<Vec<_>>>()?;
    let mut a = alloc::vec![0.0; i + 1];
    a[i] = 1.0;
    for k in 1..=i {
        let target = i - k;
        // A_{i-k} = sum_{j=i-k+1}^{i} beta_j^{i-k+1} A_j
        a[target] = (target + 1..=i).map(|j| rows[j - 1].beta(target + 1) * a[j]).sum();
    }
    Ok(CoefficientTable { generation: i, values: a })
}

pub const BRUTEFORCE_LIMIT: usize = 12;

/// Oracle for [`coefficients`]: expands the one-step inequality
/// `E_{g} <= f(n_{g-1}) + sum_{k<g} beta_{g-1}^k E_k` path by path, starting
/// from `E_{i+1}`, and accumulates the weight reaching each `f(n_j)`.
pub fn coefficients_bruteforce(schedule: &MixtureSchedule, i: usize) -> Result<CoefficientTable> {
    if i > BRUTEFORCE_LIMIT {
        return Err(Error::ExpansionTooLarge { requested: i, limit: BRUTEFORCE_LIMIT });
    }
    let rows = (1..=i).map(|j| schedule.weights_at(j)).collect::<Result<Vec<_>>>()?;
    let mut acc = alloc::vec![0.0; i + 1];

    fn expand(g: usize, weight: f64, rows: &[crate::mixing::WeightRow], acc: &mut [f64]) {
        acc[g - 1] += weight;
        if g >= 2 {
            let row = &rows[g - 2];
            for k in 1..g {
                let b = row.beta(k);
                if b != 0.0 {
                    expand(k, weight * b, rows, acc);
                }
            }
        }
    }

    expand(i + 1, 1.0, &rows, &mut acc);
    Ok(CoefficientTable { generation: i, values: acc })
}

/// `A_k = sum_{j=k}^{i-1} Gamma(j+2) / Gamma(i+2)` for `k < i`, `A_i = 1`.
///
/// This is the published balanced-cycle form. It agrees with
/// [`coefficients`] for `i <= 2` only: from `i = 3` on it drops substitution
/// paths and undercounts, e.g. `A_0 = 3/8` against the exact `1/2` at `i = 3`.
/// See [`balanced_coefficients_exact`].
pub fn balanced_coefficients_closed_form(i: usize) -> CoefficientTable {
    let mut values: Vec<f64> = (0..i)
        .map(|k| (k..i).map(|j| gamma_ratio(j as f64 + 2.0, i as f64 + 2.0)).sum())
        .collect();
    values.push(1.0);
    CoefficientTable { generation: i, values }
}

/// Exact balanced-cycle coefficients: `A_k = 1/(k+2)` for `k < i`, `A_i = 1`.
///
/// Induction on the one-step inequality: the weight reaching `f(n_{g-1-m})`
/// from `E_g` is `1/(g-m+1)` for every `m >= 1`.
pub fn balanced_coefficients_exact(i: usize) -> CoefficientTable {
    let mut values: Vec<f64> = (0..i).map(|k| 1.0 / (k as f64 + 2.0)).collect();
    values.push(1.0);
    CoefficientTable { generation: i, values }
}

/// Inputs to the generation-`i` bounds, where `i = sample_counts.len() - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    pub sample_counts: Vec<u64>,
    pub dim: usize,
    pub delta: f64,
    pub kl_terms: Vec<f64>,
    pub smoothness: Option<u32>,
    pub flow_norm: Option<f64>,
}

impl BoundInputs {
    pub fn new(sample_counts: Vec<u64>, dim: usize, delta: f64) -> Result<Self> {
        if sample_counts.is_empty() {
            return Err(Error::invalid("bound inputs need at least n_0"));
        }
        if sample_counts.contains(&0) {
            return Err(Error::invalid("all sample counts must be >= 1"));
        }
        if dim == 0 {
            return Err(Error::invalid("dimension must be >= 1"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::invalid(format!("delta = {delta} must lie in (0, 1)")));
        }
        let kl_terms = alloc::vec![0.0; sample_counts.len()];
        Ok(Self { sample_counts, dim, delta, kl_terms, smoothness: None, flow_norm: None })
    }

    /// Same count for generations `0..=i`.
    pub fn uniform(n: u64, i: usize, dim: usize, delta: f64) -> Result<Self> {
        Self::new(alloc::vec![n; i + 1], dim, delta)
    }

    pub fn with_kl(mut self, kl_terms: Vec<f64>) -> Result<Self> {
        if kl_terms.iter().any(|&k| !(k >= 0.0)) {
            return Err(Error::invalid("KL terms must be >= 0"));
        }
        self.kl_terms = kl_terms;
        Ok(self)
    }

    pub fn with_smoothness(mut self, s: u32) -> Result<Self> {
        if s == 0 {
            return Err(Error::invalid("smoothness must be >= 1"));
        }
        self.smoothness = Some(s);
        Ok(self)
    }

    pub fn with_flow_norm(mut self, r: f64) -> Result<Self> {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::invalid("flow norm bound R must be >= 0"));
        }
        self.flow_norm = Some(r);
        Ok(self)
    }

    pub fn generation(&self) -> usize {
        self.sample_counts.len() - 1
    }

    fn check_sizes(&self) -> Result<()> {
        if self.kl_terms.len() != self.sample_counts.len() {
            return Err(Error::SizeMismatch {
                what: "kl_terms",
                expected: self.sample_counts.len(),
                found: self.kl_terms.len(),
            });
        }
        Ok(())
    }

    // log(d i / delta); generation 0 uses i = 1 so the log stays finite.
    fn log_term(&self) -> f64 {
        let i = self.generation().max(1) as f64;
        libm::log(self.dim as f64 * i / self.delta)
    }
}

/// A bound with its per-generation pieces, indexed by generation `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundBreakdown {
    pub coefficients: CoefficientTable,
    /// Unweighted rate term of generation `j`.
    pub terms: Vec<f64>,
    pub total: f64,
}

fn weighted(coefficients: CoefficientTable, terms: Vec<f64>) -> BoundBreakdown {
    let total = coefficients.values.iter().zip(&terms).map(|(a, t)| a * t).sum();
    BoundBreakdown { coefficients, terms, total }
}

/// `n^(-1/4) sqrt(d log(d i / delta))`.
pub fn diffusion_rate(n: u64, dim: usize, i: usize, delta: f64) -> f64 {
    let i = i.max(1) as f64;
    libm::pow(n as f64, -0.25) * libm::sqrt(dim as f64 * libm::log(dim as f64 * i / delta))
}

/// `sum_k A_{i-k} (n_{i-k}^{-1/4} sqrt(d log(d i / delta)) + sqrt(KL_{i-k}))`.
pub fn bound_diffusion(schedule: &MixtureSchedule, inputs: &BoundInputs) -> Result<BoundBreakdown> {
    inputs.check_sizes()?;
    let coefficients = coefficients(schedule, inputs.generation())?;
    let root = libm::sqrt(inputs.dim as f64 * inputs.log_term());
    let terms = inputs
        .sample_counts
        .iter()
        .zip(&inputs.kl_terms)
        .map(|(&n, &kl)| libm::pow(n as f64, -0.25) * root + libm::sqrt(kl))
        .collect();
    Ok(weighted(coefficients, terms))
}

/// The full-synthetic corollary form, which sums generations `1..=i` with
/// unit weights (the `n_0` term is left out).
pub fn bound_full_synthetic(inputs: &BoundInputs) -> Result<f64> {
    inputs.check_sizes()?;
    let root = libm::sqrt(inputs.dim as f64 * inputs.log_term());
    Ok(inputs
        .sample_counts
        .iter()
        .zip(&inputs.kl_terms)
        .skip(1)
        .map(|(&n, &kl)| libm::pow(n as f64, -0.25) * root + libm::sqrt(kl))
        .sum())
}

/// KDE rate exponents `(s/(2s+2d), (2s+d)/(4s+4d))`.
pub fn kde_exponents(s: u32, d: usize) -> (f64, f64) {
    let (s, d) = (s as f64, d as f64);
    (s / (2.0 * s + 2.0 * d), (2.0 * s + d) / (4.0 * s + 4.0 * d))
}

/// `sum_k A_{i-k} (n^{-s/(2s+2d)} sqrt(log(i/delta)) + n^{-(2s+d)/(4s+4d)})`.
pub fn bound_kde(schedule: &MixtureSchedule, inputs: &BoundInputs) -> Result<BoundBreakdown> {
    let s = inputs.smoothness.ok_or(Error::MissingInput("smoothness s"))?;
    let coefficients = coefficients(schedule, inputs.generation())?;
    let (e1, e2) = kde_exponents(s, inputs.dim);
    let i = inputs.generation().max(1) as f64;
    let root = libm::sqrt(libm::log(i / inputs.delta));
    let terms = inputs
        .sample_counts
        .iter()
        .map(|&n| libm::pow(n as f64, -e1) * root + libm::pow(n as f64, -e2))
        .collect();
    Ok(weighted(coefficients, terms))
}

/// `sum_k A_{i-k} n^{-1/4} R sqrt(1 + R^2) log^{1/4}(i/delta)`.
pub fn bound_flow(schedule: &MixtureSchedule, inputs: &BoundInputs) -> Result<BoundBreakdown> {
    let r = inputs.flow_norm.ok_or(Error::MissingInput("flow norm bound R"))?;
    let coefficients = coefficients(schedule, inputs.generation())?;
    let i = inputs.generation().max(1) as f64;
    let scale = r * libm::sqrt(1.0 + r * r) * libm::pow(libm::log(i / inputs.delta), 0.25);
    let terms = inputs.sample_counts.iter().map(|&n| libm::pow(n as f64, -0.25) * scale).collect();
    Ok(weighted(coefficients, terms))
}

/// `(1 + m/n)(1 - (m/(n+m))^{i+1})`.
pub fn fixed_ratio_prefactor(n: u64, m: u64, i: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::invalid("fixed ratio needs n >= 1 real samples"));
    }
    // 1 - rho^{i+1} with ln rho = ln(1 - n/(n+m))
    let ln_rho = libm::log1p(-(n as f64) / (n + m) as f64);
    let tail = -libm::expm1((i as f64 + 1.0) * ln_rho);
    Ok((1.0 + m as f64 / n as f64) * tail)
}

pub fn bound_fixed_ratio(n: u64, m: u64, i: usize, d: usize, delta: f64, kl: f64) -> Result<f64> {
    BoundInputs::uniform(n + m, i, d, delta)?;
    let pref = fixed_ratio_prefactor(n, m, i)?;
    Ok(pref * (diffusion_rate(n + m, d, i, delta) + libm::sqrt(kl)))
}

/// `(1 - (1 - alpha)^{i+1}) / alpha`.
pub fn real_each_gen_factor(alpha: f64, i: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    Ok(-libm::expm1((i as f64 + 1.0) * libm::log1p(-alpha)) / alpha)
}

pub fn bound_real_each_gen(alpha: f64, i: usize, n: u64, d: usize, delta: f64, kl: f64) -> Result<f64> {
    BoundInputs::uniform(n, i, d, delta)?;
    Ok(real_each_gen_factor(alpha, i)? * (diffusion_rate(n, d, i, delta) + libm::sqrt(kl)))
}

/// `f(lambda, i) = ((1+lambda)^{i+1} - lambda^{i+1}) / (1+lambda)^{i+1/4}`,
/// evaluated as `(1+lambda)^{3/4} (1 - (lambda/(1+lambda))^{i+1})` with the
/// bracket computed through `expm1`/`log1p`.
pub fn f_lambda(lambda: f64, i: usize) -> f64 {
    if lambda == 0.0 {
        return 1.0;
    }
    let tail = -libm::expm1((i as f64 + 1.0) * libm::log1p(-1.0 / (1.0 + lambda)));
    libm::pow(1.0 + lambda, 0.75) * tail
}

/// The literal quotient; loses digits for large `lambda`.
pub fn f_lambda_direct(lambda: f64, i: usize) -> f64 {
    let p = i as f64 + 1.0;
    (libm::pow(1.0 + lambda, p) - libm::pow(lambda, p)) / libm::pow(1.0 + lambda, i as f64 + 0.25)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePeak {
    pub generation: usize,
    pub lambda: f64,
    pub value: f64,
}

pub const LAMBDA_MAX: f64 = 1e6;

/// Maximizer of `f(., i)` on `(0, 1e6]`.
///
/// `f` is first sampled on a log grid and must rise then fall (one direction
/// change); golden-section search then runs on the grid cell pair around the
/// sampled maximum.
pub fn lambda_star(i: usize) -> Result<PhasePeak> {
    if i == 0 {
        return Err(Error::invalid("lambda_star needs i >= 1"));
    }
    let f = |l: f64| f_lambda(l, i);
    let mut grid = alloc::vec![0.0];
    let count = 2000;
    let (lo, hi) = (libm::log10(1e-4), libm::log10(LAMBDA_MAX));
    grid.extend((0..=count).map(|k| libm::pow(10.0, lo + (hi - lo) * k as f64 / count as f64)));
    let values: Vec<f64> = grid.iter().map(|&l| f(l)).collect();
    let peak = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap_or(0);
    if peak == 0 || peak == grid.len() - 1 {
        return Err(Error::Bracketing(format!("maximum of f(., {i}) sits at the bracket edge")));
    }
    let rising = values[..=peak].windows(2).all(|w| w[1] >= w[0]);
    let falling = values[peak..].windows(2).all(|w| w[1] <= w[0]);
    if !(rising && falling) {
        return Err(Error::Bracketing(format!("f(., {i}) is not unimodal on [0, {LAMBDA_MAX}]")));
    }
    let lambda = golden_section_max(f, grid[peak - 1], grid[peak + 1], 1e-8);
    Ok(PhasePeak { generation: i, lambda, value: f(lambda) })
}

/// Golden-section search for the maximizer of a unimodal `f` on `[a, b]`,
/// stopping when the bracket is narrower than `tol * max(1, |x|)`.
pub fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (libm::sqrt(5.0) - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..500 {
        if (b - a) <= tol * libm::fabs(0.5 * (a + b)).max(1.0) {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// `ceil((i sqrt(d) / eps)^4)`.
pub fn required_samples_quartic(i: usize, d: usize, eps: f64) -> Result<u64> {
    if !(eps > 0.0) || d == 0 {
        return Err(Error::invalid("need eps > 0 and d >= 1"));
    }
    Ok(ceil_count(libm::pow(i as f64 * libm::sqrt(d as f64) / eps, 4.0)))
}

/// Balanced-cycle sample schedule `n_0..n_i`:
/// `n_k = ceil(((i+1) sqrt(d)/eps * sum_{j=k}^{i-1} Gamma(j+2)/Gamma(i+2))^4)`
/// for `k < i`, and `n_i = ceil((sqrt(d)/eps)^4)`.
pub fn required_samples_balanced(i: usize, d: usize, eps: f64) -> Result<Vec<u64>> {
    if !(eps > 0.0) || d == 0 {
        return Err(Error::invalid("need eps > 0 and d >= 1"));
    }
    let root_d = libm::sqrt(d as f64);
    let closed = balanced_coefficients_closed_form(i);
    let mut out: Vec<u64> = (0..i)
        .map(|k| ceil_count(libm::pow((i as f64 + 1.0) * root_d / eps * closed.values[k], 4.0)))
        .collect();
    out.push(ceil_count(libm::pow(root_d / eps, 4.0)));
    Ok(out)
}

/// `(i - 1) / i`: real-data share needed in the last generation.
pub fn alpha_requirement(i: usize) -> Result<f64> {
    if i == 0 {
        return Err(Error::invalid("alpha_requirement needs i >= 1"));
    }
    Ok((i as f64 - 1.0) / i as f64)
}
