//! Kernel density estimation with class-`s` kernels.
//!
//! The estimate from `n` points with bandwidth `h` in dimension `d` is
//! `(1 / (n h^d)) * sum_j K((x - x_j) / h)`. Multivariate kernels are
//! products of the 1D profile. Bandwidths follow `h = n^(-1/(2s+2d))`.

use alloc::vec::Vec;

use crate::distributions::{Density, SampleSet, Sampler, TargetDensity};
use crate::quadrature::{composite_simpson, Grid};
use crate::rng::{seeded, standard_normal, uniform01, SimRng};
use crate::special::std_normal_pdf;
use crate::{Error, Result};

/// 1D kernel profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelProfile {
    Gaussian,
    Epanechnikov,
    /// Polynomial times Gaussian with vanishing moments below `s` (`s` in {4, 6}).
    HigherOrderGaussian(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelSpec {
    profile: KernelProfile,
    order: u32,
    nonneg: bool,
}

// Gaussian-type kernels are treated as zero beyond this many bandwidths.
const GAUSS_CUTOFF: f64 = 12.0;

impl KernelSpec {
    pub fn gaussian() -> Self {
        Self { profile: KernelProfile::Gaussian, order: 2, nonneg: true }
    }

    pub fn epanechnikov() -> Self {
        Self { profile: KernelProfile::Epanechnikov, order: 2, nonneg: true }
    }

    pub fn higher_order_gaussian(order: u32) -> Result<Self> {
        match order {
            4 | 6 => Ok(Self { profile: KernelProfile::HigherOrderGaussian(order), order, nonneg: false }),
            _ => Err(Error::invalid("higher-order gaussian kernels exist for orders 4 and 6")),
        }
    }

    pub fn profile(&self) -> KernelProfile {
        self.profile
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn is_nonneg(&self) -> bool {
        self.nonneg
    }

    /// Profile value at `u`.
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match self.profile {
            KernelProfile::Gaussian => std_normal_pdf(u),
            KernelProfile::Epanechnikov => {
                if libm::fabs(u) <= 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            KernelProfile::HigherOrderGaussian(4) => 0.5 * (3.0 - u * u) * std_normal_pdf(u),
            KernelProfile::HigherOrderGaussian(_) => {
                let u2 = u * u;
                (15.0 - 10.0 * u2 + u2 * u2) / 8.0 * std_normal_pdf(u)
            }
        }
    }

    /// Product kernel value.
    #[inline]
    pub fn eval_product(&self, u: &[f64]) -> f64 {
        u.iter().map(|&v| self.eval(v)).product()
    }

    /// Radius outside which the profile is (numerically) zero.
    pub fn cutoff(&self) -> f64 {
        match self.profile {
            KernelProfile::Epanechnikov => 1.0,
            _ => GAUSS_CUTOFF,
        }
    }

    fn draw_noise(&self, rng: &mut SimRng) -> f64 {
        match self.profile {
            KernelProfile::Epanechnikov => {
                // median-of-three construction
                let u1 = 2.0 * uniform01(rng) - 1.0;
                let u2 = 2.0 * uniform01(rng) - 1.0;
                let u3 = 2.0 * uniform01(rng) - 1.0;
                if libm::fabs(u3) >= libm::fabs(u2) && libm::fabs(u3) >= libm::fabs(u1) {
                    u2
                } else {
                    u3
                }
            }
            _ => standard_normal(rng),
        }
    }
}

/// `n^(-1/(2s+2d))`.
pub fn bandwidth(n: usize, s: u32, d: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::EmptySampleSet);
    }
    if s == 0 || d == 0 {
        return Err(Error::invalid("bandwidth needs s >= 1 and d >= 1"));
    }
    Ok(libm::pow(n as f64, -1.0 / (2.0 * s as f64 + 2.0 * d as f64)))
}

/// A fitted estimator. Immutable once built.
#[derive(Debug, Clone)]
pub struct KdeModel {
    samples: SampleSet,
    // 1D only: sorted copy for windowed evaluation
    sorted: Vec<f64>,
    kernel: KernelSpec,
    bandwidth: f64,
}

/// Fits with the rate-optimal bandwidth for smoothness `s`.
pub fn fit(samples: SampleSet, kernel: KernelSpec, s: u32) -> Result<KdeModel> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let h = bandwidth(samples.len(), s, samples.dim())?;
    KdeModel::with_bandwidth(samples, kernel, h)
}

impl KdeModel {
    pub fn with_bandwidth(samples: SampleSet, kernel: KernelSpec, bandwidth: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::invalid("bandwidth must be positive"));
        }
        if samples.dim() > 2 {
            return Err(Error::UnsupportedDimension(samples.dim()));
        }
        let sorted = if samples.dim() == 1 {
            let mut v = samples.as_flat().to_vec();
            v.sort_by(f64::total_cmp);
            v
        } else {
            Vec::new()
        };
        Ok(Self { samples, sorted, kernel, bandwidth })
    }

    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }

    /// True when `n h^d < 4`, where the variance term dominates.
    pub fn variance_warning(&self) -> bool {
        (self.samples.len() as f64) * libm::pow(self.bandwidth, self.dim() as f64) < 4.0
    }

    pub fn kde_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        Ok(self.eval(x))
    }

    fn norm(&self) -> f64 {
        1.0 / (self.samples.len() as f64 * libm::pow(self.bandwidth, self.dim() as f64))
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let h = self.bandwidth;
        if self.dim() == 1 {
            let r = self.kernel.cutoff() * h;
            let lo = self.sorted.partition_point(|&v| v < x[0] - r);
            let hi = self.sorted.partition_point(|&v| v <= x[0] + r);
            let s: f64 = self.sorted[lo..hi].iter().map(|&v| self.kernel.eval((x[0] - v) / h)).sum();
            return s * self.norm();
        }
        let mut u = [0.0; 2];
        let s: f64 = self
            .samples
            .iter()
            .map(|p| {
                u[0] = (x[0] - p[0]) / h;
                u[1] = (x[1] - p[1]) / h;
                self.kernel.eval_product(&u)
            })
            .sum();
        s * self.norm()
    }

    /// Exact draws from the estimator: a uniformly chosen stored point plus
    /// `h` times kernel noise. Only defined for nonnegative kernels.
    pub fn kde_sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        self.check_sampleable()?;
        let mut rng = seeded(seed);
        let mut out = Vec::with_capacity(n * self.dim());
        for _ in 0..n {
            self.draw_unchecked(&mut rng, &mut out);
        }
        SampleSet::new(self.dim(), out, seed)
    }

    fn check_sampleable(&self) -> Result<()> {
        if self.kernel.nonneg {
            Ok(())
        } else {
            Err(Error::SignedKernelSampling { order: self.kernel.order })
        }
    }

    fn draw_unchecked(&self, rng: &mut SimRng, out: &mut Vec<f64>) {
        use rand::Rng;
        let k = rng.random_range(0..self.samples.len());
        let p = self.samples.point(k);
        for &c in p {
            out.push(c + self.bandwidth * self.kernel.draw_noise(rng));
        }
    }

    /// `TV(kde, target)` by grid quadrature over the target's support box.
    ///
    /// Uses the identity `(1/2) int |p - q| = int (q - p)_+` for two unit-mass
    /// functions, which keeps the integrand bounded by the smooth target even
    /// when the bandwidth is far below the grid spacing.
    pub fn l1_error(&self, target: &TargetDensity) -> Result<f64> {
        if self.dim() > 2 {
            return Err(Error::UnsupportedDimension(self.dim()));
        }
        if target.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: target.dim() });
        }
        let intervals = if self.dim() == 1 { L1_INTERVALS_1D } else { L1_INTERVALS_2D };
        let grid = Grid::new(target.support_hint(), intervals)?;
        let est = self.density_on_grid(&grid);
        let truth = target.density_on_grid(&grid);
        let excess: Vec<f64> = truth.iter().zip(&est).map(|(p, q)| (p - q).max(0.0)).collect();
        Ok(grid.trapezoid(&excess).clamp(0.0, 1.0))
    }
}

pub const L1_INTERVALS_1D: usize = 4096;
pub const L1_INTERVALS_2D: usize = 256;

impl Density for KdeModel {
    fn dim(&self) -> usize {
        KdeModel::dim(self)
    }

    fn density(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }

    fn density_on_grid(&self, grid: &Grid) -> Vec<f64> {
        if self.dim() != 1 {
            let nodes = grid.nodes();
            return nodes.chunks(2).map(|p| self.eval(p)).collect();
        }
        // nodes are increasing, so the sample window slides monotonically
        let h = self.bandwidth;
        let r = self.kernel.cutoff() * h;
        let norm = self.norm();
        let (mut lo, mut hi) = (0usize, 0usize);
        let n = self.sorted.len();
        grid.axis(0)
            .iter()
            .map(|&x| {
                while lo < n && self.sorted[lo] < x - r {
                    lo += 1;
                }
                if hi < lo {
                    hi = lo;
                }
                while hi < n && self.sorted[hi] <= x + r {
                    hi += 1;
                }
                let s: f64 = self.sorted[lo..hi].iter().map(|&v| self.kernel.eval((x - v) / h)).sum();
                s * norm
            })
            .collect()
    }
}

impl Sampler for KdeModel {
    fn dim(&self) -> usize {
        KdeModel::dim(self)
    }

    fn draw(&self, rng: &mut SimRng, out: &mut Vec<f64>) -> Result<()> {
        self.check_sampleable()?;
        self.draw_unchecked(rng, out);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentCondition {
    /// `int K = 1`
    UnitMass,
    /// `int x^k K = 0` for `1 <= k <= s - 1`
    Vanishing,
    /// `int |x|^s |K| < inf`
    FiniteAbsolute,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub order: u32,
    pub condition: MomentCondition,
    pub moment: f64,
    pub abs_moment: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelOrderReport {
    pub kernel: KernelSpec,
    pub rows: Vec<MomentRow>,
    pub symmetric: bool,
    /// `int (1 + |x|^2) K^2`, the square-integrability condition with d = 1, eps = 1.
    pub weighted_l2: f64,
}

impl KernelOrderReport {
    pub fn passed(&self) -> bool {
        self.symmetric && self.weighted_l2.is_finite() && self.rows.iter().all(|r| r.pass)
    }
}

pub const MOMENT_TOL: f64 = 1e-6;

/// Numeric moment table of the 1D profile up to order `s`.
pub fn verify_kernel_order(kernel: KernelSpec) -> KernelOrderReport {
    let reach = match kernel.profile {
        KernelProfile::Epanechnikov => 1.0,
        _ => 16.0,
    };
    let panels = 1 << 16;
    let s = kernel.order;
    let mut rows = Vec::with_capacity(s as usize + 1);
    for k in 0..=s {
        let moment = composite_simpson(|x| libm::pow(x, k as f64) * kernel.eval(x), -reach, reach, panels);
        let abs_moment =
            composite_simpson(|x| libm::pow(libm::fabs(x), k as f64) * libm::fabs(kernel.eval(x)), -reach, reach, panels);
        let (condition, pass) = if k == 0 {
            (MomentCondition::UnitMass, libm::fabs(moment - 1.0) < MOMENT_TOL)
        } else if k < s {
            (MomentCondition::Vanishing, libm::fabs(moment) < MOMENT_TOL)
        } else {
            (MomentCondition::FiniteAbsolute, abs_moment.is_finite())
        };
        rows.push(MomentRow { order: k, condition, moment, abs_moment, pass });
    }
    let symmetric = (0..=200).all(|j| {
        let x = j as f64 * 0.05 + 0.013;
        kernel.eval(x) == kernel.eval(-x)
    });
    let weighted_l2 = composite_simpson(
        |x| {
            let v = kernel.eval(x);
            (1.0 + x * x) * v * v
        },
        -reach,
        reach,
        panels,
    );
    KernelOrderReport { kernel, rows, symmetric, weighted_l2 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::sample;
    use crate::quadrature::SupportBox;
    use approx::assert_abs_diff_eq;

    fn n01() -> TargetDensity {
        TargetDensity::gauss1d(0.0, 1.0).unwrap()
    }

    fn single(at: f64) -> SampleSet {
        SampleSet::new(1, alloc::vec![at], 0).unwrap()
    }

    #[test]
    fn bandwidth_examples() {
        assert_abs_diff_eq!(bandwidth(4096, 2, 1).unwrap(), 0.25, epsilon = 1e-15);
        assert_eq!(bandwidth(1, 3, 2).unwrap(), 1.0);
        assert_abs_diff_eq!(bandwidth(10_000, 2, 1).unwrap(), 0.215_443_469, epsilon = 1e-9);
        assert_eq!(bandwidth(0, 2, 1), Err(Error::EmptySampleSet));
    }

    #[test]
    fn fit_examples() {
        let m = fit(single(0.0), KernelSpec::gaussian(), 2).unwrap();
        assert_eq!(m.bandwidth(), 1.0);
        assert_abs_diff_eq!(m.kde_pdf(&[0.0]).unwrap(), 0.398_94, epsilon = 1e-5);
        assert_abs_diff_eq!(m.kde_pdf(&[1.0]).unwrap(), 0.241_97, epsilon = 1e-5);
        let m = fit(sample(&n01(), 4096, 1), KernelSpec::gaussian(), 2).unwrap();
        assert_abs_diff_eq!(m.bandwidth(), 0.25, epsilon = 1e-15);
        assert_eq!(fit(SampleSet::empty(1, 0), KernelSpec::gaussian(), 2).unwrap_err(), Error::EmptySampleSet);
        assert!(m.kde_pdf(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn kde_integrates_to_one_and_is_nonneg() {
        let data = sample(&n01(), 300, 5);
        for kernel in [KernelSpec::gaussian(), KernelSpec::epanechnikov()] {
            let m = fit(data.clone(), kernel, 2).unwrap();
            let grid = Grid::new(&SupportBox::interval(-12.0, 12.0).unwrap(), 8192).unwrap();
            let vals = m.density_on_grid(&grid);
            assert!(vals.iter().all(|&v| v >= 0.0));
            assert!((grid.trapezoid(&vals) - 1.0).abs() < 1e-3);
        }
        // signed kernels still carry unit mass
        let m = fit(data, KernelSpec::higher_order_gaussian(4).unwrap(), 4).unwrap();
        let grid = Grid::new(&SupportBox::interval(-12.0, 12.0).unwrap(), 8192).unwrap();
        assert!((grid.trapezoid(&m.density_on_grid(&grid)) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn windowed_grid_eval_matches_pointwise() {
        let m = fit(sample(&n01(), 500, 2), KernelSpec::gaussian(), 2).unwrap();
        let grid = Grid::new(&SupportBox::interval(-5.0, 5.0).unwrap(), 64).unwrap();
        let fast = m.density_on_grid(&grid);
        for (x, f) in grid.axis(0).iter().zip(&fast) {
            let direct: f64 = m.samples().iter().map(|p| std_normal_pdf((x - p[0]) / m.bandwidth())).sum::<f64>()
                / (500.0 * m.bandwidth());
            assert_abs_diff_eq!(*f, direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn kde_2d_product_kernel() {
        let pts = SampleSet::new(2, alloc::vec![0.0, 0.0], 0).unwrap();
        let m = KdeModel::with_bandwidth(pts, KernelSpec::gaussian(), 1.0).unwrap();
        assert_abs_diff_eq!(m.kde_pdf(&[0.0, 0.0]).unwrap(), 0.398_942_280_4 * 0.398_942_280_4, epsilon = 1e-10);
    }

    #[test]
    fn kde_sample_examples() {
        let m = KdeModel::with_bandwidth(single(5.0), KernelSpec::gaussian(), 1e-6).unwrap();
        let s = m.kde_sample(3, 1).unwrap();
        assert!(s.iter().all(|p| (p[0] - 5.0).abs() < 1e-5));

        let signed = fit(single(0.0), KernelSpec::higher_order_gaussian(4).unwrap(), 4).unwrap();
        assert_eq!(signed.kde_sample(1, 0).unwrap_err(), Error::SignedKernelSampling { order: 4 });
    }

    #[test]
    fn kde_sample_variance_inflation() {
        // var(draws) = var(points) + h^2 for a unit-variance kernel
        let m = fit(sample(&n01(), 10_000, 3), KernelSpec::gaussian(), 2).unwrap();
        let expected = m.samples().variance()[0] * (9_999.0 / 10_000.0) + m.bandwidth() * m.bandwidth();
        let s = m.kde_sample(10_000, 4).unwrap();
        let v = s.variance()[0];
        assert!((v / expected - 1.0).abs() < 0.05, "{v} vs {expected}");
        // mean of draws within 4 sd of the stored mean
        let sd = libm::sqrt(expected / 10_000.0);
        assert!((s.mean()[0] - m.samples().mean()[0]).abs() < 4.0 * sd);
    }

    #[test]
    fn epanechnikov_noise_has_kernel_variance() {
        // Epanechnikov variance is 1/5
        let m = KdeModel::with_bandwidth(single(0.0), KernelSpec::epanechnikov(), 1.0).unwrap();
        let s = m.kde_sample(200_000, 8).unwrap();
        assert!((s.variance()[0] - 0.2).abs() < 0.003);
        assert!(s.iter().all(|p| p[0].abs() <= 1.0));
    }

    #[test]
    fn l1_error_singular_limit_is_near_one() {
        let m = KdeModel::with_bandwidth(sample(&n01(), 200, 1), KernelSpec::gaussian(), 1e-6).unwrap();
        let e = m.l1_error(&n01()).unwrap();
        assert!(e > 0.999, "{e}");
    }

    #[test]
    fn l1_error_matches_plain_absolute_quadrature() {
        let m = fit(sample(&n01(), 1000, 12), KernelSpec::gaussian(), 2).unwrap();
        let grid = Grid::new(n01().support_hint(), L1_INTERVALS_1D).unwrap();
        let a = m.density_on_grid(&grid);
        let b = n01().density_on_grid(&grid);
        let half_abs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x - y).abs()).collect();
        assert_abs_diff_eq!(m.l1_error(&n01()).unwrap(), grid.trapezoid(&half_abs), epsilon = 1e-4);
    }

    #[test]
    fn l1_error_rejects_mismatched_target() {
        let m = fit(single(0.0), KernelSpec::gaussian(), 2).unwrap();
        let t2 = TargetDensity::gauss2d([0.0, 0.0], [1.0, 1.0]).unwrap();
        assert!(m.l1_error(&t2).is_err());
    }

    #[test]
    fn l1_error_range_at_large_n() {
        // 30-seed pilot at n = 2^14: min 0.0067, median 0.0115, max 0.0173
        let e = fit(sample(&n01(), 1 << 14, 21), KernelSpec::gaussian(), 2).unwrap().l1_error(&n01()).unwrap();
        assert!((0.005..=0.03).contains(&e), "{e}");
    }

    #[test]
    fn variance_warning_flag() {
        let m = KdeModel::with_bandwidth(single(0.0), KernelSpec::gaussian(), 1.0).unwrap();
        assert!(m.variance_warning());
        let m = fit(sample(&n01(), 4096, 1), KernelSpec::gaussian(), 2).unwrap();
        assert!(!m.variance_warning());
    }

    #[test]
    fn kernel_order_reports() {
        let g = verify_kernel_order(KernelSpec::gaussian());
        assert!(g.passed());
        assert_abs_diff_eq!(g.rows[0].moment, 1.0, epsilon = 1e-6);
        assert!(g.rows[1].moment.abs() < 1e-6);

        let h4 = verify_kernel_order(KernelSpec::higher_order_gaussian(4).unwrap());
        assert!(h4.passed());
        assert!(h4.rows[2].moment.abs() < 1e-6);
        // fourth moment of ((3 - x^2)/2) phi is (9 - 15)/2 = -3
        assert_abs_diff_eq!(h4.rows[4].moment, -3.0, epsilon = 1e-6);

        let h6 = verify_kernel_order(KernelSpec::higher_order_gaussian(6).unwrap());
        assert!(h6.passed());
        assert!(h6.rows[4].moment.abs() < 1e-6);

        let e = verify_kernel_order(KernelSpec::epanechnikov());
        assert!(e.passed());
        assert_abs_diff_eq!(e.rows[2].abs_moment, 0.2, epsilon = 1e-9);
    }

    #[test]
    fn only_orders_four_and_six() {
        assert!(KernelSpec::higher_order_gaussian(3).is_err());
        assert!(KernelSpec::higher_order_gaussian(8).is_err());
    }
}
