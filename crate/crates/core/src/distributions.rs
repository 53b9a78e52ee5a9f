//! Ground-truth densities: 1D Gaussians, 1D Gaussian mixtures and 2D
//! diagonal Gaussians, with exact pdfs, exact samplers and closed-form
//! divergences where they exist.

use alloc::format;
use alloc::vec::Vec;

use crate::quadrature::{adaptive_simpson, Grid};
pub use crate::quadrature::SupportBox;
use crate::rng::{seeded, standard_normal, uniform01, SimRng};
use crate::special::{normal_cdf, normal_pdf, std_normal_cdf};
use crate::{Error, Result};

/// Anything with a pointwise density.
pub trait Density {
    fn dim(&self) -> usize;

    /// Density at `x`; `x.len()` is assumed to equal [`Density::dim`].
    fn density(&self, x: &[f64]) -> f64;

    /// Density at every node of `grid`, row-major.
    fn density_on_grid(&self, grid: &Grid) -> Vec<f64> {
        let nodes = grid.nodes();
        nodes.chunks(grid.dim()).map(|p| self.density(p)).collect()
    }
}

/// Anything that can produce one i.i.d. draw at a time.
pub trait Sampler {
    fn dim(&self) -> usize;

    /// Appends one draw (`dim` coordinates) to `out`.
    fn draw(&self, rng: &mut SimRng, out: &mut Vec<f64>) -> Result<()>;
}

/// Points drawn from some distribution, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    dim: usize,
    points: Vec<f64>,
    seed: u64,
}

impl SampleSet {
    pub fn new(dim: usize, points: Vec<f64>, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("sample dimension must be positive"));
        }
        if !points.len().is_multiple_of(dim) {
            return Err(Error::invalid("point buffer length is not a multiple of dim"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sample points must be finite"));
        }
        Ok(Self { dim, points, seed })
    }

    pub fn empty(dim: usize, seed: u64) -> Self {
        Self { dim, points: Vec::new(), seed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.points.chunks(self.dim)
    }

    /// Flat row-major coordinates.
    pub fn as_flat(&self) -> &[f64] {
        &self.points
    }

    /// Values of coordinate `axis` for every point.
    pub fn column(&self, axis: usize) -> Vec<f64> {
        self.iter().map(|p| p[axis]).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim).map(|a| crate::stats::mean(&self.column(a))).collect()
    }

    /// Per-axis unbiased variance.
    pub fn variance(&self) -> Vec<f64> {
        (0..self.dim).map(|a| crate::stats::variance(&self.column(a))).collect()
    }
}

/// A 1D Gaussian `N(mean, std^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian1D {
    pub mean: f64,
    pub std: f64,
}

impl Gaussian1D {
    pub fn new(mean: f64, std: f64) -> Result<Self> {
        if !(mean.is_finite() && std.is_finite() && std > 0.0) {
            return Err(Error::invalid(format!("gaussian needs finite mean and std > 0 (got {mean}, {std})")));
        }
        Ok(Self { mean, std })
    }

    pub fn pdf(&self, x: f64) -> f64 {
        normal_pdf(x, self.mean, self.std)
    }

    pub fn cdf(&self, x: f64) -> f64 {
        normal_cdf(x, self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TargetKind {
    Gauss1D { mean: f64, std: f64 },
    GaussMixture1D(Vec<MixtureComponent>),
    /// Diagonal covariance given as per-axis variances.
    Gauss2D { mean: [f64; 2], var: [f64; 2] },
}

/// Ground-truth distribution with exact pdf, sampler and a box used to
/// truncate quadrature.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDensity {
    kind: TargetKind,
    support: SupportBox,
}

const SUPPORT_STDS: f64 = 10.0;
const WEIGHT_TOL: f64 = 1e-12;

impl TargetDensity {
    pub fn gauss1d(mean: f64, std: f64) -> Result<Self> {
        Self::from_kind(TargetKind::Gauss1D { mean, std })
    }

    pub fn mixture1d(components: Vec<MixtureComponent>) -> Result<Self> {
        Self::from_kind(TargetKind::GaussMixture1D(components))
    }

    pub fn gauss2d(mean: [f64; 2], var: [f64; 2]) -> Result<Self> {
        Self::from_kind(TargetKind::Gauss2D { mean, var })
    }

    pub fn from_kind(kind: TargetKind) -> Result<Self> {
        let support = match &kind {
            TargetKind::Gauss1D { mean, std } => {
                Gaussian1D::new(*mean, *std)?;
                SupportBox::interval(mean - SUPPORT_STDS * std, mean + SUPPORT_STDS * std)?
            }
            TargetKind::GaussMixture1D(comps) => {
                if comps.is_empty() {
                    return Err(Error::invalid("mixture needs at least one component"));
                }
                let mut total = 0.0;
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for c in comps {
                    Gaussian1D::new(c.mean, c.std)?;
                    if !(c.weight >= 0.0 && c.weight.is_finite()) {
                        return Err(Error::invalid("mixture weights must be nonnegative"));
                    }
                    total += c.weight;
                    lo = lo.min(c.mean - SUPPORT_STDS * c.std);
                    hi = hi.max(c.mean + SUPPORT_STDS * c.std);
                }
                if libm::fabs(total - 1.0) > WEIGHT_TOL {
                    return Err(Error::invalid(format!("mixture weights sum to {total}, not 1")));
                }
                SupportBox::interval(lo, hi)?
            }
            TargetKind::Gauss2D { mean, var } => {
                let mut bounds = Vec::with_capacity(2);
                for a in 0..2 {
                    if !(var[a] > 0.0 && var[a].is_finite()) {
                        return Err(Error::invalid("2D gaussian variances must be positive"));
                    }
                    Gaussian1D::new(mean[a], libm::sqrt(var[a]))?;
                    let s = libm::sqrt(var[a]);
                    bounds.push((mean[a] - SUPPORT_STDS * s, mean[a] + SUPPORT_STDS * s));
                }
                SupportBox::new(bounds)?
            }
        };
        Ok(Self { kind, support })
    }

    /// Replaces the default `mean +- 10 std` quadrature box.
    pub fn with_support(mut self, support: SupportBox) -> Result<Self> {
        if support.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: support.dim() });
        }
        self.support = support;
        Ok(self)
    }

    pub fn kind(&self) -> &TargetKind {
        &self.kind
    }

    pub fn support_hint(&self) -> &SupportBox {
        &self.support
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            TargetKind::Gauss2D { .. } => 2,
            _ => 1,
        }
    }

    pub fn as_gauss1d(&self) -> Option<Gaussian1D> {
        match self.kind {
            TargetKind::Gauss1D { mean, std } => Some(Gaussian1D { mean, std }),
            _ => None,
        }
    }

    /// Exact mean and per-axis variance.
    pub fn moments(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.kind {
            TargetKind::Gauss1D { mean, std } => (alloc::vec![*mean], alloc::vec![std * std]),
            TargetKind::GaussMixture1D(comps) => {
                let m: f64 = comps.iter().map(|c| c.weight * c.mean).sum();
                let second: f64 = comps.iter().map(|c| c.weight * (c.std * c.std + c.mean * c.mean)).sum();
                (alloc::vec![m], alloc::vec![second - m * m])
            }
            TargetKind::Gauss2D { mean, var } => (mean.to_vec(), var.to_vec()),
        }
    }

    pub fn pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: x.len() });
        }
        Ok(self.eval(x))
    }

    fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            TargetKind::Gauss1D { mean, std } => normal_pdf(x[0], *mean, *std),
            TargetKind::GaussMixture1D(comps) => {
                comps.iter().map(|c| c.weight * normal_pdf(x[0], c.mean, c.std)).sum()
            }
            TargetKind::Gauss2D { mean, var } => {
                normal_pdf(x[0], mean[0], libm::sqrt(var[0])) * normal_pdf(x[1], mean[1], libm::sqrt(var[1]))
            }
        }
    }

    fn draw_one(&self, rng: &mut SimRng, out: &mut Vec<f64>) {
        match &self.kind {
            TargetKind::Gauss1D { mean, std } => out.push(mean + std * standard_normal(rng)),
            TargetKind::GaussMixture1D(comps) => {
                let u = uniform01(rng);
                let mut acc = 0.0;
                let mut pick = comps.len() - 1;
                for (k, c) in comps.iter().enumerate() {
                    acc += c.weight;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                let c = comps[pick];
                out.push(c.mean + c.std * standard_normal(rng));
            }
            TargetKind::Gauss2D { mean, var } => {
                out.push(mean[0] + libm::sqrt(var[0]) * standard_normal(rng));
                out.push(mean[1] + libm::sqrt(var[1]) * standard_normal(rng));
            }
        }
    }
}

impl Density for TargetDensity {
    fn dim(&self) -> usize {
        TargetDensity::dim(self)
    }

    fn density(&self, x: &[f64]) -> f64 {
        self.eval(x)
    }
}

impl Sampler for TargetDensity {
    fn dim(&self) -> usize {
        TargetDensity::dim(self)
    }

    fn draw(&self, rng: &mut SimRng, out: &mut Vec<f64>) -> Result<()> {
        self.draw_one(rng, out);
        Ok(())
    }
}

/// `n` i.i.d. draws from `density`, reproducible from `seed`.
pub fn sample(density: &TargetDensity, n: usize, seed: u64) -> SampleSet {
    let mut rng = seeded(seed);
    let mut points = Vec::with_capacity(n * density.dim());
    for _ in 0..n {
        density.draw_one(&mut rng, &mut points);
    }
    SampleSet { dim: density.dim(), points, seed }
}

/// Total variation distance between two 1D Gaussians.
///
/// Equal standard deviations use `2 Phi(|dmu| / 2 sigma) - 1`; otherwise
/// `|p - q| / 2` is integrated adaptively on the pieces between the (at most
/// two) density crossings.
pub fn analytic_tv_gauss1d(g1: Gaussian1D, g2: Gaussian1D) -> f64 {
    if g1.std == g2.std {
        let z = libm::fabs(g1.mean - g2.mean) / (2.0 * g1.std);
        return (2.0 * std_normal_cdf(z) - 1.0).clamp(0.0, 1.0);
    }
    let lo = (g1.mean - 40.0 * g1.std).min(g2.mean - 40.0 * g2.std);
    let hi = (g1.mean + 40.0 * g1.std).max(g2.mean + 40.0 * g2.std);
    let mut cuts = alloc::vec![lo];
    for c in gaussian_crossings(g1, g2) {
        if c > lo && c < hi {
            cuts.push(c);
        }
    }
    cuts.push(hi);
    cuts.sort_by(f64::total_cmp);
    let f = |x: f64| 0.5 * libm::fabs(g1.pdf(x) - g2.pdf(x));
    let pieces = cuts.len() - 1;
    let mut total = 0.0;
    for w in cuts.windows(2) {
        // refine each piece so the adaptive rule sees the bulk of both densities
        let sub = 64;
        let h = (w[1] - w[0]) / sub as f64;
        for k in 0..sub {
            let a = w[0] + k as f64 * h;
            total += adaptive_simpson(&f, a, a + h, 1e-8 / (pieces * sub) as f64);
        }
    }
    total.clamp(0.0, 1.0)
}

/// Points where two Gaussian densities are equal.
fn gaussian_crossings(g1: Gaussian1D, g2: Gaussian1D) -> Vec<f64> {
    // log p1 = log p2  <=>  a x^2 + b x + c = 0
    let (m1, s1, m2, s2) = (g1.mean, g1.std, g2.mean, g2.std);
    let a = 1.0 / (2.0 * s2 * s2) - 1.0 / (2.0 * s1 * s1);
    let b = m1 / (s1 * s1) - m2 / (s2 * s2);
    let c = m2 * m2 / (2.0 * s2 * s2) - m1 * m1 / (2.0 * s1 * s1) + libm::log(s2 / s1);
    let mut out = Vec::new();
    if libm::fabs(a) < 1e-300 {
        if b != 0.0 {
            out.push(-c / b);
        }
        return out;
    }
    let disc = b * b - 4.0 * a * c;
    if disc >= 0.0 {
        let r = libm::sqrt(disc);
        out.push((-b - r) / (2.0 * a));
        out.push((-b + r) / (2.0 * a));
    }
    out
}

/// `KL(g1 || g2)` for 1D Gaussians.
pub fn kl_gauss1d(g1: Gaussian1D, g2: Gaussian1D) -> f64 {
    let d = g1.mean - g2.mean;
    libm::log(g2.std / g1.std) + (g1.std * g1.std + d * d) / (2.0 * g2.std * g2.std) - 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::Grid;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn n01() -> TargetDensity {
        TargetDensity::gauss1d(0.0, 1.0).unwrap()
    }

    #[test]
    fn sample_edge_cases() {
        let s = sample(&n01(), 0, 3);
        assert!(s.is_empty());
        assert_eq!(s.seed(), 3);
        assert_eq!(sample(&n01(), 500, 9), sample(&n01(), 500, 9));
        assert_ne!(sample(&n01(), 500, 9), sample(&n01(), 500, 10));
    }

    #[test]
    fn sample_moments() {
        // 3 sigma/sqrt(n) at n = 1e5 is ~0.0095 for the mean and ~0.0067 for the std
        let s = sample(&n01(), 100_000, 7);
        let m = s.mean()[0];
        let sd = libm::sqrt(s.variance()[0]);
        assert!(m.abs() < 0.02, "mean {m}");
        assert!((sd - 1.0).abs() < 0.02, "std {sd}");

        let mix = TargetDensity::mixture1d(alloc::vec![
            MixtureComponent { weight: 0.5, mean: -2.0, std: 1.0 },
            MixtureComponent { weight: 0.5, mean: 2.0, std: 1.0 },
        ])
        .unwrap();
        // mixture variance 5, so 3 sqrt(5/n) ~ 0.021
        let s = sample(&mix, 100_000, 7);
        assert!(s.mean()[0].abs() < 0.03);
        assert_abs_diff_eq!(mix.moments().1[0], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn pdf_values() {
        assert_abs_diff_eq!(n01().pdf(&[0.0]).unwrap(), 0.398_942_280_4, epsilon = 1e-10);
        assert!(n01().pdf(&[40.0]).unwrap() < 1e-300);
        let single = TargetDensity::mixture1d(alloc::vec![MixtureComponent { weight: 1.0, mean: 0.0, std: 1.0 }]).unwrap();
        assert_eq!(single.pdf(&[0.0]).unwrap(), n01().pdf(&[0.0]).unwrap());
        assert_eq!(n01().pdf(&[0.0, 1.0]), Err(Error::DimensionMismatch { expected: 1, found: 2 }));
    }

    #[test]
    fn invalid_targets_rejected() {
        assert!(TargetDensity::gauss1d(0.0, 0.0).is_err());
        assert!(TargetDensity::gauss2d([0.0, 0.0], [1.0, -1.0]).is_err());
        assert!(TargetDensity::mixture1d(alloc::vec![MixtureComponent { weight: 0.7, mean: 0.0, std: 1.0 }]).is_err());
        assert!(TargetDensity::mixture1d(alloc::vec![]).is_err());
    }

    #[test]
    fn densities_integrate_to_one() {
        let targets = [
            n01(),
            TargetDensity::gauss1d(3.0, 0.2).unwrap(),
            TargetDensity::mixture1d(alloc::vec![
                MixtureComponent { weight: 0.3, mean: -2.0, std: 0.5 },
                MixtureComponent { weight: 0.7, mean: 1.0, std: 2.0 },
            ])
            .unwrap(),
            TargetDensity::gauss2d([0.5, -1.0], [1.0, 0.25]).unwrap(),
        ];
        for t in &targets {
            let intervals = if t.dim() == 1 { 4096 } else { 256 };
            let grid = Grid::new(t.support_hint(), intervals).unwrap();
            let mass = grid.trapezoid(&t.density_on_grid(&grid));
            assert!((mass - 1.0).abs() < 1e-6, "{t:?}: {mass}");
        }
    }

    #[test]
    fn analytic_tv_examples() {
        let g = |m, s| Gaussian1D::new(m, s).unwrap();
        assert_eq!(analytic_tv_gauss1d(g(0.0, 1.0), g(0.0, 1.0)), 0.0);
        assert_abs_diff_eq!(analytic_tv_gauss1d(g(0.0, 1.0), g(1.0, 1.0)), 0.382_924_9, epsilon = 1e-7);
        assert_abs_diff_eq!(analytic_tv_gauss1d(g(0.0, 1.0), g(100.0, 1.0)), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unequal_std_tv_matches_cdf_oracle() {
        // with crossings r1 < r2 and p1 narrower, TV = sum of |dCDF| over the pieces
        let g1 = Gaussian1D::new(0.3, 0.7).unwrap();
        let g2 = Gaussian1D::new(-0.5, 1.6).unwrap();
        let cr = gaussian_crossings(g1, g2);
        let cdf_diff = |x: f64| g1.cdf(x) - g2.cdf(x);
        let oracle = 0.5
            * (libm::fabs(cdf_diff(cr[0]))
                + libm::fabs(cdf_diff(cr[1]) - cdf_diff(cr[0]))
                + libm::fabs(cdf_diff(cr[1])));
        assert_abs_diff_eq!(analytic_tv_gauss1d(g1, g2), oracle, epsilon = 1e-8);
    }

    #[test]
    fn kl_examples() {
        let g = |m, s| Gaussian1D::new(m, s).unwrap();
        assert_eq!(kl_gauss1d(g(0.0, 1.0), g(0.0, 1.0)), 0.0);
        assert_abs_diff_eq!(kl_gauss1d(g(0.5, 1.0), g(0.0, 1.0)), 0.125, epsilon = 1e-15);
        assert_abs_diff_eq!(kl_gauss1d(g(0.0, 2.0), g(0.0, 1.0)), 1.5 - core::f64::consts::LN_2, epsilon = 1e-15);
    }

    fn gauss() -> impl Strategy<Value = Gaussian1D> {
        (-3.0..3.0f64, 0.2..3.0f64).prop_map(|(m, s)| Gaussian1D { mean: m, std: s })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn tv_symmetric_bounded_and_pinsker(a in gauss(), b in gauss()) {
            let ab = analytic_tv_gauss1d(a, b);
            let ba = analytic_tv_gauss1d(b, a);
            prop_assert!((ab - ba).abs() < 1e-8);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!(ab <= libm::sqrt(kl_gauss1d(a, b) / 2.0) + 1e-9);
            prop_assert!(analytic_tv_gauss1d(a, a) == 0.0);
        }
    }
}
