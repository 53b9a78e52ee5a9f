//! TV and KL estimators: grid quadrature for pdf-evaluable pairs, binned
//! frequencies for sample pairs.

use alloc::vec::Vec;

use crate::distributions::{Density, Gaussian1D, SampleSet, SupportBox};
use crate::quadrature::{pairwise_sum, Grid};
use crate::{Error, Result};

/// Fewest quadrature intervals per axis accepted by the grid estimators.
pub const MIN_QUADRATURE_INTERVALS: usize = 1 << 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TvMethod {
    Quadrature,
    Histogram,
    Analytic,
}

impl TvMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            TvMethod::Quadrature => "quadrature",
            TvMethod::Histogram => "histogram",
            TvMethod::Analytic => "analytic",
        }
    }
}

/// A TV value clamped to `[0, 1]`; `unclamped` keeps the raw estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TVEstimate {
    pub value: f64,
    pub method: TvMethod,
    pub tolerance: f64,
    pub unclamped: f64,
}

// keeps every recorded tolerance strictly positive
const TOL_FLOOR: f64 = 1e-15;

impl TVEstimate {
    fn new(raw: f64, method: TvMethod, tolerance: f64) -> Self {
        Self { value: raw.clamp(0.0, 1.0), method, tolerance: tolerance.max(TOL_FLOOR), unclamped: raw }
    }

    pub fn analytic_gauss1d(a: Gaussian1D, b: Gaussian1D) -> Self {
        Self::new(crate::distributions::analytic_tv_gauss1d(a, b), TvMethod::Analytic, TOL_FLOOR)
    }
}

fn quadrature_grid(a: &dyn Density, b: &dyn Density, region: &SupportBox, intervals: usize) -> Result<Grid> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    if region.dim() != a.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: region.dim() });
    }
    if a.dim() > 2 {
        return Err(Error::UnsupportedDimension(a.dim()));
    }
    if intervals < MIN_QUADRATURE_INTERVALS {
        return Err(Error::invalid(alloc::format!(
            "quadrature needs at least {MIN_QUADRATURE_INTERVALS} intervals per axis, got {intervals}"
        )));
    }
    Grid::new(region, intervals)
}

/// `(1/2) int |a - b|` by the trapezoid rule on `region`.
///
/// The tolerance is the gap between the fine grid and the every-other-node
/// grid. Signed densities are fine: only `|a - b|` enters.
pub fn tv_quadrature(a: &dyn Density, b: &dyn Density, region: &SupportBox, intervals: usize) -> Result<TVEstimate> {
    let grid = quadrature_grid(a, b, region, intervals)?;
    let va = a.density_on_grid(&grid);
    let vb = b.density_on_grid(&grid);
    let half_abs: Vec<f64> = va.iter().zip(&vb).map(|(x, y)| 0.5 * libm::fabs(x - y)).collect();
    let (fine, coarse) = grid.trapezoid_pair(&half_abs);
    Ok(TVEstimate::new(fine, TvMethod::Quadrature, libm::fabs(fine - coarse)))
}

/// `int a ln(a / b)` by the trapezoid rule. Nodes with `a = 0` contribute 0;
/// any node with `a > 0 = b` makes the result `+inf`.
pub fn kl_quadrature(a: &dyn Density, b: &dyn Density, region: &SupportBox, intervals: usize) -> Result<f64> {
    let grid = quadrature_grid(a, b, region, intervals)?;
    let va = a.density_on_grid(&grid);
    let vb = b.density_on_grid(&grid);
    let mut terms = Vec::with_capacity(va.len());
    for (&p, &q) in va.iter().zip(&vb) {
        if p <= 0.0 {
            terms.push(0.0);
        } else if q <= 0.0 {
            return Ok(f64::INFINITY);
        } else {
            terms.push(p * libm::log(p / q));
        }
    }
    Ok(grid.trapezoid(&terms))
}

/// Cube-root rule: `ceil(min(n_a, n_b)^(1/3))` bins per axis.
pub fn default_bins(n_a: usize, n_b: usize) -> usize {
    let n = n_a.min(n_b) as f64;
    let b = libm::ceil(libm::cbrt(n)) as usize;
    // cbrt of a perfect cube may land one ulp high
    let b = if b > 1 && { let c = (b - 1) as f64; c * c * c >= n } { b - 1 } else { b };
    b.max(2)
}

/// Smallest axis-aligned box holding both sets.
pub fn bounding_box(a: &SampleSet, b: &SampleSet) -> Result<SupportBox> {
    let d = a.dim();
    let mut bounds = alloc::vec![(f64::INFINITY, f64::NEG_INFINITY); d];
    for p in a.iter().chain(b.iter()) {
        for (k, &v) in p.iter().enumerate() {
            bounds[k].0 = bounds[k].0.min(v);
            bounds[k].1 = bounds[k].1.max(v);
        }
    }
    for bd in &mut bounds {
        if bd.1 <= bd.0 {
            let pad = 0.5 * libm::fabs(bd.0).max(1.0);
            *bd = (bd.0 - pad, bd.1 + pad);
        }
    }
    SupportBox::new(bounds)
}

/// `(1/2) sum_bins |freq_a - freq_b|` on a regular grid over `region`
/// (default: the joint bounding box), with one extra bin collecting every
/// point outside the box.
///
/// The tolerance is the expected value of the statistic when both sets come
/// from the same distribution: `(1/2) sum_b sqrt(2/pi) sqrt(p_b (1 - p_b) (1/n_a + 1/n_b))`
/// with `p_b` the pooled bin frequency.
pub fn tv_histogram(
    a: &SampleSet,
    b: &SampleSet,
    bins: Option<usize>,
    region: Option<&SupportBox>,
) -> Result<TVEstimate> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch { expected: a.dim(), found: b.dim() });
    }
    let d = a.dim();
    if d > 2 {
        return Err(Error::UnsupportedDimension(d));
    }
    let bins = bins.unwrap_or_else(|| default_bins(a.len(), b.len()));
    if bins < 2 {
        return Err(Error::invalid("histogram needs at least 2 bins per axis"));
    }
    let owned;
    let region = match region {
        Some(r) => {
            if r.dim() != d {
                return Err(Error::DimensionMismatch { expected: d, found: r.dim() });
            }
            r
        }
        None => {
            owned = bounding_box(a, b)?;
            &owned
        }
    };
    let cells = bins.pow(d as u32);
    let overflow = cells;
    let index = |p: &[f64]| -> usize {
        let mut idx = 0usize;
        for (k, &v) in p.iter().enumerate() {
            let (lo, hi) = region.axis(k);
            if !(v >= lo && v <= hi) {
                return overflow;
            }
            let c = (((v - lo) / (hi - lo)) * bins as f64) as usize;
            idx = idx * bins + c.min(bins - 1);
        }
        idx
    };
    let mut ca = alloc::vec![0u64; cells + 1];
    let mut cb = alloc::vec![0u64; cells + 1];
    for p in a.iter() {
        ca[index(p)] += 1;
    }
    for p in b.iter() {
        cb[index(p)] += 1;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let diffs: Vec<f64> = ca.iter().zip(&cb).map(|(&x, &y)| libm::fabs(x as f64 / na - y as f64 / nb)).collect();
    let scale = libm::sqrt(2.0 / core::f64::consts::PI) * libm::sqrt(1.0 / na + 1.0 / nb);
    let noise: Vec<f64> = ca
        .iter()
        .zip(&cb)
        .map(|(&x, &y)| {
            let p = (x + y) as f64 / (na + nb);
            libm::sqrt(p * (1.0 - p)) * scale
        })
        .collect();
    Ok(TVEstimate::new(0.5 * pairwise_sum(&diffs), TvMethod::Histogram, 0.5 * pairwise_sum(&noise)))
}
