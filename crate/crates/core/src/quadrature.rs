//! Deterministic quadrature on boxes of dimension 1 or 2.
//!
//! Grids are uniform with an even number of intervals per axis so the coarse
//! grid (every other node) can be integrated from the same evaluations; the
//! difference between the two trapezoid sums is the reported tolerance.

use alloc::vec::Vec;

use crate::{Error, Result};

/// Axis-aligned integration region, one `(lo, hi)` pair per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportBox {
    bounds: Vec<(f64, f64)>,
}

impl SupportBox {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::invalid("support box needs at least one axis"));
        }
        for &(lo, hi) in &bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid("support box axis must satisfy lo < hi"));
            }
        }
        Ok(Self { bounds })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(alloc::vec![(lo, hi)])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn axis(&self, k: usize) -> (f64, f64) {
        self.bounds[k]
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &SupportBox) -> Result<SupportBox> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), found: other.dim() });
        }
        let bounds = self
            .bounds
            .iter()
            .zip(&other.bounds)
            .map(|(&(a0, a1), &(b0, b1))| (a0.min(b0), a1.max(b1)))
            .collect();
        Ok(SupportBox { bounds })
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.bounds).all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }
}

/// Uniform tensor grid over a [`SupportBox`].
#[derive(Debug, Clone)]
pub struct Grid {
    axes: Vec<Vec<f64>>,
    spacing: Vec<f64>,
    intervals: usize,
}

impl Grid {
    /// `intervals` per axis; must be even and at least 2.
    pub fn new(region: &SupportBox, intervals: usize) -> Result<Self> {
        if region.dim() > 2 {
            return Err(Error::UnsupportedDimension(region.dim()));
        }
        if intervals < 2 || !intervals.is_multiple_of(2) {
            return Err(Error::invalid("grid intervals must be even and >= 2"));
        }
        let mut axes = Vec::with_capacity(region.dim());
        let mut spacing = Vec::with_capacity(region.dim());
        for &(lo, hi) in region.bounds() {
            let h = (hi - lo) / intervals as f64;
            axes.push((0..=intervals).map(|k| lo + k as f64 * h).collect());
            spacing.push(h);
        }
        Ok(Self { axes, spacing, intervals })
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, k: usize) -> &[f64] {
        &self.axes[k]
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(Vec::len).product()
    }

    /// Row-major node coordinates (last axis fastest), flattened.
    pub fn nodes(&self) -> Vec<f64> {
        match self.dim() {
            1 => self.axes[0].clone(),
            _ => {
                let mut out = Vec::with_capacity(2 * self.node_count());
                for &x in &self.axes[0] {
                    for &y in &self.axes[1] {
                        out.push(x);
                        out.push(y);
                    }
                }
                out
            }
        }
    }

    /// Trapezoid sums of `values` (row-major over the nodes) on the fine grid
    /// and on the every-other-node coarse grid.
    pub fn trapezoid_pair(&self, values: &[f64]) -> (f64, f64) {
        debug_assert_eq!(values.len(), self.node_count());
        let n = self.intervals;
        let w = |k: usize, step: usize| -> f64 {
            if !k.is_multiple_of(step) {
                0.0
            } else if k == 0 || k == n {
                0.5
            } else {
                1.0
            }
        };
        let mut fine = Vec::with_capacity(values.len());
        let mut coarse = Vec::with_capacity(values.len() / 2 + 1);
        match self.dim() {
            1 => {
                for (k, &v) in values.iter().enumerate() {
                    fine.push(w(k, 1) * v);
                    let wc = w(k, 2);
                    if wc != 0.0 {
                        coarse.push(wc * v);
                    }
                }
                let h = self.spacing[0];
                (pairwise_sum(&fine) * h, pairwise_sum(&coarse) * 2.0 * h)
            }
            _ => {
                let m = n + 1;
                for (idx, &v) in values.iter().enumerate() {
                    let (a, b) = (idx / m, idx % m);
                    fine.push(w(a, 1) * w(b, 1) * v);
                    let wc = w(a, 2) * w(b, 2);
                    if wc != 0.0 {
                        coarse.push(wc * v);
                    }
                }
                let area = self.spacing[0] * self.spacing[1];
                (pairwise_sum(&fine) * area, pairwise_sum(&coarse) * 4.0 * area)
            }
        }
    }

    pub fn trapezoid(&self, values: &[f64]) -> f64 {
        self.trapezoid_pair(values).0
    }
}

/// Pairwise (cascade) summation; fixed reduction order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || libm::fabs(delta) <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// Composite Simpson rule with `intervals` (even) panels.
pub fn composite_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let terms: Vec<f64> = (0..=n)
        .map(|k| {
            let c = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * f(a + k as f64 * h)
        })
        .collect();
    pairwise_sum(&terms) * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::std_normal_pdf;
    use approx::assert_abs_diff_eq;

    #[test]
    fn trapezoid_integrates_gaussian() {
        let region = SupportBox::interval(-10.0, 10.0).unwrap();
        let grid = Grid::new(&region, 1024).unwrap();
        let vals: Vec<f64> = grid.nodes().iter().map(|&x| std_normal_pdf(x)).collect();
        let (fine, coarse) = grid.trapezoid_pair(&vals);
        assert_abs_diff_eq!(fine, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(coarse, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn trapezoid_2d_product() {
        let region = SupportBox::new(alloc::vec![(-8.0, 8.0), (-8.0, 8.0)]).unwrap();
        let grid = Grid::new(&region, 128).unwrap();
        let nodes = grid.nodes();
        let vals: Vec<f64> =
            nodes.chunks(2).map(|p| std_normal_pdf(p[0]) * std_normal_pdf(p[1])).collect();
        assert_abs_diff_eq!(grid.trapezoid(&vals), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn odd_or_tiny_grids_rejected() {
        let region = SupportBox::interval(0.0, 1.0).unwrap();
        assert!(Grid::new(&region, 3).is_err());
        assert!(Grid::new(&region, 0).is_err());
        let cube = SupportBox::new(alloc::vec![(0.0, 1.0); 3]).unwrap();
        assert_eq!(Grid::new(&cube, 4).unwrap_err(), Error::UnsupportedDimension(3));
    }

    #[test]
    fn simpson_rules() {
        let f = |x: f64| x * x * x * x;
        assert_abs_diff_eq!(adaptive_simpson(&f, -1.0, 1.0, 1e-12), 0.4, epsilon = 1e-11);
        assert_abs_diff_eq!(composite_simpson(f, -1.0, 1.0, 2048), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..1000).map(|k| k as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499_500.0);
    }
}
