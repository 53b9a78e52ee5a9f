//! Toy score-based diffusion on the unit-rate OU process.
//!
//! Forward SDE `dx = -x/2 dt + dW` on `[0, T]` with prior `N(0, I)`, so
//! `x_t | x_0 ~ N(x_0 e^{-t/2}, (1 - e^{-t}) I)`. The score is a random-feature
//! network `s(x, t) = (1/m) A relu(W x + U e(t))`; only `A` is trained, by
//! full-batch gradient descent on the denoising score-matching loss with
//! weight `lambda(t) = g(t)^2 = 1`, which is a convex quadratic in `A`.
//! Sampling runs Euler-Maruyama on the reverse SDE from `T` down to `t_min`.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::distributions::{SampleSet, Sampler};
use crate::rng::{derive_seed, seeded, standard_normal, uniform01, SimRng};
use crate::special::TAU;
use crate::stats::median;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusionConfig {
    pub horizon: f64,
    /// Lower end of the time range for training and sampling.
    pub t_min: f64,
    pub reverse_steps: usize,
    pub embed_dim: usize,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self { horizon: 3.0, t_min: 1e-3, reverse_steps: 500, embed_dim: 8 }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("diffusion horizon T must be > 0"));
        }
        if !(self.t_min > 0.0 && self.t_min < self.horizon) {
            return Err(Error::invalid("t_min must lie in (0, T)"));
        }
        if self.reverse_steps < 10 {
            return Err(Error::invalid("reverse_steps must be >= 10"));
        }
        if self.embed_dim < 2 || !self.embed_dim.is_multiple_of(2) {
            return Err(Error::invalid("time embedding dimension must be even and >= 2"));
        }
        Ok(())
    }

    /// `(sin(2 pi k t/T), cos(2 pi k t/T))` for `k = 1..=embed_dim/2`, sines first.
    pub fn embed(&self, t: f64, out: &mut [f64]) {
        let half = self.embed_dim / 2;
        for k in 0..half {
            let a = TAU * (k + 1) as f64 * t / self.horizon;
            out[k] = libm::sin(a);
            out[half + k] = libm::cos(a);
        }
    }

    /// Reverse-time grid `T, T - dt, ..., t_min + dt`; step `k` integrates
    /// from `times[k]` to `times[k] - dt`.
    pub fn reverse_times(&self) -> (Vec<f64>, f64) {
        let dt = (self.horizon - self.t_min) / self.reverse_steps as f64;
        ((0..self.reverse_steps).map(|k| self.horizon - k as f64 * dt).collect(), dt)
    }
}

/// OU conditional mean factor `e^{-t/2}` and variance `1 - e^{-t}`.
pub fn ou_kernel(t: f64) -> (f64, f64) {
    (libm::exp(-0.5 * t), -libm::expm1(-t))
}

/// Anything that supplies `s(x, t)`.
pub trait ScoreModel {
    fn dim(&self) -> usize;

    fn score(&self, x: &[f64], t: f64, out: &mut [f64]);

    /// Score on a fixed time grid; models may precompute per-time tables.
    fn on_grid<'a>(&'a self, times: &[f64]) -> Box<dyn GridScore + 'a> {
        Box::new(Pointwise { model: self, times: times.to_vec() })
    }
}

/// Score restricted to the time grid it was prepared for.
pub trait GridScore {
    fn score_at(&self, step: usize, x: &[f64], out: &mut [f64]);
}

struct Pointwise<'a, M: ?Sized> {
    model: &'a M,
    times: Vec<f64>,
}

impl<M: ScoreModel + ?Sized> GridScore for Pointwise<'_, M> {
    fn score_at(&self, step: usize, x: &[f64], out: &mut [f64]) {
        self.model.score(x, self.times[step], out)
    }
}

/// Random-feature score network. `a` is `d x m`, `w` is `m x d`, `u` is
/// `m x d_e`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreNet {
    dim: usize,
    width: usize,
    cfg: DiffusionConfig,
    a: Vec<f64>,
    w: Vec<f64>,
    u: Vec<f64>,
}

/// Fresh network with `A = 0` and rows `(w_j | u_j)` drawn uniformly from the
/// unit ball of `R^{d + d_e}`, then scaled so `|w_j| + |u_j| <= 1`.
pub fn init_scorenet(width: usize, dim: usize, cfg: &DiffusionConfig, seed: u64) -> Result<ScoreNet> {
    cfg.validate()?;
    if width == 0 {
        return Err(Error::invalid("network width m must be >= 1"));
    }
    if !(1..=2).contains(&dim) {
        return Err(Error::UnsupportedDimension(dim));
    }
    let de = cfg.embed_dim;
    let total = dim + de;
    let mut rng = seeded(seed);
    let mut w = Vec::with_capacity(width * dim);
    let mut u = Vec::with_capacity(width * de);
    let mut row = alloc::vec![0.0; total];
    for _ in 0..width {
        let mut norm = 0.0;
        while norm == 0.0 {
            for v in row.iter_mut() {
                *v = standard_normal(&mut rng);
            }
            norm = libm::sqrt(row.iter().map(|v| v * v).sum());
        }
        let radius = libm::pow(uniform01(&mut rng), 1.0 / total as f64);
        for v in row.iter_mut() {
            *v *= radius / norm;
        }
        let nw = libm::sqrt(row[..dim].iter().map(|v| v * v).sum());
        let nu = libm::sqrt(row[dim..].iter().map(|v| v * v).sum());
        let scale = 1.0 / (nw + nu).max(1.0);
        w.extend(row[..dim].iter().map(|v| v * scale));
        u.extend(row[dim..].iter().map(|v| v * scale));
    }
    Ok(ScoreNet { dim, width, cfg: *cfg, a: alloc::vec![0.0; dim * width], w, u })
}

impl ScoreNet {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn config(&self) -> &DiffusionConfig {
        &self.cfg
    }

    pub fn output_weights(&self) -> &[f64] {
        &self.a
    }

    pub fn input_weights(&self) -> (&[f64], &[f64]) {
        (&self.w, &self.u)
    }

    /// Largest `|w_j| + |u_j|` over rows.
    pub fn max_row_norm(&self) -> f64 {
        let (d, de) = (self.dim, self.cfg.embed_dim);
        (0..self.width)
            .map(|j| {
                let nw = libm::sqrt(self.w[j * d..(j + 1) * d].iter().map(|v| v * v).sum());
                let nu = libm::sqrt(self.u[j * de..(j + 1) * de].iter().map(|v| v * v).sum());
                nw + nu
            })
            .fold(0.0, f64::max)
    }

    /// `|s|_H = sqrt((1/m) sum_j |a_j|^2)`.
    pub fn rkhs_norm(&self) -> f64 {
        libm::sqrt(self.a.iter().map(|v| v * v).sum::<f64>() / self.width as f64)
    }

    /// `u_j . e(t)` for every hidden unit.
    fn time_offsets(&self, t: f64) -> Vec<f64> {
        let de = self.cfg.embed_dim;
        let mut e = alloc::vec![0.0; de];
        self.cfg.embed(t, &mut e);
        self.u.chunks(de).map(|row| row.iter().zip(&e).map(|(a, b)| a * b).sum()).collect()
    }

    /// Hidden features `relu(w_j . x + c_j) / m` for one input.
    fn features(&self, x: &[f64], offsets: &[f64], out: &mut [f64]) {
        let inv_m = 1.0 / self.width as f64;
        let d = self.dim;
        for j in 0..self.width {
            let mut z = offsets[j];
            for c in 0..d {
                z += self.w[j * d + c] * x[c];
            }
            out[j] = if z > 0.0 { z * inv_m } else { 0.0 };
        }
    }
}

impl ScoreModel for ScoreNet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let offsets = self.time_offsets(t);
        let mut phi = alloc::vec![0.0; self.width];
        self.features(x, &offsets, &mut phi);
        for (c, o) in out.iter_mut().enumerate().take(self.dim) {
            *o = self.a[c * self.width..(c + 1) * self.width].iter().zip(&phi).map(|(a, p)| a * p).sum();
        }
    }

    fn on_grid<'a>(&'a self, times: &[f64]) -> Box<dyn GridScore + 'a> {
        Box::new(self.prepare(times))
    }
}

impl ScoreNet {
    /// Precomputed per-time tables; owns its data so it can outlive `self`.
    pub fn prepare(&self, times: &[f64]) -> PreparedNet {
        if self.dim == 1 {
            PreparedNet(Prepared::Line(times.iter().map(|&t| self.line_slice(t)).collect()))
        } else {
            PreparedNet(Prepared::Direct {
                net: self.clone(),
                offsets: times.iter().map(|&t| self.time_offsets(t)).collect(),
            })
        }
    }

    // In 1D, s(x) = sum_j (a_j/m) relu(w_j x + c_j) is piecewise linear with
    // kinks at -c_j / w_j; prefix sums over sorted kinks give O(log m) lookups.
    fn line_slice(&self, t: f64) -> LineSlice {
        let offsets = self.time_offsets(t);
        let inv_m = 1.0 / self.width as f64;
        let mut up = Vec::new();
        let mut down = Vec::new();
        let mut constant = 0.0;
        for j in 0..self.width {
            let (w, c, a) = (self.w[j], offsets[j], self.a[j] * inv_m);
            if w > 0.0 {
                up.push((-c / w, a * w, a * c));
            } else if w < 0.0 {
                down.push((-c / w, a * w, a * c));
            } else if c > 0.0 {
                constant += a * c;
            }
        }
        up.sort_by(|p, q| p.0.total_cmp(&q.0));
        down.sort_by(|p, q| p.0.total_cmp(&q.0));
        // up: active when x > kink, so take kinks below x (prefix)
        let mut up_sums = Vec::with_capacity(up.len() + 1);
        up_sums.push((0.0, 0.0));
        for &(_, s, i) in &up {
            let (ps, pi) = *up_sums.last().unwrap_or(&(0.0, 0.0));
            up_sums.push((ps + s, pi + i));
        }
        // down: active when x < kink, so take kinks above x (suffix)
        let mut down_sums = alloc::vec![(0.0, 0.0); down.len() + 1];
        for k in (0..down.len()).rev() {
            let (ns, ni) = down_sums[k + 1];
            down_sums[k] = (ns + down[k].1, ni + down[k].2);
        }
        LineSlice {
            up_kinks: up.iter().map(|p| p.0).collect(),
            up_sums,
            down_kinks: down.iter().map(|p| p.0).collect(),
            down_sums,
            constant,
        }
    }
}

#[derive(Debug, Clone)]
struct LineSlice {
    up_kinks: Vec<f64>,
    up_sums: Vec<(f64, f64)>,
    down_kinks: Vec<f64>,
    down_sums: Vec<(f64, f64)>,
    constant: f64,
}

impl LineSlice {
    fn eval(&self, x: f64) -> f64 {
        let k = self.up_kinks.partition_point(|&b| b < x);
        let (us, ui) = self.up_sums[k];
        let k = self.down_kinks.partition_point(|&b| b <= x);
        let (ds, di) = self.down_sums[k];
        (us + ds) * x + ui + di + self.constant
    }
}

/// A trained network frozen onto a reverse-time grid.
#[derive(Debug, Clone)]
pub struct PreparedNet(Prepared);

#[derive(Debug, Clone)]
enum Prepared {
    Line(Vec<LineSlice>),
    Direct { net: ScoreNet, offsets: Vec<Vec<f64>> },
}

impl GridScore for PreparedNet {
    fn score_at(&self, step: usize, x: &[f64], out: &mut [f64]) {
        match &self.0 {
            Prepared::Line(slices) => out[0] = slices[step].eval(x[0]),
            Prepared::Direct { net, offsets } => {
                let mut phi = alloc::vec![0.0; net.width];
                net.features(x, &offsets[step], &mut phi);
                for (c, o) in out.iter_mut().enumerate().take(net.dim) {
                    *o = net.a[c * net.width..(c + 1) * net.width].iter().zip(&phi).map(|(a, p)| a * p).sum();
                }
            }
        }
    }
}

/// Exact score of the OU marginal of `N(mu0, sigma0^2)` data at time `t`.
pub fn analytic_score_gauss(mu0: f64, sigma0: f64, t: f64, x: f64) -> f64 {
    let (mean, var) = marginal_moments(mu0, sigma0, t);
    -(x - mean) / var
}

/// `(mu_t, sigma_t^2) = (mu0 e^{-t/2}, sigma0^2 e^{-t} + 1 - e^{-t})`.
pub fn marginal_moments(mu0: f64, sigma0: f64, t: f64) -> (f64, f64) {
    let decay = libm::exp(-t);
    // sigma_t^2 - 1 = (sigma0^2 - 1) e^{-t}
    (mu0 * libm::exp(-0.5 * t), 1.0 + (sigma0 * sigma0 - 1.0) * decay)
}

/// Exact score for data with independent Gaussian coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticGaussScore {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl AnalyticGaussScore {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::DimensionMismatch { expected: mean.len(), found: std.len() });
        }
        if std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid("standard deviations must be > 0"));
        }
        Ok(Self { mean, std })
    }
}

impl ScoreModel for AnalyticGaussScore {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn score(&self, x: &[f64], t: f64, out: &mut [f64]) {
        for c in 0..self.mean.len() {
            out[c] = analytic_score_gauss(self.mean[c], self.std[c], t, x[c]);
        }
    }
}

/// `s = 0`: the reverse flow keeps only the drift and the noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZeroScore {
    pub dim: usize,
}

impl ScoreModel for ZeroScore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
}

/// Monte-Carlo DSM loss `E lambda(t) |s(x_t, t) - grad log p_{t|0}(x_t | x_0)|^2`
/// with `x_0` drawn uniformly from `data` and `t ~ U(t_min, T)`.
pub fn dsm_loss(model: &dyn ScoreModel, data: &SampleSet, cfg: &DiffusionConfig, batch: usize, seed: u64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    check_dim(model.dim(), data.dim())?;
    cfg.validate()?;
    let d = data.dim();
    let mut rng = seeded(seed);
    let mut xt = alloc::vec![0.0; d];
    let mut target = alloc::vec![0.0; d];
    let mut s = alloc::vec![0.0; d];
    let mut terms = Vec::with_capacity(batch);
    for _ in 0..batch {
        let x0 = data.point(uniform_index(&mut rng, data.len()));
        let t = draw_time(&mut rng, cfg);
        forward_pair(x0, t, &mut rng, &mut xt, &mut target);
        model.score(&xt, t, &mut s);
        terms.push(s.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum());
    }
    Ok(crate::quadrature::pairwise_sum(&terms) / batch.max(1) as f64)
}

/// Closed-form `E |grad log p_{t|0}|^2 = d E_t[1/(1 - e^{-t})]` for
/// `t ~ U(t_min, T)`: the DSM loss of the zero score, for any data.
pub fn zero_score_dsm_loss(cfg: &DiffusionConfig, dim: usize) -> f64 {
    // int dt / (1 - e^{-t}) = ln(e^t - 1)
    let prim = |t: f64| libm::log(libm::expm1(t));
    dim as f64 * (prim(cfg.horizon) - prim(cfg.t_min)) / (cfg.horizon - cfg.t_min)
}

/// Monte-Carlo `E |s(x_t, t) - s_ref(x_t, t)|^2` against a reference score
/// (the time-dependent, unconditional objective).
pub fn explicit_score_loss(
    model: &dyn ScoreModel,
    reference: &dyn ScoreModel,
    data: &SampleSet,
    cfg: &DiffusionConfig,
    batch: usize,
    seed: u64,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    check_dim(model.dim(), data.dim())?;
    check_dim(reference.dim(), data.dim())?;
    let d = data.dim();
    let mut rng = seeded(seed);
    let (mut xt, mut target, mut s, mut r) = (alloc::vec![0.0; d], alloc::vec![0.0; d], alloc::vec![0.0; d], alloc::vec![0.0; d]);
    let mut terms = Vec::with_capacity(batch);
    for _ in 0..batch {
        let x0 = data.point(uniform_index(&mut rng, data.len()));
        let t = draw_time(&mut rng, cfg);
        forward_pair(x0, t, &mut rng, &mut xt, &mut target);
        model.score(&xt, t, &mut s);
        reference.score(&xt, t, &mut r);
        terms.push(s.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum());
    }
    Ok(crate::quadrature::pairwise_sum(&terms) / batch.max(1) as f64)
}

fn check_dim(model: usize, data: usize) -> Result<()> {
    if model != data {
        return Err(Error::DimensionMismatch { expected: model, found: data });
    }
    Ok(())
}

fn uniform_index(rng: &mut SimRng, n: usize) -> usize {
    use rand::Rng;
    rng.random_range(0..n)
}

fn draw_time(rng: &mut SimRng, cfg: &DiffusionConfig) -> f64 {
    cfg.t_min + (cfg.horizon - cfg.t_min) * uniform01(rng)
}

// x_t = x_0 e^{-t/2} + sqrt(1 - e^{-t}) z and its conditional score -z / sqrt(1 - e^{-t})
fn forward_pair(x0: &[f64], t: f64, rng: &mut SimRng, xt: &mut [f64], target: &mut [f64]) {
    let (mean, var) = ou_kernel(t);
    let sd = libm::sqrt(var);
    for c in 0..x0.len() {
        let z = standard_normal(rng);
        xt[c] = x0[c] * mean + sd * z;
        target[c] = -z / sd;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LearningRate {
    /// `1 / lambda_max` of the loss Hessian, by power iteration.
    Stable,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub steps_run: usize,
    /// `losses[k]` is the empirical loss after `k` steps.
    pub losses: Vec<f64>,
    /// `rkhs_norms[k]` is `|s|_H` after `k` steps.
    pub rkhs_norms: Vec<f64>,
    pub learning_rate: f64,
    /// Power-iteration estimate of the Hessian's top eigenvalue.
    pub lambda_max: f64,
    /// Stopped at the step budget with a non-negligible gradient.
    pub early_stopped: bool,
}

impl TrainReport {
    /// Final `|s|_H^2 = (1/m) sum_j |a_j|^2`.
    pub fn rkhs_norm_sq(&self) -> f64 {
        self.rkhs_norms.last().map_or(0.0, |v| v * v)
    }
}

const DIVERGENCE_FACTOR: f64 = 10.0;
const DIVERGENCE_RUN: usize = 10;
const POWER_ITERS: usize = 500;

/// Full-batch gradient descent on `A` for `steps` steps.
///
/// The empirical loss uses one `(t, z)` draw per data point:
/// `L(A) = (1/N) sum_n |A phi_n - y_n|^2`, whose Hessian (per output
/// coordinate) is `H = (2/N) Phi^T Phi`. `W` and `U` are never touched.
pub fn train(
    net: &mut ScoreNet,
    data: &SampleSet,
    lr: LearningRate,
    steps: usize,
    seed: u64,
) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    check_dim(net.dim, data.dim())?;
    let (n, m, d) = (data.len(), net.width, net.dim);
    let cfg = net.cfg;

    let mut rng = seeded(seed);
    let mut phi = alloc::vec![0.0; n * m];
    let mut y = alloc::vec![0.0; n * d];
    let mut xt = alloc::vec![0.0; d];
    for (k, x0) in data.iter().enumerate() {
        let t = draw_time(&mut rng, &cfg);
        forward_pair(x0, t, &mut rng, &mut xt, &mut y[k * d..(k + 1) * d]);
        let offsets = net.time_offsets(t);
        net.features(&xt, &offsets, &mut phi[k * m..(k + 1) * m]);
    }

    let lambda_max = top_eigenvalue(&phi, n, m);
    let eta = match lr {
        LearningRate::Stable => {
            if !(lambda_max > 0.0) {
                return Err(Error::invalid("feature matrix is zero; no stable step size"));
            }
            1.0 / lambda_max
        }
        LearningRate::Fixed(v) if v > 0.0 && v.is_finite() => v,
        LearningRate::Fixed(v) => return Err(Error::invalid(alloc::format!("learning rate {v} must be > 0"))),
    };

    let mut resid = alloc::vec![0.0; n * d];
    let mut grad = alloc::vec![0.0; d * m];
    let mut loss = residuals(net, &phi, &y, &mut resid);
    let initial = loss;
    let mut losses = alloc::vec![loss];
    let mut norms = alloc::vec![net.rkhs_norm()];
    let mut over = 0usize;
    let mut grad_norm = 0.0;
    for step in 1..=steps {
        // grad_c = (2/N) Phi^T r_c
        grad.iter_mut().for_each(|g| *g = 0.0);
        for k in 0..n {
            let row = &phi[k * m..(k + 1) * m];
            for c in 0..d {
                let r = resid[k * d + c];
                if r != 0.0 {
                    let g = &mut grad[c * m..(c + 1) * m];
                    for (gj, pj) in g.iter_mut().zip(row) {
                        *gj += r * pj;
                    }
                }
            }
        }
        let scale = 2.0 / n as f64;
        grad_norm = 0.0;
        for (aj, gj) in net.a.iter_mut().zip(&grad) {
            let g = gj * scale;
            grad_norm += g * g;
            *aj -= eta * g;
        }
        loss = residuals(net, &phi, &y, &mut resid);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { step, loss, initial });
        }
        over = if loss > DIVERGENCE_FACTOR * initial { over + 1 } else { 0 };
        if over >= DIVERGENCE_RUN {
            return Err(Error::TrainingDiverged { step, loss, initial });
        }
        losses.push(loss);
        norms.push(net.rkhs_norm());
    }
    let early_stopped = steps > 0 && libm::sqrt(grad_norm) > 1e-8 * initial.max(1e-300);
    Ok(TrainReport { steps_run: steps, losses, rkhs_norms: norms, learning_rate: eta, lambda_max, early_stopped })
}

// r = Phi A^T - Y, returns mean squared residual summed over coordinates
fn residuals(net: &ScoreNet, phi: &[f64], y: &[f64], resid: &mut [f64]) -> f64 {
    let (m, d) = (net.width, net.dim);
    let n = y.len() / d;
    let mut terms = Vec::with_capacity(n);
    for k in 0..n {
        let row = &phi[k * m..(k + 1) * m];
        let mut sq = 0.0;
        for c in 0..d {
            let a = &net.a[c * m..(c + 1) * m];
            let pred: f64 = a.iter().zip(row).map(|(x, p)| x * p).sum();
            let r = pred - y[k * d + c];
            resid[k * d + c] = r;
            sq += r * r;
        }
        terms.push(sq);
    }
    crate::quadrature::pairwise_sum(&terms) / n as f64
}

/// Rayleigh-quotient power iteration for the top eigenvalue of `(2/N) Phi^T Phi`.
fn top_eigenvalue(phi: &[f64], n: usize, m: usize) -> f64 {
    let mut v = alloc::vec![1.0 / libm::sqrt(m as f64); m];
    let mut pv = alloc::vec![0.0; n];
    let mut w = alloc::vec![0.0; m];
    let mut estimate = 0.0;
    for _ in 0..POWER_ITERS {
        for k in 0..n {
            pv[k] = phi[k * m..(k + 1) * m].iter().zip(&v).map(|(p, x)| p * x).sum();
        }
        w.iter_mut().for_each(|x| *x = 0.0);
        for k in 0..n {
            let r = pv[k];
            if r != 0.0 {
                for (wj, pj) in w.iter_mut().zip(&phi[k * m..(k + 1) * m]) {
                    *wj += r * pj;
                }
            }
        }
        // v has unit norm, so v . w is the Rayleigh quotient of Phi^T Phi
        let rq: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let norm = libm::sqrt(w.iter().map(|x| x * x).sum());
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().zip(&w).for_each(|(a, b)| *a = b / norm);
        let done = (rq - estimate).abs() <= 1e-13 * rq;
        estimate = rq;
        if done {
            break;
        }
    }
    2.0 * estimate / n as f64
}

/// `tau = ceil(c sqrt(n))` gradient steps.
pub fn default_steps(n: usize, c: f64) -> usize {
    libm::ceil(c * libm::sqrt(n as f64)) as usize
}

/// `n` reverse-SDE samples. Trajectory `k` draws its start point and noise
/// from its own stream `derive_seed(seed, k)`.
pub fn reverse_sample(model: &dyn ScoreModel, cfg: &DiffusionConfig, n: usize, seed: u64) -> Result<SampleSet> {
    cfg.validate()?;
    let d = model.dim();
    let (times, dt) = cfg.reverse_times();
    let grid = model.on_grid(&times);
    let mut out = Vec::with_capacity(n * d);
    let mut x = alloc::vec![0.0; d];
    for k in 0..n {
        let mut rng = seeded(derive_seed(seed, k as u64));
        trajectory(grid.as_ref(), d, dt, times.len(), &mut rng, &mut x)?;
        out.extend_from_slice(&x);
    }
    SampleSet::new(d, out, seed)
}

// x <- x + (x/2 + s(x, t)) dt + sqrt(dt) z, from x(T) ~ N(0, I)
fn trajectory(grid: &dyn GridScore, d: usize, dt: f64, steps: usize, rng: &mut SimRng, x: &mut [f64]) -> Result<()> {
    let sq = libm::sqrt(dt);
    let mut s = [0.0; 2];
    for v in x.iter_mut() {
        *v = standard_normal(rng);
    }
    for step in 0..steps {
        grid.score_at(step, x, &mut s[..d]);
        for c in 0..d {
            x[c] += (0.5 * x[c] + s[c]) * dt + sq * standard_normal(rng);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step });
        }
    }
    Ok(())
}

/// Exact variance after the zero-score Euler-Maruyama recursion
/// `V <- (1 + dt/2)^2 V + dt` from `V = 1`.
pub fn zero_score_variance_discrete(cfg: &DiffusionConfig) -> f64 {
    let (_, dt) = cfg.reverse_times();
    let a = (1.0 + 0.5 * dt) * (1.0 + 0.5 * dt);
    let ak = libm::pow(a, cfg.reverse_steps as f64);
    ak + dt * (ak - 1.0) / (a - 1.0)
}

/// Continuous-time limit `2 e^{T - t_min} - 1` of the same recursion.
pub fn zero_score_variance(cfg: &DiffusionConfig) -> f64 {
    2.0 * libm::exp(cfg.horizon - cfg.t_min) - 1.0
}

/// `KL(N(mu_T, sigma_T^2) || N(0, 1))` for `N(mu0, sigma0^2)` data pushed
/// through the forward process to the horizon.
pub fn prior_kl_gauss(mu0: f64, sigma0: f64, horizon: f64) -> f64 {
    let decay = libm::exp(-horizon);
    // with v = sigma_T^2 - 1 = (sigma0^2 - 1) e^{-T}: KL = (v - ln(1 + v) + mu_T^2) / 2
    let v = (sigma0 * sigma0 - 1.0) * decay;
    0.5 * (v - libm::log1p(v) + mu0 * mu0 * decay)
}

/// Sum of [`prior_kl_gauss`] over independent coordinates.
pub fn prior_kl_moments(mean: &[f64], var: &[f64], horizon: f64) -> f64 {
    mean.iter().zip(var).map(|(&m, &v)| prior_kl_gauss(m, libm::sqrt(v.max(0.0)), horizon)).sum()
}

/// `sqrt(sum (s - s*)^2 / sum s*^2)` over `x` in `[-3, 3]` (61 points) and
/// `t` in `[0.1, T]` (30 points), against the exact score of `N(mu0, sigma0^2)`.
pub fn relative_score_error(model: &dyn ScoreModel, mu0: f64, sigma0: f64, cfg: &DiffusionConfig) -> Result<f64> {
    if model.dim() != 1 {
        return Err(Error::UnsupportedDimension(model.dim()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    let mut s = [0.0];
    for it in 0..30 {
        let t = 0.1 + (cfg.horizon - 0.1) * it as f64 / 29.0;
        for ix in 0..61 {
            let x = -3.0 + 0.1 * ix as f64;
            model.score(&[x], t, &mut s);
            let truth = analytic_score_gauss(mu0, sigma0, t, x);
            num += (s[0] - truth) * (s[0] - truth);
            den += truth * truth;
        }
    }
    Ok(libm::sqrt(num / den))
}

/// A trained network used as a generator.
#[derive(Debug, Clone)]
pub struct DiffusionGenerator {
    net: ScoreNet,
    prepared: PreparedNet,
    dt: f64,
    steps: usize,
    pub report: TrainReport,
}

impl DiffusionGenerator {
    pub fn new(net: ScoreNet, report: TrainReport) -> Self {
        let (times, dt) = net.cfg.reverse_times();
        let prepared = net.prepare(&times);
        Self { steps: times.len(), net, prepared, dt, report }
    }

    pub fn net(&self) -> &ScoreNet {
        &self.net
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        let d = self.net.dim;
        let mut out = Vec::with_capacity(n * d);
        let mut x = alloc::vec![0.0; d];
        for k in 0..n {
            let mut rng = seeded(derive_seed(seed, k as u64));
            trajectory(&self.prepared, d, self.dt, self.steps, &mut rng, &mut x)?;
            out.extend_from_slice(&x);
        }
        SampleSet::new(d, out, seed)
    }
}

impl Sampler for DiffusionGenerator {
    fn dim(&self) -> usize {
        self.net.dim
    }

    fn draw(&self, rng: &mut SimRng, out: &mut Vec<f64>) -> Result<()> {
        let mut x = [0.0; 2];
        let d = self.net.dim;
        trajectory(&self.prepared, d, self.dt, self.steps, rng, &mut x[..d])?;
        out.extend_from_slice(&x[..d]);
        Ok(())
    }
}

/// Median relative score error over several seeds of the full pipeline
/// (init, one training run, error on the evaluation grid) for `N(0, 1)` data.
pub fn score_recovery_median(n: usize, width: usize, cfg: &DiffusionConfig, seeds: &[u64]) -> Result<f64> {
    let target = crate::distributions::TargetDensity::gauss1d(0.0, 1.0)?;
    let mut errs = Vec::with_capacity(seeds.len());
    for &s in seeds {
        let data = crate::distributions::sample(&target, n, derive_seed(s, 0));
        let mut net = init_scorenet(width, 1, cfg, derive_seed(s, 1))?;
        train(&mut net, &data, LearningRate::Stable, default_steps(n, 1.0), derive_seed(s, 2))?;
        errs.push(relative_score_error(&net, 0.0, 1.0, cfg)?);
    }
    Ok(median(&errs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{sample, TargetDensity};
    use crate::stats::{linear_fit, mean, variance};
    use approx::assert_abs_diff_eq;

    fn n01_data(n: usize, seed: u64) -> SampleSet {
        sample(&TargetDensity::gauss1d(0.0, 1.0).unwrap(), n, seed)
    }

    #[test]
    fn config_validation() {
        assert!(DiffusionConfig::default().validate().is_ok());
        let bad = DiffusionConfig { reverse_steps: 9, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DiffusionConfig { horizon: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = DiffusionConfig { embed_dim: 7, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_examples() {
        let cfg = DiffusionConfig::default();
        let net = init_scorenet(300, 1, &cfg, 5).unwrap();
        let mut s = [1.0];
        for &(x, t) in &[(0.0, 0.5), (2.0, 1.0), (-3.0, 2.9)] {
            net.score(&[x], t, &mut s);
            assert_eq!(s[0], 0.0);
        }
        assert!(net.max_row_norm() <= 1.0 + 1e-12);
        assert_eq!(net, init_scorenet(300, 1, &cfg, 5).unwrap());
        assert_ne!(net.input_weights(), init_scorenet(300, 1, &cfg, 6).unwrap().input_weights());
        assert!(init_scorenet(0, 1, &cfg, 5).is_err());
        assert!(init_scorenet(10, 3, &cfg, 5).is_err());
    }

    #[test]
    fn analytic_score_examples() {
        for &t in &[0.0, 0.3, 1.0, 5.0] {
            for &x in &[-2.0, 0.0, 1.5] {
                assert_abs_diff_eq!(analytic_score_gauss(0.0, 1.0, t, x), -x, epsilon = 1e-14);
            }
        }
        assert_abs_diff_eq!(analytic_score_gauss(2.0, 0.3, 60.0, 1.2), -1.2, epsilon = 1e-12);
        let (m, _) = marginal_moments(1.0, 1.0, libm::log(4.0));
        assert_abs_diff_eq!(m, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn zero_net_loss_matches_closed_form() {
        let cfg = DiffusionConfig::default();
        let net = init_scorenet(16, 1, &cfg, 1).unwrap();
        let data = n01_data(1000, 2);
        let batch = 1_000_000;
        let loss = dsm_loss(&net, &data, &cfg, batch, 3).unwrap();
        let exact = zero_score_dsm_loss(&cfg, 1);
        assert_abs_diff_eq!(exact, 3.286, epsilon = 1e-3);
        // per-draw second moment is about 3 E[1/sigma_t^4] ~ 1e3, so sd ~ 32
        let se = 32.0 / libm::sqrt(batch as f64);
        assert!((loss - exact).abs() < 4.0 * se, "{loss} vs {exact}");
        assert_eq!(loss, dsm_loss(&net, &data, &cfg, batch, 3).unwrap());
    }

    #[test]
    fn exact_score_has_zero_explicit_loss() {
        let cfg = DiffusionConfig::default();
        let exact = AnalyticGaussScore::new(alloc::vec![0.0], alloc::vec![1.0]).unwrap();
        let l = explicit_score_loss(&exact, &exact, &n01_data(100, 1), &cfg, 1000, 2).unwrap();
        assert_eq!(l, 0.0);
        let zero = ZeroScore { dim: 1 };
        // E |x_t|^2 = 1 for stationary data
        let l = explicit_score_loss(&zero, &exact, &n01_data(10_000, 1), &cfg, 100_000, 2).unwrap();
        assert!((l - 1.0).abs() < 0.03, "{l}");
    }

    #[test]
    fn training_is_monotone_and_leaves_features_fixed() {
        let cfg = DiffusionConfig::default();
        let data = n01_data(800, 4);
        let mut net = init_scorenet(800, 1, &cfg, 5).unwrap();
        let before = (net.w.clone(), net.u.clone());
        let rep = train(&mut net, &data, LearningRate::Stable, 40, 6).unwrap();
        assert_eq!((net.w.clone(), net.u.clone()), before);
        assert_eq!(rep.losses.len(), 41);
        assert!(rep.losses.iter().all(|l| l.is_finite()));
        for w in rep.losses[1..].windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{} -> {}", w[0], w[1]);
        }
        assert!(rep.losses[40] < rep.losses[0]);
        assert!(rep.early_stopped);
    }

    #[test]
    fn zero_steps_leave_net_unchanged() {
        let cfg = DiffusionConfig::default();
        let mut net = init_scorenet(50, 1, &cfg, 1).unwrap();
        let copy = net.clone();
        let rep = train(&mut net, &n01_data(50, 2), LearningRate::Stable, 0, 3).unwrap();
        assert_eq!(net, copy);
        assert!(!rep.early_stopped);
        assert_eq!(rep.steps_run, 0);
    }

    #[test]
    fn rkhs_norm_growth_obeys_descent_bound() {
        // |A_k - A_0|_F <= sqrt(2 eta k L_0) by the descent lemma, and
        // |s|_H = |A|_F / sqrt(m)
        let cfg = DiffusionConfig::default();
        let (n, m) = (600, 600);
        let mut net = init_scorenet(m, 1, &cfg, 9).unwrap();
        let rep = train(&mut net, &n01_data(n, 8), LearningRate::Stable, 60, 7).unwrap();
        let l0 = rep.losses[0];
        for (k, &norm) in rep.rkhs_norms.iter().enumerate() {
            let bound = rep.rkhs_norms[0] + libm::sqrt(2.0 * rep.learning_rate * k as f64 * l0 / m as f64);
            assert!(norm <= bound * (1.0 + 1e-9), "k = {k}: {norm} > {bound}");
        }
        // sqrt-law trend: log-log slope of the norm against k is at most 1/2
        let ks: Vec<f64> = (10..=60).map(|k| libm::log(k as f64)).collect();
        let ns: Vec<f64> = (10..=60).map(|k| libm::log(rep.rkhs_norms[k])).collect();
        assert!(linear_fit(&ks, &ns).slope <= 0.5 + 1e-9);
    }

    #[test]
    fn divergent_step_size_is_reported() {
        let cfg = DiffusionConfig::default();
        let mut net = init_scorenet(200, 1, &cfg, 1).unwrap();
        let err = train(&mut net, &n01_data(200, 2), LearningRate::Fixed(1e9), 50, 3).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged { .. }), "{err:?}");
    }

    #[test]
    fn line_slices_match_direct_evaluation() {
        let cfg = DiffusionConfig::default();
        let mut net = init_scorenet(500, 1, &cfg, 2).unwrap();
        train(&mut net, &n01_data(500, 3), LearningRate::Stable, 20, 4).unwrap();
        let times = [3.0, 1.7, 0.4, 0.01];
        let grid = net.on_grid(&times);
        let (mut a, mut b) = ([0.0], [0.0]);
        for (k, &t) in times.iter().enumerate() {
            for ix in 0..81 {
                let x = -4.0 + 0.1 * ix as f64;
                grid.score_at(k, &[x], &mut a);
                net.score(&[x], t, &mut b);
                assert!((a[0] - b[0]).abs() <= 1e-12 * (1.0 + b[0].abs()), "{} vs {}", a[0], b[0]);
            }
        }
    }

    #[test]
    fn analytic_reverse_samples_have_target_moments() {
        let cfg = DiffusionConfig::default();
        let exact = AnalyticGaussScore::new(alloc::vec![0.0], alloc::vec![1.0]).unwrap();
        let xs = reverse_sample(&exact, &cfg, 10_000, 42).unwrap();
        let col = xs.column(0);
        assert!(mean(&col).abs() < 0.03, "{}", mean(&col));
        assert!((variance(&col) - 1.0).abs() < 0.05, "{}", variance(&col));
        assert_eq!(xs, reverse_sample(&exact, &cfg, 10_000, 42).unwrap());
    }

    #[test]
    fn zero_score_variance_matches_linear_sde() {
        let cfg = DiffusionConfig::default();
        let discrete = zero_score_variance_discrete(&cfg);
        let continuous = zero_score_variance(&cfg);
        assert!((discrete / continuous - 1.0).abs() < 0.01);
        let n = 10_000;
        let xs = reverse_sample(&ZeroScore { dim: 1 }, &cfg, n, 7).unwrap();
        let v = variance(&xs.column(0));
        // sample variance has relative sd sqrt(2/n) = 1.4%
        assert!((v / discrete - 1.0).abs() < 4.0 * libm::sqrt(2.0 / n as f64), "{v} vs {discrete}");
    }

    #[test]
    fn prior_kl_examples() {
        assert_eq!(prior_kl_gauss(0.0, 1.0, 3.0), 0.0);
        assert_abs_diff_eq!(prior_kl_gauss(1.0, 1.0, 1e-12), 0.5, epsilon = 1e-9);
        let ts = [1.0, 2.0, 4.0, 8.0];
        let kls: Vec<f64> = ts.iter().map(|&t| prior_kl_gauss(1.0, 2.0, t)).collect();
        assert!(kls.windows(2).all(|w| w[1] < w[0]));
        let logs: Vec<f64> = kls.iter().map(|k| libm::log(*k)).collect();
        let fit = linear_fit(&ts, &logs);
        assert!(fit.r_squared > 0.99 && fit.slope < 0.0, "{fit:?}");
    }

    #[test]
    fn generator_sampler_agrees_with_batch_sampling() {
        let cfg = DiffusionConfig { reverse_steps: 50, ..Default::default() };
        let mut net = init_scorenet(200, 1, &cfg, 1).unwrap();
        let rep = train(&mut net, &n01_data(200, 2), LearningRate::Stable, 15, 3).unwrap();
        let generator = DiffusionGenerator::new(net.clone(), rep);
        assert_eq!(generator.sample(100, 9).unwrap(), reverse_sample(&net, &cfg, 100, 9).unwrap());
    }

    #[test]
    fn two_dimensional_network_runs() {
        let cfg = DiffusionConfig { reverse_steps: 50, ..Default::default() };
        let data = sample(&TargetDensity::gauss2d([0.0, 0.0], [1.0, 1.0]).unwrap(), 300, 1);
        let mut net = init_scorenet(300, 2, &cfg, 2).unwrap();
        let rep = train(&mut net, &data, LearningRate::Stable, 18, 3).unwrap();
        assert!(rep.losses[18] < rep.losses[0]);
        let xs = DiffusionGenerator::new(net, rep).sample(200, 4).unwrap();
        assert_eq!(xs.dim(), 2);
        assert_eq!(xs.len(), 200);
    }
}
