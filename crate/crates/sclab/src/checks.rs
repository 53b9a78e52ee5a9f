//! Oracle checks shared by `sclab selftest` and the acceptance target.
//!
//! Each check compares a library result against an independent oracle
//! (brute-force expansion, exact arithmetic, analytic Gaussian formulas or a
//! replayed run) with a pinned tolerance, and reports one line.

use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use sclab_core::bounds::{
    alpha_requirement, balanced_coefficients_closed_form, balanced_coefficients_exact, bound_diffusion,
    bound_fixed_ratio, coefficients, coefficients_bruteforce, f_lambda, lambda_star, required_samples_balanced,
    required_samples_quartic, BoundInputs,
};
use sclab_core::diffusion::{prior_kl_gauss, reverse_sample, score_recovery_median, AnalyticGaussScore, DiffusionConfig};
use sclab_core::distributions::{kl_gauss1d, sample, Density, Gaussian1D, TargetDensity};
use sclab_core::divergences::tv_quadrature;
use sclab_core::kernel_density::{fit, KernelSpec};
use sclab_core::loop_engine::{
    run_replicates, EvalSettings, GeneratorSpec, LoopConfig, MixtureDensity, NoClock, SampleSizeRule,
};
use sclab_core::mixing::{MixtureSchedule, ScheduleKind, WeightRow};
use sclab_core::quadrature::SupportBox;
use sclab_core::rng::{derive_path, seeded, uniform01, SimRng};
use sclab_core::stats::{linear_fit, median, spearman, spearman_trend_pvalue};

use crate::config::parse_config;
use crate::scenario::run_scenario;

pub const COEFF_TOL: f64 = 1e-12;
pub const COEFF_TIME_LIMIT_S: f64 = 10.0;
pub const RANDOM_GENERAL_SCHEDULES: usize = 500;
pub const MAX_I: usize = 10;
pub const CLOSED_FORM_TOL: f64 = 1e-12;
pub const KDE_SLOPE_RANGE: (f64, f64) = (-0.45, -0.20);
pub const KDE_RATE_SEEDS: usize = 10;
pub const KDE_RATE_TIME_LIMIT_S: f64 = 300.0;
pub const F12_TOL: f64 = 1e-10;
pub const PHASE_TIME_LIMIT_S: f64 = 5.0;
pub const TREND_N: u64 = 2048;
pub const TREND_REPLICATES: usize = 12;
pub const TREND_GENERATIONS: usize = 6;
pub const TREND_P: f64 = 0.05;
pub const TREND_TIME_LIMIT_S: f64 = 600.0;
pub const SCORE_ERR_MAX: f64 = 0.2;
pub const SCORE_N: usize = 5000;
pub const REVERSE_MEAN_TOL: f64 = 0.03;
pub const REVERSE_VAR_TOL: f64 = 0.05;
pub const PRIOR_KL_R2_MIN: f64 = 0.99;
pub const DIFFUSION_TIME_LIMIT_S: f64 = 600.0;
pub const PINSKER_PAIRS: usize = 200;
pub const SUBADDITIVITY_CASES: usize = 100;
pub const SUBADDITIVITY_SLACK: f64 = 1e-3;
pub const TV_INTERVALS: usize = 4096;

const SEED: u64 = 0x5C1A_B000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// A documented mismatch whose exact shape is itself checked.
    KnownDeviation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub id: &'static str,
    pub title: &'static str,
    pub status: Status,
    pub detail: String,
    pub seconds: f64,
}

impl Check {
    pub fn failed(&self) -> bool {
        self.status == Status::Fail
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::KnownDeviation => "FAIL (known deviation, pinned)",
        };
        write!(f, "[{tag}] {:<3} {}: {} [{:.2} s]", self.id, self.title, self.detail, self.seconds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Exact and analytic checks only; a few seconds.
    Quick,
    /// Every acceptance criterion, including the statistical ones.
    Full,
}

type CheckFn = fn() -> (Status, String);

pub const CHECKS: [(&str, &str, CheckFn, bool); 17] = [
    ("1", "coefficient oracle", coefficient_oracle, true),
    ("2a", "balanced Gamma closed form", balanced_gamma_form, true),
    ("2b", "balanced exact form 1/(k+2)", balanced_exact_form, true),
    ("2c", "fixed-ratio prefactor", fixed_ratio_identity, true),
    ("3", "KDE rate", kde_rate, false),
    ("4", "phase transition", phase_transition, true),
    ("5a", "full-synthetic drift", trend_full_synthetic, false),
    ("5b", "real-each-gen below full-synthetic", trend_mixed_below_synthetic, false),
    ("5c", "all-real control flat", trend_all_real, false),
    ("6a", "diffusion score recovery", diffusion_score_recovery, false),
    ("6b", "analytic reverse sampling", diffusion_reverse_moments, true),
    ("6c", "prior KL decay", diffusion_prior_kl, true),
    ("7a", "Pinsker inequality", pinsker, true),
    ("7b", "TV triangle inequality", triangle, true),
    ("8", "mixture subadditivity", subadditivity, true),
    ("9", "sample-schedule ops", schedule_ops, true),
    ("10", "determinism and manifest replay", determinism, false),
];

/// Runs the checks of `profile` in order, calling `report` after each.
pub fn run(profile: Profile, mut report: impl FnMut(&Check)) -> Vec<Check> {
    let mut out = Vec::new();
    for (id, title, f, quick) in CHECKS {
        if profile == Profile::Quick && !quick {
            continue;
        }
        let start = Instant::now();
        let (status, detail) = f();
        let check = Check { id, title, status, detail, seconds: start.elapsed().as_secs_f64() };
        report(&check);
        out.push(check);
    }
    out
}

fn verdict(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed().as_secs_f64())
}

fn uniform(rng: &mut SimRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform01(rng)
}

fn random_general(rng: &mut SimRng, max_generation: usize) -> MixtureSchedule {
    let rows = (1..=max_generation)
        .map(|g| {
            // exponential spacings give a uniform point on the simplex
            let w: Vec<f64> = (0..=g).map(|_| -(1.0 - uniform01(rng)).ln()).collect();
            let total: f64 = w.iter().sum();
            WeightRow::new(w[0] / total, w[1..].iter().map(|x| x / total).collect())
        })
        .collect();
    MixtureSchedule::new(ScheduleKind::General(rows), max_generation).expect("normalized rows form a simplex")
}

fn coefficient_oracle() -> (Status, String) {
    let ((worst, count), secs) = timed(|| {
        let mut schedules = vec![MixtureSchedule::full_synthetic(MAX_I), MixtureSchedule::balanced(MAX_I)];
        for (n, m) in [(1, 1), (9000, 3000), (100, 36_000), (512, 0)] {
            schedules.push(MixtureSchedule::fixed_ratio(n, m, MAX_I).expect("n >= 1"));
        }
        let mut rng = seeded(SEED);
        schedules.extend((0..RANDOM_GENERAL_SCHEDULES).map(|_| random_general(&mut rng, MAX_I)));
        let mut worst = 0.0f64;
        for s in &schedules {
            for i in 0..=MAX_I {
                let fast = coefficients(s, i).expect("schedule covers i");
                let slow = coefficients_bruteforce(s, i).expect("within the expansion limit");
                for (a, b) in fast.values.iter().zip(&slow.values) {
                    worst = worst.max((a - b).abs() / b.abs().max(1.0));
                }
            }
        }
        (worst, schedules.len())
    });
    let ok = worst <= COEFF_TOL && secs < COEFF_TIME_LIMIT_S;
    (
        verdict(ok),
        format!(
            "{count} schedules, i <= {MAX_I}: max rel |recursion - expansion| = {worst:.2e} (tol {COEFF_TOL:.0e}); {secs:.2} s (limit {COEFF_TIME_LIMIT_S} s)"
        ),
    )
}

/// The Gamma-ratio form agrees with the recursion only for `k >= i - 2`, so
/// fully for `i <= 2`; below that it undercounts (at `i = 3`, `A_0` is 3/8
/// against 1/2). The check
/// passes as a known deviation only if the mismatch has exactly that shape.
fn balanced_gamma_form() -> (Status, String) {
    let mut worst = (0.0f64, 0, 0);
    let mut shape_ok = true;
    for i in 0..=MAX_I {
        let rec = coefficients(&MixtureSchedule::balanced(MAX_I), i).expect("schedule covers i");
        let gamma = balanced_coefficients_closed_form(i);
        for k in 0..=i {
            let diff = (gamma.a(k) - rec.a(k)).abs();
            if diff > worst.0 {
                worst = (diff, i, k);
            }
            let agrees = diff <= CLOSED_FORM_TOL;
            // both forms give 1, 1/(i+1), 1/i for k = i, i - 1, i - 2
            let expected = k + 2 >= i;
            if agrees != expected || (!agrees && gamma.a(k) >= rec.a(k)) {
                shape_ok = false;
            }
        }
    }
    let first = balanced_coefficients_closed_form(3).a(0);
    shape_ok &= (first - 0.375).abs() <= CLOSED_FORM_TOL;
    let detail = format!(
        "max |Gamma form - recursion| = {:.4} at i = {}, k = {} (tol {CLOSED_FORM_TOL:.0e}); agrees for k >= i - 2, undercounts below (i = 3: A_0 = {first} vs 0.5)",
        worst.0, worst.1, worst.2
    );
    (if shape_ok { Status::KnownDeviation } else { Status::Fail }, detail)
}

fn balanced_exact_form() -> (Status, String) {
    let mut worst = 0.0f64;
    for i in 0..=MAX_I {
        let rec = coefficients(&MixtureSchedule::balanced(MAX_I), i).expect("schedule covers i");
        let exact = balanced_coefficients_exact(i);
        for k in 0..=i {
            worst = worst.max((rec.a(k) - exact.a(k)).abs());
        }
    }
    (
        verdict(worst <= CLOSED_FORM_TOL),
        format!("i <= {MAX_I}: max |recursion - 1/(k+2)| = {worst:.2e} (tol {CLOSED_FORM_TOL:.0e})"),
    )
}

fn fixed_ratio_identity() -> (Status, String) {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for (n, m) in [(9000u64, 0u64), (9000, 2250), (9000, 9000), (9000, 36_000), (9000, 144_000), (100, 5), (1, 1000)] {
        for i in 0..=MAX_I {
            for (d, kl) in [(1usize, 0.0), (2, 0.01), (8, 0.3)] {
                let closed = bound_fixed_ratio(n, m, i, d, 0.1, kl).expect("valid inputs");
                let schedule = MixtureSchedule::fixed_ratio(n, m, i.max(1)).expect("n >= 1");
                let inputs = BoundInputs::uniform(n + m, i, d, 0.1).and_then(|b| b.with_kl(vec![kl; i + 1])).expect("valid inputs");
                let summed = bound_diffusion(&schedule, &inputs).expect("schedule covers i").total;
                worst = worst.max((closed - summed).abs() / summed.abs());
                cases += 1;
            }
        }
    }
    (
        verdict(worst <= CLOSED_FORM_TOL),
        format!("{cases} cases: max rel |(1+m/n)(1-rho^(i+1)) form - A-weighted sum| = {worst:.2e} (tol {CLOSED_FORM_TOL:.0e})"),
    )
}

fn kde_rate() -> (Status, String) {
    let ((slope, r2), secs) = timed(|| {
        let target = TargetDensity::gauss1d(0.0, 1.0).expect("valid target");
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for e in 8..=14u32 {
            let n = 1usize << e;
            let errs: Vec<f64> = (0..KDE_RATE_SEEDS as u64)
                .map(|s| {
                    let data = sample(&target, n, derive_path(SEED, &[3, n as u64, s]));
                    fit(data, KernelSpec::gaussian(), 2).and_then(|m| m.l1_error(&target)).expect("1D gaussian KDE")
                })
                .collect();
            xs.push((n as f64).ln());
            ys.push(median(&errs).ln());
        }
        let f = linear_fit(&xs, &ys);
        (f.slope, f.r_squared)
    });
    let (lo, hi) = KDE_SLOPE_RANGE;
    let ok = (lo..=hi).contains(&slope) && secs < KDE_RATE_TIME_LIMIT_S;
    (
        verdict(ok),
        format!(
            "h = n^(-1/6), n = 2^8..2^14, {KDE_RATE_SEEDS} seeds: slope = {slope:.4} (range [{lo}, {hi}], R^2 {r2:.3}); {secs:.1} s (limit {KDE_RATE_TIME_LIMIT_S} s)"
        ),
    )
}

fn phase_transition() -> (Status, String) {
    let (result, secs) = timed(|| -> Result<(bool, String), sclab_core::Error> {
        let zero_ok = (1..=6).all(|i| f_lambda(0.0, i) == 1.0);
        let f12 = f_lambda(1.0, 2);
        let f12_err = (f12 - 7.0 * 2f64.powf(-2.25)).abs();
        let peaks = (1..=6).map(lambda_star).collect::<Result<Vec<_>, _>>()?;
        let increasing = peaks.windows(2).all(|w| w[1].lambda > w[0].lambda);
        // rise then fall on a grid out to 3 lambda*
        let mut shape = true;
        for p in &peaks {
            let grid: Vec<f64> = (0..=300).map(|k| 3.0 * p.lambda * k as f64 / 300.0).collect();
            let vals: Vec<f64> = grid.iter().map(|&l| f_lambda(l, p.generation)).collect();
            let top = vals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map_or(0, |(k, _)| k);
            shape &= top > 0 && top < grid.len() - 1;
            shape &= vals[..=top].windows(2).all(|w| w[1] > w[0]);
            shape &= vals[top..].windows(2).all(|w| w[1] < w[0]);
        }
        let first_ok = (peaks[0].lambda - 1.5).abs() <= 1e-6;
        let stars: Vec<String> = peaks.iter().map(|p| format!("{:.4}", p.lambda)).collect();
        Ok((
            zero_ok && f12_err <= F12_TOL && increasing && shape && first_ok,
            format!(
                "f(0,i) = 1 exactly: {zero_ok}; |f(1,2) - 7*2^-2.25| = {f12_err:.1e} (tol {F12_TOL:.0e}); lambda*(1..6) = [{}] strictly increasing: {increasing}; lambda*(1) = 1.5 within 1e-6: {first_ok}; rise-then-fall on grid: {shape}",
                stars.join(", ")
            ),
        ))
    });
    match result {
        Ok((ok, detail)) => (
            verdict(ok && secs < PHASE_TIME_LIMIT_S),
            format!("{detail}; {secs:.2} s (limit {PHASE_TIME_LIMIT_S} s)"),
        ),
        Err(e) => (Status::Fail, format!("lambda* search failed: {e}")),
    }
}

fn trend_config(schedule: MixtureSchedule) -> LoopConfig {
    LoopConfig {
        generator: GeneratorSpec::Kde { kernel: KernelSpec::gaussian(), smoothness: 2 },
        schedule,
        p0: TargetDensity::gauss1d(0.0, 1.0).expect("valid target"),
        sample_sizes: SampleSizeRule::Constant(TREND_N),
        max_generation: TREND_GENERATIONS,
        replicates: TREND_REPLICATES,
        base_seed: derive_path(SEED, &[5]),
        eval: EvalSettings::for_dim(1),
    }
}

fn trend_medians(schedule: MixtureSchedule) -> Result<(Vec<f64>, f64), sclab_core::Error> {
    let (run, secs) = timed(|| run_replicates(&trend_config(schedule), &NoClock));
    Ok((run?.summary.medians(), secs))
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ")
}

fn trend_full_synthetic() -> (Status, String) {
    match trend_medians(MixtureSchedule::full_synthetic(TREND_GENERATIONS)) {
        Ok((m, secs)) => {
            let gens: Vec<f64> = (1..=m.len()).map(|g| g as f64).collect();
            let rho = spearman(&gens, &m);
            let p = spearman_trend_pvalue(&m);
            (
                verdict(rho > 0.0 && p < TREND_P && secs < TREND_TIME_LIMIT_S),
                format!(
                    "n = {TREND_N}, {TREND_REPLICATES} reps, medians [{}]: Spearman rho = {rho:.3}, exact p = {p:.4} (need rho > 0, p < {TREND_P}); {secs:.1} s",
                    fmt_list(&m)
                ),
            )
        }
        Err(e) => (Status::Fail, format!("loop failed: {e}")),
    }
}

fn trend_mixed_below_synthetic() -> (Status, String) {
    let mixed = MixtureSchedule::real_each_gen(0.5, TREND_GENERATIONS).expect("alpha in [0, 1]");
    match (trend_medians(mixed), trend_medians(MixtureSchedule::full_synthetic(TREND_GENERATIONS))) {
        (Ok((mix, s1)), Ok((syn, s2))) => {
            let (a, b) = (*mix.last().expect("I >= 1"), *syn.last().expect("I >= 1"));
            (
                verdict(a < b && s1 + s2 < TREND_TIME_LIMIT_S),
                format!("final median TV: real-each-gen (alpha 0.5) {a:.4} vs full-synthetic {b:.4} (need <); {:.1} s", s1 + s2),
            )
        }
        (Err(e), _) | (_, Err(e)) => (Status::Fail, format!("loop failed: {e}")),
    }
}

fn trend_all_real() -> (Status, String) {
    match trend_medians(MixtureSchedule::all_real(TREND_GENERATIONS)) {
        Ok((m, secs)) => {
            let level = m[0];
            let ok = m.iter().all(|&x| x >= level / 2.0 && x <= 2.0 * level);
            (
                verdict(ok && secs < TREND_TIME_LIMIT_S),
                format!(
                    "medians [{}] all within [{:.4}, {:.4}] (half to twice generation 1); {secs:.1} s",
                    fmt_list(&m),
                    level / 2.0,
                    2.0 * level
                ),
            )
        }
        Err(e) => (Status::Fail, format!("loop failed: {e}")),
    }
}

fn diffusion_score_recovery() -> (Status, String) {
    let (res, secs) =
        timed(|| score_recovery_median(SCORE_N, SCORE_N, &DiffusionConfig::default(), &[0, 1, 2, 3, 4]));
    match res {
        Ok(err) => (
            verdict(err < SCORE_ERR_MAX && secs < DIFFUSION_TIME_LIMIT_S),
            format!(
                "n = m = {SCORE_N}, tau = ceil(sqrt(n)), 5 seeds: median relative L2 score error = {err:.4} (need < {SCORE_ERR_MAX}); {secs:.1} s (limit {DIFFUSION_TIME_LIMIT_S} s)"
            ),
        ),
        Err(e) => (Status::Fail, format!("training failed: {e}")),
    }
}

fn diffusion_reverse_moments() -> (Status, String) {
    let cfg = DiffusionConfig::default();
    let res = AnalyticGaussScore::new(vec![0.0], vec![1.0])
        .and_then(|score| reverse_sample(&score, &cfg, 10_000, derive_path(SEED, &[6])));
    match res {
        Ok(xs) => {
            let (mean, var) = (xs.mean()[0], xs.variance()[0]);
            (
                verdict(mean.abs() < REVERSE_MEAN_TOL && (var - 1.0).abs() < REVERSE_VAR_TOL),
                format!(
                    "n = 10^4 with the exact N(0,1) score: mean = {mean:.4} (|.| < {REVERSE_MEAN_TOL}), var = {var:.4} (|var - 1| < {REVERSE_VAR_TOL})"
                ),
            )
        }
        Err(e) => (Status::Fail, format!("sampling failed: {e}")),
    }
}

fn diffusion_prior_kl() -> (Status, String) {
    let horizons = [1.0, 2.0, 3.0, 4.0, 6.0, 8.0];
    let logs: Vec<f64> = horizons.iter().map(|&t| prior_kl_gauss(1.0, 2.0, t).ln()).collect();
    let fit = linear_fit(&horizons, &logs);
    (
        verdict(fit.r_squared > PRIOR_KL_R2_MIN && fit.slope < 0.0),
        format!(
            "KL(p_T || N(0,1)) for N(1, 2^2), T = 1..8: log-linear slope = {:.4}, R^2 = {:.6} (need > {PRIOR_KL_R2_MIN})",
            fit.slope, fit.r_squared
        ),
    )
}

fn random_gaussian(rng: &mut SimRng) -> (Gaussian1D, TargetDensity) {
    let (mean, std) = (uniform(rng, -2.0, 2.0), uniform(rng, 0.5, 2.0));
    (Gaussian1D::new(mean, std).expect("std > 0"), TargetDensity::gauss1d(mean, std).expect("std > 0"))
}

fn joint_box(targets: &[&TargetDensity]) -> SupportBox {
    targets
        .iter()
        .skip(1)
        .fold(targets[0].support_hint().clone(), |acc, t| acc.union(t.support_hint()).expect("same dimension"))
}

fn pinsker() -> (Status, String) {
    let mut rng = seeded(derive_path(SEED, &[7]));
    let mut worst_gap = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..PINSKER_PAIRS {
        let (ga, a) = random_gaussian(&mut rng);
        let (gb, b) = random_gaussian(&mut rng);
        let tv = tv_quadrature(&a, &b, &joint_box(&[&a, &b]), TV_INTERVALS).expect("1D quadrature");
        let limit = (kl_gauss1d(ga, gb) / 2.0).sqrt();
        let gap = tv.value - limit - tv.tolerance;
        worst_gap = worst_gap.max(tv.value - limit);
        if gap > 0.0 {
            violations += 1;
        }
    }
    (
        verdict(violations == 0),
        format!(
            "{PINSKER_PAIRS} pairs: {violations} violations of TV <= sqrt(KL/2) + tol; max TV - sqrt(KL/2) = {worst_gap:.4}"
        ),
    )
}

fn triangle() -> (Status, String) {
    let mut rng = seeded(derive_path(SEED, &[8]));
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..PINSKER_PAIRS {
        let (_, a) = random_gaussian(&mut rng);
        let (_, b) = random_gaussian(&mut rng);
        let (_, c) = random_gaussian(&mut rng);
        let region = joint_box(&[&a, &b, &c]);
        let tv = |x: &TargetDensity, y: &TargetDensity| tv_quadrature(x, y, &region, TV_INTERVALS).expect("1D quadrature");
        let (ac, ab, bc) = (tv(&a, &c), tv(&a, &b), tv(&b, &c));
        let excess = ac.value - ab.value - bc.value;
        worst = worst.max(excess);
        if excess > ac.tolerance + ab.tolerance + bc.tolerance {
            violations += 1;
        }
    }
    (
        verdict(violations == 0),
        format!("{PINSKER_PAIRS} triples: {violations} violations beyond summed tolerances; max TV(a,c) - TV(a,b) - TV(b,c) = {worst:.4}"),
    )
}

fn subadditivity() -> (Status, String) {
    let mut rng = seeded(derive_path(SEED, &[9]));
    let p0 = TargetDensity::gauss1d(0.0, 1.0).expect("valid target");
    let mut worst = f64::NEG_INFINITY;
    let mut violations = 0;
    for _ in 0..SUBADDITIVITY_CASES {
        let k = 1 + (uniform01(&mut rng) * 4.0) as usize;
        let comps: Vec<TargetDensity> = (0..k)
            .map(|_| TargetDensity::gauss1d(uniform(&mut rng, -3.0, 3.0), uniform(&mut rng, 0.5, 2.0)).expect("std > 0"))
            .collect();
        let alpha = uniform01(&mut rng);
        let raw: Vec<f64> = (0..k).map(|_| -(1.0 - uniform01(&mut rng)).ln()).collect();
        let total: f64 = raw.iter().sum();
        let betas: Vec<f64> = raw.iter().map(|w| (1.0 - alpha) * w / total).collect();
        let mut parts: Vec<(f64, &dyn Density)> = vec![(alpha, &p0)];
        parts.extend(betas.iter().zip(&comps).map(|(&b, q)| (b, q as &dyn Density)));
        let mixture = MixtureDensity::new(parts).expect("weights sum to one");
        let mut all: Vec<&TargetDensity> = comps.iter().collect();
        all.push(&p0);
        let region = joint_box(&all);
        let lhs = tv_quadrature(&mixture, &p0, &region, TV_INTERVALS).expect("1D quadrature").value;
        let rhs: f64 = betas
            .iter()
            .zip(&comps)
            .map(|(b, q)| b * tv_quadrature(q, &p0, &region, TV_INTERVALS).expect("1D quadrature").value)
            .sum();
        worst = worst.max(lhs - rhs);
        if lhs > rhs + SUBADDITIVITY_SLACK {
            violations += 1;
        }
    }
    (
        verdict(violations == 0),
        format!(
            "{SUBADDITIVITY_CASES} mixtures: {violations} violations of TV(mix, p0) <= sum beta TV(q, p0) + {SUBADDITIVITY_SLACK:.0e}; max lhs - rhs = {worst:.2e}"
        ),
    )
}

fn schedule_ops() -> (Status, String) {
    let quartic = required_samples_quartic(2, 4, 0.5);
    let alpha = alpha_requirement(5);
    let mut monotone = true;
    for i in 0..=MAX_I {
        match required_samples_balanced(i, 1, 0.5) {
            Ok(s) => monotone &= s.windows(2).all(|w| w[1] <= w[0]),
            Err(_) => monotone = false,
        }
    }
    let ok = quartic == Ok(4096) && alpha == Ok(0.8) && monotone;
    (
        verdict(ok),
        format!(
            "required_samples_quartic(2,4,0.5) = {quartic:?} (want 4096); alpha_requirement(5) = {alpha:?} (want 0.8); balanced schedules non-increasing in k for i <= {MAX_I}: {monotone}"
        ),
    )
}

const DETERMINISM_CONFIG: &str = r#"
scenario = "full_synthetic"
base_seed = 11

[loop]
max_generation = 3
replicates = 2
sample_size = 256
"#;

fn scratch_dir(tag: &str) -> PathBuf {
    let nanos = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_nanos());
    std::env::temp_dir().join(format!("sclab-check-{}-{nanos}-{tag}", std::process::id()))
}

fn determinism() -> (Status, String) {
    let dirs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|t| scratch_dir(t)).collect();
    let outcome = (|| -> Result<(bool, bool, usize), String> {
        let cfg = parse_config(DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
        run_scenario(&cfg, &dirs[0]).map_err(|e| e.to_string())?;
        run_scenario(&cfg, &dirs[1]).map_err(|e| e.to_string())?;
        let read = |d: &PathBuf, name: &str| std::fs::read(d.join(name)).map_err(|e| e.to_string());
        let first = read(&dirs[0], "results.csv")?;
        let repeat = first == read(&dirs[1], "results.csv")?;
        let manifest = String::from_utf8(read(&dirs[0], "manifest.toml")?).map_err(|e| e.to_string())?;
        let replay = parse_config(&manifest).map_err(|e| e.to_string())?;
        run_scenario(&replay, &dirs[2]).map_err(|e| e.to_string())?;
        let replayed = first == read(&dirs[2], "results.csv")?;
        Ok((repeat, replayed, first.len()))
    })();
    for d in &dirs {
        let _ = std::fs::remove_dir_all(d);
    }
    match outcome {
        Ok((repeat, replayed, bytes)) => (
            verdict(repeat && replayed),
            format!("results.csv ({bytes} bytes) identical across two runs: {repeat}; identical when replayed from manifest.toml: {replayed}"),
        ),
        Err(e) => (Status::Fail, format!("run failed: {e}")),
    }
}
