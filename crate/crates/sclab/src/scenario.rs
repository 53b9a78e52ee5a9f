//! Scenario runners: turn a parsed config into result tables and files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use sclab_core::bounds::{
    balanced_coefficients_closed_form, bound_diffusion, bound_flow, bound_kde, f_lambda, lambda_star, BoundBreakdown,
    BoundInputs,
};
use sclab_core::loop_engine::{
    run_replicates, Clock, GeneratorSpec, LoopConfig, LoopTrace, NoClock, ReplicateRun, SampleSizeRule,
};
use sclab_core::mixing::MixtureSchedule;
use sclab_core::rng::derive_seed;
use sclab_core::stats::{linear_fit, quantile};

use crate::config::{BoundKind, BoundSchedule, BoundsSpec, ExperimentConfig, KdeRatePlan, PhasePlan, Plan, SweepPlan};
use crate::output::{fmt_f64, manifest_text, write_atomic, BoundRow, CsvTable, ResultRow};

/// Wall clock for `record_runtime = true`.
pub struct SystemClock(Instant);

impl SystemClock {
    pub fn new() -> Self {
        Self(Instant::now())
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now_ms(&self) -> Option<f64> {
        Some(self.0.elapsed().as_secs_f64() * 1e3)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] sclab_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Everything a scenario produces before it touches the file system.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub results: Vec<ResultRow>,
    pub bounds: Vec<BoundRow>,
    /// Scenario-specific tables, keyed by file name.
    pub extra: Vec<(String, CsvTable)>,
    /// Short human-readable digest printed by the CLI.
    pub summary: Vec<String>,
}

impl ScenarioOutput {
    fn new() -> Self {
        Self { results: Vec::new(), bounds: Vec::new(), extra: Vec::new(), summary: Vec::new() }
    }
}

pub fn execute(cfg: &ExperimentConfig) -> Result<ScenarioOutput, sclab_core::Error> {
    let system = SystemClock::new();
    let clock: &dyn Clock = if cfg.record_runtime { &system } else { &NoClock };
    let label = cfg.scenario.as_str();
    match &cfg.plan {
        Plan::Loop(lc) => run_loop_scenario(label, lc, clock),
        Plan::KdeRate(plan) => run_kde_rate(label, plan, cfg.base_seed, clock),
        Plan::Sweep(plan) => run_sweep(label, plan, clock),
        Plan::Bounds(plan) => {
            let mut out = ScenarioOutput::new();
            for &s in &plan.schedules {
                for i in 0..=plan.max_i {
                    out.bounds.extend(bound_rows(s, &plan.spec, i)?);
                }
                let last = out.bounds.last().map_or(f64::NAN, |r| r.total_bound);
                out.summary.push(format!("{}: bound at i = {} is {}", s.as_str(), plan.max_i, fmt_f64(last)));
            }
            Ok(out)
        }
        Plan::Phase(plan) => run_phase(plan),
    }
}

/// Runs the scenario and writes `results.csv`, `bounds.csv`, any
/// scenario-specific tables and `manifest.toml` into `out_dir`.
pub fn run_scenario(cfg: &ExperimentConfig, out_dir: &Path) -> Result<(ScenarioOutput, Vec<PathBuf>), RunError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| RunError::Io { path, source }
    };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let out = execute(cfg)?;
    let mut files = Vec::new();
    let mut put = |name: &str, table: &CsvTable| -> Result<(), RunError> {
        let bytes = table.to_csv().map_err(io(&out_dir.join(name)))?;
        files.push(write_atomic(out_dir, name, &bytes).map_err(io(&out_dir.join(name)))?);
        Ok(())
    };
    put("results.csv", &CsvTable::results(&out.results))?;
    put("bounds.csv", &CsvTable::bounds(&out.bounds))?;
    for (name, table) in &out.extra {
        put(name, table)?;
    }
    let manifest = manifest_text(cfg);
    files.push(write_atomic(out_dir, "manifest.toml", manifest.as_bytes()).map_err(io(&out_dir.join("manifest.toml")))?);
    Ok((out, files))
}

fn result_rows(label: &str, run: &ReplicateRun) -> Vec<ResultRow> {
    run.traces
        .iter()
        .flat_map(|t| {
            t.records.iter().map(move |r| ResultRow {
                scenario: label.to_string(),
                replicate: t.replicate,
                generation: r.generation,
                n_total: r.n_total,
                n_real: r.n_real,
                tv: r.tv_to_p0,
                bound_value: r.bound_value,
                kl_prior: r.kl_prior,
                seed: r.seed,
                runtime_ms: r.runtime_ms,
            })
        })
        .collect()
}

fn breakdown_rows(label: &str, br: &BoundBreakdown) -> Vec<BoundRow> {
    let i = br.coefficients.generation;
    (0..=i)
        .map(|k| BoundRow {
            schedule: label.to_string(),
            i,
            k,
            a_k: br.coefficients.a(k),
            bound_term: br.coefficients.a(k) * br.terms[k],
            total_bound: br.total,
        })
        .collect()
}

/// Coefficient tables behind each record's `bound_value`, using the first
/// replicate's prior-KL terms for diffusion generators.
fn loop_bound_rows(label: &str, cfg: &LoopConfig, trace: &LoopTrace) -> Result<Vec<BoundRow>, sclab_core::Error> {
    let sizes = cfg.validate()?;
    let mut rows = Vec::new();
    for g in 1..=cfg.max_generation {
        let inputs = BoundInputs::new(sizes[..g].to_vec(), cfg.p0.dim(), cfg.eval.delta)?;
        let br = match &cfg.generator {
            GeneratorSpec::Kde { smoothness, .. } => bound_kde(&cfg.schedule, &inputs.with_smoothness(*smoothness)?)?,
            GeneratorSpec::Diffusion { .. } => {
                let kl = trace.records[..g].iter().map(|r| r.kl_prior.unwrap_or(0.0)).collect();
                bound_diffusion(&cfg.schedule, &inputs.with_kl(kl)?)?
            }
        };
        rows.extend(breakdown_rows(label, &br));
    }
    Ok(rows)
}

fn summary_rows(label: &str, run: &ReplicateRun, table: &mut CsvTable) {
    for g in &run.summary.generations {
        table.push(vec![
            label.to_string(),
            g.generation.to_string(),
            fmt_f64(g.median),
            fmt_f64(g.q25),
            fmt_f64(g.q75),
        ]);
    }
}

fn medians_line(label: &str, run: &ReplicateRun) -> String {
    let medians: Vec<String> = run.summary.medians().iter().map(|m| format!("{m:.4}")).collect();
    format!("{label}: median TV by generation [{}]", medians.join(", "))
}

fn run_loop_scenario(label: &str, cfg: &LoopConfig, clock: &dyn Clock) -> Result<ScenarioOutput, sclab_core::Error> {
    let run = run_replicates(cfg, clock)?;
    let mut out = ScenarioOutput::new();
    out.results = result_rows(label, &run);
    out.bounds = loop_bound_rows(cfg.schedule.label(), cfg, &run.traces[0])?;
    let mut summary = CsvTable::new(&["scenario", "generation", "median_tv", "q25_tv", "q75_tv"]);
    summary_rows(label, &run, &mut summary);
    out.extra.push(("summary.csv".into(), summary));
    out.summary.push(medians_line(label, &run));
    Ok(out)
}

fn run_kde_rate(
    label: &str,
    plan: &KdeRatePlan,
    base_seed: u64,
    clock: &dyn Clock,
) -> Result<ScenarioOutput, sclab_core::Error> {
    let mut out = ScenarioOutput::new();
    let mut rate = CsvTable::new(&["n", "median_tv", "q25_tv", "q75_tv"]);
    let (mut log_n, mut log_tv) = (Vec::new(), Vec::new());
    for &n in &plan.sizes {
        let cfg = LoopConfig {
            generator: GeneratorSpec::Kde { kernel: plan.kernel, smoothness: plan.smoothness },
            schedule: MixtureSchedule::full_synthetic(1),
            p0: plan.p0.clone(),
            sample_sizes: SampleSizeRule::Constant(n),
            max_generation: 1,
            replicates: plan.seeds,
            base_seed: derive_seed(base_seed, n),
            eval: plan.eval,
        };
        let run = run_replicates(&cfg, clock)?;
        out.results.extend(result_rows(label, &run));
        out.bounds.extend(loop_bound_rows(&format!("{label}[n={n}]"), &cfg, &run.traces[0])?);
        let tv: Vec<f64> = run.traces.iter().map(|t| t.records[0].tv_to_p0.value).collect();
        let median = quantile(&tv, 0.5);
        rate.push(vec![n.to_string(), fmt_f64(median), fmt_f64(quantile(&tv, 0.25)), fmt_f64(quantile(&tv, 0.75))]);
        log_n.push((n as f64).ln());
        log_tv.push(median.ln());
    }
    out.extra.push(("rate.csv".into(), rate));
    if log_n.len() >= 2 {
        let fit = linear_fit(&log_n, &log_tv);
        out.summary.push(format!("{label}: log-log slope of median TV vs n = {:.4} (R^2 {:.4})", fit.slope, fit.r_squared));
    }
    Ok(out)
}

/// `m = round(lambda n)` synthetic points per generation.
pub fn sweep_synth_count(lambda: f64, n_real: u64) -> u64 {
    (lambda * n_real as f64).round() as u64
}

fn run_sweep(label: &str, plan: &SweepPlan, clock: &dyn Clock) -> Result<ScenarioOutput, sclab_core::Error> {
    let mut out = ScenarioOutput::new();
    let mut sweep = CsvTable::new(&["lambda", "m_synth", "generation", "median_tv", "q25_tv", "q75_tv", "f_lambda"]);
    for &lambda in &plan.lambdas {
        let m = sweep_synth_count(lambda, plan.n_real);
        let cfg = LoopConfig {
            schedule: MixtureSchedule::fixed_ratio(plan.n_real, m, plan.base.max_generation)?,
            sample_sizes: SampleSizeRule::Constant(plan.n_real + m),
            ..plan.base.clone()
        };
        let tag = format!("{label}[lambda={}]", fmt_f64(lambda));
        let run = run_replicates(&cfg, clock)?;
        out.results.extend(result_rows(&tag, &run));
        out.bounds.extend(loop_bound_rows(&tag, &cfg, &run.traces[0])?);
        // the ratio actually simulated, after rounding m
        let realized = m as f64 / plan.n_real as f64;
        for g in &run.summary.generations {
            sweep.push(vec![
                fmt_f64(lambda),
                m.to_string(),
                g.generation.to_string(),
                fmt_f64(g.median),
                fmt_f64(g.q25),
                fmt_f64(g.q75),
                fmt_f64(f_lambda(realized, g.generation - 1)),
            ]);
        }
        out.summary.push(medians_line(&tag, &run));
    }
    out.extra.push(("sweep.csv".into(), sweep));
    Ok(out)
}

fn run_phase(plan: &PhasePlan) -> Result<ScenarioOutput, sclab_core::Error> {
    let mut out = ScenarioOutput::new();
    let mut phase = CsvTable::new(&["i", "lambda", "f", "lambda_star", "f_star"]);
    let steps = plan.points - 1;
    for &i in &plan.generations {
        let peak = lambda_star(i)?;
        for k in 0..=steps {
            let lambda = plan.lambda_max * k as f64 / steps as f64;
            phase.push(vec![
                i.to_string(),
                fmt_f64(lambda),
                fmt_f64(f_lambda(lambda, i)),
                fmt_f64(peak.lambda),
                fmt_f64(peak.value),
            ]);
        }
        out.summary.push(format!("i = {i}: lambda* = {:.6}, f(lambda*) = {:.6}", peak.lambda, peak.value));
    }
    out.extra.push(("phase.csv".into(), phase));
    Ok(out)
}

/// Coefficients and weighted terms of the generation-`i` bound for one
/// schedule, all generations sharing the same sample count.
pub fn bound_rows(schedule: BoundSchedule, spec: &BoundsSpec, i: usize) -> Result<Vec<BoundRow>, sclab_core::Error> {
    let horizon = i.max(1);
    let (sched, count) = match schedule {
        BoundSchedule::FullSynthetic => (MixtureSchedule::full_synthetic(horizon), spec.n),
        BoundSchedule::Balanced | BoundSchedule::BalancedGamma => (MixtureSchedule::balanced(horizon), spec.n),
        BoundSchedule::FixedRatio => {
            (MixtureSchedule::fixed_ratio(spec.n_real, spec.m_synth, horizon)?, spec.n_real + spec.m_synth)
        }
        BoundSchedule::RealEachGen => (MixtureSchedule::real_each_gen(spec.alpha, horizon)?, spec.n),
    };
    let inputs = BoundInputs::uniform(count, i, spec.dim, spec.delta)?;
    let mut br = match spec.bound {
        BoundKind::Diffusion => bound_diffusion(&sched, &inputs.with_kl(vec![spec.kl; i + 1])?)?,
        BoundKind::Kde => bound_kde(&sched, &inputs.with_smoothness(spec.smoothness)?)?,
        BoundKind::Flow => bound_flow(&sched, &inputs.with_flow_norm(spec.flow_norm)?)?,
    };
    if schedule == BoundSchedule::BalancedGamma {
        br.coefficients = balanced_coefficients_closed_form(i);
        br.total = br.coefficients.values.iter().zip(&br.terms).map(|(a, t)| a * t).sum();
    }
    Ok(breakdown_rows(schedule.as_str(), &br))
}

#[cfg(test)]
mod tests {
    use super::*;
    use sclab_core::bounds::balanced_coefficients_exact;

    #[test]
    fn balanced_rows_follow_the_recursion_and_gamma_rows_the_closed_form() {
        let spec = BoundsSpec::default();
        for i in 0..=10 {
            let rows = bound_rows(BoundSchedule::Balanced, &spec, i).unwrap();
            let gamma = bound_rows(BoundSchedule::BalancedGamma, &spec, i).unwrap();
            let exact = balanced_coefficients_exact(i);
            let closed = balanced_coefficients_closed_form(i);
            assert_eq!(rows.len(), i + 1);
            for k in 0..=i {
                assert!((rows[k].a_k - exact.a(k)).abs() < 1e-12);
                assert_eq!(gamma[k].a_k, closed.a(k));
            }
            let total: f64 = rows.iter().map(|r| r.bound_term).sum();
            assert!((total - rows[0].total_bound).abs() <= 1e-12 * total);
        }
    }

    #[test]
    fn sweep_count_rounds_to_nearest() {
        assert_eq!(sweep_synth_count(0.25, 512), 128);
        assert_eq!(sweep_synth_count(0.0, 512), 0);
        assert_eq!(sweep_synth_count(1.0 / 3.0, 10), 3);
    }
}
