//! Strict TOML experiment configuration.
//!
//! Parsing never stops at the first problem: every unknown key, missing key
//! and invalid value is collected and reported together. The document syntax
//! is described in the README.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;

use sclab_core::distributions::{MixtureComponent, TargetDensity};
use sclab_core::kernel_density::KernelSpec;
use sclab_core::loop_engine::{EvalSettings, GeneratorSpec, LoopConfig, SampleSizeRule};
use sclab_core::mixing::{MixtureSchedule, ScheduleKind, WeightRow};
use sclab_core::diffusion::DiffusionConfig;
use toml::{Table, Value};

/// Largest seed that survives a round trip through a TOML integer.
pub const MAX_SEED: u64 = i64::MAX as u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    KdeRate,
    FullSynthetic,
    Balanced,
    FixedRatioSweep,
    RealEachGen,
    Diffusion1d,
    BoundsReport,
    PhaseTransition,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::KdeRate,
        Scenario::FullSynthetic,
        Scenario::Balanced,
        Scenario::FixedRatioSweep,
        Scenario::RealEachGen,
        Scenario::Diffusion1d,
        Scenario::BoundsReport,
        Scenario::PhaseTransition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::KdeRate => "kde_rate",
            Scenario::FullSynthetic => "full_synthetic",
            Scenario::Balanced => "balanced",
            Scenario::FixedRatioSweep => "fixed_ratio_sweep",
            Scenario::RealEachGen => "real_each_gen",
            Scenario::Diffusion1d => "diffusion_1d",
            Scenario::BoundsReport => "bounds_report",
            Scenario::PhaseTransition => "phase_transition",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|sc| sc.as_str() == s)
    }

    fn sections(self) -> &'static [&'static str] {
        match self {
            Scenario::KdeRate => &["target", "generator", "eval", "kde_rate"],
            Scenario::FullSynthetic | Scenario::Balanced | Scenario::RealEachGen | Scenario::Diffusion1d => {
                &["target", "generator", "loop", "schedule", "eval"]
            }
            Scenario::FixedRatioSweep => &["target", "generator", "loop", "eval", "sweep"],
            Scenario::BoundsReport => &["bounds"],
            Scenario::PhaseTransition => &["phase"],
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Every problem found in a config document, in document order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} config error(s)", self.0.len())?;
        for e in &self.0 {
            write!(f, "\n  {e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Diffusion,
    Kde,
    Flow,
}

impl BoundKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "diffusion" => Some(BoundKind::Diffusion),
            "kde" => Some(BoundKind::Kde),
            "flow" => Some(BoundKind::Flow),
            _ => None,
        }
    }
}

/// Schedules a bound table can be computed for. `BalancedGamma` is the
/// balanced cycle with the Gamma-ratio coefficient formula instead of the
/// recursion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSchedule {
    FullSynthetic,
    Balanced,
    BalancedGamma,
    FixedRatio,
    RealEachGen,
}

impl BoundSchedule {
    pub const NAMES: [&'static str; 5] = ["full_synthetic", "balanced", "balanced_gamma", "fixed_ratio", "real_each_gen"];

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full_synthetic" => Some(BoundSchedule::FullSynthetic),
            "balanced" => Some(BoundSchedule::Balanced),
            "balanced_gamma" => Some(BoundSchedule::BalancedGamma),
            "fixed_ratio" => Some(BoundSchedule::FixedRatio),
            "real_each_gen" => Some(BoundSchedule::RealEachGen),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        Self::NAMES[self as usize]
    }
}

/// Inputs shared by `bounds_report` and the `sclab bounds` subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsSpec {
    pub bound: BoundKind,
    /// Per-generation sample count (fixed ratio uses `n_real + m_synth`).
    pub n: u64,
    pub dim: usize,
    pub delta: f64,
    pub kl: f64,
    pub smoothness: u32,
    pub flow_norm: f64,
    pub alpha: f64,
    pub n_real: u64,
    pub m_synth: u64,
}

impl Default for BoundsSpec {
    fn default() -> Self {
        Self {
            bound: BoundKind::Diffusion,
            n: 1000,
            dim: 1,
            delta: 0.1,
            kl: 0.0,
            smoothness: 2,
            flow_norm: 1.0,
            alpha: 0.5,
            n_real: 1000,
            m_synth: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundsPlan {
    pub schedules: Vec<BoundSchedule>,
    pub max_i: usize,
    pub spec: BoundsSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhasePlan {
    pub generations: Vec<usize>,
    pub lambda_max: f64,
    pub points: usize,
}

/// Single-generation estimation error over a ladder of sample sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeRatePlan {
    pub p0: TargetDensity,
    pub kernel: KernelSpec,
    pub smoothness: u32,
    pub sizes: Vec<u64>,
    pub seeds: usize,
    pub eval: EvalSettings,
}

/// Fixed-ratio loops with `m = round(lambda * n_real)` for each lambda.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPlan {
    pub base: LoopConfig,
    pub n_real: u64,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Plan {
    Loop(LoopConfig),
    KdeRate(KdeRatePlan),
    Sweep(SweepPlan),
    Bounds(BoundsPlan),
    Phase(PhasePlan),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub base_seed: u64,
    pub out_dir: Option<PathBuf>,
    pub record_runtime: bool,
    pub plan: Plan,
    source: Table,
}

impl ExperimentConfig {
    /// The parsed document, with any overrides applied, minus `[manifest]`.
    pub fn source(&self) -> &Table {
        &self.source
    }

    pub fn set_seed(&mut self, seed: u64) -> Result<(), ConfigErrors> {
        if seed > MAX_SEED {
            return Err(ConfigErrors(vec![format!("seed {seed} exceeds {MAX_SEED}")]));
        }
        self.base_seed = seed;
        match &mut self.plan {
            Plan::Loop(cfg) => cfg.base_seed = seed,
            Plan::Sweep(sweep) => sweep.base.base_seed = seed,
            _ => {}
        }
        self.source.insert("base_seed".into(), Value::Integer(seed as i64));
        Ok(())
    }

    /// Replicate count for loop scenarios, seed count for `kde_rate`.
    pub fn set_replicates(&mut self, k: usize) -> Result<(), ConfigErrors> {
        if k == 0 {
            return Err(ConfigErrors(vec!["replicates must be >= 1".into()]));
        }
        let (section, key) = match &mut self.plan {
            Plan::Loop(cfg) => {
                cfg.replicates = k;
                ("loop", "replicates")
            }
            Plan::Sweep(sweep) => {
                sweep.base.replicates = k;
                ("loop", "replicates")
            }
            Plan::KdeRate(rate) => {
                rate.seeds = k;
                ("kde_rate", "seeds")
            }
            Plan::Bounds(_) | Plan::Phase(_) => {
                return Err(ConfigErrors(vec![format!("replicates do not apply to scenario {}", self.scenario)]));
            }
        };
        let table = self
            .source
            .entry(section)
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .expect("section was validated as a table");
        table.insert(key.into(), Value::Integer(k as i64));
        Ok(())
    }

    pub fn set_out_dir(&mut self, dir: PathBuf) {
        self.source.insert("out_dir".into(), Value::String(dir.display().to_string()));
        self.out_dir = Some(dir);
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigErrors> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| ConfigErrors(vec![format!("syntax: {}", e.message())]))?;
    let mut errs = Vec::new();
    let mut root = Fields::new(String::new(), &table);

    let scenario = match root.string(&mut errs, "scenario") {
        Some(s) => match Scenario::parse(s) {
            Some(sc) => Some(sc),
            None => {
                let names: Vec<_> = Scenario::ALL.iter().map(|s| s.as_str()).collect();
                errs.push(format!("scenario: unknown scenario {s:?} (expected one of {})", names.join(", ")));
                None
            }
        },
        None => {
            errs.push("scenario: missing required key".into());
            None
        }
    };
    let base_seed = root.u64(&mut errs, "base_seed").unwrap_or(0);
    if base_seed > MAX_SEED {
        errs.push(format!("base_seed: {base_seed} exceeds {MAX_SEED}"));
    }
    let out_dir = root.string(&mut errs, "out_dir").map(PathBuf::from);
    let record_runtime = root.boolean(&mut errs, "record_runtime").unwrap_or(false);

    let Some(scenario) = scenario else {
        root.mark_all_tables();
        root.finish(&mut errs);
        return Err(ConfigErrors(errs));
    };

    let mut sections = Sections::default();
    for (name, value) in &table {
        if matches!(name.as_str(), "scenario" | "base_seed" | "out_dir" | "record_runtime") {
            continue;
        }
        root.seen.insert(name.as_str());
        if name == "manifest" {
            continue;
        }
        let Some(t) = value.as_table() else {
            if scenario.sections().contains(&name.as_str()) {
                errs.push(format!("{name}: expected a [{name}] table"));
            } else {
                errs.push(format!("{name}: unknown key"));
            }
            continue;
        };
        if !scenario.sections().contains(&name.as_str()) {
            errs.push(format!("[{name}]: section is not used by scenario {scenario}"));
            continue;
        }
        sections.insert(name, Fields::new(name.clone(), t));
    }

    let plan = match scenario {
        Scenario::KdeRate => parse_kde_rate(&mut sections, &mut errs).map(Plan::KdeRate),
        Scenario::FullSynthetic | Scenario::Balanced | Scenario::RealEachGen | Scenario::Diffusion1d => {
            parse_loop_scenario(scenario, base_seed, &mut sections, &mut errs).map(Plan::Loop)
        }
        Scenario::FixedRatioSweep => parse_sweep(base_seed, &mut sections, &mut errs).map(Plan::Sweep),
        Scenario::BoundsReport => parse_bounds_report(&mut sections, &mut errs).map(Plan::Bounds),
        Scenario::PhaseTransition => parse_phase(&mut sections, &mut errs).map(Plan::Phase),
    };
    for f in sections.drain() {
        f.finish(&mut errs);
    }
    root.finish(&mut errs);

    match plan {
        Some(plan) if errs.is_empty() => {
            let mut source = table.clone();
            source.remove("manifest");
            Ok(ExperimentConfig { scenario, base_seed, out_dir, record_runtime, plan, source })
        }
        _ => Err(ConfigErrors(errs)),
    }
}

fn parse_kde_rate(s: &mut Sections<'_>, errs: &mut Vec<String>) -> Option<KdeRatePlan> {
    let p0 = parse_target(s.get("target"), errs);
    let generator = parse_generator(s.get("generator"), "kde", errs);
    let dim = p0.as_ref().map_or(1, |t| t.dim());
    let eval = parse_eval(s.get("eval"), dim, errs);
    let (mut sizes, mut seeds) = ((8..=14).map(|k| 1u64 << k).collect::<Vec<_>>(), 10);
    if let Some(f) = s.get("kde_rate") {
        if let Some(v) = f.count_list(errs, "sizes") {
            sizes = v;
        }
        if let Some(v) = f.count(errs, "seeds") {
            seeds = v as usize;
        }
    }
    let (kernel, smoothness) = match generator? {
        GeneratorSpec::Kde { kernel, smoothness } => (kernel, smoothness),
        GeneratorSpec::Diffusion { .. } => {
            errs.push("generator.kind: kde_rate needs a kde generator".into());
            return None;
        }
    };
    Some(KdeRatePlan { p0: p0?, kernel, smoothness, sizes, seeds, eval: eval? })
}

struct LoopShape {
    max_generation: usize,
    replicates: usize,
    sizes: Option<SampleSizeRule>,
}

fn parse_loop_shape(f: Option<&mut Fields<'_>>, with_sizes: bool, errs: &mut Vec<String>) -> Option<LoopShape> {
    let Some(f) = f else {
        errs.push("[loop]: missing required section".into());
        return None;
    };
    let max_generation = f.required(errs, "max_generation", Fields::count).map(|v| v as usize);
    let replicates = f.count(errs, "replicates").map_or(10, |v| v as usize);
    let mut sizes = None;
    if with_sizes {
        let mut rules = Vec::new();
        if let Some(n) = f.count(errs, "sample_size") {
            rules.push(SampleSizeRule::Constant(n));
        }
        if let Some(list) = f.count_list(errs, "sample_sizes") {
            rules.push(SampleSizeRule::Explicit(list));
        }
        if let Some(eps) = f.positive(errs, "quartic_eps") {
            rules.push(SampleSizeRule::Quartic { eps });
        }
        if let Some(eps) = f.positive(errs, "balanced_eps") {
            rules.push(SampleSizeRule::Balanced { eps });
        }
        match rules.len() {
            1 => sizes = rules.pop(),
            0 if f.had_errors => {}
            0 => errs.push("loop: one of sample_size, sample_sizes, quartic_eps, balanced_eps is required".into()),
            _ => errs.push("loop: sample_size, sample_sizes, quartic_eps and balanced_eps are mutually exclusive".into()),
        }
    }
    Some(LoopShape { max_generation: max_generation?, replicates, sizes })
}

fn parse_loop_scenario(
    scenario: Scenario,
    base_seed: u64,
    s: &mut Sections<'_>,
    errs: &mut Vec<String>,
) -> Option<LoopConfig> {
    let p0 = parse_target(s.get("target"), errs);
    let default_generator = if scenario == Scenario::Diffusion1d { "diffusion" } else { "kde" };
    let generator = parse_generator(s.get("generator"), default_generator, errs);
    let dim = p0.as_ref().map_or(1, |t| t.dim());
    let eval = parse_eval(s.get("eval"), dim, errs);
    let shape = parse_loop_shape(s.get("loop"), true, errs);
    let default_schedule = match scenario {
        Scenario::Balanced => "balanced",
        Scenario::RealEachGen => "real_each_gen",
        _ => "full_synthetic",
    };
    let schedule = shape
        .as_ref()
        .and_then(|sh| parse_schedule(s.get("schedule"), default_schedule, sh.max_generation, errs));
    let shape = shape?;
    Some(LoopConfig {
        generator: generator?,
        schedule: schedule?,
        p0: p0?,
        sample_sizes: shape.sizes?,
        max_generation: shape.max_generation,
        replicates: shape.replicates,
        base_seed,
        eval: eval?,
    })
}

fn parse_sweep(base_seed: u64, s: &mut Sections<'_>, errs: &mut Vec<String>) -> Option<SweepPlan> {
    let p0 = parse_target(s.get("target"), errs);
    let generator = parse_generator(s.get("generator"), "kde", errs);
    let dim = p0.as_ref().map_or(1, |t| t.dim());
    let eval = parse_eval(s.get("eval"), dim, errs);
    let shape = parse_loop_shape(s.get("loop"), false, errs);
    let (mut n_real, mut lambdas) = (512, vec![0.25, 1.0, 4.0, 16.0]);
    if let Some(f) = s.get("sweep") {
        if let Some(v) = f.count(errs, "n_real") {
            n_real = v;
        }
        if let Some(v) = f.float_list(errs, "lambdas") {
            if let Some(bad) = v.iter().find(|&&l| !(l >= 0.0 && l.is_finite())) {
                errs.push(format!("sweep.lambdas: {bad} is not a finite value >= 0"));
            } else if v.is_empty() {
                errs.push("sweep.lambdas: needs at least one value".into());
            } else {
                lambdas = v;
            }
        }
    }
    let shape = shape?;
    let base = LoopConfig {
        generator: generator?,
        schedule: MixtureSchedule::fixed_ratio(n_real, 0, shape.max_generation).ok()?,
        p0: p0?,
        sample_sizes: SampleSizeRule::Constant(n_real),
        max_generation: shape.max_generation,
        replicates: shape.replicates,
        base_seed,
        eval: eval?,
    };
    Some(SweepPlan { base, n_real, lambdas })
}

fn parse_bounds_report(s: &mut Sections<'_>, errs: &mut Vec<String>) -> Option<BoundsPlan> {
    let mut plan = BoundsPlan { schedules: vec![BoundSchedule::Balanced], max_i: 10, spec: BoundsSpec::default() };
    let Some(f) = s.get("bounds") else {
        return Some(plan);
    };
    if let Some(list) = f.string_list(errs, "schedules") {
        let mut parsed = Vec::new();
        for name in list {
            match BoundSchedule::parse(&name) {
                Some(b) => parsed.push(b),
                None => errs.push(format!(
                    "bounds.schedules: unknown schedule {name:?} (expected one of {})",
                    BoundSchedule::NAMES.join(", ")
                )),
            }
        }
        plan.schedules = parsed;
    }
    if let Some(v) = f.u64(errs, "max_i") {
        plan.max_i = v as usize;
    }
    let spec = &mut plan.spec;
    if let Some(v) = f.string(errs, "bound") {
        match BoundKind::parse(v) {
            Some(b) => spec.bound = b,
            None => errs.push(format!("bounds.bound: unknown bound {v:?} (expected diffusion, kde or flow)")),
        }
    }
    if let Some(v) = f.count(errs, "n") {
        spec.n = v;
    }
    if let Some(v) = f.count(errs, "dim") {
        spec.dim = v as usize;
    }
    if let Some(v) = f.float(errs, "delta") {
        if v > 0.0 && v < 1.0 {
            spec.delta = v;
        } else {
            errs.push(format!("bounds.delta: {v} must lie in (0, 1)"));
        }
    }
    if let Some(v) = f.nonneg(errs, "kl") {
        spec.kl = v;
    }
    if let Some(v) = f.count(errs, "smoothness") {
        spec.smoothness = v as u32;
    }
    if let Some(v) = f.nonneg(errs, "flow_norm") {
        spec.flow_norm = v;
    }
    if let Some(v) = f.float(errs, "alpha") {
        if v > 0.0 && v < 1.0 {
            spec.alpha = v;
        } else {
            errs.push(format!("bounds.alpha: {v} must lie in (0, 1)"));
        }
    }
    if let Some(v) = f.count(errs, "n_real") {
        spec.n_real = v;
    }
    if let Some(v) = f.u64(errs, "m_synth") {
        spec.m_synth = v;
    }
    Some(plan)
}

fn parse_phase(s: &mut Sections<'_>, errs: &mut Vec<String>) -> Option<PhasePlan> {
    let mut plan = PhasePlan { generations: (1..=6).collect(), lambda_max: 20.0, points: 401 };
    let Some(f) = s.get("phase") else {
        return Some(plan);
    };
    if let Some(v) = f.count_list(errs, "generations") {
        plan.generations = v.into_iter().map(|g| g as usize).collect();
    }
    if let Some(v) = f.positive(errs, "lambda_max") {
        plan.lambda_max = v;
    }
    if let Some(v) = f.count(errs, "points") {
        if v < 2 {
            errs.push("phase.points: needs at least 2 grid points".into());
        } else {
            plan.points = v as usize;
        }
    }
    Some(plan)
}

fn parse_target(f: Option<&mut Fields<'_>>, errs: &mut Vec<String>) -> Option<TargetDensity> {
    let Some(f) = f else {
        return TargetDensity::gauss1d(0.0, 1.0).ok();
    };
    let kind = f.string(errs, "kind").unwrap_or("gauss1d");
    let built = match kind {
        "gauss1d" => {
            let mean = f.float(errs, "mean").unwrap_or(0.0);
            let std = f.float(errs, "std").unwrap_or(1.0);
            TargetDensity::gauss1d(mean, std)
        }
        "mixture1d" => {
            let weights = f.required(errs, "weights", Fields::float_list);
            let means = f.required(errs, "means", Fields::float_list);
            let stds = f.required(errs, "stds", Fields::float_list);
            let (weights, means, stds) = (weights?, means?, stds?);
            if weights.len() != means.len() || weights.len() != stds.len() {
                errs.push(format!(
                    "target: weights, means and stds have lengths {}, {}, {}",
                    weights.len(),
                    means.len(),
                    stds.len()
                ));
                return None;
            }
            let comps = weights
                .iter()
                .zip(&means)
                .zip(&stds)
                .map(|((&weight, &mean), &std)| MixtureComponent { weight, mean, std })
                .collect();
            TargetDensity::mixture1d(comps)
        }
        "gauss2d" => {
            let mean = f.float_pair(errs, "mean").unwrap_or([0.0, 0.0]);
            let var = f.float_pair(errs, "var").unwrap_or([1.0, 1.0]);
            TargetDensity::gauss2d(mean, var)
        }
        other => {
            errs.push(format!("target.kind: unknown target {other:?} (expected gauss1d, mixture1d or gauss2d)"));
            f.mark(&["mean", "std", "weights", "means", "stds", "var"]);
            return None;
        }
    };
    built.map_err(|e| errs.push(format!("target: {e}"))).ok()
}

fn parse_generator(f: Option<&mut Fields<'_>>, default_kind: &str, errs: &mut Vec<String>) -> Option<GeneratorSpec> {
    match f {
        Some(f) => generator_from(f, default_kind, errs),
        None => generator_from(&mut Fields::new("generator".into(), &Table::new()), default_kind, errs),
    }
}

fn generator_from(f: &mut Fields<'_>, default_kind: &str, errs: &mut Vec<String>) -> Option<GeneratorSpec> {
    match f.string(errs, "kind").unwrap_or(default_kind) {
        "kde" => {
            let name = f.string(errs, "kernel").unwrap_or("gaussian");
            let order = f.count(errs, "order").map(|v| v as u32);
            let smoothness = f.count(errs, "smoothness").map_or(2, |v| v as u32);
            let kernel = match (name, order) {
                ("gaussian", None | Some(2)) => Ok(KernelSpec::gaussian()),
                ("gaussian", Some(k)) => KernelSpec::higher_order_gaussian(k),
                ("epanechnikov", None | Some(2)) => Ok(KernelSpec::epanechnikov()),
                ("epanechnikov", Some(k)) => {
                    errs.push(format!("generator.order: the epanechnikov kernel has order 2, not {k}"));
                    return None;
                }
                (other, _) => {
                    errs.push(format!("generator.kernel: unknown kernel {other:?} (expected gaussian or epanechnikov)"));
                    return None;
                }
            };
            let kernel = kernel.map_err(|e| errs.push(format!("generator: {e}"))).ok()?;
            Some(GeneratorSpec::Kde { kernel, smoothness })
        }
        "diffusion" => {
            let d = DiffusionConfig::default();
            let cfg = DiffusionConfig {
                horizon: f.positive(errs, "horizon").unwrap_or(d.horizon),
                t_min: f.positive(errs, "t_min").unwrap_or(d.t_min),
                reverse_steps: f.count(errs, "reverse_steps").map_or(d.reverse_steps, |v| v as usize),
                embed_dim: f.u64(errs, "embed_dim").map_or(d.embed_dim, |v| v as usize),
            };
            let width_factor = f.positive(errs, "width_factor").unwrap_or(1.0);
            let steps_factor = f.nonneg(errs, "steps_factor").unwrap_or(1.0);
            if let Err(e) = cfg.validate() {
                errs.push(format!("generator: {e}"));
                return None;
            }
            Some(GeneratorSpec::Diffusion { cfg, width_factor, steps_factor })
        }
        other => {
            errs.push(format!("generator.kind: unknown generator {other:?} (expected kde or diffusion)"));
            f.mark(&[
                "kernel", "order", "smoothness", "horizon", "t_min", "reverse_steps", "embed_dim", "width_factor",
                "steps_factor",
            ]);
            None
        }
    }
}

fn parse_eval(f: Option<&mut Fields<'_>>, dim: usize, errs: &mut Vec<String>) -> Option<EvalSettings> {
    let mut eval = EvalSettings::for_dim(dim);
    let Some(f) = f else {
        return Some(eval);
    };
    if let Some(v) = f.count(errs, "tv_intervals") {
        eval.tv_intervals = v as usize;
    }
    if let Some(v) = f.count(errs, "reference_size") {
        eval.reference_size = v as usize;
    }
    if let Some(v) = f.count(errs, "model_samples") {
        eval.model_samples = v as usize;
    }
    if let Some(v) = f.float(errs, "delta") {
        if v > 0.0 && v < 1.0 {
            eval.delta = v;
        } else {
            errs.push(format!("eval.delta: {v} must lie in (0, 1)"));
            return None;
        }
    }
    Some(eval)
}

fn parse_schedule(
    f: Option<&mut Fields<'_>>,
    default_kind: &str,
    max_generation: usize,
    errs: &mut Vec<String>,
) -> Option<MixtureSchedule> {
    let Some(f) = f else {
        return match default_kind {
            "balanced" => Some(MixtureSchedule::balanced(max_generation)),
            "real_each_gen" => {
                errs.push("[schedule]: real_each_gen needs a [schedule] section with alpha".into());
                None
            }
            _ => Some(MixtureSchedule::full_synthetic(max_generation)),
        };
    };
    let kind = f.string(errs, "kind").unwrap_or(default_kind);
    let built = match kind {
        "full_synthetic" => Ok(MixtureSchedule::full_synthetic(max_generation)),
        "balanced" => Ok(MixtureSchedule::balanced(max_generation)),
        "all_real" => Ok(MixtureSchedule::all_real(max_generation)),
        "real_each_gen" => {
            let alpha = f.required(errs, "alpha", Fields::float)?;
            MixtureSchedule::real_each_gen(alpha, max_generation)
        }
        "fixed_ratio" => {
            let n_real = f.required(errs, "n_real", Fields::u64);
            let m_synth = f.required(errs, "m_synth", Fields::u64);
            MixtureSchedule::fixed_ratio(n_real?, m_synth?, max_generation)
        }
        "general" => {
            let rows = parse_rows(f, errs)?;
            let needed = max_generation.saturating_sub(1);
            if rows.len() < needed {
                errs.push(format!(
                    "schedule.rows: {} row(s) cover generations 1..={} but the loop needs 1..={needed}",
                    rows.len(),
                    rows.len()
                ));
                return None;
            }
            let len = rows.len();
            MixtureSchedule::new(ScheduleKind::General(rows), len)
        }
        other => {
            errs.push(format!(
                "schedule.kind: unknown schedule {other:?} (expected full_synthetic, balanced, fixed_ratio, real_each_gen, all_real or general)"
            ));
            f.mark(&["alpha", "n_real", "m_synth", "rows"]);
            return None;
        }
    };
    built.map_err(|e| errs.push(format!("schedule: {e}"))).ok()
}

// Validates every row so all simplex violations are reported at once.
fn parse_rows(f: &mut Fields<'_>, errs: &mut Vec<String>) -> Option<Vec<WeightRow>> {
    let Some(value) = f.raw("rows") else {
        errs.push("schedule.rows: missing required key for a general schedule".into());
        return None;
    };
    let Some(items) = value.as_array() else {
        errs.push("schedule.rows: expected an array of tables ([[schedule.rows]])".into());
        return None;
    };
    let mut rows = Vec::with_capacity(items.len());
    let mut ok = true;
    for (idx, item) in items.iter().enumerate() {
        let generation = idx + 1;
        let path = format!("schedule.rows[{idx}]");
        let Some(t) = item.as_table() else {
            errs.push(format!("{path}: expected a table with alpha and betas"));
            ok = false;
            continue;
        };
        let mut rf = Fields::new(path.clone(), t);
        let alpha = rf.required(errs, "alpha", Fields::float);
        let betas = rf.required(errs, "betas", Fields::float_list);
        rf.finish(errs);
        let (Some(alpha), Some(betas)) = (alpha, betas) else {
            ok = false;
            continue;
        };
        if betas.len() != generation {
            errs.push(format!("{path}: generation {generation} needs {generation} betas, found {}", betas.len()));
            ok = false;
            continue;
        }
        let row = WeightRow::new(alpha, betas);
        if let Err(e) = row.validate(generation) {
            errs.push(format!("{path}: {e}"));
            ok = false;
            continue;
        }
        rows.push(row);
    }
    ok.then_some(rows)
}

#[derive(Default)]
struct Sections<'a> {
    items: Vec<(String, Fields<'a>)>,
}

impl<'a> Sections<'a> {
    fn insert(&mut self, name: &str, f: Fields<'a>) {
        self.items.push((name.to_string(), f));
    }

    fn get(&mut self, name: &str) -> Option<&mut Fields<'a>> {
        self.items.iter_mut().find(|(n, _)| n == name).map(|(_, f)| f)
    }

    fn drain(&mut self) -> impl Iterator<Item = Fields<'a>> + '_ {
        self.items.drain(..).map(|(_, f)| f)
    }
}

/// One TOML table plus the keys read from it; unread keys are reported as
/// unknown by [`Fields::finish`].
struct Fields<'a> {
    path: String,
    table: &'a Table,
    seen: BTreeSet<&'a str>,
    had_errors: bool,
}

impl<'a> Fields<'a> {
    fn new(path: String, table: &'a Table) -> Self {
        Self { path, table, seen: BTreeSet::new(), had_errors: false }
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn raw(&mut self, k: &str) -> Option<&'a Value> {
        let (name, value) = self.table.get_key_value(k)?;
        self.seen.insert(name.as_str());
        Some(value)
    }

    fn mark(&mut self, keys: &[&str]) {
        for k in keys {
            self.raw(k);
        }
    }

    fn mark_all_tables(&mut self) {
        for (k, v) in self.table {
            if v.is_table() {
                self.seen.insert(k.as_str());
            }
        }
    }

    fn fail(&mut self, errs: &mut Vec<String>, k: &str, msg: String) {
        self.had_errors = true;
        errs.push(format!("{}: {msg}", self.key(k)));
    }

    fn required<T>(
        &mut self,
        errs: &mut Vec<String>,
        k: &str,
        get: fn(&mut Self, &mut Vec<String>, &str) -> Option<T>,
    ) -> Option<T> {
        if !self.table.contains_key(k) {
            self.fail(errs, k, "missing required key".into());
            return None;
        }
        get(self, errs, k)
    }

    fn float(&mut self, errs: &mut Vec<String>, k: &str) -> Option<f64> {
        let v = self.raw(k)?;
        match v {
            Value::Float(x) if x.is_finite() => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            other => {
                self.fail(errs, k, format!("expected a finite number, found {other}"));
                None
            }
        }
    }

    fn positive(&mut self, errs: &mut Vec<String>, k: &str) -> Option<f64> {
        let v = self.float(errs, k)?;
        if v > 0.0 {
            Some(v)
        } else {
            self.fail(errs, k, format!("must be > 0, found {v}"));
            None
        }
    }

    fn nonneg(&mut self, errs: &mut Vec<String>, k: &str) -> Option<f64> {
        let v = self.float(errs, k)?;
        if v >= 0.0 {
            Some(v)
        } else {
            self.fail(errs, k, format!("must be >= 0, found {v}"));
            None
        }
    }

    fn u64(&mut self, errs: &mut Vec<String>, k: &str) -> Option<u64> {
        let v = self.raw(k)?;
        match v {
            Value::Integer(i) if *i >= 0 => Some(*i as u64),
            other => {
                self.fail(errs, k, format!("expected a non-negative integer, found {other}"));
                None
            }
        }
    }

    fn count(&mut self, errs: &mut Vec<String>, k: &str) -> Option<u64> {
        let v = self.raw(k)?;
        match v {
            Value::Integer(i) if *i >= 1 => Some(*i as u64),
            other => {
                self.fail(errs, k, format!("expected a positive integer, found {other}"));
                None
            }
        }
    }

    fn boolean(&mut self, errs: &mut Vec<String>, k: &str) -> Option<bool> {
        let v = self.raw(k)?;
        match v {
            Value::Boolean(b) => Some(*b),
            other => {
                self.fail(errs, k, format!("expected true or false, found {other}"));
                None
            }
        }
    }

    fn string(&mut self, errs: &mut Vec<String>, k: &str) -> Option<&'a str> {
        let v = self.raw(k)?;
        match v {
            Value::String(s) => Some(s.as_str()),
            other => {
                self.fail(errs, k, format!("expected a string, found {other}"));
                None
            }
        }
    }

    fn array(&mut self, errs: &mut Vec<String>, k: &str) -> Option<&'a [Value]> {
        let v = self.raw(k)?;
        match v {
            Value::Array(a) => Some(a.as_slice()),
            other => {
                self.fail(errs, k, format!("expected an array, found {other}"));
                None
            }
        }
    }

    fn float_list(&mut self, errs: &mut Vec<String>, k: &str) -> Option<Vec<f64>> {
        let items = self.array(errs, k)?;
        let mut out = Vec::with_capacity(items.len());
        for (idx, v) in items.iter().enumerate() {
            match v {
                Value::Float(x) if x.is_finite() => out.push(*x),
                Value::Integer(i) => out.push(*i as f64),
                other => {
                    self.fail(errs, &format!("{k}[{idx}]"), format!("expected a finite number, found {other}"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn count_list(&mut self, errs: &mut Vec<String>, k: &str) -> Option<Vec<u64>> {
        let items = self.array(errs, k)?;
        if items.is_empty() {
            self.fail(errs, k, "needs at least one entry".into());
            return None;
        }
        let mut out = Vec::with_capacity(items.len());
        for (idx, v) in items.iter().enumerate() {
            match v {
                Value::Integer(i) if *i >= 1 => out.push(*i as u64),
                other => {
                    self.fail(errs, &format!("{k}[{idx}]"), format!("expected a positive integer, found {other}"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn string_list(&mut self, errs: &mut Vec<String>, k: &str) -> Option<Vec<String>> {
        let items = self.array(errs, k)?;
        let mut out = Vec::with_capacity(items.len());
        for (idx, v) in items.iter().enumerate() {
            match v {
                Value::String(s) => out.push(s.clone()),
                other => {
                    self.fail(errs, &format!("{k}[{idx}]"), format!("expected a string, found {other}"));
                    return None;
                }
            }
        }
        Some(out)
    }

    fn float_pair(&mut self, errs: &mut Vec<String>, k: &str) -> Option<[f64; 2]> {
        let list = self.float_list(errs, k)?;
        match list.as_slice() {
            [a, b] => Some([*a, *b]),
            _ => {
                self.fail(errs, k, format!("expected 2 numbers, found {}", list.len()));
                None
            }
        }
    }

    fn finish(self, errs: &mut Vec<String>) {
        for k in self.table.keys() {
            if !self.seen.contains(k.as_str()) {
                errs.push(format!("{}: unknown key", self.key(k)));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_section_for_scenario_is_rejected() {
        let err = parse_config("scenario = \"phase_transition\"\n[loop]\nmax_generation = 3\n").unwrap_err();
        assert_eq!(err.0, vec!["[loop]: section is not used by scenario phase_transition".to_string()]);
    }

    #[test]
    fn manifest_section_is_ignored_and_dropped_from_source() {
        let cfg = parse_config("scenario = \"phase_transition\"\n[manifest]\nseed = 3\n").unwrap();
        assert!(!cfg.source().contains_key("manifest"));
    }

    #[test]
    fn sample_size_rules_are_exclusive() {
        let text = "scenario = \"full_synthetic\"\n[loop]\nmax_generation = 3\nsample_size = 10\nquartic_eps = 1.0\n";
        let err = parse_config(text).unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert!(err.0[0].contains("mutually exclusive"));
    }

    #[test]
    fn seed_override_updates_plan_and_echo() {
        let text = "scenario = \"full_synthetic\"\nbase_seed = 4\n[loop]\nmax_generation = 2\nsample_size = 64\n";
        let mut cfg = parse_config(text).unwrap();
        cfg.set_seed(99).unwrap();
        let Plan::Loop(lc) = &cfg.plan else { panic!("loop plan expected") };
        assert_eq!(lc.base_seed, 99);
        assert_eq!(cfg.source()["base_seed"].as_integer(), Some(99));
        assert!(cfg.set_seed(u64::MAX).is_err());
    }
}
