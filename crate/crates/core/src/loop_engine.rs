//! The self-consuming loop.
//!
//! Record `g = 1..=I` describes model `g`, trained from scratch on `n_{g-1}`
//! draws from the training mixture `p_{g-1}`, where `p_0` is the real
//! distribution and for `i >= 1`
//! `p_i = alpha_i p_0 + sum_{k=1}^{i} beta_i^k p_{theta_k}`.
//! Its bound value is the generation-`i = g - 1` bound over `n_0..n_{g-1}`.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::bounds::{bound_diffusion, bound_kde, required_samples_balanced, required_samples_quartic, BoundInputs};
use crate::diffusion::{self, init_scorenet, train, DiffusionConfig, DiffusionGenerator, LearningRate};
use crate::distributions::{sample, Density, SampleSet, Sampler, SupportBox, TargetDensity};
use crate::divergences::{tv_histogram, tv_quadrature, TVEstimate};
use crate::kernel_density::{fit, KdeModel, KernelSpec};
use crate::mixing::{sample_mixture, MixtureSchedule, WeightRow};
use crate::quadrature::Grid;
use crate::rng::{derive_path, SimRng};
use crate::stats::quantile;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorSpec {
    Kde { kernel: KernelSpec, smoothness: u32 },
    /// Width `m = ceil(width_factor n)`, steps `tau = ceil(steps_factor sqrt(n))`.
    Diffusion { cfg: DiffusionConfig, width_factor: f64, steps_factor: f64 },
}

impl GeneratorSpec {
    pub fn label(&self) -> &'static str {
        match self {
            GeneratorSpec::Kde { .. } => "kde",
            GeneratorSpec::Diffusion { .. } => "diffusion",
        }
    }
}

/// Rule for the training-set sizes `n_0..n_{I-1}`.
#[derive(Debug, Clone, PartialEq)]
pub enum SampleSizeRule {
    Constant(u64),
    Explicit(Vec<u64>),
    /// `n_k = ceil((I sqrt(d) / eps)^4)` for every `k`.
    Quartic { eps: f64 },
    /// The balanced-cycle schedule for generation `I - 1`.
    Balanced { eps: f64 },
}

/// Largest training set a loop accepts.
pub const MAX_SAMPLE_SIZE: u64 = 50_000_000;

impl SampleSizeRule {
    pub fn sizes(&self, max_generation: usize, dim: usize) -> Result<Vec<u64>> {
        let sizes = match self {
            SampleSizeRule::Constant(n) => alloc::vec![*n; max_generation],
            SampleSizeRule::Explicit(list) => {
                if list.len() < max_generation {
                    return Err(Error::SizeMismatch { what: "sample_sizes", expected: max_generation, found: list.len() });
                }
                list[..max_generation].to_vec()
            }
            SampleSizeRule::Quartic { eps } => {
                alloc::vec![required_samples_quartic(max_generation, dim, *eps)?; max_generation]
            }
            SampleSizeRule::Balanced { eps } => required_samples_balanced(max_generation - 1, dim, *eps)?,
        };
        if let Some(&bad) = sizes.iter().find(|&&n| n == 0 || n > MAX_SAMPLE_SIZE) {
            return Err(Error::invalid(alloc::format!("sample size {bad} outside 1..={MAX_SAMPLE_SIZE}")));
        }
        Ok(sizes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    /// Quadrature intervals per axis for KDE TV.
    pub tv_intervals: usize,
    /// Fresh `p_0` points for the diffusion histogram TV.
    pub reference_size: usize,
    /// Generator draws for the diffusion histogram TV.
    pub model_samples: usize,
    pub delta: f64,
}

impl EvalSettings {
    pub fn for_dim(dim: usize) -> Self {
        Self {
            tv_intervals: if dim == 1 { 4096 } else { 1024 },
            reference_size: 100_000,
            model_samples: 10_000,
            delta: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfig {
    pub generator: GeneratorSpec,
    pub schedule: MixtureSchedule,
    pub p0: TargetDensity,
    pub sample_sizes: SampleSizeRule,
    pub max_generation: usize,
    pub replicates: usize,
    pub base_seed: u64,
    pub eval: EvalSettings,
}

impl LoopConfig {
    pub fn validate(&self) -> Result<Vec<u64>> {
        if self.max_generation == 0 {
            return Err(Error::invalid("max_generation must be >= 1"));
        }
        if self.replicates == 0 {
            return Err(Error::invalid("replicates must be >= 1"));
        }
        if self.schedule.max_generation() + 1 < self.max_generation {
            return Err(Error::invalid(alloc::format!(
                "schedule covers {} generations, loop needs {}",
                self.schedule.max_generation(),
                self.max_generation - 1
            )));
        }
        if !(self.eval.delta > 0.0 && self.eval.delta < 1.0) {
            return Err(Error::invalid("delta must lie in (0, 1)"));
        }
        match &self.generator {
            GeneratorSpec::Kde { kernel, smoothness } => {
                if !kernel.is_nonneg() {
                    return Err(Error::SignedKernelSampling { order: kernel.order() });
                }
                if *smoothness == 0 {
                    return Err(Error::invalid("smoothness must be >= 1"));
                }
            }
            GeneratorSpec::Diffusion { cfg, width_factor, steps_factor } => {
                cfg.validate()?;
                if !(*width_factor > 0.0) || !(*steps_factor >= 0.0) {
                    return Err(Error::invalid("width and step factors must be positive"));
                }
            }
        }
        self.sample_sizes.sizes(self.max_generation, self.p0.dim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainDiagnostics {
    Kde { bandwidth: f64, variance_warning: bool },
    Diffusion { steps: usize, width: usize, learning_rate: f64, final_loss: f64, rkhs_norm: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    pub n_total: usize,
    pub n_real: usize,
    /// Draws from models `1..g-1`, in order.
    pub n_synth: Vec<usize>,
    pub tv_to_p0: TVEstimate,
    /// TV between model `g` and its training mixture `p_{g-1}`.
    pub tv_to_prev_mixture: TVEstimate,
    pub bound_value: f64,
    /// Prior KL of the training data's Gaussian moment match (diffusion only).
    pub kl_prior: Option<f64>,
    pub train: TrainDiagnostics,
    pub seed: u64,
    pub runtime_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopTrace {
    pub config: LoopConfig,
    pub replicate: usize,
    pub seed: u64,
    pub records: Vec<GenerationRecord>,
}

/// Optional wall clock; the core never reads time on its own.
pub trait Clock {
    fn now_ms(&self) -> Option<f64>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn now_ms(&self) -> Option<f64> {
        None
    }
}

/// Finite mixture of densities.
pub struct MixtureDensity<'a> {
    parts: Vec<(f64, &'a dyn Density)>,
    dim: usize,
}

impl<'a> MixtureDensity<'a> {
    pub fn new(parts: Vec<(f64, &'a dyn Density)>) -> Result<Self> {
        let dim = parts.first().map(|p| p.1.dim()).ok_or(Error::invalid("empty mixture"))?;
        if let Some(p) = parts.iter().find(|p| p.1.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: p.1.dim() });
        }
        Ok(Self { parts, dim })
    }
}

impl Density for MixtureDensity<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn density(&self, x: &[f64]) -> f64 {
        self.parts.iter().map(|(w, d)| w * d.density(x)).sum()
    }

    fn density_on_grid(&self, grid: &Grid) -> Vec<f64> {
        let mut acc = alloc::vec![0.0; grid.node_count()];
        for (w, d) in &self.parts {
            if *w != 0.0 {
                for (a, v) in acc.iter_mut().zip(d.density_on_grid(grid)) {
                    *a += w * v;
                }
            }
        }
        acc
    }
}

enum Model {
    Kde(KdeModel),
    Diffusion(Box<DiffusionGenerator>),
}

impl Model {
    fn sampler(&self) -> &dyn Sampler {
        match self {
            Model::Kde(k) => k,
            Model::Diffusion(g) => g.as_ref(),
        }
    }
}

// Placeholder for a released model; its weight is always zero.
struct Retired(usize);

impl Sampler for Retired {
    fn dim(&self) -> usize {
        self.0
    }

    fn draw(&self, _rng: &mut SimRng, _out: &mut Vec<f64>) -> Result<()> {
        Err(Error::invalid("drew from a released model"))
    }
}

// seed-path tags; evaluation streams live under their own root tag
const TAG_MIX: u64 = 0;
const TAG_INIT: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_MODEL_EVAL: u64 = 3;
const EVAL_ROOT: u64 = 0x6576_616c;

/// Seed of replicate `r`.
pub fn replicate_seed(base_seed: u64, replicate: usize) -> u64 {
    base_seed.wrapping_add(replicate as u64)
}

/// Runs one replicate.
pub fn run_loop(cfg: &LoopConfig, replicate: usize, clock: &dyn Clock) -> Result<LoopTrace> {
    let sizes = cfg.validate()?;
    let seed = replicate_seed(cfg.base_seed, replicate);
    let dim = cfg.p0.dim();
    let retired = Retired(dim);
    let mut models: Vec<Option<Model>> = Vec::with_capacity(cfg.max_generation);
    // per-generation training-data moments for the diffusion KL terms
    let mut kl_terms: Vec<f64> = Vec::with_capacity(cfg.max_generation);
    let mut records = Vec::with_capacity(cfg.max_generation);

    for g in 1..=cfg.max_generation {
        let start = clock.now_ms();
        let i = g - 1;
        let n = sizes[i] as usize;
        let row = if i == 0 { WeightRow::new(1.0, Vec::new()) } else { cfg.schedule.weights_at(i).map_err(|e| e.at_generation(g))? };
        let gen_seed = derive_path(seed, &[g as u64]);
        let draw = {
            let components: Vec<&dyn Sampler> =
                models.iter().map(|m| m.as_ref().map_or(&retired as &dyn Sampler, |m| m.sampler())).collect();
            sample_mixture(&cfg.p0, &components, &row, n, derive_path(gen_seed, &[TAG_MIX]))
                .map_err(|e| e.at_generation(g))?
        };
        let data = draw.samples;

        let (model, train_diag, kl_prior) = train_model(cfg, &data, gen_seed).map_err(|e| e.at_generation(g))?;
        if let Some(k) = kl_prior {
            kl_terms.push(k);
        }

        let (tv_to_p0, tv_prev) =
            evaluate(cfg, &model, &models, &row, &data, seed, gen_seed, g).map_err(|e| e.at_generation(g))?;

        let bound_value = bound_for(cfg, &sizes[..g], &kl_terms).map_err(|e| e.at_generation(g))?;

        models.push(Some(model));
        if !cfg.schedule.retains_all_models() {
            let last = models.len() - 1;
            models[..last].iter_mut().for_each(|m| *m = None);
        }

        let runtime_ms = match (start, clock.now_ms()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        };
        records.push(GenerationRecord {
            generation: g,
            n_total: n,
            n_real: draw.source_counts[0],
            n_synth: draw.source_counts[1..].to_vec(),
            tv_to_p0,
            tv_to_prev_mixture: tv_prev,
            bound_value,
            kl_prior,
            train: train_diag,
            seed: gen_seed,
            runtime_ms,
        });
    }
    Ok(LoopTrace { config: cfg.clone(), replicate, seed, records })
}

fn train_model(cfg: &LoopConfig, data: &SampleSet, gen_seed: u64) -> Result<(Model, TrainDiagnostics, Option<f64>)> {
    match &cfg.generator {
        GeneratorSpec::Kde { kernel, smoothness } => {
            let model = fit(data.clone(), *kernel, *smoothness)?;
            let diag = TrainDiagnostics::Kde { bandwidth: model.bandwidth(), variance_warning: model.variance_warning() };
            Ok((Model::Kde(model), diag, None))
        }
        GeneratorSpec::Diffusion { cfg: dcfg, width_factor, steps_factor } => {
            let n = data.len();
            let width = (libm::ceil(width_factor * n as f64) as usize).max(1);
            let steps = diffusion::default_steps(n, *steps_factor);
            let mut net = init_scorenet(width, data.dim(), dcfg, derive_path(gen_seed, &[TAG_INIT]))?;
            let report = train(&mut net, data, LearningRate::Stable, steps, derive_path(gen_seed, &[TAG_TRAIN]))?;
            let diag = TrainDiagnostics::Diffusion {
                steps: report.steps_run,
                width,
                learning_rate: report.learning_rate,
                final_loss: report.losses.last().copied().unwrap_or(f64::NAN),
                rkhs_norm: report.rkhs_norms.last().copied().unwrap_or(0.0),
            };
            let kl = diffusion::prior_kl_moments(&data.mean(), &data.variance(), dcfg.horizon);
            Ok((Model::Diffusion(Box::new(DiffusionGenerator::new(net, report))), diag, Some(kl)))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    cfg: &LoopConfig,
    model: &Model,
    previous: &[Option<Model>],
    row: &WeightRow,
    data: &SampleSet,
    replicate_seed: u64,
    gen_seed: u64,
    g: usize,
) -> Result<(TVEstimate, TVEstimate)> {
    match model {
        Model::Kde(kde) => {
            let region = kde_region(cfg.p0.support_hint(), core::iter::once(kde).chain(previous.iter().filter_map(|m| match m {
                Some(Model::Kde(k)) => Some(k),
                _ => None,
            })))?;
            let to_p0 = tv_quadrature(kde, &cfg.p0, &region, cfg.eval.tv_intervals)?;
            let mut parts: Vec<(f64, &dyn Density)> = alloc::vec![(row.alpha, &cfg.p0 as &dyn Density)];
            for (k, m) in previous.iter().enumerate() {
                let w = row.beta(k + 1);
                if w == 0.0 {
                    continue;
                }
                match m {
                    Some(Model::Kde(prev)) => parts.push((w, prev)),
                    _ => return Err(Error::invalid("training mixture references a released model")),
                }
            }
            let mixture = MixtureDensity::new(parts)?;
            let to_prev = tv_quadrature(kde, &mixture, &region, cfg.eval.tv_intervals)?;
            Ok((to_p0, to_prev))
        }
        Model::Diffusion(generator) => {
            let reference = sample(&cfg.p0, cfg.eval.reference_size, derive_path(replicate_seed, &[EVAL_ROOT, g as u64]));
            let drawn = generator.sample(cfg.eval.model_samples, derive_path(gen_seed, &[TAG_MODEL_EVAL]))?;
            let to_p0 = tv_histogram(&drawn, &reference, None, None)?;
            // the training set is itself an i.i.d. draw from p_{g-1}
            let to_prev = tv_histogram(&drawn, data, None, None)?;
            Ok((to_p0, to_prev))
        }
    }
}

// p0's box widened to hold every KDE's data plus its kernel reach
fn kde_region<'a>(base: &SupportBox, models: impl Iterator<Item = &'a KdeModel>) -> Result<SupportBox> {
    let mut bounds = base.bounds().to_vec();
    for m in models {
        let reach = m.kernel().cutoff() * m.bandwidth();
        for p in m.samples().iter() {
            for (k, &v) in p.iter().enumerate() {
                bounds[k].0 = bounds[k].0.min(v - reach);
                bounds[k].1 = bounds[k].1.max(v + reach);
            }
        }
    }
    SupportBox::new(bounds)
}

fn bound_for(cfg: &LoopConfig, sizes: &[u64], kl_terms: &[f64]) -> Result<f64> {
    let inputs = BoundInputs::new(sizes.to_vec(), cfg.p0.dim(), cfg.eval.delta)?;
    match &cfg.generator {
        GeneratorSpec::Kde { smoothness, .. } => Ok(bound_kde(&cfg.schedule, &inputs.with_smoothness(*smoothness)?)?.total),
        GeneratorSpec::Diffusion { .. } => Ok(bound_diffusion(&cfg.schedule, &inputs.with_kl(kl_terms.to_vec())?)?.total),
    }
}

/// Per-generation replicate summary of `tv_to_p0`.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSummary {
    pub generation: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

impl GenerationSummary {
    pub fn iqr(&self) -> f64 {
        self.q75 - self.q25
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopSummary {
    pub generations: Vec<GenerationSummary>,
}

impl LoopSummary {
    pub fn from_traces(traces: &[LoopTrace]) -> Self {
        let count = traces.first().map_or(0, |t| t.records.len());
        let generations = (0..count)
            .map(|k| {
                let tv: Vec<f64> = traces.iter().map(|t| t.records[k].tv_to_p0.value).collect();
                GenerationSummary {
                    generation: k + 1,
                    median: quantile(&tv, 0.5),
                    q25: quantile(&tv, 0.25),
                    q75: quantile(&tv, 0.75),
                }
            })
            .collect();
        Self { generations }
    }

    pub fn medians(&self) -> Vec<f64> {
        self.generations.iter().map(|g| g.median).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRun {
    pub traces: Vec<LoopTrace>,
    pub summary: LoopSummary,
}

/// Runs replicates `0..replicates` with seeds `base_seed + r`.
pub fn run_replicates(cfg: &LoopConfig, clock: &dyn Clock) -> Result<ReplicateRun> {
    cfg.validate()?;
    let traces = (0..cfg.replicates).map(|r| run_loop(cfg, r, clock)).collect::<Result<Vec<_>>>()?;
    let summary = LoopSummary::from_traces(&traces);
    Ok(ReplicateRun { traces, summary })
}

/// Short human label for a schedule and generator pair.
pub fn describe(cfg: &LoopConfig) -> String {
    alloc::format!("{}/{}", cfg.generator.label(), cfg.schedule.label())
}
