//! Mixture schedules: the weight `alpha_i` on real data and `beta_i^k` on
//! the model of generation `k` for every training generation `i >= 1`.

use alloc::format;
use alloc::vec::Vec;

use crate::distributions::{SampleSet, Sampler};
use crate::rng::{seeded, uniform01};
use crate::{Error, Result};

pub const SIMPLEX_TOL: f64 = 1e-12;

/// One simplex row: `alpha` for real data, `betas[k-1]` for model `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub alpha: f64,
    pub betas: Vec<f64>,
}

impl WeightRow {
    pub fn new(alpha: f64, betas: Vec<f64>) -> Self {
        Self { alpha, betas }
    }

    /// Checks nonnegativity and unit sum; `generation` only labels the error.
    pub fn validate(&self, generation: usize) -> Result<()> {
        let bad = |detail: alloc::string::String| Error::SimplexViolation { generation, detail };
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(bad(format!("alpha = {} must be >= 0", self.alpha)));
        }
        for (k, &b) in self.betas.iter().enumerate() {
            if !(b.is_finite() && b >= 0.0) {
                return Err(bad(format!("beta^{} = {b} must be >= 0", k + 1)));
            }
        }
        let total = self.alpha + self.betas.iter().sum::<f64>();
        if libm::fabs(total - 1.0) > SIMPLEX_TOL {
            return Err(bad(format!("weights sum to {total}")));
        }
        Ok(())
    }

    /// `beta_i^k` with 1-based `k`; zero past the row.
    pub fn beta(&self, k: usize) -> f64 {
        self.betas.get(k.wrapping_sub(1)).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleKind {
    /// Explicit rows; row `i - 1` holds generation `i` with `i` betas.
    General(Vec<WeightRow>),
    FullSynthetic,
    Balanced,
    FixedRatio { n_real: u64, m_synth: u64 },
    RealEachGen { alpha: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSchedule {
    kind: ScheduleKind,
    max_generation: usize,
}

impl MixtureSchedule {
    pub fn new(kind: ScheduleKind, max_generation: usize) -> Result<Self> {
        match &kind {
            ScheduleKind::General(rows) => {
                if rows.len() < max_generation {
                    return Err(Error::invalid(format!(
                        "general schedule has {} rows but max_generation is {max_generation}",
                        rows.len()
                    )));
                }
                for (idx, row) in rows.iter().enumerate() {
                    let generation = idx + 1;
                    if row.betas.len() != generation {
                        return Err(Error::SimplexViolation {
                            generation,
                            detail: format!("expected {generation} betas, found {}", row.betas.len()),
                        });
                    }
                    row.validate(generation)?;
                }
            }
            ScheduleKind::FixedRatio { n_real, m_synth } => {
                if n_real + m_synth == 0 {
                    return Err(Error::invalid("fixed ratio needs n + m > 0"));
                }
            }
            ScheduleKind::RealEachGen { alpha } => {
                if !(0.0..=1.0).contains(alpha) {
                    return Err(Error::invalid(format!("real-each-generation alpha {alpha} outside [0, 1]")));
                }
            }
            ScheduleKind::FullSynthetic | ScheduleKind::Balanced => {}
        }
        Ok(Self { kind, max_generation })
    }

    pub fn full_synthetic(max_generation: usize) -> Self {
        Self { kind: ScheduleKind::FullSynthetic, max_generation }
    }

    pub fn balanced(max_generation: usize) -> Self {
        Self { kind: ScheduleKind::Balanced, max_generation }
    }

    pub fn fixed_ratio(n_real: u64, m_synth: u64, max_generation: usize) -> Result<Self> {
        Self::new(ScheduleKind::FixedRatio { n_real, m_synth }, max_generation)
    }

    pub fn real_each_gen(alpha: f64, max_generation: usize) -> Result<Self> {
        Self::new(ScheduleKind::RealEachGen { alpha }, max_generation)
    }

    /// General schedule whose every row is pure real data.
    pub fn all_real(max_generation: usize) -> Self {
        let rows = (1..=max_generation).map(|i| WeightRow::new(1.0, alloc::vec![0.0; i])).collect();
        Self { kind: ScheduleKind::General(rows), max_generation }
    }

    pub fn kind(&self) -> &ScheduleKind {
        &self.kind
    }

    pub fn max_generation(&self) -> usize {
        self.max_generation
    }

    /// Short label used in CSV output.
    pub fn label(&self) -> &'static str {
        match self.kind {
            ScheduleKind::General(_) => "general",
            ScheduleKind::FullSynthetic => "full_synthetic",
            ScheduleKind::Balanced => "balanced",
            ScheduleKind::FixedRatio { .. } => "fixed_ratio",
            ScheduleKind::RealEachGen { .. } => "real_each_gen",
        }
    }

    /// Whether training mixtures can reach models older than the latest one.
    pub fn retains_all_models(&self) -> bool {
        matches!(self.kind, ScheduleKind::General(_) | ScheduleKind::Balanced)
    }

    pub fn weights_at(&self, i: usize) -> Result<WeightRow> {
        if i == 0 || i > self.max_generation {
            return Err(Error::GenerationOutOfRange { generation: i, max: self.max_generation });
        }
        let latest_only = |alpha: f64, last: f64| {
            let mut betas = alloc::vec![0.0; i];
            betas[i - 1] = last;
            WeightRow::new(alpha, betas)
        };
        let row = match &self.kind {
            ScheduleKind::General(rows) => rows[i - 1].clone(),
            ScheduleKind::FullSynthetic => latest_only(0.0, 1.0),
            ScheduleKind::Balanced => {
                let w = 1.0 / (i as f64 + 1.0);
                WeightRow::new(w, alloc::vec![w; i])
            }
            ScheduleKind::FixedRatio { n_real, m_synth } => {
                let total = (*n_real + *m_synth) as f64;
                latest_only(*n_real as f64 / total, *m_synth as f64 / total)
            }
            ScheduleKind::RealEachGen { alpha } => latest_only(*alpha, 1.0 - alpha),
        };
        row.validate(i)?;
        Ok(row)
    }
}

/// Draws plus how many came from each source (`[real, model 1, ..., model i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureDraw {
    pub samples: SampleSet,
    pub source_counts: Vec<usize>,
}

/// `n` draws from `alpha * real + sum_k beta_k * components[k]`: each draw picks
/// a source categorically, then samples it.
pub fn sample_mixture(
    real: &dyn Sampler,
    components: &[&dyn Sampler],
    weights: &WeightRow,
    n: usize,
    seed: u64,
) -> Result<MixtureDraw> {
    if weights.betas.len() != components.len() {
        return Err(Error::ComponentCountMismatch { weights: weights.betas.len(), components: components.len() });
    }
    weights.validate(components.len())?;
    let dim = real.dim();
    for c in components {
        if c.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: c.dim() });
        }
    }
    let mut cumulative = Vec::with_capacity(components.len() + 1);
    let mut acc = weights.alpha;
    cumulative.push(acc);
    for &b in &weights.betas {
        acc += b;
        cumulative.push(acc);
    }
    // rounding can leave the total a hair under 1; fall back to the last
    // source with positive weight
    let last_positive = weights.betas.iter().rposition(|&w| w > 0.0).map_or(0, |k| k + 1);

    let mut rng = seeded(seed);
    let mut points = Vec::with_capacity(n * dim);
    let mut counts = alloc::vec![0usize; components.len() + 1];
    for _ in 0..n {
        let u = uniform01(&mut rng);
        let source = cumulative.iter().position(|&c| u < c).unwrap_or(last_positive);
        counts[source] += 1;
        if source == 0 {
            real.draw(&mut rng, &mut points)?;
        } else {
            components[source - 1].draw(&mut rng, &mut points)?;
        }
    }
    Ok(MixtureDraw { samples: SampleSet::new(dim, points, seed)?, source_counts: counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::TargetDensity;
    use crate::rng::SimRng;
    use proptest::prelude::*;

    struct PointMass(f64);

    impl Sampler for PointMass {
        fn dim(&self) -> usize {
            1
        }
        fn draw(&self, _rng: &mut SimRng, out: &mut Vec<f64>) -> Result<()> {
            out.push(self.0);
            Ok(())
        }
    }

    #[test]
    fn weights_examples() {
        let b = MixtureSchedule::balanced(5).weights_at(2).unwrap();
        assert_eq!(b, WeightRow::new(1.0 / 3.0, alloc::vec![1.0 / 3.0, 1.0 / 3.0]));
        let f = MixtureSchedule::full_synthetic(5).weights_at(5).unwrap();
        assert_eq!(f, WeightRow::new(0.0, alloc::vec![0.0, 0.0, 0.0, 0.0, 1.0]));
        let r = MixtureSchedule::fixed_ratio(100, 300, 5).unwrap().weights_at(3).unwrap();
        assert_eq!(r, WeightRow::new(0.25, alloc::vec![0.0, 0.0, 0.75]));
        let e = MixtureSchedule::real_each_gen(0.5, 3).unwrap().weights_at(2).unwrap();
        assert_eq!(e, WeightRow::new(0.5, alloc::vec![0.0, 0.5]));
    }

    #[test]
    fn out_of_range_generations() {
        let s = MixtureSchedule::balanced(3);
        assert_eq!(s.weights_at(0).unwrap_err(), Error::GenerationOutOfRange { generation: 0, max: 3 });
        assert!(s.weights_at(4).is_err());
    }

    #[test]
    fn general_rows_validated() {
        let rows = alloc::vec![WeightRow::new(0.5, alloc::vec![0.5]), WeightRow::new(1.2, alloc::vec![0.0, -0.2])];
        match MixtureSchedule::new(ScheduleKind::General(rows), 2) {
            Err(Error::SimplexViolation { generation, .. }) => assert_eq!(generation, 2),
            other => panic!("{other:?}"),
        }
        let short = alloc::vec![WeightRow::new(0.5, alloc::vec![0.5])];
        assert!(MixtureSchedule::new(ScheduleKind::General(short), 2).is_err());
        let wrong_len = alloc::vec![WeightRow::new(0.5, alloc::vec![0.25, 0.25])];
        assert!(MixtureSchedule::new(ScheduleKind::General(wrong_len), 1).is_err());
    }

    #[test]
    fn retention_policy() {
        assert!(MixtureSchedule::balanced(2).retains_all_models());
        assert!(MixtureSchedule::all_real(2).retains_all_models());
        assert!(!MixtureSchedule::full_synthetic(2).retains_all_models());
        assert!(!MixtureSchedule::fixed_ratio(1, 1, 2).unwrap().retains_all_models());
    }

    #[test]
    fn mixture_examples() {
        let real = TargetDensity::gauss1d(0.0, 1.0).unwrap();
        let all_real = sample_mixture(&real, &[], &WeightRow::new(1.0, alloc::vec![]), 50, 1).unwrap();
        assert_eq!(all_real.source_counts, alloc::vec![50]);
        let again = sample_mixture(&real, &[], &WeightRow::new(1.0, alloc::vec![]), 50, 1).unwrap();
        assert_eq!(all_real.samples, again.samples);

        let at3 = PointMass(3.0);
        let d = sample_mixture(&real, &[&at3], &WeightRow::new(0.0, alloc::vec![1.0]), 20, 2).unwrap();
        assert!(d.samples.iter().all(|p| p[0] == 3.0));

        let narrow = TargetDensity::gauss1d(0.0, 1e-9).unwrap();
        let at1 = PointMass(1.0);
        let n = 100_000;
        let d = sample_mixture(&narrow, &[&at1], &WeightRow::new(0.5, alloc::vec![0.5]), n, 3).unwrap();
        let near_one = d.samples.iter().filter(|p| (p[0] - 1.0).abs() < 1e-3).count() as f64 / n as f64;
        // 3.2 binomial sd at p = 0.5 is ~0.005
        assert!((near_one - 0.5).abs() < 0.005, "{near_one}");
        assert_eq!(d.source_counts.iter().sum::<usize>(), n);
    }

    #[test]
    fn mixture_errors() {
        let real = TargetDensity::gauss1d(0.0, 1.0).unwrap();
        let at1 = PointMass(1.0);
        let err = sample_mixture(&real, &[&at1], &WeightRow::new(0.5, alloc::vec![0.25, 0.25]), 1, 0).unwrap_err();
        assert_eq!(err, Error::ComponentCountMismatch { weights: 2, components: 1 });
    }

    #[test]
    fn mixture_frequencies_within_four_sd() {
        let real = PointMass(0.0);
        let (a, b, c) = (PointMass(1.0), PointMass(2.0), PointMass(3.0));
        let w = WeightRow::new(0.1, alloc::vec![0.2, 0.3, 0.4]);
        let n = 50_000;
        let d = sample_mixture(&real, &[&a, &b, &c], &w, n, 17).unwrap();
        let all = [w.alpha, w.betas[0], w.betas[1], w.betas[2]];
        for (k, &wk) in all.iter().enumerate() {
            let freq = d.source_counts[k] as f64 / n as f64;
            assert!((freq - wk).abs() <= 4.0 * libm::sqrt(wk * (1.0 - wk) / n as f64), "source {k}: {freq}");
        }
    }

    fn general_rows(max: usize) -> impl Strategy<Value = Vec<WeightRow>> {
        let rows: Vec<_> = (1..=max)
            .map(|i| {
                proptest::collection::vec(0.0..1.0f64, i + 1).prop_map(|raw| {
                    let s: f64 = raw.iter().sum::<f64>().max(1e-9);
                    let mut w: Vec<f64> = raw.iter().map(|v| v / s).collect();
                    // re-close so the sum is exactly 1 up to a single rounding
                    let rest: f64 = w[1..].iter().sum();
                    w[0] = (1.0 - rest).max(0.0);
                    WeightRow::new(w[0], w[1..].to_vec())
                })
            })
            .collect();
        rows
    }

    proptest! {
        #[test]
        fn general_schedules_emit_simplex_rows(rows in general_rows(6)) {
            if let Ok(s) = MixtureSchedule::new(ScheduleKind::General(rows), 6) {
                for i in 1..=6 {
                    let row = s.weights_at(i).unwrap();
                    prop_assert_eq!(row.betas.len(), i);
                    prop_assert!(row.validate(i).is_ok());
                }
            }
        }

        #[test]
        fn builtin_schedules_emit_simplex_rows(i in 1usize..30, n in 0u64..500, m in 1u64..500, alpha in 0.0..=1.0f64) {
            for s in [
                MixtureSchedule::full_synthetic(30),
                MixtureSchedule::balanced(30),
                MixtureSchedule::fixed_ratio(n, m, 30).unwrap(),
                MixtureSchedule::real_each_gen(alpha, 30).unwrap(),
            ] {
                let row = s.weights_at(i).unwrap();
                prop_assert!(row.validate(i).is_ok());
            }
        }
    }
}
