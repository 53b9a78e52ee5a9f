use sclab_core::distributions::TargetDensity;
use sclab_core::kernel_density::KernelSpec;
use sclab_core::loop_engine::{
    run_loop, run_replicates, EvalSettings, GeneratorSpec, LoopConfig, NoClock, SampleSizeRule,
};
use sclab_core::mixing::MixtureSchedule;

fn config(schedule: MixtureSchedule, n: u64) -> LoopConfig {
    let max_generation = schedule.max_generation();
    LoopConfig {
        generator: GeneratorSpec::Kde { kernel: KernelSpec::gaussian(), smoothness: 2 },
        schedule,
        p0: TargetDensity::gauss1d(0.0, 1.0).unwrap(),
        sample_sizes: SampleSizeRule::Constant(n),
        max_generation,
        replicates: 3,
        base_seed: 17,
        eval: EvalSettings { tv_intervals: 2048, ..EvalSettings::for_dim(1) },
    }
}

#[test]
fn replicates_are_reproducible_and_distinct() {
    let cfg = config(MixtureSchedule::balanced(3), 300);
    let a = run_loop(&cfg, 1, &NoClock).unwrap();
    assert_eq!(a, run_loop(&cfg, 1, &NoClock).unwrap());
    assert_ne!(a.records, run_loop(&cfg, 2, &NoClock).unwrap().records);
}

#[test]
fn records_follow_the_schedule() {
    let cfg = config(MixtureSchedule::real_each_gen(0.5, 4).unwrap(), 400);
    let trace = run_loop(&cfg, 0, &NoClock).unwrap();
    assert_eq!(trace.records.len(), 4);
    for (g, r) in trace.records.iter().enumerate().map(|(k, r)| (k + 1, r)) {
        assert_eq!(r.generation, g);
        assert_eq!(r.n_total, 400);
        assert_eq!(r.n_real + r.n_synth.iter().sum::<usize>(), r.n_total);
        assert_eq!(r.n_synth.len(), g - 1);
        assert!(r.kl_prior.is_none());
        assert!(r.bound_value.is_finite() && r.bound_value > 0.0);
        assert_eq!(r.runtime_ms, 0.0);
    }
    assert_eq!(trace.records[0].n_real, 400);
    // later generations split roughly evenly between real data and the last model
    assert!(trace.records[1..].iter().all(|r| (150..=250).contains(&r.n_real)));
}

#[test]
fn all_real_data_keeps_the_error_flat() {
    let run = run_replicates(&config(MixtureSchedule::all_real(4), 1000), &NoClock).unwrap();
    let medians: Vec<f64> = run.summary.medians();
    let first = medians[0];
    assert!(medians.iter().all(|&m| m > first / 2.0 && m < first * 2.0), "{medians:?}");
}

#[test]
fn invalid_configs_are_rejected_before_running() {
    let mut cfg = config(MixtureSchedule::full_synthetic(2), 100);
    // generation g draws from row g - 1, so 4 generations need rows 1..=3
    cfg.max_generation = 4;
    assert!(run_loop(&cfg, 0, &NoClock).is_err());
    let mut cfg = config(MixtureSchedule::full_synthetic(2), 100);
    cfg.sample_sizes = SampleSizeRule::Explicit(vec![100]);
    assert!(run_loop(&cfg, 0, &NoClock).is_err());
}
