use proptest::prelude::*;
use sclab_core::bounds::{
    balanced_coefficients_exact, bound_diffusion, coefficients, coefficients_bruteforce, BoundInputs,
};
use sclab_core::mixing::{MixtureSchedule, ScheduleKind, WeightRow};

// Independent oracle: propagate path weight one hop at a time (a Neumann
// series over the transition weights) until every path has been absorbed.
fn neumann(schedule: &MixtureSchedule, i: usize) -> Vec<f64> {
    let rows: Vec<WeightRow> = (1..=i).map(|j| schedule.weights_at(j).unwrap()).collect();
    let mut acc = vec![0.0; i + 1];
    let mut front = vec![0.0; i + 1];
    front[i] = 1.0;
    while front.iter().any(|&w| w != 0.0) {
        let mut next = vec![0.0; i + 1];
        for (j, &w) in front.iter().enumerate() {
            acc[j] += w;
            for (t, slot) in next.iter_mut().enumerate().take(j) {
                *slot += w * rows[j - 1].beta(t + 1);
            }
        }
        front = next;
    }
    acc
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

#[derive(Clone, Copy, PartialEq, Debug)]
struct Frac(i128, i128);

impl Frac {
    fn add(self, o: Frac) -> Frac {
        let (n, d) = (self.0 * o.1 + o.0 * self.1, self.1 * o.1);
        let g = gcd(n, d).max(1);
        Frac(n / g, d / g)
    }
    fn mul(self, o: Frac) -> Frac {
        let (n, d) = (self.0 * o.0, self.1 * o.1);
        let g = gcd(n, d).max(1);
        Frac(n / g, d / g)
    }
}

// Same hop-by-hop expansion in exact arithmetic, for the balanced rows
// where generation j puts 1/(j+1) on real data and on each earlier model.
fn balanced_exact(i: usize) -> Vec<Frac> {
    let zero = Frac(0, 1);
    let mut acc = vec![zero; i + 1];
    let mut front = vec![zero; i + 1];
    front[i] = Frac(1, 1);
    while front.iter().any(|f| f.0 != 0) {
        let mut next = vec![zero; i + 1];
        for (j, &w) in front.iter().enumerate() {
            acc[j] = acc[j].add(w);
            for slot in next.iter_mut().take(j) {
                *slot = slot.add(w.mul(Frac(1, j as i128 + 1)));
            }
        }
        front = next;
    }
    acc
}

fn row(raw: &[f64]) -> WeightRow {
    let total: f64 = raw.iter().sum();
    WeightRow::new(raw[0] / total, raw[1..].iter().map(|w| w / total).collect())
}

fn general_schedule() -> impl Strategy<Value = MixtureSchedule> {
    (1usize..=7).prop_flat_map(|n| {
        let rows: Vec<_> = (1..=n).map(|g| prop::collection::vec(0.01f64..1.0, g + 1)).collect();
        rows.prop_map(move |raw| {
            let rows = raw.iter().map(|r| row(r)).collect();
            MixtureSchedule::new(ScheduleKind::General(rows), n).unwrap()
        })
    })
}

#[test]
fn balanced_recursion_matches_exact_rationals() {
    for i in 0..=10 {
        let got = coefficients(&MixtureSchedule::balanced(i.max(1)), i).unwrap();
        let exact = balanced_exact(i);
        let closed = balanced_coefficients_exact(i);
        for (k, &Frac(n, d)) in exact.iter().enumerate() {
            let want = n as f64 / d as f64;
            assert!((got.a(k) - want).abs() < 1e-12, "i={i} k={k}: {} vs {n}/{d}", got.a(k));
            assert!((closed.a(k) - want).abs() < 1e-12);
        }
    }
}

#[test]
fn standard_schedules_match_the_oracle() {
    let schedules = [
        MixtureSchedule::full_synthetic(6),
        MixtureSchedule::all_real(6),
        MixtureSchedule::real_each_gen(0.3, 6).unwrap(),
        MixtureSchedule::fixed_ratio(100, 300, 6).unwrap(),
    ];
    for s in &schedules {
        for i in 0..=6 {
            let got = coefficients(s, i).unwrap();
            for (k, want) in neumann(s, i).into_iter().enumerate() {
                assert!((got.a(k) - want).abs() < 1e-12, "{} i={i} k={k}", s.label());
            }
        }
    }
}

proptest! {
    #[test]
    fn recursion_matches_path_oracles(s in general_schedule()) {
        let i = s.max_generation();
        let got = coefficients(&s, i).unwrap();
        let brute = coefficients_bruteforce(&s, i).unwrap();
        for (k, want) in neumann(&s, i).into_iter().enumerate() {
            prop_assert!((got.a(k) - want).abs() < 1e-12);
            prop_assert!((brute.a(k) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn coefficients_are_nonnegative_with_unit_top(s in general_schedule()) {
        let i = s.max_generation();
        let got = coefficients(&s, i).unwrap();
        prop_assert_eq!(got.a(i), 1.0);
        prop_assert!(got.values.iter().all(|&a| a >= 0.0));
    }

    #[test]
    fn diffusion_bound_shrinks_with_more_data(n in 16u64..10_000, i in 1usize..6) {
        let s = MixtureSchedule::balanced(i);
        let small = bound_diffusion(&s, &BoundInputs::uniform(n, i, 1, 0.1).unwrap()).unwrap();
        let large = bound_diffusion(&s, &BoundInputs::uniform(4 * n, i, 1, 0.1).unwrap()).unwrap();
        prop_assert!(large.total < small.total);
    }
}
