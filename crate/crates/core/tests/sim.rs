mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use common::{cdf, normal};
use survsel::model::ModelIndex;
use survsel::sim::{
    concordance_index, gen_gh_survival, gen_scenario, gh_cumhaz, permutation, permute_response, sample_alaplace, selection_metrics, ErrorFamily,
    ScenarioSpec,
};

fn censored_share(id: u8, n: usize, seed: u64) -> f64 {
    let data = gen_scenario(&ScenarioSpec::new(id, n), seed).unwrap();
    data.d.iter().filter(|&&e| !e).count() as f64 / n as f64
}

/// Two-sample Kolmogorov-Smirnov statistic.
fn ks2(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// One-sample statistic against a continuous CDF.
fn ks1(mut a: Vec<f64>, f: impl Fn(f64) -> f64) -> f64 {
    a.sort_by(f64::total_cmp);
    let n = a.len() as f64;
    a.iter().enumerate().map(|(i, &x)| (f(x) - i as f64 / n).abs().max(((i + 1) as f64 / n - f(x)).abs())).fold(0.0, f64::max)
}

#[test]
fn scenario_five_censoring_rate() {
    let share = censored_share(5, 100_000, 1);
    assert!((share - 0.68).abs() <= 0.01, "censored share {share}");
}

#[test]
fn uncensored_flag_keeps_every_event() {
    for id in 1..=6 {
        let mut spec = ScenarioSpec::new(id, 500);
        spec.censored = false;
        let data = gen_scenario(&spec, 4).unwrap();
        assert!(data.d.iter().all(|&e| e));
    }
}

#[test]
fn censored_times_sit_at_the_censoring_constant() {
    for id in 1..=6 {
        let spec = ScenarioSpec::new(id, 2_000);
        let data = gen_scenario(&spec, 9).unwrap();
        let c = spec.censor_time().ln();
        for (y, d) in data.y.iter().zip(&data.d) {
            if *d {
                assert!(*y < c);
            } else {
                assert_eq!(*y, c);
            }
        }
    }
}

#[test]
fn scenario_shapes() {
    let mut spec = ScenarioSpec::new(2, 300);
    spec.p_total = 50;
    let data = gen_scenario(&spec, 3).unwrap();
    assert_eq!(data.x.ncols(), 50);
    assert!(data.x.column(1).iter().all(|&v| v >= 0.0));
    spec.omit_x2 = true;
    let data = gen_scenario(&spec, 3).unwrap();
    assert_eq!(data.x.ncols(), 49);
    assert_eq!(spec.truth().p(), 49);
    assert!(gen_scenario(&ScenarioSpec::new(7, 10), 1).is_err());
}

#[test]
fn covariate_correlation_is_one_half() {
    let mut spec = ScenarioSpec::new(1, 40_000);
    spec.p_total = 4;
    let x = gen_scenario(&spec, 12).unwrap().x;
    let n = x.nrows() as f64;
    for a in 0..4 {
        for b in 0..a {
            let r = x.column(a).dot(&x.column(b)) / n;
            assert!((r - 0.5).abs() < 0.02, "corr({a},{b}) = {r}");
        }
    }
}

#[test]
fn asymmetric_laplace_matches_the_normal_variance() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let draws: Vec<f64> = (0..200_000).map(|_| sample_alaplace(&mut rng, 0.1, -0.5)).collect();
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!((var - 0.25).abs() < 0.005, "variance {var}");
    // Mode at zero: a quarter of the mass above it when a = -0.5.
    let above = draws.iter().filter(|&&v| v > 0.0).count() as f64 / n;
    assert!((above - 0.25).abs() < 0.005, "share above zero {above}");
    let spec = ScenarioSpec { error: ErrorFamily::ALaplace { s: 0.1, a: -0.5 }, ..ScenarioSpec::new(1, 100) };
    assert!(gen_scenario(&spec, 1).is_ok());
}

#[test]
fn gh_aft_special_case_matches_direct_sampling() {
    let (a, sigma) = (0.7, 0.5);
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let inverted: Vec<f64> = (0..100_000).map(|_| gen_gh_survival(a, a, sigma, rng.random()).unwrap()).collect();
    let direct: Vec<f64> = (0..100_000).map(|_| (-a + sigma * normal(&mut rng)).exp()).collect();
    let d = ks2(inverted, direct);
    assert!(d < 0.01, "KS {d}");
}

#[test]
fn gh_ph_special_case_powers_the_baseline_survival() {
    let (b, sigma) = (0.8, 0.5);
    let mut rng = ChaCha20Rng::seed_from_u64(22);
    let draws: Vec<f64> = (0..100_000).map(|_| gen_gh_survival(0.0, b, sigma, rng.random()).unwrap()).collect();
    // S(t) = S₀(t)^{e^b} with S₀(t) = Φ(−log t / σ).
    let d = ks1(draws, |t| 1.0 - cdf(-t.ln() / sigma).powf(b.exp()));
    assert!(d < 0.01, "KS {d}");
}

#[test]
fn u_near_one_gives_time_near_zero() {
    assert_eq!(gen_gh_survival(0.3, -0.2, 0.5, 1.0).unwrap(), 0.0);
    let t = gen_gh_survival(0.3, -0.2, 0.5, 1.0 - 1e-12).unwrap();
    assert!(t > 0.0 && t < 0.05, "t {t}");
    let mut last = f64::INFINITY;
    for k in 1..8 {
        let t = gen_gh_survival(0.3, -0.2, 0.5, 1.0 - 10f64.powi(-k)).unwrap();
        assert!(t < last);
        last = t;
    }
    assert!(gen_gh_survival(0.0, 0.0, 0.5, 1.5).is_err());
}

#[test]
fn permutation_preserves_the_response_multiset() {
    let data = gen_scenario(&ScenarioSpec::new(1, 200), 8).unwrap();
    let perm = permute_response(&data, 77);
    assert_eq!(perm.x, data.x);
    let key = |y: &[f64], d: &[bool]| {
        let mut v: Vec<(u64, bool)> = y.iter().zip(d).map(|(a, b)| (a.to_bits(), *b)).collect();
        v.sort();
        v
    };
    assert_eq!(key(&perm.y, &perm.d), key(&data.y, &data.d));
    assert_ne!(perm.y, data.y);
    assert_eq!(permute_response(&data, 77), perm);
}

#[test]
fn recorded_permutation_for_a_known_seed() {
    let perm = permutation(10, 2024);
    let mut sorted = perm.clone();
    sorted.sort();
    assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    assert_ne!(perm, sorted);
    assert_eq!(perm, permutation(10, 2024));
    let data = gen_scenario(&ScenarioSpec::new(1, 10), 1).unwrap();
    let moved = permute_response(&data, 2024);
    for (i, &k) in perm.iter().enumerate() {
        assert_eq!(moved.y[i], data.y[k]);
        assert_eq!(moved.d[i], data.d[k]);
    }
}

#[test]
fn selection_metric_examples() {
    let truth = ModelIndex::new(vec![1, 2, 0, 0]);
    let m = selection_metrics(&truth, &truth);
    assert!(m.exact);
    assert_eq!((m.active_selected, m.inactive_selected), (2, 0));
    let m = selection_metrics(&ModelIndex::null(4), &truth);
    assert!(!m.exact);
    assert_eq!((m.active_selected, m.inactive_selected), (0, 0));
    let m = selection_metrics(&ModelIndex::new(vec![1, 1, 0, 2]), &truth);
    assert!(!m.exact);
    assert_eq!((m.active_selected, m.inactive_selected), (2, 1));
}

#[test]
fn concordance_of_perfect_scores_is_one() {
    let y: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
    let risk: Vec<f64> = y.iter().map(|v| -v).collect();
    assert_eq!(concordance_index(&risk, &y, &[true; 50]).unwrap(), 1.0);
}

#[test]
fn concordance_of_random_scores_is_one_half() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let n = 3_000;
    let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let d: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.7).collect();
    let risk: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
    let c = concordance_index(&risk, &y, &d).unwrap();
    assert!((c - 0.5).abs() < 0.02, "C {c}");
}

#[test]
fn concordance_hand_worked_case() {
    // Usable pairs: (1,2) (1,3) (1,4) (3,4); the second observation is
    // censored so it only enters as the longer member. Three of four agree.
    let y = [1.0, 2.0, 3.0, 4.0];
    let d = [true, false, true, true];
    let risk = [0.9, 0.8, 0.1, 0.5];
    assert_eq!(concordance_index(&risk, &y, &d).unwrap(), 0.75);
    assert!(concordance_index(&risk, &y, &[false; 4]).is_err());
}

#[test]
fn generators_are_seed_deterministic() {
    for id in 1..=6 {
        let spec = ScenarioSpec::new(id, 300);
        assert_eq!(gen_scenario(&spec, 11).unwrap(), gen_scenario(&spec, 11).unwrap());
        assert_ne!(gen_scenario(&spec, 11).unwrap().y, gen_scenario(&spec, 12).unwrap().y);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn gh_inversion_round_trip(a in -2.0f64..2.0, b in -2.0f64..2.0, sigma in 0.3f64..1.0, u in 1e-6f64..0.999_999) {
        let t = gen_gh_survival(a, b, sigma, u).unwrap();
        let h = gh_cumhaz(t, a, b, sigma);
        prop_assert!((h + u.ln()).abs() < 1e-8, "H {} target {}", h, -u.ln());
    }

    #[test]
    fn concordance_is_invariant_to_monotone_risk_maps(seed in 0u64..1000) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let n = 40;
        let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let d: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.6).collect();
        let risk: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let mapped: Vec<f64> = risk.iter().map(|r| r.exp()).collect();
        if let Ok(c) = concordance_index(&risk, &y, &d) {
            prop_assert!((0.0..=1.0).contains(&c));
            prop_assert_eq!(c, concordance_index(&mapped, &y, &d).unwrap());
        }
    }
}
