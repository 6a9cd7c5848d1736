use std::collections::BTreeMap;

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use survsel::design::SurvivalDataset;
use survsel::inference::{Problem, ProblemOptions};
use survsel::model::{Backend, ModelIndex};
use survsel::priors::{CoefPrior, PriorSpec};
use survsel::search::{
    all_models, enumerate_all, gibbs_run, greedy_from, greedy_init, summarize, AugmentedState, GibbsOptions, Method, PosteriorSummary,
    DEFAULT_ENUMERATION_LIMIT,
};
use survsel::sim::{gen_scenario, ScenarioSpec};

/// Log-times `0.3 + Σ f_j(x_j) + 0.5ε`, uncensored.
fn dataset(n: usize, p: usize, seed: u64, f: impl Fn(usize, f64) -> f64) -> SurvivalDataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(&mut rng));
    let y = (0..n)
        .map(|i| {
            let e: f64 = StandardNormal.sample(&mut rng);
            0.3 + (0..p).map(|j| f(j, x[(i, j)])).sum::<f64>() + 0.5 * e
        })
        .collect();
    SurvivalDataset::new(y, vec![true; n], x).unwrap()
}

fn pmomz() -> ProblemOptions {
    let mut o = ProblemOptions::new(Backend::AftNormal);
    o.prior = PriorSpec::aft().with_family(CoefPrior::PMomZ);
    o
}

fn problem(data: SurvivalDataset) -> Problem {
    Problem::new(data, pmomz()).unwrap()
}

fn gibbs(iterations: usize, seed: u64) -> GibbsOptions {
    GibbsOptions { iterations, seed, ..GibbsOptions::default() }
}

/// Total variation between the exact posterior and Gibbs visit frequencies.
fn tv(exact: &PosteriorSummary, chain: &PosteriorSummary) -> f64 {
    0.5 * exact.models.iter().map(|m| (m.prob - chain.freq_of(&m.gamma)).abs()).sum::<f64>()
}

#[test]
fn single_covariate_has_three_models() {
    let s = enumerate_all(&problem(dataset(80, 1, 1, |_, x| 0.4 * x)), DEFAULT_ENUMERATION_LIMIT).unwrap();
    assert_eq!(s.models.len(), 3);
    assert!((s.models.iter().map(|m| m.prob).sum::<f64>() - 1.0).abs() < 1e-12);
    assert_eq!(s.method, Method::Enumeration);
}

#[test]
fn enumeration_limit_is_enforced() {
    let pr = problem(dataset(60, 3, 2, |_, _| 0.0));
    assert!(enumerate_all(&pr, 26).is_err());
    assert_eq!(enumerate_all(&pr, 27).unwrap().models.len(), 27);
    assert_eq!(all_models(&pr).len(), 27);
}

#[test]
fn null_data_favours_the_null_model() {
    let reps = 50;
    let hits = (0..reps)
        .filter(|&r| {
            let s = enumerate_all(&problem(dataset(200, 2, 100 + r, |_, _| 0.0)), DEFAULT_ENUMERATION_LIMIT).unwrap();
            s.top().gamma == ModelIndex::null(2)
        })
        .count();
    assert!(hits as f64 >= 0.9 * reps as f64, "null top in {hits}/{reps}");
}

#[test]
fn greedy_finds_a_strong_single_signal() {
    let pr = problem(dataset(200, 3, 5, |j, x| if j == 1 { 1.0 * x } else { 0.0 }));
    let s = greedy_init(&pr).unwrap();
    assert_eq!(s.model(), ModelIndex::new(vec![0, 1, 0]));
}

#[test]
fn greedy_returns_null_on_noise_mostly() {
    let reps = 20;
    let hits = (0..reps).filter(|&r| greedy_init(&problem(dataset(150, 3, 300 + r, |_, _| 0.0))).unwrap().model() == ModelIndex::null(3)).count();
    assert!(hits * 2 > reps as usize, "null in {hits}/{reps}");
}

#[test]
fn greedy_is_idempotent() {
    for seed in 0..5 {
        let pr = problem(dataset(120, 3, 40 + seed, |j, x| [0.5 * x, (2.0 * x).sin(), 0.0][j]));
        let first = greedy_init(&pr).unwrap();
        assert!(first.is_valid());
        let again = greedy_from(&pr, first.clone()).unwrap();
        assert_eq!(first, again);
    }
}

#[test]
fn gibbs_matches_enumeration_three_covariates() {
    let pr = problem(dataset(150, 3, 9, |j, x| [0.35 * x, 0.4 * (1.5 * x).sin(), 0.1 * x][j]));
    let exact = enumerate_all(&pr, DEFAULT_ENUMERATION_LIMIT).unwrap();
    let chain = gibbs_run(&pr, &gibbs(30_000, 3)).unwrap();
    let d = tv(&exact, &chain);
    println!("top {:.3} TV {d:.4}", exact.top().prob);
    assert!(d < 0.05, "TV {d}");
    assert_eq!(chain.diagnostics.as_ref().unwrap().constraint_violations, 0);
}

#[test]
fn stationary_distribution_two_covariates() {
    // Weak signals so the posterior spreads over several models.
    let pr = problem(dataset(100, 2, 21, |j, x| [0.15 * x, 0.2 * x * x - 0.2][j]));
    let exact = enumerate_all(&pr, DEFAULT_ENUMERATION_LIMIT).unwrap();
    let chain = gibbs_run(&pr, &gibbs(100_000, 8)).unwrap();
    let d = tv(&exact, &chain);
    println!("top {:.3} TV {d:.4}", exact.top().prob);
    assert!(d < 0.03, "TV {d}");
}

#[test]
fn gibbs_never_breaks_the_hierarchy() {
    for seed in 0..3 {
        let pr = problem(dataset(100, 4, 60 + seed, |j, x| if j < 2 { (x * (j + 1) as f64).sin() } else { 0.0 }));
        let s = gibbs_run(&pr, &GibbsOptions { iterations: 2_000, seed, greedy_init: seed % 2 == 0, ..GibbsOptions::default() }).unwrap();
        let diag = s.diagnostics.as_ref().unwrap();
        assert_eq!(diag.constraint_violations, 0);
        for m in &s.models {
            assert!(AugmentedState::from_model(&m.gamma).is_valid());
        }
    }
}

#[test]
fn fixed_seed_is_bit_identical() {
    let data = dataset(100, 3, 77, |j, x| [0.3 * x, 0.0, x.abs() - 0.8][j]);
    let a = gibbs_run(&problem(data.clone()), &gibbs(3_000, 42)).unwrap();
    let b = gibbs_run(&problem(data), &gibbs(3_000, 42)).unwrap();
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn summary_of_one_model() {
    let g = ModelIndex::new(vec![1, 0]);
    let scored = BTreeMap::from([(g.clone(), -12.5)]);
    let visits = BTreeMap::from([(g.clone(), 40u64)]);
    let s = summarize(2, &scored, Some(&visits), Method::Gibbs).unwrap();
    assert_eq!(s.prob_of(&g), 1.0);
    assert_eq!(s.freq_of(&g), 1.0);
}

#[test]
fn tied_models_split_evenly_with_lexicographic_order() {
    let a = ModelIndex::new(vec![0, 1]);
    let b = ModelIndex::new(vec![1, 0]);
    let scored = BTreeMap::from([(b.clone(), -3.0), (a.clone(), -3.0)]);
    let s = summarize(2, &scored, None, Method::Enumeration).unwrap();
    assert_eq!(s.top().gamma, a);
    assert_eq!(s.models[1].gamma, b);
    assert!((s.prob_of(&a) - 0.5).abs() < 1e-15 && (s.prob_of(&b) - 0.5).abs() < 1e-15);
    assert!(summarize(2, &BTreeMap::new(), None, Method::Enumeration).is_err());
}

#[test]
fn marginal_identities_hold() {
    let pr = problem(dataset(120, 3, 13, |j, x| [0.4 * x, (2.0 * x).cos(), 0.0][j]));
    for s in [enumerate_all(&pr, DEFAULT_ENUMERATION_LIMIT).unwrap(), gibbs_run(&pr, &gibbs(2_000, 1)).unwrap()] {
        let mut marg = vec![s.marginals.clone()];
        marg.extend(s.marginals_freq.clone());
        for m in marg {
            for j in 0..3 {
                assert_eq!(m.any[j], m.linear[j] + m.nonlinear[j]);
                assert!((0.0..=1.0 + 1e-12).contains(&m.any[j]));
                assert!(m.nonlinear[j] <= m.any[j]);
            }
        }
        assert!((s.models.iter().map(|m| m.prob).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn memo_agrees_with_fresh_fits() {
    let pr = problem(dataset(120, 3, 17, |j, x| [0.4 * x, (2.0 * x).sin(), 0.0][j]));
    gibbs_run(&pr, &gibbs(500, 4)).unwrap();
    assert!(pr.memo_len() > 0);
    let mut checked = 0;
    for m in all_models(&pr) {
        if let Some(memo) = pr.memo_get(&m) {
            let fresh = pr.fit_fresh(&m).unwrap();
            let rel = (memo.log_marglik - fresh.log_marglik).abs() / fresh.log_marglik.abs().max(1.0);
            assert!(rel < 1e-12, "{} memo {} fresh {}", m.label(), memo.log_marglik, fresh.log_marglik);
            checked += 1;
        }
    }
    assert!(checked > 1);
}

#[test]
fn nonlinear_blocks_are_rarely_touched_on_null_data() {
    let pr = problem(dataset(150, 4, 31, |_, _| 0.0));
    let s = gibbs_run(&pr, &gibbs(5_000, 2)).unwrap();
    let diag = s.diagnostics.as_ref().unwrap();
    let mut checked = 0;
    for j in 0..4 {
        if s.marginals.any[j] < 0.05 {
            let share = diag.nonlinear_evals[j] as f64 / diag.iterations as f64;
            assert!(share < 0.10, "covariate {j}: share {share}");
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn scenario_one_reports_nonlinear_inclusion() {
    let data = gen_scenario(&ScenarioSpec::new(1, 100), 3).unwrap();
    let s = enumerate_all(&problem(data), DEFAULT_ENUMERATION_LIMIT).unwrap();
    let p2 = s.marginals.nonlinear[1];
    assert!((0.0..=1.0).contains(&p2));
    println!("P(gamma_2 = 2 | y) = {p2:.3}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn augmented_bijection(gamma in prop::collection::vec(0u8..3, 1..8)) {
        let m = ModelIndex::new(gamma);
        let s = AugmentedState::from_model(&m);
        prop_assert!(s.is_valid());
        prop_assert_eq!(s.model(), m);
    }

    #[test]
    fn invalid_pairs_are_detected(gt in prop::collection::vec(any::<bool>(), 2..12usize).prop_filter("even", |v| v.len() % 2 == 0)) {
        let s = AugmentedState { gtilde: gt.clone() };
        let p = gt.len() / 2;
        let expected = (0..p).all(|j| gt[j] || !gt[j + p]);
        prop_assert_eq!(s.is_valid(), expected);
    }
}
