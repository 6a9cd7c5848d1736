//! Simulation scenarios, the permutation harness and evaluation metrics.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::design::SurvivalDataset;
use crate::error::{Error, Result};
use crate::inference::{Problem, ProblemOptions};
use crate::model::{Backend, ModelIndex};
use crate::numeric;
use crate::search::{self, GibbsOptions, PosteriorSummary};
use crate::specfun::exact;

/// Error law of the AFT scenarios.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ErrorFamily {
    Normal { sigma: f64 },
    /// Two-piece exponential with mode 0, scale `s` and asymmetry `a`.
    ALaplace { s: f64, a: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    /// Scenario number 1 to 6.
    pub id: u8,
    pub n: usize,
    pub censored: bool,
    /// Off-diagonal covariate correlation.
    pub rho: f64,
    pub error: ErrorFamily,
    /// Total covariates; those past the second are spurious.
    pub p_total: usize,
    /// Drop `x₂` from the returned covariates.
    pub omit_x2: bool,
    /// Log-Normal baseline `σ` of the GH and PH scenarios.
    pub sigma_h: f64,
}

impl ScenarioSpec {
    pub fn new(id: u8, n: usize) -> Self {
        ScenarioSpec {
            id,
            n,
            censored: true,
            rho: 0.5,
            error: ErrorFamily::Normal { sigma: 0.5 },
            p_total: 2,
            omit_x2: false,
            sigma_h: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.id) {
            return Err(Error::Config(format!("scenario {} is not among 1 to 6", self.id)));
        }
        if self.p_total < 2 || self.n < 2 {
            return Err(Error::Config("scenarios need n >= 2 and at least two covariates".into()));
        }
        if !(-1.0 / (self.p_total as f64 - 1.0) < self.rho && self.rho < 1.0) {
            return Err(Error::Config("correlation makes the covariance singular".into()));
        }
        Ok(())
    }

    /// Administrative censoring time.
    pub fn censor_time(&self) -> f64 {
        [0.5, 1.0, 0.5, 1.0, 0.55, 0.95][self.id as usize - 1]
    }

    /// Whether `x₂` enters through `log(1 + x₂)` (and is drawn as `|x̃₂|`).
    fn folded_x2(&self) -> bool {
        matches!(self.id, 2 | 4)
    }

    /// Data-generating model in the analysis coordinates: `x₁` linear, `x₂`
    /// non-linear, spurious covariates excluded.
    pub fn truth(&self) -> ModelIndex {
        let mut g = vec![0u8; self.p_total];
        g[0] = 1;
        g[1] = 2;
        if self.omit_x2 {
            g.remove(1);
        }
        ModelIndex::new(g)
    }
}

/// Counter-based stream for replicate `rep` under `seed`.
pub fn replicate_rng(seed: u64, rep: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Draw from the two-piece exponential: positive side with probability
/// `(1+a)/2` and scale `√s(1+a)`, negative side with `(1−a)/2`, `√s(1−a)`.
pub fn sample_alaplace<R: Rng + ?Sized>(rng: &mut R, s: f64, a: f64) -> f64 {
    let u: f64 = rng.random();
    let rs = s.sqrt();
    let w = 0.5 * (1.0 - a);
    if u < w {
        // Inverse CDF of the left piece.
        rs * (1.0 - a) * (u / w).ln()
    } else {
        let v = (u - w) / (1.0 - w);
        -rs * (1.0 + a) * (1.0 - v).ln()
    }
}

/// Survival time under `h(t) = h₀(t e^{a}) e^{b}` with a Log-Normal(0, σ)
/// baseline, inverting `H(t) = e^{b−a} H₀(t e^{a}) = −log u` by root finding.
pub fn gen_gh_survival(a: f64, b: f64, sigma: f64, u: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Config("u must lie in [0, 1]".into()));
    }
    let target = (a - b).exp() * -u.ln();
    if target == 0.0 {
        return Ok(0.0);
    }
    if target.is_infinite() {
        return Ok(f64::INFINITY);
    }
    // H₀(e^s) = −log Φ(−s/σ), increasing in s.
    let g = |s: f64| -exact::norm_logcdf(-s / sigma) - target;
    let (lo, hi) = bracket(g)?;
    let s = numeric::find_root(g, lo, hi, 1e-15)?;
    Ok((s - a).exp())
}

fn bracket<F: Fn(f64) -> f64>(g: F) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = (-1.0, 1.0);
    for _ in 0..200 {
        let (fl, fh) = (g(lo), g(hi));
        if fl <= 0.0 && fh >= 0.0 {
            return Ok((lo, hi));
        }
        if fl > 0.0 {
            lo *= 2.0;
        }
        if fh < 0.0 {
            hi *= 2.0;
        }
    }
    Err(Error::Bracket { lo, hi, f_lo: g(lo), f_hi: g(hi) })
}

/// Cumulative hazard of the GH model at `t`.
pub fn gh_cumhaz(t: f64, a: f64, b: f64, sigma: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    (b - a).exp() * -exact::norm_logcdf(-(t.ln() + a) / sigma)
}

/// Draws covariates and times for one replicate. Times are returned on the
/// log scale, `y = log min(o, c)`.
pub fn gen_scenario(spec: &ScenarioSpec, seed: u64) -> Result<SurvivalDataset> {
    gen_scenario_rng(spec, &mut ChaCha20Rng::seed_from_u64(seed))
}

pub fn gen_scenario_rng<R: Rng + ?Sized>(spec: &ScenarioSpec, rng: &mut R) -> Result<SurvivalDataset> {
    spec.validate()?;
    let (n, p) = (spec.n, spec.p_total);
    let cov = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { spec.rho });
    let l = cov.cholesky().ok_or(Error::RankDeficient)?.unpack();
    let mut x: DMatrix<f64> = DMatrix::zeros(n, p);
    let mut z = vec![0.0f64; p];
    for i in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        for a in 0..p {
            x[(i, a)] = (0..=a).map(|b| l[(a, b)] * z[b]).sum::<f64>();
        }
        if spec.folded_x2() {
            x[(i, 1)] = x[(i, 1)].abs();
        }
    }
    let c = spec.censor_time();
    let mut y = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        let (x1, x2) = (x[(i, 0)], x[(i, 1)]);
        let h2 = if spec.folded_x2() { (1.0 + x2).ln() } else { x2.abs().ln() };
        let log_o = match spec.id {
            1 | 2 => {
                let eps = match spec.error {
                    ErrorFamily::Normal { sigma } => {
                        let e: f64 = StandardNormal.sample(rng);
                        sigma * e
                    }
                    ErrorFamily::ALaplace { s, a } => sample_alaplace(rng, s, a),
                };
                x1 + 0.5 * h2 + eps
            }
            _ => {
                let (a, b) = match spec.id {
                    3 | 4 => (-x1 / 3.0 + 0.5 * h2, -x1 / 3.0 + 0.75 * h2),
                    _ => (0.0, 0.75 * x1 - 1.25 * h2),
                };
                let u: f64 = rng.random();
                gen_gh_survival(a, b, spec.sigma_h, u)?.ln()
            }
        };
        if spec.censored && log_o >= c.ln() {
            y.push(c.ln());
            d.push(false);
        } else {
            y.push(log_o);
            d.push(true);
        }
    }
    let mut names: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    if spec.omit_x2 {
        x = x.remove_column(1);
        names.remove(1);
    }
    SurvivalDataset::with_names(y, d, x, names)
}

/// Permutes the `(y, d)` pairs jointly, keeping the covariates.
pub fn permute_response(data: &SurvivalDataset, seed: u64) -> SurvivalDataset {
    let perm = permutation(data.n(), seed);
    let mut out = data.clone();
    out.y = perm.iter().map(|&i| data.y[i]).collect();
    out.d = perm.iter().map(|&i| data.d[i]).collect();
    out
}

/// The permutation [`permute_response`] applies for `seed`.
pub fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    perm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub exact: bool,
    /// Truly active covariates with `γ̂_j ≠ 0`.
    pub active_selected: usize,
    /// Truly inactive covariates with `γ̂_j ≠ 0`.
    pub inactive_selected: usize,
}

pub fn selection_metrics(selected: &ModelIndex, truth: &ModelIndex) -> SelectionMetrics {
    assert_eq!(selected.p(), truth.p(), "models over different covariate sets");
    let mut m = SelectionMetrics { exact: selected == truth, active_selected: 0, inactive_selected: 0 };
    for (s, t) in selected.gamma.iter().zip(&truth.gamma) {
        if *s != 0 {
            if *t != 0 {
                m.active_selected += 1;
            } else {
                m.inactive_selected += 1;
            }
        }
    }
    m
}

/// Harrell's C. A pair is usable when the shorter time is an event; higher
/// `risk` should mean earlier failure. Risk ties count one half.
pub fn concordance_index(risk: &[f64], y: &[f64], d: &[bool]) -> Result<f64> {
    let n = y.len();
    if risk.len() != n || d.len() != n {
        return Err(Error::Dimension { expected: n, got: risk.len().min(d.len()) });
    }
    let mut num = 0.0;
    let mut usable = 0.0;
    for i in 0..n {
        if !d[i] {
            continue;
        }
        for j in 0..n {
            if y[i] < y[j] {
                usable += 1.0;
                if risk[i] > risk[j] {
                    num += 1.0;
                } else if risk[i] == risk[j] {
                    num += 0.5;
                }
            }
        }
    }
    if usable == 0.0 {
        return Err(Error::Data("no usable pairs for the concordance index".into()));
    }
    Ok(num / usable)
}

/// How one replicate explores the model space.
#[derive(Clone, Debug)]
pub struct StudyOptions {
    pub problem: ProblemOptions,
    pub gibbs: GibbsOptions,
    pub enumeration_limit: usize,
}

impl StudyOptions {
    pub fn new(problem: ProblemOptions) -> Self {
        StudyOptions { problem, gibbs: GibbsOptions::default(), enumeration_limit: search::DEFAULT_ENUMERATION_LIMIT }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub replicate: u64,
    pub censored_share: f64,
    pub selected: ModelIndex,
    pub metrics: SelectionMetrics,
    /// `P(γ_j ≠ 0 | y)`.
    pub inclusion: Vec<f64>,
    /// `P(γ_j = 2 | y)`.
    pub nonlinear: Vec<f64>,
    pub top_prob: f64,
}

/// Full analysis of one dataset.
pub fn analyze(data: SurvivalDataset, opts: &StudyOptions) -> Result<PosteriorSummary> {
    let problem = Problem::new(data, opts.problem.clone())?;
    search::explore(&problem, opts.enumeration_limit, &opts.gibbs)
}

/// One simulated replicate: draws data from its own stream, analyzes it
/// and scores the selected model.
pub fn run_replicate(spec: &ScenarioSpec, seed: u64, rep: u64, opts: &StudyOptions) -> Result<ReplicateResult> {
    let data = gen_scenario_rng(spec, &mut replicate_rng(seed, rep))?;
    let censored_share = 1.0 - data.n_o() as f64 / data.n() as f64;
    let mut study = opts.clone();
    study.gibbs.seed = seed ^ rep.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let summary = analyze(data, &study)?;
    let selected = summary.top().gamma.clone();
    Ok(ReplicateResult {
        replicate: rep,
        censored_share,
        metrics: selection_metrics(&selected, &spec.truth()),
        selected,
        inclusion: summary.marginals.any.clone(),
        nonlinear: summary.marginals.nonlinear.clone(),
        top_prob: summary.top().prob,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    pub permutation: u64,
    pub selected_size: usize,
    pub null_selected: bool,
    pub null_prob: f64,
}

/// Analyzes `data` with its responses permuted by `seed`.
pub fn run_permutation(data: &SurvivalDataset, seed: u64, opts: &StudyOptions) -> Result<PermutationResult> {
    let permuted = permute_response(data, seed);
    let p = permuted.p();
    let mut study = opts.clone();
    study.gibbs.seed = seed;
    let summary = analyze(permuted, &study)?;
    let null = ModelIndex::null(p);
    let top = &summary.top().gamma;
    Ok(PermutationResult { permutation: seed, selected_size: top.p_gamma(), null_selected: *top == null, null_prob: summary.prob_of(&null) })
}

/// Risk score of row `x_raw` under a fitted model: `−` linear predictor for
/// the AFT backends, `+` for Cox.
pub fn risk_score(problem: &Problem, gamma: &ModelIndex, x_raw: &[f64]) -> Result<f64> {
    let fit = problem.fit(gamma, None)?;
    let row = problem.design().transform_row(x_raw);
    let lp: f64 = fit.cols.iter().zip(&fit.eta_map).map(|(&c, b)| row[c] * b).sum();
    Ok(match problem.backend() {
        Backend::Cox => lp,
        _ => -lp,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub concordance: f64,
    pub mean_model_size: f64,
    pub risk: Vec<f64>,
}

/// Leave-one-out cross-validated concordance: each row is scored by the
/// top model selected without it.
pub fn loo_concordance(data: &SurvivalDataset, opts: &StudyOptions) -> Result<CvResult> {
    use rayon::prelude::*;
    let n = data.n();
    let out: Vec<(f64, usize)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let keep: Vec<usize> = (0..n).filter(|&k| k != i).collect();
            let train = data.select_rows(&keep);
            let problem = Problem::new(train, opts.problem.clone())?;
            let mut gibbs = opts.gibbs.clone();
            gibbs.seed = opts.gibbs.seed.wrapping_add(i as u64);
            let summary = search::explore(&problem, opts.enumeration_limit, &gibbs)?;
            let top = summary.top().gamma.clone();
            let x: Vec<f64> = data.x.row(i).iter().copied().collect();
            Ok((risk_score(&problem, &top, &x)?, top.p_gamma()))
        })
        .collect::<Result<_>>()?;
    let risk: Vec<f64> = out.iter().map(|o| o.0).collect();
    let concordance = concordance_index(&risk, &data.y, &data.d)?;
    let mean_model_size = out.iter().map(|o| o.1 as f64).sum::<f64>() / n as f64;
    Ok(CvResult { concordance, mean_model_size, risk })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alaplace_moments() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let (s, a) = (0.1, -0.5);
        let m = 200_000;
        let draws: Vec<f64> = (0..m).map(|_| sample_alaplace(&mut rng, s, a)).collect();
        let mean = draws.iter().sum::<f64>() / m as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
        let pos = draws.iter().filter(|v| **v > 0.0).count() as f64 / m as f64;
        assert!((mean - 2.0 * a * s.sqrt()).abs() < 0.005, "{mean}");
        assert!((var - 2.0 * s * (1.0 + a * a)).abs() < 0.005, "{var}");
        assert!((pos - 0.5 * (1.0 + a)).abs() < 0.005);
    }

    #[test]
    fn gh_inversion_round_trip() {
        for &(a, b, u) in &[(0.3, -0.2, 0.4), (0.0, 1.5, 0.9), (-1.0, -1.0, 1e-6), (0.5, 0.75, 0.999999)] {
            let t = gen_gh_survival(a, b, 0.5, u).unwrap();
            assert!((gh_cumhaz(t, a, b, 0.5) + u.ln()).abs() < 1e-10);
        }
        assert_eq!(gen_gh_survival(0.2, 0.1, 0.5, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn concordance_small_cases() {
        let y = [1.0, 2.0, 3.0, 4.0];
        let d = [true, true, true, true];
        assert_eq!(concordance_index(&[4.0, 3.0, 2.0, 1.0], &y, &d).unwrap(), 1.0);
        assert_eq!(concordance_index(&[1.0, 2.0, 3.0, 4.0], &y, &d).unwrap(), 0.0);
    }
}
