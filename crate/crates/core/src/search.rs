//! Model-space exploration: enumeration, greedy initialization and the
//! augmented-space Gibbs sampler over `2p` binary indicators.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::Problem;
use crate::model::ModelIndex;

/// Default cap on the number of models [`enumerate_all`] will fit.
pub const DEFAULT_ENUMERATION_LIMIT: usize = 6561;

/// Indicators `γ̃`: entries `0..p` linear, `p..2p` non-linear.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AugmentedState {
    pub gtilde: Vec<bool>,
}

impl AugmentedState {
    pub fn null(p: usize) -> Self {
        AugmentedState { gtilde: vec![false; 2 * p] }
    }

    pub fn p(&self) -> usize {
        self.gtilde.len() / 2
    }

    pub fn model(&self) -> ModelIndex {
        ModelIndex::from_augmented(&self.gtilde)
    }

    pub fn from_model(m: &ModelIndex) -> Self {
        AugmentedState { gtilde: m.to_augmented() }
    }

    /// True when no covariate has a non-linear term without its linear one.
    pub fn is_valid(&self) -> bool {
        let p = self.p();
        (0..p).all(|j| self.gtilde[j] || !self.gtilde[j + p])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Enumeration,
    Gibbs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub gamma: ModelIndex,
    /// `log p̂(y|γ) + log p(γ)`, unnormalized.
    pub log_post: f64,
    /// Posterior renormalized over the listed models.
    pub prob: f64,
    /// Share of post-burn-in visits (Gibbs only).
    pub freq: Option<f64>,
    pub visits: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    /// `P(γ_j = 1 | y)`.
    pub linear: Vec<f64>,
    /// `P(γ_j = 2 | y)`.
    pub nonlinear: Vec<f64>,
    /// `P(γ_j ≠ 0 | y)`.
    pub any: Vec<f64>,
}

impl Marginals {
    fn from_weights<'a>(p: usize, it: impl Iterator<Item = (&'a ModelIndex, f64)>) -> Self {
        let mut linear = vec![0.0; p];
        let mut nonlinear = vec![0.0; p];
        for (m, w) in it {
            for (j, &g) in m.gamma.iter().enumerate() {
                match g {
                    1 => linear[j] += w,
                    2 => nonlinear[j] += w,
                    _ => {}
                }
            }
        }
        let any = linear.iter().zip(&nonlinear).map(|(a, b)| a + b).collect();
        Marginals { linear, nonlinear, any }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub iterations: usize,
    pub burn_in: usize,
    pub chains: usize,
    /// Share of non-forced indicator updates that changed the state.
    pub flip_rate: f64,
    /// Effective sample size of `I(γ_j ≠ 0)` per covariate.
    pub ess: Vec<f64>,
    /// Non-linear indicator updates for `j` that had to score a model.
    pub nonlinear_evals: Vec<u64>,
    /// Non-linear indicator updates for `j` skipped because its linear one was off.
    pub nonlinear_skips: Vec<u64>,
    /// Hierarchy violations seen in sampled states (always zero).
    pub constraint_violations: u64,
    pub distinct_models: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub method: Method,
    pub p: usize,
    /// Sorted by decreasing posterior, ties broken by `γ` ascending.
    pub models: Vec<ModelRecord>,
    pub marginals: Marginals,
    /// Marginals from visit frequencies (Gibbs only).
    pub marginals_freq: Option<Marginals>,
    pub diagnostics: Option<ChainDiagnostics>,
}

impl PosteriorSummary {
    pub fn top(&self) -> &ModelRecord {
        &self.models[0]
    }

    pub fn prob_of(&self, gamma: &ModelIndex) -> f64 {
        self.models.iter().find(|m| &m.gamma == gamma).map_or(0.0, |m| m.prob)
    }

    pub fn freq_of(&self, gamma: &ModelIndex) -> f64 {
        self.models.iter().find(|m| &m.gamma == gamma).and_then(|m| m.freq).unwrap_or(0.0)
    }
}

/// Builds a summary from scored models and optional post-burn-in visit
/// counts. Models with `−∞` score keep probability zero.
pub fn summarize(p: usize, scored: &BTreeMap<ModelIndex, f64>, visits: Option<&BTreeMap<ModelIndex, u64>>, method: Method) -> Result<PosteriorSummary> {
    if scored.is_empty() {
        return Err(Error::Config("no models to summarize".into()));
    }
    let max = scored.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Config("every visited model has zero posterior mass".into()));
    }
    let total: f64 = scored.values().map(|l| (l - max).exp()).sum();
    let n_visits: u64 = visits.map_or(0, |v| v.values().sum());
    let mut models: Vec<ModelRecord> = scored
        .iter()
        .map(|(g, &l)| {
            let v = visits.and_then(|v| v.get(g).copied()).unwrap_or(0);
            ModelRecord {
                gamma: g.clone(),
                log_post: l,
                prob: (l - max).exp() / total,
                freq: visits.map(|_| if n_visits > 0 { v as f64 / n_visits as f64 } else { 0.0 }),
                visits: v,
            }
        })
        .collect();
    models.sort_by(|a, b| b.log_post.total_cmp(&a.log_post).then_with(|| a.gamma.cmp(&b.gamma)));
    let marginals = Marginals::from_weights(p, scored.iter().map(|(g, &l)| (g, (l - max).exp() / total)));
    let marginals_freq = visits.map(|v| {
        let n = n_visits.max(1) as f64;
        Marginals::from_weights(p, v.iter().map(|(g, &c)| (g, c as f64 / n)))
    });
    Ok(PosteriorSummary { method, p, models, marginals, marginals_freq, diagnostics: None })
}

/// All models in the trinary space, respecting covariates without a
/// non-linear term.
pub fn all_models(problem: &Problem) -> Vec<ModelIndex> {
    let p = problem.p();
    let mut out = vec![ModelIndex::null(p)];
    for j in 0..p {
        let top = if problem.allows_nonlinear(j) { 2 } else { 1 };
        let mut next = Vec::with_capacity(out.len() * (top as usize + 1));
        for m in &out {
            for g in 0..=top {
                let mut m = m.clone();
                m.gamma[j] = g;
                next.push(m);
            }
        }
        out = next;
    }
    out.sort();
    out
}

/// Exact posterior over every model with positive prior mass.
pub fn enumerate_all(problem: &Problem, limit: usize) -> Result<PosteriorSummary> {
    let p = problem.p();
    let count: f64 = (0..p).map(|j| if problem.allows_nonlinear(j) { 3.0 } else { 2.0 }).product();
    if count > limit as f64 {
        return Err(Error::EnumerationLimit { p, limit: limit as u64 });
    }
    let models = all_models(problem);
    let scored: Vec<(ModelIndex, f64)> = models
        .into_par_iter()
        .filter(|m| problem.model_logprior(m) > f64::NEG_INFINITY)
        .map(|m| problem.log_model_posterior(&m, None).map(|(l, _)| (m, l)))
        .collect::<Result<_>>()?;
    summarize(p, &scored.into_iter().collect(), None, Method::Enumeration)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsOptions {
    /// Iterations `B` per chain.
    pub iterations: usize,
    pub burn_in_frac: f64,
    pub seed: u64,
    pub chains: usize,
    /// Start from the greedy mode search rather than the null model.
    pub greedy_init: bool,
}

impl Default for GibbsOptions {
    fn default() -> Self {
        GibbsOptions { iterations: 10_000, burn_in_frac: 0.1, seed: 1, chains: 1, greedy_init: true }
    }
}

/// Posterior of the model coded by `state` (with `(0,1)` read as `γ_j = 2`).
fn score(problem: &Problem, state: &[bool], cache: &mut BTreeMap<ModelIndex, f64>) -> Result<f64> {
    let m = ModelIndex::from_augmented(state);
    if let Some(&l) = cache.get(&m) {
        return Ok(l);
    }
    let (l, _) = problem.log_model_posterior(&m, None)?;
    cache.insert(m, l);
    Ok(l)
}

/// Greedy start for the sampler: coordinate-wise argmax over the `2p`
/// indicators from the null model until no update, then
/// `γ̃_j = max(γ̃_j, γ̃_{j+p})`.
pub fn greedy_init(problem: &Problem) -> Result<AugmentedState> {
    greedy_from(problem, AugmentedState::null(problem.p()))
}

/// Greedy ascent from an arbitrary state.
pub fn greedy_from(problem: &Problem, start: AugmentedState) -> Result<AugmentedState> {
    let p = problem.p();
    let mut cache = BTreeMap::new();
    let mut s = start.gtilde;
    let mut current = score(problem, &s, &mut cache)?;
    for _pass in 0..(4 * p + 10) {
        let mut changed = false;
        for j in 0..2 * p {
            if j >= p && !problem.allows_nonlinear(j - p) {
                continue;
            }
            s[j] = !s[j];
            let alt = score(problem, &s, &mut cache)?;
            if alt > current {
                current = alt;
                changed = true;
            } else {
                s[j] = !s[j];
            }
        }
        if !changed {
            break;
        }
    }
    for j in 0..p {
        s[j] = s[j] || s[j + p];
    }
    Ok(AugmentedState { gtilde: s })
}

/// `P(choose 1)` from two log posteriors.
fn prob_one(l0: f64, l1: f64) -> f64 {
    match (l0 == f64::NEG_INFINITY, l1 == f64::NEG_INFINITY) {
        (_, true) => 0.0,
        (true, false) => 1.0,
        _ => 1.0 / (1.0 + (l0 - l1).exp()),
    }
}

struct ChainOutput {
    scored: BTreeMap<ModelIndex, f64>,
    visits: BTreeMap<ModelIndex, u64>,
    trace: Vec<Vec<bool>>,
    flips: u64,
    updates: u64,
    nonlinear_evals: Vec<u64>,
    nonlinear_skips: Vec<u64>,
    violations: u64,
}

fn run_chain(problem: &Problem, opts: &GibbsOptions, chain: usize) -> Result<ChainOutput> {
    let p = problem.p();
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    rng.set_stream(chain as u64);
    let start = if opts.greedy_init { greedy_init(problem)? } else { AugmentedState::null(p) };
    let mut s = start.gtilde;
    let mut model = ModelIndex::from_augmented(&s);
    let (mut cur, mut fit) = problem.log_model_posterior(&model, None)?;
    let burn = (opts.iterations as f64 * opts.burn_in_frac).floor() as usize;
    let mut out = ChainOutput {
        scored: BTreeMap::new(),
        visits: BTreeMap::new(),
        trace: Vec::with_capacity(opts.iterations.saturating_sub(burn)),
        flips: 0,
        updates: 0,
        nonlinear_evals: vec![0; p],
        nonlinear_skips: vec![0; p],
        violations: 0,
    };
    out.scored.insert(model.clone(), cur);
    for b in 0..opts.iterations {
        for j in 0..2 * p {
            let cov = j % p;
            if j < p && s[j + p] {
                // Linear indicator forced on by the non-linear one.
                continue;
            }
            if j >= p && !(s[cov] && problem.allows_nonlinear(cov)) {
                if problem.allows_nonlinear(cov) {
                    out.nonlinear_skips[cov] += 1;
                }
                debug_assert!(!s[j]);
                continue;
            }
            if j >= p {
                out.nonlinear_evals[cov] += 1;
            }
            out.updates += 1;
            let mut alt = model.clone();
            alt.gamma[cov] = match (j < p, s[j]) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 1,
                (false, false) => 2,
            };
            let (l_alt, fit_alt) = problem.log_model_posterior(&alt, fit.as_deref())?;
            let (l0, l1) = if s[j] { (l_alt, cur) } else { (cur, l_alt) };
            let u: f64 = rng.random();
            if (u < prob_one(l0, l1)) != s[j] {
                s[j] = !s[j];
                out.flips += 1;
                model = alt;
                cur = l_alt;
                fit = fit_alt;
                out.scored.entry(model.clone()).or_insert(cur);
            }
        }
        if (0..p).any(|j| s[j + p] && !s[j]) {
            out.violations += 1;
        }
        if b >= burn {
            *out.visits.entry(model.clone()).or_insert(0) += 1;
            out.trace.push((0..p).map(|j| s[j] || s[j + p]).collect());
        }
    }
    Ok(out)
}

/// Runs `chains` independent chains (concurrently when more than one),
/// pools them and summarizes by both estimators. The renormalized
/// estimator covers every state the chains occupied, burn-in included.
pub fn gibbs_run(problem: &Problem, opts: &GibbsOptions) -> Result<PosteriorSummary> {
    if opts.iterations == 0 || opts.chains == 0 {
        return Err(Error::Config("iterations and chains must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&opts.burn_in_frac) {
        return Err(Error::Config("burn-in fraction must lie in [0, 1)".into()));
    }
    let outs: Vec<ChainOutput> = if opts.chains == 1 {
        vec![run_chain(problem, opts, 0)?]
    } else {
        (0..opts.chains).into_par_iter().map(|c| run_chain(problem, opts, c)).collect::<Result<_>>()?
    };
    let p = problem.p();
    let mut scored = BTreeMap::new();
    let mut visits = BTreeMap::new();
    let mut flips = 0;
    let mut updates = 0;
    let mut nonlinear_evals = vec![0; p];
    let mut nonlinear_skips = vec![0; p];
    let mut violations = 0;
    let mut ess = vec![0.0; p];
    for o in &outs {
        for (m, &l) in &o.scored {
            scored.entry(m.clone()).or_insert(l);
        }
        for (m, &c) in &o.visits {
            *visits.entry(m.clone()).or_insert(0) += c;
        }
        flips += o.flips;
        updates += o.updates;
        violations += o.violations;
        for j in 0..p {
            nonlinear_evals[j] += o.nonlinear_evals[j];
            nonlinear_skips[j] += o.nonlinear_skips[j];
            let series: Vec<f64> = o.trace.iter().map(|t| t[j] as u8 as f64).collect();
            ess[j] += effective_sample_size(&series);
        }
    }
    let mut summary = summarize(p, &scored, Some(&visits), Method::Gibbs)?;
    let burn = (opts.iterations as f64 * opts.burn_in_frac).floor() as usize;
    summary.diagnostics = Some(ChainDiagnostics {
        iterations: opts.iterations,
        burn_in: burn,
        chains: opts.chains,
        flip_rate: if updates > 0 { flips as f64 / updates as f64 } else { 0.0 },
        ess,
        nonlinear_evals,
        nonlinear_skips,
        constraint_violations: violations,
        distinct_models: summary.models.len(),
    });
    Ok(summary)
}

/// Effective sample size by Geyer's initial positive sequence.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let acf = |k: usize| (0..n - k).map(|i| (x[i] - mean) * (x[i + k] - mean)).sum::<f64>() / (n as f64 * c0);
    let mut sum = 0.0;
    let mut k = 1;
    while k + 1 < n {
        let pair = acf(k) + acf(k + 1);
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        k += 2;
    }
    let tau = -1.0 + 2.0 * (1.0 + sum);
    (n as f64 / tau.max(1e-12)).min(n as f64)
}

/// Enumeration when `count ≤ limit`, otherwise Gibbs.
pub fn explore(problem: &Problem, limit: usize, gibbs: &GibbsOptions) -> Result<PosteriorSummary> {
    match enumerate_all(problem, limit) {
        Err(Error::EnumerationLimit { .. }) => gibbs_run(problem, gibbs),
        r => r,
    }
}
