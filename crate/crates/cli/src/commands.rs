use rayon::prelude::*;
use serde::Serialize;
use survsel::inference::{Coefficients, Problem};
use survsel::model::Backend;
use survsel::priors::{self, CoefPrior};
use survsel::search::{self, ChainDiagnostics, Method, PosteriorSummary};
use survsel::sim::{self, CvResult, PermutationResult, ReplicateResult};

use crate::config::RunConfig;
use crate::data::{self, Table as Input};
use crate::output::{emit, num, Table};
use crate::CliError;

#[derive(Serialize)]
struct ModelRow {
    rank: usize,
    gamma: String,
    log_post: f64,
    prob: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    freq: Option<f64>,
}

#[derive(Serialize)]
struct MarginalRow {
    covariate: String,
    p_linear: f64,
    p_nonlinear: f64,
    p_any: f64,
}

#[derive(Serialize)]
struct TopModel {
    gamma: String,
    log_marglik: f64,
    converged: bool,
    optimizer: survsel::inference::Optimizer,
    intercept: Option<f64>,
    sigma: Option<f64>,
    beta: Vec<(String, f64)>,
    delta: Vec<(String, Vec<f64>)>,
}

#[derive(Serialize)]
struct FitOutput {
    method: Method,
    backend: Backend,
    n: usize,
    events: usize,
    covariates: Vec<String>,
    models_scored: usize,
    models: Vec<ModelRow>,
    marginals: Vec<MarginalRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    marginals_freq: Option<Vec<MarginalRow>>,
    top_model: TopModel,
    #[serde(skip_serializing_if = "Option::is_none")]
    diagnostics: Option<ChainDiagnostics>,
}

fn input(cfg: &RunConfig) -> Result<Input, CliError> {
    let path = cfg.input.as_ref().ok_or_else(|| CliError::Config("`input` is required".into()))?;
    data::read_table(path, cfg)
}

fn build_problem(cfg: &RunConfig, t: Input) -> Result<Problem, CliError> {
    let opts = cfg.problem_options(t.dummies);
    let p = if cfg.backend == Backend::Probit {
        Problem::probit(&t.status, t.data.x.clone(), Some(t.data.names.clone()), opts)
    } else {
        Problem::new(t.data, opts)
    };
    p.map_err(CliError::Model)
}

fn marginal_rows(names: &[String], m: &search::Marginals) -> Vec<MarginalRow> {
    names
        .iter()
        .enumerate()
        .map(|(j, nm)| MarginalRow { covariate: nm.clone(), p_linear: m.linear[j], p_nonlinear: m.nonlinear[j], p_any: m.any[j] })
        .collect()
}

fn top_model(problem: &Problem, summary: &PosteriorSummary) -> Result<TopModel, CliError> {
    let gamma = summary.top().gamma.clone();
    let fit = problem.fit(&gamma, None).map_err(CliError::Model)?;
    let Coefficients { intercept, sigma, linear, nonlinear } = problem.coefficients(&fit);
    let names = &problem.data().names;
    Ok(TopModel {
        gamma: gamma.label(),
        log_marglik: fit.log_marglik,
        converged: fit.converged,
        optimizer: fit.optimizer,
        intercept,
        sigma,
        beta: linear.into_iter().map(|(j, b)| (names[j].clone(), b)).collect(),
        delta: nonlinear.into_iter().map(|(j, d)| (names[j].clone(), d)).collect(),
    })
}

pub fn fit(cfg: &RunConfig) -> Result<(), CliError> {
    let t = input(cfg)?;
    let problem = build_problem(cfg, t)?;
    let n = problem.data().n();
    let events = if cfg.backend == Backend::Probit { 0 } else { problem.data().n_o() };
    log::info!("fitting n = {n}, p = {}, backend {:?}", problem.p(), cfg.backend);
    let summary = search::explore(&problem, cfg.enum_limit, &cfg.gibbs_options()).map_err(CliError::Model)?;
    let names = problem.data().names.clone();
    let models: Vec<ModelRow> = summary
        .models
        .iter()
        .take(cfg.top_k)
        .enumerate()
        .map(|(k, m)| ModelRow { rank: k + 1, gamma: m.gamma.label(), log_post: m.log_post, prob: m.prob, freq: m.freq })
        .collect();
    let top = top_model(&problem, &summary)?;

    let mut t_models = Table::new("models", &["rank", "gamma", "log_post", "prob", "freq"]);
    for m in &models {
        t_models.push(vec![m.rank.to_string(), m.gamma.clone(), num(m.log_post), num(m.prob), m.freq.map(num).unwrap_or_default()]);
    }
    let marginals = marginal_rows(&names, &summary.marginals);
    let mut t_marg = Table::new("marginals", &["covariate", "p_linear", "p_nonlinear", "p_any"]);
    for m in &marginals {
        t_marg.push(vec![m.covariate.clone(), num(m.p_linear), num(m.p_nonlinear), num(m.p_any)]);
    }
    let mut t_eff = Table::new("effects", &["covariate", "x", "effect"]);
    let fit = problem.fit(&summary.top().gamma, None).map_err(CliError::Model)?;
    for (j, &g) in summary.top().gamma.gamma.iter().enumerate() {
        if g == 0 {
            continue;
        }
        let col = problem.data().x.column(j);
        let (lo, hi) = col.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let steps = 40;
        for k in 0..=steps {
            let x = lo + (hi - lo) * k as f64 / steps as f64;
            t_eff.push(vec![names[j].clone(), num(x), num(problem.partial_effect(&fit, j, x))]);
        }
    }
    let out = FitOutput {
        method: summary.method,
        backend: cfg.backend,
        n,
        events,
        covariates: names.clone(),
        models_scored: summary.models.len(),
        models,
        marginals,
        marginals_freq: summary.marginals_freq.as_ref().map(|m| marginal_rows(&names, m)),
        top_model: top,
        diagnostics: summary.diagnostics.clone(),
    };
    emit(cfg, "fit", &out, &[t_models, t_marg, t_eff])
}

#[derive(Serialize)]
struct SimulateOutput {
    scenario: sim::ScenarioSpec,
    truth: String,
    replicates: usize,
    correct_selection: f64,
    mean_active_selected: f64,
    mean_inactive_selected: f64,
    mean_inclusion: Vec<f64>,
    mean_nonlinear: Vec<f64>,
    mean_censored_share: f64,
}

pub fn simulate(cfg: &RunConfig) -> Result<(), CliError> {
    let spec = cfg.scenario_spec();
    spec.validate().map_err(CliError::Model)?;
    let p = if spec.omit_x2 { spec.p_total - 1 } else { spec.p_total };
    let study = cfg.study_options(vec![false; p]);
    if let Some(path) = &cfg.data_out {
        let d = sim::gen_scenario_rng(&spec, &mut sim::replicate_rng(cfg.seed, 0)).map_err(CliError::Model)?;
        data::write_dataset(path, &d)?;
    }
    let reps: Vec<ReplicateResult> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|r| sim::run_replicate(&spec, cfg.seed, r, &study))
        .collect::<Result<_, _>>()
        .map_err(CliError::Model)?;
    let k = reps.len().max(1) as f64;
    let mean_vec = |f: &dyn Fn(&ReplicateResult) -> &Vec<f64>| -> Vec<f64> { (0..p).map(|j| reps.iter().map(|r| f(r)[j]).sum::<f64>() / k).collect() };
    let out = SimulateOutput {
        truth: spec.truth().label(),
        replicates: reps.len(),
        correct_selection: reps.iter().filter(|r| r.metrics.exact).count() as f64 / k,
        mean_active_selected: reps.iter().map(|r| r.metrics.active_selected as f64).sum::<f64>() / k,
        mean_inactive_selected: reps.iter().map(|r| r.metrics.inactive_selected as f64).sum::<f64>() / k,
        mean_inclusion: mean_vec(&|r| &r.inclusion),
        mean_nonlinear: mean_vec(&|r| &r.nonlinear),
        mean_censored_share: reps.iter().map(|r| r.censored_share).sum::<f64>() / k,
        scenario: spec,
    };
    let mut t = Table::new("replicates", &["replicate", "censored_share", "selected", "correct", "active_selected", "inactive_selected", "p_any_x1", "p_any_x2", "p_nonlinear_x2", "top_prob"]);
    for r in &reps {
        t.push(vec![
            r.replicate.to_string(),
            num(r.censored_share),
            r.selected.label(),
            (r.metrics.exact as u8).to_string(),
            r.metrics.active_selected.to_string(),
            r.metrics.inactive_selected.to_string(),
            num(r.inclusion[0]),
            r.inclusion.get(1).copied().map(num).unwrap_or_default(),
            r.nonlinear.get(1).copied().map(num).unwrap_or_default(),
            num(r.top_prob),
        ]);
    }
    emit(cfg, "simulate", &out, &[t])
}

#[derive(Serialize)]
struct PermuteOutput {
    permutations: usize,
    null_selection_rate: f64,
    mean_null_prob: f64,
    mean_selected_size: f64,
    runs: Vec<PermutationResult>,
}

pub fn permute(cfg: &RunConfig) -> Result<(), CliError> {
    let (dataset, dummies) = match &cfg.input {
        Some(_) => {
            let t = input(cfg)?;
            (t.data, t.dummies)
        }
        None => {
            let spec = cfg.scenario_spec();
            let d = sim::gen_scenario(&spec, cfg.seed).map_err(CliError::Model)?;
            let p = d.p();
            (d, vec![false; p])
        }
    };
    if cfg.backend == Backend::Probit {
        return Err(CliError::Config("permute supports the survival backends only".into()));
    }
    let study = cfg.study_options(dummies);
    let runs: Vec<PermutationResult> = (0..cfg.permutations as u64)
        .into_par_iter()
        .map(|k| sim::run_permutation(&dataset, cfg.seed.wrapping_add(k), &study))
        .collect::<Result<_, _>>()
        .map_err(CliError::Model)?;
    let k = runs.len().max(1) as f64;
    let mut t = Table::new("permutations", &["permutation", "selected_size", "null_selected", "null_prob"]);
    for r in &runs {
        t.push(vec![r.permutation.to_string(), r.selected_size.to_string(), (r.null_selected as u8).to_string(), num(r.null_prob)]);
    }
    let out = PermuteOutput {
        permutations: runs.len(),
        null_selection_rate: runs.iter().filter(|r| r.null_selected).count() as f64 / k,
        mean_null_prob: runs.iter().map(|r| r.null_prob).sum::<f64>() / k,
        mean_selected_size: runs.iter().map(|r| r.selected_size as f64).sum::<f64>() / k,
        runs,
    };
    emit(cfg, "permute", &out, &[t])
}

#[derive(Serialize)]
struct ElicitRow {
    t: f64,
    family: CoefPrior,
    g: f64,
    achieved: f64,
}

pub fn elicit(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.prior == CoefPrior::Zellner {
        return Err(CliError::Config("elicitation applies to the pmomz and pemomz priors".into()));
    }
    let mut rows = Vec::new();
    let mut t = Table::new("elicit", &["t", "family", "g", "achieved"]);
    for &thr in &cfg.t {
        if !(thr > 1.0) {
            return Err(CliError::Config(format!("threshold t = {thr} must exceed 1")));
        }
        let g = priors::elicit_dispersion(thr, cfg.prior, cfg.a_sigma, cfg.b_sigma, cfg.target).map_err(CliError::Model)?;
        let achieved = 1.0 - priors::marginal_prior_cdf(thr.ln(), cfg.prior, g, cfg.a_sigma, cfg.b_sigma).map_err(CliError::Model)?;
        let fam = if cfg.prior == CoefPrior::PMomZ { "pmomz" } else { "pemomz" };
        t.push(vec![num(thr), fam.into(), num(g), num(achieved)]);
        rows.push(ElicitRow { t: thr, family: cfg.prior, g, achieved });
    }
    emit(cfg, "elicit", &rows, &[t])
}

pub fn cv(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.backend == Backend::Probit {
        return Err(CliError::Config("cv supports the survival backends only".into()));
    }
    let t = input(cfg)?;
    let study = cfg.study_options(t.dummies);
    let res: CvResult = sim::loo_concordance(&t.data, &study).map_err(CliError::Model)?;
    let mut table = Table::new("cv", &["row", "risk"]);
    for (i, r) in res.risk.iter().enumerate() {
        table.push(vec![(i + 1).to_string(), num(*r)]);
    }
    emit(cfg, "cv", &res, &[table])
}

