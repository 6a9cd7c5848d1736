//! Per-model posterior modes, Laplace-approximated marginal likelihoods and
//! the shared fit memo.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::design::{DesignBundle, DesignOptions, GramCache, SurvivalDataset};
use crate::error::{Error, Result};
use crate::likelihoods::{self, CoxRows, Derivs, Kinks, ModelRows, Order, Param, Path};
use crate::model::{Backend, Group, Layout, ModelIndex};
use crate::priors::{self, CoefPrior, PriorSpec};
use crate::specfun::ApproxProfile;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Newton,
    Cda,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Gradient max-norm at which Newton stops.
    pub grad_tol: f64,
    /// Newton stops once the predicted increase falls below this.
    pub newton_obj_tol: f64,
    pub newton_max_iter: usize,
    /// CDA stops when a full sweep gains less than this.
    pub cda_tol: f64,
    /// Step shrink factor of the CDA backtracking.
    pub cda_backtrack: f64,
    pub cda_max_sweeps: usize,
    /// Largest `d_γ` optimized by Newton; larger models use CDA.
    pub newton_max_dim: usize,
    pub path: Path,
    pub warm_start: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            grad_tol: 1e-6,
            newton_obj_tol: 1e-8,
            newton_max_iter: 100,
            cda_tol: 1e-2,
            cda_backtrack: 0.5,
            cda_max_sweeps: 500,
            newton_max_dim: 15,
            path: Path::Auto,
            warm_start: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProblemOptions {
    pub backend: Backend,
    pub prior: PriorSpec,
    pub design: DesignOptions,
    /// Index into `design.r_levels` of the spline level used by models.
    pub level: usize,
    pub profile: ApproxProfile,
    pub fit: FitOptions,
}

impl Default for ProblemOptions {
    fn default() -> Self {
        ProblemOptions {
            backend: Backend::AftNormal,
            prior: PriorSpec::aft(),
            design: DesignOptions::default(),
            level: 0,
            profile: ApproxProfile::Fast,
            fit: FitOptions::default(),
        }
    }
}

impl ProblemOptions {
    pub fn new(backend: Backend) -> Self {
        let prior = match backend {
            Backend::Probit => PriorSpec::probit(),
            Backend::Cox => PriorSpec::cox(),
            _ => PriorSpec::aft(),
        };
        ProblemOptions { backend, prior, ..Default::default() }
    }
}

/// Posterior mode and Laplace approximation of one model.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub gamma: ModelIndex,
    /// Design columns of the coefficients, in parameter order.
    pub cols: Vec<usize>,
    /// MAP in `(α, κ, ρ)` (no `ρ` for Cox and probit).
    pub eta_map: Vec<f64>,
    /// `−(H + ∇² log π)` at the MAP.
    pub neg_hess_logpost: DMatrix<f64>,
    /// `ℓ + log π` at the MAP.
    pub log_post: f64,
    pub log_marglik: f64,
    pub iterations: usize,
    pub optimizer: Optimizer,
    pub converged: bool,
    /// Laplace determinant unavailable; `log_marglik = −∞`.
    pub degenerate: bool,
    /// Parameters ran off beyond `‖η‖ > 10³` (probit separation).
    pub separated: bool,
    pub grad_norm: f64,
}

impl FitResult {
    pub fn dim(&self) -> usize {
        self.eta_map.len()
    }
}

/// Log Bayes factor `log p̂(y|γ) − log p̂(y|γ′)`.
pub fn bayes_factor(a: &FitResult, b: &FitResult) -> f64 {
    if a.gamma == b.gamma {
        return 0.0;
    }
    a.log_marglik - b.log_marglik
}

#[derive(Clone, Debug)]
struct SplinePrior {
    gram: DMatrix<f64>,
    logdet: f64,
}

/// Data, design, prior and backend for one analysis, plus the fit memo.
pub struct Problem {
    data: SurvivalDataset,
    design: DesignBundle,
    gram: GramCache,
    opts: ProblemOptions,
    xtx: Vec<f64>,
    spline: Vec<Option<SplinePrior>>,
    cox: Option<(Vec<usize>, Vec<(usize, usize)>)>,
    group_width: usize,
    memo: RwLock<HashMap<ModelIndex, Arc<FitResult>>>,
}

impl Problem {
    pub fn new(data: SurvivalDataset, opts: ProblemOptions) -> Result<Self> {
        let design = DesignBundle::build(&data, &opts.design)?;
        Self::from_parts(data, design, opts)
    }

    /// Probit regression of binary outcomes `omega` on the covariates.
    pub fn probit(omega: &[bool], x: nalgebra::DMatrix<f64>, names: Option<Vec<String>>, mut opts: ProblemOptions) -> Result<Self> {
        opts.backend = Backend::Probit;
        let n = omega.len();
        let names = names.unwrap_or_else(|| (1..=x.ncols()).map(|j| format!("x{j}")).collect());
        let data = SurvivalDataset::with_names(vec![0.0; n], vec![false; n], x, names)?;
        let design = DesignBundle::build(&data, &opts.design)?;
        let (rdata, rdesign) = likelihoods::probit_reduce(omega, &data, &design);
        Self::from_parts(rdata, rdesign, opts)
    }

    pub fn from_parts(data: SurvivalDataset, design: DesignBundle, opts: ProblemOptions) -> Result<Self> {
        opts.prior.validate()?;
        if opts.level >= opts.design.r_levels.len() {
            return Err(Error::Config(format!("spline level {} not among the {} configured levels", opts.level, opts.design.r_levels.len())));
        }
        if opts.backend == Backend::Cox && data.n_o() == 0 {
            return Err(Error::NoEvents);
        }
        let p = data.p();
        let gram = GramCache::new(&design, &data.y, &data.d);
        let xtx = (0..p).map(|j| design.full_dot(1 + j, 1 + j)).collect();
        let spline = (0..p)
            .map(|j| {
                if !design.has_nonlinear(j) {
                    return None;
                }
                let ids = design.nonlinear_ids(j, opts.level);
                let k = ids.len();
                let mut g = DMatrix::zeros(k, k);
                for a in 0..k {
                    for b in a..k {
                        let v = design.full_dot(ids[a], ids[b]);
                        g[(a, b)] = v;
                        g[(b, a)] = v;
                    }
                }
                let logdet = g.clone().cholesky().map(|c| 2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())?;
                Some(SplinePrior { gram: g, logdet })
            })
            .collect();
        let cox = (opts.backend == Backend::Cox).then(|| likelihoods::cox_order(&data.y));
        let group_width = opts.design.r_levels[..=opts.level].iter().sum();
        Ok(Problem { data, design, gram, opts, xtx, spline, cox, group_width, memo: RwLock::new(HashMap::new()) })
    }

    pub fn data(&self) -> &SurvivalDataset {
        &self.data
    }

    pub fn design(&self) -> &DesignBundle {
        &self.design
    }

    pub fn gram(&self) -> &GramCache {
        &self.gram
    }

    pub fn options(&self) -> &ProblemOptions {
        &self.opts
    }

    pub fn backend(&self) -> Backend {
        self.opts.backend
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    /// Nominal width `r` of a spline group.
    pub fn group_width(&self) -> usize {
        self.group_width
    }

    /// Whether covariate `j` can take a non-linear effect.
    pub fn allows_nonlinear(&self, j: usize) -> bool {
        self.design.has_nonlinear(j)
    }

    /// Checks `γ` against the problem and returns an error for invalid codes.
    pub fn check_model(&self, gamma: &ModelIndex) -> Result<()> {
        if gamma.p() != self.p() {
            return Err(Error::Dimension { expected: self.p(), got: gamma.p() });
        }
        for (j, &g) in gamma.gamma.iter().enumerate() {
            if g > 2 || (g == 2 && !self.allows_nonlinear(j)) {
                return Err(Error::Config(format!("covariate {} cannot take effect code {g}", j + 1)));
            }
        }
        Ok(())
    }

    pub fn model_logprior(&self, gamma: &ModelIndex) -> f64 {
        priors::model_logprior(gamma, &self.opts.prior.model_prior, self.data.n(), self.group_width)
    }

    pub fn eval(&self, gamma: &ModelIndex) -> ModelEval<'_> {
        ModelEval::new(self, gamma)
    }

    /// Memoized fit; `previous` offers a warm start.
    pub fn fit(&self, gamma: &ModelIndex, previous: Option<&FitResult>) -> Result<Arc<FitResult>> {
        if let Some(f) = self.memo.read().get(gamma) {
            return Ok(f.clone());
        }
        self.check_model(gamma)?;
        let ev = self.eval(gamma);
        let prev = if self.opts.fit.warm_start { previous } else { None };
        let start = ev.init_guess(prev);
        let fit = Arc::new(ev.laplace_logmarglik(start)?);
        Ok(self.memo.write().entry(gamma.clone()).or_insert(fit).clone())
    }

    /// Fit from scratch, bypassing (and not filling) the memo.
    pub fn fit_fresh(&self, gamma: &ModelIndex) -> Result<FitResult> {
        self.check_model(gamma)?;
        let ev = self.eval(gamma);
        let start = ev.init_guess(None);
        ev.laplace_logmarglik(start)
    }

    /// `log p̂(y|γ) + log p(γ)`, skipping the fit for zero prior mass.
    pub fn log_model_posterior(&self, gamma: &ModelIndex, previous: Option<&FitResult>) -> Result<(f64, Option<Arc<FitResult>>)> {
        let lp = self.model_logprior(gamma);
        if lp == f64::NEG_INFINITY {
            return Ok((lp, None));
        }
        let fit = self.fit(gamma, previous)?;
        Ok((fit.log_marglik + lp, Some(fit)))
    }

    pub fn memo_len(&self) -> usize {
        self.memo.read().len()
    }

    pub fn memo_get(&self, gamma: &ModelIndex) -> Option<Arc<FitResult>> {
        self.memo.read().get(gamma).cloned()
    }
}

/// MAP coefficients on the original covariate scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// Intercept on the response scale (absent for Cox).
    pub intercept: Option<f64>,
    /// `σ = e^{−ρ}` (AFT backends only).
    pub sigma: Option<f64>,
    /// `(covariate, β_j)` per raw unit of `x_j`.
    pub linear: Vec<(usize, f64)>,
    /// `(covariate, δ_j)` on the stored spline basis.
    pub nonlinear: Vec<(usize, Vec<f64>)>,
}

impl Problem {
    fn response_scale(&self, fit: &FitResult) -> f64 {
        if self.opts.backend.has_scale() {
            (-fit.eta_map[fit.cols.len()]).exp()
        } else {
            1.0
        }
    }

    /// Back-transforms a fit to `(β, δ, σ)`: coefficients act on the
    /// log-time scale for AFT, the log-hazard scale for Cox and the latent
    /// scale for probit.
    pub fn coefficients(&self, fit: &FitResult) -> Coefficients {
        let sigma = self.response_scale(fit);
        let mut intercept = 0.0;
        let mut linear = Vec::new();
        let mut nonlinear: Vec<(usize, Vec<f64>)> = Vec::new();
        for (c, &col) in fit.cols.iter().enumerate() {
            let v = sigma * fit.eta_map[c];
            if col == 0 {
                intercept += v;
            } else if col <= self.p() {
                let j = col - 1;
                let meta = &self.design.meta[j];
                linear.push((j, v / meta.scale));
                intercept += v * meta.forward(0.0);
            } else {
                let j = (0..self.p()).find(|&j| self.design.nonlinear_ids(j, self.opts.level).contains(&col)).expect("spline column");
                match nonlinear.last_mut() {
                    Some((k, d)) if *k == j => d.push(v),
                    _ => nonlinear.push((j, vec![v])),
                }
            }
        }
        Coefficients {
            intercept: self.opts.backend.has_intercept().then_some(intercept),
            sigma: self.opts.backend.has_scale().then_some(sigma),
            linear,
            nonlinear,
        }
    }

    /// Fitted contribution of covariate `j` at raw value `x`, centered at
    /// `x = 0` for the linear part.
    pub fn partial_effect(&self, fit: &FitResult, j: usize, x: f64) -> f64 {
        let mut raw = vec![0.0; self.p()];
        raw[j] = x;
        let row = self.design.transform_row(&raw);
        let sigma = self.response_scale(fit);
        let lin = DesignBundle::linear_id(j);
        let ids = self.design.nonlinear_ids(j, self.opts.level);
        let mut v = 0.0;
        for (c, &col) in fit.cols.iter().enumerate() {
            if col == lin {
                v += fit.eta_map[c] * (row[col] - self.design.meta[j].forward(0.0));
            } else if ids.contains(&col) {
                v += fit.eta_map[c] * row[col];
            }
        }
        sigma * v
    }
}

enum Rows {
    Aft(ModelRows),
    Cox(CoxRows),
}

/// Log-posterior of one model as a function of its parameters.
pub struct ModelEval<'a> {
    problem: &'a Problem,
    pub gamma: ModelIndex,
    pub layout: Layout,
    rows: Rows,
}

impl<'a> ModelEval<'a> {
    pub fn new(problem: &'a Problem, gamma: &ModelIndex) -> Self {
        Self::with_path(problem, gamma, problem.opts.fit.path)
    }

    /// Same, forcing the uncensored-term route.
    pub fn with_path(problem: &'a Problem, gamma: &ModelIndex, path: Path) -> Self {
        let layout = Layout::new(gamma, &problem.design, problem.opts.backend, problem.opts.level);
        let rows = match problem.opts.backend {
            Backend::Cox => {
                let (order, ties) = problem.cox.as_ref().expect("cox ordering");
                Rows::Cox(CoxRows::build(&problem.data, &problem.design, &layout.cols, order, ties))
            }
            Backend::AftLaplace => {
                Rows::Aft(ModelRows::build(&problem.data, &problem.design, Some(&problem.gram), &layout.cols, Path::Direct, true))
            }
            _ => Rows::Aft(ModelRows::build(&problem.data, &problem.design, Some(&problem.gram), &layout.cols, path, false)),
        };
        ModelEval { problem, gamma: gamma.clone(), layout, rows }
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn rows(&self) -> Option<&ModelRows> {
        match &self.rows {
            Rows::Aft(r) => Some(r),
            Rows::Cox(_) => None,
        }
    }

    /// Log-likelihood at `eta` in the requested parameterization. For the
    /// scale-free backends `param` is ignored.
    pub fn loglik(&self, eta: &[f64], order: Order, param: Param) -> Result<Derivs> {
        self.loglik_inner(eta, order, param, false)
    }

    fn loglik_inner(&self, eta: &[f64], order: Order, param: Param, optimizing: bool) -> Result<Derivs> {
        let dim = self.dim();
        if eta.len() != dim {
            return Err(Error::Dimension { expected: dim, got: eta.len() });
        }
        let k = self.layout.k();
        let profile = self.problem.opts.profile;
        match (&self.rows, self.problem.opts.backend) {
            (Rows::Cox(rows), _) => likelihoods::cox_eval(rows, eta, order),
            (Rows::Aft(rows), Backend::Probit) => Ok(likelihoods::probit_eval(rows, eta, order, profile)),
            (Rows::Aft(rows), backend) => {
                let s = eta[k];
                let tau = if param == Param::Rho { s.exp() } else { s };
                let d = if backend == Backend::AftLaplace {
                    let kinks = if optimizing { Kinks::Subgradient } else { Kinks::Error };
                    likelihoods::aftl_eval(rows, &eta[..k], tau, order, kinks, optimizing)?
                } else {
                    likelihoods::aftn_eval(rows, &eta[..k], tau, order, profile)
                };
                Ok(if param == Param::Rho { likelihoods::to_rho(d, tau) } else { d })
            }
        }
    }

    /// Log prior density in `(α, κ, ρ)`.
    pub fn logprior(&self, eta: &[f64], order: Order) -> Result<Derivs> {
        let pr = &self.problem.opts.prior;
        let n = self.problem.data.n() as f64;
        let dim = self.dim();
        let want_g = order >= Order::Gradient;
        let want_h = order >= Order::Diagonal;
        let mut out = Derivs {
            value: 0.0,
            grad: DVector::zeros(if want_g { dim } else { 0 }),
            hess: DMatrix::zeros(if want_h { dim } else { 0 }, if want_h { dim } else { 0 }),
        };
        for g in &self.layout.groups {
            match *g {
                Group::Intercept { at } => {
                    let (v, d1, d2) = priors::intercept_logprior(pr.intercept_var, eta[at]);
                    out.value += v;
                    if want_g {
                        out.grad[at] += d1;
                    }
                    if want_h {
                        out.hess[(at, at)] += d2;
                    }
                }
                Group::Linear { covariate, at } => {
                    let zv = pr.g_l * n / self.problem.xtx[covariate];
                    let (v, d1, d2) = priors::linear_logprior(pr.family, pr, zv, eta[at]);
                    if v == f64::NEG_INFINITY && want_g {
                        return Err(Error::SingularPrior);
                    }
                    out.value += v;
                    if want_g {
                        out.grad[at] += d1;
                    }
                    if want_h {
                        out.hess[(at, at)] += d2;
                    }
                }
                Group::Spline { covariate, start, len } => {
                    let sp = self.problem.spline[covariate].as_ref().expect("spline prior");
                    let gs = pr.g_s_for(self.problem.group_width);
                    let c = gs * n;
                    let kap = DVector::from_column_slice(&eta[start..start + len]);
                    let sk = &sp.gram * &kap;
                    out.value += -0.5 * len as f64 * (LN_2PI + c.ln()) + 0.5 * sp.logdet - 0.5 * kap.dot(&sk) / c;
                    if want_g {
                        for a in 0..len {
                            out.grad[start + a] -= sk[a] / c;
                        }
                    }
                    if want_h {
                        for a in 0..len {
                            for b in 0..len {
                                if order == Order::Hessian || a == b {
                                    out.hess[(start + a, start + b)] -= sp.gram[(a, b)] / c;
                                }
                            }
                        }
                    }
                }
            }
        }
        if self.layout.has_scale {
            let t = dim - 1;
            let (v, d1, d2) = priors::scale_logprior(pr.a_sigma, pr.b_sigma, eta[t]);
            out.value += v;
            if want_g {
                out.grad[t] += d1;
            }
            if want_h {
                out.hess[(t, t)] += d2;
            }
        }
        Ok(out)
    }

    /// Log-posterior (`ℓ + log π`) in the optimization coordinates.
    ///
    /// For the Laplace backend the curvature includes the expected
    /// information of the absolute-value terms, and kinks take the zero
    /// subgradient.
    pub fn logpost(&self, eta: &[f64], order: Order) -> Result<Derivs> {
        let prior = self.logprior(eta, order)?;
        if prior.value == f64::NEG_INFINITY {
            return Ok(Derivs { value: f64::NEG_INFINITY, ..prior });
        }
        let mut lik = self.loglik_inner(eta, order, Param::Rho, true)?;
        lik.value += prior.value;
        if order >= Order::Gradient {
            lik.grad += prior.grad;
        }
        if order >= Order::Diagonal {
            lik.hess += prior.hess;
        }
        Ok(lik)
    }

    fn value(&self, eta: &[f64]) -> f64 {
        match self.logpost(eta, Order::Value) {
            Ok(d) if d.value.is_finite() => d.value,
            _ => f64::NEG_INFINITY,
        }
    }

    /// Starting point `η̂₀`: one Newton step from `θ = 0` on the likelihood
    /// plus the Gaussian part of the prior, at a scale that maximizes the
    /// uncensored terms.
    pub fn origin_step(&self) -> Vec<f64> {
        let k = self.layout.k();
        let dim = self.dim();
        let pr = &self.problem.opts.prior;
        let n = self.problem.data.n() as f64;
        let mut eta = vec![0.0; dim];
        let aft = self.layout.has_scale;
        let (n_o, yy, ysum) = {
            let d = &self.problem.data;
            let mut yy = 0.0;
            let mut ys = 0.0;
            for i in 0..d.n() {
                if d.d[i] {
                    yy += d.y[i] * d.y[i];
                    ys += d.y[i];
                }
            }
            (d.n_o() as f64, yy, ys)
        };
        let _ = ysum;
        if aft {
            let tau0 = if n_o > 0.0 && yy > 0.0 { (n_o / yy).sqrt() } else { 1.0 };
            eta[k] = tau0.ln();
        }
        let lik = match self.loglik_inner(&eta, Order::Hessian, Param::Rho, true) {
            Ok(d) => d,
            Err(_) => return eta,
        };
        let mut h = -lik.hess.view((0, 0), (k, k)).into_owned();
        let g = lik.grad.rows(0, k).into_owned();
        for grp in &self.layout.groups {
            match *grp {
                Group::Intercept { at } => {
                    if let Some(v) = pr.intercept_var {
                        h[(at, at)] += 1.0 / v;
                    }
                }
                Group::Linear { covariate, at } => {
                    let v = match pr.family {
                        CoefPrior::Zellner => pr.g_l * n / self.problem.xtx[covariate],
                        CoefPrior::PMomZ => pr.g_m,
                        CoefPrior::PeMomZ => pr.g_e,
                    };
                    h[(at, at)] += 1.0 / v;
                }
                Group::Spline { covariate, start, len } => {
                    let sp = self.problem.spline[covariate].as_ref().expect("spline prior");
                    let c = pr.g_s_for(self.problem.group_width) * n;
                    for a in 0..len {
                        for b in 0..len {
                            h[(start + a, start + b)] += sp.gram[(a, b)] / c;
                        }
                    }
                }
            }
        }
        if let Some(step) = solve_pd(&h, &g) {
            for a in 0..k {
                eta[a] = step[a];
            }
        }
        if aft && n_o > 0.0 && yy > 0.0 {
            // Closed-form τ maximizing the uncensored terms given θ.
            let b = self.observed_zy_dot(&eta[..k]);
            let tau = (b + (b * b + 4.0 * n_o * yy).sqrt()) / (2.0 * yy);
            if tau.is_finite() && tau > 0.0 {
                eta[k] = tau.ln();
            }
        }
        if pr.family != CoefPrior::Zellner {
            let g = if pr.family == CoefPrior::PMomZ { pr.g_m } else { pr.g_e };
            let floor = 0.5 * g.sqrt();
            for grp in &self.layout.groups {
                if let Group::Linear { at, .. } = *grp {
                    let a = eta[at];
                    eta[at] = if a < 0.0 { -floor.max(-a) } else { floor.max(a) };
                }
            }
        }
        eta
    }

    fn observed_zy_dot(&self, theta: &[f64]) -> f64 {
        match &self.rows {
            Rows::Aft(r) => {
                if let Some(s) = &r.suff {
                    s.zy.iter().zip(theta).map(|(a, b)| a * b).sum()
                } else {
                    let k = r.k;
                    (0..r.yo.len()).map(|i| r.yo[i] * (0..k).map(|c| r.zo[i * k + c] * theta[c]).sum::<f64>()).sum()
                }
            }
            Rows::Cox(_) => 0.0,
        }
    }

    /// Embeds a previous MAP into this model's coordinates: shared columns
    /// keep their values, new ones start at zero.
    pub fn embed(&self, prev: &FitResult) -> Vec<f64> {
        let mut eta = vec![0.0; self.dim()];
        for (a, c) in self.layout.cols.iter().enumerate() {
            if let Some(b) = prev.cols.iter().position(|x| x == c) {
                eta[a] = prev.eta_map[b];
            }
        }
        if self.layout.has_scale {
            if let Some(r) = prev.eta_map.get(prev.cols.len()) {
                eta[self.layout.k()] = *r;
            }
        }
        eta
    }

    /// Better of `η̂₀` and the embedded previous optimum.
    pub fn init_guess(&self, previous: Option<&FitResult>) -> Vec<f64> {
        let origin = self.origin_step();
        match previous {
            None => origin,
            Some(prev) => {
                let warm = self.embed(prev);
                if self.value(&warm) > self.value(&origin) {
                    warm
                } else {
                    origin
                }
            }
        }
    }

    /// Damped Newton ascent on the log-posterior.
    pub fn map_newton(&self, start: Vec<f64>, tol: f64, max_iter: usize) -> Result<OptimResult> {
        let obj_tol = self.problem.opts.fit.newton_obj_tol;
        let mut eta = start;
        let mut d = self.logpost_checked(&eta, Order::Hessian)?;
        let mut separated = false;
        let mut converged = false;
        let mut iters = 0;
        // The Laplace backend peaks on a kink, where the subgradient need not
        // vanish; there a stalled objective counts as convergence.
        let kinked = self.problem.opts.backend == Backend::AftLaplace;
        let mut stalled = 0;
        while iters < max_iter {
            let gnorm = d.grad.amax();
            if gnorm < tol {
                converged = true;
                break;
            }
            iters += 1;
            let neg_h = -&d.hess;
            let dir = match solve_pd(&neg_h, &d.grad) {
                Some(s) => s,
                None => d.grad.clone() / d.grad.norm().max(1.0),
            };
            let decrement = d.grad.dot(&dir);
            let mut t = 1.0;
            let mut accepted = None;
            for _ in 0..60 {
                let trial: Vec<f64> = eta.iter().zip(dir.iter()).map(|(e, s)| e + t * s).collect();
                let v = self.value(&trial);
                if v >= d.value {
                    accepted = Some((trial, v));
                    break;
                }
                t *= 0.5;
            }
            let Some((trial, v)) = accepted else {
                converged = kinked || decrement.abs() < obj_tol.max(tol);
                break;
            };
            let gain = v - d.value;
            stalled = if gain < obj_tol { stalled + 1 } else { 0 };
            eta = trial;
            d = self.logpost_checked(&eta, Order::Hessian)?;
            if eta.iter().map(|v| v * v).sum::<f64>().sqrt() > 1e3 {
                separated = true;
            }
            if (gain < obj_tol && 0.5 * decrement.abs() < obj_tol) || (kinked && stalled >= 3) {
                converged = true;
                break;
            }
        }
        if d.grad.amax() < tol {
            converged = true;
        }
        if converged {
            // A few full steps past the tolerance pin the optimum to rounding
            // level, so the result does not depend on the starting point.
            for _ in 0..3 {
                let Some(dir) = solve_pd(&(-&d.hess), &d.grad) else { break };
                let scale = 1.0 + eta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                if dir.amax() <= 1e-14 * scale {
                    break;
                }
                let trial: Vec<f64> = eta.iter().zip(dir.iter()).map(|(e, s)| e + s).collect();
                let v = self.value(&trial);
                if !(v >= d.value - 1e-10 * (1.0 + d.value.abs())) {
                    break;
                }
                let dt = self.logpost_checked(&trial, Order::Hessian)?;
                if dt.grad.amax() > d.grad.amax() && dt.grad.amax() >= tol {
                    break;
                }
                eta = trial;
                d = dt;
            }
        }
        let grad_norm = d.grad.amax();
        Ok(OptimResult { eta, derivs: d, iterations: iters, converged, separated, grad_norm, optimizer: Optimizer::Newton })
    }

    /// Cyclic coordinate ascent with one-dimensional Newton steps and
    /// backtracking by `c`.
    pub fn map_cda(&self, start: Vec<f64>, c: f64, tol: f64, max_sweeps: usize) -> Result<OptimResult> {
        assert!(c > 0.0 && c < 1.0, "backtracking factor must lie in (0, 1)");
        let dim = self.dim();
        let mut eta = start;
        let mut f = self.value(&eta);
        if !f.is_finite() {
            return Err(Error::SingularPrior);
        }
        let mut sweeps = 0;
        let mut converged = false;
        let mut separated = false;
        while sweeps < max_sweeps {
            sweeps += 1;
            let f_start = f;
            for j in 0..dim {
                let d = self.logpost_checked(&eta, Order::Diagonal)?;
                let (g, h) = (d.grad[j], d.hess[(j, j)]);
                if g == 0.0 {
                    continue;
                }
                let mut step = if h < 0.0 { -g / h } else { g.signum() * 0.1 };
                let old = eta[j];
                for _ in 0..60 {
                    eta[j] = old + step;
                    let v = self.value(&eta);
                    if v > f {
                        f = v;
                        break;
                    }
                    eta[j] = old;
                    step *= c;
                }
            }
            if eta.iter().map(|v| v * v).sum::<f64>().sqrt() > 1e3 {
                separated = true;
            }
            if f - f_start < tol {
                converged = true;
                break;
            }
        }
        let d = self.logpost_checked(&eta, Order::Hessian)?;
        let grad_norm = d.grad.amax();
        Ok(OptimResult { eta, derivs: d, iterations: sweeps, converged, separated, grad_norm, optimizer: Optimizer::Cda })
    }

    fn logpost_checked(&self, eta: &[f64], order: Order) -> Result<Derivs> {
        let d = self.logpost(eta, order)?;
        if !d.value.is_finite() {
            return Err(Error::SingularPrior);
        }
        Ok(d)
    }

    /// MAP (Newton for `d_γ ≤ 15`, CDA above) and the Laplace approximation
    /// `ℓ + log π + (d/2) log 2π − ½ log|−(H + ∇² log π)|`.
    pub fn laplace_logmarglik(&self, start: Vec<f64>) -> Result<FitResult> {
        let fo = &self.problem.opts.fit;
        let opt = if self.dim() <= fo.newton_max_dim {
            self.map_newton(start, fo.grad_tol, fo.newton_max_iter)
        } else {
            self.map_cda(start, fo.cda_backtrack, fo.cda_tol, fo.cda_max_sweeps)
        };
        let opt = match opt {
            Ok(o) => o,
            Err(Error::SingularPrior) | Err(Error::NonDifferentiable { .. }) => return Ok(self.degenerate_fit()),
            Err(e) => return Err(e),
        };
        Ok(self.finish(opt))
    }

    fn finish(&self, opt: OptimResult) -> FitResult {
        let dim = self.dim();
        let neg_h = -&opt.derivs.hess;
        let logdet = log_det_pd(&neg_h).or_else(|| {
            let jit = &neg_h + DMatrix::identity(dim, dim) * 1e-8;
            log_det_pd(&jit)
        });
        let (log_marglik, degenerate) = match logdet {
            Some(ld) => (opt.derivs.value + 0.5 * dim as f64 * LN_2PI - 0.5 * ld, false),
            None => (f64::NEG_INFINITY, true),
        };
        FitResult {
            gamma: self.gamma.clone(),
            cols: self.layout.cols.clone(),
            eta_map: opt.eta,
            neg_hess_logpost: neg_h,
            log_post: opt.derivs.value,
            log_marglik,
            iterations: opt.iterations,
            optimizer: opt.optimizer,
            converged: opt.converged,
            degenerate,
            separated: opt.separated,
            grad_norm: opt.grad_norm,
        }
    }

    fn degenerate_fit(&self) -> FitResult {
        let dim = self.dim();
        FitResult {
            gamma: self.gamma.clone(),
            cols: self.layout.cols.clone(),
            eta_map: vec![f64::NAN; dim],
            neg_hess_logpost: DMatrix::zeros(dim, dim),
            log_post: f64::NEG_INFINITY,
            log_marglik: f64::NEG_INFINITY,
            iterations: 0,
            optimizer: Optimizer::Newton,
            converged: false,
            degenerate: true,
            separated: false,
            grad_norm: f64::NAN,
        }
    }
}

/// Optimizer output before the Laplace step.
#[derive(Clone, Debug)]
pub struct OptimResult {
    pub eta: Vec<f64>,
    pub derivs: Derivs,
    pub iterations: usize,
    pub converged: bool,
    pub separated: bool,
    pub grad_norm: f64,
    pub optimizer: Optimizer,
}

fn solve_pd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(c) = a.clone().cholesky() {
        return Some(c.solve(b));
    }
    let scale = a.diagonal().amax().max(1.0);
    let mut lambda = 1e-8 * scale;
    for _ in 0..12 {
        let m = a + DMatrix::identity(a.nrows(), a.ncols()) * lambda;
        if let Some(c) = m.cholesky() {
            return Some(c.solve(b));
        }
        lambda *= 10.0;
    }
    None
}

fn log_det_pd(a: &DMatrix<f64>) -> Option<f64> {
    let c = a.clone().cholesky()?;
    let ld: f64 = c.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    ld.is_finite().then_some(ld)
}
