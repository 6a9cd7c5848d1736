//! Coefficient priors in the `(α, κ, ρ)` parameterization, model-space
//! priors and dispersion elicitation.

use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::ModelIndex;
use crate::numeric;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Prior family for the linear coefficients; spline blocks always get a
/// group-Zellner prior.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefPrior {
    /// Local group-Zellner prior (`π_L`).
    Zellner,
    /// Product moment prior (`π_M`).
    PMomZ,
    /// Product exponential moment prior (`π_E`).
    PeMomZ,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelPrior {
    BetaBinomial { a1: f64, b1: f64, a2: f64, b2: f64 },
    Binomial { a1: f64, a2: f64 },
    Complexity { a1: f64, a2: f64 },
}

impl Default for ModelPrior {
    fn default() -> Self {
        ModelPrior::BetaBinomial { a1: 1.0, b1: 1.0, a2: 1.0, b2: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub family: CoefPrior,
    pub g_l: f64,
    pub g_m: f64,
    pub g_e: f64,
    /// `None` means `1/r`, with `r` the width of the spline group.
    pub g_s: Option<f64>,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub model_prior: ModelPrior,
    /// Variance of the Normal prior on the intercept; `None` is flat.
    pub intercept_var: Option<f64>,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec::aft()
    }
}

impl PriorSpec {
    /// Defaults for the AFT backends (`P(|β| > log 1.15) = 0.99`).
    pub fn aft() -> Self {
        PriorSpec {
            family: CoefPrior::PMomZ,
            g_l: 1.0,
            g_m: 0.192,
            g_e: 0.091,
            g_s: None,
            a_sigma: 3.0,
            b_sigma: 3.0,
            model_prior: ModelPrior::default(),
            intercept_var: None,
        }
    }

    /// Defaults for probit regression, where coefficients live on the
    /// latent-Normal scale.
    pub fn probit() -> Self {
        PriorSpec { g_m: 0.139, g_e: 0.048, intercept_var: Some(4.0), ..PriorSpec::aft() }
    }

    /// Cox models have neither intercept nor scale; the coefficient defaults
    /// match the AFT ones.
    pub fn cox() -> Self {
        PriorSpec::aft()
    }

    pub fn with_family(mut self, family: CoefPrior) -> Self {
        self.family = family;
        self
    }

    pub fn g_s_for(&self, r: usize) -> f64 {
        self.g_s.unwrap_or(1.0 / r as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.g_l, self.g_m, self.g_e, self.g_s.unwrap_or(1.0), self.a_sigma, self.b_sigma];
        if vals.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("prior dispersions and a_sigma, b_sigma must be positive".into()));
        }
        if let Some(v) = self.intercept_var {
            if !(v > 0.0) {
                return Err(Error::Config("intercept prior variance must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Log-density of one linear coefficient and its first two derivatives.
///
/// `zellner_var` is `g_L·n/(x_j⊤x_j)`, used only by the Zellner family.
pub fn linear_logprior(family: CoefPrior, spec: &PriorSpec, zellner_var: f64, alpha: f64) -> (f64, f64, f64) {
    match family {
        CoefPrior::Zellner => {
            let v = zellner_var;
            (-0.5 * (LN_2PI + v.ln()) - 0.5 * alpha * alpha / v, -alpha / v, -1.0 / v)
        }
        CoefPrior::PMomZ => {
            let g = spec.g_m;
            if alpha == 0.0 {
                return (f64::NEG_INFINITY, f64::NAN, f64::NAN);
            }
            let a2 = alpha * alpha;
            let val = (a2 / g).ln() - 0.5 * (LN_2PI + g.ln()) - 0.5 * a2 / g;
            (val, 2.0 / alpha - alpha / g, -2.0 / a2 - 1.0 / g)
        }
        CoefPrior::PeMomZ => {
            let g = spec.g_e;
            if alpha == 0.0 {
                return (f64::NEG_INFINITY, f64::NAN, f64::NAN);
            }
            let a2 = alpha * alpha;
            let val = std::f64::consts::SQRT_2 - g / a2 - 0.5 * (LN_2PI + g.ln()) - 0.5 * a2 / g;
            (val, 2.0 * g / (a2 * alpha) - alpha / g, -6.0 * g / (a2 * a2) - 1.0 / g)
        }
    }
}

/// `log[IG(e^{−2ρ}; a/2, b/2)·2e^{−2ρ}]` and its derivatives in `ρ`.
pub fn scale_logprior(a: f64, b: f64, rho: f64) -> (f64, f64, f64) {
    let e2 = (2.0 * rho).exp();
    let c = 0.5 * a * (0.5 * b).ln() - ln_gamma(0.5 * a) + std::f64::consts::LN_2;
    (c + a * rho - 0.5 * b * e2, a - b * e2, -2.0 * b * e2)
}

/// `log N(α₀; 0, v)` or 0 for a flat intercept prior.
pub fn intercept_logprior(var: Option<f64>, a0: f64) -> (f64, f64, f64) {
    match var {
        None => (0.0, 0.0, 0.0),
        Some(v) => (-0.5 * (LN_2PI + v.ln()) - 0.5 * a0 * a0 / v, -a0 / v, -1.0 / v),
    }
}

fn ln_choose(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Log of one size factor, `P(size = z)·C(p, z)⁻¹`, under the chosen family.
fn size_factor(kind: &ModelPrior, which: usize, z: usize, p: usize) -> f64 {
    let pf = p as f64;
    let zf = z as f64;
    match *kind {
        ModelPrior::BetaBinomial { a1, b1, a2, b2 } => {
            let (a, b) = if which == 0 { (a1, b1) } else { (a2, b2) };
            ln_beta(zf + a, pf - zf + b) - ln_beta(a, b)
        }
        ModelPrior::Binomial { a1, a2 } => {
            let a = if which == 0 { a1 } else { a2 };
            zf * a.ln() + (pf - zf) * (1.0 - a).ln()
        }
        ModelPrior::Complexity { a1, a2 } => {
            let a = if which == 0 { a1 } else { a2 };
            -a * zf * pf.ln() - ln_choose(p, z)
        }
    }
}

/// Unnormalized log prior probability of model `γ`.
///
/// `r` is the width of a spline group; models with `p_γ + r·s_γ > n` get
/// zero prior mass.
pub fn model_logprior(gamma: &ModelIndex, prior: &ModelPrior, n: usize, r: usize) -> f64 {
    let p = gamma.p();
    let pg = gamma.p_gamma();
    let sg = gamma.s_gamma();
    if pg + r * sg > n {
        return f64::NEG_INFINITY;
    }
    size_factor(prior, 0, pg, p) + size_factor(prior, 1, sg, p)
}

/// Closed-form marginal density of `β` under the pMOM prior with
/// `σ² ~ IG(a/2, b/2)`.
pub fn pmom_marginal_density(beta: f64, g: f64, a: f64, b: f64) -> f64 {
    let gb = g * b;
    let lc = std::f64::consts::LN_2 + ln_gamma(0.5 * (a + 3.0)) - ln_gamma(0.5 * a) - 0.5 * std::f64::consts::PI.ln() - 1.5 * gb.ln();
    (lc + 2.0 * beta.abs().ln() - 0.5 * (a + 3.0) * (1.0 + beta * beta / gb).ln()).exp()
}

/// `P(|α| ≤ c)` for the standardized coefficient `α = β/σ` under each family.
fn standardized_cdf(family: CoefPrior, g: f64, c: f64) -> Result<f64> {
    let sd = g.sqrt();
    match family {
        CoefPrior::Zellner => Ok(1.0 - 2.0 * crate::specfun::exact::norm_cdf(-c / sd)),
        CoefPrior::PMomZ => {
            // α²/g ~ χ²₃, so P(|α| ≤ c) = P(χ²₃ ≤ c²/g).
            let u = c / sd;
            let tail = 2.0 * crate::specfun::exact::norm_cdf(-u) + 2.0 * u * crate::specfun::norm_pdf(u);
            Ok(1.0 - tail)
        }
        CoefPrior::PeMomZ => {
            if c <= 0.0 {
                return Ok(0.0);
            }
            let dens = |u: f64| {
                if u == 0.0 {
                    0.0
                } else {
                    (std::f64::consts::SQRT_2 - g / (u * u) - 0.5 * u * u / g).exp() / (2.0 * std::f64::consts::PI * g).sqrt()
                }
            };
            let hi = c.min(40.0 * sd);
            let q = numeric::integrate(dens, 0.0, hi, 1e-12, 1e-11)?;
            Ok((2.0 * q.value).min(1.0))
        }
    }
}

/// `P(|β| ≤ b)` with `σ²` integrated out under `IG(a_σ/2, b_σ/2)`.
///
/// The σ² expectation is computed on the log scale, where the
/// inverse-gamma density decays doubly exponentially on the left and
/// geometrically on the right.
pub fn marginal_prior_cdf(b: f64, family: CoefPrior, g: f64, a_sigma: f64, b_sigma: f64) -> Result<f64> {
    if !(b > 0.0) {
        return Err(Error::Config("the threshold b must be positive".into()));
    }
    let (al, be) = (0.5 * a_sigma, 0.5 * b_sigma);
    let lnorm = al * be.ln() - ln_gamma(al);
    // u = log σ²; the IG density of σ² times the Jacobian e^u.
    let weight = move |u: f64| (lnorm - al * u - be * (-u).exp()).exp();
    let mode = (be / al).ln();
    let (lo, hi) = (mode - 8.0, mode + 60.0 / al);
    let err = std::cell::RefCell::new(None);
    let q = numeric::integrate(
        |u| {
            let w = weight(u);
            if w < 1e-300 {
                return 0.0;
            }
            match standardized_cdf(family, g, b * (-0.5 * u).exp()) {
                Ok(p) => w * p,
                Err(e) => {
                    *err.borrow_mut() = Some(e);
                    0.0
                }
            }
        },
        lo,
        hi,
        1e-10,
        1e-10,
    );
    if let Some(e) = err.into_inner() {
        return Err(e);
    }
    let q = q?;
    if q.abs_err > 1e-6 {
        return Err(Error::Quadrature { achieved: q.abs_err, requested: 1e-6 });
    }
    // σ² below the window puts |β| ≤ b with probability one; the mass above
    // `hi` is below e^{−60}.
    Ok((q.value + lower_ig_mass(al, be, lo)).clamp(0.0, 1.0))
}

/// `P(log σ² < u)` under `IG(α, β)`: the upper regularized gamma at `β e^{−u}`.
fn lower_ig_mass(al: f64, be: f64, u: f64) -> f64 {
    statrs::function::gamma::gamma_ur(al, be * (-u).exp())
}

/// Dispersion `g` such that `P(|β| > log t) = target` under the family's
/// σ²-marginal prior.
pub fn elicit_dispersion(t: f64, family: CoefPrior, a_sigma: f64, b_sigma: f64, target: f64) -> Result<f64> {
    if !(t > 1.0) {
        return Err(Error::Config("the practical-significance threshold t must exceed 1".into()));
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Config("target probability must lie in (0, 1)".into()));
    }
    let b = t.ln();
    let mut failure = None;
    let f = |lg: f64| match marginal_prior_cdf(b, family, lg.exp(), a_sigma, b_sigma) {
        Ok(p) => (1.0 - p) - target,
        Err(e) => {
            failure = Some(e);
            f64::NAN
        }
    };
    let root = numeric::find_root(f, (1e-8f64).ln(), (1e4f64).ln(), 1e-10);
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(root?.exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mom_derivatives_match_formulas() {
        let spec = PriorSpec::aft();
        let (_, _, h) = linear_logprior(CoefPrior::PeMomZ, &spec, 1.0, 1.0);
        assert!((h - (-6.0 * 0.091 - 1.0 / 0.091)).abs() < 1e-12);
        let (v, _, _) = linear_logprior(CoefPrior::PMomZ, &spec, 1.0, 0.0);
        assert_eq!(v, f64::NEG_INFINITY);
    }

    #[test]
    fn ig_scale_term_integrates_to_one() {
        let q = numeric::integrate(|r| scale_logprior(3.0, 3.0, r).0.exp(), -15.0, 10.0, 1e-12, 1e-12).unwrap();
        assert!((q.value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pmom_marginal_density_integrates_to_one() {
        let q = numeric::integrate_to_inf(|b| 2.0 * pmom_marginal_density(b, 0.192, 3.0, 3.0), 0.0, 1e-12, 1e-12).unwrap();
        assert!((q.value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn single_covariate_models_equally_likely() {
        let prior = ModelPrior::default();
        let lp: Vec<f64> = (0..3u8).map(|g| model_logprior(&ModelIndex::new(vec![g]), &prior, 100, 5)).collect();
        assert!((lp[0] - lp[1]).abs() < 1e-14 && (lp[1] - lp[2]).abs() < 1e-14);
        assert_eq!(model_logprior(&ModelIndex::new(vec![2, 2]), &prior, 10, 5), f64::NEG_INFINITY);
    }
}
