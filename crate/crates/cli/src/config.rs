//! Flat `key = value` run configuration.
//!
//! Defaults are overridden by a config file, which is overridden by flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use survsel::design::DesignOptions;
use survsel::inference::{FitOptions, ProblemOptions};
use survsel::model::Backend;
use survsel::priors::{CoefPrior, ModelPrior, PriorSpec};
use survsel::search::{GibbsOptions, DEFAULT_ENUMERATION_LIMIT};
use survsel::sim::{ErrorFamily, ScenarioSpec, StudyOptions};
use survsel::specfun::ApproxProfile;

use crate::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub time: String,
    pub status: String,
    /// Empty means every column other than time and status.
    pub covariates: Vec<String>,
    pub dummies: Vec<String>,
    pub log_time: bool,
    pub backend: Backend,
    pub prior: CoefPrior,
    #[serde(rename = "g_L")]
    pub g_l: f64,
    #[serde(rename = "g_M")]
    pub g_m: f64,
    #[serde(rename = "g_E")]
    pub g_e: f64,
    #[serde(rename = "g_S")]
    pub g_s: Option<f64>,
    pub a_sigma: f64,
    pub b_sigma: f64,
    pub model_prior: String,
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
    pub intercept_var: Option<f64>,
    pub r: Vec<usize>,
    pub level: usize,
    pub exact_cdf: bool,
    #[serde(rename = "B")]
    pub b_iter: usize,
    pub burn_in: f64,
    pub chains: usize,
    pub seed: u64,
    pub threads: usize,
    pub top_k: usize,
    pub enum_limit: usize,
    pub newton_max_dim: usize,
    // simulate / permute
    pub scenario: u8,
    pub n: usize,
    pub reps: usize,
    pub censored: bool,
    pub p_total: usize,
    pub error: String,
    pub sigma: f64,
    pub s: f64,
    pub a: f64,
    pub sigma_h: f64,
    pub omit_x2: bool,
    /// Where `simulate` writes the first replicate's dataset.
    pub data_out: Option<PathBuf>,
    pub permutations: usize,
    // elicit
    pub t: Vec<f64>,
    pub target: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pr = PriorSpec::aft();
        RunConfig {
            input: None,
            output: None,
            time: "time".into(),
            status: "status".into(),
            covariates: Vec::new(),
            dummies: Vec::new(),
            log_time: false,
            backend: Backend::AftNormal,
            prior: CoefPrior::PMomZ,
            g_l: pr.g_l,
            g_m: pr.g_m,
            g_e: pr.g_e,
            g_s: None,
            a_sigma: pr.a_sigma,
            b_sigma: pr.b_sigma,
            model_prior: "betabinomial".into(),
            a1: 1.0,
            b1: 1.0,
            a2: 1.0,
            b2: 1.0,
            intercept_var: None,
            r: vec![5],
            level: 0,
            exact_cdf: false,
            b_iter: 10_000,
            burn_in: 0.1,
            chains: 1,
            seed: 1,
            threads: 1,
            top_k: 10,
            enum_limit: DEFAULT_ENUMERATION_LIMIT,
            newton_max_dim: 15,
            scenario: 1,
            n: 100,
            reps: 50,
            censored: true,
            p_total: 2,
            error: "normal".into(),
            sigma: 0.5,
            s: 0.1,
            a: -0.5,
            sigma_h: 0.5,
            omit_x2: false,
            data_out: None,
            permutations: 20,
            t: vec![1.15],
            target: 0.99,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::Config(format!("cannot parse `{v}` for key `{key}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(CliError::Config(format!("`{v}` is not a boolean for key `{key}`"))),
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, CliError> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn names(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

pub fn parse_backend(v: &str) -> Result<Backend, CliError> {
    match v.to_ascii_lowercase().as_str() {
        "aft-normal" | "aft" | "normal" => Ok(Backend::AftNormal),
        "aft-laplace" | "laplace" => Ok(Backend::AftLaplace),
        "cox" => Ok(Backend::Cox),
        "probit" => Ok(Backend::Probit),
        _ => Err(CliError::Config(format!("unknown backend `{v}` (aft-normal, aft-laplace, cox, probit)"))),
    }
}

pub fn parse_prior(v: &str) -> Result<CoefPrior, CliError> {
    match v.to_ascii_lowercase().as_str() {
        "zellner" => Ok(CoefPrior::Zellner),
        "pmomz" | "pmom" | "mom" => Ok(CoefPrior::PMomZ),
        "pemomz" | "pemom" | "emom" => Ok(CoefPrior::PeMomZ),
        _ => Err(CliError::Config(format!("unknown prior `{v}` (zellner, pmomz, pemomz)"))),
    }
}

fn opt_f64(key: &str, v: &str) -> Result<Option<f64>, CliError> {
    if v.eq_ignore_ascii_case("none") || v.eq_ignore_ascii_case("default") || v.is_empty() {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

impl RunConfig {
    /// Applies one setting. Keys are case-sensitive where they follow the
    /// usual symbols (`g_M`, `B`, `r`).
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        let v = v.trim();
        match key.trim() {
            "input" => self.input = Some(PathBuf::from(v)),
            "output" => self.output = Some(PathBuf::from(v)),
            "time" => self.time = v.into(),
            "status" => self.status = v.into(),
            "covariates" => self.covariates = names(v),
            "dummies" => self.dummies = names(v),
            "log_time" => self.log_time = parse_bool(key, v)?,
            "backend" => self.backend = parse_backend(v)?,
            "prior" => self.prior = parse_prior(v)?,
            "g_L" => self.g_l = parse(key, v)?,
            "g_M" => self.g_m = parse(key, v)?,
            "g_E" => self.g_e = parse(key, v)?,
            "g_S" => self.g_s = opt_f64(key, v)?,
            "a_sigma" => self.a_sigma = parse(key, v)?,
            "b_sigma" => self.b_sigma = parse(key, v)?,
            "model_prior" => {
                let m = v.to_ascii_lowercase();
                if !["betabinomial", "binomial", "complexity"].contains(&m.as_str()) {
                    return Err(CliError::Config(format!("unknown model prior `{v}` (betabinomial, binomial, complexity)")));
                }
                self.model_prior = m;
            }
            "a1" => self.a1 = parse(key, v)?,
            "b1" => self.b1 = parse(key, v)?,
            "a2" => self.a2 = parse(key, v)?,
            "b2" => self.b2 = parse(key, v)?,
            "intercept_var" => self.intercept_var = opt_f64(key, v)?,
            "r" => self.r = parse_list(key, v)?,
            "level" => self.level = parse(key, v)?,
            "exact_cdf" => self.exact_cdf = parse_bool(key, v)?,
            "B" => self.b_iter = parse(key, v)?,
            "burn_in" => self.burn_in = parse(key, v)?,
            "chains" => self.chains = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "top_k" => self.top_k = parse(key, v)?,
            "enum_limit" => self.enum_limit = parse(key, v)?,
            "newton_max_dim" => self.newton_max_dim = parse(key, v)?,
            "scenario" => self.scenario = parse(key, v)?,
            "n" => self.n = parse(key, v)?,
            "reps" => self.reps = parse(key, v)?,
            "censored" => self.censored = parse_bool(key, v)?,
            "p_total" => self.p_total = parse(key, v)?,
            "error" => {
                let e = v.to_ascii_lowercase();
                if e != "normal" && e != "alaplace" {
                    return Err(CliError::Config(format!("unknown error family `{v}` (normal, alaplace)")));
                }
                self.error = e;
            }
            "sigma" => self.sigma = parse(key, v)?,
            "s" => self.s = parse(key, v)?,
            "a" => self.a = parse(key, v)?,
            "sigma_h" => self.sigma_h = parse(key, v)?,
            "omit_x2" => self.omit_x2 = parse_bool(key, v)?,
            "data_out" => self.data_out = Some(PathBuf::from(v)),
            "permutations" => self.permutations = parse(key, v)?,
            "t" => self.t = parse_list(key, v)?,
            "target" => self.target = parse(key, v)?,
            other => return Err(CliError::Config(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Reads a config file: one `key = value` per line, `#` comments.
    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        for (k, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("{}:{}: expected `key = value`", path.display(), k + 1)))?;
            self.set(key, value).map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), k + 1)))?;
        }
        Ok(())
    }

    pub fn prior_spec(&self) -> PriorSpec {
        let base = match self.backend {
            Backend::Probit => PriorSpec::probit(),
            Backend::Cox => PriorSpec::cox(),
            _ => PriorSpec::aft(),
        };
        let model_prior = match self.model_prior.as_str() {
            "binomial" => ModelPrior::Binomial { a1: self.a1, a2: self.a2 },
            "complexity" => ModelPrior::Complexity { a1: self.a1, a2: self.a2 },
            _ => ModelPrior::BetaBinomial { a1: self.a1, b1: self.b1, a2: self.a2, b2: self.b2 },
        };
        PriorSpec {
            family: self.prior,
            g_l: self.g_l,
            g_m: self.g_m,
            g_e: self.g_e,
            g_s: self.g_s,
            a_sigma: self.a_sigma,
            b_sigma: self.b_sigma,
            model_prior,
            intercept_var: self.intercept_var.or(base.intercept_var),
        }
    }

    pub fn problem_options(&self, dummies: Vec<bool>) -> ProblemOptions {
        ProblemOptions {
            backend: self.backend,
            prior: self.prior_spec(),
            design: DesignOptions { r_levels: self.r.clone(), dummies },
            level: self.level,
            profile: if self.exact_cdf { ApproxProfile::Exact } else { ApproxProfile::Fast },
            fit: FitOptions { newton_max_dim: self.newton_max_dim, ..FitOptions::default() },
        }
    }

    pub fn gibbs_options(&self) -> GibbsOptions {
        GibbsOptions { iterations: self.b_iter, burn_in_frac: self.burn_in, seed: self.seed, chains: self.chains, greedy_init: true }
    }

    pub fn study_options(&self, dummies: Vec<bool>) -> StudyOptions {
        StudyOptions { problem: self.problem_options(dummies), gibbs: self.gibbs_options(), enumeration_limit: self.enum_limit }
    }

    pub fn scenario_spec(&self) -> ScenarioSpec {
        let mut s = ScenarioSpec::new(self.scenario, self.n);
        s.censored = self.censored;
        s.p_total = self.p_total;
        s.omit_x2 = self.omit_x2;
        s.sigma_h = self.sigma_h;
        s.error = if self.error == "alaplace" { ErrorFamily::ALaplace { s: self.s, a: self.a } } else { ErrorFamily::Normal { sigma: self.sigma } };
        s
    }

    /// Settings echoed into result files, sorted by key.
    pub fn echo(&self) -> BTreeMap<String, serde_json::Value> {
        match serde_json::to_value(self) {
            Ok(serde_json::Value::Object(m)) => m.into_iter().collect(),
            _ => BTreeMap::new(),
        }
    }
}
