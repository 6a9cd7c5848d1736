//! Log-likelihoods with gradients and Hessians for the four backends.
//!
//! AFT evaluations work in `(θ, τ)` with `θ = (α, κ)` and `τ = 1/σ`;
//! [`to_rho`] chains the result through `τ = e^ρ`. Row data for one model
//! is gathered once into a [`ModelRows`].

use nalgebra::{DMatrix, DVector};

use crate::design::{DesignBundle, GramCache, SurvivalDataset};
use crate::error::{Error, Result};
use crate::specfun::{self, ApproxProfile};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Residuals closer than this to zero sit on a kink of the Laplace likelihood.
pub const KINK_TOL: f64 = 1e-12;

/// How much of the derivative information to compute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Order {
    Value,
    Gradient,
    /// Gradient plus the Hessian diagonal.
    Diagonal,
    Hessian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Param {
    /// `(α, κ, τ)`.
    Tau,
    /// `(α, κ, ρ)` with `ρ = log τ`.
    Rho,
}

/// Value with optional gradient and Hessian (empty when not requested).
#[derive(Clone, Debug)]
pub struct Derivs {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

impl Derivs {
    fn zeros(dim: usize, order: Order) -> Self {
        let g = if order >= Order::Gradient { dim } else { 0 };
        let h = if order >= Order::Diagonal { dim } else { 0 };
        Derivs { value: 0.0, grad: DVector::zeros(g), hess: DMatrix::zeros(h, h) }
    }

    fn symmetrize_upper(&mut self) {
        let d = self.hess.nrows();
        for i in 0..d {
            for j in 0..i {
                self.hess[(i, j)] = self.hess[(j, i)];
            }
        }
    }
}

/// Which route evaluates the uncensored Normal terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Path {
    /// Pick by the operation-count rule.
    #[default]
    Auto,
    Direct,
    Sufficient,
}

/// Uncensored sufficient statistics for one model.
#[derive(Clone, Debug)]
pub struct SuffStats {
    pub g: DMatrix<f64>,
    pub zy: DVector<f64>,
    pub yy: f64,
}

/// Active-column rows of one model, split by event status.
///
/// Matrices are row-major with stride `k`.
#[derive(Clone, Debug)]
pub struct ModelRows {
    pub k: usize,
    pub n_o: usize,
    pub zo: Vec<f64>,
    pub yo: Vec<f64>,
    pub zc: Vec<f64>,
    pub yc: Vec<f64>,
    pub suff: Option<SuffStats>,
}

/// Whether the Gram route is cheaper for a model of dimension `d`.
pub fn use_sufficient(n: usize, n_c: usize, d: usize) -> bool {
    (n_c + 1) * d + d * (d + 1) / 2 < n * d
}

fn gather(design: &DesignBundle, cols: &[usize], rows: &[usize]) -> Vec<f64> {
    let k = cols.len();
    let mut out = vec![0.0; rows.len() * k];
    for (c, &id) in cols.iter().enumerate() {
        let col = design.column(id);
        for (r, &i) in rows.iter().enumerate() {
            out[r * k + c] = col[i];
        }
    }
    out
}

impl ModelRows {
    /// Gathers the rows for the AFT and probit backends.
    pub fn build(
        data: &SurvivalDataset,
        design: &DesignBundle,
        gram: Option<&GramCache>,
        cols: &[usize],
        path: Path,
        keep_observed: bool,
    ) -> Self {
        let k = cols.len();
        let obs: Vec<usize> = (0..data.n()).filter(|&i| data.d[i]).collect();
        let cens: Vec<usize> = (0..data.n()).filter(|&i| !data.d[i]).collect();
        let suff_wanted = match path {
            Path::Sufficient => true,
            Path::Direct => false,
            Path::Auto => use_sufficient(data.n(), cens.len(), k + 1),
        };
        let suff = match (suff_wanted, gram) {
            (true, Some(g)) => {
                let mut gm = DMatrix::zeros(k, k);
                for a in 0..k {
                    for b in a..k {
                        let v = g.get(cols[a], cols[b]);
                        gm[(a, b)] = v;
                        gm[(b, a)] = v;
                    }
                }
                let zy = DVector::from_iterator(k, cols.iter().map(|&c| g.get_y(c)));
                Some(SuffStats { g: gm, zy, yy: g.get_yy() })
            }
            _ => None,
        };
        let (zo, yo) = if suff.is_none() || keep_observed {
            (gather(design, cols, &obs), obs.iter().map(|&i| data.y[i]).collect())
        } else {
            (Vec::new(), Vec::new())
        };
        ModelRows {
            k,
            n_o: obs.len(),
            zo,
            yo,
            zc: gather(design, cols, &cens),
            yc: cens.iter().map(|&i| data.y[i]).collect(),
            suff,
        }
    }

    fn row_dot(z: &[f64], i: usize, k: usize, theta: &[f64]) -> f64 {
        let r = &z[i * k..(i + 1) * k];
        let mut s = 0.0;
        for c in 0..k {
            s += r[c] * theta[c];
        }
        s
    }
}

/// Adds `w·v v⊤` to the upper triangle (or only the diagonal).
#[inline]
fn rank_one(h: &mut DMatrix<f64>, v: &[f64], w: f64, diag_only: bool) {
    let k = v.len();
    if diag_only {
        for a in 0..k {
            h[(a, a)] += w * v[a] * v[a];
        }
    } else {
        for b in 0..k {
            let wb = w * v[b];
            for a in 0..=b {
                h[(a, b)] += wb * v[a];
            }
        }
    }
}

/// AFT-Normal log-likelihood in `(θ, τ)`.
///
/// Uncensored rows go through the sufficient statistics when the rows were
/// built with them, censored rows are always summed directly.
pub fn aftn_eval(rows: &ModelRows, theta: &[f64], tau: f64, order: Order, profile: ApproxProfile) -> Derivs {
    let k = rows.k;
    let dim = k + 1;
    let t = k; // index of τ
    let mut out = Derivs::zeros(dim, order);
    let want_g = order >= Order::Gradient;
    let want_h = order >= Order::Diagonal;
    let diag = order == Order::Diagonal;
    let n_o = rows.n_o as f64;
    out.value = n_o * (tau.ln() - HALF_LN_2PI);
    if want_g {
        out.grad[t] = n_o / tau;
    }
    if want_h {
        out.hess[(t, t)] = -n_o / (tau * tau);
    }

    if let Some(s) = &rows.suff {
        let th = DVector::from_column_slice(theta);
        let gth = &s.g * &th;
        let zyt = s.zy.dot(&th);
        out.value += -0.5 * (tau * tau * s.yy - 2.0 * tau * zyt + th.dot(&gth));
        if want_g {
            for a in 0..k {
                out.grad[a] += tau * s.zy[a] - gth[a];
            }
            out.grad[t] += -(tau * s.yy - zyt);
        }
        if want_h {
            for a in 0..k {
                if diag {
                    out.hess[(a, a)] -= s.g[(a, a)];
                } else {
                    for b in a..k {
                        out.hess[(a, b)] -= s.g[(a, b)];
                    }
                    out.hess[(a, t)] += s.zy[a];
                }
            }
            out.hess[(t, t)] -= s.yy;
        }
    } else {
        for i in 0..rows.yo.len() {
            let z = &rows.zo[i * k..(i + 1) * k];
            let y = rows.yo[i];
            let e = tau * y - ModelRows::row_dot(&rows.zo, i, k, theta);
            out.value -= 0.5 * e * e;
            if want_g {
                for a in 0..k {
                    out.grad[a] += z[a] * e;
                }
                out.grad[t] -= y * e;
            }
            if want_h {
                rank_one(&mut out.hess, z, -1.0, diag);
                if !diag {
                    for a in 0..k {
                        out.hess[(a, t)] += z[a] * y;
                    }
                }
                out.hess[(t, t)] -= y * y;
            }
        }
    }

    for i in 0..rows.yc.len() {
        let z = &rows.zc[i * k..(i + 1) * k];
        let y = rows.yc[i];
        let v = ModelRows::row_dot(&rows.zc, i, k, theta) - tau * y;
        if !want_g {
            out.value += profile.norm_logcdf(v);
            continue;
        }
        let (lp, r, dd) = if want_h {
            profile.censored_terms(v)
        } else {
            (profile.norm_logcdf(v), profile.inv_mills(v), 0.0)
        };
        out.value += lp;
        for a in 0..k {
            out.grad[a] += z[a] * r;
        }
        out.grad[t] -= y * r;
        if want_h {
            rank_one(&mut out.hess, z, -dd, diag);
            if !diag {
                for a in 0..k {
                    out.hess[(a, t)] += z[a] * y * dd;
                }
            }
            out.hess[(t, t)] -= y * y * dd;
        }
    }
    if want_h && !diag {
        out.symmetrize_upper();
    }
    out
}

/// How the Laplace backend treats residuals on a kink.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kinks {
    /// Report the point as non-differentiable.
    Error,
    /// Use the zero subgradient for those rows.
    Subgradient,
}

/// AFT-Laplace log-likelihood in `(θ, τ)`.
///
/// The Hessian is the exact one, whose `(α, κ)` block involves censored rows
/// only. Pass `expected_info = true` to add the expected curvature
/// `Σ_{d=1} v v⊤`, `v = (z, −y)`, of the absolute-value terms.
pub fn aftl_eval(rows: &ModelRows, theta: &[f64], tau: f64, order: Order, kinks: Kinks, expected_info: bool) -> Result<Derivs> {
    let k = rows.k;
    let t = k;
    let mut out = Derivs::zeros(k + 1, order);
    let want_g = order >= Order::Gradient;
    let want_h = order >= Order::Diagonal;
    let diag = order == Order::Diagonal;
    let n_o = rows.n_o as f64;
    out.value = n_o * (tau * 0.5).ln();
    if want_g {
        out.grad[t] = n_o / tau;
    }
    if want_h {
        out.hess[(t, t)] = -n_o / (tau * tau);
    }
    debug_assert_eq!(rows.yo.len(), rows.n_o, "Laplace rows must keep the observed rows");
    for i in 0..rows.yo.len() {
        let z = &rows.zo[i * k..(i + 1) * k];
        let y = rows.yo[i];
        let e = tau * y - ModelRows::row_dot(&rows.zo, i, k, theta);
        out.value -= e.abs();
        if want_g {
            let w = if e.abs() < KINK_TOL {
                match kinks {
                    Kinks::Error => return Err(Error::NonDifferentiable { row: i }),
                    Kinks::Subgradient => 0.0,
                }
            } else {
                e.signum()
            };
            for a in 0..k {
                out.grad[a] += z[a] * w;
            }
            out.grad[t] -= y * w;
        }
        if want_h && expected_info {
            rank_one(&mut out.hess, z, -1.0, diag);
            if !diag {
                for a in 0..k {
                    out.hess[(a, t)] += z[a] * y;
                }
            }
            out.hess[(t, t)] -= y * y;
        }
    }
    for i in 0..rows.yc.len() {
        let z = &rows.zc[i * k..(i + 1) * k];
        let y = rows.yc[i];
        let v = ModelRows::row_dot(&rows.zc, i, k, theta) - tau * y;
        out.value += specfun::laplace_logcdf(v);
        if want_g {
            let r = specfun::laplace_inv_mills(v);
            for a in 0..k {
                out.grad[a] += z[a] * r;
            }
            out.grad[t] -= y * r;
        }
        if want_h {
            let dd = specfun::laplace_discount(-v);
            if dd != 0.0 {
                rank_one(&mut out.hess, z, -dd, diag);
                if !diag {
                    for a in 0..k {
                        out.hess[(a, t)] += z[a] * y * dd;
                    }
                }
                out.hess[(t, t)] -= y * y * dd;
            }
        }
    }
    if want_h && !diag {
        out.symmetrize_upper();
    }
    Ok(out)
}

/// Probit log-likelihood through the AFT reduction (all rows censored at
/// `ỹ = 0`, `τ = 1`); returns derivatives in `θ` only.
pub fn probit_eval(rows: &ModelRows, theta: &[f64], order: Order, profile: ApproxProfile) -> Derivs {
    let full = aftn_eval(rows, theta, 1.0, order, profile);
    let k = rows.k;
    Derivs {
        value: full.value,
        grad: if order >= Order::Gradient { full.grad.rows(0, k).into_owned() } else { DVector::zeros(0) },
        hess: if order >= Order::Diagonal { full.hess.view((0, 0), (k, k)).into_owned() } else { DMatrix::zeros(0, 0) },
    }
}

/// Reduces binary outcomes `ω` to a censored AFT problem: `ỹ = 0`, `d̃ = 0`
/// and rows multiplied by `+1` (`ω = 1`) or `−1` (`ω = 0`).
pub fn probit_reduce(omega: &[bool], data: &SurvivalDataset, design: &DesignBundle) -> (SurvivalDataset, DesignBundle) {
    let sign: Vec<f64> = omega.iter().map(|&w| if w { 1.0 } else { -1.0 }).collect();
    let n = omega.len();
    let x = DMatrix::from_fn(n, data.p(), |i, j| data.x[(i, j)] * sign[i]);
    let reduced = SurvivalDataset { y: vec![0.0; n], d: vec![false; n], x, names: data.names.clone() };
    (reduced, design.with_row_signs(&sign))
}

/// Rows of one model for the Cox partial likelihood, sorted by decreasing
/// time so that every risk set is a prefix.
#[derive(Clone, Debug)]
pub struct CoxRows {
    pub k: usize,
    pub z: Vec<f64>,
    pub event: Vec<bool>,
    /// `[start, end)` of each block of tied times, in processing order.
    pub ties: Vec<(usize, usize)>,
}

/// Row order (decreasing time) and tie blocks shared by all Cox models.
pub fn cox_order(y: &[f64]) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut order: Vec<usize> = (0..y.len()).collect();
    order.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));
    let mut ties = Vec::new();
    let mut s = 0;
    while s < order.len() {
        let mut e = s + 1;
        while e < order.len() && y[order[e]] == y[order[s]] {
            e += 1;
        }
        ties.push((s, e));
        s = e;
    }
    (order, ties)
}

impl CoxRows {
    pub fn build(data: &SurvivalDataset, design: &DesignBundle, cols: &[usize], order: &[usize], ties: &[(usize, usize)]) -> Self {
        CoxRows {
            k: cols.len(),
            z: gather(design, cols, order),
            event: order.iter().map(|&i| data.d[i]).collect(),
            ties: ties.to_vec(),
        }
    }
}

/// Cox log partial likelihood with Breslow's handling of ties.
pub fn cox_eval(rows: &CoxRows, theta: &[f64], order: Order) -> Result<Derivs> {
    let k = rows.k;
    let n = rows.event.len();
    if !rows.event.iter().any(|&e| e) {
        return Err(Error::NoEvents);
    }
    let mut out = Derivs::zeros(k, order);
    let want_g = order >= Order::Gradient;
    let want_h = order >= Order::Diagonal;
    let diag = order == Order::Diagonal;
    let eta: Vec<f64> = (0..n).map(|i| ModelRows::row_dot(&rows.z, i, k, theta)).collect();
    let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s0 = 0.0;
    let mut s1 = vec![0.0; k];
    let mut s2 = DMatrix::zeros(if want_h { k } else { 0 }, if want_h { k } else { 0 });
    let mut mean = vec![0.0; k];
    for &(start, end) in &rows.ties {
        for i in start..end {
            let w = (eta[i] - shift).exp();
            let z = &rows.z[i * k..(i + 1) * k];
            s0 += w;
            if want_g {
                for a in 0..k {
                    s1[a] += w * z[a];
                }
            }
            if want_h {
                rank_one(&mut s2, z, w, diag);
            }
        }
        let events = (start..end).filter(|&i| rows.event[i]).count();
        if events == 0 {
            continue;
        }
        let m = events as f64;
        let log_s0 = s0.ln() + shift;
        for i in start..end {
            if rows.event[i] {
                out.value += eta[i] - log_s0;
                if want_g {
                    for a in 0..k {
                        out.grad[a] += rows.z[i * k + a];
                    }
                }
            }
        }
        if want_g {
            for a in 0..k {
                mean[a] = s1[a] / s0;
                out.grad[a] -= m * mean[a];
            }
        }
        if want_h {
            if diag {
                for a in 0..k {
                    out.hess[(a, a)] -= m * (s2[(a, a)] / s0 - mean[a] * mean[a]);
                }
            } else {
                for b in 0..k {
                    for a in 0..=b {
                        out.hess[(a, b)] -= m * (s2[(a, b)] / s0 - mean[a] * mean[b]);
                    }
                }
            }
        }
    }
    if want_h && !diag {
        out.symmetrize_upper();
    }
    Ok(out)
}

/// Re-expresses `(θ, τ)` derivatives in `(θ, ρ)` with `τ = e^ρ`; the scale
/// is the last coordinate.
pub fn to_rho(mut d: Derivs, tau: f64) -> Derivs {
    let dim = d.grad.len();
    if dim == 0 {
        return d;
    }
    let t = dim - 1;
    let g_tau = d.grad[t];
    d.grad[t] = tau * g_tau;
    if d.hess.nrows() == dim {
        let h_tt = d.hess[(t, t)];
        for a in 0..t {
            d.hess[(a, t)] *= tau;
            d.hess[(t, a)] *= tau;
        }
        d.hess[(t, t)] = tau * g_tau + tau * tau * h_tt;
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_row(y: f64, d: bool) -> ModelRows {
        let (zo, yo, zc, yc) = if d { (vec![1.0], vec![y], vec![], vec![]) } else { (vec![], vec![], vec![1.0], vec![y]) };
        ModelRows { k: 1, n_o: d as usize, zo, yo, zc, yc, suff: None }
    }

    #[test]
    fn single_row_values() {
        let r = aftn_eval(&one_row(0.0, true), &[0.0], 1.0, Order::Value, ApproxProfile::Exact);
        assert!((r.value + HALF_LN_2PI).abs() < 1e-15);
        let r = aftn_eval(&one_row(0.0, false), &[0.0], 1.0, Order::Value, ApproxProfile::Exact);
        assert!((r.value - 0.5f64.ln()).abs() < 1e-15);
        let r = aftl_eval(&one_row(0.0, true), &[0.0], 1.0, Order::Value, Kinks::Error, false).unwrap();
        assert!((r.value - 0.5f64.ln()).abs() < 1e-15);
        assert!(matches!(
            aftl_eval(&one_row(0.0, true), &[0.0], 1.0, Order::Gradient, Kinks::Error, false),
            Err(Error::NonDifferentiable { row: 0 })
        ));
    }

    #[test]
    fn cox_null_and_singleton() {
        // times 5,4,3,2,1; events at 4 and 1.
        let y = [5.0, 4.0, 3.0, 2.0, 1.0];
        let (order, ties) = cox_order(&y);
        let rows = CoxRows {
            k: 1,
            z: order.iter().map(|&i| i as f64 * 0.3).collect(),
            event: order.iter().map(|&i| i == 1 || i == 4).collect(),
            ties,
        };
        let v = cox_eval(&rows, &[0.0], Order::Value).unwrap().value;
        assert!((v + (2f64.ln() + 5f64.ln())).abs() < 1e-14);
        // Only the longest time is an event: its risk set is itself.
        let single = CoxRows { event: order.iter().map(|&i| i == 0).collect(), ..rows.clone() };
        assert!(cox_eval(&single, &[0.7], Order::Value).unwrap().value.abs() < 1e-14);
        let none = CoxRows { event: vec![false; 5], ..rows };
        assert_eq!(cox_eval(&none, &[0.0], Order::Value).unwrap_err(), Error::NoEvents);
    }
}
