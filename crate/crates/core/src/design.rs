//! Survival data, standardized design columns, spline blocks and the lazily
//! filled Gram cache.
//!
//! All design columns live in one index space: `0` is the intercept,
//! `1..=p` are the standardized linear columns and the non-linear blocks
//! follow covariate by covariate, level by level.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed log-times, event indicators and raw covariates.
#[derive(Clone, Debug, PartialEq)]
pub struct SurvivalDataset {
    /// `y_i = min(log o_i, log c_i)`.
    pub y: Vec<f64>,
    /// `true` when the event was observed (`d_i = 1`).
    pub d: Vec<bool>,
    /// Raw covariates, `n × p`.
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
}

impl SurvivalDataset {
    pub fn new(y: Vec<f64>, d: Vec<bool>, x: DMatrix<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::with_names(y, d, x, names)
    }

    pub fn with_names(y: Vec<f64>, d: Vec<bool>, x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let n = y.len();
        if d.len() != n || x.nrows() != n {
            return Err(Error::Data(format!(
                "length mismatch: {} times, {} status values, {} covariate rows",
                n,
                d.len(),
                x.nrows()
            )));
        }
        if names.len() != x.ncols() {
            return Err(Error::Dimension { expected: x.ncols(), got: names.len() });
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("row {}: log-time is not finite", i + 1)));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("row {}, column {}: covariate is not finite", k % n + 1, k / n + 1)));
        }
        Ok(SurvivalDataset { y, d, x, names })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Number of observed events.
    pub fn n_o(&self) -> usize {
        self.d.iter().filter(|&&e| e).count()
    }

    /// Rows reordered by `perm` (row `i` of the result is row `perm[i]`).
    pub fn select_rows(&self, perm: &[usize]) -> SurvivalDataset {
        let x = DMatrix::from_fn(perm.len(), self.p(), |i, j| self.x[(perm[i], j)]);
        SurvivalDataset {
            y: perm.iter().map(|&i| self.y[i]).collect(),
            d: perm.iter().map(|&i| self.d[i]).collect(),
            x,
            names: self.names.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Dummy,
}

/// Standardization applied to one raw covariate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub mean: f64,
    /// Divisor; 1 for dummies.
    pub scale: f64,
    pub kind: ColumnKind,
}

impl ColumnMeta {
    pub fn forward(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.scale
    }

    pub fn backward(&self, std: f64) -> f64 {
        std * self.scale + self.mean
    }
}

fn is_binary(col: &[f64]) -> bool {
    let mut vals: Vec<f64> = Vec::new();
    for &v in col {
        if !vals.contains(&v) {
            vals.push(v);
            if vals.len() > 2 {
                return false;
            }
        }
    }
    vals.len() == 2
}

/// Centers every column; continuous columns are also scaled to unit sample SD.
///
/// `dummies[j]` forces column `j` to be treated as a dummy; two-valued
/// columns are detected as dummies automatically.
pub fn standardize(x_raw: &DMatrix<f64>, dummies: &[bool]) -> Result<(DMatrix<f64>, Vec<ColumnMeta>)> {
    let (n, p) = x_raw.shape();
    let mut out = DMatrix::zeros(n, p);
    let mut meta = Vec::with_capacity(p);
    for j in 0..p {
        let col: Vec<f64> = x_raw.column(j).iter().copied().collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        if !(var > 0.0) {
            return Err(Error::ConstantColumn { column: j + 1 });
        }
        let dummy = dummies.get(j).copied().unwrap_or(false) || is_binary(&col);
        let m = if dummy {
            ColumnMeta { mean, scale: 1.0, kind: ColumnKind::Dummy }
        } else {
            ColumnMeta { mean, scale: var.sqrt(), kind: ColumnKind::Continuous }
        };
        for i in 0..n {
            out[(i, j)] = m.forward(col[i]);
        }
        meta.push(m);
    }
    Ok((out, meta))
}

/// Knot vector of a clamped cubic B-spline basis with `m` functions on `[lo, hi]`.
pub fn cubic_knots(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    let interior = m - 4;
    let mut t = vec![lo; 4];
    for k in 1..=interior {
        t.push(lo + (hi - lo) * k as f64 / (interior + 1) as f64);
    }
    t.extend([hi; 4]);
    t
}

/// Evaluates all `m` cubic B-splines at `x` (clamped to the knot range).
pub fn bspline_row(knots: &[f64], x: f64, out: &mut [f64]) {
    const DEG: usize = 3;
    let m = knots.len() - DEG - 1;
    debug_assert_eq!(out.len(), m);
    let lo = knots[DEG];
    let hi = knots[m];
    let x = x.clamp(lo, hi);
    // Span index with t[s] <= x < t[s+1], using the last non-empty span at hi.
    let mut s = DEG;
    while s < m - 1 && x >= knots[s + 1] {
        s += 1;
    }
    // de Boor's triangular recursion for the DEG+1 non-zero functions.
    let mut b = [0.0f64; DEG + 1];
    let mut left = [0.0f64; DEG + 1];
    let mut right = [0.0f64; DEG + 1];
    b[0] = 1.0;
    for k in 1..=DEG {
        left[k] = x - knots[s + 1 - k];
        right[k] = knots[s + k] - x;
        let mut saved = 0.0;
        for r in 0..k {
            let denom = right[r + 1] + left[k - r];
            let temp = if denom != 0.0 { b[r] / denom } else { 0.0 };
            b[r] = saved + right[r + 1] * temp;
            saved = left[k - r] * temp;
        }
        b[k] = saved;
    }
    out.iter_mut().for_each(|v| *v = 0.0);
    for (k, v) in b.iter().enumerate() {
        out[s - DEG + k] = *v;
    }
}

fn count_distinct(x: &[f64]) -> usize {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Cubic B-spline basis with `m` columns and equi-spaced knots over the
/// observed range of `x`.
pub fn spline_block(x: &[f64], m: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if m < 4 {
        return Err(Error::Config(format!("a cubic spline basis needs at least 4 columns, got {m}")));
    }
    let distinct = count_distinct(x);
    if distinct < m + 2 {
        return Err(Error::TooFewDistinct { column: 0, distinct, r: m, needed: m + 2 });
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let knots = cubic_knots(lo, hi, m);
    let mut s = DMatrix::zeros(x.len(), m);
    let mut row = vec![0.0; m];
    for (i, &xi) in x.iter().enumerate() {
        bspline_row(&knots, xi, &mut row);
        for k in 0..m {
            s[(i, k)] = row[k];
        }
    }
    Ok((s, knots))
}

/// Residualizes `s_tilde` on the column space of `z`: returns
/// `(S, C)` with `S = S̃ − Z·C` and `Z⊤S = 0`.
pub fn orthogonalize(s_tilde: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let q_cols = z.ncols();
    if q_cols == 0 {
        return Ok((s_tilde.clone(), DMatrix::zeros(0, s_tilde.ncols())));
    }
    let qr = z.clone().qr();
    let r = qr.r();
    let rmax = r.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if r.diagonal().iter().any(|v| v.abs() <= 1e-10 * rmax) {
        return Err(Error::RankDeficient);
    }
    let q = qr.q();
    let mut s = s_tilde.clone();
    let mut c = DMatrix::zeros(q_cols, s_tilde.ncols());
    // Two passes of classical Gram–Schmidt against Q keep Z⊤S at rounding level.
    for _ in 0..2 {
        let qts = q.transpose() * &s;
        let step = r.solve_upper_triangular(&qts).ok_or(Error::RankDeficient)?;
        s -= &q * qts;
        c += step;
    }
    Ok((s, c))
}

/// One non-linear block of one covariate: everything needed to rebuild its
/// columns for new covariate values.
#[derive(Clone, Debug)]
pub struct SplineLevel {
    pub knots: Vec<f64>,
    /// Residualization coefficients against `(1, x_j, earlier levels)`.
    pub coef: DMatrix<f64>,
    /// Maps residualized B-spline columns to the stored basis.
    pub transform: DMatrix<f64>,
    /// First column id of the block in the combined index space.
    pub first: usize,
    pub width: usize,
}

#[derive(Clone, Debug)]
pub struct DesignOptions {
    /// Nested non-linear basis dimensions, e.g. `[5]` or `[5, 10, 15]`.
    pub r_levels: Vec<usize>,
    /// Columns to treat as dummies regardless of their values.
    pub dummies: Vec<bool>,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions { r_levels: vec![5], dummies: Vec::new() }
    }
}

/// Standardized linear columns plus orthogonalized spline blocks.
#[derive(Clone, Debug)]
pub struct DesignBundle {
    n: usize,
    p: usize,
    cols: Vec<Vec<f64>>,
    pub meta: Vec<ColumnMeta>,
    pub r_levels: Vec<usize>,
    /// `levels[j]` is empty for dummies.
    pub levels: Vec<Vec<SplineLevel>>,
}

impl DesignBundle {
    pub fn build(data: &SurvivalDataset, opts: &DesignOptions) -> Result<Self> {
        let n = data.n();
        let p = data.p();
        if opts.r_levels.is_empty() || opts.r_levels.iter().any(|&r| r < 3) {
            return Err(Error::Config("every basis dimension r must be at least 3".into()));
        }
        let (xs, meta) = standardize(&data.x, &opts.dummies)?;
        let mut cols = Vec::with_capacity(1 + p);
        cols.push(vec![1.0; n]);
        for j in 0..p {
            cols.push(xs.column(j).iter().copied().collect());
        }
        let mut levels = vec![Vec::new(); p];
        for j in 0..p {
            if meta[j].kind == ColumnKind::Dummy {
                continue;
            }
            let xj = cols[1 + j].clone();
            let distinct = count_distinct(&xj);
            let r_max = *opts.r_levels.iter().max().unwrap();
            if distinct < r_max + 4 {
                return Err(Error::TooFewDistinct { column: j + 1, distinct, r: r_max, needed: r_max + 4 });
            }
            let mut z_cols = vec![cols[0].clone(), xj.clone()];
            for &r in &opts.r_levels {
                let (s_tilde, knots) = spline_block(&xj, r + 2)?;
                let z = DMatrix::from_fn(n, z_cols.len(), |i, k| z_cols[k][i]);
                let (s_orth, coef) = orthogonalize(&s_tilde, &z)?;
                let (basis, transform) = compress(&s_orth, r, n)?;
                let first = cols.len();
                let width = basis.ncols();
                for k in 0..width {
                    let c: Vec<f64> = basis.column(k).iter().copied().collect();
                    z_cols.push(c.clone());
                    cols.push(c);
                }
                levels[j].push(SplineLevel { knots, coef, transform, first, width });
            }
        }
        Ok(DesignBundle { n, p, cols, meta, r_levels: opts.r_levels.clone(), levels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Total number of columns in the combined index space.
    pub fn n_columns(&self) -> usize {
        self.cols.len()
    }

    pub fn column(&self, id: usize) -> &[f64] {
        &self.cols[id]
    }

    /// Column id of covariate `j`'s linear term.
    pub fn linear_id(j: usize) -> usize {
        1 + j
    }

    pub fn has_nonlinear(&self, j: usize) -> bool {
        !self.levels[j].is_empty()
    }

    /// Column ids of covariate `j`'s non-linear group at `level` (all nested
    /// blocks up to and including it).
    pub fn nonlinear_ids(&self, j: usize, level: usize) -> Vec<usize> {
        self.levels[j].iter().take(level + 1).flat_map(|l| l.first..l.first + l.width).collect()
    }

    /// Design row (all columns) for one new raw covariate vector.
    pub fn transform_row(&self, x_raw: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols.len()];
        out[0] = 1.0;
        for j in 0..self.p {
            out[1 + j] = self.meta[j].forward(x_raw[j]);
        }
        for j in 0..self.p {
            let mut z = vec![1.0, out[1 + j]];
            for lvl in &self.levels[j] {
                let m = lvl.knots.len() - 4;
                let mut b = vec![0.0; m];
                bspline_row(&lvl.knots, out[1 + j], &mut b);
                let bt = DVector::from_vec(b);
                let zv = DVector::from_vec(z.clone());
                let resid = bt - lvl.coef.transpose() * zv;
                let s = lvl.transform.transpose() * resid;
                for k in 0..lvl.width {
                    out[lvl.first + k] = s[k];
                    z.push(s[k]);
                }
            }
        }
        out
    }

    /// Copy with every row multiplied by `sign[i]` (used by the probit reduction).
    pub fn with_row_signs(&self, sign: &[f64]) -> DesignBundle {
        let cols = self.cols.iter().map(|c| c.iter().zip(sign).map(|(v, s)| v * s).collect()).collect();
        DesignBundle { cols, ..self.clone() }
    }

    /// Copy restricted to `rows` (column definitions are kept, not refitted).
    pub fn select_rows(&self, rows: &[usize]) -> DesignBundle {
        let cols = self.cols.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect();
        DesignBundle { n: rows.len(), cols, ..self.clone() }
    }

    /// `Σ_i a_i b_i` over all rows, in row order.
    pub fn full_dot(&self, i: usize, j: usize) -> f64 {
        dot(&self.cols[i], &self.cols[j])
    }
}

/// Orthonormal basis of the leading `r` directions of `s`, scaled so that
/// `S⊤S = n·I`, with the map from `s`.
fn compress(s: &DMatrix<f64>, r: usize, n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let svd = s.clone().svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let vt = svd.v_t.as_ref().expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let smax = svd.singular_values[order[0]];
    let keep: Vec<usize> = order.into_iter().filter(|&k| svd.singular_values[k] > 1e-8 * smax.max(1e-300)).take(r).collect();
    if keep.is_empty() {
        return Err(Error::RankDeficient);
    }
    let sn = (n as f64).sqrt();
    let basis = DMatrix::from_fn(s.nrows(), keep.len(), |i, k| u[(i, keep[k])] * sn);
    let transform = DMatrix::from_fn(s.ncols(), keep.len(), |i, k| vt[(keep[k], i)] * sn / svd.singular_values[keep[k]]);
    Ok((basis, transform))
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Lazily filled cross-products of design columns over the uncensored rows.
#[derive(Debug)]
pub struct GramCache {
    cols: Vec<Vec<f64>>,
    y: Vec<f64>,
    yy: f64,
    xx: RwLock<HashMap<(u32, u32), f64>>,
    xy: RwLock<HashMap<u32, f64>>,
}

impl GramCache {
    pub fn new(design: &DesignBundle, y: &[f64], d: &[bool]) -> Self {
        let rows: Vec<usize> = (0..d.len()).filter(|&i| d[i]).collect();
        let cols = (0..design.n_columns()).map(|c| rows.iter().map(|&i| design.column(c)[i]).collect()).collect();
        let y: Vec<f64> = rows.iter().map(|&i| y[i]).collect();
        let yy = dot(&y, &y);
        GramCache { cols, y, yy, xx: RwLock::new(HashMap::new()), xy: RwLock::new(HashMap::new()) }
    }

    /// `Σ_{d=1} z_i z_j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = (i.min(j) as u32, i.max(j) as u32);
        if let Some(v) = self.xx.read().get(&key) {
            return *v;
        }
        let v = dot(&self.cols[key.0 as usize], &self.cols[key.1 as usize]);
        self.xx.write().insert(key, v);
        v
    }

    /// `Σ_{d=1} z_i y`.
    pub fn get_y(&self, i: usize) -> f64 {
        if let Some(v) = self.xy.read().get(&(i as u32)) {
            return *v;
        }
        let v = dot(&self.cols[i], &self.y);
        self.xy.write().insert(i as u32, v);
        v
    }

    /// `Σ_{d=1} y²`.
    pub fn get_yy(&self) -> f64 {
        self.yy
    }

    pub fn n_cached(&self) -> usize {
        self.xx.read().len()
    }
}
