//! Helpers shared by the integration tests: independent reference
//! evaluations, finite differences and small data generators.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use survsel::design::SurvivalDataset;

pub const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

pub fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / SQRT_2PI
}

/// `Φ(z)`: the odd power series `φ(z)·Σ z^{2n+1}/(2n+1)!!` in the middle,
/// the Mills-ratio continued fraction in the tails.
pub fn cdf(z: f64) -> f64 {
    if z < -3.0 {
        phi(z) / mills_cf(-z, 1)
    } else if z > 3.0 {
        1.0 - phi(z) / mills_cf(z, 1)
    } else {
        let mut term = z;
        let mut sum = z;
        let mut k = 1.0;
        while term.abs() > 1e-18 * sum.abs().max(1e-300) {
            k += 2.0;
            term *= z * z / k;
            sum += term;
        }
        0.5 + phi(z) * sum
    }
}

/// Continued fraction `x + 1/(x + 2/(x + 3/(x + …)))`, evaluated bottom-up.
fn mills_cf(x: f64, start: usize) -> f64 {
    let mut v = x;
    for k in (start..400).rev() {
        v = x + k as f64 / v;
    }
    v
}

/// `r(z) = φ(z)/Φ(z)`.
pub fn inv_mills(z: f64) -> f64 {
    if z < -3.0 {
        mills_cf(-z, 1)
    } else {
        phi(z) / cdf(z)
    }
}

/// `D(z) = r(−z)·(r(−z) − z)`.
pub fn info_discount(z: f64) -> f64 {
    if z > 3.0 {
        // r(−z) − z = 1/(z + 2/(z + 3/…)) avoids the cancellation.
        let tail = 1.0 / mills_cf(z, 2);
        (z + tail) * tail
    } else {
        let r = inv_mills(-z);
        r * (r - z)
    }
}

pub fn normal(rng: &mut ChaCha20Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Linear-Gaussian log-times with roughly `cens` of the rows censored at
/// independent Normal censoring times.
pub fn censored_data(n: usize, beta: &[f64], cens: f64, seed: u64) -> SurvivalDataset {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let p = beta.len();
    let x = DMatrix::from_fn(n, p, |_, _| normal(&mut rng));
    let mut y = Vec::with_capacity(n);
    let mut d = Vec::with_capacity(n);
    for i in 0..n {
        let t = 0.2 + (0..p).map(|j| beta[j] * x[(i, j)]).sum::<f64>() + 0.6 * normal(&mut rng);
        if rng.random_bool(cens) {
            let c = t - rng.random::<f64>();
            y.push(c);
            d.push(false);
        } else {
            y.push(t);
            d.push(true);
        }
    }
    SurvivalDataset::new(y, d, x).unwrap()
}

/// Central-difference gradient and Hessian of `f` at `x` with relative step `h`.
pub fn fd_derivs(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> (DVector<f64>, DMatrix<f64>) {
    let d = x.len();
    let step: Vec<f64> = x.iter().map(|v| h * v.abs().max(1.0)).collect();
    let mut g = DVector::zeros(d);
    let mut hm = DMatrix::zeros(d, d);
    let at = |i: usize, si: f64, j: usize, sj: f64| {
        let mut y = x.to_vec();
        y[i] += si;
        y[j] += sj;
        f(&y)
    };
    let f0 = f(x);
    for i in 0..d {
        let (p, m) = (at(i, step[i], i, 0.0), at(i, -step[i], i, 0.0));
        g[i] = (p - m) / (2.0 * step[i]);
        hm[(i, i)] = (p - 2.0 * f0 + m) / (step[i] * step[i]);
        for j in 0..i {
            let v = (at(i, step[i], j, step[j]) - at(i, step[i], j, -step[j]) - at(i, -step[i], j, step[j]) + at(i, -step[i], j, -step[j]))
                / (4.0 * step[i] * step[j]);
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    (g, hm)
}

/// Largest error relative to the largest entry of the reference.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Analytic gradient checked against the difference of values; the
/// Hessian against the difference of the analytic gradient, which is far
/// less noisy than second differences of values.
pub fn check_derivs(
    value: &dyn Fn(&[f64]) -> f64,
    grad: &dyn Fn(&[f64]) -> DVector<f64>,
    hess: &DMatrix<f64>,
    x: &[f64],
) -> (f64, f64) {
    let d = x.len();
    let g = grad(x);
    let h = 1e-5;
    let mut fd_g = vec![0.0; d];
    let mut fd_h = DMatrix::zeros(d, d);
    for i in 0..d {
        let s = h * x[i].abs().max(1.0);
        let mut up = x.to_vec();
        let mut dn = x.to_vec();
        up[i] += s;
        dn[i] -= s;
        fd_g[i] = (value(&up) - value(&dn)) / (2.0 * s);
        let col = (grad(&up) - grad(&dn)) / (2.0 * s);
        fd_h.set_column(i, &col);
    }
    (rel_err(g.as_slice(), &fd_g), rel_err(hess.as_slice(), fd_h.as_slice()))
}
