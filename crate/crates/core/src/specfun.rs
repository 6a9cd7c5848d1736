//! Normal and Laplace distribution functions used by the censored likelihoods.
//!
//! Two evaluation profiles are available. [`ApproxProfile::Fast`] uses cheap
//! piecewise approximations (a rational polynomial for the Normal CDF and a
//! truncated continued fraction for the inverse Mills ratio in the lower
//! tail). [`ApproxProfile::Exact`] goes through [`exact`], an erfc
//! implementation accurate to a few ulps that serves as the reference.
//!
//! ```
//! use survsel::specfun::{self, ApproxProfile};
//!
//! let z = -2.5;
//! let fast = specfun::inv_mills(z);
//! let exact = ApproxProfile::Exact.inv_mills(z);
//! assert!((fast - exact).abs() < 2e-4);
//! ```

use serde::{Deserialize, Serialize};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Switch point between the rational and asymptotic pieces of the
/// three-coefficient CDF approximation.
pub const ASYMPTOTIC_CUTOFF: f64 = 3.447_088_7;

/// Below this value the inverse Mills ratio uses the continued fraction.
pub const MILLS_CF_CUTOFF: f64 = -1.756_506;

/// Below this value the log-CDF falls back to a two-term asymptotic series.
pub const LOGCDF_FLOOR: f64 = -40.0;

/// Chooses how the Normal distribution functions are evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApproxProfile {
    /// Reference evaluation through [`exact`].
    Exact,
    /// Piecewise approximations, roughly an order of magnitude cheaper.
    #[default]
    Fast,
}

impl ApproxProfile {
    pub fn norm_cdf(self, z: f64) -> f64 {
        match self {
            ApproxProfile::Exact => exact::norm_cdf(z),
            ApproxProfile::Fast => norm_cdf(z),
        }
    }

    pub fn norm_logcdf(self, z: f64) -> f64 {
        match self {
            ApproxProfile::Exact => exact::norm_logcdf(z),
            ApproxProfile::Fast => norm_logcdf(z),
        }
    }

    pub fn inv_mills(self, z: f64) -> f64 {
        match self {
            ApproxProfile::Exact => exact::inv_mills(z),
            ApproxProfile::Fast => inv_mills(z),
        }
    }

    pub fn info_discount(self, z: f64) -> f64 {
        match self {
            ApproxProfile::Exact => exact::info_discount(z),
            ApproxProfile::Fast => info_discount(z),
        }
    }

    /// `(log Φ(v), r(v), D(−v))` for the censored-row terms, sharing work
    /// where the profile allows it.
    #[inline]
    pub fn censored_terms(self, v: f64) -> (f64, f64, f64) {
        match self {
            ApproxProfile::Exact => {
                let r = exact::inv_mills(v);
                (exact::norm_logcdf(v), r, r * (r + v))
            }
            ApproxProfile::Fast => {
                let r = inv_mills(v);
                let d = if v <= MILLS_CF_CUTOFF {
                    let t = mills_cf_tail(-v);
                    r * t
                } else {
                    r * (r + v)
                };
                (norm_logcdf(v), r, d)
            }
        }
    }
}

#[inline]
pub fn norm_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

#[inline]
fn norm_logpdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Five-coefficient rational approximation of Φ (absolute error below 7.5e−8).
///
/// Built from one tail formula reflected about zero (and pinned to 1/2 at
/// the origin), so `Φ̂(z) + Φ̂(−z) = 1` holds exactly.
pub fn norm_cdf(z: f64) -> f64 {
    const P: f64 = 0.231_641_9;
    const B: [f64; 5] = [0.319_381_530, -0.356_563_782, 1.781_477_937, -1.821_255_978, 1.330_274_429];
    let t = 1.0 / (1.0 + P * z.abs());
    let poly = t * (B[0] + t * (B[1] + t * (B[2] + t * (B[3] + t * B[4]))));
    let q = norm_pdf(z) * poly;
    if z > 0.0 {
        1.0 - q
    } else if z < 0.0 {
        q
    } else {
        0.5
    }
}

fn q3(z: f64) -> f64 {
    const A: [f64; 3] = [0.436_183_6, -0.120_167_6, 0.937_298_0];
    let t = 1.0 / (1.0 + 0.332_67 * z.abs());
    norm_pdf(z) * t * (A[0] + t * (A[1] + t * A[2]))
}

/// Three-coefficient piecewise approximation of Φ with asymptotic tails.
///
/// Less accurate than [`norm_cdf`] (about 1e−5) but it joins the Mills-ratio
/// continued fraction continuously, which is why [`inv_mills`] uses it.
pub fn norm_cdf_piecewise(z: f64) -> f64 {
    if z <= -ASYMPTOTIC_CUTOFF {
        let z2 = z * z;
        norm_pdf(z) * (-1.0 / z + 1.0 / (z * z2) - 3.0 / (z * z2 * z2))
    } else if z <= 0.0 {
        q3(z)
    } else if z <= ASYMPTOTIC_CUTOFF {
        1.0 - q3(-z)
    } else {
        let z2 = z * z;
        1.0 - norm_pdf(z) * (1.0 / z - 1.0 / (z * z2) + 3.0 / (z * z2 * z2))
    }
}

/// Tail of the Mills-ratio continued fraction: `r̂(−x) − x` for `x ≥ 1.756506`.
///
/// Kept separate so `D̂` can be formed without cancelling `r̂(−z) − z`.
#[inline]
fn mills_cf_tail(x: f64) -> f64 {
    let mut v = x + 4.890_096;
    v = x + 11.5 / v;
    for k in [5.0, 4.0, 3.0, 2.0] {
        v = x + k / v;
    }
    1.0 / v
}

/// Approximate inverse Mills ratio `r(z) = φ(z)/Φ(z)`.
pub fn inv_mills(z: f64) -> f64 {
    if z <= MILLS_CF_CUTOFF {
        -z + mills_cf_tail(-z)
    } else {
        norm_pdf(z) / norm_cdf_piecewise(z)
    }
}

/// Approximate information discount `D(z) = r(−z)² − z·r(−z)`, in (0, 1).
pub fn info_discount(z: f64) -> f64 {
    let r = inv_mills(-z);
    if -z <= MILLS_CF_CUTOFF {
        r * mills_cf_tail(z)
    } else {
        r * r - z * r
    }
}

/// Approximate `log Φ(z)`, finite for every finite `z`.
pub fn norm_logcdf(z: f64) -> f64 {
    if z < LOGCDF_FLOOR {
        let z2 = z * z;
        norm_logpdf(z) + (-1.0 / z + 1.0 / (z * z2)).ln()
    } else if z <= -ASYMPTOTIC_CUTOFF {
        norm_logpdf(z) - inv_mills(z).ln()
    } else {
        norm_cdf(z).ln()
    }
}

/// CDF of the standard Laplace distribution.
pub fn laplace_cdf(z: f64) -> f64 {
    if z <= 0.0 {
        0.5 * z.exp()
    } else {
        1.0 - 0.5 * (-z).exp()
    }
}

pub fn laplace_logcdf(z: f64) -> f64 {
    if z <= 0.0 {
        z - std::f64::consts::LN_2
    } else {
        (-0.5 * (-z).exp()).ln_1p()
    }
}

/// `f(z)/F(z)` for the standard Laplace: 1 on the left half-line.
pub fn laplace_inv_mills(z: f64) -> f64 {
    if z <= 0.0 {
        1.0
    } else {
        let e = (-z).exp();
        e / (2.0 - e)
    }
}

/// Laplace analogue of the information discount; zero for `z ≥ 0`.
pub fn laplace_discount(z: f64) -> f64 {
    if z < 0.0 {
        let r = laplace_inv_mills(-z);
        r * r + r
    } else {
        0.0
    }
}

/// Reference evaluations via the scaled complementary error function.
///
/// `erfcx` uses the all-positive Taylor series of erf below 2 and a
/// Lentz-evaluated continued fraction above, giving close to full double
/// precision throughout.
pub mod exact {
    use super::norm_pdf;
    use std::f64::consts::{FRAC_1_SQRT_2, PI};

    const CF_SWITCH: f64 = 2.0;

    /// `e^{x²}·erfc(x)` for `x ≥ 0`.
    fn erfcx_nonneg(x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        if x < CF_SWITCH {
            // erf(x) = 2/√π · e^{−x²} · Σ (2x²)^n x / (2n+1)!!
            let x2 = x * x;
            let mut term = x;
            let mut sum = x;
            let mut n = 0.0;
            loop {
                n += 1.0;
                term *= 2.0 * x2 / (2.0 * n + 1.0);
                sum += term;
                if term <= sum * 1e-17 {
                    break;
                }
            }
            x2.exp() - 2.0 / PI.sqrt() * sum
        } else {
            // erfcx(x) = 1/√π · 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + …))))
            let tiny = 1e-300;
            let mut f = x;
            let mut c = x;
            let mut d = 0.0;
            for k in 1..10_000 {
                let a = k as f64 * 0.5;
                d = x + a * d;
                if d.abs() < tiny {
                    d = tiny;
                }
                c = x + a / c;
                if c.abs() < tiny {
                    c = tiny;
                }
                d = 1.0 / d;
                let delta = c * d;
                f *= delta;
                if (delta - 1.0).abs() < 1e-16 {
                    break;
                }
            }
            1.0 / (PI.sqrt() * f)
        }
    }

    /// Scaled complementary error function `e^{x²}·erfc(x)`.
    pub fn erfcx(x: f64) -> f64 {
        if x >= 0.0 {
            erfcx_nonneg(x)
        } else {
            2.0 * (x * x).exp() - erfcx_nonneg(-x)
        }
    }

    pub fn erfc(x: f64) -> f64 {
        if x >= 0.0 {
            (-x * x).exp() * erfcx_nonneg(x)
        } else {
            2.0 - (-x * x).exp() * erfcx_nonneg(-x)
        }
    }

    pub fn norm_cdf(z: f64) -> f64 {
        let x = -z * FRAC_1_SQRT_2;
        if x >= 0.0 {
            0.5 * (-x * x).exp() * erfcx_nonneg(x)
        } else {
            1.0 - 0.5 * (-x * x).exp() * erfcx_nonneg(-x)
        }
    }

    pub fn norm_logcdf(z: f64) -> f64 {
        let x = -z * FRAC_1_SQRT_2;
        if x >= 0.0 {
            -x * x + (0.5 * erfcx_nonneg(x)).ln()
        } else {
            (-0.5 * (-x * x).exp() * erfcx_nonneg(-x)).ln_1p()
        }
    }

    pub fn inv_mills(z: f64) -> f64 {
        if z <= 0.0 {
            (2.0 / PI).sqrt() / erfcx_nonneg(-z * FRAC_1_SQRT_2)
        } else {
            norm_pdf(z) / norm_cdf(z)
        }
    }

    pub fn info_discount(z: f64) -> f64 {
        let r = inv_mills(-z);
        r * (r - z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_and_centered() {
        assert_eq!(norm_cdf(0.0), 0.5);
        for z in [0.1, 1.3, 2.9, 6.0] {
            assert!((norm_cdf(z) + norm_cdf(-z) - 1.0).abs() < 1e-15);
        }
        assert!((norm_logcdf(0.0) - 0.5f64.ln()).abs() < 1e-7);
        assert!((exact::norm_logcdf(0.0) - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn piecewise_cdf_is_continuous_at_switches() {
        for c in [-ASYMPTOTIC_CUTOFF, ASYMPTOTIC_CUTOFF] {
            let a = norm_cdf_piecewise(c - 1e-12);
            let b = norm_cdf_piecewise(c + 1e-12);
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
        let l = inv_mills(MILLS_CF_CUTOFF - 1e-12);
        let r = inv_mills(MILLS_CF_CUTOFF + 1e-12);
        assert!((l - r).abs() < 1e-6);
    }

    #[test]
    fn mills_at_zero_and_tail() {
        assert!((inv_mills(0.0) - (2.0 / std::f64::consts::PI).sqrt()).abs() < 2e-4);
        let z = -1e4;
        assert!((inv_mills(z) + z).abs() / -z < 1e-7);
    }

    #[test]
    fn logcdf_tail_behaviour() {
        let z = -20.0;
        let asym = -0.5 * z * z - (-z * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!(((norm_logcdf(z) - asym) / asym).abs() < 1e-3);
        assert!(norm_logcdf(-1e5).is_finite());
        let v = norm_logcdf(5.0);
        assert!(v < 0.0 && v > -1e-6);
    }

    #[test]
    fn discount_limits() {
        assert!(info_discount(30.0) > 0.995);
        assert!(info_discount(-30.0) > 0.0);
        for z in [-5.0, -1.0, 0.0, 2.0, 8.0] {
            let r = inv_mills(-z);
            let ident = info_discount(z) + z * r - r * r;
            assert!(ident.abs() < 1e-12 * (1.0 + r * r), "identity off by {ident} at {z}");
        }
    }

    #[test]
    fn laplace_pieces() {
        assert_eq!(laplace_cdf(0.0), 0.5);
        assert_eq!(laplace_inv_mills(-2.0), 1.0);
        let f1 = 0.5 * (-1.0f64).exp();
        let r1 = f1 / laplace_cdf(1.0);
        assert!((laplace_discount(-1.0) - (r1 * r1 + r1)).abs() < 1e-15);
        assert_eq!(laplace_discount(0.5), 0.0);
        for z in [-3.0, -0.2, 0.4, 7.0] {
            assert!((laplace_logcdf(z) - laplace_cdf(z).ln()).abs() < 1e-14);
        }
    }

    #[test]
    fn exact_matches_known_values() {
        // erfc(1), erfc(3), erfcx(10) from tables
        assert!((exact::erfc(1.0) - 0.157_299_207_050_285_13).abs() < 1e-15, "{}", exact::erfc(1.0) - 0.157_299_207_050_285_13);
        assert!((exact::erfc(3.0) / 2.209_049_699_858_544e-5 - 1.0).abs() < 1e-13);
        assert!((exact::erfcx(10.0) / 0.056_140_992_743_60 - 1.0).abs() < 1e-11);
        assert!((exact::norm_cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-16);
    }
}
