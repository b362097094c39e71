//! Shared numerics: stable logistic/log-likelihood helpers, normal
//! distribution functions (erfc-based, accurate to ~1e-15), and small
//! vector statistics used across the crate.

use std::f64::consts::PI;

/// 1/sqrt(pi)
const FRAC_1_SQRT_PI: f64 = 0.5641895835477562869;
const LN_SQRT_2PI: f64 = 0.9189385332046727418;

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(1 + exp(x)) without overflow.
pub fn log1pexp(x: f64) -> f64 {
    if x > 33.0 {
        x
    } else if x > -37.0 {
        x.exp().ln_1p()
    } else {
        x.exp()
    }
}

/// Log-likelihood of a Bernoulli observation with logit `eta`:
/// y*log(sigma(eta)) + (1-y)*log(1-sigma(eta)).
pub fn bernoulli_loglik(y: f64, eta: f64) -> f64 {
    -y * log1pexp(-eta) - (1.0 - y) * log1pexp(eta)
}

/// logit(p) = log(p/(1-p)).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn norm_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn ln_norm_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

/// Complementary error function (Cody's rational approximations).
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x <= 0.46875 {
        return 1.0 - erf_small(x);
    }
    let scaled = erfc_scaled_pos(x);
    // exp(-x^2) split as in Cody to minimise argument-reduction error
    let ysq = (x * 16.0).trunc() / 16.0;
    let del = (x - ysq) * (x + ysq);
    (-ysq * ysq).exp() * (-del).exp() * scaled
}

/// Scaled complementary error function exp(x^2)*erfc(x).
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        // 2*exp(x^2) - erfcx(-x); overflows for x << 0, which we never need
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x <= 0.46875 {
        return (x * x).exp() * (1.0 - erf_small(x));
    }
    erfc_scaled_pos(x)
}

// erf(x) for |x| <= 0.46875
fn erf_small(x: f64) -> f64 {
    const A: [f64; 5] = [
        3.16112374387056560e0,
        1.13864154151050156e2,
        3.77485237685302021e2,
        3.20937758913846947e3,
        1.85777706184603153e-1,
    ];
    const B: [f64; 4] = [
        2.36012909523441209e1,
        2.44024637934444173e2,
        1.28261652607737228e3,
        2.84423683343917062e3,
    ];
    let y = x * x;
    let mut num = A[4] * y;
    let mut den = y;
    for i in 0..3 {
        num = (num + A[i]) * y;
        den = (den + B[i]) * y;
    }
    x * (num + A[3]) / (den + B[3])
}

// exp(x^2)*erfc(x) for x > 0.46875
fn erfc_scaled_pos(x: f64) -> f64 {
    if x <= 4.0 {
        const C: [f64; 9] = [
            5.64188496988670089e-1,
            8.88314979438837594e0,
            6.61191906371416295e1,
            2.98635138197400131e2,
            8.81952221241769090e2,
            1.71204761263407058e3,
            2.05107837782607147e3,
            1.23033935479799725e3,
            2.15311535474403846e-8,
        ];
        const D: [f64; 8] = [
            1.57449261107098347e1,
            1.17693950891312499e2,
            5.37181101862009858e2,
            1.62138957456669019e3,
            3.29079923573345963e3,
            4.36261909014324716e3,
            3.43936767414372164e3,
            1.23033935480374942e3,
        ];
        let mut num = C[8] * x;
        let mut den = x;
        for i in 0..7 {
            num = (num + C[i]) * x;
            den = (den + D[i]) * x;
        }
        (num + C[7]) / (den + D[7])
    } else {
        const P: [f64; 6] = [
            3.05326634961232344e-1,
            3.60344899949804439e-1,
            1.25781726111229246e-1,
            1.60837851487422766e-2,
            6.58749161529837803e-4,
            1.63153871373020978e-2,
        ];
        const Q: [f64; 5] = [
            2.56852019228982242e0,
            1.87295284992346047e0,
            5.27905102951428412e-1,
            6.05183413124413191e-2,
            2.33520497626869185e-3,
        ];
        let ysq = 1.0 / (x * x);
        let mut num = P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + P[i]) * ysq;
            den = (den + Q[i]) * ysq;
        }
        let r = ysq * (num + P[4]) / (den + Q[4]);
        (FRAC_1_SQRT_PI - r) / x
    }
}

/// Standard normal CDF.
pub fn norm_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// log of the standard normal CDF, stable for arbitrarily negative z.
pub fn ln_norm_cdf(z: f64) -> f64 {
    if z > -1.0 {
        norm_cdf(z).ln()
    } else {
        // Phi(z) = 0.5 * erfcx(-z/sqrt2) * exp(-z^2/2)
        0.5f64.ln() + erfcx(-z / std::f64::consts::SQRT_2).ln() - 0.5 * z * z
    }
}

/// Mills-type ratio phi(z)/Phi(z), evaluated on the log scale so it stays
/// finite and accurate deep in the left tail.
pub fn pdf_over_cdf(z: f64) -> f64 {
    (ln_norm_pdf(z) - ln_norm_cdf(z)).exp()
}

/// Inverse standard normal CDF (Acklam's rational approximation plus one
/// Halley refinement; ~1e-15 relative error).
pub fn inv_norm_cdf(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "inv_norm_cdf requires p in (0,1), got {p}");
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    };
    // Halley refinement; the residual is formed in the smaller tail so it
    // does not cancel for p near 0 or 1
    let e = if p <= 0.5 {
        0.5 * erfc(-x / std::f64::consts::SQRT_2) - p
    } else {
        (1.0 - p) - 0.5 * erfc(x / std::f64::consts::SQRT_2)
    };
    let u = e * (2.0 * PI).sqrt() * (x * x / 2.0).exp();
    if u.is_finite() {
        x - u / (1.0 + x * u / 2.0)
    } else {
        x
    }
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    assert!((0.0..=1.0).contains(&q));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

pub fn quantile_of(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile(&v, q)
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Reference values computed with mpmath at 40 digits.
    #[test]
    fn erfc_matches_reference() {
        let cases = [
            (-6.0, 2.0),
            (-3.5, 1.9999992569016276),
            (-1.0, 1.8427007929497148),
            (-0.25, 1.276326390168237),
            (0.0, 1.0),
            (0.3, 0.6713732405408726),
            (0.46875, 0.507386526782062),
            (1.0, 0.15729920705028513),
            (2.5, 0.0004069520174449589),
            (4.0, 1.541725790028002e-08),
            (5.5, 7.357847917974398e-15),
            (10.0, 2.088487583762545e-45),
            (20.0, 5.395865611607901e-176),
            (26.0, 5.663192408856143e-296),
        ];
        for (x, want) in cases {
            assert_relative_eq!(erfc(x), want, max_relative = 1e-13);
        }
    }

    #[test]
    fn erfcx_matches_reference() {
        let cases = [
            (0.0, 1.0),
            (0.3, 0.7345993345676551),
            (1.0, 0.427583576155807),
            (2.5, 0.2108063640611436),
            (4.0, 0.13699945762506138),
            (8.0, 0.06998516620088092),
            (15.0, 0.03752960638850576),
            (28.3, 0.019923604754448317),
            (100.0, 0.005641613782989433),
        ];
        for (x, want) in cases {
            assert_relative_eq!(erfcx(x), want, max_relative = 1e-13);
        }
    }

    #[test]
    fn ln_norm_cdf_matches_reference() {
        let cases = [
            (-40.0, -804.6084420137538),
            (-20.0, -203.91715537109727),
            (-8.0, -35.01343715991455),
            (-3.0, -6.607726221510349),
            (-1.0, -1.8410216450092636),
            (0.0, -0.6931471805599453),
            (1.5, -0.06914345561223398),
            (6.0, -9.865876455243758e-10),
        ];
        for (z, want) in cases {
            assert_relative_eq!(ln_norm_cdf(z), want, max_relative = 1e-12);
        }
    }

    #[test]
    fn inv_norm_cdf_matches_reference() {
        let cases = [
            (1e-12, -7.034483825301131),
            (1e-06, -4.753424308822899),
            (0.025, -1.9599639845400545),
            (0.25, -0.6744897501960817),
            (0.5, 0.0),
            (0.841344746068543, 1.0),
            (0.975, 1.959963984540054),
            (0.9999999999, 6.361340889697422),
        ];
        for (p, want) in cases {
            if want == 0.0 {
                assert!(inv_norm_cdf(p).abs() < 1e-15);
            } else {
                assert_relative_eq!(inv_norm_cdf(p), want, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn pdf_over_cdf_matches_reference() {
        let cases = [
            (-40.0, 40.02496884720726),
            (-12.0, 12.082214175254284),
            (-8.0, 8.121368112236112),
            (-2.0, 2.373215532822841),
            (0.0, 0.7978845608028654),
            (3.0, 0.004437839042125664),
        ];
        for (z, want) in cases {
            assert_relative_eq!(pdf_over_cdf(z), want, max_relative = 1e-12);
        }
    }

    #[test]
    fn logistic_basics() {
        assert_relative_eq!(logistic(0.0), 0.5);
        assert_relative_eq!(logistic(-0.5), 0.3775406687981454, max_relative = 1e-15);
        assert!(logistic(-800.0) >= 0.0);
        assert!(logistic(800.0) <= 1.0);
        assert_relative_eq!(logit(logistic(1.7)), 1.7, max_relative = 1e-12);
    }

    #[test]
    fn log1pexp_stable() {
        assert_relative_eq!(log1pexp(0.0), 2f64.ln());
        assert_relative_eq!(log1pexp(50.0), 50.0, max_relative = 1e-15);
        assert!(log1pexp(-800.0) >= 0.0);
        // matches direct evaluation in the safe range
        for x in [-20.0, -3.0, 0.7, 12.0] {
            assert_relative_eq!(log1pexp(x), (1.0 + x.exp()).ln(), max_relative = 1e-12);
        }
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(quantile(&v, 0.0), 1.0);
        assert_relative_eq!(quantile(&v, 1.0), 4.0);
        assert_relative_eq!(quantile(&v, 0.5), 2.5);
    }
}
