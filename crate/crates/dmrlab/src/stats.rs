//! Fixed-order reductions and small statistical helpers.
//!
//! Every ensemble mean in the crate goes through [`pairwise_sum`], whose
//! reduction tree depends only on the slice length. Outputs are therefore
//! bit-identical regardless of thread count or iteration schedule.

/// Pairwise (cascade) summation with a fixed tree shape.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Mean of `f(x)` over the slice, materialized so the reduction order is fixed.
pub fn mean_map<F: Fn(f64) -> f64>(xs: &[f64], f: F) -> f64 {
    let mapped: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    mean(&mapped)
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|&x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (xs.len() as f64 - 1.0)
}

/// Standard error of the sample mean.
pub fn standard_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Least-squares slope of y against x.
pub fn slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let mx = mean(x);
    let my = mean(y);
    let num: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(&xi, &yi)| (xi - mx) * (yi - my))
        .collect();
    let den: Vec<f64> = x.iter().map(|&xi| (xi - mx) * (xi - mx)).collect();
    pairwise_sum(&num) / pairwise_sum(&den)
}

/// Standard normal density.
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

// Rational Chebyshev coefficients for erf/erfc (Cody's CALERF), accurate to
// about 1e-16 relative in double precision.
const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
const ERF_C: [f64; 9] = [
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
const ERF_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
const ERF_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERF_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];
const ONE_OVER_SQRT_PI: f64 = 5.641_895_835_477_562_9e-1;

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    let ax = x.abs();
    let result = if ax <= 0.46875 {
        let z = x * x;
        let mut num = ERF_A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + ERF_A[i]) * z;
            den = (den + ERF_B[i]) * z;
        }
        let erf = x * (num + ERF_A[3]) / (den + ERF_B[3]);
        return 1.0 - erf;
    } else if ax <= 4.0 {
        let mut num = ERF_C[8] * ax;
        let mut den = ax;
        for i in 0..7 {
            num = (num + ERF_C[i]) * ax;
            den = (den + ERF_D[i]) * ax;
        }
        exp_neg_sq(ax) * (num + ERF_C[7]) / (den + ERF_D[7])
    } else {
        let z = 1.0 / (ax * ax);
        let mut num = ERF_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERF_P[i]) * z;
            den = (den + ERF_Q[i]) * z;
        }
        let r = z * (num + ERF_P[4]) / (den + ERF_Q[4]);
        exp_neg_sq(ax) * (ONE_OVER_SQRT_PI - r) / ax
    };
    if x < 0.0 {
        2.0 - result
    } else {
        result
    }
}

// exp(-x^2) split to limit cancellation in the argument, per CALERF.
fn exp_neg_sq(x: f64) -> f64 {
    let y = (x * 16.0).trunc() / 16.0;
    let del = (x - y) * (x + y);
    (-y * y).exp() * (-del).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_naive_on_small_input() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let naive: f64 = xs.iter().sum();
        assert!((pairwise_sum(&xs) - naive).abs() < 1e-12);
    }

    #[test]
    fn pairwise_is_length_deterministic() {
        let xs: Vec<f64> = (0..12345).map(|i| 1.0 / (1.0 + i as f64)).collect();
        assert_eq!(pairwise_sum(&xs).to_bits(), pairwise_sum(&xs).to_bits());
    }

    #[test]
    fn slope_recovers_line() {
        let x: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|&xi| 3.0 - 2.0 * xi).collect();
        assert!((slope(&x, &y) + 2.0).abs() < 1e-12);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.0) - 0.8413447460685429).abs() < 1e-14);
        assert!((normal_pdf(1.0) - 0.24197072451914337).abs() < 1e-15);
    }

    #[test]
    fn erfc_matches_high_precision_references() {
        // Reference values computed at 30 decimal digits.
        let refs: [(f64, f64); 14] = [
            (-3.5, 1.9999992569016276),
            (-1.0, 1.8427007929497148),
            (-0.25, 1.276326390168237),
            (0.0, 1.0),
            (0.1, 0.8875370839817152),
            (0.46875, 0.507386526782062),
            (0.5, 0.4795001221869535),
            (1.0, 0.15729920705028513),
            (2.0, 0.004677734981047266),
            (3.5, 7.430983723414128e-07),
            (4.5, 1.9661604415428876e-10),
            (6.0, 2.1519736712498913e-17),
            (10.0, 2.088487583762545e-45),
            (26.5, 2.2109076642637343e-307),
        ];
        for (x, want) in refs {
            let got = erfc(x);
            let rel = ((got - want) / want).abs();
            assert!(rel < 1e-13, "erfc({x}) = {got:e}, want {want:e}, rel {rel:e}");
        }
    }
}
