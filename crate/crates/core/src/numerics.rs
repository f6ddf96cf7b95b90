//! Small numerical kernels: compensated summation, central-difference
//! stencils, Gauss–Legendre rules and periodic spectral differentiation.

use std::f64::consts::PI;

/// Neumaier-compensated sum over a fixed iteration order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// Weighted compensated sum `Σ w_i v_i`.
pub fn weighted_sum(weights: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), values.len());
    compensated_sum(weights.iter().zip(values).map(|(w, v)| w * v))
}

/// Eighth-order central stencil for the first derivative:
/// offsets ±1..±4, antisymmetric weights.
pub const FIRST_DERIV_8: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];

/// Eighth-order central stencil for the second derivative: centre weight
/// followed by the symmetric weights at offsets ±1..±4.
pub const SECOND_DERIV_8_CENTER: f64 = -205.0 / 72.0;
pub const SECOND_DERIV_8: [f64; 4] = [8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0];

/// First derivative of a scalar function of one variable by the
/// eighth-order central stencil.
pub fn deriv1<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    let mut acc = 0.0;
    for (p, c) in FIRST_DERIV_8.iter().enumerate() {
        let s = (p + 1) as f64 * h;
        acc += c * (f(x + s) - f(x - s));
    }
    acc / h
}

/// Second derivative of a scalar function of one variable by the
/// eighth-order central stencil.
pub fn deriv2<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    let mut acc = SECOND_DERIV_8_CENTER * f(x);
    for (p, c) in SECOND_DERIV_8.iter().enumerate() {
        let s = (p + 1) as f64 * h;
        acc += c * (f(x + s) + f(x - s));
    }
    acc / (h * h)
}

/// Gauss–Legendre nodes and weights on [-1, 1], ascending nodes.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Fourier differentiation matrix for `n` equispaced nodes on a period of
/// `2π` (row-major, `n × n`). Even `n` uses the cotangent formula, odd `n`
/// the cosecant formula.
pub fn periodic_diff_matrix(n: usize) -> Vec<f64> {
    let h = 2.0 * PI / n as f64;
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let k = i as isize - j as isize;
            let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            let arg = k as f64 * h / 2.0;
            d[i * n + j] = if n % 2 == 0 {
                0.5 * sign / arg.tan()
            } else {
                0.5 * sign / arg.sin()
            };
        }
    }
    d
}

/// Value at `x` of the trigonometric interpolant through equispaced samples
/// `values[j]` at `2πj/n`.
pub fn periodic_interpolate(values: &[f64], x: f64) -> f64 {
    let n = values.len();
    let h = 2.0 * PI / n as f64;
    let mut acc = 0.0;
    for (j, v) in values.iter().enumerate() {
        acc += v * periodic_cardinal(n, x - j as f64 * h);
    }
    acc
}

/// Cardinal function of the equispaced trigonometric interpolant.
pub fn periodic_cardinal(n: usize, t: f64) -> f64 {
    let half = 0.5 * t;
    let s = half.sin();
    if s.abs() < 1e-14 {
        // t is a multiple of 2π (or within roundoff of it).
        let k = (t / (2.0 * PI)).round();
        return if (t - 2.0 * PI * k).abs() < 1e-12 {
            1.0
        } else {
            0.0
        };
    }
    let nf = n as f64;
    if n % 2 == 0 {
        (nf * half).sin() * half.cos() / (nf * s)
    } else {
        (nf * half).sin() / (nf * s)
    }
}

/// Wrap an angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let w = a.rem_euclid(two_pi);
    if w >= two_pi {
        0.0
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        let sum: f64 = w.iter().sum();
        assert!((sum - 2.0).abs() < 1e-14);
        // ∫ x^18 dx over [-1,1] = 2/19, degree 2n-2 exact
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(18)).sum();
        assert!((v - 2.0 / 19.0).abs() < 1e-14);
        assert!(x.windows(2).all(|p| p[0] < p[1]));
    }

    #[test]
    fn stencils_are_high_order() {
        let d1 = deriv1(|t: f64| t.sin(), 0.3, 1e-2);
        assert!((d1 - 0.3f64.cos()).abs() < 1e-13);
        let d2 = deriv2(|t: f64| t.sin(), 0.3, 1e-2);
        assert!((d2 + 0.3f64.sin()).abs() < 1e-10);
    }

    #[test]
    fn spectral_derivative_of_trig_polynomial() {
        for n in [8usize, 9] {
            let d = periodic_diff_matrix(n);
            let xs: Vec<f64> = (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect();
            let f: Vec<f64> = xs.iter().map(|x| (2.0 * x).sin() + x.cos()).collect();
            for i in 0..n {
                let df: f64 = (0..n).map(|j| d[i * n + j] * f[j]).sum();
                let exact = 2.0 * (2.0 * xs[i]).cos() - xs[i].sin();
                assert!((df - exact).abs() < 1e-12, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn interpolant_reproduces_band_limited_function() {
        let n = 12;
        let vals: Vec<f64> = (0..n)
            .map(|j| {
                let x = 2.0 * PI * j as f64 / n as f64;
                (3.0 * x).cos() + 0.5 * x.sin()
            })
            .collect();
        let x: f64 = 1.2345;
        let exact = (3.0 * x).cos() + 0.5 * x.sin();
        assert!((periodic_interpolate(&vals, x) - exact).abs() < 1e-12);
        assert!((periodic_interpolate(&vals, 2.0 * PI * 5.0 / 12.0) - vals[5]).abs() < 1e-14);
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }
}
