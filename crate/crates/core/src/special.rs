//! Quadrature and special-function primitives: Gauss-Legendre rules,
//! Legendre polynomials at real and complex arguments, Bessel functions
//! J_m and Y_m and the Hankel function H^(1)_m at real positive arguments.
//!
//! Everything here is self-contained; recurrences and series follow the
//! standard forms in DLMF chapters 10 and 14.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use crate::{Complex, Error, Result};

/// Largest Gauss-Legendre rule size that can be requested.
pub const MAX_RULE_SIZE: usize = 128;

/// Largest order accepted by the Bessel/Hankel routines.
pub const MAX_BESSEL_ORDER: usize = 200;

/// An n-point Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Number of nodes.
    pub order: usize,
    /// Nodes, strictly increasing and symmetric about 0.
    pub nodes: Vec<f64>,
    /// Positive weights summing to 2.
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Apply the rule to `f` on [-1, 1].
    pub fn integrate<F: FnMut(f64) -> Complex>(&self, mut f: F) -> Complex {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| f(x) * w)
            .sum()
    }
}

/// Compute the n-point Gauss-Legendre rule by Newton iteration on the roots
/// of P_n, starting from Chebyshev-type initial guesses.
pub fn gauss_legendre(n: usize) -> Result<QuadratureRule> {
    if n == 0 || n > MAX_RULE_SIZE {
        return Err(Error::Domain(format!(
            "Gauss-Legendre rule size {n} outside 1..={MAX_RULE_SIZE}"
        )));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    // Roots come in symmetric pairs; solve for the non-negative half and mirror.
    for i in 0..(n + 1) / 2 {
        // Guess for the i-th largest root.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_value_deriv(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                let (p2, d2) = legendre_value_deriv(n, x);
                x -= p2 / d2;
                dp = legendre_value_deriv(n, x).1;
                break;
            }
        }
        if n % 2 == 1 && i == (n - 1) / 2 {
            x = 0.0;
            dp = legendre_value_deriv(n, x).1;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[n - 1 - i] = x;
        nodes[i] = -x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    Ok(QuadratureRule {
        order: n,
        nodes,
        weights,
    })
}

/// Shared, cached Gauss-Legendre rules: rules are immutable after first
/// construction, so handing out `Arc`s is safe for concurrent readers.
pub fn gauss_legendre_cached(n: usize) -> Result<Arc<QuadratureRule>> {
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<QuadratureRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(rule) = cache.read().unwrap().get(&n) {
        return Ok(rule.clone());
    }
    let rule = Arc::new(gauss_legendre(n)?);
    let mut map = cache.write().unwrap();
    Ok(map.entry(n).or_insert(rule).clone())
}

/// P_n(x) and P_n'(x) at real x via the three-term recurrence.
fn legendre_value_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for l in 1..n {
        let p2 = ((2 * l + 1) as f64 * x * p1 - l as f64 * p0) / (l + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    // P_n'(x) from the derivative identity; at x = +-1 fall back to the
    // closed form n(n+1)/2 * (+-1)^(n+1).
    let denom = 1.0 - x * x;
    let d = if denom.abs() > 1e-300 {
        n as f64 * (p0 - x * p1) / denom
    } else {
        let sign = if x > 0.0 { 1.0 } else { (-1.0f64).powi(n as i32 + 1) };
        sign * n as f64 * (n as f64 + 1.0) / 2.0
    };
    (p1, d)
}

/// P_0(t)..P_lmax(t) at complex t via the standard recurrence
/// (l+1) P_{l+1} = (2l+1) t P_l - l P_{l-1}, valid for complex argument.
pub fn legendre_sequence(t: Complex, lmax: usize) -> Vec<Complex> {
    let mut p = Vec::with_capacity(lmax + 1);
    p.push(Complex::new(1.0, 0.0));
    if lmax == 0 {
        return p;
    }
    p.push(t);
    for l in 1..lmax {
        let next = ((2 * l + 1) as f64 * t * p[l] - l as f64 * p[l - 1]) / (l + 1) as f64;
        p.push(next);
    }
    p
}

/// Values and derivatives P_l(t), P_l'(t) for l = 0..lmax at complex t,
/// using P'_{l+1} = P'_{l-1} + (2l+1) P_l, which is stable for all t.
pub fn legendre_sequence_with_deriv(t: Complex, lmax: usize) -> (Vec<Complex>, Vec<Complex>) {
    let p = legendre_sequence(t, lmax);
    let mut dp = Vec::with_capacity(lmax + 1);
    dp.push(Complex::new(0.0, 0.0));
    if lmax >= 1 {
        dp.push(Complex::new(1.0, 0.0));
    }
    for l in 2..=lmax {
        let next = dp[l - 2] + (2 * (l - 1) + 1) as f64 * p[l - 1];
        dp.push(next);
    }
    (p, dp)
}

/// Real-argument Legendre values P_0(x)..P_lmax(x).
pub fn legendre_sequence_real(x: f64, lmax: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(lmax + 1);
    p.push(1.0);
    if lmax == 0 {
        return p;
    }
    p.push(x);
    for l in 1..lmax {
        let next = ((2 * l + 1) as f64 * x * p[l] - l as f64 * p[l - 1]) / (l + 1) as f64;
        p.push(next);
    }
    p
}

/// Row-major projection matrix L with L[l*n + m] = (2l+1)/2 * P_l(x_m) w_m,
/// mapping samples at the rule's nodes to Legendre modal coefficients.
pub fn legendre_projection_matrix(rule: &QuadratureRule) -> Vec<f64> {
    let n = rule.order;
    let mut l_mat = vec![0.0; n * n];
    for (m, (&x, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
        let p = legendre_sequence_real(x, n - 1);
        for (l, &pl) in p.iter().enumerate() {
            l_mat[l * n + m] = (2 * l + 1) as f64 / 2.0 * pl * w;
        }
    }
    l_mat
}

/// Cached variant of [`legendre_projection_matrix`] keyed by rule size.
pub fn legendre_projection_matrix_cached(n: usize) -> Result<Arc<Vec<f64>>> {
    static CACHE: OnceLock<RwLock<HashMap<usize, Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(m) = cache.read().unwrap().get(&n) {
        return Ok(m.clone());
    }
    let rule = gauss_legendre_cached(n)?;
    let mat = Arc::new(legendre_projection_matrix(&rule));
    let mut map = cache.write().unwrap();
    Ok(map.entry(n).or_insert(mat).clone())
}

/// m! in floating point, tabulated once; valid through m = 170.
pub fn factorial(m: usize) -> f64 {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(171);
        t.push(1.0);
        for k in 1..=170usize {
            let prev = t[k - 1];
            t.push(prev * k as f64);
        }
        t
    });
    table.get(m).copied().unwrap_or(f64::INFINITY)
}

/// J_m(x) for integer m >= 0 and x >= 0.
///
/// Small arguments (relative to the order) use the ascending power series;
/// otherwise the value comes from the normalized downward (Miller)
/// recurrence, which is uniformly stable for m <= 200, x <= 200.
pub fn bessel_j(m: usize, x: f64) -> f64 {
    assert!(x >= 0.0, "bessel_j requires x >= 0");
    assert!(m <= MAX_BESSEL_ORDER, "bessel_j order above {MAX_BESSEL_ORDER}");
    if x == 0.0 {
        return if m == 0 { 1.0 } else { 0.0 };
    }
    if x <= 0.5 * (m as f64 + 1.0) && x <= 8.0 {
        return bessel_j_series(m, x);
    }
    bessel_j_sequence(m, x)[m]
}

/// Ascending series for J_m, accurate when x/(m+1) is small.
fn bessel_j_series(m: usize, x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        term *= q / (k as f64 * (m + k) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    // (x/2)^m / m! without over/underflow for m <= 200, x <= 200.
    let mut prefac = 1.0;
    for k in 1..=m {
        prefac *= 0.5 * x / k as f64;
    }
    prefac * sum
}

/// J_0(x)..J_mmax(x) via downward recurrence with normalization
/// J_0 + 2 sum_k J_{2k} = 1.
pub fn bessel_j_sequence(mmax: usize, x: f64) -> Vec<f64> {
    assert!(x >= 0.0, "bessel_j_sequence requires x >= 0");
    if x == 0.0 {
        let mut out = vec![0.0; mmax + 1];
        out[0] = 1.0;
        return out;
    }
    let q = mmax.max(x.ceil() as usize);
    let mut start = q + (160.0 * (q as f64 + 1.0)).sqrt() as usize + 16;
    if start % 2 == 1 {
        start += 1;
    }
    let mut out = vec![0.0; mmax + 1];
    let mut fkp1 = 0.0_f64;
    let mut fk = 1e-300_f64;
    let mut norm = 0.0_f64;
    for k in (0..start).rev() {
        let fkm1 = (2.0 * (k + 1) as f64 / x) * fk - fkp1;
        fkp1 = fk;
        fk = fkm1;
        if k % 2 == 0 {
            norm += if k == 0 { fk } else { 2.0 * fk };
        }
        if k <= mmax {
            out[k] = fk;
        }
        if fk.abs() > 1e250 {
            fk *= 1e-250;
            fkp1 *= 1e-250;
            norm *= 1e-250;
            for v in out.iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// Y_0(x)..Y_mmax(x); series or large-argument expansion for Y_0, Y_1,
/// then the (upward-stable) recurrence Y_{m+1} = (2m/x) Y_m - Y_{m-1}.
pub fn bessel_y_sequence(mmax: usize, x: f64) -> Result<Vec<f64>> {
    if x <= 0.0 {
        return Err(Error::Domain(format!(
            "Y_m is singular at x = 0 and undefined for x = {x} <= 0"
        )));
    }
    let (y0, y1) = if x <= 12.0 {
        bessel_y01_series(x)
    } else {
        (bessel_asymptotic(0, x).1, bessel_asymptotic(1, x).1)
    };
    let mut out = Vec::with_capacity(mmax + 1);
    out.push(y0);
    if mmax >= 1 {
        out.push(y1);
    }
    for m in 1..mmax {
        let next = (2.0 * m as f64 / x) * out[m] - out[m - 1];
        out.push(next);
    }
    Ok(out)
}

/// Y_0 and Y_1 from the ascending series (DLMF 10.8.1).
fn bessel_y01_series(x: f64) -> (f64, f64) {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let two_over_pi = std::f64::consts::FRAC_2_PI;
    let j0 = bessel_j_sequence(1, x)[0];
    let j1 = bessel_j_sequence(1, x)[1];
    let lg = (0.5 * x).ln() + EULER_GAMMA;

    // Y_0 = (2/pi) [ (ln(x/2)+gamma) J_0 + sum_{k>=1} (-1)^{k+1} H_k (x^2/4)^k / (k!)^2 ]
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut hk = 0.0;
    let mut sum0 = 0.0;
    for k in 1..80 {
        term *= q / (k as f64 * k as f64);
        hk += 1.0 / k as f64;
        let contrib = if k % 2 == 1 { term * hk } else { -term * hk };
        sum0 += contrib;
        if term * hk < 1e-18 * (1.0 + sum0.abs()) {
            break;
        }
    }
    let y0 = two_over_pi * (lg * j0 + sum0);

    // Y_1 = (2/pi)(ln(x/2)+gamma) J_1 - 2/(pi x)
    //       - (x/(2 pi)) sum_{k>=0} (H_k + H_{k+1}) (-x^2/4)^k / (k! (k+1)!)
    let mut term = 1.0; // (-q)^k / (k!(k+1)!)
    let mut hk = 0.0;
    let mut hk1 = 1.0;
    let mut sum1 = term * (hk + hk1);
    for k in 1..80 {
        term *= -q / (k as f64 * (k + 1) as f64);
        hk += 1.0 / k as f64;
        hk1 += 1.0 / (k + 1) as f64;
        sum1 += term * (hk + hk1);
        if term.abs() * (hk + hk1) < 1e-18 * (1.0 + sum1.abs()) {
            break;
        }
    }
    let y1 = two_over_pi * lg * j1 - two_over_pi / x - x / (2.0 * std::f64::consts::PI) * sum1;
    (y0, y1)
}

/// Large-argument expansions (DLMF 10.17): returns (J_nu, Y_nu) for nu = 0, 1.
fn bessel_asymptotic(nu: usize, x: f64) -> (f64, f64) {
    let mu = 4.0 * (nu * nu) as f64;
    let mut a = 1.0_f64; // a_k(nu)
    let mut p = 1.0_f64;
    let mut q = 0.0_f64;
    let mut xk = 1.0_f64; // x^k
    let mut last = f64::INFINITY;
    for k in 1..40 {
        a *= (mu - ((2 * k - 1) * (2 * k - 1)) as f64) / (8.0 * k as f64);
        xk *= x;
        let term = a / xk;
        if term.abs() > last {
            break;
        }
        last = term.abs();
        let signed = if (k / 2) % 2 == 0 { term } else { -term };
        if k % 2 == 1 {
            q += signed;
        } else {
            p += signed;
        }
        if term.abs() < 1e-18 {
            break;
        }
    }
    let omega = x - (2.0 * nu as f64 + 1.0) * std::f64::consts::FRAC_PI_4;
    let amp = (2.0 / (std::f64::consts::PI * x)).sqrt();
    let (s, c) = omega.sin_cos();
    (amp * (p * c - q * s), amp * (p * s + q * c))
}

/// H^(1)_m(x) = J_m(x) + i Y_m(x) for x > 0.
pub fn hankel1(m: usize, x: f64) -> Result<Complex> {
    Ok(hankel1_sequence(m, x)?[m])
}

/// H^(1)_0(x)..H^(1)_mmax(x) for x > 0.
pub fn hankel1_sequence(mmax: usize, x: f64) -> Result<Vec<Complex>> {
    if x <= 0.0 {
        return Err(Error::Domain(format!(
            "Hankel function requires x > 0, got {x}"
        )));
    }
    let j = bessel_j_sequence(mmax, x);
    let y = bessel_y_sequence(mmax, x)?;
    Ok(j
        .into_iter()
        .zip(y)
        .map(|(jj, yy)| Complex::new(jj, yy))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rule_size_one_and_two() {
        let r1 = gauss_legendre(1).unwrap();
        assert_eq!(r1.nodes, vec![0.0]);
        assert_relative_eq!(r1.weights[0], 2.0, max_relative = 1e-15);
        let r2 = gauss_legendre(2).unwrap();
        assert_relative_eq!(r2.nodes[1], 1.0 / 3.0_f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(r2.nodes[0], -r2.nodes[1], max_relative = 1e-15);
        assert_relative_eq!(r2.weights[0], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn rule_invariants() {
        for n in [3, 7, 16, 32, 128] {
            let r = gauss_legendre(n).unwrap();
            assert!((r.weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
            for i in 0..n {
                assert!(r.weights[i] > 0.0);
                assert!(r.nodes[i].abs() < 1.0);
                if i > 0 {
                    assert!(r.nodes[i] > r.nodes[i - 1]);
                }
                assert_eq!(r.nodes[i], -r.nodes[n - 1 - i]);
                assert_eq!(r.weights[i], r.weights[n - 1 - i]);
            }
        }
    }

    #[test]
    fn rule_exact_for_monomials() {
        for n in [4usize, 16, 32] {
            let r = gauss_legendre(n).unwrap();
            for j in 0..=(2 * n - 1) {
                let got: f64 = r
                    .nodes
                    .iter()
                    .zip(&r.weights)
                    .map(|(&x, &w)| w * x.powi(j as i32))
                    .sum();
                let exact = if j % 2 == 0 { 2.0 / (j as f64 + 1.0) } else { 0.0 };
                assert!(
                    (got - exact).abs() < 1e-13,
                    "n={n} j={j} got={got} exact={exact}"
                );
            }
        }
    }

    #[test]
    fn sixteen_point_second_moment() {
        let r = gauss_legendre(16).unwrap();
        let got: f64 = r.nodes.iter().zip(&r.weights).map(|(&x, &w)| w * x * x).sum();
        assert!((got - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn rule_size_out_of_range() {
        assert!(gauss_legendre(0).is_err());
        assert!(gauss_legendre(129).is_err());
    }

    #[test]
    fn legendre_small_values() {
        let p = legendre_sequence(Complex::new(0.5, 0.0), 2);
        assert_relative_eq!(p[0].re, 1.0);
        assert_relative_eq!(p[1].re, 0.5);
        assert_relative_eq!(p[2].re, -0.125);
        let pi = legendre_sequence(Complex::new(0.0, 1.0), 2);
        assert_relative_eq!(pi[1].im, 1.0);
        assert_relative_eq!(pi[2].re, -2.0);
        assert!(pi[2].im.abs() < 1e-15);
    }

    #[test]
    fn legendre_at_one_is_all_ones() {
        let p = legendre_sequence(Complex::new(1.0, 0.0), 20);
        for v in p {
            assert_relative_eq!(v.re, 1.0, max_relative = 1e-13);
            assert!(v.im.abs() < 1e-14);
        }
    }

    #[test]
    fn legendre_bounded_on_interval() {
        for i in 0..50 {
            let x = -1.0 + 2.0 * i as f64 / 49.0;
            for v in legendre_sequence(Complex::new(x, 0.0), 40) {
                assert!(v.norm() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn legendre_derivative_matches_finite_difference() {
        let t = Complex::new(0.3, 0.2);
        let h = 1e-6;
        let (_, dp) = legendre_sequence_with_deriv(t, 12);
        let plus = legendre_sequence(t + h, 12);
        let minus = legendre_sequence(t - h, 12);
        for l in 0..=12 {
            let fd = (plus[l] - minus[l]) / (2.0 * h);
            assert!((dp[l] - fd).norm() < 1e-7 * (1.0 + dp[l].norm()));
        }
    }

    /// 50-term ascending series, independent of the production path.
    fn j_series_oracle(m: usize, x: f64) -> f64 {
        let mut pre = 1.0;
        for k in 1..=m {
            pre *= 0.5 * x / k as f64;
        }
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..50 {
            term *= -0.25 * x * x / (k as f64 * (m + k) as f64);
            sum += term;
        }
        pre * sum
    }

    #[test]
    fn bessel_j_at_zero() {
        assert_eq!(bessel_j(0, 0.0), 1.0);
        for m in 1..10 {
            assert_eq!(bessel_j(m, 0.0), 0.0);
        }
    }

    #[test]
    fn bessel_j_against_series_oracle() {
        // Frozen from the oracle: J_1(1) and the first zero of J_0.
        assert!((bessel_j(1, 1.0) - 0.4400505857449335).abs() < 1e-14);
        assert!(bessel_j(0, 2.404825557695773).abs() < 1e-12);
        for m in [0usize, 1, 2, 5, 9] {
            for x in [0.05, 0.7, 2.3, 6.1, 11.0] {
                let want = j_series_oracle(m, x);
                assert!(
                    (bessel_j(m, x) - want).abs() < 1e-12 * (1.0 + want.abs()),
                    "m={m} x={x}"
                );
            }
        }
    }

    #[test]
    fn bessel_j_three_term_recurrence() {
        for m in 1..30usize {
            for x in [0.4, 3.7, 17.0, 90.0] {
                let j = bessel_j_sequence(m + 1, x);
                let lhs = j[m - 1] + j[m + 1];
                let rhs = 2.0 * m as f64 / x * j[m];
                assert!((lhs - rhs).abs() < 1e-10 * (1.0 + j[m].abs().max(lhs.abs())));
            }
        }
    }

    #[test]
    fn hankel_reference_value() {
        let h = hankel1(0, 1.0).unwrap();
        assert!((h.re - 0.7651976865579666).abs() < 1e-12);
        assert!((h.im - 0.0882569642156770).abs() < 1e-12);
    }

    #[test]
    fn hankel_rejects_nonpositive_argument() {
        assert!(hankel1(0, 0.0).is_err());
        assert!(hankel1(3, -1.0).is_err());
    }

    #[test]
    fn wronskian_identity() {
        // J_{m+1} Y_m - J_m Y_{m+1} = 2/(pi x)
        for m in [0usize, 1, 2, 5, 12, 30] {
            for x in [0.1, 0.9, 4.2, 13.0, 50.0] {
                let j = bessel_j_sequence(m + 1, x);
                let y = bessel_y_sequence(m + 1, x).unwrap();
                let w = j[m + 1] * y[m] - j[m] * y[m + 1];
                let exact = 2.0 / (std::f64::consts::PI * x);
                assert!(
                    (w - exact).abs() < 1e-10 * exact.abs().max(1.0),
                    "m={m} x={x} w={w} exact={exact}"
                );
            }
        }
    }

    #[test]
    fn hankel_small_argument_leading_order() {
        // H^(1)_2(x) ~ -i (2^2 1!/pi) x^-2 for small x; the real part (J_2)
        // is negligible at x = 0.01.
        let h = hankel1(2, 0.01).unwrap();
        let lead = -(4.0 / std::f64::consts::PI) * 1e4;
        assert!((h.im - lead).abs() < 0.01 * lead.abs());
        assert!(h.re.abs() < 1e-4 * h.im.abs());
    }

    #[test]
    fn asymptotic_and_series_branches_agree() {
        // Both Y_0/Y_1 branches should agree near the switch point.
        for x in [11.2, 11.9, 12.1, 13.5] {
            let s = bessel_y01_series(x);
            let a = (bessel_asymptotic(0, x).1, bessel_asymptotic(1, x).1);
            assert!((s.0 - a.0).abs() < 2e-11 * (1.0 + s.0.abs()), "Y0 x={x}");
            assert!((s.1 - a.1).abs() < 2e-11 * (1.0 + s.1.abs()), "Y1 x={x}");
        }
    }

    #[test]
    fn factorial_table() {
        assert_eq!(factorial(0), 1.0);
        assert_eq!(factorial(5), 120.0);
        assert_relative_eq!(factorial(60), 8.32098711274139e81, max_relative = 1e-12);
    }
}
