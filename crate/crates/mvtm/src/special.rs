//! Special functions needed by the likelihood and transport layers, generic
//! over the scalar type.
//!
//! Implemented in-crate because the usual f64-only crates cannot serve a
//! generic-scalar core. Accuracy targets are ~1e-13 relative in f64; every
//! function is cross-checked against an independent implementation in the
//! test suite.

use crate::scalar::{lit, Real};

/// Lanczos coefficients (g = 7, n = 9).
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the Gamma function, `x > 0`.
pub fn ln_gamma<T: Real>(x: T) -> T {
    let half = lit::<T>(0.5);
    if x < half {
        // Reflection: ln Γ(x) = ln(π / sin(πx)) − ln Γ(1 − x).
        let pi = T::pi();
        return (pi / (pi * x).sin()).ln() - ln_gamma(T::one() - x);
    }
    let z = x - T::one();
    let base = z + lit(7.5);
    let mut sum = lit::<T>(LANCZOS[0]);
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        sum += lit::<T>(c) / (z + lit(i as f64));
    }
    lit::<T>(0.918_938_533_204_672_7) // 0.5 ln(2π)
        + (z + half) * base.ln()
        - base
        + sum.ln()
}

/// `ln Γ(a + 1/2) − ln Γ(a)`, computed stably for all `a > 0`.
///
/// The naive difference loses all precision for huge `a` (the two terms grow
/// like `a ln a` while the difference stays ~`ln a / 2`), so a Stirling-based
/// expansion takes over above `a = 40`.
pub fn ln_gamma_half_ratio<T: Real>(a: T) -> T {
    let half = lit::<T>(0.5);
    if a < lit(40.0) {
        return ln_gamma(a + half) - ln_gamma(a);
    }
    let ah = a + half;
    let inv2a = (lit::<T>(2.0) * a).recip();
    // Δ = ½ ln a + a ln1p(1/(2a)) − ½ − 1/(24 a (a+½)) + (1/360)(a⁻³ − (a+½)⁻³)
    half * a.ln() + a * inv2a.ln_1p() - half - (lit::<T>(24.0) * a * ah).recip()
        + lit::<T>(1.0 / 360.0) * ((a * a * a).recip() - (ah * ah * ah).recip())
}

const MAX_ITER: usize = 500;

fn eps_tol<T: Real>() -> T {
    T::default_epsilon() * lit(4.0)
}

/// Regularized lower incomplete gamma `P(a, x)`, `a > 0`, `x ≥ 0`.
pub fn reg_lower_gamma<T: Real>(a: T, x: T) -> T {
    if x <= T::zero() {
        return T::zero();
    }
    if x < a + T::one() {
        gamma_series(a, x)
    } else {
        T::one() - gamma_cf(a, x)
    }
}

/// Regularized upper incomplete gamma `Q(a, x) = 1 − P(a, x)`.
pub fn reg_upper_gamma<T: Real>(a: T, x: T) -> T {
    if x <= T::zero() {
        return T::one();
    }
    if x < a + T::one() {
        T::one() - gamma_series(a, x)
    } else {
        gamma_cf(a, x)
    }
}

fn gamma_series<T: Real>(a: T, x: T) -> T {
    let mut ap = a;
    let mut del = a.recip();
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += T::one();
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * eps_tol::<T>() {
            break;
        }
    }
    sum * (-x + a * x.ln() - ln_gamma(a)).exp()
}

/// Upper tail by modified Lentz continued fraction.
fn gamma_cf<T: Real>(a: T, x: T) -> T {
    let tiny = lit::<T>(1e-30);
    let mut b = x + T::one() - a;
    let mut c = tiny.recip();
    let mut d = b.recip();
    let mut h = d;
    for i in 1..=MAX_ITER {
        let an = -lit::<T>(i as f64) * (lit::<T>(i as f64) - a);
        b += lit(2.0);
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = d.recip();
        let del = d * c;
        h *= del;
        if (del - T::one()).abs() < eps_tol::<T>() {
            break;
        }
    }
    (-x + a * x.ln() - ln_gamma(a)).exp() * h
}

/// Regularized incomplete beta `I_x(a, b)`, `a, b > 0`, `x ∈ [0, 1]`.
pub fn reg_inc_beta<T: Real>(a: T, b: T, x: T) -> T {
    if x <= T::zero() {
        return T::zero();
    }
    if x >= T::one() {
        return T::one();
    }
    let ln_bt = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (-x).ln_1p();
    let bt = ln_bt.exp();
    if x < (a + T::one()) / (a + b + lit(2.0)) {
        bt * beta_cf(a, b, x) / a
    } else {
        T::one() - bt * beta_cf(b, a, T::one() - x) / b
    }
}

fn beta_cf<T: Real>(a: T, b: T, x: T) -> T {
    let tiny = lit::<T>(1e-30);
    let qab = a + b;
    let qap = a + T::one();
    let qam = a - T::one();
    let mut c = T::one();
    let mut d = T::one() - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = d.recip();
    let mut h = d;
    for m in 1..=MAX_ITER {
        let mf = lit::<T>(m as f64);
        let m2 = lit::<T>(2.0 * m as f64);
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = T::one() + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = T::one() + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = d.recip();
        h *= d * c;
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = T::one() + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = T::one() + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = d.recip();
        let del = d * c;
        h *= del;
        if (del - T::one()).abs() < eps_tol::<T>() {
            break;
        }
    }
    h
}

/// Standard normal CDF, accurate in both tails (via incomplete gamma).
pub fn normal_cdf<T: Real>(x: T) -> T {
    let half = lit::<T>(0.5);
    let q = reg_upper_gamma(half, x * x * half);
    if x >= T::zero() {
        T::one() - half * q
    } else {
        half * q
    }
}

/// Standard normal log density.
pub fn normal_ln_pdf<T: Real>(x: T) -> T {
    lit::<T>(-0.918_938_533_204_672_7) - lit::<T>(0.5) * x * x
}

/// Acklam's rational approximation coefficients for the normal quantile.
const ACK_A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const ACK_B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const ACK_C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const ACK_D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];

/// Standard normal quantile (inverse CDF), `p ∈ (0, 1)`.
///
/// Acklam's approximation polished with two Newton steps; ~1e-15 relative in
/// f64 away from the extreme tails.
pub fn normal_quantile<T: Real>(p: T) -> T {
    assert!(
        p > T::zero() && p < T::one(),
        "normal_quantile requires p in (0, 1)"
    );
    let p_low = lit::<T>(0.02425);
    let one = T::one();
    let mut x: T;
    if p < p_low {
        let q = (lit::<T>(-2.0) * p.ln()).sqrt();
        x = poly5(&ACK_C, q) / poly4_one(&ACK_D, q);
    } else if p > one - p_low {
        let q = (lit::<T>(-2.0) * (one - p).ln()).sqrt();
        x = -poly5(&ACK_C, q) / poly4_one(&ACK_D, q);
    } else {
        let q = p - lit(0.5);
        let r = q * q;
        x = q * poly5(&ACK_A, r) / poly4_one(&ACK_B, r);
    }
    for _ in 0..2 {
        let err = normal_cdf(x) - p;
        x -= err / normal_ln_pdf(x).exp();
    }
    x
}

fn poly5<T: Real>(c: &[f64; 6], x: T) -> T {
    let mut acc = lit::<T>(c[0]);
    for &ci in &c[1..] {
        acc = acc * x + lit(ci);
    }
    acc
}

fn poly4_one<T: Real>(c: &[f64], x: T) -> T {
    let mut acc = lit::<T>(c[0]);
    for &ci in &c[1..] {
        acc = acc * x + lit(ci);
    }
    acc * x + T::one()
}

/// Student-t CDF with `nu` degrees of freedom.
pub fn student_t_cdf<T: Real>(x: T, nu: T) -> T {
    if nu > lit(1e8) {
        // Normal-approximation expansion; relative error O(1/ν²).
        let four_nu = lit::<T>(4.0) * nu;
        let scaled = x * (T::one() - four_nu.recip())
            / (T::one() + x * x / (lit::<T>(2.0) * nu)).sqrt();
        return normal_cdf(scaled);
    }
    let xb = nu / (nu + x * x);
    let half = lit::<T>(0.5);
    let p = half * reg_inc_beta(half * nu, half, xb);
    if x > T::zero() {
        T::one() - p
    } else {
        p
    }
}

/// Log density of the standard Student-t with `nu` degrees of freedom.
///
/// Stable for arbitrarily large `nu` (degenerates to the standard normal).
pub fn student_t_ln_pdf<T: Real>(x: T, nu: T) -> T {
    let half = lit::<T>(0.5);
    ln_gamma_half_ratio(half * nu) - half * (nu * T::pi()).ln()
        - half * (nu + T::one()) * (x * x / nu).ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use statrs::distribution::ContinuousCDF;

    #[test]
    fn ln_gamma_matches_statrs() {
        for &x in &[0.1, 0.5, 1.0, 2.0, 2.0625, 2.5, 7.3, 42.0, 500.0, 1e4] {
            assert_relative_eq!(
                ln_gamma::<f64>(x),
                statrs::function::gamma::ln_gamma(x),
                max_relative = 1e-12,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn half_ratio_stable_for_huge_arguments() {
        // Crossover region: direct difference and series must agree.
        for &a in &[30.0, 39.9, 40.1, 60.0, 1000.0] {
            let direct = statrs::function::gamma::ln_gamma(a + 0.5)
                - statrs::function::gamma::ln_gamma(a);
            assert_relative_eq!(ln_gamma_half_ratio::<f64>(a), direct, max_relative = 1e-11);
        }
        // Huge a: Δ ≈ ½ ln a − 1/(8a); the naive difference would return garbage.
        let a = 1e12f64;
        let expect = 0.5 * a.ln() - 1.0 / (8.0 * a);
        assert_relative_eq!(ln_gamma_half_ratio::<f64>(a), expect, max_relative = 1e-10);
    }

    #[test]
    fn normal_cdf_matches_reference_values_and_statrs() {
        // High-precision reference values (statrs itself is only ~1e-10
        // accurate in the lower tail, so it serves as a loose cross-check).
        let pins: [(f64, f64); 7] = [
            (-8.0, 6.22096057427178387e-16),
            (-3.5, 2.32629079035525044e-4),
            (-1.0, 1.58655253931457046e-1),
            (-0.1, 4.60172162722971012e-1),
            (0.5, 6.91462461274013118e-1),
            (2.0, 9.77249868051820791e-1),
            (6.0, 9.99999999013412300e-1),
        ];
        for &(x, p) in &pins {
            assert_relative_eq!(normal_cdf::<f64>(x), p, max_relative = 5e-14);
        }
        assert_relative_eq!(normal_cdf::<f64>(0.0), 0.5, epsilon = 1e-15);
        let n = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        for &(x, _) in &pins {
            assert_relative_eq!(normal_cdf::<f64>(x), n.cdf(x), max_relative = 1e-9, epsilon = 1e-14);
        }
    }

    #[test]
    fn normal_quantile_round_trips() {
        for &p in &[1e-12, 1e-6, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-9] {
            let x = normal_quantile::<f64>(p);
            assert_relative_eq!(normal_cdf(x), p, max_relative = 1e-10, epsilon = 1e-13);
        }
    }

    #[test]
    fn t_cdf_matches_statrs() {
        for &nu in &[1.0, 4.0, 4.125, 11.0, 60.0] {
            let t = statrs::distribution::StudentsT::new(0.0, 1.0, nu).unwrap();
            for &x in &[-5.0, -1.2, 0.0, 0.4, 3.3] {
                assert_relative_eq!(
                    student_t_cdf::<f64>(x, nu),
                    t.cdf(x),
                    max_relative = 1e-10,
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn t_cdf_huge_nu_is_normal() {
        for &x in &[-3.0, -0.5, 0.0, 1.7] {
            assert_relative_eq!(
                student_t_cdf::<f64>(x, 1e12),
                normal_cdf::<f64>(x),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn t_ln_pdf_limits() {
        // ν = 4: direct formula comparison.
        let nu = 4.0f64;
        let x = 1.3f64;
        let direct = statrs::function::gamma::ln_gamma((nu + 1.0) / 2.0)
            - statrs::function::gamma::ln_gamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI).ln()
            - (nu + 1.0) / 2.0 * (1.0 + x * x / nu).ln();
        assert_relative_eq!(student_t_ln_pdf::<f64>(x, nu), direct, max_relative = 1e-12);
        // Huge ν: collapses to the standard normal within ~1/ν.
        assert_relative_eq!(
            student_t_ln_pdf::<f64>(x, 2e12),
            normal_ln_pdf::<f64>(x),
            epsilon = 1e-11
        );
    }

    #[test]
    fn inc_beta_matches_statrs() {
        for &(a, b, x) in &[(0.5, 0.5, 0.3), (2.0, 3.0, 0.7), (2.0625, 0.5, 0.92), (30.0, 0.5, 0.99)] {
            assert_relative_eq!(
                reg_inc_beta::<f64>(a, b, x),
                statrs::function::beta::beta_reg(a, b, x),
                max_relative = 1e-11
            );
        }
    }

    #[test]
    fn inc_gamma_matches_statrs() {
        for &(a, x) in &[(0.5, 0.2), (0.5, 3.0), (2.5, 1.0), (10.0, 14.0)] {
            assert_relative_eq!(
                reg_lower_gamma::<f64>(a, x),
                statrs::function::gamma::gamma_lr(a, x),
                max_relative = 1e-11
            );
        }
    }

    #[test]
    fn works_in_f32() {
        assert_relative_eq!(ln_gamma::<f32>(2.5f32), 0.284_682_8f32, max_relative = 1e-5);
        assert_relative_eq!(normal_cdf::<f32>(1.0f32), 0.841_344_7f32, max_relative = 1e-5);
    }
}
