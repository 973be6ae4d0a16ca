//! GP-inverse-Gamma prior layer: hyperparameters, per-component prior
//! parameters, the augmented-input kernel, and the latent-position
//! triangle encoding.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

/// Hard cap on the conditioning size.
pub const M_MAX: usize = 30;
/// Floor applied to the latent triangle's diagonal before taking logs.
pub const R_DIAG_FLOOR: f64 = 1e-6;

/// Global hyperparameters θ.
///
/// `latent_triangle` encodes the upper-triangular matrix `R` of the latent
/// process positions `S̆ = (0ᵀ; QR)` row-major over the upper triangle, with
/// diagonal entries stored as logs (so the decoded diagonal is positive).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams<T> {
    /// θ^d: log-scale intercept/slope of E[d²] against ln ℓ_n.
    pub d1: T,
    pub d2: T,
    /// θ^σ: log-scale intercept/slope of σ²_n against ln ℓ_n.
    pub sigma1: T,
    pub sigma2: T,
    /// θ^γ: log of the nonlinear-kernel range γ.
    pub gamma: T,
    /// θ^q: log of the conditioning-decay rate.
    pub q: T,
    pub latent_triangle: Vec<T>,
}

impl<T: Real> HyperParams<T> {
    /// Flat parameter vector `[d1, d2, sigma1, sigma2, gamma, q, triangle…]`.
    pub fn to_vec(&self) -> Vec<T> {
        let mut v = vec![self.d1, self.d2, self.sigma1, self.sigma2, self.gamma, self.q];
        v.extend_from_slice(&self.latent_triangle);
        v
    }

    pub fn from_vec(v: &[T]) -> Self {
        HyperParams {
            d1: v[0],
            d2: v[1],
            sigma1: v[2],
            sigma2: v[3],
            gamma: v[4],
            q: v[5],
            latent_triangle: v[6..].to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        6 + self.latent_triangle.len()
    }
}

/// Per-component prior parameters derived from θ and ℓ_n.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ComponentPrior<T> {
    /// Inverse-Gamma shape α = 2 + 1/g².
    pub alpha: T,
    /// Inverse-Gamma rate β = (α − 1)·E[d²].
    pub beta: T,
    /// Prior mean of d².
    pub expected_d2: T,
    /// Nonlinear-component variance σ²_n.
    pub sigma2: T,
    /// Kernel range γ = exp(θ^γ).
    pub gamma: T,
    /// Conditioning decay weights exp(−j·exp(θ^q)), j = 1..k.
    pub q_diag: Vec<T>,
}

/// Conditioning size m = max{ j ≥ 1 : exp(−j·exp(θ^q)) ≥ ε }, clamped to
/// `[1, M_MAX]`.
pub fn conditioning_size<T: Real>(theta_q: T, epsilon: T) -> usize {
    let rate = theta_q.exp();
    let mut m = 1;
    for j in 1..=M_MAX {
        if (-lit::<T>(j as f64) * rate).exp() >= epsilon {
            m = j;
        } else {
            break;
        }
    }
    m
}

/// Derives the per-component prior from θ, the scale ℓ_n and the
/// conditioning-set size `k`. `g` is the prior coefficient of variation of
/// d² (SD[d²] = g·E[d²]).
pub fn prior_params<T: Real>(theta: &HyperParams<T>, ell: T, k: usize, g: T) -> Result<ComponentPrior<T>> {
    if !(to_f64(ell) > 0.0) {
        return Err(Error::invalid(format!("ell must be positive, got {}", to_f64(ell))));
    }
    let alpha = lit::<T>(2.0) + (g * g).recip();
    let ln_ell = ell.ln();
    let expected_d2 = (theta.d1 + theta.d2.exp() * ln_ell).exp();
    let beta = (alpha - T::one()) * expected_d2;
    let sigma2 = (theta.sigma1 + theta.sigma2.exp() * ln_ell).exp();
    let rate = theta.q.exp();
    let q_diag = (1..=k)
        .map(|j| (-lit::<T>(j as f64) * rate).exp())
        .collect();
    Ok(ComponentPrior {
        alpha,
        beta,
        expected_d2,
        sigma2,
        gamma: theta.gamma.exp(),
        q_diag,
    })
}

/// Matérn-3/2 correlation ρ(t) = (1 + √3 t)·exp(−√3 t).
pub fn matern32<T: Real>(t: T) -> T {
    let s3 = lit::<T>(3.0).sqrt() * t;
    (T::one() + s3) * (-s3).exp()
}

/// Augmented-input kernel between two conditioning-value vectors.
///
/// Empty inputs (the first ordered component, whose map component is pure
/// noise) yield 0.
pub fn kernel<T: Real>(u: &[T], v: &[T], prior: &ComponentPrior<T>) -> T {
    let k = prior.q_diag.len();
    debug_assert_eq!(u.len(), k);
    debug_assert_eq!(v.len(), k);
    if k == 0 {
        return T::zero();
    }
    let mut linear = T::zero();
    let mut r2 = T::zero();
    for j in 0..k {
        let q = prior.q_diag[j];
        linear += u[j] * q * v[j];
        let d = u[j] - v[j];
        r2 += d * d * q;
    }
    let t = r2.max(T::zero()).sqrt() / prior.gamma;
    (linear + prior.sigma2 * matern32(t)) / prior.expected_d2
}

/// Kernel Gram matrix over the rows of `u` (R×k), optionally adding the
/// identity (observation noise folded into d²).
pub fn gram<T: Real>(u: &DMatrix<T>, prior: &ComponentPrior<T>, add_identity: bool) -> DMatrix<T> {
    let r = u.nrows();
    let rows: Vec<Vec<T>> = (0..r)
        .map(|i| u.row(i).iter().copied().collect())
        .collect();
    let mut g = DMatrix::zeros(r, r);
    for i in 0..r {
        for j in 0..=i {
            let v = kernel(&rows[i], &rows[j], prior);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    if add_identity {
        for i in 0..r {
            g[(i, i)] += T::one();
        }
    }
    g
}

/// Number of latent-triangle parameters for `p` processes.
pub fn triangle_len(p: usize) -> usize {
    p * (p - 1) / 2
}

/// Expands the triangle parameter vector into the upper-triangular matrix
/// `R` ((P−1)×(P−1), positive diagonal).
pub fn triangle_to_r<T: Real>(triangle: &[T], p: usize) -> Result<DMatrix<T>> {
    let l = p.saturating_sub(1);
    if triangle.len() != triangle_len(p) {
        return Err(Error::invalid(format!(
            "latent triangle has {} entries, expected {} for {} processes",
            triangle.len(),
            triangle_len(p),
            p
        )));
    }
    let mut r = DMatrix::zeros(l, l);
    let mut k = 0;
    for i in 0..l {
        for j in i..l {
            r[(i, j)] = if i == j { triangle[k].exp() } else { triangle[k] };
            k += 1;
        }
    }
    Ok(r)
}

/// Packs an upper-triangular `R` back into the parameter vector (diagonal
/// logged). Inverse of [`triangle_to_r`].
pub fn r_to_triangle<T: Real>(r: &DMatrix<T>) -> Vec<T> {
    let l = r.nrows();
    let mut out = Vec::with_capacity(l * (l + 1) / 2);
    for i in 0..l {
        for j in i..l {
            out.push(if i == j { r[(i, j)].ln() } else { r[(i, j)] });
        }
    }
    out
}

/// Decodes latent process positions `S̆ = (0ᵀ; QR)` from the triangle
/// parameters and the frozen orthonormal factor `Q`.
pub fn decode_latent<T: Real>(triangle: &[T], q: &DMatrix<T>) -> Result<DMatrix<T>> {
    let l = q.nrows();
    let p = l + 1;
    let r = triangle_to_r(triangle, p)?;
    let qr = q * r;
    let mut s = DMatrix::zeros(p, l);
    for i in 0..l {
        for j in 0..l {
            s[(i + 1, j)] = qr[(i, j)];
        }
    }
    Ok(s)
}

/// Encodes latent positions into `(Q, triangle)` by QR-factoring the bottom
/// `P−1` rows, sign-fixing `Q`/`R` so the `R` diagonal is non-negative, and
/// flooring the diagonal at [`R_DIAG_FLOOR`] so logs stay finite.
///
/// Returns `(q, triangle, sbreve)` where `sbreve` is the decoded position
/// matrix consistent with the (possibly floored) factors.
pub fn encode_latent<T: Real>(sbreve: &DMatrix<T>) -> Result<(DMatrix<T>, Vec<T>, DMatrix<T>)> {
    let p = sbreve.nrows();
    let l = sbreve.ncols();
    if l + 1 != p {
        return Err(Error::invalid(format!(
            "latent positions must be P×(P−1); got {p}×{l}"
        )));
    }
    if sbreve.row(0).iter().any(|v| *v != T::zero()) {
        return Err(Error::invalid("first latent position must be the zero vector"));
    }
    if p == 1 {
        return Ok((DMatrix::zeros(0, 0), Vec::new(), sbreve.clone()));
    }
    let bottom = sbreve.rows(1, l).into_owned();
    let qr = bottom.qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for i in 0..l {
        if r[(i, i)] < T::zero() {
            for j in 0..l {
                r[(i, j)] = -r[(i, j)];
                q[(j, i)] = -q[(j, i)];
            }
        }
        if r[(i, i)] < lit(R_DIAG_FLOOR) {
            r[(i, i)] = lit(R_DIAG_FLOOR);
        }
    }
    let triangle = r_to_triangle(&r);
    let rebuilt = decode_latent(&triangle, &q)?;
    Ok((q, triangle, rebuilt))
}

/// Pairwise squared distances between latent process positions (P×P).
pub fn latent_pair_sq_dists<T: Real>(sbreve: &DMatrix<T>) -> DMatrix<T> {
    let p = sbreve.nrows();
    let mut d = DMatrix::zeros(p, p);
    for i in 0..p {
        for j in 0..i {
            let mut acc = T::zero();
            for c in 0..sbreve.ncols() {
                let diff = sbreve[(i, c)] - sbreve[(j, c)];
                acc += diff * diff;
            }
            d[(i, j)] = acc;
            d[(j, i)] = acc;
        }
    }
    d
}
