//! Separable parametric Gaussian model: maximum-likelihood fitting on a
//! location subsample, recovery of latent process positions from the fitted
//! cross-correlations via anchored classical MDS, and exact Gaussian joint /
//! conditional scoring as the comparison baseline.
//!
//! The covariance of components (s, p), (s′, p′) is
//! `τ²·C₁(‖s − s′‖ | range)·K̆[p, p′] + σ²·1{same component}`, with K̆ a
//! correlation matrix over processes decoded from unconstrained reals.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SpatialLocation};
use crate::error::{Error, Result};
use crate::opt::{cosine_lr, AdamState};
use crate::prior::{encode_latent, matern32, HyperParams};
use crate::scalar::{lit, to_f64, Real};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Isotropic correlation family for C₁.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum C1Family {
    Exponential,
    Matern32,
}

impl C1Family {
    /// C₁(h) at range ρ; equals 1 at h = 0 and decreases strictly.
    pub fn corr<T: Real>(self, h: T, range: T) -> T {
        let t = h / range;
        match self {
            C1Family::Exponential => (-t).exp(),
            C1Family::Matern32 => matern32(t),
        }
    }

    /// Inverse of `corr` in h, clamped to `[0, max_h]`.
    pub fn inverse<T: Real>(self, c: T, range: T, max_h: T) -> T {
        if to_f64(c) >= 1.0 {
            return T::zero();
        }
        if c <= self.corr(max_h, range) {
            return max_h;
        }
        match self {
            C1Family::Exponential => -range * c.ln(),
            C1Family::Matern32 => {
                // Monotone bisection on [0, max_h].
                let mut lo = T::zero();
                let mut hi = max_h;
                for _ in 0..80 {
                    let mid = (lo + hi) * lit::<T>(0.5);
                    if self.corr(mid, range) > c {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if to_f64(hi - lo) < 1e-12 {
                        break;
                    }
                }
                (lo + hi) * lit::<T>(0.5)
            }
        }
    }
}

/// Parameters of the separable parametric Gaussian model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParametricParams<T> {
    pub tau2: T,
    pub sigma2: T,
    pub range: T,
    /// P(P−1)/2 unconstrained reals decoding to the process correlation K̆.
    pub corr_unconstrained: Vec<T>,
    pub n_processes: usize,
}

impl<T: Real> ParametricParams<T> {
    /// Unconstrained coordinates [ln τ², ln σ², ln range, u...].
    pub fn to_unconstrained(&self) -> Vec<T> {
        let mut v = vec![self.tau2.ln(), self.sigma2.ln(), self.range.ln()];
        v.extend_from_slice(&self.corr_unconstrained);
        v
    }

    pub fn from_unconstrained(v: &[T], n_processes: usize) -> Self {
        ParametricParams {
            tau2: v[0].exp(),
            sigma2: v[1].exp(),
            range: v[2].exp(),
            corr_unconstrained: v[3..].to_vec(),
            n_processes,
        }
    }

    /// Decoded process correlation matrix K̆.
    pub fn corr_matrix(&self) -> Result<DMatrix<T>> {
        corr_decode(&self.corr_unconstrained, self.n_processes)
    }
}

/// Decodes unconstrained reals to a unit-diagonal PD correlation matrix via
/// tanh → canonical partial correlations → Cholesky rows.
pub fn corr_decode<T: Real>(u: &[T], p: usize) -> Result<DMatrix<T>> {
    let l = corr_chol(u, p)?;
    Ok(&l * l.transpose())
}

/// The lower Cholesky factor of the decoded correlation matrix; every row
/// has unit norm by construction.
pub fn corr_chol<T: Real>(u: &[T], p: usize) -> Result<DMatrix<T>> {
    let expect = p * (p - 1) / 2;
    if u.len() != expect {
        return Err(Error::invalid(format!(
            "correlation vector has {} entries, expected {expect} for P = {p}",
            u.len()
        )));
    }
    let mut l = DMatrix::<T>::zeros(p, p);
    let mut idx = 0;
    for i in 0..p {
        let mut rem = T::one();
        for j in 0..i {
            let z = u[idx].tanh();
            idx += 1;
            l[(i, j)] = z * rem.sqrt();
            rem *= T::one() - z * z;
        }
        l[(i, i)] = rem.sqrt();
    }
    Ok(l)
}

/// Assembles the parametric covariance over the given components.
pub fn parametric_cov<T: Real>(
    params: &ParametricParams<T>,
    locations: &[SpatialLocation<T>],
) -> Result<DMatrix<T>> {
    let kbreve = params.corr_matrix()?;
    let n = locations.len();
    let mut k = DMatrix::<T>::zeros(n, n);
    for a in 0..n {
        for b in 0..=a {
            let la = &locations[a];
            let lb = &locations[b];
            let mut h2 = T::zero();
            for (x, y) in la.coords.iter().zip(&lb.coords) {
                let d = *x - *y;
                h2 += d * d;
            }
            let c1 = C1Family::Matern32.corr(h2.sqrt(), params.range);
            let mut v = params.tau2 * c1 * kbreve[(la.process, lb.process)];
            if a == b {
                v += params.sigma2;
            }
            k[(a, b)] = v;
            k[(b, a)] = v;
        }
    }
    Ok(k)
}

/// Zero-mean Gaussian log likelihood of all replicates under the parametric
/// covariance restricted to `locations` (one row of `reps` per replicate).
pub fn parametric_loglik<T: Real>(
    params: &ParametricParams<T>,
    reps: &DMatrix<T>,
    locations: &[SpatialLocation<T>],
) -> Result<T> {
    let (value, _) = parametric_value_grad(params, reps, locations, false)?;
    Ok(value)
}

/// Log likelihood and, optionally, its gradient in the unconstrained
/// coordinates [ln τ², ln σ², ln range, u...].
///
/// Gradient via the trace identity ∂ℓ/∂φ = ½·tr[(Σ_r w_r w_rᵀ − R·K⁻¹)·∂K/∂φ]
/// with w_r = K⁻¹ y_r; the ∂K̆/∂u_k blocks use central differences on the
/// (tiny) P×P decode.
pub fn parametric_value_grad<T: Real>(
    params: &ParametricParams<T>,
    reps: &DMatrix<T>,
    locations: &[SpatialLocation<T>],
    want_grad: bool,
) -> Result<(T, Vec<T>)> {
    let n = locations.len();
    if reps.ncols() != n {
        return Err(Error::invalid(format!(
            "replicates have {} columns, locations {n}",
            reps.ncols()
        )));
    }
    let r = reps.nrows();
    let k = parametric_cov(params, locations)?;
    let chol = k
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("parametric covariance is not positive definite"))?;
    let mut ln_det = T::zero();
    for i in 0..n {
        ln_det += chol.l_dirty()[(i, i)].ln();
    }
    ln_det = ln_det * lit(2.0);
    let rf = lit::<T>(r as f64);
    let nf = lit::<T>(n as f64);
    let half = lit::<T>(0.5);
    let mut value = -half * rf * (nf * lit(LN_2PI) + ln_det);
    let mut a = DMatrix::<T>::zeros(n, n);
    for rep in 0..r {
        let y = reps.row(rep).transpose();
        let w = chol.solve(&y);
        value -= half * y.dot(&w);
        if want_grad {
            // a += w wᵀ
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] += w[i] * w[j];
                }
            }
        }
    }
    if !want_grad {
        return Ok((value, Vec::new()));
    }
    let kinv = chol.inverse();
    for i in 0..n * n {
        a[i] -= rf * kinv[i];
    }
    let frob = |x: &DMatrix<T>| -> T {
        let mut s = T::zero();
        for (ai, xi) in a.iter().zip(x.iter()) {
            s += *ai * *xi;
        }
        s
    };
    let dim = 3 + params.corr_unconstrained.len();
    let mut grad = vec![T::zero(); dim];
    // ∂K/∂ln τ² = K − σ²I.
    let mut dk = k.clone();
    for i in 0..n {
        dk[(i, i)] -= params.sigma2;
    }
    grad[0] = half * frob(&dk);
    // ∂K/∂ln σ² = σ²·I ⇒ ½·σ²·tr(A).
    let mut tr_a = T::zero();
    for i in 0..n {
        tr_a += a[(i, i)];
    }
    grad[1] = half * params.sigma2 * tr_a;
    // ∂K/∂ln ρ: Matérn-3/2 gives ρ·∂C₁/∂ρ = (√3 h/ρ)²·exp(−√3 h/ρ).
    let kbreve = params.corr_matrix()?;
    let sqrt3 = lit::<T>(3.0).sqrt();
    let mut drho = DMatrix::<T>::zeros(n, n);
    for ia in 0..n {
        for ib in 0..=ia {
            let la = &locations[ia];
            let lb = &locations[ib];
            let mut h2 = T::zero();
            for (x, y) in la.coords.iter().zip(&lb.coords) {
                let d = *x - *y;
                h2 += d * d;
            }
            let t = sqrt3 * h2.sqrt() / params.range;
            let v = params.tau2 * kbreve[(la.process, lb.process)] * t * t * (-t).exp();
            drho[(ia, ib)] = v;
            drho[(ib, ia)] = v;
        }
    }
    grad[2] = half * frob(&drho);
    // ∂K/∂u_k = τ²·C₁ ∘ ∂K̆/∂u_k (finite differences on the decode).
    let p = params.n_processes;
    let hfd = 1e-6;
    for kk in 0..params.corr_unconstrained.len() {
        let mut up = params.corr_unconstrained.clone();
        let mut um = params.corr_unconstrained.clone();
        up[kk] += lit::<T>(hfd);
        um[kk] -= lit::<T>(hfd);
        let dec_p = corr_decode(&up, p)?;
        let dec_m = corr_decode(&um, p)?;
        let mut dkb = DMatrix::<T>::zeros(p, p);
        for i in 0..p * p {
            dkb[i] = (dec_p[i] - dec_m[i]) / lit::<T>(2.0 * hfd);
        }
        let mut du = DMatrix::<T>::zeros(n, n);
        for ia in 0..n {
            for ib in 0..=ia {
                let la = &locations[ia];
                let lb = &locations[ib];
                let mut h2 = T::zero();
                for (x, y) in la.coords.iter().zip(&lb.coords) {
                    let d = *x - *y;
                    h2 += d * d;
                }
                let c1 = C1Family::Matern32.corr(h2.sqrt(), params.range);
                let v = params.tau2 * c1 * dkb[(la.process, lb.process)];
                du[(ia, ib)] = v;
                du[(ib, ia)] = v;
            }
        }
        grad[3 + kk] = half * frob(&du);
    }
    Ok((value, grad))
}

fn d_sites() -> usize {
    256
}
fn d_iters() -> usize {
    200
}
fn d_plr() -> f64 {
    0.05
}

/// Settings for the parametric MLE.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParametricFitConfig {
    /// Spatial sites kept (components at unselected sites are dropped).
    #[serde(default = "d_sites")]
    pub subsample_sites: usize,
    #[serde(default = "d_iters")]
    pub iterations: usize,
    #[serde(default = "d_plr")]
    pub initial_lr: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ParametricFitConfig {
    fn default() -> Self {
        ParametricFitConfig {
            subsample_sites: d_sites(),
            iterations: d_iters(),
            initial_lr: d_plr(),
            seed: 0,
        }
    }
}

/// Groups component indices by exact spatial coordinates (a "site").
fn site_groups<T: Real>(locations: &[SpatialLocation<T>]) -> Vec<Vec<usize>> {
    let mut keys: Vec<(Vec<u64>, usize)> = locations
        .iter()
        .enumerate()
        .map(|(i, l)| (l.coords.iter().map(|c| to_f64(*c).to_bits()).collect(), i))
        .collect();
    keys.sort();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut last: Option<&[u64]> = None;
    for (key, idx) in &keys {
        if last == Some(key.as_slice()) {
            groups.last_mut().unwrap().push(*idx);
        } else {
            groups.push(vec![*idx]);
        }
        last = Some(key.as_slice());
    }
    groups
}

/// Maximum-likelihood fit by full-batch Adam ascent on a seeded site
/// subsample. Returns the best parameters found; if an iteration fails
/// numerically the best-so-far parameters are returned with a warning.
pub fn fit_parametric<T: Real>(
    dataset: &Dataset<T>,
    cfg: &ParametricFitConfig,
) -> Result<ParametricParams<T>> {
    let p = dataset.n_processes();
    let mut groups = site_groups(&dataset.locations);
    if groups.len() > cfg.subsample_sites {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        groups.shuffle(&mut rng);
        groups.truncate(cfg.subsample_sites);
    }
    let mut idx: Vec<usize> = groups.into_iter().flatten().collect();
    idx.sort_unstable();
    let locations: Vec<SpatialLocation<T>> =
        idx.iter().map(|&i| dataset.locations[i].clone()).collect();
    let reps = DMatrix::from_fn(dataset.n_replicates(), idx.len(), |r, c| {
        dataset.replicates[(r, idx[c])]
    });

    // Moment-based starting point: τ² near the marginal variance, modest
    // nugget, range at a fifth of the domain diameter.
    let mut var = T::zero();
    for v in reps.iter() {
        var += *v * *v;
    }
    var /= lit::<T>((reps.len()).max(1) as f64);
    let var = var.max(lit(1e-6));
    let diam = domain_diameter(&locations).max(lit(1e-3));
    let init = ParametricParams {
        tau2: var * lit(0.9),
        sigma2: var * lit(0.1),
        range: diam * lit(0.2),
        corr_unconstrained: vec![T::zero(); p * (p - 1) / 2],
        n_processes: p,
    };
    let mut x = init.to_unconstrained();
    let mut adam = AdamState::new(x.len());
    let mut best_x = x.clone();
    let mut best_val = T::from_f64(f64::NEG_INFINITY).unwrap_or_else(T::zero);
    let mut have_best = false;
    for it in 0..cfg.iterations {
        let params = ParametricParams::from_unconstrained(&x, p);
        let lr = cosine_lr(it, lit::<T>(cfg.initial_lr), cfg.iterations);
        match parametric_value_grad(&params, &reps, &locations, true) {
            Ok((value, grad)) => {
                if !have_best || value > best_val {
                    best_val = value;
                    best_x = x.clone();
                    have_best = true;
                }
                if let Err(e) = adam.step(&mut x, &grad, lr) {
                    log::warn!("parametric fit stopped at iteration {it}: {e}");
                    break;
                }
            }
            Err(e) => {
                log::warn!("parametric fit stopped at iteration {it}: {e}");
                break;
            }
        }
    }
    // Score the final iterate too.
    if let Ok((value, _)) =
        parametric_value_grad(&ParametricParams::from_unconstrained(&x, p), &reps, &locations, false)
    {
        if !have_best || value > best_val {
            best_x = x.clone();
            have_best = true;
        }
    }
    if !have_best {
        return Err(Error::numerical("parametric likelihood never evaluated successfully"));
    }
    Ok(ParametricParams::from_unconstrained(&best_x, p))
}

/// Largest pairwise spatial distance (over sites).
pub fn domain_diameter<T: Real>(locations: &[SpatialLocation<T>]) -> T {
    let mut best = T::zero();
    for a in 0..locations.len() {
        for b in 0..a {
            let mut h2 = T::zero();
            for (x, y) in locations[a].coords.iter().zip(&locations[b].coords) {
                let d = *x - *y;
                h2 += d * d;
            }
            best = best.max(h2.sqrt());
        }
    }
    best
}

/// Latent positions recovered from a fitted correlation structure.
#[derive(Clone, Debug)]
pub struct LatentRecovery<T: Real> {
    /// P × (P−1) latent positions, first row zero.
    pub sbreve: DMatrix<T>,
    /// Frozen orthonormal factor ((P−1) × (P−1)).
    pub q: DMatrix<T>,
    /// Upper-triangle encoding for HyperParams (diagonal logged).
    pub triangle: Vec<T>,
}

/// Inverts C₁ on the cross-correlations to get inter-process distances, then
/// anchors process 1 at the origin and embeds the rest by classical MDS:
/// Gram e_ij = ½(d²₁ⱼ + d²ᵢ₁ − d²ᵢⱼ) over i, j ≥ 2, eigendecomposed with
/// negative eigenvalues clamped to zero.
pub fn recover_positions<T: Real>(
    corr: &DMatrix<T>,
    range: T,
    family: C1Family,
    max_distance: T,
) -> Result<LatentRecovery<T>> {
    let p = corr.nrows();
    if corr.ncols() != p || p == 0 {
        return Err(Error::invalid("correlation matrix must be square and nonempty"));
    }
    let mut d2 = DMatrix::<T>::zeros(p, p);
    for i in 0..p {
        for j in 0..i {
            let c = corr[(i, j)].abs();
            if to_f64(c) <= 0.0 {
                log::warn!(
                    "zero cross-correlation between processes {i} and {j}: clamping latent distance to {}",
                    to_f64(max_distance)
                );
            }
            let d = family.inverse(c, range, max_distance);
            d2[(i, j)] = d * d;
            d2[(j, i)] = d * d;
        }
    }
    let sbreve = mds_embed(&d2)?;
    let (q, triangle, sbreve) = encode_latent(&sbreve)?;
    Ok(LatentRecovery { sbreve, q, triangle })
}

/// Anchored classical MDS: given squared distances (P×P, zero diagonal),
/// returns P×(P−1) coordinates with the first row at the origin.
pub fn mds_embed<T: Real>(d2: &DMatrix<T>) -> Result<DMatrix<T>> {
    let p = d2.nrows();
    if d2.ncols() != p || p == 0 {
        return Err(Error::invalid("squared-distance matrix must be square and nonempty"));
    }
    let l = p - 1;
    let mut out = DMatrix::<T>::zeros(p, l);
    if l == 0 {
        return Ok(out);
    }
    let half = lit::<T>(0.5);
    let mut e = DMatrix::<T>::zeros(l, l);
    for i in 0..l {
        for j in 0..l {
            e[(i, j)] = half * (d2[(0, j + 1)] + d2[(i + 1, 0)] - d2[(i + 1, j + 1)]);
        }
    }
    // Symmetrize against rounding, then eigendecompose.
    let e = (&e + e.transpose()) * half;
    let eig = e.symmetric_eigen();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| {
        to_f64(eig.eigenvalues[b])
            .partial_cmp(&to_f64(eig.eigenvalues[a]))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    for (col, &src) in order.iter().enumerate() {
        let lam = eig.eigenvalues[src].max(T::zero());
        let s = lam.sqrt();
        for i in 0..l {
            out[(i + 1, col)] = eig.eigenvectors[(i, src)] * s;
        }
    }
    Ok(out)
}

/// Precomputed exact-Gaussian scorer over the full component set.
pub struct ParametricScorer<T: Real> {
    chol: Cholesky<T, Dyn>,
    n: usize,
    ln_det: T,
}

impl<T: Real> ParametricScorer<T> {
    pub fn new(params: &ParametricParams<T>, locations: &[SpatialLocation<T>]) -> Result<Self> {
        let k = parametric_cov(params, locations)?;
        let n = locations.len();
        let chol = k
            .cholesky()
            .ok_or_else(|| Error::numerical("parametric covariance is not positive definite"))?;
        let mut ln_det = T::zero();
        for i in 0..n {
            ln_det += chol.l_dirty()[(i, i)].ln();
        }
        Ok(ParametricScorer { chol, n, ln_det: ln_det * lit(2.0) })
    }

    /// Joint zero-mean Gaussian log density of one replicate.
    pub fn log_density(&self, field: &[T]) -> Result<T> {
        if field.len() != self.n {
            return Err(Error::invalid(format!(
                "field has {} entries, scorer covers {}",
                field.len(),
                self.n
            )));
        }
        let y = DVector::from_iterator(self.n, field.iter().copied());
        let w = self.chol.solve(&y);
        let half = lit::<T>(0.5);
        Ok(-half * (lit::<T>(self.n as f64) * lit(LN_2PI) + self.ln_det) - half * y.dot(&w))
    }
}

/// Exact Gaussian conditional scorer of a target block given the rest.
pub struct ParametricConditional<T: Real> {
    target: Vec<usize>,
    observed: Vec<usize>,
    /// K_oo⁻¹ K_ot.
    w: DMatrix<T>,
    /// Cholesky of the conditional covariance Σ = K_tt − K_to K_oo⁻¹ K_ot.
    chol_cond: Cholesky<T, Dyn>,
    ln_det_cond: T,
    n: usize,
}

impl<T: Real> ParametricConditional<T> {
    pub fn new(
        params: &ParametricParams<T>,
        locations: &[SpatialLocation<T>],
        target: &[usize],
    ) -> Result<Self> {
        let n = locations.len();
        let tset: std::collections::HashSet<usize> = target.iter().copied().collect();
        if tset.len() != target.len() || target.iter().any(|&i| i >= n) {
            return Err(Error::invalid("target block must be distinct valid indices"));
        }
        let observed: Vec<usize> = (0..n).filter(|i| !tset.contains(i)).collect();
        let k = parametric_cov(params, locations)?;
        let b = target.len();
        let o = observed.len();
        let koo = DMatrix::from_fn(o, o, |i, j| k[(observed[i], observed[j])]);
        let kot = DMatrix::from_fn(o, b, |i, j| k[(observed[i], target[j])]);
        let ktt = DMatrix::from_fn(b, b, |i, j| k[(target[i], target[j])]);
        let chol_oo = koo
            .cholesky()
            .ok_or_else(|| Error::numerical("observed-block covariance not positive definite"))?;
        let w = chol_oo.solve(&kot);
        let cond = &ktt - kot.transpose() * &w;
        let cond = (&cond + cond.transpose()) * lit::<T>(0.5);
        let chol_cond = cond
            .cholesky()
            .ok_or_else(|| Error::numerical("conditional covariance not positive definite"))?;
        let mut ln_det = T::zero();
        for i in 0..b {
            ln_det += chol_cond.l_dirty()[(i, i)].ln();
        }
        Ok(ParametricConditional {
            target: target.to_vec(),
            observed,
            w,
            chol_cond,
            ln_det_cond: ln_det * lit(2.0),
            n,
        })
    }

    /// Conditional mean of the target block given observed values in `field`.
    pub fn conditional_mean(&self, field: &[T]) -> Result<DVector<T>> {
        if field.len() != self.n {
            return Err(Error::invalid("field length mismatch in conditional scorer"));
        }
        let yo = DVector::from_iterator(self.observed.len(), self.observed.iter().map(|&i| field[i]));
        Ok(self.w.transpose() * yo)
    }

    /// log N(y_t ; μ_cond, Σ_cond) with both blocks read from `field`.
    pub fn conditional_log_density(&self, field: &[T]) -> Result<T> {
        let mean = self.conditional_mean(field)?;
        let yt = DVector::from_iterator(self.target.len(), self.target.iter().map(|&i| field[i]));
        let resid = yt - mean;
        let wv = self.chol_cond.solve(&resid);
        let half = lit::<T>(0.5);
        let b = lit::<T>(self.target.len() as f64);
        Ok(-half * (b * lit(LN_2PI) + self.ln_det_cond) - half * resid.dot(&wv))
    }
}

/// Stage-1 output: fitted baseline parameters plus the latent-position
/// initialization for the transport map.
#[derive(Clone, Debug)]
pub struct Stage1<T: Real> {
    pub params: ParametricParams<T>,
    pub recovery: LatentRecovery<T>,
}

/// Fits the parametric model and recovers latent positions from its
/// cross-correlations (distances capped at the spatial domain diameter).
pub fn stage1<T: Real>(dataset: &Dataset<T>, cfg: &ParametricFitConfig) -> Result<Stage1<T>> {
    let params = fit_parametric(dataset, cfg)?;
    let corr = params.corr_matrix()?;
    let diam = domain_diameter(&dataset.locations).max(lit(1e-3));
    let recovery = recover_positions(&corr, params.range, C1Family::Matern32, diam)?;
    Ok(Stage1 { params, recovery })
}

/// Builds θ₀ from defaults plus a recovered latent triangle.
pub fn initial_theta<T: Real>(triangle: Vec<T>) -> HyperParams<T> {
    HyperParams {
        d1: T::zero(),
        d2: T::zero(),
        sigma1: lit::<T>(0.1f64.ln()),
        sigma2: T::zero(),
        gamma: T::zero(),
        q: lit::<T>(-0.776),
        latent_triangle: triangle,
    }
}
