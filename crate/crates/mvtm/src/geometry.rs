//! Augmented-space geometry: locations, maxmin ordering, conditioning sets.
//!
//! Every location lives in the augmented space `(s, s̆)` where `s` is spatial
//! and `s̆` is the owning process's latent position; squared distances add
//! across the two blocks. The maxmin ordering, nearest-previous-neighbor
//! conditioning sets and the scale `ℓ_n` (distance to the nearest previous
//! point) all use this augmented distance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{validate_locations, SpatialLocation};
use crate::error::{Error, Result};
use crate::scalar::{to_f64, Real};

/// A location in the augmented input space.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedLocation<T> {
    pub spatial: Vec<T>,
    pub latent: Vec<T>,
    /// 0-based process index.
    pub process: usize,
}

/// Squared augmented distance: the spatial and latent blocks add.
pub fn sq_dist<T: Real>(a: &AugmentedLocation<T>, b: &AugmentedLocation<T>) -> T {
    debug_assert_eq!(a.spatial.len(), b.spatial.len());
    debug_assert_eq!(a.latent.len(), b.latent.len());
    let mut acc = T::zero();
    for (x, y) in a.spatial.iter().zip(&b.spatial) {
        let d = *x - *y;
        acc += d * d;
    }
    for (x, y) in a.latent.iter().zip(&b.latent) {
        let d = *x - *y;
        acc += d * d;
    }
    acc
}

/// Squared distance of the spatial block only.
pub fn spatial_sq_dist<T: Real>(a: &AugmentedLocation<T>, b: &AugmentedLocation<T>) -> T {
    let mut acc = T::zero();
    for (x, y) in a.spatial.iter().zip(&b.spatial) {
        let d = *x - *y;
        acc += d * d;
    }
    acc
}

/// Attaches each process's latent position to its locations.
///
/// `latent_positions` has one row per process (row 0 must be all zeros — the
/// first process anchors the latent space); rows may have any common length,
/// including zero for the single-process case.
pub fn augment_locations<T: Real>(
    locations: &[SpatialLocation<T>],
    latent_positions: &DMatrix<T>,
) -> Result<Vec<AugmentedLocation<T>>> {
    validate_locations(locations)?;
    let n_proc = locations.iter().map(|l| l.process + 1).max().unwrap_or(0);
    if latent_positions.nrows() != n_proc {
        return Err(Error::invalid(format!(
            "latent positions have {} rows but data has {} processes",
            latent_positions.nrows(),
            n_proc
        )));
    }
    if n_proc > 0 && latent_positions.row(0).iter().any(|v| *v != T::zero()) {
        return Err(Error::invalid("latent position of process 0 must be the zero vector"));
    }
    Ok(locations
        .iter()
        .map(|loc| AugmentedLocation {
            spatial: loc.coords.clone(),
            latent: latent_positions.row(loc.process).iter().copied().collect(),
            process: loc.process,
        })
        .collect())
}

/// Maxmin ordering with optional block-last constraint, plus conditioning
/// sets and nearest-previous distances.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrderingPlan<T> {
    /// `order[n]` = component id at ordered position `n`.
    pub order: Vec<usize>,
    /// Per position `n`: previous positions (`< n`), ascending by augmented
    /// distance (ties broken by lower position), at most `m` entries.
    pub cond_sets: Vec<Vec<usize>>,
    /// Per position `n ≥ 1`: augmented distance to the nearest previous
    /// point (the first conditioning entry). `ell[0]` is 0 (no previous
    /// point); the prior layer substitutes `max_n ell[n]` there.
    pub ell: Vec<T>,
    /// Conditioning size the plan was built with.
    pub m: usize,
}

/// Maxmin ordering of `locs`.
///
/// The first point minimizes distance to the centroid of its segment; each
/// later point maximizes the minimum distance to all previously ordered
/// points. Ties break toward the lowest component id. With `block_last`,
/// candidates outside the block are exhausted first, then the block — the
/// criterion always measures distance to *all* previously ordered points.
pub fn maxmin_order<T: Real>(
    locs: &[AugmentedLocation<T>],
    block_last: Option<&[usize]>,
) -> Result<Vec<usize>> {
    let n = locs.len();
    if n == 0 {
        return Err(Error::invalid("maxmin_order requires at least one location"));
    }
    let mut in_block = vec![false; n];
    if let Some(block) = block_last {
        for &i in block {
            if i >= n {
                return Err(Error::invalid(format!("block index {i} out of range")));
            }
            in_block[i] = true;
        }
    }
    let first: Vec<usize> = (0..n).filter(|&i| !in_block[i]).collect();
    let second: Vec<usize> = (0..n).filter(|&i| in_block[i]).collect();

    let mut order = Vec::with_capacity(n);
    // min squared distance from each not-yet-chosen point to the chosen set
    let mut min_d2 = vec![T::max_value().unwrap(); n];
    let mut chosen = vec![false; n];

    for segment in [first, second] {
        if segment.is_empty() {
            continue;
        }
        let mut remaining: Vec<usize> = segment;
        if order.is_empty() {
            // Seed: closest to the segment centroid.
            let dim_s = locs[0].spatial.len();
            let dim_l = locs[0].latent.len();
            let mut centroid = AugmentedLocation {
                spatial: vec![T::zero(); dim_s],
                latent: vec![T::zero(); dim_l],
                process: 0,
            };
            let inv = T::from_usize(remaining.len()).unwrap().recip();
            for &i in &remaining {
                for (c, x) in centroid.spatial.iter_mut().zip(&locs[i].spatial) {
                    *c += *x * inv;
                }
                for (c, x) in centroid.latent.iter_mut().zip(&locs[i].latent) {
                    *c += *x * inv;
                }
            }
            let mut best = remaining[0];
            let mut best_d2 = sq_dist(&centroid, &locs[best]);
            for &i in &remaining[1..] {
                let d2 = sq_dist(&centroid, &locs[i]);
                if d2 < best_d2 {
                    best = i;
                    best_d2 = d2;
                }
            }
            take(best, locs, &mut order, &mut chosen, &mut min_d2);
            remaining.retain(|&i| i != best);
        }
        while !remaining.is_empty() {
            let mut best = remaining[0];
            let mut best_d2 = min_d2[best];
            for &i in &remaining[1..] {
                if min_d2[i] > best_d2 {
                    best = i;
                    best_d2 = min_d2[i];
                }
            }
            take(best, locs, &mut order, &mut chosen, &mut min_d2);
            remaining.retain(|&i| i != best);
        }
    }
    Ok(order)
}

fn take<T: Real>(
    idx: usize,
    locs: &[AugmentedLocation<T>],
    order: &mut Vec<usize>,
    chosen: &mut [bool],
    min_d2: &mut [T],
) {
    order.push(idx);
    chosen[idx] = true;
    for (j, slot) in min_d2.iter_mut().enumerate() {
        if !chosen[j] {
            let d2 = sq_dist(&locs[idx], &locs[j]);
            if d2 < *slot {
                *slot = d2;
            }
        }
    }
}

/// Conditioning sets over an already-ordered sequence of locations.
///
/// For position `n`, picks the (at most) `m` nearest previous positions by
/// augmented distance, returned ascending by distance with ties broken by
/// lower position. Also returns `ell[n]`, the distance to the nearest
/// previous position (0 at `n = 0`).
pub fn conditioning_sets<T: Real>(
    ordered: &[AugmentedLocation<T>],
    m: usize,
) -> Result<(Vec<Vec<usize>>, Vec<T>)> {
    if m == 0 {
        return Err(Error::invalid("conditioning size m must be at least 1"));
    }
    let n = ordered.len();
    let mut sets = Vec::with_capacity(n);
    let mut ell = Vec::with_capacity(n);
    for i in 0..n {
        let mut cand: Vec<(T, usize)> = (0..i)
            .map(|j| (sq_dist(&ordered[i], &ordered[j]), j))
            .collect();
        cand.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .expect("finite distances")
                .then(a.1.cmp(&b.1))
        });
        cand.truncate(m);
        if i == 0 {
            ell.push(T::zero());
        } else {
            ell.push(cand[0].0.sqrt());
        }
        sets.push(cand.into_iter().map(|(_, j)| j).collect());
    }
    Ok((sets, ell))
}

/// Builds an [`OrderingPlan`]: maxmin ordering (with optional block-last
/// constraint) followed by conditioning sets of size `m`.
pub fn build_plan<T: Real>(
    locs: &[AugmentedLocation<T>],
    m: usize,
    block_last: Option<&[usize]>,
) -> Result<OrderingPlan<T>> {
    let order = maxmin_order(locs, block_last)?;
    let ordered: Vec<AugmentedLocation<T>> = order.iter().map(|&i| locs[i].clone()).collect();
    let (cond_sets, ell) = conditioning_sets(&ordered, m)?;
    for (n, &e) in ell.iter().enumerate().skip(1) {
        if !(to_f64(e) > 0.0) {
            return Err(Error::data(format!(
                "duplicate augmented locations: components {} and {} coincide",
                order[n], order[cond_sets[n][0]]
            )));
        }
    }
    Ok(OrderingPlan { order, cond_sets, ell, m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn aug(s: &[f64], l: &[f64], p: usize) -> AugmentedLocation<f64> {
        AugmentedLocation { spatial: s.to_vec(), latent: l.to_vec(), process: p }
    }

    #[test]
    fn augmented_distance_decomposes() {
        let a = aug(&[0.0, 0.0], &[0.0], 0);
        let b = aug(&[0.3, 0.4], &[0.2], 1);
        assert_relative_eq!(sq_dist(&a, &b).sqrt(), (0.25f64 + 0.04).sqrt(), epsilon = 1e-15);
        assert_relative_eq!(sq_dist(&a, &b).sqrt(), 0.538_516_480_713_450_4, epsilon = 1e-12);
    }

    #[test]
    fn colocated_distance_is_latent_distance() {
        // Same spatial site, two processes 0.2 apart in latent space.
        let a = aug(&[0.5, 0.5], &[0.0, 0.0, 0.0], 0);
        let b = aug(&[0.5, 0.5], &[0.2, 0.0, 0.0], 1);
        assert_relative_eq!(sq_dist(&a, &b).sqrt(), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn collinear_example() {
        // Points at x = 0, 1, 2: center first, then an endpoint (tie broken
        // toward the lower id), then the other endpoint.
        let locs = vec![aug(&[0.0], &[], 0), aug(&[1.0], &[], 0), aug(&[2.0], &[], 0)];
        let order = maxmin_order(&locs, None).unwrap();
        assert_eq!(order, vec![1, 0, 2]);
        let ordered: Vec<_> = order.iter().map(|&i| locs[i].clone()).collect();
        let (sets, ell) = conditioning_sets(&ordered, 2).unwrap();
        assert_eq!(sets[2], vec![0, 1]); // position 0 (x=1) closer than position 1 (x=0)
        assert_relative_eq!(ell[1], 1.0);
        assert_relative_eq!(ell[2], 1.0);
    }

    #[test]
    fn block_last_pushes_block_to_the_end() {
        let locs: Vec<_> = (0..6).map(|i| aug(&[i as f64], &[], 0)).collect();
        let order = maxmin_order(&locs, Some(&[1, 3])).unwrap();
        assert_eq!(order.len(), 6);
        assert!(order[4..].iter().all(|&i| i == 1 || i == 3));
        assert!(order[..4].iter().all(|&i| i != 1 && i != 3));
    }

    #[test]
    fn single_point_plan() {
        let locs = vec![aug(&[0.0], &[], 0)];
        let plan = build_plan(&locs, 3, None).unwrap();
        assert_eq!(plan.order, vec![0]);
        assert!(plan.cond_sets[0].is_empty());
    }

    #[test]
    fn duplicate_locations_rejected() {
        let locs = vec![aug(&[0.0], &[], 0), aug(&[0.0], &[], 0)];
        assert!(build_plan(&locs, 2, None).is_err());
    }

    #[test]
    fn maxmin_criterion_non_increasing_within_segment() {
        // ell (the chosen maxmin criterion value) may not increase.
        let mut state = 1u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        let locs: Vec<_> = (0..60).map(|_| aug(&[next(), next()], &[], 0)).collect();
        let plan = build_plan(&locs, 1, None).unwrap();
        for n in 2..plan.ell.len() {
            assert!(plan.ell[n] <= plan.ell[n - 1] + 1e-12);
        }
    }
}
