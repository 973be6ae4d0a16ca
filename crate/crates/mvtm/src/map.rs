//! The fitted transport map: posterior-predictive scoring of held-out
//! replicates, joint and conditional sampling, and the forward (Rosenblatt)
//! transform to the standard-normal reference space.

use std::collections::HashSet;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::SpatialLocation;
use crate::error::{Error, Result};
use crate::geometry::OrderingPlan;
use crate::likelihood::{posterior_stats, ComponentSet, PosteriorStats};
use crate::prior::{kernel, prior_params, ComponentPrior, HyperParams};
use crate::scalar::{lit, to_f64, Real};
use crate::special::{normal_quantile, student_t_cdf, student_t_ln_pdf};

/// One trained map component: its prior, conjugate posterior, and the
/// training neighbor values needed for cross-covariances at test time.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct FittedComponent<T: Real> {
    pub prior: ComponentPrior<T>,
    pub stats: PosteriorStats<T>,
    /// R × k matrix of training conditioning values.
    pub train_neighbors: DMatrix<T>,
}

/// Provenance carried alongside a fitted map.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MapMeta {
    pub seed: u64,
    pub strategy: String,
    pub config_sha256: String,
    /// Recorded modelling choices (e.g. scoring form).
    pub notes: Vec<String>,
}

/// A fully trained multivariate transport map.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct FittedMap<T: Real> {
    pub plan: OrderingPlan<T>,
    pub components: Vec<FittedComponent<T>>,
    pub theta: HyperParams<T>,
    /// Latent process positions S̆ (P × (P−1), first row zero).
    pub latent: DMatrix<T>,
    pub locations: Vec<SpatialLocation<T>>,
    pub n_processes: usize,
    pub g: T,
    pub epsilon: T,
    /// Original component indices ordered last for conditional inference,
    /// when the map was fitted with a constrained ordering.
    pub target_block: Option<Vec<usize>>,
    pub meta: MapMeta,
}

/// Predictive parameters of one component at test conditioning values.
struct Predictive<T> {
    location: T,
    scale: T,
    dof: T,
    /// 1 + K(u*,u*) − k*ᵀG⁻¹k*, the unscaled predictive variance factor.
    var_factor: T,
}

impl<T: Real> FittedMap<T> {
    /// Builds the map from a trained component set at θ̂: runs the conjugate
    /// posterior update for every component.
    pub fn from_trained(
        set: &ComponentSet<T>,
        theta: &HyperParams<T>,
        latent: DMatrix<T>,
        locations: Vec<SpatialLocation<T>>,
        g: T,
        epsilon: T,
        target_block: Option<Vec<usize>>,
        meta: MapMeta,
    ) -> Result<Self> {
        let (ells, _) = set.current_ells(theta)?;
        let mut components = Vec::with_capacity(set.len());
        for (pos, comp) in set.comps.iter().enumerate() {
            let prior = prior_params(theta, ells[pos], comp.neighbors.ncols(), g)?;
            let stats = posterior_stats(&comp.responses, &comp.neighbors, &prior)?;
            components.push(FittedComponent {
                prior,
                stats,
                train_neighbors: comp.neighbors.clone(),
            });
        }
        if let Some(block) = &target_block {
            validate_block_last(&set.plan, block)?;
        }
        Ok(FittedMap {
            plan: set.plan.clone(),
            components,
            theta: theta.clone(),
            latent,
            locations,
            n_processes: set.n_processes,
            g,
            epsilon,
            target_block,
            meta,
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    /// Conditioning values for ordered position `pos` drawn from a field in
    /// original indexing.
    fn neighbor_values(&self, pos: usize, field: &[T]) -> DVector<T> {
        let cond = &self.plan.cond_sets[pos];
        DVector::from_iterator(cond.len(), cond.iter().map(|&p| field[self.plan.order[p]]))
    }

    /// Posterior-predictive scaled-t parameters at conditioning values `ustar`.
    fn predictive(&self, pos: usize, ustar: &DVector<T>) -> Result<Predictive<T>> {
        let comp = &self.components[pos];
        let prior = &comp.prior;
        let r = comp.train_neighbors.nrows();
        let k = ustar.len();
        if comp.train_neighbors.ncols() != k {
            return Err(Error::invalid(format!(
                "conditioning length {k} does not match trained component ({})",
                comp.train_neighbors.ncols()
            )));
        }
        // k*: kernel between the test input and each training row.
        let mut kstar = DVector::<T>::zeros(r);
        let mut row = vec![T::zero(); k];
        for i in 0..r {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = comp.train_neighbors[(i, j)];
            }
            kstar[i] = kernel(ustar.as_slice(), &row, prior);
        }
        let kss = kernel(ustar.as_slice(), ustar.as_slice(), prior);
        let location = kstar.dot(&comp.stats.weights);
        // k*ᵀ G⁻¹ k* via the stored lower factor: ‖L⁻¹k*‖².
        let v = comp
            .stats
            .factor
            .solve_lower_triangular(&kstar)
            .ok_or_else(|| Error::numerical("singular stored Gram factor"))?;
        let var_factor = T::one() + kss - v.norm_squared();
        if !(to_f64(var_factor) > 0.0) {
            return Err(Error::numerical(format!(
                "nonpositive predictive variance factor at ordered component {pos}"
            )));
        }
        let alpha_t = comp.stats.alpha_tilde;
        let beta_t = comp.stats.beta_tilde;
        let scale = (beta_t / alpha_t * var_factor).sqrt();
        Ok(Predictive { location, scale, dof: lit::<T>(2.0) * alpha_t, var_factor })
    }

    fn check_field(&self, field: &[T]) -> Result<()> {
        if field.len() != self.n_components() {
            return Err(Error::invalid(format!(
                "field has {} entries, map has {} components",
                field.len(),
                self.n_components()
            )));
        }
        if field.iter().any(|v| !to_f64(*v).is_finite()) {
            return Err(Error::invalid("field contains non-finite values"));
        }
        Ok(())
    }

    /// Joint log density of a replicate (original component indexing):
    /// the sum of posterior-predictive scaled-t log densities along the map.
    pub fn log_density(&self, field: &[T]) -> Result<T> {
        self.check_field(field)?;
        let mut total = T::zero();
        for pos in 0..self.n_components() {
            total += self.component_log_density(pos, field)?;
        }
        Ok(total)
    }

    fn component_log_density(&self, pos: usize, field: &[T]) -> Result<T> {
        let ustar = self.neighbor_values(pos, field);
        let pred = self.predictive(pos, &ustar)?;
        let y = field[self.plan.order[pos]];
        let z = (y - pred.location) / pred.scale;
        Ok(student_t_ln_pdf(z, pred.dof) - pred.scale.ln())
    }

    /// Conditional log density of the target block given the remaining
    /// components, both read from `field`. Requires a block-last fit.
    pub fn conditional_log_density(&self, field: &[T]) -> Result<T> {
        let block = self.target_block.as_ref().ok_or_else(|| {
            Error::invalid("conditional scoring requires a map fitted with a target block")
        })?;
        self.check_field(field)?;
        let start = self.n_components() - block.len();
        let mut total = T::zero();
        for pos in start..self.n_components() {
            total += self.component_log_density(pos, field)?;
        }
        Ok(total)
    }

    /// Draws `count` replicates from the learned joint distribution.
    /// Deterministic given `seed`; rows are replicates in original indexing.
    pub fn sample(&self, count: usize, seed: u64) -> Result<DMatrix<T>> {
        let n = self.n_components();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gammas = self.posterior_gammas()?;
        let mut out = DMatrix::<T>::zeros(count, n);
        let mut field = vec![T::zero(); n];
        for rep in 0..count {
            for pos in 0..n {
                let y = self.draw_component(pos, &field, &gammas[pos], &mut rng)?;
                field[self.plan.order[pos]] = y;
            }
            for (j, v) in field.iter().enumerate() {
                out[(rep, j)] = *v;
            }
        }
        Ok(out)
    }

    /// Samples the target block given observed values for all other
    /// components. `observed` is a full-length field; entries at target
    /// positions are ignored. Rows of the output carry the observed values
    /// with freshly sampled target entries.
    pub fn conditional_sample(&self, observed: &[T], count: usize, seed: u64) -> Result<DMatrix<T>> {
        let block = self.target_block.as_ref().ok_or_else(|| {
            Error::invalid("conditional sampling requires a map fitted with a target block")
        })?;
        let n = self.n_components();
        if observed.len() != n {
            return Err(Error::invalid(format!(
                "observed field has {} entries, map has {n} components",
                observed.len()
            )));
        }
        let block_set: HashSet<usize> = block.iter().copied().collect();
        for (i, v) in observed.iter().enumerate() {
            if !block_set.contains(&i) && !to_f64(*v).is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite observed value for component {i}"
                )));
            }
        }
        let start = n - block.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gammas = self.posterior_gammas()?;
        let mut out = DMatrix::<T>::zeros(count, n);
        let mut field = observed.to_vec();
        for rep in 0..count {
            // Reset target entries; observed entries stay fixed.
            for &orig in block {
                field[orig] = T::zero();
            }
            for pos in start..n {
                let y = self.draw_component(pos, &field, &gammas[pos], &mut rng)?;
                field[self.plan.order[pos]] = y;
            }
            for (j, v) in field.iter().enumerate() {
                out[(rep, j)] = *v;
            }
        }
        Ok(out)
    }

    fn posterior_gammas(&self) -> Result<Vec<Gamma<f64>>> {
        self.components
            .iter()
            .map(|c| {
                Gamma::new(to_f64(c.stats.alpha_tilde), 1.0)
                    .map_err(|e| Error::numerical(format!("invalid posterior Gamma: {e}")))
            })
            .collect()
    }

    /// One conditional draw: d² ~ IG(α̃, β̃), then y ~ N(m*, d²·var_factor).
    fn draw_component(
        &self,
        pos: usize,
        field: &[T],
        gamma: &Gamma<f64>,
        rng: &mut ChaCha8Rng,
    ) -> Result<T> {
        let ustar = self.neighbor_values(pos, field);
        let pred = self.predictive(pos, &ustar)?;
        let gdraw: f64 = gamma.sample(rng);
        if gdraw <= 0.0 {
            return Err(Error::numerical("degenerate Gamma draw"));
        }
        let d2 = to_f64(self.components[pos].stats.beta_tilde) / gdraw;
        let z: f64 = StandardNormal.sample(rng);
        let sd = (d2 * to_f64(pred.var_factor)).sqrt();
        Ok(pred.location + lit::<T>(sd * z))
    }

    /// Rosenblatt transform to the reference space:
    /// z_n = Φ⁻¹(F_t((y_n − m*)/s*; 2α̃)) componentwise along the map,
    /// returned in original indexing.
    pub fn forward_transform(&self, field: &[T]) -> Result<Vec<T>> {
        self.check_field(field)?;
        let n = self.n_components();
        let mut out = vec![T::zero(); n];
        let clamp = lit::<T>(1e-12);
        for pos in 0..n {
            let ustar = self.neighbor_values(pos, field);
            let pred = self.predictive(pos, &ustar)?;
            let y = field[self.plan.order[pos]];
            let t = (y - pred.location) / pred.scale;
            let u = student_t_cdf(t, pred.dof)
                .max(clamp)
                .min(T::one() - clamp);
            out[self.plan.order[pos]] = normal_quantile(u);
        }
        Ok(out)
    }

    /// Serializes the map to a single JSON document.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let map: FittedMap<T> = serde_json::from_reader(BufReader::new(file))?;
        if map.components.len() != map.plan.order.len() {
            return Err(Error::data("fitted map is inconsistent: component/plan size mismatch"));
        }
        Ok(map)
    }
}

/// Checks that `block` occupies exactly the last positions of the ordering.
fn validate_block_last<T: Real>(plan: &OrderingPlan<T>, block: &[usize]) -> Result<()> {
    let n = plan.order.len();
    if block.len() > n {
        return Err(Error::invalid("target block larger than the map"));
    }
    let tail: HashSet<usize> = plan.order[n - block.len()..].iter().copied().collect();
    let want: HashSet<usize> = block.iter().copied().collect();
    if tail != want || want.len() != block.len() {
        return Err(Error::invalid(
            "ordering is not block-last for the requested target block",
        ));
    }
    Ok(())
}
