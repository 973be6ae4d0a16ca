//! Empirical-Bayes training loop: mini-batch Adam ascent on the integrated
//! likelihood with cosine-annealed learning rate, early stopping on a
//! validation set, and the three latent-position strategies
//! (conditioning-preserving, fixed-ordering, ordering-refreshing).

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geometry::{augment_locations, build_plan};
use crate::likelihood::{batch_gradient, batch_loglik, ComponentSet};
use crate::opt::{cosine_lr, AdamState};
use crate::prior::{conditioning_size, decode_latent, HyperParams};
use crate::scalar::{lit, Real};

/// Latent-position handling during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Conditioning-preserving: latent entries frozen (gradient masked).
    Cpp,
    /// Fixed ordering: latent entries move, structure never rebuilt.
    Fo,
    /// Ordering-refreshing: latent entries move and the ordering plus
    /// conditioning sets are rebuilt on a doubling epoch schedule.
    Or,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Cpp => "cpp",
            Strategy::Fo => "fo",
            Strategy::Or => "or",
        })
    }
}

fn d_batch() -> usize {
    256
}
fn d_lr() -> f64 {
    0.01
}
fn d_epochs() -> usize {
    500
}
fn d_patience() -> usize {
    25
}
fn d_strategy() -> Strategy {
    Strategy::Cpp
}
fn d_reorder() -> Vec<usize> {
    vec![4, 8, 16, 32, 64, 128, 256, 512]
}
fn d_eps() -> f64 {
    0.01
}
fn d_g() -> f64 {
    4.0
}

/// Training settings (Algorithm 1 defaults).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub initial_lr: f64,
    #[serde(default = "d_epochs")]
    pub max_epochs: usize,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default = "d_strategy")]
    pub strategy: Strategy,
    #[serde(default = "d_reorder")]
    pub reorder_epochs: Vec<usize>,
    #[serde(default = "d_eps")]
    pub epsilon: f64,
    #[serde(default = "d_g")]
    pub g: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: d_batch(),
            initial_lr: d_lr(),
            max_epochs: d_epochs(),
            patience: d_patience(),
            strategy: d_strategy(),
            reorder_epochs: d_reorder(),
            epsilon: d_eps(),
            g: d_g(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be at least 1"));
        }
        if self.patience > self.max_epochs {
            return Err(Error::invalid("patience must not exceed max_epochs"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::invalid("epsilon must lie in (0, 1)"));
        }
        if !(self.g > 0.0) {
            return Err(Error::invalid("g must be positive"));
        }
        if !(self.initial_lr > 0.0) {
            return Err(Error::invalid("initial_lr must be positive"));
        }
        Ok(())
    }
}

/// One row of the training trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochRecord<T> {
    pub epoch: usize,
    /// Sum of batch objectives at pre-update parameters.
    pub train_obj: T,
    pub val_obj: T,
    pub lr: T,
    pub reordered: bool,
    pub patience_counter: usize,
}

/// Result of a training run: θ̂ plus the final structural context.
#[derive(Clone, Debug)]
pub struct FitOutcome<T: Real> {
    pub theta: HyperParams<T>,
    pub best_val: T,
    pub trace: Vec<EpochRecord<T>>,
    pub train_set: ComponentSet<T>,
    pub val_set: ComponentSet<T>,
}

/// Builds ordering, conditioning sets, and component extractions for both
/// datasets from the latent positions encoded in θ. `m` follows θ^q.
pub fn rebuild_ordering<T: Real>(
    train: &Dataset<T>,
    val: &Dataset<T>,
    theta: &HyperParams<T>,
    latent_q: &DMatrix<T>,
    epsilon: T,
    block_last: Option<&[usize]>,
) -> Result<(ComponentSet<T>, ComponentSet<T>)> {
    let sbreve = if latent_q.nrows() == 0 {
        DMatrix::zeros(train.n_processes(), 0)
    } else {
        decode_latent(&theta.latent_triangle, latent_q)?
    };
    let aug = augment_locations(&train.locations, &sbreve)?;
    let m = conditioning_size(theta.q, epsilon);
    let plan = build_plan(&aug, m, block_last)?;
    let train_set = ComponentSet::build(train, &plan, latent_q.clone())?;
    let val_set = ComponentSet::build(val, &plan, latent_q.clone())?;
    Ok((train_set, val_set))
}

fn same_locations<T: Real>(a: &Dataset<T>, b: &Dataset<T>) -> bool {
    a.locations.len() == b.locations.len()
        && a.locations.iter().zip(&b.locations).all(|(x, y)| {
            x.process == y.process
                && x.coords.len() == y.coords.len()
                && x.coords.iter().zip(&y.coords).all(|(u, v)| u == v)
        })
}

/// Algorithm 1: empirical-Bayes fit of θ by mini-batch Adam ascent with
/// early stopping, returning the parameters with the best validation
/// objective seen since the last reorder event.
pub fn fit<T: Real>(
    train: &Dataset<T>,
    val: &Dataset<T>,
    theta0: &HyperParams<T>,
    latent_q: &DMatrix<T>,
    cfg: &TrainConfig,
    block_last: Option<&[usize]>,
) -> Result<FitOutcome<T>> {
    cfg.validate()?;
    if !same_locations(train, val) {
        return Err(Error::invalid(
            "training and validation datasets must share identical locations",
        ));
    }
    let g = lit::<T>(cfg.g);
    let eps = lit::<T>(cfg.epsilon);
    let include_latent = cfg.strategy != Strategy::Cpp;
    let (mut train_set, mut val_set) =
        rebuild_ordering(train, val, theta0, latent_q, eps, block_last)?;
    let n = train_set.len();
    let all: Vec<usize> = (0..n).collect();

    let mut x = theta0.to_vec();
    let mut adam = AdamState::new(x.len());
    let mut best_theta = theta0.clone();
    let mut best_val = batch_loglik(&val_set, theta0, &all, g)
        .map_err(|e| Error::numerical(format!("initial validation objective failed: {e}")))?;
    let mut counter = 0usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = all.clone();
    let mut trace = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let lr = cosine_lr(epoch - 1, lit::<T>(cfg.initial_lr), cfg.max_epochs);
        order.shuffle(&mut rng);
        let mut train_obj = T::zero();
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let theta = HyperParams::from_vec(&x);
            let (v, grad) = batch_gradient(&train_set, &theta, batch, g, include_latent)
                .map_err(|e| {
                    Error::numerical(format!("epoch {epoch}, batch {bi}: {e}"))
                })?;
            train_obj += v;
            adam.step(&mut x, &grad, lr).map_err(|e| {
                Error::numerical(format!("epoch {epoch}, batch {bi}: {e}"))
            })?;
        }
        let theta = HyperParams::from_vec(&x);
        let val_obj = batch_loglik(&val_set, &theta, &all, g)
            .map_err(|e| Error::numerical(format!("epoch {epoch}, validation: {e}")))?;
        if val_obj > best_val {
            best_val = val_obj;
            best_theta = theta.clone();
            counter = 0;
        } else {
            counter += 1;
        }
        let stop = counter >= cfg.patience;
        let mut reordered = false;
        if !stop
            && cfg.strategy == Strategy::Or
            && cfg.reorder_epochs.contains(&epoch)
            && epoch < cfg.max_epochs
        {
            let (ts, vs) = rebuild_ordering(train, val, &theta, latent_q, eps, block_last)?;
            train_set = ts;
            val_set = vs;
            // Restart comparison within the new ordering: only objectives
            // under the current structure are comparable.
            best_val = batch_loglik(&val_set, &theta, &all, g)
                .map_err(|e| Error::numerical(format!("epoch {epoch}, post-reorder: {e}")))?;
            best_theta = theta.clone();
            counter = 0;
            reordered = true;
        }
        trace.push(EpochRecord {
            epoch,
            train_obj,
            val_obj,
            lr,
            reordered,
            patience_counter: counter,
        });
        if stop {
            break;
        }
    }

    Ok(FitOutcome { theta: best_theta, best_val, trace, train_set, val_set })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SpatialLocation;
    use rand::Rng;

    fn toy_data(seed: u64, p: usize, sites: usize, r_train: usize, r_val: usize) -> (Dataset<f64>, Dataset<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut locations = Vec::new();
        for proc in 0..p {
            for _ in 0..sites {
                locations.push(SpatialLocation {
                    coords: vec![rng.random::<f64>(), rng.random::<f64>()],
                    process: proc,
                });
            }
        }
        let n = locations.len();
        let tr = DMatrix::from_fn(r_train, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let va = DMatrix::from_fn(r_val, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        (
            Dataset::new(locations.clone(), tr).unwrap(),
            Dataset::new(locations, va).unwrap(),
        )
    }

    fn small_cfg(strategy: Strategy) -> TrainConfig {
        TrainConfig {
            batch_size: 8,
            initial_lr: 0.02,
            max_epochs: 6,
            patience: 6,
            strategy,
            reorder_epochs: vec![2, 4],
            epsilon: 0.01,
            g: 4.0,
            seed: 7,
        }
    }

    fn theta_start(p: usize) -> (HyperParams<f64>, DMatrix<f64>) {
        let l = p.saturating_sub(1);
        let tri_len = p * l / 2;
        let theta = crate::init::initial_theta((0..tri_len).map(|i| -1.0 - 0.1 * i as f64).collect());
        (theta, DMatrix::identity(l, l))
    }

    #[test]
    fn patience_zero_runs_exactly_one_epoch() {
        let (tr, va) = toy_data(1, 2, 5, 4, 3);
        let (theta0, q) = theta_start(2);
        let mut cfg = small_cfg(Strategy::Cpp);
        cfg.patience = 0;
        let out = fit(&tr, &va, &theta0, &q, &cfg, None).unwrap();
        assert_eq!(out.trace.len(), 1);
    }

    #[test]
    fn cpp_freezes_latent_entries_bitwise() {
        let (tr, va) = toy_data(2, 3, 4, 5, 3);
        let (theta0, q) = theta_start(3);
        let out = fit(&tr, &va, &theta0, &q, &small_cfg(Strategy::Cpp), None).unwrap();
        assert_eq!(out.theta.latent_triangle, theta0.latent_triangle);
        // Non-latent entries did move.
        assert_ne!(out.theta.d1, theta0.d1);
    }

    #[test]
    fn fo_moves_latent_entries() {
        let (tr, va) = toy_data(3, 2, 6, 6, 3);
        let (theta0, q) = theta_start(2);
        let out = fit(&tr, &va, &theta0, &q, &small_cfg(Strategy::Fo), None).unwrap();
        assert_ne!(out.theta.latent_triangle, theta0.latent_triangle);
    }

    #[test]
    fn deterministic_replay() {
        let (tr, va) = toy_data(4, 2, 5, 5, 3);
        let (theta0, q) = theta_start(2);
        let cfg = small_cfg(Strategy::Or);
        let a = fit(&tr, &va, &theta0, &q, &cfg, None).unwrap();
        let b = fit(&tr, &va, &theta0, &q, &cfg, None).unwrap();
        assert_eq!(a.theta.to_vec(), b.theta.to_vec());
        let va_objs: Vec<f64> = a.trace.iter().map(|r| r.val_obj).collect();
        let vb_objs: Vec<f64> = b.trace.iter().map(|r| r.val_obj).collect();
        assert_eq!(va_objs, vb_objs);
    }

    #[test]
    fn best_validation_never_below_start() {
        let (tr, va) = toy_data(5, 2, 6, 6, 4);
        let (theta0, q) = theta_start(2);
        let cfg = small_cfg(Strategy::Cpp);
        let out = fit(&tr, &va, &theta0, &q, &cfg, None).unwrap();
        let (_, vs) = rebuild_ordering(&tr, &va, &theta0, &q, 0.01, None).unwrap();
        let all: Vec<usize> = (0..vs.len()).collect();
        let start = batch_loglik(&vs, &theta0, &all, 4.0).unwrap();
        assert!(out.best_val >= start);
    }

    #[test]
    fn or_reorders_on_schedule_and_resets_patience() {
        let (tr, va) = toy_data(6, 2, 6, 5, 3);
        let (theta0, q) = theta_start(2);
        let cfg = small_cfg(Strategy::Or);
        let out = fit(&tr, &va, &theta0, &q, &cfg, None).unwrap();
        let flags: Vec<bool> = out.trace.iter().map(|r| r.reordered).collect();
        assert!(flags[1], "epoch 2 should reorder");
        assert!(flags[3], "epoch 4 should reorder");
        assert_eq!(out.trace[1].patience_counter, 0);
        assert_eq!(out.trace[3].patience_counter, 0);
    }

    #[test]
    fn fo_and_cpp_agree_for_single_process() {
        // With P = 1 there are no latent entries, so the mask is vacuous.
        let (tr, va) = toy_data(7, 1, 10, 5, 3);
        let (theta0, q) = theta_start(1);
        let a = fit(&tr, &va, &theta0, &q, &small_cfg(Strategy::Cpp), None).unwrap();
        let b = fit(&tr, &va, &theta0, &q, &small_cfg(Strategy::Fo), None).unwrap();
        assert_eq!(a.theta.to_vec(), b.theta.to_vec());
    }

    #[test]
    fn block_last_fit_orders_target_last() {
        let (tr, va) = toy_data(8, 2, 5, 4, 3);
        let target: Vec<usize> = tr
            .locations
            .iter()
            .enumerate()
            .filter(|(_, l)| l.process == 0)
            .map(|(i, _)| i)
            .collect();
        let (theta0, q) = theta_start(2);
        let out = fit(&tr, &va, &theta0, &q, &small_cfg(Strategy::Cpp), Some(&target)).unwrap();
        let n = out.train_set.plan.order.len();
        let tail = &out.train_set.plan.order[n - target.len()..];
        for t in tail {
            assert!(target.contains(t));
        }
    }

    #[test]
    fn mismatched_locations_rejected() {
        let (tr, _) = toy_data(9, 2, 5, 4, 3);
        let (_, va2) = toy_data(10, 2, 5, 4, 3);
        let (theta0, q) = theta_start(2);
        assert!(fit(&tr, &va2, &theta0, &q, &small_cfg(Strategy::Cpp), None).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.patience = cfg.max_epochs + 1;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.epsilon = 1.5;
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
