//! Synthetic data generation from the nonlinear triangular DGP
//! (sequential sine-warped regressions on an augmented-space conditioning
//! structure) and the comparison harness pitting the transport-map variants
//! against the parametric Gaussian baseline.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SpatialLocation};
use crate::error::{Error, Result};
use crate::geometry::{augment_locations, build_plan, sq_dist, OrderingPlan};
use crate::init::{self, ParametricConditional, ParametricFitConfig, ParametricScorer};
use crate::map::{FittedMap, MapMeta};
use crate::prior::HyperParams;
use crate::scalar::{lit, Real};
use crate::special::normal_ln_pdf;
use crate::train::{self, Strategy, TrainConfig};

/// Conditioning-set size used by the generator (fixed, nearest-first).
pub const M_DGP: usize = 10;

/// Upper bound on the L1 norm of each generator weight vector; values below
/// one make the triangular autoregression stable on arbitrarily dense grids.
pub const WEIGHT_L1_CAP: f64 = 0.9;

fn d_p() -> usize {
    2
}
fn d_side() -> usize {
    32
}
fn d_rtrain() -> usize {
    80
}
fn d_r20() -> usize {
    20
}
fn d_range() -> f64 {
    0.3
}
fn d_amp() -> f64 {
    2.0
}

/// Configuration of the synthetic generator.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpConfig {
    #[serde(default = "d_p")]
    pub p: usize,
    #[serde(default = "d_side")]
    pub grid_side: usize,
    #[serde(default = "d_rtrain")]
    pub r_train: usize,
    #[serde(default = "d_r20")]
    pub r_val: usize,
    #[serde(default = "d_r20")]
    pub r_test: usize,
    /// True latent positions, one row per process (first row zero); `None`
    /// selects the built-in defaults (P ≤ 5).
    #[serde(default)]
    pub latent_positions: Option<Vec<Vec<f64>>>,
    #[serde(default = "d_range")]
    pub weight_range: f64,
    /// Amplitude of the sine warp; 0 gives a linear Gaussian field.
    #[serde(default = "d_amp")]
    pub sine_amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        DgpConfig {
            p: d_p(),
            grid_side: d_side(),
            r_train: d_rtrain(),
            r_val: d_r20(),
            r_test: d_r20(),
            latent_positions: None,
            weight_range: d_range(),
            sine_amplitude: d_amp(),
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_side < 2 {
            return Err(Error::invalid("grid_side must be at least 2"));
        }
        if self.p < 1 {
            return Err(Error::invalid("p must be at least 1"));
        }
        if self.latent_positions.is_none() && !(1..=5).contains(&self.p) {
            return Err(Error::invalid("built-in latent positions cover P ≤ 5 only"));
        }
        if let Some(rows) = &self.latent_positions {
            if rows.len() != self.p {
                return Err(Error::invalid("latent_positions must have one row per process"));
            }
            if self.p > 0 && rows[0].iter().any(|v| *v != 0.0) {
                return Err(Error::invalid("first latent position must be the origin"));
            }
        }
        if !(self.weight_range > 0.0) {
            return Err(Error::invalid("weight_range must be positive"));
        }
        Ok(())
    }

    /// True latent positions as a P × (P−1) matrix.
    pub fn latent_matrix<T: Real>(&self) -> Result<DMatrix<T>> {
        let p = self.p;
        let l = p.saturating_sub(1);
        let rows: Vec<Vec<f64>> = match &self.latent_positions {
            Some(rows) => rows.clone(),
            None => default_latent_rows(p),
        };
        let mut out = DMatrix::<T>::zeros(p, l);
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if *v != 0.0 {
                    if j >= l {
                        return Err(Error::invalid(
                            "latent position has nonzero coordinates beyond dimension P−1",
                        ));
                    }
                    out[(i, j)] = lit(*v);
                }
            }
        }
        Ok(out)
    }
}

/// Built-in true positions: s̆₂ = (0.2,0,0), s̆₃ = (0,0.3,0), s̆₄ = (0,0,0.4),
/// s̆₅ = (0.3,0.3,0), anchored at s̆₁ = 0.
fn default_latent_rows(p: usize) -> Vec<Vec<f64>> {
    let all = [
        vec![0.0, 0.0, 0.0],
        vec![0.2, 0.0, 0.0],
        vec![0.0, 0.3, 0.0],
        vec![0.0, 0.0, 0.4],
        vec![0.3, 0.3, 0.0],
    ];
    all.into_iter().take(p).collect()
}

/// Regular grid locations for all processes, process-major, row-major grid.
pub fn grid_locations<T: Real>(p: usize, side: usize) -> Vec<SpatialLocation<T>> {
    let denom = (side - 1) as f64;
    let mut out = Vec::with_capacity(p * side * side);
    for proc in 0..p {
        for ix in 0..side {
            for iy in 0..side {
                out.push(SpatialLocation {
                    coords: vec![lit(ix as f64 / denom), lit(iy as f64 / denom)],
                    process: proc,
                });
            }
        }
    }
    out
}

/// The exact generating model: triangular Gaussian recursion with known
/// weights, noise scales, and sine warp. Its joint density is available in
/// closed form and upper-bounds any fitted model's expected log score.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real", deserialize = "T: Real"))]
pub struct TruthModel<T: Real> {
    pub locations: Vec<SpatialLocation<T>>,
    pub latent: DMatrix<T>,
    pub plan: OrderingPlan<T>,
    /// Per ordered component, the regression weights b over c(i).
    pub weights: Vec<Vec<T>>,
    /// Per ordered component, the conditional noise SD d_i.
    pub d: Vec<T>,
    pub sine_amplitude: T,
}

impl<T: Real> TruthModel<T> {
    /// Builds ordering, conditioning sets, exponential-kernel weights, and
    /// noise scales in the augmented space of the true latent positions.
    pub fn build(
        locations: Vec<SpatialLocation<T>>,
        latent: DMatrix<T>,
        weight_range: T,
        sine_amplitude: T,
    ) -> Result<Self> {
        let aug = augment_locations(&locations, &latent)?;
        let plan = build_plan(&aug, M_DGP, None)?;
        let n = plan.order.len();
        let mut weights = Vec::with_capacity(n);
        let mut d = Vec::with_capacity(n);
        for pos in 0..n {
            let me = &aug[plan.order[pos]];
            let mut w: Vec<T> = plan.cond_sets[pos]
                .iter()
                .map(|&prev| {
                    let dist = sq_dist(me, &aug[plan.order[prev]]).sqrt();
                    (-dist / weight_range).exp()
                })
                .collect();
            // Rescale so the autoregression is a contraction: with up to
            // M_DGP near neighbors the raw kernel weights can sum well above
            // one on dense grids, which makes the recursion explode. Capping
            // ‖b_i‖₁ keeps relative weights (direct kernel ratios) intact.
            let cap = lit::<T>(WEIGHT_L1_CAP);
            let l1: T = w.iter().fold(T::zero(), |a, &b| a + b.abs());
            if l1 > cap {
                let scale = cap / l1;
                for wj in &mut w {
                    *wj *= scale;
                }
            }
            weights.push(w);
            d.push(if pos == 0 {
                T::one()
            } else {
                T::one().min(plan.ell[pos].sqrt())
            });
        }
        Ok(TruthModel { locations, latent, plan, weights, d, sine_amplitude })
    }

    pub fn n_components(&self) -> usize {
        self.plan.order.len()
    }

    /// The conditional mean f_i at ordered position `pos`, reading
    /// conditioning values from a field in original indexing.
    fn f_value(&self, pos: usize, field: &[T]) -> T {
        let cond = &self.plan.cond_sets[pos];
        let w = &self.weights[pos];
        let mut linear = T::zero();
        let mut arg = T::zero();
        for (j, &prev) in cond.iter().enumerate() {
            let y = field[self.plan.order[prev]];
            linear += w[j] * y;
            if j < 2 {
                arg += w[j] * y;
            }
        }
        linear + self.sine_amplitude * (lit::<T>(4.0) * arg).sin()
    }

    /// Draws `count` replicates (rows, original component indexing).
    pub fn generate(&self, count: usize, rng: &mut ChaCha8Rng) -> DMatrix<T> {
        let n = self.n_components();
        let mut out = DMatrix::<T>::zeros(count, n);
        let mut field = vec![T::zero(); n];
        for rep in 0..count {
            for pos in 0..n {
                let z: f64 = StandardNormal.sample(rng);
                let y = self.f_value(pos, &field) + self.d[pos] * lit::<T>(z);
                field[self.plan.order[pos]] = y;
            }
            for (j, v) in field.iter().enumerate() {
                out[(rep, j)] = *v;
            }
        }
        out
    }

    /// Exact joint log density of a replicate under the generating model.
    pub fn log_density(&self, field: &[T]) -> Result<T> {
        if field.len() != self.n_components() {
            return Err(Error::invalid("field length does not match the generator"));
        }
        let mut total = T::zero();
        for pos in 0..self.n_components() {
            let f = self.f_value(pos, field);
            let z = (field[self.plan.order[pos]] - f) / self.d[pos];
            total += normal_ln_pdf(z) - self.d[pos].ln();
        }
        Ok(total)
    }
}

/// Simulated train/validation/test split sharing one location set.
pub struct SimOutput<T: Real> {
    pub train: Dataset<T>,
    pub val: Dataset<T>,
    pub test: Dataset<T>,
    pub truth: TruthModel<T>,
}

/// Generates the three replicate sets from one seeded stream
/// (train, then validation, then test).
pub fn simulate<T: Real>(cfg: &DgpConfig) -> Result<SimOutput<T>> {
    cfg.validate()?;
    let locations = grid_locations::<T>(cfg.p, cfg.grid_side);
    let latent = cfg.latent_matrix::<T>()?;
    let truth = TruthModel::build(
        locations.clone(),
        latent,
        lit(cfg.weight_range),
        lit(cfg.sine_amplitude),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let train = truth.generate(cfg.r_train, &mut rng);
    let val = truth.generate(cfg.r_val, &mut rng);
    let test = truth.generate(cfg.r_test, &mut rng);
    Ok(SimOutput {
        train: Dataset::new(locations.clone(), train)?,
        val: Dataset::new(locations.clone(), val)?,
        test: Dataset::new(locations, test)?,
        truth,
    })
}

/// Methods the comparison harness can run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Parametric,
    Cpp,
    Fo,
    Or,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Parametric => "parametric",
            Method::Cpp => "cpp",
            Method::Fo => "fo",
            Method::Or => "or",
        }
    }

    fn strategy(self) -> Option<Strategy> {
        match self {
            Method::Parametric => None,
            Method::Cpp => Some(Strategy::Cpp),
            Method::Fo => Some(Strategy::Fo),
            Method::Or => Some(Strategy::Or),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn d_rlist() -> Vec<usize> {
    vec![10, 40, 80]
}
fn d_methods() -> Vec<Method> {
    vec![Method::Parametric, Method::Cpp]
}
fn d_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}
fn d_plist() -> Vec<usize> {
    vec![2]
}
fn d_true() -> bool {
    true
}

/// Grid of comparison cells to run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    /// Template for the generator; `p`, `r_train`, and `seed` are overridden
    /// per cell.
    #[serde(default)]
    pub dgp: DgpConfig,
    #[serde(default = "d_plist")]
    pub p_list: Vec<usize>,
    #[serde(default = "d_rlist")]
    pub r_list: Vec<usize>,
    #[serde(default = "d_methods")]
    pub methods: Vec<Method>,
    /// Training-set size at which the conditional variant is also run.
    #[serde(default)]
    pub conditional_r: Option<usize>,
    /// Target process (0-based) of the conditional variant.
    #[serde(default)]
    pub target_process: usize,
    #[serde(default = "d_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_parametric")]
    pub parametric: ParametricFitConfig,
    /// Record wall-clock times (disable for byte-identical reruns).
    #[serde(default = "d_true")]
    pub timing: bool,
}

fn default_parametric() -> ParametricFitConfig {
    ParametricFitConfig::default()
}

impl Default for ComparisonConfig {
    fn default() -> Self {
        ComparisonConfig {
            dgp: DgpConfig::default(),
            p_list: d_plist(),
            r_list: d_rlist(),
            methods: d_methods(),
            conditional_r: None,
            target_process: 0,
            seeds: d_seeds(),
            train: TrainConfig::default(),
            parametric: default_parametric(),
            timing: true,
        }
    }
}

/// One row of the long-format results table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultRow<T> {
    pub p: usize,
    pub r: usize,
    pub method: Method,
    /// "joint" or "conditional".
    pub objective: String,
    pub mean_log_density: T,
    pub sd_log_density: T,
    pub wall_seconds: f64,
    pub seed: u64,
}

fn mean_sd<T: Real>(values: &[T]) -> (T, T) {
    let n = values.len();
    if n == 0 {
        return (T::zero(), T::zero());
    }
    let nf = lit::<T>(n as f64);
    let mut mean = T::zero();
    for v in values {
        mean += *v;
    }
    mean /= nf;
    if n == 1 {
        return (mean, T::zero());
    }
    let mut ss = T::zero();
    for v in values {
        let d = *v - mean;
        ss += d * d;
    }
    (mean, (ss / lit::<T>((n - 1) as f64)).sqrt())
}

/// Runs the full grid: per (seed, P) one simulation with the largest
/// training size; per (seed, P, R) a stage-1 parametric fit shared by the
/// baseline row and the transport-map initializations; per method a joint
/// (and, at `conditional_r`, a conditional) score over the test replicates.
/// Individual cell failures are logged and skipped.
pub fn run_comparison<T: Real>(cfg: &ComparisonConfig) -> Result<Vec<ResultRow<T>>> {
    if cfg.r_list.is_empty() || cfg.methods.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::invalid("comparison grid must be nonempty"));
    }
    cfg.train.validate()?;
    let r_max = *cfg.r_list.iter().max().unwrap();
    let mut rows = Vec::new();
    for &p in &cfg.p_list {
        for &seed in &cfg.seeds {
            let mut dgp = cfg.dgp.clone();
            dgp.p = p;
            dgp.r_train = r_max;
            dgp.seed = seed;
            let sim = simulate::<T>(&dgp)?;
            let test_rows: Vec<Vec<T>> = (0..sim.test.n_replicates())
                .map(|r| sim.test.replicates.row(r).iter().copied().collect())
                .collect();
            let target: Vec<usize> = sim
                .train
                .locations
                .iter()
                .enumerate()
                .filter(|(_, l)| l.process == cfg.target_process)
                .map(|(i, _)| i)
                .collect();
            for &r in &cfg.r_list {
                let train_r = sim.train.head_replicates(r);
                let stage_start = std::time::Instant::now();
                let mut pcfg = cfg.parametric.clone();
                pcfg.seed = seed;
                let stage1 = match init::stage1(&train_r, &pcfg) {
                    Ok(s) => s,
                    Err(e) => {
                        log::warn!("stage 1 failed at P={p} R={r} seed={seed}: {e}");
                        continue;
                    }
                };
                let stage_secs = stage_start.elapsed().as_secs_f64();
                for &method in &cfg.methods {
                    let run_conditional = cfg.conditional_r == Some(r)
                        && method != Method::Or
                        && p > 1;
                    let cell = run_cell(
                        cfg, &sim, &train_r, &stage1, method, &test_rows, &target,
                        run_conditional, seed,
                    );
                    match cell {
                        Ok(mut cell_rows) => {
                            for row in &mut cell_rows {
                                row.p = p;
                                row.r = r;
                                row.seed = seed;
                                if cfg.timing {
                                    row.wall_seconds += stage_secs;
                                } else {
                                    row.wall_seconds = 0.0;
                                }
                            }
                            rows.append(&mut cell_rows);
                        }
                        Err(e) => {
                            log::warn!("{method} failed at P={p} R={r} seed={seed}: {e}");
                        }
                    }
                }
            }
        }
    }
    Ok(rows)
}

#[allow(clippy::too_many_arguments)]
fn run_cell<T: Real>(
    cfg: &ComparisonConfig,
    sim: &SimOutput<T>,
    train_r: &Dataset<T>,
    stage1: &init::Stage1<T>,
    method: Method,
    test_rows: &[Vec<T>],
    target: &[usize],
    run_conditional: bool,
    seed: u64,
) -> Result<Vec<ResultRow<T>>> {
    let start = std::time::Instant::now();
    let mut out = Vec::new();
    let blank = |objective: &str, mean: T, sd: T, secs: f64| ResultRow {
        p: 0,
        r: 0,
        method,
        objective: objective.to_string(),
        mean_log_density: mean,
        sd_log_density: sd,
        wall_seconds: secs,
        seed,
    };
    match method.strategy() {
        None => {
            let scorer = ParametricScorer::new(&stage1.params, &train_r.locations)?;
            let scores: Vec<T> = test_rows
                .iter()
                .map(|row| scorer.log_density(row))
                .collect::<Result<_>>()?;
            let (mean, sd) = mean_sd(&scores);
            out.push(blank("joint", mean, sd, start.elapsed().as_secs_f64()));
            if run_conditional {
                let cstart = std::time::Instant::now();
                let cond = ParametricConditional::new(&stage1.params, &train_r.locations, target)?;
                let scores: Vec<T> = test_rows
                    .iter()
                    .map(|row| cond.conditional_log_density(row))
                    .collect::<Result<_>>()?;
                let (mean, sd) = mean_sd(&scores);
                out.push(blank("conditional", mean, sd, cstart.elapsed().as_secs_f64()));
            }
        }
        Some(strategy) => {
            let mut tcfg = cfg.train.clone();
            tcfg.strategy = strategy;
            tcfg.seed = seed;
            let theta0: HyperParams<T> = init::initial_theta(stage1.recovery.triangle.clone());
            let outcome = train::fit(train_r, &sim.val, &theta0, &stage1.recovery.q, &tcfg, None)?;
            let map = FittedMap::from_trained(
                &outcome.train_set,
                &outcome.theta,
                stage1.recovery.sbreve.clone(),
                train_r.locations.clone(),
                lit(tcfg.g),
                lit(tcfg.epsilon),
                None,
                MapMeta { seed, strategy: strategy.to_string(), ..MapMeta::default() },
            )?;
            let scores: Vec<T> = test_rows
                .iter()
                .map(|row| map.log_density(row))
                .collect::<Result<_>>()?;
            let (mean, sd) = mean_sd(&scores);
            out.push(blank("joint", mean, sd, start.elapsed().as_secs_f64()));
            if run_conditional {
                let cstart = std::time::Instant::now();
                let outcome = train::fit(
                    train_r,
                    &sim.val,
                    &theta0,
                    &stage1.recovery.q,
                    &tcfg,
                    Some(target),
                )?;
                let map = FittedMap::from_trained(
                    &outcome.train_set,
                    &outcome.theta,
                    stage1.recovery.sbreve.clone(),
                    train_r.locations.clone(),
                    lit(tcfg.g),
                    lit(tcfg.epsilon),
                    Some(target.to_vec()),
                    MapMeta { seed, strategy: strategy.to_string(), ..MapMeta::default() },
                )?;
                let scores: Vec<T> = test_rows
                    .iter()
                    .map(|row| map.conditional_log_density(row))
                    .collect::<Result<_>>()?;
                let (mean, sd) = mean_sd(&scores);
                out.push(blank("conditional", mean, sd, cstart.elapsed().as_secs_f64()));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn component_counts() {
        let cfg = DgpConfig { p: 2, grid_side: 4, r_train: 3, r_val: 2, r_test: 2, ..DgpConfig::default() };
        let sim = simulate::<f64>(&cfg).unwrap();
        assert_eq!(sim.train.n_components(), 32);
        assert_eq!(sim.train.n_replicates(), 3);
        assert_eq!(sim.val.n_replicates(), 2);
        assert_eq!(sim.test.n_replicates(), 2);
        let cfg5 = DgpConfig { p: 5, grid_side: 4, r_train: 1, r_val: 1, r_test: 1, ..DgpConfig::default() };
        let sim5 = simulate::<f64>(&cfg5).unwrap();
        assert_eq!(sim5.train.n_components(), 80);
    }

    #[test]
    fn pinned_weight_value() {
        // Two colocated-process points at augmented distance 0.3 with range
        // 0.3 give weight e⁻¹.
        let locations = vec![
            SpatialLocation { coords: vec![0.0, 0.0], process: 0 },
            SpatialLocation { coords: vec![0.3, 0.0], process: 0 },
        ];
        let truth =
            TruthModel::build(locations, DMatrix::zeros(1, 0), 0.3, 2.0).unwrap();
        assert_relative_eq!(truth.weights[1][0], (-1.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(truth.weights[1][0], 0.367879, epsilon = 1e-6);
    }

    #[test]
    fn weights_nonincreasing_along_conditioning_sets() {
        let cfg = DgpConfig { p: 3, grid_side: 5, r_train: 1, r_val: 1, r_test: 1, ..DgpConfig::default() };
        let sim = simulate::<f64>(&cfg).unwrap();
        for w in &sim.truth.weights {
            for pair in w.windows(2) {
                assert!(pair[0] >= pair[1]);
            }
        }
    }

    #[test]
    fn recursion_is_stable_on_dense_grids() {
        // With capped weight norms the field stays bounded even at 16×16,
        // where raw kernel weights would sum to ≈ 6 per component and the
        // recursion would explode.
        let cfg = DgpConfig {
            p: 2,
            grid_side: 16,
            r_train: 10,
            r_val: 1,
            r_test: 1,
            seed: 7,
            ..DgpConfig::default()
        };
        let sim = simulate::<f64>(&cfg).unwrap();
        for w in &sim.truth.weights {
            let l1: f64 = w.iter().map(|v| v.abs()).sum();
            assert!(l1 <= WEIGHT_L1_CAP + 1e-12, "l1 = {l1}");
        }
        let max = sim
            .train
            .replicates
            .iter()
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        assert!(max < 50.0, "field magnitude {max}");
    }

    #[test]
    fn simulation_is_deterministic() {
        let cfg = DgpConfig { p: 2, grid_side: 4, r_train: 4, r_val: 2, r_test: 2, seed: 5, ..DgpConfig::default() };
        let a = simulate::<f64>(&cfg).unwrap();
        let b = simulate::<f64>(&cfg).unwrap();
        assert_eq!(a.train.replicates, b.train.replicates);
        assert_eq!(a.test.replicates, b.test.replicates);
        let cfg2 = DgpConfig { seed: 6, ..cfg };
        let c = simulate::<f64>(&cfg2).unwrap();
        assert_ne!(a.train.replicates, c.train.replicates);
    }

    #[test]
    fn log_density_matches_manual_recursion() {
        let cfg = DgpConfig { p: 2, grid_side: 3, r_train: 1, r_val: 1, r_test: 1, seed: 9, ..DgpConfig::default() };
        let sim = simulate::<f64>(&cfg).unwrap();
        let field: Vec<f64> = sim.train.replicates.row(0).iter().copied().collect();
        let truth = &sim.truth;
        let mut manual = 0.0;
        for pos in 0..truth.n_components() {
            let cond = &truth.plan.cond_sets[pos];
            let w = &truth.weights[pos];
            let mut lin = 0.0;
            let mut arg = 0.0;
            for (j, &prev) in cond.iter().enumerate() {
                let y = field[truth.plan.order[prev]];
                lin += w[j] * y;
                if j < 2 {
                    arg += w[j] * y;
                }
            }
            let f = lin + 2.0 * (4.0 * arg).sin();
            let d = truth.d[pos];
            let resid = field[truth.plan.order[pos]] - f;
            manual += -0.5 * (2.0 * std::f64::consts::PI).ln()
                - d.ln()
                - 0.5 * resid * resid / (d * d);
        }
        assert_relative_eq!(truth.log_density(&field).unwrap(), manual, epsilon = 1e-10);
    }

    #[test]
    fn zero_amplitude_gives_linear_recursion() {
        let cfg = DgpConfig {
            p: 2,
            grid_side: 3,
            r_train: 2,
            r_val: 1,
            r_test: 1,
            sine_amplitude: 0.0,
            seed: 3,
            ..DgpConfig::default()
        };
        let sim = simulate::<f64>(&cfg).unwrap();
        let truth = &sim.truth;
        let field: Vec<f64> = sim.train.replicates.row(1).iter().copied().collect();
        // With amplitude 0, f is exactly the linear combination.
        let pos = truth.n_components() - 1;
        let mut lin = 0.0;
        for (j, &prev) in truth.plan.cond_sets[pos].iter().enumerate() {
            lin += truth.weights[pos][j] * field[truth.plan.order[prev]];
        }
        let f = truth.f_value(pos, &field);
        assert_relative_eq!(f, lin, epsilon = 1e-12);
    }

    #[test]
    fn first_component_is_standard_normal() {
        let cfg = DgpConfig { p: 2, grid_side: 4, r_train: 4000, r_val: 1, r_test: 1, seed: 12, ..DgpConfig::default() };
        let sim = simulate::<f64>(&cfg).unwrap();
        let first = sim.truth.plan.order[0];
        let col = sim.train.replicates.column(first);
        let mean: f64 = col.iter().sum::<f64>() / 4000.0;
        let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3999.0;
        assert!(mean.abs() < 0.06, "mean {mean}");
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    fn tiny_comparison(timing: bool) -> ComparisonConfig {
        ComparisonConfig {
            dgp: DgpConfig { grid_side: 3, r_val: 3, r_test: 3, ..DgpConfig::default() },
            p_list: vec![2],
            r_list: vec![4, 6],
            methods: vec![Method::Cpp],
            conditional_r: None,
            target_process: 0,
            seeds: vec![11],
            train: TrainConfig {
                batch_size: 8,
                max_epochs: 2,
                patience: 2,
                ..TrainConfig::default()
            },
            parametric: ParametricFitConfig { subsample_sites: 9, iterations: 20, ..Default::default() },
            timing,
        }
    }

    #[test]
    fn comparison_bookkeeping_and_determinism() {
        let cfg = tiny_comparison(false);
        let rows = run_comparison::<f64>(&cfg).unwrap();
        assert_eq!(rows.len(), 2); // |p_list|·|r_list|·|methods|·|seeds|
        for row in &rows {
            assert_eq!(row.method, Method::Cpp);
            assert_eq!(row.objective, "joint");
            assert_eq!(row.wall_seconds, 0.0);
            assert!(row.mean_log_density.is_finite());
        }
        let rows2 = run_comparison::<f64>(&cfg).unwrap();
        for (a, b) in rows.iter().zip(&rows2) {
            assert_eq!(a.mean_log_density, b.mean_log_density);
            assert_eq!(a.sd_log_density, b.sd_log_density);
        }
    }

    #[test]
    fn comparison_conditional_rows() {
        let mut cfg = tiny_comparison(false);
        cfg.methods = vec![Method::Parametric, Method::Cpp];
        cfg.conditional_r = Some(6);
        let rows = run_comparison::<f64>(&cfg).unwrap();
        // 2 methods × 2 R joint + 2 methods × 1 R conditional.
        assert_eq!(rows.len(), 6);
        let cond: Vec<_> = rows.iter().filter(|r| r.objective == "conditional").collect();
        assert_eq!(cond.len(), 2);
        for row in cond {
            assert_eq!(row.r, 6);
        }
    }

    #[test]
    fn truth_score_bounds_fitted_models() {
        let cfg = tiny_comparison(false);
        let rows = run_comparison::<f64>(&cfg).unwrap();
        let mut dgp = cfg.dgp.clone();
        dgp.p = 2;
        dgp.r_train = 6;
        dgp.seed = 11;
        let sim = simulate::<f64>(&dgp).unwrap();
        let scores: Vec<f64> = (0..3)
            .map(|r| {
                let row: Vec<f64> = sim.test.replicates.row(r).iter().copied().collect();
                sim.truth.log_density(&row).unwrap()
            })
            .collect();
        let (truth_mean, truth_sd) = mean_sd(&scores);
        for row in rows {
            let se = (truth_sd + row.sd_log_density) / (3.0f64).sqrt();
            assert!(
                row.mean_log_density <= truth_mean + 3.0 * se + 1e-9,
                "method {} scored {} above truth {truth_mean} (se {se})",
                row.method,
                row.mean_log_density
            );
        }
    }
}
