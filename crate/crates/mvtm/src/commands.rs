//! Command implementations behind the CLI binary: file formats (CSV for
//! tabular data, JSON for models and metadata) and the end-to-end
//! simulate / fit / sample / score / preprocess / compare flows.
//!
//! Conventions: component and process ids are 1-based in files, 0-based in
//! memory; replicate files carry one header row `y1,...,yN` whose column
//! order is the component order of `locations.csv`; floating-point output
//! uses round-trip (shortest exact) decimal formatting.

use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{Dataset, SpatialLocation};
use crate::error::{Error, Result};
use crate::init::{self, ParametricConditional, ParametricParams, ParametricScorer};
use crate::map::{FittedMap, MapMeta};
use crate::prior::encode_latent;
use crate::simgen::{self, ResultRow, TruthModel, M_DGP};
use crate::train::{self, Strategy};

/// Scoring-form note recorded in every fitted artifact.
const SCORING_NOTE: &str =
    "holdout scoring uses the posterior predictive (training-conditioned) density";
const MDS_NOTE: &str =
    "latent recovery uses Torgerson-scaled Gram entries (half factor) and anchors process 1";
const DGP_NOTES: [&str; 4] = [
    "generator weights are direct exponential-kernel evaluations in the augmented space",
    "generator weight vectors are rescaled to L1 norm <= 0.9 when they exceed it, keeping the recursion stable on dense grids",
    "generator noise scales follow d_1 = 1, d_i = min(1, sqrt(ell_i))",
    "generator conditioning sets use m = 10 nearest previous neighbors",
];

fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::from("nan")
    }
}

fn parse_f(s: &str, ctx: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::data(format!("cannot parse number '{s}' in {ctx}")))
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// Writes `locations.csv`: component_id, process_id, x1..xD (ids 1-based).
pub fn write_locations_csv(path: &Path, locations: &[SpatialLocation<f64>]) -> Result<()> {
    let dims = locations.first().map(|l| l.coords.len()).unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["component_id".to_string(), "process_id".to_string()];
    for d in 0..dims {
        header.push(format!("x{}", d + 1));
    }
    w.write_record(&header)?;
    for (i, loc) in locations.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string(), (loc.process + 1).to_string()];
        for c in &loc.coords {
            rec.push(fmt_f(*c));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_locations_csv(path: &Path) -> Result<Vec<SpatialLocation<f64>>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "component_id" || &header[1] != "process_id" {
        return Err(Error::data(format!(
            "{}: expected header component_id,process_id,x1,...",
            path.display()
        )));
    }
    for (d, name) in header.iter().skip(2).enumerate() {
        if name != format!("x{}", d + 1) {
            return Err(Error::data(format!(
                "{}: coordinate column {} named '{name}', expected 'x{}'",
                path.display(),
                d + 3,
                d + 1
            )));
        }
    }
    let dims = header.len() - 2;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != dims + 2 {
            return Err(Error::data(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                i + 2,
                rec.len(),
                dims + 2
            )));
        }
        let id: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("{}: bad component_id '{}'", path.display(), &rec[0])))?;
        if id != i + 1 {
            return Err(Error::data(format!(
                "{}: component_id {id} out of order at row {}",
                path.display(),
                i + 2
            )));
        }
        let proc: usize = rec[1]
            .trim()
            .parse()
            .map_err(|_| Error::data(format!("{}: bad process_id '{}'", path.display(), &rec[1])))?;
        if proc == 0 {
            return Err(Error::data(format!(
                "{}: process_id is 1-based, found 0 at row {}",
                path.display(),
                i + 2
            )));
        }
        let mut coords = Vec::with_capacity(dims);
        for d in 0..dims {
            coords.push(parse_f(&rec[d + 2], &format!("{} row {}", path.display(), i + 2))?);
        }
        out.push(SpatialLocation { coords, process: proc - 1 });
    }
    if out.is_empty() {
        return Err(Error::data(format!("{}: no locations", path.display())));
    }
    Ok(out)
}

/// Writes a replicate matrix with header `y1,...,yN` (one row per replicate).
pub fn write_replicates_csv(path: &Path, reps: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = reps.ncols();
    let header: Vec<String> = (1..=n).map(|i| format!("y{i}")).collect();
    w.write_record(&header)?;
    for r in 0..reps.nrows() {
        let rec: Vec<String> = (0..n).map(|c| fmt_f(reps[(r, c)])).collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a replicate matrix; the header must be exactly `y1,...,yN`.
pub fn read_replicates_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let header = r.headers()?.clone();
    let n = header.len();
    if n == 0 {
        return Err(Error::data(format!("{}: empty header", path.display())));
    }
    for (i, name) in header.iter().enumerate() {
        if name != format!("y{}", i + 1) {
            return Err(Error::data(format!(
                "{}: column {} named '{name}', expected 'y{}'",
                path.display(),
                i + 1,
                i + 1
            )));
        }
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != n {
            return Err(Error::data(format!(
                "{}: row {} has {} fields, expected {n}",
                path.display(),
                i + 2,
                rec.len()
            )));
        }
        let mut row = Vec::with_capacity(n);
        for f in rec.iter() {
            row.push(parse_f(f, &format!("{} row {}", path.display(), i + 2))?);
        }
        rows.push(row);
    }
    let m = rows.len();
    Ok(DMatrix::from_fn(m, n, |i, j| rows[i][j]))
}

/// Serialized parametric baseline (params plus the component layout needed
/// to assemble covariances at scoring time).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParametricModelFile {
    pub params: ParametricParams<f64>,
    pub locations: Vec<SpatialLocation<f64>>,
    /// 0-based component indices of the conditional target block, if any.
    pub target_block: Option<Vec<usize>>,
    pub meta: MapMeta,
}

impl ParametricModelFile {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}

/// Output of stage-1-only fitting: baseline params and recovered positions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stage1File {
    pub params: ParametricParams<f64>,
    /// Recovered latent positions, one row per process.
    pub latent_positions: Vec<Vec<f64>>,
    /// Upper-triangle encoding (diagonal logged) for HyperParams.
    pub latent_triangle: Vec<f64>,
    pub meta: MapMeta,
}

/// Metadata written next to simulated data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimMeta {
    pub seed: u64,
    pub config_sha256: String,
    pub p: usize,
    pub grid_side: usize,
    pub r_train: usize,
    pub r_val: usize,
    pub r_test: usize,
    pub weight_range: f64,
    pub sine_amplitude: f64,
    pub m_dgp: usize,
    pub true_latent: Vec<Vec<f64>>,
    pub notes: Vec<String>,
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

/// `simulate`: writes locations.csv, train/val/test.csv, truth.json, meta.json.
pub fn cmd_simulate(cfg: &RunConfig, config_hash: &str, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let sim = simgen::simulate::<f64>(&cfg.dgp)?;
    write_locations_csv(&out_dir.join("locations.csv"), &sim.train.locations)?;
    write_replicates_csv(&out_dir.join("train.csv"), &sim.train.replicates)?;
    write_replicates_csv(&out_dir.join("val.csv"), &sim.val.replicates)?;
    write_replicates_csv(&out_dir.join("test.csv"), &sim.test.replicates)?;
    let truth_file = std::fs::File::create(out_dir.join("truth.json"))?;
    serde_json::to_writer(BufWriter::new(truth_file), &sim.truth)?;
    let latent = &sim.truth.latent;
    let meta = SimMeta {
        seed: cfg.dgp.seed,
        config_sha256: config_hash.to_string(),
        p: cfg.dgp.p,
        grid_side: cfg.dgp.grid_side,
        r_train: cfg.dgp.r_train,
        r_val: cfg.dgp.r_val,
        r_test: cfg.dgp.r_test,
        weight_range: cfg.dgp.weight_range,
        sine_amplitude: cfg.dgp.sine_amplitude,
        m_dgp: M_DGP,
        true_latent: (0..latent.nrows())
            .map(|i| (0..latent.ncols()).map(|j| latent[(i, j)]).collect())
            .collect(),
        notes: DGP_NOTES.iter().map(|s| s.to_string()).collect(),
    };
    let meta_file = std::fs::File::create(out_dir.join("meta.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(meta_file), &meta)?;
    Ok(())
}

/// Options of the `fit` command.
#[derive(Clone, Debug, Default)]
pub struct FitOptions {
    pub strategy: Option<Strategy>,
    /// 1-based process id; orders that process's components last and
    /// produces a conditional-inference map.
    pub conditional: Option<usize>,
    pub stage1_only: bool,
    pub skip_stage1: bool,
    pub latent_positions: Option<PathBuf>,
    pub trace_out: Option<PathBuf>,
    pub parametric_out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Reads a latent-position CSV (`l1,...,lL` header, one row per process).
pub fn read_latent_csv(path: &Path, p: usize) -> Result<DMatrix<f64>> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    let header = r.headers()?.clone();
    for (i, name) in header.iter().enumerate() {
        if name != format!("l{}", i + 1) {
            return Err(Error::data(format!(
                "{}: column {} named '{name}', expected 'l{}'",
                path.display(),
                i + 1,
                i + 1
            )));
        }
    }
    let l = header.len();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut row = Vec::with_capacity(l);
        for f in rec.iter() {
            row.push(parse_f(f, &path.display().to_string())?);
        }
        rows.push(row);
    }
    if rows.len() != p {
        return Err(Error::data(format!(
            "{}: {} rows, expected one per process ({p})",
            path.display(),
            rows.len()
        )));
    }
    Ok(DMatrix::from_fn(p, l, |i, j| rows[i][j]))
}

fn write_latent_rows(sbreve: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..sbreve.nrows())
        .map(|i| (0..sbreve.ncols()).map(|j| sbreve[(i, j)]).collect())
        .collect()
}

/// Writes the per-epoch training trace.
pub fn write_trace_csv(path: &Path, trace: &[train::EpochRecord<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_obj", "val_obj", "lr", "reordered", "patience_counter"])?;
    for rec in trace {
        w.write_record(&[
            rec.epoch.to_string(),
            fmt_f(rec.train_obj),
            fmt_f(rec.val_obj),
            fmt_f(rec.lr),
            rec.reordered.to_string(),
            rec.patience_counter.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `fit`: stage 1 (parametric + latent recovery) then stage 2 (Algorithm 1),
/// writing the fitted map JSON and optional side artifacts.
pub fn cmd_fit(
    cfg: &RunConfig,
    config_hash: &str,
    data_dir: &Path,
    out_model: &Path,
    opts: &FitOptions,
) -> Result<()> {
    let locations = read_locations_csv(&data_dir.join("locations.csv"))?;
    let train_reps = read_replicates_csv(&data_dir.join("train.csv"))?;
    let val_reps = read_replicates_csv(&data_dir.join("val.csv"))?;
    let train_ds = Dataset::new(locations.clone(), train_reps)?;
    let val_ds = Dataset::new(locations.clone(), val_reps)?;
    let p = train_ds.n_processes();

    let mut tcfg = cfg.train.clone();
    if let Some(s) = opts.strategy {
        tcfg.strategy = s;
    }
    let mut pcfg = cfg.parametric.clone();
    if let Some(seed) = opts.seed {
        tcfg.seed = seed;
        pcfg.seed = seed;
    }

    let (params, sbreve, latent_q, triangle) = if opts.skip_stage1 {
        if p > 1 {
            let path = opts.latent_positions.as_ref().ok_or_else(|| {
                Error::invalid("--skip-stage1 with P > 1 requires --latent-positions")
            })?;
            let given = read_latent_csv(path, p)?;
            let (q, tri, rebuilt) = encode_latent(&given)?;
            (None, rebuilt, q, tri)
        } else {
            (None, DMatrix::zeros(1, 0), DMatrix::zeros(0, 0), Vec::new())
        }
    } else {
        let s1 = init::stage1(&train_ds, &pcfg)?;
        (
            Some(s1.params),
            s1.recovery.sbreve,
            s1.recovery.q,
            s1.recovery.triangle,
        )
    };

    let meta = MapMeta {
        seed: tcfg.seed,
        strategy: tcfg.strategy.to_string(),
        config_sha256: config_hash.to_string(),
        notes: vec![SCORING_NOTE.to_string(), MDS_NOTE.to_string()],
    };

    if opts.stage1_only {
        let params = params.ok_or_else(|| {
            Error::invalid("--stage1-only cannot be combined with --skip-stage1")
        })?;
        let file = Stage1File {
            params,
            latent_positions: write_latent_rows(&sbreve),
            latent_triangle: triangle,
            meta,
        };
        let f = std::fs::File::create(out_model)?;
        serde_json::to_writer_pretty(BufWriter::new(f), &file)?;
        return Ok(());
    }

    let target: Option<Vec<usize>> = match opts.conditional {
        Some(proc1) => {
            if proc1 == 0 || proc1 > p {
                return Err(Error::invalid(format!(
                    "--conditional process {proc1} out of range (1..={p})"
                )));
            }
            let t: Vec<usize> = locations
                .iter()
                .enumerate()
                .filter(|(_, l)| l.process == proc1 - 1)
                .map(|(i, _)| i)
                .collect();
            Some(t)
        }
        None => None,
    };

    let theta0 = init::initial_theta(triangle);
    let outcome = train::fit(&train_ds, &val_ds, &theta0, &latent_q, &tcfg, target.as_deref())?;
    if let Some(trace_path) = &opts.trace_out {
        write_trace_csv(trace_path, &outcome.trace)?;
    }
    let map = FittedMap::from_trained(
        &outcome.train_set,
        &outcome.theta,
        sbreve,
        locations.clone(),
        tcfg.g,
        tcfg.epsilon,
        target.clone(),
        meta.clone(),
    )?;
    map.save(out_model)?;
    if let Some(ppath) = &opts.parametric_out {
        let params = params.ok_or_else(|| {
            Error::invalid("--parametric-out requires stage 1 (omit --skip-stage1)")
        })?;
        ParametricModelFile { params, locations, target_block: target, meta }.save(ppath)?;
    }
    Ok(())
}

/// `sample`: joint or conditional draws from a fitted map.
pub fn cmd_sample(
    model_path: &Path,
    count: usize,
    seed: u64,
    out: &Path,
    conditional: bool,
    observed: Option<&Path>,
) -> Result<()> {
    let map = FittedMap::<f64>::load(model_path)?;
    let draws = if conditional {
        let obs_path = observed
            .ok_or_else(|| Error::invalid("--conditional sampling requires --observed FILE"))?;
        let obs = read_replicates_csv(obs_path)?;
        if obs.nrows() != 1 {
            return Err(Error::data(format!(
                "{}: expected exactly one observed replicate row, found {}",
                obs_path.display(),
                obs.nrows()
            )));
        }
        let row: Vec<f64> = obs.row(0).iter().copied().collect();
        map.conditional_sample(&row, count, seed)?
    } else {
        if count == 0 {
            DMatrix::zeros(0, map.n_components())
        } else {
            map.sample(count, seed)?
        }
    };
    write_replicates_csv(out, &draws)?;
    Ok(())
}

/// Model kinds the scorer understands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Mvtm,
    Parametric,
    Truth,
}

/// `score`: per-replicate log densities plus their mean.
pub fn cmd_score(
    model_path: &Path,
    kind: ModelKind,
    data_path: &Path,
    out: &Path,
    conditional: bool,
) -> Result<()> {
    let reps = read_replicates_csv(data_path)?;
    if reps.nrows() == 0 {
        return Err(Error::data(format!("{}: no replicates to score", data_path.display())));
    }
    let fields: Vec<Vec<f64>> = (0..reps.nrows())
        .map(|r| reps.row(r).iter().copied().collect())
        .collect();
    let scores: Vec<f64> = match kind {
        ModelKind::Mvtm => {
            let map = FittedMap::<f64>::load(model_path)?;
            if map.n_components() != reps.ncols() {
                return Err(Error::data(format!(
                    "data has {} components, model has {}",
                    reps.ncols(),
                    map.n_components()
                )));
            }
            fields
                .iter()
                .map(|f| {
                    if conditional {
                        map.conditional_log_density(f)
                    } else {
                        map.log_density(f)
                    }
                })
                .collect::<Result<_>>()?
        }
        ModelKind::Parametric => {
            let file = ParametricModelFile::load(model_path)?;
            if file.locations.len() != reps.ncols() {
                return Err(Error::data(format!(
                    "data has {} components, model has {}",
                    reps.ncols(),
                    file.locations.len()
                )));
            }
            if conditional {
                let target = file.target_block.clone().ok_or_else(|| {
                    Error::invalid("parametric model was saved without a target block")
                })?;
                let scorer = ParametricConditional::new(&file.params, &file.locations, &target)?;
                fields
                    .iter()
                    .map(|f| scorer.conditional_log_density(f))
                    .collect::<Result<_>>()?
            } else {
                let scorer = ParametricScorer::new(&file.params, &file.locations)?;
                fields
                    .iter()
                    .map(|f| scorer.log_density(f))
                    .collect::<Result<_>>()?
            }
        }
        ModelKind::Truth => {
            if conditional {
                return Err(Error::invalid("conditional scoring is not defined for the generator"));
            }
            let f = std::fs::File::open(model_path)?;
            let truth: TruthModel<f64> = serde_json::from_reader(BufReader::new(f))?;
            if truth.n_components() != reps.ncols() {
                return Err(Error::data(format!(
                    "data has {} components, generator has {}",
                    reps.ncols(),
                    truth.n_components()
                )));
            }
            fields
                .iter()
                .map(|f| truth.log_density(f))
                .collect::<Result<_>>()?
        }
    };
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["replicate", "log_density"])?;
    for (i, s) in scores.iter().enumerate() {
        w.write_record(&[(i + 1).to_string(), fmt_f(*s)])?;
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    w.write_record(&["mean".to_string(), fmt_f(mean)])?;
    w.flush()?;
    Ok(())
}

/// `preprocess`: pixel-wise standardization of a replicate matrix
/// (per-column mean removed, sample SD divided out).
pub fn cmd_preprocess(input: &Path, out: &Path, stats_out: Option<&Path>) -> Result<()> {
    let reps = read_replicates_csv(input)?;
    let (r, n) = (reps.nrows(), reps.ncols());
    if r < 2 {
        return Err(Error::data(format!(
            "{}: at least two replicates are required for standardization",
            input.display()
        )));
    }
    let mut out_m = DMatrix::<f64>::zeros(r, n);
    let mut means = vec![0.0; n];
    let mut sds = vec![0.0; n];
    for c in 0..n {
        let col = reps.column(c);
        let mean = col.iter().sum::<f64>() / r as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (r as f64 - 1.0)).sqrt();
        if sd < 1e-12 {
            return Err(Error::data(format!(
                "column y{} has (near-)zero variance; cannot standardize",
                c + 1
            )));
        }
        for i in 0..r {
            out_m[(i, c)] = (reps[(i, c)] - mean) / sd;
        }
        means[c] = mean;
        sds[c] = sd;
    }
    write_replicates_csv(out, &out_m)?;
    if let Some(sp) = stats_out {
        let mut w = csv::Writer::from_path(sp)?;
        w.write_record(["component", "mean", "sd"])?;
        for c in 0..n {
            w.write_record(&[(c + 1).to_string(), fmt_f(means[c]), fmt_f(sds[c])])?;
        }
        w.flush()?;
    }
    Ok(())
}

/// Writes the comparison results table.
pub fn write_results_csv(path: &Path, rows: &[ResultRow<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "P",
        "R",
        "method",
        "objective",
        "mean_log_density",
        "sd_log_density",
        "wall_seconds",
        "seed",
    ])?;
    for row in rows {
        w.write_record(&[
            row.p.to_string(),
            row.r.to_string(),
            row.method.to_string(),
            row.objective.clone(),
            fmt_f(row.mean_log_density),
            fmt_f(row.sd_log_density),
            fmt_f(row.wall_seconds),
            row.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `compare`: runs the comparison grid and writes the long-format table.
pub fn cmd_compare(cfg: &RunConfig, out: &Path, no_timing: bool, seed: Option<u64>) -> Result<()> {
    let mut ccfg = cfg.comparison();
    if no_timing {
        ccfg.timing = false;
    }
    if let Some(s) = seed {
        ccfg.seeds = vec![s];
    }
    let rows = simgen::run_comparison::<f64>(&ccfg)?;
    write_results_csv(out, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::DgpConfig;
    use approx::assert_relative_eq;

    fn small_config() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.dgp = DgpConfig {
            p: 2,
            grid_side: 3,
            r_train: 6,
            r_val: 4,
            r_test: 3,
            seed: 2,
            ..DgpConfig::default()
        };
        cfg.train.batch_size = 16;
        cfg.train.max_epochs = 3;
        cfg.train.patience = 3;
        cfg.parametric.subsample_sites = 9;
        cfg.parametric.iterations = 25;
        cfg
    }

    #[test]
    fn simulate_writes_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        cmd_simulate(&cfg, "deadbeef", dir.path()).unwrap();
        let locs = read_locations_csv(&dir.path().join("locations.csv")).unwrap();
        assert_eq!(locs.len(), 18);
        let train = read_replicates_csv(&dir.path().join("train.csv")).unwrap();
        assert_eq!((train.nrows(), train.ncols()), (6, 18));
        let meta: SimMeta = serde_json::from_reader(
            std::fs::File::open(dir.path().join("meta.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(meta.m_dgp, 10);
        assert_eq!(meta.config_sha256, "deadbeef");
    }

    #[test]
    fn simulate_rerun_is_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let cfg = small_config();
        cmd_simulate(&cfg, "h", d1.path()).unwrap();
        cmd_simulate(&cfg, "h", d2.path()).unwrap();
        for f in ["locations.csv", "train.csv", "val.csv", "test.csv", "truth.json", "meta.json"] {
            let a = std::fs::read(d1.path().join(f)).unwrap();
            let b = std::fs::read(d2.path().join(f)).unwrap();
            assert_eq!(a, b, "file {f} differs");
        }
    }

    #[test]
    fn locations_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("locations.csv");
        let locs = vec![
            SpatialLocation { coords: vec![0.0, 0.25], process: 0 },
            SpatialLocation { coords: vec![0.1000000000000001, 1.0 / 3.0], process: 1 },
        ];
        write_locations_csv(&path, &locs).unwrap();
        let back = read_locations_csv(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].process, 0);
        assert_eq!(back[1].process, 1);
        assert_eq!(back[1].coords[0], 0.1000000000000001);
        assert_eq!(back[1].coords[1], 1.0 / 3.0);
    }

    #[test]
    fn replicates_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let m = DMatrix::from_row_slice(2, 3, &[0.1, -2.5e-17, 3.0, f64::MIN_POSITIVE, 1e300, -0.0]);
        write_replicates_csv(&path, &m).unwrap();
        let back = read_replicates_csv(&path).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert_eq!(m[(i, j)].to_bits(), back[(i, j)].to_bits());
            }
        }
    }

    #[test]
    fn replicates_header_validated() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "y1,z2\n0.0,0.0\n").unwrap();
        assert!(read_replicates_csv(&path).is_err());
    }

    #[test]
    fn fit_sample_score_flow() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        cmd_simulate(&cfg, "h", dir.path()).unwrap();
        let model = dir.path().join("model.json");
        let trace = dir.path().join("trace.csv");
        let pout = dir.path().join("parametric.json");
        let opts = FitOptions {
            trace_out: Some(trace.clone()),
            parametric_out: Some(pout.clone()),
            ..FitOptions::default()
        };
        cmd_fit(&cfg, "h", dir.path(), &model, &opts).unwrap();
        assert!(trace.exists());

        let samples = dir.path().join("samples.csv");
        cmd_sample(&model, 4, 9, &samples, false, None).unwrap();
        let s = read_replicates_csv(&samples).unwrap();
        assert_eq!((s.nrows(), s.ncols()), (4, 18));
        cmd_sample(&model, 0, 9, &samples, false, None).unwrap();
        let s0 = read_replicates_csv(&samples).unwrap();
        assert_eq!(s0.nrows(), 0);

        let scores = dir.path().join("scores.csv");
        cmd_score(&model, ModelKind::Mvtm, &dir.path().join("test.csv"), &scores, false).unwrap();
        let content = std::fs::read_to_string(&scores).unwrap();
        let lines: Vec<&str> = content.lines().collect();
        assert_eq!(lines.len(), 1 + 3 + 1); // header + 3 replicates + mean
        let vals: Vec<f64> = lines[1..4]
            .iter()
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        let mean: f64 = lines[4].split(',').nth(1).unwrap().parse().unwrap();
        assert_relative_eq!(mean, vals.iter().sum::<f64>() / 3.0, epsilon = 1e-12);

        // Parametric and truth scoring on the same data.
        cmd_score(&pout, ModelKind::Parametric, &dir.path().join("test.csv"), &scores, false)
            .unwrap();
        cmd_score(
            &dir.path().join("truth.json"),
            ModelKind::Truth,
            &dir.path().join("test.csv"),
            &scores,
            false,
        )
        .unwrap();
    }

    #[test]
    fn truth_self_score_matches_analytic() {
        // Scoring simulated data with the generator reproduces
        // TruthModel::log_density exactly.
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        cmd_simulate(&cfg, "h", dir.path()).unwrap();
        let scores = dir.path().join("scores.csv");
        cmd_score(
            &dir.path().join("truth.json"),
            ModelKind::Truth,
            &dir.path().join("train.csv"),
            &scores,
            false,
        )
        .unwrap();
        let sim = simgen::simulate::<f64>(&cfg.dgp).unwrap();
        let content = std::fs::read_to_string(&scores).unwrap();
        let first: f64 = content
            .lines()
            .nth(1)
            .unwrap()
            .split(',')
            .nth(1)
            .unwrap()
            .parse()
            .unwrap();
        let row: Vec<f64> = sim.train.replicates.row(0).iter().copied().collect();
        let expect = sim.truth.log_density(&row).unwrap();
        assert_relative_eq!(first, expect, epsilon = 1e-9);
    }

    #[test]
    fn conditional_fit_and_conditional_scoring() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        cmd_simulate(&cfg, "h", dir.path()).unwrap();
        let model = dir.path().join("cmodel.json");
        let pout = dir.path().join("cparam.json");
        let opts = FitOptions {
            conditional: Some(1),
            parametric_out: Some(pout.clone()),
            ..FitOptions::default()
        };
        cmd_fit(&cfg, "h", dir.path(), &model, &opts).unwrap();
        let scores = dir.path().join("cs.csv");
        cmd_score(&model, ModelKind::Mvtm, &dir.path().join("test.csv"), &scores, true).unwrap();
        cmd_score(&pout, ModelKind::Parametric, &dir.path().join("test.csv"), &scores, true)
            .unwrap();
        // Conditional sampling given the first test replicate as observed.
        let obs = dir.path().join("obs.csv");
        let test = read_replicates_csv(&dir.path().join("test.csv")).unwrap();
        write_replicates_csv(&obs, &test.rows(0, 1).into_owned()).unwrap();
        let cs = dir.path().join("csamples.csv");
        cmd_sample(&model, 3, 4, &cs, true, Some(&obs)).unwrap();
        let draws = read_replicates_csv(&cs).unwrap();
        assert_eq!(draws.nrows(), 3);
    }

    #[test]
    fn stage1_only_and_skip_stage1() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config();
        cmd_simulate(&cfg, "h", dir.path()).unwrap();
        let s1 = dir.path().join("stage1.json");
        let opts = FitOptions { stage1_only: true, ..FitOptions::default() };
        cmd_fit(&cfg, "h", dir.path(), &s1, &opts).unwrap();
        let file: Stage1File =
            serde_json::from_reader(std::fs::File::open(&s1).unwrap()).unwrap();
        assert_eq!(file.latent_positions.len(), 2);

        // Feed the recovered positions back through --skip-stage1.
        let latent = dir.path().join("latent.csv");
        let mut w = csv::Writer::from_path(&latent).unwrap();
        w.write_record(["l1"]).unwrap();
        for row in &file.latent_positions {
            w.write_record(&[fmt_f(row[0])]).unwrap();
        }
        w.flush().unwrap();
        drop(w);
        let model = dir.path().join("m2.json");
        let opts = FitOptions {
            skip_stage1: true,
            latent_positions: Some(latent),
            ..FitOptions::default()
        };
        cmd_fit(&cfg, "h", dir.path(), &model, &opts).unwrap();
        assert!(model.exists());
    }

    #[test]
    fn preprocess_standardizes_and_rejects_constant_columns() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.csv");
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 6.0, 3.0, 10.0]);
        write_replicates_csv(&input, &m).unwrap();
        let out = dir.path().join("out.csv");
        let stats = dir.path().join("stats.csv");
        cmd_preprocess(&input, &out, Some(&stats)).unwrap();
        let std = read_replicates_csv(&out).unwrap();
        for c in 0..2 {
            let col = std.column(c);
            let mean: f64 = col.iter().sum::<f64>() / 3.0;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 2.0;
            assert_relative_eq!(mean, 0.0, epsilon = 1e-12);
            assert_relative_eq!(var, 1.0, epsilon = 1e-12);
        }
        let constant = DMatrix::from_row_slice(3, 1, &[2.0, 2.0, 2.0]);
        write_replicates_csv(&input, &constant).unwrap();
        assert!(cmd_preprocess(&input, &out, None).is_err());
    }

    #[test]
    fn compare_command_writes_table() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config();
        cfg.compare.r_list = vec![4];
        cfg.compare.methods = vec![crate::simgen::Method::Cpp];
        cfg.compare.seeds = vec![3];
        let out = dir.path().join("results.csv");
        cmd_compare(&cfg, &out, true, None).unwrap();
        let content = std::fs::read_to_string(&out).unwrap();
        let lines: Vec<&str> = content.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("P,R,method"));
        assert!(lines[1].starts_with("2,4,cpp,joint,"));
        // Deterministic rerun.
        let out2 = dir.path().join("results2.csv");
        cmd_compare(&cfg, &out2, true, None).unwrap();
        assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&out2).unwrap());
    }
}
