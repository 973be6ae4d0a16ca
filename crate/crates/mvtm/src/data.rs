//! In-memory containers for multivariate spatial replicate data.
//!
//! A *component* is one (spatial location, process) pair; a replicate assigns
//! one value to every component. Component, process and position indices are
//! 0-based in memory; file formats are 1-based (converted at the I/O layer).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{to_f64, Real};

/// One component's spatial coordinates and owning process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpatialLocation<T> {
    pub coords: Vec<T>,
    /// 0-based process index in `[0, P)`.
    pub process: usize,
}

/// Locations plus a replicate matrix (rows = replicates, columns = components
/// in component-id order).
#[derive(Clone, Debug)]
pub struct Dataset<T: Real> {
    pub locations: Vec<SpatialLocation<T>>,
    pub replicates: DMatrix<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(locations: Vec<SpatialLocation<T>>, replicates: DMatrix<T>) -> Result<Self> {
        validate_locations(&locations)?;
        if replicates.ncols() != locations.len() {
            return Err(Error::data(format!(
                "replicate matrix has {} columns but there are {} components",
                replicates.ncols(),
                locations.len()
            )));
        }
        if replicates.iter().any(|v| !to_f64(*v).is_finite()) {
            return Err(Error::data("replicate matrix contains non-finite values"));
        }
        Ok(Dataset {
            locations,
            replicates,
        })
    }

    /// Number of components.
    pub fn n_components(&self) -> usize {
        self.locations.len()
    }

    /// Number of replicates.
    pub fn n_replicates(&self) -> usize {
        self.replicates.nrows()
    }

    /// Number of processes (1 + max process index).
    pub fn n_processes(&self) -> usize {
        self.locations.iter().map(|l| l.process + 1).max().unwrap_or(0)
    }

    /// Dataset with only the first `r` replicates (shared locations).
    pub fn head_replicates(&self, r: usize) -> Dataset<T> {
        Dataset {
            locations: self.locations.clone(),
            replicates: self.replicates.rows(0, r.min(self.n_replicates())).into_owned(),
        }
    }
}

/// Checks dimensional consistency, finiteness and contiguous process ids.
pub fn validate_locations<T: Real>(locations: &[SpatialLocation<T>]) -> Result<()> {
    if locations.is_empty() {
        return Err(Error::data("no locations given"));
    }
    let dim = locations[0].coords.len();
    if dim == 0 {
        return Err(Error::data("locations must have at least one coordinate"));
    }
    let mut seen = vec![false; locations.iter().map(|l| l.process + 1).max().unwrap()];
    for (i, loc) in locations.iter().enumerate() {
        if loc.coords.len() != dim {
            return Err(Error::data(format!(
                "location {i} has {} coordinates, expected {dim}",
                loc.coords.len()
            )));
        }
        if loc.coords.iter().any(|c| !to_f64(*c).is_finite()) {
            return Err(Error::data(format!("location {i} has non-finite coordinates")));
        }
        seen[loc.process] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::data("process ids are not contiguous from 0"));
    }
    Ok(())
}
