//! Ensembles of paths and the order-preserving parallel map over them.
//!
//! Per-path results are collected in replicate order and reduced
//! sequentially, so ensemble statistics do not depend on the thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measure::AtomicMeasure;
use crate::path::MeasurePath;
use crate::scalar::Scalar;
use crate::simulator::{simulate_replicate, SimParams};

/// Per-path results in replicate order, with the indices of replicates that
/// hit the population cap and were excluded.
#[derive(Debug, Clone)]
pub struct EnsembleOutput<R> {
    pub values: Vec<R>,
    pub capped: Vec<usize>,
}

pub trait Ensemble<T: Scalar>: Sync {
    /// Number of replicates, including any that will turn out capped.
    fn replicates(&self) -> usize;

    fn map_paths<R, F>(&self, f: F) -> Result<EnsembleOutput<R>>
    where
        R: Send,
        F: Fn(&MeasurePath<T>) -> Result<R> + Sync + Send;
}

impl<T: Scalar> Ensemble<T> for [MeasurePath<T>] {
    fn replicates(&self) -> usize {
        self.len()
    }

    fn map_paths<R, F>(&self, f: F) -> Result<EnsembleOutput<R>>
    where
        R: Send,
        F: Fn(&MeasurePath<T>) -> Result<R> + Sync + Send,
    {
        let values = self.par_iter().map(&f).collect::<Result<Vec<R>>>()?;
        Ok(EnsembleOutput { values, capped: Vec::new() })
    }
}

impl<T: Scalar> Ensemble<T> for Vec<MeasurePath<T>> {
    fn replicates(&self) -> usize {
        self.len()
    }

    fn map_paths<R, F>(&self, f: F) -> Result<EnsembleOutput<R>>
    where
        R: Send,
        F: Fn(&MeasurePath<T>) -> Result<R> + Sync + Send,
    {
        self.as_slice().map_paths(f)
    }
}

/// Replicates simulated on demand; replicate `i` uses stream
/// `first_replicate + i` of the master seed, so any sub-range of an ensemble
/// can be regenerated without the rest.
#[derive(Debug, Clone)]
pub struct SimulatedEnsemble<T: Scalar> {
    pub initial: AtomicMeasure<T>,
    pub params: SimParams<T>,
    pub first_replicate: u64,
    pub replicates: usize,
}

impl<T: Scalar> SimulatedEnsemble<T> {
    pub fn new(initial: AtomicMeasure<T>, params: SimParams<T>, replicates: usize) -> Self {
        Self { initial, params, first_replicate: 0, replicates }
    }

    /// Disjoint halves `[0, n/2)` and `[n/2, n)` of the replicate range.
    pub fn split_half(&self) -> (Self, Self) {
        let half = self.replicates / 2;
        let mut fit = self.clone();
        fit.replicates = half;
        let mut holdout = self.clone();
        holdout.first_replicate = self.first_replicate + half as u64;
        holdout.replicates = self.replicates - half;
        (fit, holdout)
    }

    pub fn replicate(&self, i: usize) -> Result<MeasurePath<T>> {
        simulate_replicate(&self.initial, &self.params, self.first_replicate + i as u64)
    }
}

impl<T: Scalar> Ensemble<T> for SimulatedEnsemble<T> {
    fn replicates(&self) -> usize {
        self.replicates
    }

    fn map_paths<R, F>(&self, f: F) -> Result<EnsembleOutput<R>>
    where
        R: Send,
        F: Fn(&MeasurePath<T>) -> Result<R> + Sync + Send,
    {
        let outcomes: Vec<Result<Option<R>>> = (0..self.replicates)
            .into_par_iter()
            .map(|i| match self.replicate(i) {
                Ok(path) => f(&path).map(Some),
                Err(Error::PopulationCap { .. }) => Ok(None),
                Err(e) => Err(e),
            })
            .collect();
        let mut values = Vec::with_capacity(self.replicates);
        let mut capped = Vec::new();
        for (i, o) in outcomes.into_iter().enumerate() {
            match o? {
                Some(v) => values.push(v),
                None => capped.push(i),
            }
        }
        Ok(EnsembleOutput { values, capped })
    }
}

/// Fails on an ensemble that produced no usable paths.
pub(crate) fn nonempty<R>(out: EnsembleOutput<R>) -> Result<EnsembleOutput<R>> {
    if out.values.is_empty() {
        Err(Error::EmptyEnsemble)
    } else {
        Ok(out)
    }
}
