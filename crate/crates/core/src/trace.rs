//! Per-iteration optimization history shared by all optimizers.

use alloc::string::String;
use alloc::vec::Vec;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub restart: usize,
    /// Continuation stage within the restart.
    pub stage: usize,
    /// Regularization of the stage.
    pub epsilon: f64,
    /// Counted across the stages of a restart.
    pub iteration: usize,
    /// Smoothed cluster value (density) or cost `J` (level set).
    pub objective: f64,
    /// `μ_k, …, μ_{k+c−1}` for the detected cluster of size `c`.
    pub eigenvalues: Vec<f64>,
    /// `ρ·g` for densities, smoothed area for level sets.
    pub mass: f64,
    pub step: f64,
    pub cluster_size: usize,
    pub accepted: bool,
}

/// Where and why a run stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceFailure {
    pub restart: usize,
    pub iteration: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptTrace {
    pub records: Vec<TraceRecord>,
    /// Restart whose final iterate was returned.
    pub best_restart: usize,
    pub failure: Option<TraceFailure>,
}

impl OptTrace {
    pub fn push(&mut self, record: TraceRecord) {
        self.records.push(record);
    }

    pub fn accepted(&self) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(|r| r.accepted)
    }

    pub fn best_objective(&self) -> Option<f64> {
        self.accepted().map(|r| r.objective).reduce(f64::max)
    }

    /// Accepted records of one restart, in order.
    pub fn restart(&self, restart: usize) -> impl Iterator<Item = &TraceRecord> {
        self.accepted().filter(move |r| r.restart == restart)
    }
}
