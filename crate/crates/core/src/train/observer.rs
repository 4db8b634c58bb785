use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::models::{ModelBundle, SeedTensor};

/// Losses of one training iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStep {
    pub iteration: usize,
    pub l_d: f64,
    /// Present on generator-update iterations.
    pub l_g: Option<f64>,
    /// Content loss of the fixed seed; present on generator updates of G-opt runs.
    pub l_cl: Option<f64>,
    /// Seconds since training started.
    pub wall_time: f64,
}

/// One recorded point of a seed optimisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZOptCheckpoint {
    pub iteration: usize,
    pub mse: f64,
    pub kl: f64,
    pub seed_mean: f64,
    pub seed_std: f64,
    pub best_mse: f64,
}

/// Where a batch scored by the critic came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSource {
    Real,
    Interpolate,
    RandomSeed,
    FixedSeed,
}

/// Progress sink for the trainers. Every method has a no-op default.
pub trait Observer {
    fn step(&mut self, _step: &TrainStep) {}

    /// Called every `snapshot_every` iterations and once at the end with the
    /// current state of the model.
    fn snapshot(&mut self, _bundle: &ModelBundle) {}

    fn checkpoint(&mut self, _cp: &ZOptCheckpoint, _seed: &SeedTensor) {}

    /// Instrumentation hook: every batch the critic sees during training.
    fn critic_scored(&mut self, _source: SampleSource) {}

    /// Polled once per iteration; returning true stops the run.
    fn should_stop(&self) -> bool {
        false
    }
}

/// Observer that ignores everything.
pub struct NullObserver;

impl Observer for NullObserver {}

/// Shared cancellation flag.
#[derive(Clone, Debug, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

/// Writes steps and checkpoints as JSON lines.
pub struct JsonLinesObserver<W: Write> {
    out: W,
    cancel: Option<CancelToken>,
}

impl<W: Write> JsonLinesObserver<W> {
    pub fn new(out: W) -> Self {
        Self { out, cancel: None }
    }

    pub fn with_cancel(mut self, token: CancelToken) -> Self {
        self.cancel = Some(token);
        self
    }

    fn line<T: Serialize>(&mut self, v: &T) {
        if let Err(e) = serde_json::to_writer(&mut self.out, v).map_err(std::io::Error::from).and_then(|_| writeln!(self.out)) {
            log::warn!("cannot write training log: {e}");
        }
    }
}

impl<W: Write> Observer for JsonLinesObserver<W> {
    fn step(&mut self, step: &TrainStep) {
        self.line(step);
    }

    fn checkpoint(&mut self, cp: &ZOptCheckpoint, _seed: &SeedTensor) {
        self.line(cp);
    }

    fn should_stop(&self) -> bool {
        self.cancel.as_ref().is_some_and(CancelToken::is_cancelled)
    }
}
