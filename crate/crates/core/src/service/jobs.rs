use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

use super::store::Session;
use super::API_VERSION;
use crate::error::{Error, Result};
use crate::image::{encode_png, Micrograph, Region};
use crate::models::{ArchConfig, Method, ModelBundle, SeedTensor, MIN_SEED};
use crate::train::{
    evaluate_gopt, evaluate_zopt, optimize_seed, train_gopt, train_wgan, CancelToken, Observer, TrainStep,
    TrainingConfig, ZOptCheckpoint, ZOptConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobMethod {
    Gopt,
    ZoptTrain,
    ZoptOptimize,
}

impl JobMethod {
    /// Jobs that produce a new bundle.
    pub fn is_training(self) -> bool {
        !matches!(self, JobMethod::ZoptOptimize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Cancelling,
    Done,
    Failed,
    Partial,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed | JobState::Partial)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventBody {
    State {
        state: JobState,
    },
    Progress {
        iteration: usize,
        #[serde(skip_serializing_if = "Option::is_none")]
        train: Option<TrainStep>,
        #[serde(skip_serializing_if = "Option::is_none")]
        zopt: Option<ZOptCheckpoint>,
        /// URL of the preview image captured with this event.
        preview: Option<String>,
    },
    Terminal {
        state: JobState,
        error: Option<String>,
        bundle_id: Option<String>,
        result_id: Option<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JobEvent {
    pub v: u32,
    /// 1-based position in the job's event log.
    pub seq: u64,
    pub job_id: String,
    #[serde(flatten)]
    pub body: EventBody,
}

impl JobEvent {
    pub fn is_terminal(&self) -> bool {
        matches!(self.body, EventBody::Terminal { .. })
    }
}

/// Consistent view of a job, taken under its lock.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobSummary {
    pub v: u32,
    pub id: String,
    pub session_id: String,
    pub method: JobMethod,
    pub state: JobState,
    pub region: Option<Region>,
    pub config: serde_json::Value,
    /// Bundle read by a seed optimisation.
    pub input_bundle_id: Option<String>,
    /// Bundle written by a training job.
    pub bundle_id: Option<String>,
    pub result_id: Option<String>,
    pub progress: Option<EventBody>,
    pub preview: Option<String>,
    pub error: Option<String>,
    pub events: u64,
}

struct JobInner {
    state: JobState,
    events: Vec<JobEvent>,
    progress: Option<EventBody>,
    last_iteration: Option<usize>,
    preview: Option<Arc<Vec<u8>>>,
    error: Option<String>,
    bundle_id: Option<String>,
    result_id: Option<String>,
}

pub struct Job {
    pub id: String,
    pub session_id: String,
    pub method: JobMethod,
    pub region: Option<Region>,
    pub config: serde_json::Value,
    pub input_bundle_id: Option<String>,
    pub cancel: CancelToken,
    inner: Mutex<JobInner>,
    seq_tx: watch::Sender<u64>,
}

impl Job {
    pub fn new(
        id: String,
        session_id: String,
        method: JobMethod,
        region: Option<Region>,
        config: serde_json::Value,
        input_bundle_id: Option<String>,
    ) -> Self {
        let inner = JobInner {
            state: JobState::Queued,
            events: Vec::new(),
            progress: None,
            last_iteration: None,
            preview: None,
            error: None,
            bundle_id: None,
            result_id: None,
        };
        Self {
            id,
            session_id,
            method,
            region,
            config,
            input_bundle_id,
            cancel: CancelToken::new(),
            inner: Mutex::new(inner),
            seq_tx: watch::channel(0).0,
        }
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, JobInner> {
        self.inner.lock().expect("job lock")
    }

    fn push(inner: &mut JobInner, id: &str, body: EventBody) -> u64 {
        let seq = inner.events.len() as u64 + 1;
        inner.events.push(JobEvent { v: API_VERSION, seq, job_id: id.to_string(), body });
        seq
    }

    pub fn state(&self) -> JobState {
        self.lock().state
    }

    pub fn is_active(&self) -> bool {
        !self.state().is_terminal()
    }

    pub fn summary(&self) -> JobSummary {
        let g = self.lock();
        JobSummary {
            v: API_VERSION,
            id: self.id.clone(),
            session_id: self.session_id.clone(),
            method: self.method,
            state: g.state,
            region: self.region.clone(),
            config: self.config.clone(),
            input_bundle_id: self.input_bundle_id.clone(),
            bundle_id: g.bundle_id.clone(),
            result_id: g.result_id.clone(),
            progress: g.progress.clone(),
            preview: g.preview.as_ref().map(|_| self.preview_url()),
            error: g.error.clone(),
            events: g.events.len() as u64,
        }
    }

    pub fn preview(&self) -> Option<Arc<Vec<u8>>> {
        self.lock().preview.clone()
    }

    fn preview_url(&self) -> String {
        format!("/jobs/{}/preview", self.id)
    }

    /// Events with `seq > after`.
    pub fn events_after(&self, after: u64) -> Vec<JobEvent> {
        self.lock().events.iter().skip(after as usize).cloned().collect()
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.seq_tx.subscribe()
    }

    /// Request a stop. Running jobs move to `cancelling`; queued jobs stop
    /// as soon as they start.
    pub fn request_cancel(&self) {
        self.cancel.cancel();
        let mut g = self.lock();
        if g.state == JobState::Running {
            g.state = JobState::Cancelling;
            Self::push(&mut g, &self.id, EventBody::State { state: JobState::Cancelling });
            let seq = g.events.len() as u64;
            drop(g);
            self.seq_tx.send_replace(seq);
        }
    }

    fn start(&self) {
        let mut g = self.lock();
        debug_assert_eq!(g.state, JobState::Queued);
        g.state = JobState::Running;
        let mut seq = Self::push(&mut g, &self.id, EventBody::State { state: JobState::Running });
        // a cancel that arrived while queued
        if self.cancel.is_cancelled() {
            g.state = JobState::Cancelling;
            seq = Self::push(&mut g, &self.id, EventBody::State { state: JobState::Cancelling });
        }
        drop(g);
        self.seq_tx.send_replace(seq);
    }

    /// Record a progress point, dropping any whose iteration does not
    /// advance.
    fn progress(&self, iteration: usize, train: Option<TrainStep>, zopt: Option<ZOptCheckpoint>, preview: Option<Vec<u8>>) {
        let mut g = self.lock();
        if g.last_iteration.is_some_and(|last| iteration <= last) {
            return;
        }
        g.last_iteration = Some(iteration);
        let url = preview.is_some().then(|| self.preview_url());
        if let Some(p) = preview {
            g.preview = Some(Arc::new(p));
        }
        let body = EventBody::Progress { iteration, train, zopt, preview: url };
        g.progress = Some(body.clone());
        let seq = Self::push(&mut g, &self.id, body);
        drop(g);
        self.seq_tx.send_replace(seq);
    }

    fn finish(&self, state: JobState, error: Option<String>, bundle_id: Option<String>, result_id: Option<String>) {
        debug_assert!(state.is_terminal());
        let mut g = self.lock();
        g.state = state;
        g.error = error.clone();
        g.bundle_id = bundle_id.clone();
        g.result_id = result_id.clone();
        let seq = Self::push(&mut g, &self.id, EventBody::Terminal { state, error, bundle_id, result_id });
        drop(g);
        self.seq_tx.send_replace(seq);
    }
}

/// What a worker runs.
pub enum JobSpec {
    Gopt { region: Region, config: TrainingConfig, arch: ArchConfig, seed: u64 },
    ZoptTrain { region: Option<Region>, config: TrainingConfig, arch: ArchConfig, seed: u64 },
    ZoptOptimize { region: Region, bundle: Arc<ModelBundle>, bundle_id: String, config: ZOptConfig, seed: u64 },
}

/// Converts trainer callbacks into job events with previews.
struct JobObserver<'a> {
    job: &'a Job,
    image: &'a Micrograph,
    last_step: Option<TrainStep>,
    /// Fixed seed for previews of plain adversarial training.
    preview_seed: Option<SeedTensor>,
    zopt: Option<(&'a ModelBundle, &'a Region)>,
}

impl JobObserver<'_> {
    fn render(&self, bundle: &ModelBundle) -> Result<Vec<u8>> {
        match bundle.method {
            Method::Gopt => {
                // the preview never resamples, so this rng is not consumed
                let r = evaluate_gopt(bundle, self.image, false, &mut ChaCha8Rng::seed_from_u64(0))?;
                encode_png(&r.image)
            }
            Method::Wgan => {
                let z = self.preview_seed.as_ref().expect("preview seed set for plain training");
                let out = bundle.generator.forward_seed(z)?;
                encode_png(&Micrograph::from_output(&out, self.image.kind(), self.image.phase_values().to_vec())?)
            }
        }
    }
}

impl Observer for JobObserver<'_> {
    fn step(&mut self, step: &TrainStep) {
        self.last_step = Some(step.clone());
    }

    fn snapshot(&mut self, bundle: &ModelBundle) {
        let preview = self.render(bundle).map_err(|e| log::warn!("preview failed: {e}")).ok();
        self.job.progress(bundle.iterations, self.last_step.clone(), None, preview);
    }

    fn checkpoint(&mut self, cp: &ZOptCheckpoint, seed: &SeedTensor) {
        let (bundle, region) = self.zopt.expect("checkpoints come from seed optimisation");
        let preview = evaluate_zopt(bundle, seed, self.image, region)
            .and_then(|r| encode_png(&r.image))
            .map_err(|e| log::warn!("preview failed: {e}"))
            .ok();
        self.job.progress(cp.iteration, None, Some(cp.clone()), preview);
    }

    fn should_stop(&self) -> bool {
        self.job.cancel.is_cancelled()
    }
}

/// Blocking body of a job worker; always leaves the job in a terminal state.
pub fn run_job(session: &Session, job: &Job, spec: JobSpec) {
    job.start();
    let outcome = execute(session, job, spec);
    match outcome {
        Ok((partial, bundle_id, result_id)) => {
            let state = if partial { JobState::Partial } else { JobState::Done };
            job.finish(state, None, bundle_id, result_id);
        }
        Err(e) => {
            log::error!("job {} failed: {e}", job.id);
            job.finish(JobState::Failed, Some(e.to_string()), None, None);
        }
    }
}

type Outcome = (bool, Option<String>, Option<String>);

fn execute(session: &Session, job: &Job, spec: JobSpec) -> Result<Outcome> {
    let image = &*session.image;
    let mut obs = JobObserver { job, image, last_step: None, preview_seed: None, zopt: None };
    match spec {
        JobSpec::Gopt { region, config, arch, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bundle = train_gopt(image, &region, &config, &arch, &mut rng, &mut obs)?;
            let result = evaluate_gopt(&bundle, image, false, &mut rng)?;
            let partial = bundle.partial;
            let info = session.add_bundle(bundle, Some(job.id.clone()))?;
            let result = session.add_result(&result, Some(info.id.clone()), Some(seed))?;
            Ok((partial, Some(info.id), Some(result.id)))
        }
        JobSpec::ZoptTrain { region, config, arch, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            obs.preview_seed = Some(SeedTensor::sample(arch.latent_depth, MIN_SEED, MIN_SEED, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x9e37)));
            let bundle = train_wgan(image, region.as_ref(), &config, &arch, &mut rng, &mut obs)?;
            let partial = bundle.partial;
            let info = session.add_bundle(bundle, Some(job.id.clone()))?;
            Ok((partial, Some(info.id), None))
        }
        JobSpec::ZoptOptimize { region, bundle, bundle_id, config, seed } => {
            if bundle.method != Method::Wgan {
                return Err(Error::Bundle("seed optimisation needs a plain adversarial bundle".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            obs.zopt = Some((&bundle, &region));
            let (z, trace) = optimize_seed(&bundle, image, &region, &config, &mut rng, &mut obs)?;
            if trace.diverged && trace.checkpoints.is_empty() {
                return Err(Error::Other("seed optimisation diverged".into()));
            }
            let result = evaluate_zopt(&bundle, &z, image, &region)?;
            let info = session.add_result(&result, Some(bundle_id), Some(seed))?;
            Ok((trace.stopped, None, Some(info.id)))
        }
    }
}
