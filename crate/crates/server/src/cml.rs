//! The cooperative-learning modules served in process, and the simulated
//! review loop behind `POST /cml/loop`.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use discover_core::cml::{
    apply_corrections, feature_windows, oracle_labels, predict, run_loop, select_for_review, train, CmlError,
    Correction, LoopConfig, LoopInput, LoopReport, Prediction, ReviewSelection, TrainConfig, WindowPrediction,
};
use discover_core::model::{segments_to_frames, AnnotationBody, AnnotationKey, SchemeKind};
use discover_core::sampling::{
    resolve_inputs, resolve_key, DatasetIterator, InputData, InputDescriptor, ResolvedInput, SlotType, WindowSpec,
};
use discover_core::storage::Store;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::jobs::{Job, JobError, JobOutcome, JobQueue, ModuleDescriptor, OptionSpec, OptionType, SlotData, SlotPayload};

pub const TRAIN_MODULE: &str = "cml.train";
pub const PREDICT_MODULE: &str = "cml.predict";
pub const MODULE_VERSION: &str = "1";
pub const BUILTIN_WORKER: &str = "builtin-cml";

#[derive(Debug, Error)]
pub enum CmlServiceError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Cml(#[from] discover_core::cml::CmlError),
    #[error(transparent)]
    Sampling(#[from] discover_core::sampling::SamplingError),
    #[error(transparent)]
    Storage(#[from] discover_core::storage::StorageError),
}

fn slot(src: discover_core::sampling::Source, slot: SlotType, id: &str, scheme: &str, role: &str) -> InputDescriptor {
    InputDescriptor {
        src,
        slot,
        id: id.into(),
        scheme: scheme.into(),
        role: role.into(),
        annotator: None,
    }
}

fn option(kind: OptionType, default: Value) -> OptionSpec {
    OptionSpec { kind, default }
}

/// Descriptors of the two in-process modules. Both read partial human
/// labels (`labels`) and a feature stream (`features`); submitters replace
/// the slot schemes and roles with their own.
pub fn descriptors() -> Vec<ModuleDescriptor> {
    use discover_core::sampling::Source;
    let options = BTreeMap::from([
        ("frame_ms".to_string(), option(OptionType::Integer, json!(40))),
        ("left_context_ms".to_string(), option(OptionType::Integer, json!(0))),
        ("right_context_ms".to_string(), option(OptionType::Integer, json!(0))),
        ("labelled_until_ms".to_string(), option(OptionType::Integer, json!(0))),
        ("epochs".to_string(), option(OptionType::Integer, json!(300))),
        ("learning_rate".to_string(), option(OptionType::Number, json!(0.1))),
        ("l2".to_string(), option(OptionType::Number, json!(0.0001))),
        ("budget".to_string(), option(OptionType::Number, json!(0.1))),
    ]);
    let inputs = vec![
        slot(Source::Annotation(SchemeKind::Discrete), SlotType::Input, "labels", "label", "subject"),
        slot(Source::Stream, SlotType::Input, "features", "features", "subject"),
    ];
    vec![
        ModuleDescriptor {
            name: TRAIN_MODULE.into(),
            version: MODULE_VERSION.into(),
            category: "learning".into(),
            inputs: inputs.clone(),
            outputs: vec![],
            options: options.clone(),
        },
        ModuleDescriptor {
            name: PREDICT_MODULE.into(),
            version: MODULE_VERSION.into(),
            category: "learning".into(),
            inputs,
            outputs: vec![slot(
                Source::Annotation(SchemeKind::Discrete),
                SlotType::Output,
                "prediction",
                "label",
                "subject",
            )],
            options,
        },
    ]
}

pub fn register(queue: &JobQueue) -> Result<(), JobError> {
    for d in descriptors() {
        queue.register_module(d)?;
    }
    Ok(())
}

fn opt_u64(job: &Job, name: &str) -> Result<u64, CmlServiceError> {
    job.options
        .get(name)
        .and_then(Value::as_u64)
        .ok_or_else(|| CmlServiceError::Invalid(format!("option {name} must be a non-negative integer")))
}

fn opt_f64(job: &Job, name: &str) -> Result<f64, CmlServiceError> {
    job.options
        .get(name)
        .and_then(Value::as_f64)
        .ok_or_else(|| CmlServiceError::Invalid(format!("option {name} must be a number")))
}

/// Runs a leased `cml.*` job on its delivered input data.
pub fn run_job(store: &Store, job: &Job, inputs: Vec<SlotData>) -> Result<JobOutcome, CmlServiceError> {
    let spec = WindowSpec::new(
        opt_u64(job, "frame_ms")?,
        opt_u64(job, "left_context_ms")?,
        opt_u64(job, "right_context_ms")?,
    )?;
    let cfg = TrainConfig {
        epochs: opt_u64(job, "epochs")? as usize,
        learning_rate: opt_f64(job, "learning_rate")?,
        l2: opt_f64(job, "l2")?,
    };
    let session = store.get_session(&job.dataset, &job.session)?;
    let labels_slot = job
        .inputs
        .iter()
        .find(|s| s.id == "labels")
        .ok_or_else(|| CmlServiceError::Invalid("job has no labels input".into()))?;
    let scheme = store.get_scheme(&job.dataset, &labels_slot.scheme)?;
    let class_ids: Vec<u32> = scheme
        .labels()
        .ok_or_else(|| CmlServiceError::Invalid(format!("{} is not discrete", scheme.name())))?
        .keys()
        .copied()
        .collect();

    let mut labels = None;
    let mut features = Vec::new();
    for s in inputs {
        match (s.id.as_str(), s.payload) {
            ("labels", SlotPayload::Annotation { body: AnnotationBody::Segments { segments } }) => labels = Some(segments),
            (_, SlotPayload::Stream { header, data }) => features.push(ResolvedInput {
                id: s.id,
                data: InputData::Stream {
                    header,
                    frames: SlotPayload::stream_frames(&data).map_err(CmlServiceError::Invalid)?,
                },
            }),
            (_, SlotPayload::Annotation { body }) => features.push(ResolvedInput::from_body(&s.id, body)),
        }
    }
    let labels = labels.ok_or_else(|| CmlServiceError::Invalid("labels input missing or not discrete".into()))?;
    let windows = feature_windows(DatasetIterator::new(features, session.duration_ms, spec)?)?;
    let times: Vec<u64> = windows.iter().map(|w| w.0).collect();
    let truth = oracle_labels(&labels, &times, spec.frame_ms)?;
    let until = opt_u64(job, "labelled_until_ms")?;
    let labelled: Vec<usize> = (0..windows.len())
        .filter(|&i| until == 0 || times[i] < until)
        .collect();
    let xs: Vec<Vec<f64>> = labelled.iter().map(|&i| windows[i].1.clone()).collect();
    let ys: Vec<u32> = labelled.iter().map(|&i| truth[i]).collect();
    let trained = train(&xs, &ys, &class_ids, &cfg)?;

    if job.module == TRAIN_MODULE {
        return Ok(JobOutcome::Done {
            outputs: vec![],
            result: Some(json!({
                "model": trained.model,
                "losses": trained.losses,
                "examples": xs.len(),
            })),
        });
    }
    let prediction = predict(&trained.model, &windows, spec.frame_ms)?;
    let review = select_for_review(&prediction, opt_f64(job, "budget")?)?;
    Ok(JobOutcome::Done {
        outputs: vec![SlotData {
            id: "prediction".into(),
            payload: SlotPayload::Annotation {
                body: AnnotationBody::Segments {
                    segments: prediction.to_segments(),
                },
            },
        }],
        result: Some(json!({
            "review": review,
            "final_loss": trained.losses.last(),
            "examples": xs.len(),
        })),
    })
}

/// Polls the queue for `cml.*` jobs until `stop` is set.
pub fn spawn_worker(queue: Arc<JobQueue>, stop: Arc<AtomicBool>, poll: Duration) -> JoinHandle<()> {
    std::thread::spawn(move || {
        let modules = vec![TRAIN_MODULE.to_string(), PREDICT_MODULE.to_string()];
        while !stop.load(Ordering::SeqCst) {
            match queue.lease(BUILTIN_WORKER, &modules, None) {
                Ok(Some(job)) => work_one(&queue, &job),
                Ok(None) | Err(_) => std::thread::sleep(poll),
            }
        }
    })
}

fn work_one(queue: &JobQueue, job: &Job) {
    let Some(lease_id) = job.lease.as_ref().map(|l| l.lease_id) else {
        return;
    };
    let outcome = queue
        .input_data(job)
        .map_err(|e| e.to_string())
        .and_then(|inputs| run_job(queue.store(), job, inputs).map_err(|e| e.to_string()))
        .unwrap_or_else(|message| JobOutcome::Failed { message });
    if let Err(e) = queue.finish(job.id, BUILTIN_WORKER, lease_id, outcome) {
        let _ = queue.finish(
            job.id,
            BUILTIN_WORKER,
            lease_id,
            JobOutcome::Failed {
                message: e.to_string(),
            },
        );
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopRequest {
    pub dataset: String,
    pub session: String,
    /// Discrete scheme to learn.
    pub scheme: String,
    pub role: String,
    /// Annotator whose labels answer the simulated reviews.
    pub oracle: String,
    /// Feature inputs.
    pub inputs: Vec<InputDescriptor>,
    #[serde(default = "default_frame_ms")]
    pub frame_ms: u64,
    #[serde(default)]
    pub left_context_ms: u64,
    #[serde(default)]
    pub right_context_ms: u64,
    pub rounds: usize,
    pub budget: f64,
    /// Windows labelled before the first round, spread evenly.
    #[serde(default = "default_seed_windows")]
    pub seed_windows: usize,
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

fn default_frame_ms() -> u64 {
    40
}

fn default_seed_windows() -> usize {
    10
}

pub fn loop_session(store: &Store, req: &LoopRequest) -> Result<LoopReport, CmlServiceError> {
    let session = store.get_session(&req.dataset, &req.session)?;
    let scheme = store.get_scheme(&req.dataset, &req.scheme)?;
    let class_ids: Vec<u32> = scheme
        .labels()
        .ok_or_else(|| CmlServiceError::Invalid(format!("{} is not discrete", scheme.name())))?
        .keys()
        .copied()
        .collect();
    let key = resolve_key(store, &req.dataset, &req.session, &req.scheme, &req.role, Some(&req.oracle))?;
    let (oracle, _) = store.load_annotation(&key)?;
    let truth = oracle.segments().map_err(discover_core::cml::CmlError::from)?.to_vec();
    let spec = WindowSpec::new(req.frame_ms, req.left_context_ms, req.right_context_ms)?;
    let inputs = resolve_inputs(store, &req.dataset, &req.session, &req.inputs)?;
    let windows = feature_windows(DatasetIterator::new(inputs, session.duration_ms, spec)?)?;
    let n = windows.len();
    let k = req.seed_windows.clamp(1, n.max(1));
    let seed: Vec<usize> = (0..k).map(|i| i * n / k).collect();
    Ok(run_loop(
        &LoopInput {
            windows: &windows,
            frame_ms: req.frame_ms,
            class_ids: &class_ids,
            truth: &truth,
            seed: &seed,
        },
        &LoopConfig {
            rounds: req.rounds,
            budget_fraction: req.budget,
            train: req.train.clone().unwrap_or_default(),
        },
    )?)
}

/// A reviewer's verdicts on a review selection of a stored prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub dataset: String,
    pub session: String,
    pub role: String,
    pub scheme: String,
    /// Annotator of the prediction, e.g. `DISCOVER:cml.predict@1`.
    pub annotator: String,
    #[serde(default = "default_frame_ms")]
    pub frame_ms: u64,
    pub selection: ReviewSelection,
    #[serde(default)]
    pub corrections: Vec<Correction>,
    /// Revision the reviewer saw; defaults to the stored one.
    #[serde(default)]
    pub expected_revision: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewOutcome {
    pub key: AnnotationKey,
    pub revision: u64,
    pub corrected: usize,
}

/// Rebuilds per-frame windows from stored prediction segments. Frames
/// outside every segment are rest with confidence 1.
fn prediction_from_segments(
    segments: &[discover_core::model::DiscreteSegment],
    class_ids: Vec<u32>,
    frame_ms: u64,
    n: u64,
) -> Result<Prediction, CmlServiceError> {
    let labels = segments_to_frames(segments, frame_ms, 0, n * frame_ms).map_err(CmlError::from)?;
    let mut windows = Vec::with_capacity(labels.len());
    let mut seg = 0;
    for (i, label) in labels.into_iter().enumerate() {
        let mid = i as u64 * frame_ms + frame_ms / 2;
        while seg < segments.len() && segments[seg].end_ms <= mid {
            seg += 1;
        }
        let confidence = match segments.get(seg) {
            Some(s) if s.start_ms <= mid && label != discover_core::model::REST_ID => s.confidence,
            _ => 1.0,
        };
        windows.push(WindowPrediction {
            t_ms: i as u64 * frame_ms,
            label,
            confidence,
        });
    }
    Ok(Prediction {
        frame_ms,
        class_ids,
        windows,
    })
}

/// Applies the corrections to the stored prediction and saves it back
/// under the same key; corrected windows get confidence 1.
pub fn apply_review(store: &Store, req: &ReviewRequest) -> Result<ReviewOutcome, CmlServiceError> {
    if req.frame_ms == 0 {
        return Err(CmlServiceError::Invalid("frame_ms must be positive".into()));
    }
    let key = AnnotationKey::new(&req.dataset, &req.session, &req.role, &req.scheme, &req.annotator);
    let (stored, revision) = store.load_annotation(&key)?;
    let session = store.get_session(&req.dataset, &req.session)?;
    let scheme = store.get_scheme(&req.dataset, &req.scheme)?;
    let class_ids: Vec<u32> = scheme
        .labels()
        .ok_or_else(|| CmlServiceError::Invalid(format!("{} is not discrete", scheme.name())))?
        .keys()
        .copied()
        .collect();
    let n = session.duration_ms / req.frame_ms;
    let segments = stored.segments().map_err(CmlError::from)?;
    let pred = prediction_from_segments(segments, class_ids, req.frame_ms, n)?;
    let mut selection = req.selection.clone();
    for item in &mut selection.windows {
        if item.t_ms % req.frame_ms != 0 || item.t_ms / req.frame_ms >= n {
            return Err(CmlError::OffGrid(item.t_ms).into());
        }
        item.index = (item.t_ms / req.frame_ms) as usize;
    }
    let corrected = apply_corrections(&pred, &selection, &req.corrections)?;
    let expected = req.expected_revision.unwrap_or(revision);
    let revision = store.save_annotation_at(&corrected.to_annotation(key.clone()), Some(expected))?;
    Ok(ReviewOutcome {
        key,
        revision,
        corrected: req.corrections.len(),
    })
}
