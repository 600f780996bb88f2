use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex, MutexGuard};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use discover_core::canonical::to_canonical_vec;
use discover_core::model::{validate_annotation, Annotation, AnnotationBody, AnnotationKey};
use discover_core::sampling::{resolve_inputs, resolve_key, InputData, InputDescriptor, Source};
use discover_core::storage::{stream_name, StreamHeader, Store};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::clock::Clock;
use super::module::{machine_annotator, ModuleDescriptor};
use super::JobError;

pub const DEFAULT_LEASE_MS: u64 = 60_000;
/// Leases a job may run out before it is failed.
pub const DEFAULT_MAX_ATTEMPTS: u32 = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum JobState {
    Queued,
    Leased,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lease {
    pub worker_id: String,
    pub lease_id: u64,
    pub deadline_ms: u64,
    pub lease_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub module: String,
    pub version: String,
    pub dataset: String,
    pub session: String,
    pub inputs: Vec<InputDescriptor>,
    pub outputs: Vec<InputDescriptor>,
    pub options: BTreeMap<String, Value>,
    pub state: JobState,
    pub lease: Option<Lease>,
    pub progress: f64,
    pub log: Vec<String>,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    /// Annotation keys and stream names written on completion.
    #[serde(default)]
    pub produced: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub module: String,
    #[serde(default)]
    pub version: Option<String>,
    pub dataset: String,
    pub session: String,
    /// Replacements for the module's input slots, matched by id.
    #[serde(default)]
    pub inputs: Vec<InputDescriptor>,
    /// Replacements for the module's output slots, matched by id.
    #[serde(default)]
    pub outputs: Vec<InputDescriptor>,
    #[serde(default)]
    pub options: BTreeMap<String, Value>,
}

/// Data of one input or output slot as exchanged with workers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotData {
    pub id: String,
    #[serde(flatten)]
    pub payload: SlotPayload,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SlotPayload {
    Annotation { body: AnnotationBody },
    /// `data` is base64 of the little-endian f32 rows.
    Stream { header: StreamHeader, data: String },
}

impl SlotPayload {
    pub fn stream(header: StreamHeader, frames: &[f32]) -> Self {
        let bytes: Vec<u8> = frames.iter().flat_map(|v| v.to_le_bytes()).collect();
        SlotPayload::Stream {
            header,
            data: B64.encode(bytes),
        }
    }

    /// Decodes a stream payload's rows.
    pub fn stream_frames(data: &str) -> Result<Vec<f32>, String> {
        let bytes = B64.decode(data).map_err(|e| format!("bad base64: {e}"))?;
        if bytes.len() % 4 != 0 {
            return Err(format!("{} bytes is not a whole number of f32 values", bytes.len()));
        }
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum JobOutcome {
    Done {
        #[serde(default)]
        outputs: Vec<SlotData>,
        #[serde(default)]
        result: Option<Value>,
    },
    Failed {
        message: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterOutcome {
    pub hash: String,
    pub created: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum Record {
    Module { descriptor: ModuleDescriptor },
    Job { job: Job },
}

struct Inner {
    modules: Vec<ModuleDescriptor>,
    jobs: BTreeMap<u64, Job>,
    next_id: u64,
    next_lease: u64,
    journal: Option<File>,
}

impl Inner {
    fn record(&mut self, rec: &Record) -> Result<(), JobError> {
        if let Some(f) = &mut self.journal {
            let mut line = to_canonical_vec(rec).map_err(|e| JobError::Journal(e.to_string()))?;
            line.push(b'\n');
            f.write_all(&line).map_err(|e| JobError::Journal(e.to_string()))?;
        }
        Ok(())
    }

    fn record_job(&mut self, id: u64) -> Result<(), JobError> {
        let job = self.jobs[&id].clone();
        self.record(&Record::Job { job })
    }

    fn live_lease(&self, job_id: u64, worker_id: &str, lease_id: u64) -> Result<&Job, JobError> {
        let job = self.jobs.get(&job_id).ok_or(JobError::NotFound(job_id))?;
        match (&job.state, &job.lease) {
            (JobState::Leased | JobState::Running, Some(l)) if l.worker_id == worker_id && l.lease_id == lease_id => Ok(job),
            _ => Err(JobError::StaleLease(job_id)),
        }
    }
}

/// The job table. All transitions happen under one lock.
pub struct JobQueue {
    store: Arc<Store>,
    clock: Arc<dyn Clock>,
    max_attempts: u32,
    inner: Mutex<Inner>,
}

impl JobQueue {
    /// A queue without a journal.
    pub fn in_memory(store: Arc<Store>, clock: Arc<dyn Clock>) -> Self {
        Self::with_journal(store, clock, None)
    }

    /// Opens (or creates) the journal at `path` and replays it.
    pub fn open(store: Arc<Store>, clock: Arc<dyn Clock>, path: impl AsRef<Path>) -> Result<Self, JobError> {
        let path = path.as_ref();
        let jerr = |e: std::io::Error| JobError::Journal(format!("{}: {e}", path.display()));
        let mut modules: Vec<ModuleDescriptor> = Vec::new();
        let mut jobs = BTreeMap::new();
        let mut next_lease = 1;
        if path.exists() {
            let lines: Vec<String> = BufReader::new(File::open(path).map_err(jerr)?)
                .lines()
                .collect::<Result<_, _>>()
                .map_err(jerr)?;
            let last = lines.len().saturating_sub(1);
            for (i, line) in lines.iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<Record>(line) {
                    Ok(Record::Module { descriptor }) => {
                        modules.retain(|m| !(m.name == descriptor.name && m.version == descriptor.version));
                        modules.push(descriptor);
                    }
                    Ok(Record::Job { job }) => {
                        if let Some(l) = &job.lease {
                            next_lease = next_lease.max(l.lease_id + 1);
                        }
                        jobs.insert(job.id, job);
                    }
                    // a torn final line from a crash mid-append
                    Err(_) if i == last => {}
                    Err(e) => return Err(JobError::Journal(format!("{} line {}: {e}", path.display(), i + 1))),
                }
            }
        } else if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(jerr)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(jerr)?;
        let next_id = jobs.keys().next_back().map_or(1, |id| id + 1);
        let q = Self {
            store,
            clock,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            inner: Mutex::new(Inner {
                modules,
                jobs,
                next_id,
                next_lease,
                journal: Some(file),
            }),
        };
        {
            let mut inner = q.inner.lock().unwrap();
            let in_flight: Vec<u64> = inner
                .jobs
                .values()
                .filter(|j| matches!(j.state, JobState::Leased | JobState::Running))
                .map(|j| j.id)
                .collect();
            for id in in_flight {
                let job = inner.jobs.get_mut(&id).unwrap();
                job.state = JobState::Queued;
                job.lease = None;
                job.progress = 0.0;
                job.log.push("requeued after server restart".into());
                inner.record_job(id)?;
            }
        }
        Ok(q)
    }

    fn with_journal(store: Arc<Store>, clock: Arc<dyn Clock>, journal: Option<File>) -> Self {
        Self {
            store,
            clock,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
            inner: Mutex::new(Inner {
                modules: Vec::new(),
                jobs: BTreeMap::new(),
                next_id: 1,
                next_lease: 1,
                journal,
            }),
        }
    }

    pub fn with_max_attempts(mut self, n: u32) -> Self {
        self.max_attempts = n.max(1);
        self
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    /// Locks the table after requeueing (or failing) every job whose lease
    /// has run out.
    fn lock(&self) -> Result<MutexGuard<'_, Inner>, JobError> {
        let mut inner = self.inner.lock().unwrap();
        let now = self.clock.now_ms();
        let expired: Vec<u64> = inner
            .jobs
            .values()
            .filter(|j| matches!(j.state, JobState::Leased | JobState::Running))
            .filter(|j| j.lease.as_ref().is_some_and(|l| now >= l.deadline_ms))
            .map(|j| j.id)
            .collect();
        for id in expired {
            let job = inner.jobs.get_mut(&id).unwrap();
            let worker = job.lease.take().map(|l| l.worker_id).unwrap_or_default();
            job.progress = 0.0;
            if job.attempts >= self.max_attempts {
                job.state = JobState::Failed;
                job.log
                    .push(format!("lease of {worker} expired; giving up after {} attempts", job.attempts));
            } else {
                job.state = JobState::Queued;
                job.log.push(format!("lease of {worker} expired; requeued"));
            }
            inner.record_job(id)?;
        }
        Ok(inner)
    }

    pub fn register_module(&self, d: ModuleDescriptor) -> Result<RegisterOutcome, JobError> {
        d.validate()?;
        let hash = d.hash();
        let mut inner = self.lock()?;
        if let Some(existing) = inner.modules.iter().find(|m| m.name == d.name && m.version == d.version) {
            return if existing.hash() == hash {
                Ok(RegisterOutcome { hash, created: false })
            } else {
                Err(JobError::Conflict(format!("{}@{}", d.name, d.version)))
            };
        }
        inner.record(&Record::Module { descriptor: d.clone() })?;
        inner.modules.push(d);
        Ok(RegisterOutcome { hash, created: true })
    }

    /// Registered modules in registration order.
    pub fn modules(&self) -> Vec<ModuleDescriptor> {
        self.inner.lock().unwrap().modules.clone()
    }

    /// `version` `None` picks the most recently registered version.
    pub fn module(&self, name: &str, version: Option<&str>) -> Result<ModuleDescriptor, JobError> {
        let inner = self.inner.lock().unwrap();
        inner
            .modules
            .iter()
            .rev()
            .find(|m| m.name == name && version.is_none_or(|v| v == m.version))
            .cloned()
            .ok_or_else(|| JobError::UnknownModule(format!("{name}{}", version.map(|v| format!("@{v}")).unwrap_or_default())))
    }

    pub fn submit(&self, req: SubmitRequest) -> Result<Job, JobError> {
        let d = self.module(&req.module, req.version.as_deref())?;
        let options = d.resolve_options(&req.options)?;
        let session = self.store.get_session(&req.dataset, &req.session)?;
        let unresolvable = |slot: &str, reason: String| JobError::Unresolvable {
            slot: slot.to_string(),
            reason,
        };

        let mut inputs = d.inputs.clone();
        override_slots(&mut inputs, &req.inputs, "input")?;
        for input in &mut inputs {
            match input.src {
                Source::Annotation(kind) => {
                    let key = resolve_key(
                        &self.store,
                        &req.dataset,
                        &req.session,
                        &input.scheme,
                        &input.role,
                        input.annotator.as_deref(),
                    )
                    .map_err(|e| unresolvable(&input.id, e.to_string()))?;
                    let scheme = self.store.get_scheme(&req.dataset, &input.scheme)?;
                    if scheme.kind() != kind {
                        return Err(unresolvable(&input.id, format!("{} is {}, slot wants {kind}", input.scheme, scheme.kind())));
                    }
                    input.annotator = Some(key.annotator);
                }
                Source::Stream => {
                    let name = stream_name(&input.role, &input.scheme);
                    if !self.store.list_streams(&req.dataset, &req.session)?.contains(&name) {
                        return Err(unresolvable(&input.id, format!("no stream {name}")));
                    }
                }
            }
        }

        let mut outputs = d.outputs.clone();
        override_slots(&mut outputs, &req.outputs, "output")?;
        let annotator = d.machine_annotator();
        for out in &mut outputs {
            if !session.roles.contains(&out.role) {
                return Err(unresolvable(&out.id, format!("unknown role {}", out.role)));
            }
            if let Source::Annotation(kind) = out.src {
                let scheme = self.store.get_scheme(&req.dataset, &out.scheme)?;
                if scheme.kind() != kind {
                    return Err(unresolvable(&out.id, format!("{} is {}, slot wants {kind}", out.scheme, scheme.kind())));
                }
                out.annotator = Some(annotator.clone());
            }
        }

        let mut inner = self.lock()?;
        let id = inner.next_id;
        inner.next_id += 1;
        let job = Job {
            id,
            module: d.name,
            version: d.version,
            dataset: req.dataset,
            session: req.session,
            inputs,
            outputs,
            options,
            state: JobState::Queued,
            lease: None,
            progress: 0.0,
            log: Vec::new(),
            attempts: 0,
            result: None,
            produced: Vec::new(),
        };
        inner.jobs.insert(id, job.clone());
        inner.record_job(id)?;
        Ok(job)
    }

    pub fn get(&self, id: u64) -> Result<Job, JobError> {
        self.lock()?.jobs.get(&id).cloned().ok_or(JobError::NotFound(id))
    }

    pub fn list(&self) -> Result<Vec<Job>, JobError> {
        Ok(self.lock()?.jobs.values().cloned().collect())
    }

    /// Hands the oldest queued job of one of `modules` (any module when
    /// empty) to `worker_id` until `now + lease_ms`.
    pub fn lease(&self, worker_id: &str, modules: &[String], lease_ms: Option<u64>) -> Result<Option<Job>, JobError> {
        let lease_ms = lease_ms.unwrap_or(DEFAULT_LEASE_MS);
        if lease_ms == 0 {
            return Err(JobError::InvalidLease);
        }
        let mut inner = self.lock()?;
        let Some(id) = inner
            .jobs
            .values()
            .find(|j| j.state == JobState::Queued && (modules.is_empty() || modules.contains(&j.module)))
            .map(|j| j.id)
        else {
            return Ok(None);
        };
        let lease_id = inner.next_lease;
        inner.next_lease += 1;
        let deadline_ms = self.clock.now_ms() + lease_ms;
        let job = inner.jobs.get_mut(&id).unwrap();
        job.state = JobState::Leased;
        job.attempts += 1;
        job.lease = Some(Lease {
            worker_id: worker_id.to_string(),
            lease_id,
            deadline_ms,
            lease_ms,
        });
        let job = job.clone();
        inner.record_job(id)?;
        Ok(Some(job))
    }

    /// Heartbeat: records progress, marks the job running and extends the
    /// lease by its original length.
    pub fn progress(
        &self,
        job_id: u64,
        worker_id: &str,
        lease_id: u64,
        progress: f64,
        message: Option<String>,
    ) -> Result<Job, JobError> {
        if !(0.0..=1.0).contains(&progress) {
            return Err(JobError::InvalidProgress(progress));
        }
        let mut inner = self.lock()?;
        inner.live_lease(job_id, worker_id, lease_id)?;
        let now = self.clock.now_ms();
        let job = inner.jobs.get_mut(&job_id).unwrap();
        job.state = JobState::Running;
        job.progress = progress;
        if let Some(l) = &mut job.lease {
            l.deadline_ms = now + l.lease_ms;
        }
        if let Some(m) = message {
            job.log.push(m);
        }
        let job = job.clone();
        inner.record_job(job_id)?;
        Ok(job)
    }

    /// Commits a worker's result. Outputs are validated in full before any
    /// is stored; an invalid result leaves the job and its lease untouched.
    pub fn finish(&self, job_id: u64, worker_id: &str, lease_id: u64, outcome: JobOutcome) -> Result<Job, JobError> {
        let mut inner = self.lock()?;
        let job = inner.live_lease(job_id, worker_id, lease_id)?.clone();
        let (state, produced, result, log) = match outcome {
            JobOutcome::Failed { message } => (JobState::Failed, Vec::new(), None, Some(message)),
            JobOutcome::Done { outputs, result } => (JobState::Done, self.store_outputs(&job, outputs)?, result, None),
        };
        let job = inner.jobs.get_mut(&job_id).unwrap();
        job.state = state;
        job.lease = None;
        job.produced = produced;
        job.result = result;
        if state == JobState::Done {
            job.progress = 1.0;
        }
        if let Some(m) = log {
            job.log.push(m);
        }
        let job = job.clone();
        inner.record_job(job_id)?;
        Ok(job)
    }

    fn store_outputs(&self, job: &Job, outputs: Vec<SlotData>) -> Result<Vec<String>, JobError> {
        let invalid = |m: String| Err(JobError::InvalidOutput(m));
        let session = self.store.get_session(&job.dataset, &job.session)?;
        let annotator = machine_annotator(&job.module, &job.version);
        let mut annotations = Vec::new();
        let mut streams = Vec::new();
        for slot in &job.outputs {
            let mut given = outputs.iter().filter(|o| o.id == slot.id);
            let (Some(data), None) = (given.next(), given.next()) else {
                return invalid(format!("expected exactly one value for output {}", slot.id));
            };
            match (&slot.src, &data.payload) {
                (Source::Annotation(_), SlotPayload::Annotation { body }) => {
                    let a = Annotation {
                        key: AnnotationKey::new(&job.dataset, &job.session, &slot.role, &slot.scheme, &annotator),
                        body: body.clone(),
                    };
                    let scheme = self.store.get_scheme(&job.dataset, &slot.scheme)?;
                    let violations = validate_annotation(&a, &scheme, &session);
                    if !violations.is_empty() {
                        let msgs: Vec<_> = violations.iter().map(|v| v.message.as_str()).collect();
                        return invalid(format!("{}: {}", slot.id, msgs.join("; ")));
                    }
                    annotations.push(a);
                }
                (Source::Stream, SlotPayload::Stream { header, data }) => {
                    let frames = SlotPayload::stream_frames(data).map_err(|m| JobError::InvalidOutput(format!("{}: {m}", slot.id)))?;
                    if frames.len() as u64 != header.value_count() {
                        return invalid(format!("{}: {} values for header {}", slot.id, frames.len(), header.to_line().trim()));
                    }
                    streams.push((stream_name(&slot.role, &slot.scheme), header.clone(), frames));
                }
                _ => return invalid(format!("output {} has the wrong kind", slot.id)),
            }
        }
        if let Some(extra) = outputs.iter().find(|o| !job.outputs.iter().any(|s| s.id == o.id)) {
            return invalid(format!("undeclared output {}", extra.id));
        }
        let mut produced = Vec::new();
        for a in annotations {
            self.store.save_annotation(&a)?;
            produced.push(a.key.to_string());
        }
        for (name, header, frames) in streams {
            self.store.put_stream(&job.dataset, &job.session, &name, &header, &frames)?;
            produced.push(format!("{}/{}/{name}", job.dataset, job.session));
        }
        Ok(produced)
    }

    /// The data of a job's inputs, for delivery to the worker holding it.
    pub fn input_data(&self, job: &Job) -> Result<Vec<SlotData>, JobError> {
        let resolved = resolve_inputs(&self.store, &job.dataset, &job.session, &job.inputs)?;
        Ok(resolved
            .into_iter()
            .map(|r| SlotData {
                id: r.id,
                payload: match r.data {
                    InputData::Discrete(segments) => SlotPayload::Annotation {
                        body: AnnotationBody::Segments { segments },
                    },
                    InputData::Continuous(t) => SlotPayload::Annotation {
                        body: AnnotationBody::Track(t),
                    },
                    InputData::Transcript(segments) => SlotPayload::Annotation {
                        body: AnnotationBody::Transcript { segments },
                    },
                    InputData::Stream { header, frames } => SlotPayload::stream(header, &frames),
                },
            })
            .collect())
    }
}

fn override_slots(slots: &mut [InputDescriptor], overrides: &[InputDescriptor], what: &str) -> Result<(), JobError> {
    for o in overrides {
        let Some(slot) = slots.iter_mut().find(|s| s.id == o.id) else {
            return Err(JobError::Unresolvable {
                slot: o.id.clone(),
                reason: format!("module declares no {what} with this id"),
            });
        };
        if slot.src != o.src {
            return Err(JobError::Unresolvable {
                slot: o.id.clone(),
                reason: format!("source {} cannot replace {}", o.src, slot.src),
            });
        }
        slot.scheme = o.scheme.clone();
        slot.role = o.role.clone();
        slot.annotator = o.annotator.clone();
    }
    Ok(())
}
