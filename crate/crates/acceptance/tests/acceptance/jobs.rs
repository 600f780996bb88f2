//! Concurrent workers against the job queue, with lease expiries and a
//! crash-restart halfway through.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use discover_core::model::{AnnotationBody, AnnotationKey, DiscreteSegment, Scheme, SchemeKind, Session};
use discover_core::sampling::{InputDescriptor, SlotType, Source};
use discover_core::storage::Store;
use discover_server::jobs::{
    machine_annotator, Job, JobError, JobOutcome, JobQueue, JobState, ManualClock, ModuleDescriptor, SlotData,
    SlotPayload, SubmitRequest, DEFAULT_MAX_ATTEMPTS,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::{ensure, OrFail, Outcome};

const WORKERS: u64 = 8;
const JOBS: u64 = 200;
const RESTART_AFTER: usize = 100;

fn module() -> ModuleDescriptor {
    let slot = |slot, id: &str, scheme: &str| InputDescriptor {
        src: Source::Annotation(SchemeKind::Discrete),
        slot,
        id: id.into(),
        scheme: scheme.into(),
        role: "teacher".into(),
        annotator: None,
    };
    ModuleDescriptor {
        name: "mark".into(),
        version: "1".into(),
        category: "test".into(),
        inputs: vec![slot(SlotType::Input, "smile", "smile")],
        outputs: vec![slot(SlotType::Output, "mark", "mark")],
        options: BTreeMap::new(),
    }
}

fn output_key() -> AnnotationKey {
    AnnotationKey::new("ds", "s1", "teacher", "mark", &machine_annotator("mark", "1"))
}

fn open_store(root: &Path, fresh: bool) -> Result<Arc<Store>, String> {
    let store = Store::open_dir(root).or_fail()?;
    if fresh {
        store.create_dataset("ds").or_fail()?;
        store
            .add_session(&Session {
                dataset: "ds".into(),
                name: "s1".into(),
                duration_ms: 10_000,
                roles: vec!["teacher".into()],
                media: vec![],
            })
            .or_fail()?;
        store.add_scheme("ds", &Scheme::discrete("smile", [(1, "smile")]).or_fail()?).or_fail()?;
        store.add_scheme("ds", &Scheme::discrete("mark", [(1, "mark")]).or_fail()?).or_fail()?;
        store
            .save_annotation(&discover_core::model::Annotation {
                key: AnnotationKey::new("ds", "s1", "teacher", "smile", "gold"),
                body: AnnotationBody::Segments {
                    segments: vec![DiscreteSegment::new(0, 500, 1)],
                },
            })
            .or_fail()?;
    }
    Ok(Arc::new(store))
}

/// What the workers saw, across both runs.
#[derive(Default)]
struct Ledger {
    accepted_done: BTreeMap<u64, usize>,
    accepted_failed: BTreeMap<u64, usize>,
    stale: usize,
    abandoned: usize,
    errors: Vec<String>,
}

fn terminal(q: &JobQueue) -> usize {
    q.list().map(|jobs| jobs.iter().filter(|j| j.state.is_terminal()).count()).unwrap_or(0)
}

/// Runs `WORKERS` threads until every job is terminal, or until `stop_at`
/// jobs are, in which case workers crash wherever they are.
fn run_workers(q: &Arc<JobQueue>, clock: &Arc<ManualClock>, ledger: &Arc<Mutex<Ledger>>, seed: u64, stop_at: Option<usize>) {
    let stop = Arc::new(AtomicBool::new(false));
    let finishes = Arc::new(AtomicUsize::new(0));
    let handles: Vec<_> = (0..WORKERS)
        .map(|w| {
            let (q, clock, ledger, stop, finishes) = (q.clone(), clock.clone(), ledger.clone(), stop.clone(), finishes.clone());
            std::thread::spawn(move || {
                let mut rng = StdRng::seed_from_u64(seed * 100 + w);
                let name = format!("w{w}");
                while !stop.load(Ordering::SeqCst) {
                    let job = match q.lease(&name, &[], Some(rng.random_range(10..60))) {
                        Ok(Some(job)) => job,
                        Ok(None) => {
                            if terminal(&q) as u64 == JOBS {
                                break;
                            }
                            clock.advance(1);
                            std::thread::yield_now();
                            continue;
                        }
                        Err(e) => {
                            ledger.lock().unwrap().errors.push(format!("lease: {e}"));
                            break;
                        }
                    };
                    if stop.load(Ordering::SeqCst) {
                        ledger.lock().unwrap().abandoned += 1;
                        break;
                    }
                    let lease_id = job.lease.as_ref().unwrap().lease_id;
                    if rng.random_bool(0.3) {
                        let _ = q.progress(job.id, &name, lease_id, 0.5, None);
                    }
                    // time passes while the worker computes; long pauses expire leases
                    clock.advance(rng.random_range(0..30));
                    let outcome = if rng.random_bool(0.03) {
                        JobOutcome::Failed {
                            message: "simulated failure".into(),
                        }
                    } else {
                        JobOutcome::Done {
                            outputs: vec![SlotData {
                                id: "mark".into(),
                                payload: SlotPayload::Annotation {
                                    body: AnnotationBody::Segments {
                                        segments: vec![DiscreteSegment::new(job.id * 10, job.id * 10 + 10, 1)],
                                    },
                                },
                            }],
                            result: Some(serde_json::json!({"worker": name})),
                        }
                    };
                    let failed = matches!(outcome, JobOutcome::Failed { .. });
                    let result = q.finish(job.id, &name, lease_id, outcome);
                    let mut l = ledger.lock().unwrap();
                    match result {
                        Ok(_) if failed => *l.accepted_failed.entry(job.id).or_default() += 1,
                        Ok(_) => *l.accepted_done.entry(job.id).or_default() += 1,
                        Err(JobError::StaleLease(_)) => l.stale += 1,
                        Err(e) => l.errors.push(format!("finish {}: {e}", job.id)),
                    }
                    drop(l);
                    let n = finishes.fetch_add(1, Ordering::SeqCst) + 1;
                    if stop_at.is_some_and(|s| n >= s) {
                        stop.store(true, Ordering::SeqCst);
                    }
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}

fn check_restart(before: &[Job], after: &JobQueue) -> Result<usize, String> {
    let mut requeued = 0;
    for old in before {
        let new = after.get(old.id).or_fail()?;
        match old.state {
            JobState::Queued | JobState::Done | JobState::Failed => {
                ensure(new == *old, || format!("job {} changed across restart: {:?} -> {:?}", old.id, old.state, new.state))?;
            }
            JobState::Leased | JobState::Running => {
                ensure(new.state == JobState::Queued && new.lease.is_none(), || {
                    format!("in-flight job {} came back {:?}", old.id, new.state)
                })?;
                requeued += 1;
            }
        }
    }
    ensure(after.list().or_fail()?.len() == before.len(), || "job count changed across restart".into())?;
    Ok(requeued)
}

pub fn run() -> Outcome {
    let dir = tempfile::tempdir().or_fail()?;
    let journal = dir.path().join(".jobs").join("journal.jsonl");
    let clock = Arc::new(ManualClock::new(0));
    let ledger = Arc::new(Mutex::new(Ledger::default()));

    let store = open_store(dir.path(), true)?;
    let q = Arc::new(JobQueue::open(store, clock.clone(), &journal).or_fail()?);
    q.register_module(module()).or_fail()?;
    for _ in 0..JOBS {
        q.submit(SubmitRequest {
            module: "mark".into(),
            dataset: "ds".into(),
            session: "s1".into(),
            ..Default::default()
        })
        .or_fail()?;
    }
    run_workers(&q, &clock, &ledger, 1, Some(RESTART_AFTER));
    let before = q.list().or_fail()?;
    let done_before = before.iter().filter(|j| j.state.is_terminal()).count();
    drop(q);

    // the crash also tore the journal's last write
    let mut text = std::fs::read_to_string(&journal).or_fail()?;
    text.push_str("{\"record\":\"job\",\"job\":{\"id\":");
    std::fs::write(&journal, text).or_fail()?;

    let store = open_store(dir.path(), false)?;
    let q = Arc::new(JobQueue::open(store.clone(), clock.clone(), &journal).or_fail()?);
    let requeued = check_restart(&before, &q)?;
    run_workers(&q, &clock, &ledger, 2, None);

    let l = ledger.lock().unwrap();
    ensure(l.errors.is_empty(), || format!("unexpected errors: {:?}", &l.errors[..l.errors.len().min(5)]))?;
    let jobs = q.list().or_fail()?;
    ensure(jobs.len() as u64 == JOBS, || format!("{} jobs", jobs.len()))?;
    let (mut done, mut failed) = (0, 0);
    for job in &jobs {
        let accepted = l.accepted_done.get(&job.id).copied().unwrap_or(0);
        match job.state {
            JobState::Done => {
                done += 1;
                ensure(accepted == 1, || format!("job {} DONE with {accepted} accepted results", job.id))?;
                ensure(job.produced == vec![output_key().to_string()], || format!("job {} produced {:?}", job.id, job.produced))?;
            }
            JobState::Failed => {
                failed += 1;
                ensure(accepted == 0, || format!("job {} FAILED after an accepted result", job.id))?;
                let worker_failed = l.accepted_failed.get(&job.id).copied().unwrap_or(0);
                ensure(worker_failed == 1 || job.attempts >= DEFAULT_MAX_ATTEMPTS, || {
                    format!("job {} FAILED without cause", job.id)
                })?;
            }
            s => return Err(format!("job {} left {s:?}", job.id)),
        }
    }
    let (_, revision) = store.load_annotation(&output_key()).or_fail()?;
    ensure(revision as usize == done, || format!("{revision} stored results for {done} DONE jobs"))?;
    ensure(l.stale > 0, || "no lease ever expired; the schedule is too gentle".into())?;
    ensure(requeued > 0, || format!("the crash caught no job in flight ({} abandoned)", l.abandoned))?;
    Ok(format!(
        "{done} DONE once, {failed} FAILED, {} stale finishes rejected, restart after {done_before} terminal with {requeued} requeued",
        l.stale
    ))
}
