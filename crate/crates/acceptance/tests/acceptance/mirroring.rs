//! Two smile tiers in, a derived continuous mirroring tier out.

use std::time::Instant;

use discover_core::model::{
    validate_annotation, Annotation, AnnotationBody, AnnotationKey, DiscreteSegment, Scheme, SchemeKind, Session,
};
use discover_core::sampling::{DatasetIterator, InputDescriptor, WindowSpec};
use discover_core::storage::Store;
use discover_core::SampleRate;

use crate::{ensure, OrFail, Outcome};

const DURATION_MS: u64 = 10_000;
const FRAME_MS: u64 = 40;
const LEFT_MS: u64 = 1960;

/// Frame `i` of the derived tier: NaN until a full window ends on it,
/// otherwise whether both smile spans contain the frame midpoint.
fn oracle(i: u64) -> f64 {
    if i * FRAME_MS < LEFT_MS {
        return f64::NAN;
    }
    let mid = i * FRAME_MS + FRAME_MS / 2;
    let teacher = (1000..3000).contains(&mid);
    let parent = (2000..4000).contains(&mid);
    if teacher && parent {
        1.0
    } else {
        0.0
    }
}

pub fn run() -> Outcome {
    let started = Instant::now();
    let store = Store::in_memory();
    let session = Session {
        dataset: "ds".into(),
        name: "s1".into(),
        duration_ms: DURATION_MS,
        roles: vec!["teacher".into(), "parent".into()],
        media: vec![],
    };
    store.create_dataset("ds").or_fail()?;
    store.add_session(&session).or_fail()?;
    store
        .add_scheme("ds", &Scheme::discrete("smile", [(1, "smile")]).or_fail()?)
        .or_fail()?;
    let mirror = Scheme::continuous("smile_mirroring", SampleRate::hz(25).or_fail()?, 0.0, 1.0).or_fail()?;
    store.add_scheme("ds", &mirror).or_fail()?;
    for (role, s, t) in [("teacher", 1000, 3000), ("parent", 2000, 4000)] {
        store
            .save_annotation(&Annotation {
                key: AnnotationKey::new("ds", "s1", role, "smile", "gold"),
                body: AnnotationBody::Segments {
                    segments: vec![DiscreteSegment::new(s, t, 1)],
                },
            })
            .or_fail()?;
    }

    let inputs = [
        InputDescriptor::annotation(SchemeKind::Discrete, "teacher", "smile", "teacher", "gold"),
        InputDescriptor::annotation(SchemeKind::Discrete, "parent", "smile", "parent", "gold"),
    ];
    let spec = WindowSpec::new(FRAME_MS, LEFT_MS, 0).or_fail()?;
    let mut it = DatasetIterator::load(&store, &session, &inputs, spec).or_fail()?;
    let cur = spec.current_index();
    let track = it
        .derive_track(&mirror, |w| {
            let t = w.labels("teacher").unwrap()[cur];
            let p = w.labels("parent").unwrap()[cur];
            (if t != 0 && p != 0 { 1.0 } else { 0.0 }, 1.0)
        })
        .or_fail()?;
    let annotation = Annotation {
        key: AnnotationKey::new("ds", "s1", "teacher", "smile_mirroring", "DISCOVER:mirror@1"),
        body: AnnotationBody::Track(track.clone()),
    };
    let violations = validate_annotation(&annotation, &mirror, &session);
    ensure(violations.is_empty(), || format!("derived tier invalid: {violations:?}"))?;
    store.save_annotation(&annotation).or_fail()?;
    let elapsed = started.elapsed().as_secs_f64();

    ensure(track.sample_rate == SampleRate::hz(25).unwrap(), || "rate is not 25 Hz".into())?;
    ensure(track.values.len() as u64 == DURATION_MS / FRAME_MS, || format!("{} frames", track.values.len()))?;
    for (i, v) in track.values.iter().enumerate() {
        let want = oracle(i as u64);
        ensure(*v == want || (v.is_nan() && want.is_nan()), || format!("frame {i}: got {v}, oracle {want}"))?;
    }
    let (stored, _) = store.load_annotation(&annotation.key).or_fail()?;
    ensure(stored == annotation, || "stored tier differs".into())?;
    ensure(elapsed < 1.0, || format!("took {elapsed:.3}s"))?;
    let ones = track.values.iter().filter(|v| **v == 1.0).count();
    Ok(format!("250 frames match, {ones} mirrored, {:.1} ms", elapsed * 1e3))
}
