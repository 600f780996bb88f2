#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use discover_core::model::{
    Annotation, AnnotationBody, AnnotationKey, ContinuousTrack, DiscreteSegment, Scheme, SchemeKind, Session,
};
use discover_core::sampling::{InputDescriptor, SlotType, Source};
use discover_core::storage::Store;
use discover_core::SampleRate;
use discover_server::jobs::{ModuleDescriptor, OptionSpec, OptionType, SlotData, SlotPayload};
use serde_json::json;

pub const DURATION_MS: u64 = 10_000;

/// One dataset `ds` with session `s1` (10 s, roles teacher/parent), a
/// discrete `smile` scheme with gold tiers and a 25 Hz continuous
/// `mirror` scheme.
pub fn store() -> Arc<Store> {
    let store = Store::in_memory();
    populate(&store);
    Arc::new(store)
}

pub fn populate(store: &Store) {
    store.create_dataset("ds").unwrap();
    store.add_session(&session()).unwrap();
    store.add_scheme("ds", &Scheme::discrete("smile", [(1, "smile")]).unwrap()).unwrap();
    store
        .add_scheme("ds", &Scheme::continuous("mirror", SampleRate::hz(25).unwrap(), 0.0, 1.0).unwrap())
        .unwrap();
    for (role, s, e) in [("teacher", 1000, 3000), ("parent", 2000, 4000)] {
        store.save_annotation(&smile(role, "gold", s, e)).unwrap();
    }
}

pub fn session() -> Session {
    Session {
        dataset: "ds".into(),
        name: "s1".into(),
        duration_ms: DURATION_MS,
        roles: vec!["teacher".into(), "parent".into()],
        media: vec![],
    }
}

pub fn smile(role: &str, annotator: &str, start: u64, end: u64) -> Annotation {
    Annotation {
        key: AnnotationKey::new("ds", "s1", role, "smile", annotator),
        body: AnnotationBody::Segments {
            segments: vec![DiscreteSegment::new(start, end, 1)],
        },
    }
}

/// A module reading the teacher's smile and writing a mirror track.
pub fn mirror_module(version: &str) -> ModuleDescriptor {
    ModuleDescriptor {
        name: "mirror".into(),
        version: version.into(),
        category: "test".into(),
        inputs: vec![InputDescriptor {
            src: Source::Annotation(SchemeKind::Discrete),
            slot: SlotType::Input,
            id: "smile".into(),
            scheme: "smile".into(),
            role: "teacher".into(),
            annotator: None,
        }],
        outputs: vec![InputDescriptor {
            src: Source::Annotation(SchemeKind::Continuous),
            slot: SlotType::Output,
            id: "out".into(),
            scheme: "mirror".into(),
            role: "teacher".into(),
            annotator: None,
        }],
        options: BTreeMap::from([(
            "threshold".to_string(),
            OptionSpec {
                kind: OptionType::Number,
                default: json!(0.5),
            },
        )]),
    }
}

/// A valid `out` value for [`mirror_module`]: `n` samples at 25 Hz.
pub fn mirror_output(n: usize, value: f64) -> SlotData {
    SlotData {
        id: "out".into(),
        payload: SlotPayload::Annotation {
            body: AnnotationBody::Track(ContinuousTrack::new(SampleRate::hz(25).unwrap(), vec![value; n])),
        },
    }
}
