//! Annotation, document and stream round trips, and window counts.

use discover_core::model::{
    Annotation, AnnotationBody, AnnotationKey, ContinuousTrack, DiscreteSegment, Scheme, Session, TranscriptSegment,
};
use discover_core::sampling::{window_count, WindowSpec};
use discover_core::storage::{export_annotation_file, import_annotation_file, read_stream, write_stream, StreamHeader, Store};
use discover_core::SampleRate;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use crate::{ensure, runner, OrFail, Outcome};

const CASES: u32 = 1000;
const WINDOW_PAIRS: u32 = 100;
const DURATION_MS: u64 = 20_000;

fn schemes() -> Vec<Scheme> {
    vec![
        Scheme::discrete("smile", [(1, "smile"), (2, "laugh")]).unwrap(),
        Scheme::continuous("arousal", SampleRate::hz(25).unwrap(), -1.0, 1.0).unwrap(),
        Scheme::continuous("valence", SampleRate::new(5, 2).unwrap(), 0.0, 1.0).unwrap(),
        Scheme::free("transcript").unwrap(),
    ]
}

fn store(root: &std::path::Path) -> Store {
    let s = Store::open_dir(root).unwrap();
    s.create_dataset("ds").unwrap();
    s.add_session(&Session {
        dataset: "ds".into(),
        name: "s1".into(),
        duration_ms: DURATION_MS,
        roles: vec!["teacher".into(), "parent".into()],
        media: vec![],
    })
    .unwrap();
    for scheme in schemes() {
        s.add_scheme("ds", &scheme).unwrap();
    }
    s
}

fn spans() -> impl Strategy<Value = Vec<(u64, u64)>> {
    prop::collection::vec((0u64..500, 1u64..900), 0..25).prop_map(|parts| {
        let mut t = 0;
        let mut out = Vec::new();
        for (gap, len) in parts {
            let (s, e) = (t + gap, t + gap + len);
            if e > DURATION_MS {
                break;
            }
            out.push((s, e));
            t = e;
        }
        out
    })
}

fn unit() -> impl Strategy<Value = f64> {
    prop_oneof![0.0..=1.0f64, Just(0.0), Just(1.0)]
}

fn body(scheme: usize) -> BoxedStrategy<AnnotationBody> {
    match scheme {
        0 => spans()
            .prop_flat_map(|sp| {
                let n = sp.len();
                (Just(sp), prop::collection::vec((0u32..3, unit()), n))
            })
            .prop_map(|(sp, ls)| AnnotationBody::Segments {
                segments: sp
                    .into_iter()
                    .zip(ls)
                    .map(|((start_ms, end_ms), (label_id, confidence))| DiscreteSegment {
                        start_ms,
                        end_ms,
                        label_id,
                        confidence,
                    })
                    .collect(),
            })
            .boxed(),
        1 | 2 => {
            let (rate, lo) = if scheme == 1 {
                (SampleRate::hz(25).unwrap(), -1.0)
            } else {
                (SampleRate::new(5, 2).unwrap(), 0.0)
            };
            let max = rate.samples_in(DURATION_MS) as usize;
            let value = prop_oneof![8 => lo..=1.0f64, 1 => Just(f64::NAN), 1 => Just(-0.0)];
            (0..=max)
                .prop_flat_map(move |n| (prop::collection::vec(value.clone(), n), prop::collection::vec(unit(), n)))
                .prop_map(move |(values, confidences)| {
                    AnnotationBody::Track(ContinuousTrack {
                        sample_rate: rate,
                        values,
                        confidences,
                    })
                })
                .boxed()
        }
        _ => spans()
            .prop_flat_map(|sp| {
                let n = sp.len();
                (Just(sp), prop::collection::vec(("[a-zA-Z]\\PC{0,24}", unit()), n))
            })
            .prop_map(|(sp, ts)| AnnotationBody::Transcript {
                segments: sp
                    .into_iter()
                    .zip(ts)
                    .map(|((start_ms, end_ms), (text, speaker_confidence))| TranscriptSegment {
                        start_ms,
                        end_ms,
                        text,
                        speaker_confidence,
                    })
                    .collect(),
            })
            .boxed(),
    }
}

fn annotation() -> impl Strategy<Value = Annotation> {
    (0usize..4, any::<bool>(), "[A-Za-z0-9_-]{1,12}").prop_flat_map(|(scheme, teacher, annotator)| {
        let name = schemes()[scheme].name().to_string();
        let role = if teacher { "teacher" } else { "parent" };
        body(scheme).prop_map(move |body| Annotation {
            key: AnnotationKey::new("ds", "s1", role, &name, &annotator),
            body,
        })
    })
}

/// Every float of a body as bits, NaN payloads collapsed.
fn bits(a: &Annotation) -> Vec<u64> {
    match &a.body {
        AnnotationBody::Segments { segments } => segments.iter().map(|s| s.confidence.to_bits()).collect(),
        AnnotationBody::Track(t) => t
            .values
            .iter()
            .map(|v| if v.is_nan() { u64::MAX } else { v.to_bits() })
            .chain(t.confidences.iter().map(|c| c.to_bits()))
            .collect(),
        AnnotationBody::Transcript { segments } => segments.iter().map(|s| s.speaker_confidence.to_bits()).collect(),
    }
}

fn stream() -> impl Strategy<Value = (StreamHeader, Vec<f32>)> {
    let rate = prop_oneof![Just(SampleRate::hz(25).unwrap()), Just(SampleRate::new(30000, 1001).unwrap())];
    (1u32..5, 0u64..200, rate).prop_flat_map(|(dim, rows, rate)| {
        prop::collection::vec(any::<u32>().prop_map(f32::from_bits), rows as usize * dim as usize)
            .prop_map(move |data| (StreamHeader::f32(rate, dim, rows), data))
    })
}

fn f32_bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn fail(e: impl std::fmt::Display) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

pub fn run() -> Outcome {
    runner(CASES)
        .run(&(annotation(), stream()), |(a, (header, data))| {
            let dir = tempfile::tempdir().map_err(fail)?;
            let s = store(dir.path());
            prop_assert_eq!(s.save_annotation(&a).map_err(fail)?, 1);
            let (loaded, _) = s.load_annotation(&a.key).map_err(fail)?;
            prop_assert_eq!(&loaded, &a);
            prop_assert_eq!(bits(&loaded), bits(&a));

            let doc = s.load_document(&a.key).map_err(fail)?;
            let path = dir.path().join("export.annotation");
            export_annotation_file(&doc, &path).map_err(fail)?;
            let imported = import_annotation_file(&path).map_err(fail)?;
            prop_assert_eq!(imported.to_bytes(), std::fs::read(&path).map_err(fail)?);
            prop_assert_eq!(bits(&imported.annotation()), bits(&a));
            prop_assert_eq!(&imported, &doc);

            let file = dir.path().join("x.stream");
            write_stream(&file, &header, &data).map_err(fail)?;
            let (h, d) = read_stream(&file).map_err(fail)?;
            prop_assert_eq!(&h, &header);
            prop_assert_eq!(f32_bits(&d), f32_bits(&data));
            s.put_stream("ds", "s1", "teacher.audio", &header, &data).map_err(fail)?;
            let (h, d) = s.get_stream("ds", "s1", "teacher.audio").map_err(fail)?;
            prop_assert_eq!(h, header);
            prop_assert_eq!(f32_bits(&d), f32_bits(&data));
            Ok(())
        })
        .map_err(|e| format!("round trip: {e}"))?;

    let listing = window_count(10_000, &WindowSpec::new(40, 1960, 0).or_fail()?).or_fail()?;
    ensure(listing == 201, || format!("10000 ms / 40 / 1960 gave {listing} windows"))?;
    let pairs = (1u64..100, 0u64..60, 0u64..20, 0u64..20_000);
    runner(WINDOW_PAIRS)
        .run(&pairs, |(frame, left, right, duration)| {
            let spec = WindowSpec {
                frame_ms: frame,
                left_context_ms: left * frame,
                right_context_ms: right * frame,
            };
            let window = spec.window_ms();
            let mut n = 0usize;
            let mut t = 0;
            while t + window <= duration {
                n += 1;
                t += frame;
            }
            match window_count(duration, &spec) {
                Ok(c) => prop_assert_eq!(c, n),
                Err(_) => prop_assert_eq!(n, 0),
            }
            Ok(())
        })
        .map_err(|e| format!("window count: {e}"))?;
    Ok(format!("{CASES} annotations and streams bit-exact, {WINDOW_PAIRS} window counts, listing gives 201"))
}
