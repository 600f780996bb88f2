//! Query evaluation against a per-frame linear scan on long random tiers.

use std::cell::Cell;

use discover_core::model::{ContinuousTrack, DiscreteSegment};
use discover_core::search::{evaluate, evaluate_runs, CmpOp, Expr, MemoryTiers, Query, Scene, StreamRef, Tier};
use discover_core::SampleRate;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use crate::{runner, Outcome};

const FRAME_MS: u64 = 40;
const MAX_FRAMES: u64 = 10_000;
const CASES: u32 = 500;

#[derive(Clone, Debug)]
struct Fixture {
    duration_ms: u64,
    a: Vec<DiscreteSegment>,
    b: Vec<DiscreteSegment>,
    c: ContinuousTrack,
}

fn segments(duration_ms: u64) -> impl Strategy<Value = Vec<DiscreteSegment>> {
    let gap = (duration_ms / 30).max(2);
    let len = (duration_ms / 20).max(2);
    prop::collection::vec((1..gap, 1..len, 1u32..4), 0..60).prop_map(move |parts| {
        let mut t = 0;
        let mut out = Vec::new();
        for (g, l, label) in parts {
            let start = t + g;
            let end = (start + l).min(duration_ms);
            if start >= end {
                break;
            }
            out.push(DiscreteSegment::new(start, end, label));
            t = end;
        }
        out
    })
}

fn fixture() -> impl Strategy<Value = Fixture> {
    (FRAME_MS..=MAX_FRAMES * FRAME_MS).prop_flat_map(|duration_ms| {
        let rates = prop_oneof![
            Just(SampleRate::hz(25).unwrap()),
            Just(SampleRate::hz(10).unwrap()),
            Just(SampleRate::new(5, 2).unwrap()),
        ];
        (segments(duration_ms), segments(duration_ms), rates).prop_flat_map(move |(a, b, rate)| {
            let n = rate.samples_in(duration_ms) as usize;
            let value = prop_oneof![8 => (-4i32..=4).prop_map(|v| v as f64 / 4.0), 1 => Just(f64::NAN)];
            prop::collection::vec(value, n).prop_map(move |values| Fixture {
                duration_ms,
                a: a.clone(),
                b: b.clone(),
                c: ContinuousTrack::new(rate, values),
            })
        })
    })
}

fn sref(scheme: &str, role: &str) -> StreamRef {
    StreamRef {
        scheme: scheme.into(),
        role: role.into(),
        annotator: None,
    }
}

fn op() -> impl Strategy<Value = CmpOp> {
    prop_oneof![Just(CmpOp::Gt), Just(CmpOp::Lt), Just(CmpOp::Ge), Just(CmpOp::Le), Just(CmpOp::Eq), Just(CmpOp::Ne)]
}

fn expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (op(), 0u32..4).prop_map(|(op, v)| Expr::Cmp { stream: sref("smile", "teacher"), op, value: v as f64 }),
        (op(), 0u32..4).prop_map(|(op, v)| Expr::Cmp { stream: sref("gaze", "parent"), op, value: v as f64 }),
        (op(), -4i32..=4).prop_map(|(op, v)| Expr::Cmp { stream: sref("arousal", "teacher"), op, value: v as f64 / 4.0 }),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Not(Box::new(e))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::And(Box::new(a), Box::new(b))),
            (inner.clone(), inner).prop_map(|(a, b)| Expr::Or(Box::new(a), Box::new(b))),
        ]
    })
}

fn tiers(f: &Fixture) -> MemoryTiers {
    let mut t = MemoryTiers::new();
    t.insert("smile", "teacher", "a", Tier::Discrete(f.a.clone()))
        .insert("gaze", "parent", "b", Tier::Discrete(f.b.clone()))
        .insert("arousal", "teacher", "c", Tier::Continuous(f.c.clone()));
    t
}

fn discrete_at(segs: &[DiscreteSegment], i: u64) -> f64 {
    let mid2 = 2 * i * FRAME_MS + FRAME_MS;
    segs.iter()
        .find(|s| 2 * s.start_ms <= mid2 && mid2 < 2 * s.end_ms)
        .map_or(0.0, |s| s.label_id as f64)
}

/// Nearest sample to the frame start, ties to the later sample; NaN past
/// the end of the track.
fn continuous_at(track: &ContinuousTrack, i: u64) -> f64 {
    let t = i * FRAME_MS;
    let (num, den) = (track.sample_rate.numer(), track.sample_rate.denom());
    let k0 = t * num / (1000 * den);
    let dist = |k: u64| (k * 1000 * den).abs_diff(t * num);
    let k = if dist(k0 + 1) <= dist(k0) { k0 + 1 } else { k0 };
    track.values.get(k as usize).copied().unwrap_or(f64::NAN)
}

fn holds(e: &Expr, f: &Fixture, i: u64) -> bool {
    match e {
        Expr::Cmp { stream, op, value } => {
            let v = match stream.scheme.as_str() {
                "smile" => discrete_at(&f.a, i),
                "gaze" => discrete_at(&f.b, i),
                _ => continuous_at(&f.c, i),
            };
            !v.is_nan()
                && match op {
                    CmpOp::Gt => v > *value,
                    CmpOp::Lt => v < *value,
                    CmpOp::Ge => v >= *value,
                    CmpOp::Le => v <= *value,
                    CmpOp::Eq => v == *value,
                    CmpOp::Ne => v != *value,
                }
        }
        Expr::Not(a) => !holds(a, f, i),
        Expr::And(a, b) => holds(a, f, i) && holds(b, f, i),
        Expr::Or(a, b) => holds(a, f, i) || holds(b, f, i),
    }
}

fn mask(e: &Expr, f: &Fixture) -> Vec<bool> {
    (0..f.duration_ms / FRAME_MS).map(|i| holds(e, f, i)).collect()
}

fn scenes(mask: &[bool], merge: Option<u64>, min: Option<u64>) -> Vec<Scene> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (i, &m) in mask.iter().enumerate() {
        if m {
            match runs.last_mut() {
                Some(r) if r.1 == i => r.1 = i + 1,
                _ => runs.push((i, i + 1)),
            }
        }
    }
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for r in runs {
        match merged.last_mut() {
            Some(m) if merge.is_some_and(|g| ((r.0 - m.1) as u64 * FRAME_MS) < g) => m.1 = r.1,
            _ => merged.push(r),
        }
    }
    merged
        .into_iter()
        .filter(|&(lo, hi)| min.is_none_or(|d| (hi - lo) as u64 * FRAME_MS >= d))
        .map(|(lo, hi)| Scene {
            start_ms: lo as u64 * FRAME_MS,
            end_ms: hi as u64 * FRAME_MS,
            score: mask[lo..hi].iter().filter(|&&m| m).count() as f64 / (hi - lo) as f64,
        })
        .collect()
}

pub fn run() -> Outcome {
    let case = (
        fixture(),
        expr(),
        expr(),
        prop::option::of(1u64..2000),
        prop::option::of(1u64..3000),
    );
    let frames = Cell::new(0u64);
    let found = Cell::new(0usize);
    runner(CASES)
        .run(&case, |(f, a, b, merge, min)| {
            let t = tiers(&f);
            let q = Query {
                expr: a.clone(),
                merge_gap_ms: merge,
                min_duration_ms: min,
            };
            let got = evaluate(&q, &t, f.duration_ms, FRAME_MS).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&got, &scenes(&mask(&a, &f), merge, min), "query {}", q);
            frames.set(frames.get() + f.duration_ms / FRAME_MS);
            found.set(found.get() + got.len());

            let not = |e: Expr| Expr::Not(Box::new(e));
            let runs = |e: &Expr| evaluate_runs(e, &t, f.duration_ms, FRAME_MS).map(|r| r.to_mask());
            let nand = not(Expr::And(Box::new(a.clone()), Box::new(b.clone())));
            let or_not = Expr::Or(Box::new(not(a.clone())), Box::new(not(b.clone())));
            prop_assert_eq!(runs(&nand).unwrap(), runs(&or_not).unwrap());
            let nor = not(Expr::Or(Box::new(a.clone()), Box::new(b.clone())));
            let and_not = Expr::And(Box::new(not(a)), Box::new(not(b)));
            let nor_mask = runs(&nor).unwrap();
            prop_assert_eq!(&nor_mask, &runs(&and_not).unwrap());
            prop_assert_eq!(nor_mask, mask(&nor, &f));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "{CASES} cases, {} frames, {} scenes, De Morgan exact",
        frames.get(),
        found.get()
    ))
}
