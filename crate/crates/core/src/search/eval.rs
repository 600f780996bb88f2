//! Query evaluation by run-length interval algebra: every leaf becomes a
//! sorted list of frame runs, and AND/OR/NOT are run intersection, union
//! and complement.

use std::collections::HashMap;

use super::{Expr, Query, Scene, SearchError, StreamRef, Tier, TierSource};
use crate::error::ModelError;
use crate::model::{covered_frames, Annotation, AnnotationBody, AnnotationKey, ContinuousTrack, DiscreteSegment, Scheme, SchemeDef, REST_ID};

/// Disjoint, sorted, non-adjacent half-open frame ranges out of `frames`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FrameRuns {
    pub frames: usize,
    pub runs: Vec<(usize, usize)>,
}

impl FrameRuns {
    pub fn empty(frames: usize) -> Self {
        Self {
            frames,
            runs: Vec::new(),
        }
    }

    fn push(&mut self, lo: usize, hi: usize) {
        if lo >= hi {
            return;
        }
        match self.runs.last_mut() {
            Some(last) if last.1 >= lo => last.1 = last.1.max(hi),
            _ => self.runs.push((lo, hi)),
        }
    }

    pub fn and(&self, other: &Self) -> Self {
        let mut out = Self::empty(self.frames);
        let (mut i, mut j) = (0, 0);
        while i < self.runs.len() && j < other.runs.len() {
            let (a, b) = (self.runs[i], other.runs[j]);
            out.push(a.0.max(b.0), a.1.min(b.1));
            if a.1 < b.1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        out
    }

    pub fn or(&self, other: &Self) -> Self {
        let mut all: Vec<_> = self.runs.iter().chain(&other.runs).copied().collect();
        all.sort_unstable();
        let mut out = Self::empty(self.frames);
        for (lo, hi) in all {
            out.push(lo, hi);
        }
        out
    }

    pub fn not(&self) -> Self {
        let mut out = Self::empty(self.frames);
        let mut cursor = 0;
        for &(lo, hi) in &self.runs {
            out.push(cursor, lo);
            cursor = hi;
        }
        out.push(cursor, self.frames);
        out
    }

    pub fn count(&self) -> usize {
        self.runs.iter().map(|(lo, hi)| hi - lo).sum()
    }

    pub fn to_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.frames];
        for &(lo, hi) in &self.runs {
            m[lo..hi].fill(true);
        }
        m
    }
}

fn discrete_leaf(segments: &[DiscreteSegment], frames: usize, frame_ms: u64, pred: impl Fn(f64) -> bool) -> FrameRuns {
    let mut out = FrameRuns::empty(frames);
    let rest = pred(REST_ID as f64);
    let mut cursor = 0;
    for seg in segments {
        let (lo, hi) = covered_frames(seg.start_ms, seg.end_ms, frame_ms, 0);
        let (lo, hi) = (lo.max(cursor).min(frames), hi.min(frames));
        if lo >= hi {
            continue;
        }
        if rest {
            out.push(cursor, lo);
        }
        if pred(seg.label_id as f64) {
            out.push(lo, hi);
        }
        cursor = hi;
    }
    if rest {
        out.push(cursor, frames);
    }
    out
}

fn continuous_leaf(track: &ContinuousTrack, frames: usize, frame_ms: u64, pred: impl Fn(f64) -> bool) -> FrameRuns {
    let mut out = FrameRuns::empty(frames);
    let rate = track.sample_rate;
    for i in 0..frames {
        let idx = rate.nearest_index(i as u64 * frame_ms) as usize;
        if track.values.get(idx).is_some_and(|&v| pred(v)) {
            out.push(i, i + 1);
        }
    }
    out
}

fn eval_expr(expr: &Expr, tiers: &HashMap<&StreamRef, Tier>, frames: usize, frame_ms: u64) -> FrameRuns {
    match expr {
        Expr::Cmp { stream, op, value } => {
            let pred = |v: f64| op.apply(v, *value);
            match &tiers[stream] {
                Tier::Discrete(segs) => discrete_leaf(segs, frames, frame_ms, pred),
                Tier::Continuous(track) => continuous_leaf(track, frames, frame_ms, pred),
            }
        }
        Expr::Not(e) => eval_expr(e, tiers, frames, frame_ms).not(),
        Expr::And(a, b) => eval_expr(a, tiers, frames, frame_ms).and(&eval_expr(b, tiers, frames, frame_ms)),
        Expr::Or(a, b) => eval_expr(a, tiers, frames, frame_ms).or(&eval_expr(b, tiers, frames, frame_ms)),
    }
}

/// Frame runs where `expr` holds over the whole frames of `duration_ms`,
/// before MERGE and FOR.
pub fn evaluate_runs(
    expr: &Expr,
    source: &dyn TierSource,
    duration_ms: u64,
    frame_ms: u64,
) -> Result<FrameRuns, SearchError> {
    if frame_ms == 0 {
        return Err(ModelError::ZeroFrame.into());
    }
    let mut tiers = HashMap::new();
    for r in expr.stream_refs() {
        tiers.insert(r, source.tier(r)?);
    }
    let frames = (duration_ms / frame_ms) as usize;
    Ok(eval_expr(expr, &tiers, frames, frame_ms))
}

/// Turns runs into scenes: joins neighbours whose gap is shorter than
/// `merge_gap_ms`, then drops scenes shorter than `min_duration_ms`.
pub fn merge_and_filter(runs: &FrameRuns, frame_ms: u64, merge_gap_ms: Option<u64>, min_duration_ms: Option<u64>) -> Vec<Scene> {
    // (first frame, end frame, satisfied frames)
    let mut merged: Vec<(usize, usize, usize)> = Vec::new();
    for &(lo, hi) in &runs.runs {
        match merged.last_mut() {
            Some(last) if merge_gap_ms.is_some_and(|g| ((lo - last.1) as u64 * frame_ms) < g) => {
                last.1 = hi;
                last.2 += hi - lo;
            }
            _ => merged.push((lo, hi, hi - lo)),
        }
    }
    merged
        .into_iter()
        .filter(|&(lo, hi, _)| min_duration_ms.is_none_or(|d| (hi - lo) as u64 * frame_ms >= d))
        .map(|(lo, hi, hits)| Scene {
            start_ms: lo as u64 * frame_ms,
            end_ms: hi as u64 * frame_ms,
            score: hits as f64 / (hi - lo) as f64,
        })
        .collect()
}

pub fn evaluate(q: &Query, source: &dyn TierSource, duration_ms: u64, frame_ms: u64) -> Result<Vec<Scene>, SearchError> {
    let runs = evaluate_runs(&q.expr, source, duration_ms, frame_ms)?;
    Ok(merge_and_filter(&runs, frame_ms, q.merge_gap_ms, q.min_duration_ms))
}

/// Writes scenes as an annotation under `key`.
///
/// A continuous scheme with range `[0, 1]` gets value 1 on samples inside a
/// scene and 0 elsewhere, over `floor(duration * rate)` samples. A binary
/// discrete scheme gets one segment per scene, labelled with its non-rest
/// label, the scene score as confidence.
pub fn scenes_to_annotation(scenes: &[Scene], scheme: &Scheme, key: AnnotationKey, duration_ms: u64) -> Result<Annotation, SearchError> {
    let body = match scheme.def() {
        SchemeDef::Continuous {
            sample_rate,
            min_val,
            max_val,
        } if *min_val == 0.0 && *max_val == 1.0 => {
            let len = sample_rate.samples_in(duration_ms) as usize;
            let mut values = vec![0.0; len];
            for s in scenes {
                let lo = (sample_rate.first_index_at_or_after(s.start_ms) as usize).min(len);
                let hi = (sample_rate.first_index_at_or_after(s.end_ms) as usize).min(len);
                values[lo..hi].fill(1.0);
            }
            AnnotationBody::Track(ContinuousTrack::new(*sample_rate, values))
        }
        SchemeDef::Discrete { labels } if labels.len() == 2 => {
            let label = *labels.keys().find(|&&id| id != REST_ID).expect("binary scheme has a non-rest label");
            AnnotationBody::Segments {
                segments: scenes
                    .iter()
                    .map(|s| DiscreteSegment {
                        start_ms: s.start_ms,
                        end_ms: s.end_ms,
                        label_id: label,
                        confidence: s.score,
                    })
                    .collect(),
            }
        }
        _ => {
            return Err(SearchError::UnsupportedScheme(format!(
                "{} must be continuous over [0, 1] or binary discrete",
                scheme.name()
            )))
        }
    };
    Ok(Annotation { key, body })
}
