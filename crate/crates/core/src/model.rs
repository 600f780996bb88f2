//! Schemes, annotations, sessions and the frame sampling rules shared by
//! every other module.
//!
//! Times are integer milliseconds. A discrete tier is a sorted list of
//! non-overlapping labelled segments; gaps between segments carry the rest
//! label [`REST_ID`]. A continuous tier is a uniformly sampled track where
//! sample `j` is stamped at `j / sample_rate` seconds.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::rate::SampleRate;

/// Label id of the implicit "no event" class in every discrete scheme.
pub const REST_ID: u32 = 0;
pub const REST_NAME: &str = "REST";

/// Returns true for identifiers matching `[A-Za-z0-9_-]+`.
pub fn is_identifier(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

/// Annotator ids additionally allow `:`, `@` and `.` so that machine users
/// can be named `DISCOVER:<module>@<version>`.
pub fn is_annotator_identifier(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('.')
        && s.bytes().all(|b| {
            b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b':' | b'@' | b'.')
        })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Discrete,
    Continuous,
    Free,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Discrete => "discrete",
            SchemeKind::Continuous => "continuous",
            SchemeKind::Free => "free",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Value space of a scheme.
#[derive(Clone, Debug, PartialEq)]
pub enum SchemeDef {
    Discrete {
        labels: BTreeMap<u32, String>,
    },
    Continuous {
        sample_rate: SampleRate,
        min_val: f64,
        max_val: f64,
    },
    Free,
}

/// The declared type of an annotation tier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemeRepr", into = "SchemeRepr")]
pub struct Scheme {
    name: String,
    def: SchemeDef,
}

impl Scheme {
    /// Builds a discrete scheme. The rest label `0 => "REST"` is inserted
    /// when absent; passing id 0 under any other name is an error.
    pub fn discrete<'a>(
        name: &str,
        labels: impl IntoIterator<Item = (u32, &'a str)>,
    ) -> Result<Self, ModelError> {
        let mut map = BTreeMap::new();
        for (id, label) in labels {
            if map.insert(id, label.to_string()).is_some() {
                return Err(ModelError::InvalidScheme(format!("duplicate label id {id}")));
            }
        }
        Self::from_parts(name, SchemeDef::Discrete { labels: map })
    }

    pub fn continuous(
        name: &str,
        sample_rate: SampleRate,
        min_val: f64,
        max_val: f64,
    ) -> Result<Self, ModelError> {
        Self::from_parts(
            name,
            SchemeDef::Continuous {
                sample_rate,
                min_val,
                max_val,
            },
        )
    }

    pub fn free(name: &str) -> Result<Self, ModelError> {
        Self::from_parts(name, SchemeDef::Free)
    }

    fn from_parts(name: &str, mut def: SchemeDef) -> Result<Self, ModelError> {
        if !is_identifier(name) {
            return Err(ModelError::InvalidIdentifier(name.to_string()));
        }
        match &mut def {
            SchemeDef::Discrete { labels } => {
                match labels.get(&REST_ID) {
                    None => {
                        labels.insert(REST_ID, REST_NAME.to_string());
                    }
                    Some(n) if n != REST_NAME => {
                        return Err(ModelError::InvalidScheme(format!(
                            "label 0 is reserved for {REST_NAME}, got {n:?}"
                        )))
                    }
                    Some(_) => {}
                }
                if let Some((id, _)) = labels.iter().find(|(_, n)| n.trim().is_empty()) {
                    return Err(ModelError::InvalidScheme(format!("label {id} has an empty name")));
                }
            }
            SchemeDef::Continuous {
                min_val, max_val, ..
            } => {
                if !(min_val.is_finite() && max_val.is_finite() && min_val < max_val) {
                    return Err(ModelError::InvalidScheme(format!(
                        "need finite min_val < max_val, got [{min_val}, {max_val}]"
                    )));
                }
            }
            SchemeDef::Free => {}
        }
        Ok(Self {
            name: name.to_string(),
            def,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn def(&self) -> &SchemeDef {
        &self.def
    }

    pub fn kind(&self) -> SchemeKind {
        match self.def {
            SchemeDef::Discrete { .. } => SchemeKind::Discrete,
            SchemeDef::Continuous { .. } => SchemeKind::Continuous,
            SchemeDef::Free => SchemeKind::Free,
        }
    }

    pub fn labels(&self) -> Option<&BTreeMap<u32, String>> {
        match &self.def {
            SchemeDef::Discrete { labels } => Some(labels),
            _ => None,
        }
    }

    pub fn has_label(&self, id: u32) -> bool {
        self.labels().is_some_and(|l| l.contains_key(&id))
    }

    /// `(sample_rate, min_val, max_val)` for continuous schemes.
    pub fn range(&self) -> Option<(SampleRate, f64, f64)> {
        match self.def {
            SchemeDef::Continuous {
                sample_rate,
                min_val,
                max_val,
            } => Some((sample_rate, min_val, max_val)),
            _ => None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemeRepr {
    name: String,
    kind: SchemeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<LabelRepr>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sample_rate: Option<SampleRate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    min_val: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_val: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LabelRepr {
    id: u32,
    name: String,
}

impl From<Scheme> for SchemeRepr {
    fn from(s: Scheme) -> Self {
        let kind = s.kind();
        let mut repr = SchemeRepr {
            name: s.name,
            kind,
            labels: None,
            sample_rate: None,
            min_val: None,
            max_val: None,
        };
        match s.def {
            SchemeDef::Discrete { labels } => {
                repr.labels = Some(
                    labels
                        .into_iter()
                        .map(|(id, name)| LabelRepr { id, name })
                        .collect(),
                )
            }
            SchemeDef::Continuous {
                sample_rate,
                min_val,
                max_val,
            } => {
                repr.sample_rate = Some(sample_rate);
                repr.min_val = Some(min_val);
                repr.max_val = Some(max_val);
            }
            SchemeDef::Free => {}
        }
        repr
    }
}

impl TryFrom<SchemeRepr> for Scheme {
    type Error = ModelError;

    fn try_from(r: SchemeRepr) -> Result<Self, Self::Error> {
        let missing = |field: &str| ModelError::InvalidScheme(format!("{} scheme needs {field}", r.kind));
        match r.kind {
            SchemeKind::Discrete => {
                let labels = r.labels.as_ref().ok_or_else(|| missing("labels"))?;
                Scheme::discrete(&r.name, labels.iter().map(|l| (l.id, l.name.as_str())))
            }
            SchemeKind::Continuous => Scheme::continuous(
                &r.name,
                r.sample_rate.ok_or_else(|| missing("sample_rate"))?,
                r.min_val.ok_or_else(|| missing("min_val"))?,
                r.max_val.ok_or_else(|| missing("max_val"))?,
            ),
            SchemeKind::Free => Scheme::free(&r.name),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteSegment {
    pub start_ms: u64,
    pub end_ms: u64,
    pub label_id: u32,
    pub confidence: f64,
}

impl DiscreteSegment {
    pub fn new(start_ms: u64, end_ms: u64, label_id: u32) -> Self {
        Self {
            start_ms,
            end_ms,
            label_id,
            confidence: 1.0,
        }
    }
}

/// Uniformly sampled values. `NaN` marks a hole (no value).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContinuousTrack {
    pub sample_rate: SampleRate,
    #[serde(with = "nan_as_null")]
    pub values: Vec<f64>,
    pub confidences: Vec<f64>,
}

// NaN holes compare equal to each other so round-trip checks can use `==`.
impl PartialEq for ContinuousTrack {
    fn eq(&self, other: &Self) -> bool {
        fn same(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len()
                && a.iter()
                    .zip(b)
                    .all(|(x, y)| x == y || (x.is_nan() && y.is_nan()))
        }
        self.sample_rate == other.sample_rate
            && same(&self.values, &other.values)
            && same(&self.confidences, &other.confidences)
    }
}

impl ContinuousTrack {
    pub fn new(sample_rate: SampleRate, values: Vec<f64>) -> Self {
        let confidences = vec![1.0; values.len()];
        Self {
            sample_rate,
            values,
            confidences,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Covered duration, rounded down to whole ms.
    pub fn duration_ms(&self) -> u64 {
        self.sample_rate.sample_time_ms(self.values.len() as u64)
    }
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
        values
            .iter()
            .map(|v| (!v.is_nan()).then_some(*v))
            .collect::<Vec<_>>()
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw = Vec::<Option<f64>>::deserialize(d)?;
        Ok(raw.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub start_ms: u64,
    pub end_ms: u64,
    pub text: String,
    pub speaker_confidence: f64,
}

/// Identity of one tier: who annotated which scheme for which role.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AnnotationKey {
    pub dataset: String,
    pub session: String,
    pub role: String,
    pub scheme: String,
    pub annotator: String,
}

impl AnnotationKey {
    pub fn new(dataset: &str, session: &str, role: &str, scheme: &str, annotator: &str) -> Self {
        Self {
            dataset: dataset.into(),
            session: session.into(),
            role: role.into(),
            scheme: scheme.into(),
            annotator: annotator.into(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for part in [&self.dataset, &self.session, &self.role, &self.scheme] {
            if !is_identifier(part) {
                return Err(ModelError::InvalidIdentifier(part.clone()));
            }
        }
        if !is_annotator_identifier(&self.annotator) {
            return Err(ModelError::InvalidIdentifier(self.annotator.clone()));
        }
        Ok(())
    }
}

impl fmt::Display for AnnotationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}.{}.{}",
            self.dataset, self.session, self.role, self.scheme, self.annotator
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum AnnotationBody {
    Segments { segments: Vec<DiscreteSegment> },
    Track(ContinuousTrack),
    Transcript { segments: Vec<TranscriptSegment> },
}

impl AnnotationBody {
    pub fn kind(&self) -> SchemeKind {
        match self {
            AnnotationBody::Segments { .. } => SchemeKind::Discrete,
            AnnotationBody::Track(_) => SchemeKind::Continuous,
            AnnotationBody::Transcript { .. } => SchemeKind::Free,
        }
    }

    fn kind_name(&self) -> &'static str {
        self.kind().as_str()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub key: AnnotationKey,
    pub body: AnnotationBody,
}

impl Annotation {
    pub fn segments(&self) -> Result<&[DiscreteSegment], ModelError> {
        match &self.body {
            AnnotationBody::Segments { segments } => Ok(segments),
            other => Err(ModelError::WrongKind {
                expected: "discrete",
                found: other.kind_name(),
            }),
        }
    }

    pub fn track(&self) -> Result<&ContinuousTrack, ModelError> {
        match &self.body {
            AnnotationBody::Track(t) => Ok(t),
            other => Err(ModelError::WrongKind {
                expected: "continuous",
                found: other.kind_name(),
            }),
        }
    }

    pub fn transcript(&self) -> Result<&[TranscriptSegment], ModelError> {
        match &self.body {
            AnnotationBody::Transcript { segments } => Ok(segments),
            other => Err(ModelError::WrongKind {
                expected: "free",
                found: other.kind_name(),
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub dataset: String,
    pub name: String,
    pub duration_ms: u64,
    pub roles: Vec<String>,
    #[serde(default)]
    pub media: Vec<String>,
}

impl Session {
    pub fn validate(&self) -> Result<(), ModelError> {
        for id in [&self.dataset, &self.name].into_iter().chain(&self.roles) {
            if !is_identifier(id) {
                return Err(ModelError::InvalidIdentifier(id.clone()));
            }
        }
        if self.duration_ms == 0 {
            return Err(ModelError::EmptySpan(0, 0));
        }
        let mut roles: Vec<_> = self.roles.iter().collect();
        roles.sort();
        if let Some(w) = roles.windows(2).find(|w| w[0] == w[1]) {
            return Err(ModelError::InvalidIdentifier(format!("duplicate role {}", w[0])));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    InvalidKey,
    SchemeMismatch,
    SessionMismatch,
    UnknownRole,
    KindMismatch,
    EmptySegment,
    Unsorted,
    Overlap,
    UnknownLabel,
    Confidence,
    Range,
    LengthMismatch,
    RateMismatch,
    BeyondDuration,
    EmptyText,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub message: String,
}

impl Violation {
    fn new(kind: ViolationKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Collects every invariant violation of `a` against its scheme and session.
/// An empty result means the annotation is valid.
pub fn validate_annotation(a: &Annotation, scheme: &Scheme, session: &Session) -> Vec<Violation> {
    use ViolationKind as V;
    let mut out = Vec::new();
    let key = &a.key;
    if let Err(e) = key.validate() {
        out.push(Violation::new(V::InvalidKey, e.to_string()));
    }
    if key.scheme != scheme.name() {
        out.push(Violation::new(
            V::SchemeMismatch,
            format!("annotation scheme {:?} but scheme is {:?}", key.scheme, scheme.name()),
        ));
    }
    if key.dataset != session.dataset || key.session != session.name {
        out.push(Violation::new(
            V::SessionMismatch,
            format!("annotation belongs to {}/{}", key.dataset, key.session),
        ));
    }
    if !session.roles.iter().any(|r| r == &key.role) {
        out.push(Violation::new(V::UnknownRole, format!("unknown role {:?}", key.role)));
    }
    if a.body.kind() != scheme.kind() {
        out.push(Violation::new(
            V::KindMismatch,
            format!("kind mismatch: body is {} but scheme is {}", a.body.kind(), scheme.kind()),
        ));
        return out;
    }
    let duration = session.duration_ms;
    let check_conf = |out: &mut Vec<Violation>, i: usize, c: f64| {
        if !(0.0..=1.0).contains(&c) {
            out.push(Violation::new(V::Confidence, format!("confidence {c} at index {i} outside [0, 1]")));
        }
    };
    match &a.body {
        AnnotationBody::Segments { segments } => {
            let spans: Vec<(u64, u64)> = segments.iter().map(|s| (s.start_ms, s.end_ms)).collect();
            check_spans(&spans, duration, &mut out);
            for (i, s) in segments.iter().enumerate() {
                if !scheme.has_label(s.label_id) {
                    out.push(Violation::new(V::UnknownLabel, format!("unknown label {} at index {i}", s.label_id)));
                }
                check_conf(&mut out, i, s.confidence);
            }
        }
        AnnotationBody::Transcript { segments } => {
            let spans: Vec<(u64, u64)> = segments.iter().map(|s| (s.start_ms, s.end_ms)).collect();
            check_spans(&spans, duration, &mut out);
            for (i, s) in segments.iter().enumerate() {
                if s.text.trim().is_empty() {
                    out.push(Violation::new(V::EmptyText, format!("empty text at index {i}")));
                }
                check_conf(&mut out, i, s.speaker_confidence);
            }
        }
        AnnotationBody::Track(track) => {
            let (rate, lo, hi) = scheme.range().expect("continuous scheme");
            if track.sample_rate != rate {
                out.push(Violation::new(
                    V::RateMismatch,
                    format!("track rate {} Hz but scheme rate {} Hz", track.sample_rate, rate),
                ));
            }
            if track.values.len() != track.confidences.len() {
                out.push(Violation::new(
                    V::LengthMismatch,
                    format!("{} values but {} confidences", track.values.len(), track.confidences.len()),
                ));
            }
            for (i, v) in track.values.iter().enumerate() {
                if !v.is_nan() && !(lo..=hi).contains(v) {
                    out.push(Violation::new(V::Range, format!("range: value {v} at index {i} outside [{lo}, {hi}]")));
                }
            }
            for (i, c) in track.confidences.iter().enumerate() {
                check_conf(&mut out, i, *c);
            }
            if let Some(last) = track.values.len().checked_sub(1) {
                let t = track.sample_rate.sample_time_ms(last as u64);
                if t >= duration {
                    out.push(Violation::new(
                        V::BeyondDuration,
                        format!("track runs to {t} ms beyond session duration {duration} ms"),
                    ));
                }
            }
        }
    }
    out
}

fn check_spans(spans: &[(u64, u64)], duration: u64, out: &mut Vec<Violation>) {
    use ViolationKind as V;
    for (i, &(s, e)) in spans.iter().enumerate() {
        if s >= e {
            out.push(Violation::new(V::EmptySegment, format!("segment {i} has start {s} >= end {e}")));
        }
        if e > duration {
            out.push(Violation::new(
                V::BeyondDuration,
                format!("segment {i} ends at {e} ms beyond session duration {duration} ms"),
            ));
        }
    }
    for (i, w) in spans.windows(2).enumerate() {
        if w[1].0 < w[0].0 {
            out.push(Violation::new(V::Unsorted, format!("segments unsorted at index {i}/{}", i + 1)));
        } else if w[0].1 > w[1].0 {
            out.push(Violation::new(V::Overlap, format!("overlap at index {i}/{}", i + 1)));
        }
    }
}

fn check_frame_span(frame_ms: u64, t0_ms: u64, t1_ms: u64) -> Result<usize, ModelError> {
    if frame_ms == 0 {
        return Err(ModelError::ZeroFrame);
    }
    if t0_ms >= t1_ms {
        return Err(ModelError::EmptySpan(t0_ms, t1_ms));
    }
    let span_ms = t1_ms - t0_ms;
    if !span_ms.is_multiple_of(frame_ms) {
        return Err(ModelError::NonDivisibleSpan { span_ms, frame_ms });
    }
    Ok((span_ms / frame_ms) as usize)
}

/// Index of the first frame (of width `frame_ms`, starting at offset 0)
/// whose midpoint lies at or after `offset_ms`.
fn first_frame_with_midpoint_from(offset_ms: i128, frame_ms: i128) -> i128 {
    let twice = 2 * offset_ms;
    if twice <= frame_ms {
        0
    } else {
        (twice - frame_ms + 2 * frame_ms - 1) / (2 * frame_ms)
    }
}

/// Frame range `[lo, hi)` whose midpoints fall inside `[start_ms, end_ms)`,
/// for frames of width `frame_ms` starting at `t0_ms`.
pub(crate) fn covered_frames(start_ms: u64, end_ms: u64, frame_ms: u64, t0_ms: u64) -> (usize, usize) {
    let f = frame_ms as i128;
    let lo = first_frame_with_midpoint_from(start_ms as i128 - t0_ms as i128, f);
    let hi = first_frame_with_midpoint_from(end_ms as i128 - t0_ms as i128, f);
    (lo as usize, hi.max(lo) as usize)
}

/// Labels each frame of `[t0_ms, t1_ms)` with the segment covering its
/// midpoint, or [`REST_ID`] where no segment does.
pub fn segments_to_frames(
    segments: &[DiscreteSegment],
    frame_ms: u64,
    t0_ms: u64,
    t1_ms: u64,
) -> Result<Vec<u32>, ModelError> {
    let n = check_frame_span(frame_ms, t0_ms, t1_ms)?;
    let mut labels = vec![REST_ID; n];
    for seg in segments {
        if seg.end_ms <= t0_ms || seg.start_ms >= t1_ms {
            continue;
        }
        let (lo, hi) = covered_frames(seg.start_ms, seg.end_ms, frame_ms, t0_ms);
        let (lo, hi) = (lo.min(n), hi.min(n));
        labels[lo..hi].fill(seg.label_id);
    }
    Ok(labels)
}

/// [`segments_to_frames`] over a discrete annotation.
pub fn sample_discrete_to_frames(
    a: &Annotation,
    frame_ms: u64,
    t0_ms: u64,
    t1_ms: u64,
) -> Result<Vec<u32>, ModelError> {
    segments_to_frames(a.segments()?, frame_ms, t0_ms, t1_ms)
}

/// Coalesces runs of equal non-rest frame labels into segments.
pub fn frames_to_segments(labels: &[u32], frame_ms: u64, t0_ms: u64) -> Vec<DiscreteSegment> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let label = labels[i];
        let mut j = i + 1;
        while j < labels.len() && labels[j] == label {
            j += 1;
        }
        if label != REST_ID {
            out.push(DiscreteSegment::new(
                t0_ms + i as u64 * frame_ms,
                t0_ms + j as u64 * frame_ms,
                label,
            ));
        }
        i = j;
    }
    out
}

/// Nearest-neighbour resampling. Output sample `j` takes the source sample
/// nearest to `j / target_rate` seconds; the output covers
/// `floor(duration * target_rate)` samples.
pub fn resample_continuous(track: &ContinuousTrack, target: SampleRate) -> Result<ContinuousTrack, ModelError> {
    if track.is_empty() {
        return Err(ModelError::EmptyTrack);
    }
    if target == track.sample_rate {
        return Ok(track.clone());
    }
    let src = track.sample_rate;
    // len / src * target, exact
    let out_len = (track.len() as u128 * src.denom() as u128 * target.numer() as u128)
        / (src.numer() as u128 * target.denom() as u128);
    let last = track.len() - 1;
    let mut values = Vec::with_capacity(out_len as usize);
    let mut confidences = Vec::with_capacity(out_len as usize);
    for j in 0..out_len {
        // round(j * src / target), half up
        let num = 2 * j * src.numer() as u128 * target.denom() as u128
            + src.denom() as u128 * target.numer() as u128;
        let den = 2 * src.denom() as u128 * target.numer() as u128;
        let idx = ((num / den) as usize).min(last);
        values.push(track.values[idx]);
        confidences.push(track.confidences.get(idx).copied().unwrap_or(f64::NAN));
    }
    Ok(ContinuousTrack {
        sample_rate: target,
        values,
        confidences,
    })
}

/// Value of `track` on each of `n` frames starting at `t0_ms`: the sample
/// nearest to each frame's start. Frames past the end of the track are NaN.
pub fn track_to_frames(track: &ContinuousTrack, frame_ms: u64, t0_ms: u64, n: usize) -> Vec<f64> {
    (0..n as u64)
        .map(|i| {
            let idx = track.sample_rate.nearest_index(t0_ms + i * frame_ms) as usize;
            track.values.get(idx).copied().unwrap_or(f64::NAN)
        })
        .collect()
}
