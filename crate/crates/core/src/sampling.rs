//! Sliding windows over annotation and stream inputs.
//!
//! A window is `left_context + frame + right_context` long and advances by
//! one frame. Only full windows are produced: the first starts at 0, the
//! last ends at or before the session end. Arrays inside a window are in
//! time order, so index 0 is the oldest frame (the left-context edge) and
//! index [`WindowSpec::current_index`] is the frame the window is about.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::error::ModelError;
use crate::model::{
    segments_to_frames, track_to_frames, AnnotationBody, AnnotationKey, ContinuousTrack, DiscreteSegment,
    Scheme, SchemeKind, Session, TranscriptSegment,
};
use crate::rate::SampleRate;
use crate::storage::{stream_name, StorageError, Store, StreamHeader};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("invalid window spec: {0}")]
    InvalidSpec(String),
    #[error("duration {duration_ms} ms is shorter than one window of {window_ms} ms")]
    TooShort { duration_ms: u64, window_ms: u64 },
    #[error("missing input annotation: {0}")]
    MissingInput(String),
    #[error("ambiguous input {0}: several annotators, name one")]
    Ambiguous(String),
    #[error("input {id} is {found}, expected {expected}")]
    WrongInputKind {
        id: String,
        expected: String,
        found: String,
    },
    #[error("duplicate input id {0}")]
    DuplicateId(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub frame_ms: u64,
    pub left_context_ms: u64,
    #[serde(default)]
    pub right_context_ms: u64,
}

impl WindowSpec {
    pub fn new(frame_ms: u64, left_context_ms: u64, right_context_ms: u64) -> Result<Self, SamplingError> {
        let spec = Self {
            frame_ms,
            left_context_ms,
            right_context_ms,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.frame_ms == 0 {
            return Err(SamplingError::InvalidSpec("frame_ms must be positive".into()));
        }
        if !self.left_context_ms.is_multiple_of(self.frame_ms) || !self.right_context_ms.is_multiple_of(self.frame_ms) {
            return Err(SamplingError::InvalidSpec(format!(
                "contexts {}/{} ms must be multiples of frame {} ms",
                self.left_context_ms, self.right_context_ms, self.frame_ms
            )));
        }
        Ok(())
    }

    pub fn window_ms(&self) -> u64 {
        self.left_context_ms + self.frame_ms + self.right_context_ms
    }

    pub fn frames_per_window(&self) -> usize {
        (self.window_ms() / self.frame_ms) as usize
    }

    /// Position of the current frame inside a window's arrays.
    pub fn current_index(&self) -> usize {
        (self.left_context_ms / self.frame_ms) as usize
    }

    /// Start time of the current frame of the window starting at `t_start_ms`.
    pub fn current_frame_ms(&self, t_start_ms: u64) -> u64 {
        t_start_ms + self.left_context_ms
    }
}

/// `(duration - window) / frame + 1` full windows.
pub fn window_count(duration_ms: u64, spec: &WindowSpec) -> Result<usize, SamplingError> {
    spec.validate()?;
    let w = spec.window_ms();
    if duration_ms < w {
        return Err(SamplingError::TooShort {
            duration_ms,
            window_ms: w,
        });
    }
    Ok(((duration_ms - w) / spec.frame_ms + 1) as usize)
}

/// Start times of every full window.
pub fn make_windows(duration_ms: u64, spec: &WindowSpec) -> Result<Vec<u64>, SamplingError> {
    let n = window_count(duration_ms, spec)?;
    Ok((0..n as u64).map(|i| i * spec.frame_ms).collect())
}

/// Where an input comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Source {
    Annotation(SchemeKind),
    Stream,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Source::Annotation(SchemeKind::Discrete) => f.write_str("db:annotation:Discrete"),
            Source::Annotation(SchemeKind::Continuous) => f.write_str("db:annotation:Continuous"),
            Source::Annotation(SchemeKind::Free) => f.write_str("db:annotation:Free"),
            Source::Stream => f.write_str("file:stream"),
        }
    }
}

impl std::str::FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "db:annotation:Discrete" => Source::Annotation(SchemeKind::Discrete),
            "db:annotation:Continuous" => Source::Annotation(SchemeKind::Continuous),
            "db:annotation:Free" => Source::Annotation(SchemeKind::Free),
            "file:stream" => Source::Stream,
            other => return Err(format!("unknown src {other:?}")),
        })
    }
}

impl Serialize for Source {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Source {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlotType {
    Input,
    Output,
}

/// One data slot, e.g.
///
/// ```json
/// {"src": "db:annotation:Discrete", "type": "input", "id": "smile_teacher",
///  "scheme": "smile", "role": "teacher", "annotator": "DISCOVER"}
/// ```
///
/// For `file:stream` slots the stream read is `<role>.<scheme>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDescriptor {
    pub src: Source,
    #[serde(rename = "type")]
    pub slot: SlotType,
    pub id: String,
    pub scheme: String,
    pub role: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
}

impl InputDescriptor {
    pub fn annotation(kind: SchemeKind, id: &str, scheme: &str, role: &str, annotator: &str) -> Self {
        Self {
            src: Source::Annotation(kind),
            slot: SlotType::Input,
            id: id.into(),
            scheme: scheme.into(),
            role: role.into(),
            annotator: Some(annotator.into()),
        }
    }

    pub fn stream(id: &str, signal: &str, role: &str) -> Self {
        Self {
            src: Source::Stream,
            slot: SlotType::Input,
            id: id.into(),
            scheme: signal.into(),
            role: role.into(),
            annotator: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum InputData {
    Discrete(Vec<DiscreteSegment>),
    Continuous(ContinuousTrack),
    Transcript(Vec<TranscriptSegment>),
    Stream { header: StreamHeader, frames: Vec<f32> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedInput {
    pub id: String,
    pub data: InputData,
}

impl ResolvedInput {
    pub fn discrete(id: &str, segments: Vec<DiscreteSegment>) -> Self {
        Self {
            id: id.into(),
            data: InputData::Discrete(segments),
        }
    }

    pub fn from_body(id: &str, body: AnnotationBody) -> Self {
        let data = match body {
            AnnotationBody::Segments { segments } => InputData::Discrete(segments),
            AnnotationBody::Track(t) => InputData::Continuous(t),
            AnnotationBody::Transcript { segments } => InputData::Transcript(segments),
        };
        Self { id: id.into(), data }
    }
}

/// Finds the annotation a `(scheme, role, annotator?)` reference points to.
/// Without an annotator the reference must be unambiguous.
pub fn resolve_key(
    store: &Store,
    dataset: &str,
    session: &str,
    scheme: &str,
    role: &str,
    annotator: Option<&str>,
) -> Result<AnnotationKey, SamplingError> {
    let label = format!("{scheme}@{role}{}", annotator.map(|a| format!(".{a}")).unwrap_or_default());
    let mut found = store
        .list_annotations(dataset, session)?
        .into_iter()
        .filter(|k| k.scheme == scheme && k.role == role && annotator.is_none_or(|a| k.annotator == a));
    match (found.next(), found.next()) {
        (Some(k), None) => Ok(k),
        (None, _) => Err(SamplingError::MissingInput(label)),
        (Some(_), Some(_)) => Err(SamplingError::Ambiguous(label)),
    }
}

/// Loads every described input of one session.
pub fn resolve_inputs(
    store: &Store,
    dataset: &str,
    session: &str,
    descriptors: &[InputDescriptor],
) -> Result<Vec<ResolvedInput>, SamplingError> {
    let mut out: Vec<ResolvedInput> = Vec::with_capacity(descriptors.len());
    for d in descriptors {
        if out.iter().any(|r| r.id == d.id) {
            return Err(SamplingError::DuplicateId(d.id.clone()));
        }
        match d.src {
            Source::Stream => {
                let name = stream_name(&d.role, &d.scheme);
                let (header, frames) = store.get_stream(dataset, session, &name).map_err(|e| match e {
                    StorageError::NotFound(_) => SamplingError::MissingInput(name.clone()),
                    e => e.into(),
                })?;
                out.push(ResolvedInput {
                    id: d.id.clone(),
                    data: InputData::Stream { header, frames },
                });
            }
            Source::Annotation(kind) => {
                let key = resolve_key(store, dataset, session, &d.scheme, &d.role, d.annotator.as_deref())?;
                let (a, _) = store.load_annotation(&key)?;
                if a.body.kind() != kind {
                    return Err(SamplingError::WrongInputKind {
                        id: d.id.clone(),
                        expected: kind.to_string(),
                        found: a.body.kind().to_string(),
                    });
                }
                out.push(ResolvedInput::from_body(&d.id, a.body));
            }
        }
    }
    Ok(out)
}

/// Per-input data of one window.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", content = "data", rename_all = "lowercase")]
pub enum Payload {
    /// One label id per frame.
    Labels(Vec<u32>),
    /// One value per frame; NaN where the track has no sample.
    Values(Vec<f64>),
    /// Texts of transcript segments overlapping the window.
    Text(Vec<String>),
    /// Raw stream rows whose timestamps fall inside the window, row-major.
    Samples { dim: u32, data: Vec<f32> },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowSample {
    pub t_start_ms: u64,
    /// Payloads in declared input order.
    pub inputs: Vec<(String, Payload)>,
}

impl WindowSample {
    pub fn get(&self, id: &str) -> Option<&Payload> {
        self.inputs.iter().find(|(k, _)| k == id).map(|(_, p)| p)
    }

    pub fn labels(&self, id: &str) -> Option<&[u32]> {
        match self.get(id)? {
            Payload::Labels(l) => Some(l),
            _ => None,
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.inputs.iter().map(|(k, _)| k.as_str())
    }
}

pub fn gather_window(inputs: &[ResolvedInput], t_start_ms: u64, spec: &WindowSpec) -> Result<WindowSample, SamplingError> {
    spec.validate()?;
    let t_end = t_start_ms + spec.window_ms();
    let n = spec.frames_per_window();
    let mut out = Vec::with_capacity(inputs.len());
    for input in inputs {
        let payload = match &input.data {
            InputData::Discrete(segments) => Payload::Labels(segments_to_frames(segments, spec.frame_ms, t_start_ms, t_end)?),
            InputData::Continuous(track) => Payload::Values(track_to_frames(track, spec.frame_ms, t_start_ms, n)),
            InputData::Transcript(segments) => Payload::Text(
                segments
                    .iter()
                    .filter(|s| s.start_ms < t_end && s.end_ms > t_start_ms)
                    .map(|s| s.text.clone())
                    .collect(),
            ),
            InputData::Stream { header, frames } => {
                let rate = header.sample_rate;
                let lo = rate.first_index_at_or_after(t_start_ms).min(header.frame_count) as usize;
                let hi = rate.first_index_at_or_after(t_end).min(header.frame_count) as usize;
                let dim = header.dim as usize;
                Payload::Samples {
                    dim: header.dim,
                    data: frames[lo * dim..hi * dim].to_vec(),
                }
            }
        };
        out.push((input.id.clone(), payload));
    }
    Ok(WindowSample {
        t_start_ms,
        inputs: out,
    })
}

/// Iterates the windows of one session.
pub struct DatasetIterator {
    inputs: Vec<ResolvedInput>,
    spec: WindowSpec,
    starts: Vec<u64>,
    duration_ms: u64,
    pos: usize,
}

impl DatasetIterator {
    pub fn new(inputs: Vec<ResolvedInput>, duration_ms: u64, spec: WindowSpec) -> Result<Self, SamplingError> {
        let starts = make_windows(duration_ms, &spec)?;
        Ok(Self {
            inputs,
            spec,
            starts,
            duration_ms,
            pos: 0,
        })
    }

    /// Resolves `descriptors` from the store and windows the session.
    pub fn load(
        store: &Store,
        session: &Session,
        descriptors: &[InputDescriptor],
        spec: WindowSpec,
    ) -> Result<Self, SamplingError> {
        let inputs = resolve_inputs(store, &session.dataset, &session.name, descriptors)?;
        Self::new(inputs, session.duration_ms, spec)
    }

    pub fn spec(&self) -> &WindowSpec {
        &self.spec
    }

    pub fn starts(&self) -> &[u64] {
        &self.starts
    }

    pub fn duration_ms(&self) -> u64 {
        self.duration_ms
    }

    /// Runs `f` on every remaining window and writes each `(value,
    /// confidence)` at the window's current frame of a track on the frame
    /// grid, resampled to the scheme's rate. Frames no window is about
    /// (the leading left context, trailing right context) stay NaN holes
    /// with confidence 0.
    pub fn derive_track<F>(&mut self, scheme: &Scheme, mut f: F) -> Result<ContinuousTrack, SamplingError>
    where
        F: FnMut(&WindowSample) -> (f64, f64),
    {
        let (rate, _, _) = scheme.range().ok_or(ModelError::WrongKind {
            expected: "continuous",
            found: scheme.kind().as_str(),
        })?;
        let frame_ms = self.spec.frame_ms;
        let grid = SampleRate::from_frame_ms(frame_ms)?;
        let len = (self.duration_ms / frame_ms) as usize;
        let mut track = ContinuousTrack {
            sample_rate: grid,
            values: vec![f64::NAN; len],
            confidences: vec![0.0; len],
        };
        let spec = self.spec;
        for window in self.by_ref() {
            let window = window?;
            let (value, confidence) = f(&window);
            let frame = (spec.current_frame_ms(window.t_start_ms) / frame_ms) as usize;
            track.values[frame] = value;
            track.confidences[frame] = confidence;
        }
        if rate == grid {
            Ok(track)
        } else {
            Ok(crate::model::resample_continuous(&track, rate)?)
        }
    }
}

impl Iterator for DatasetIterator {
    type Item = Result<WindowSample, SamplingError>;

    fn next(&mut self) -> Option<Self::Item> {
        let t = *self.starts.get(self.pos)?;
        self.pos += 1;
        Some(gather_window(&self.inputs, t, &self.spec))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.starts.len() - self.pos;
        (left, Some(left))
    }
}

impl ExactSizeIterator for DatasetIterator {}
