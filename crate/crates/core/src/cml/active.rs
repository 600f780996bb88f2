use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::model::{segments_to_frames, Annotation, AnnotationBody, AnnotationKey, DiscreteSegment, REST_ID};

use super::classifier::{train, LinearClassifier, TrainConfig};
use super::CmlError;

/// Prediction for one window. `t_ms` is the start of the frame it labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub t_ms: u64,
    pub label: u32,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub frame_ms: u64,
    pub class_ids: Vec<u32>,
    pub windows: Vec<WindowPrediction>,
}

impl Prediction {
    pub fn labels(&self) -> Vec<u32> {
        self.windows.iter().map(|w| w.label).collect()
    }

    /// Runs of consecutive, adjacent windows with the same non-rest label,
    /// each carrying the mean confidence of its windows.
    pub fn to_segments(&self) -> Vec<DiscreteSegment> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.windows.len() {
            let first = &self.windows[i];
            let mut j = i + 1;
            let mut sum = first.confidence;
            while j < self.windows.len()
                && self.windows[j].label == first.label
                && self.windows[j].t_ms == self.windows[j - 1].t_ms + self.frame_ms
            {
                sum += self.windows[j].confidence;
                j += 1;
            }
            if first.label != REST_ID {
                out.push(DiscreteSegment {
                    start_ms: first.t_ms,
                    end_ms: self.windows[j - 1].t_ms + self.frame_ms,
                    label_id: first.label,
                    confidence: sum / (j - i) as f64,
                });
            }
            i = j;
        }
        out
    }

    pub fn to_annotation(&self, key: AnnotationKey) -> Annotation {
        Annotation {
            key,
            body: AnnotationBody::Segments {
                segments: self.to_segments(),
            },
        }
    }
}

/// Labels every window with the model's argmax class. Windows are given as
/// `(frame start, features)`.
pub fn predict(m: &LinearClassifier, windows: &[(u64, Vec<f64>)], frame_ms: u64) -> Result<Prediction, CmlError> {
    const CHUNK: usize = 2048;
    let predict_chunk = |chunk: &[(u64, Vec<f64>)]| -> Result<Vec<WindowPrediction>, CmlError> {
        chunk
            .iter()
            .map(|(t, x)| {
                let (label, confidence) = m.predict_one(x)?;
                Ok(WindowPrediction {
                    t_ms: *t,
                    label,
                    confidence,
                })
            })
            .collect()
    };
    let parts: Vec<Result<Vec<WindowPrediction>, CmlError>> = if windows.len() <= CHUNK {
        vec![predict_chunk(windows)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = windows
                .chunks(CHUNK)
                .map(|c| s.spawn(move || predict_chunk(c)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("prediction worker panicked")).collect()
        })
    };
    let mut out = Vec::with_capacity(windows.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(Prediction {
        frame_ms,
        class_ids: m.class_ids.clone(),
        windows: out,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub index: usize,
    pub t_ms: u64,
    pub label: u32,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewSelection {
    /// Ascending by confidence, earlier windows first on ties.
    pub windows: Vec<ReviewItem>,
    pub budget_fraction: f64,
}

impl ReviewSelection {
    pub fn contains(&self, t_ms: u64) -> bool {
        self.windows.iter().any(|w| w.t_ms == t_ms)
    }
}

fn budget_count(fraction: f64, total: usize) -> Result<usize, CmlError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CmlError::InvalidBudget(fraction));
    }
    Ok(((fraction * total as f64 - 1e-9).ceil().max(0.0) as usize).min(total))
}

fn select_among(
    pred: &Prediction,
    budget_fraction: f64,
    candidates: impl Fn(usize) -> bool,
) -> Result<ReviewSelection, CmlError> {
    let mut pool: Vec<usize> = (0..pred.windows.len()).filter(|&i| candidates(i)).collect();
    let k = budget_count(budget_fraction, pool.len())?;
    pool.sort_by(|&a, &b| {
        let (wa, wb) = (&pred.windows[a], &pred.windows[b]);
        wa.confidence
            .total_cmp(&wb.confidence)
            .then(wa.t_ms.cmp(&wb.t_ms))
    });
    pool.truncate(k);
    Ok(ReviewSelection {
        windows: pool
            .into_iter()
            .map(|i| {
                let w = &pred.windows[i];
                ReviewItem {
                    index: i,
                    t_ms: w.t_ms,
                    label: w.label,
                    confidence: w.confidence,
                }
            })
            .collect(),
        budget_fraction,
    })
}

/// Least-confidence selection of `ceil(budget_fraction * N)` windows.
pub fn select_for_review(pred: &Prediction, budget_fraction: f64) -> Result<ReviewSelection, CmlError> {
    if pred.windows.is_empty() {
        return Err(CmlError::Empty);
    }
    select_among(pred, budget_fraction, |_| true)
}

/// A reviewer's verdict on one selected window.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub t_ms: u64,
    pub label: u32,
}

/// Overwrites the corrected windows' labels, with confidence 1.
pub fn apply_corrections(
    pred: &Prediction,
    selection: &ReviewSelection,
    corrections: &[Correction],
) -> Result<Prediction, CmlError> {
    let mut out = pred.clone();
    for c in corrections {
        if !pred.class_ids.contains(&c.label) {
            return Err(CmlError::UnknownLabel(c.label));
        }
        let item = selection
            .windows
            .iter()
            .find(|w| w.t_ms == c.t_ms)
            .ok_or(CmlError::OutsideSelection(c.t_ms))?;
        let w = out
            .windows
            .get_mut(item.index)
            .filter(|w| w.t_ms == c.t_ms)
            .ok_or(CmlError::OutsideSelection(c.t_ms))?;
        w.label = c.label;
        w.confidence = 1.0;
    }
    Ok(out)
}

/// Ground-truth label of the frame each window labels.
pub fn oracle_labels(truth: &[DiscreteSegment], times_ms: &[u64], frame_ms: u64) -> Result<Vec<u32>, CmlError> {
    let (Some(&t0), Some(&t1)) = (times_ms.iter().min(), times_ms.iter().max()) else {
        return Ok(Vec::new());
    };
    if frame_ms == 0 {
        return Err(CmlError::Model(crate::ModelError::ZeroFrame));
    }
    if let Some(&t) = times_ms.iter().find(|&&t| (t - t0) % frame_ms != 0) {
        return Err(CmlError::OffGrid(t));
    }
    let frames = segments_to_frames(truth, frame_ms, t0, t1 + frame_ms)?;
    Ok(times_ms.iter().map(|&t| frames[((t - t0) / frame_ms) as usize]).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub rounds: usize,
    pub budget_fraction: f64,
    pub train: TrainConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            budget_fraction: 0.1,
            train: TrainConfig::default(),
        }
    }
}

pub struct LoopInput<'a> {
    /// `(frame start, features)` per window.
    pub windows: &'a [(u64, Vec<f64>)],
    pub frame_ms: u64,
    pub class_ids: &'a [u32],
    /// The oracle annotator's segments.
    pub truth: &'a [DiscreteSegment],
    /// Windows labelled before the first round.
    pub seed: &'a [usize],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// Windows with a human label when the round's model was trained.
    pub labelled: usize,
    pub reviewed: usize,
    pub corrected: usize,
    /// Fraction of windows whose label matches the oracle after corrections.
    pub accuracy: f64,
    pub final_loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopReport {
    pub rounds: Vec<RoundReport>,
    /// Labels after the last round: human labels where reviewed, otherwise
    /// the last model's predictions.
    pub final_prediction: Prediction,
}

/// Repeats train, predict, select, correct for `cfg.rounds` rounds, with
/// the oracle answering every review.
pub fn run_loop(input: &LoopInput<'_>, cfg: &LoopConfig) -> Result<LoopReport, CmlError> {
    if input.windows.is_empty() || input.seed.is_empty() {
        return Err(CmlError::Empty);
    }
    let times: Vec<u64> = input.windows.iter().map(|(t, _)| *t).collect();
    let truth = oracle_labels(input.truth, &times, input.frame_ms)?;
    for &l in &truth {
        if !input.class_ids.contains(&l) {
            return Err(CmlError::UnknownLabel(l));
        }
    }
    budget_count(cfg.budget_fraction, 1)?;
    let mut labelled = BTreeSet::new();
    for &i in input.seed {
        if i >= input.windows.len() {
            return Err(CmlError::DimMismatch {
                expected: input.windows.len(),
                got: i,
            });
        }
        labelled.insert(i);
    }

    let mut rounds = Vec::with_capacity(cfg.rounds);
    let mut current: Option<Prediction> = None;
    for round in 1..=cfg.rounds {
        let xs: Vec<Vec<f64>> = labelled.iter().map(|&i| input.windows[i].1.clone()).collect();
        let ys: Vec<u32> = labelled.iter().map(|&i| truth[i]).collect();
        let trained = train(&xs, &ys, input.class_ids, &cfg.train)?;
        let mut pred = predict(&trained.model, input.windows, input.frame_ms)?;
        for &i in &labelled {
            pred.windows[i].label = truth[i];
            pred.windows[i].confidence = 1.0;
        }
        let selection = select_among(&pred, cfg.budget_fraction, |i| !labelled.contains(&i))?;
        let corrections: Vec<Correction> = selection
            .windows
            .iter()
            .map(|w| Correction {
                t_ms: w.t_ms,
                label: truth[w.index],
            })
            .collect();
        let corrected = selection
            .windows
            .iter()
            .filter(|w| w.label != truth[w.index])
            .count();
        let labelled_before = labelled.len();
        let pred = apply_corrections(&pred, &selection, &corrections)?;
        labelled.extend(selection.windows.iter().map(|w| w.index));
        let hits = pred.windows.iter().zip(&truth).filter(|(w, t)| w.label == **t).count();
        rounds.push(RoundReport {
            round,
            labelled: labelled_before,
            reviewed: selection.windows.len(),
            corrected,
            accuracy: hits as f64 / truth.len() as f64,
            final_loss: *trained.losses.last().unwrap_or(&f64::NAN),
        });
        current = Some(pred);
    }
    let final_prediction = match current {
        Some(p) => p,
        None => Prediction {
            frame_ms: input.frame_ms,
            class_ids: input.class_ids.to_vec(),
            windows: Vec::new(),
        },
    };
    Ok(LoopReport {
        rounds,
        final_prediction,
    })
}
