//! Inter-rater agreement: Cohen's kappa for discrete tiers; Pearson,
//! Spearman and Cronbach's alpha for continuous ones.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ModelError;
use crate::model::{resample_continuous, segments_to_frames, Annotation, ContinuousTrack, Session};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("scheme mismatch: {0} vs {1}")]
    SchemeMismatch(String, String),
    #[error("zero frames to compare")]
    ZeroFrames,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} items, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("undefined correlation: zero variance")]
    UndefinedCorrelation,
    #[error("undefined alpha: zero total variance")]
    UndefinedAlpha,
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Kappa,
    Alpha,
    Pearson,
    Spearman,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Detail {
    Kappa {
        observed: f64,
        expected: f64,
        degenerate: bool,
    },
    Alpha {
        raters: usize,
        rater_variances: Vec<f64>,
        total_variance: f64,
    },
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgreementResult {
    pub measure: Measure,
    pub value: f64,
    pub n: usize,
    pub detail: Detail,
}

/// Cohen's kappa from a square confusion matrix (rows rater A, columns
/// rater B).
///
/// When expected agreement is 1 (both raters constant on the same label)
/// kappa is undefined; the result is then 1 if observed agreement is 1,
/// else 0, flagged `degenerate`.
pub fn kappa_from_confusion(confusion: &[Vec<u64>]) -> Result<AgreementResult, StatsError> {
    let k = confusion.len();
    if let Some(row) = confusion.iter().find(|r| r.len() != k) {
        return Err(StatsError::LengthMismatch(row.len(), k));
    }
    let n: u64 = confusion.iter().flatten().sum();
    if n == 0 {
        return Err(StatsError::ZeroFrames);
    }
    let nf = n as f64;
    let diag: u64 = (0..k).map(|i| confusion[i][i]).sum();
    let observed = diag as f64 / nf;
    let expected: f64 = (0..k)
        .map(|i| {
            let row: u64 = confusion[i].iter().sum();
            let col: u64 = confusion.iter().map(|r| r[i]).sum();
            row as f64 * col as f64
        })
        .sum::<f64>()
        / (nf * nf);
    let degenerate = (1.0 - expected).abs() < 1e-15;
    let value = if degenerate {
        if diag == n {
            1.0
        } else {
            0.0
        }
    } else {
        (observed - expected) / (1.0 - expected)
    };
    Ok(AgreementResult {
        measure: Measure::Kappa,
        value,
        n: n as usize,
        detail: Detail::Kappa {
            observed,
            expected,
            degenerate,
        },
    })
}

/// Kappa over two aligned label sequences. The alphabet is the union of
/// labels seen in either sequence.
pub fn kappa_from_labels(a: &[u32], b: &[u32]) -> Result<AgreementResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(StatsError::ZeroFrames);
    }
    let alphabet: BTreeMap<u32, usize> = a
        .iter()
        .chain(b)
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    let k = alphabet.len();
    let mut confusion = vec![vec![0u64; k]; k];
    for (x, y) in a.iter().zip(b) {
        confusion[alphabet[x]][alphabet[y]] += 1;
    }
    kappa_from_confusion(&confusion)
}

/// Kappa between two discrete annotations of the same scheme, sampled on a
/// `frame_ms` grid over the whole frames of the session.
pub fn cohen_kappa(a: &Annotation, b: &Annotation, session: &Session, frame_ms: u64) -> Result<AgreementResult, StatsError> {
    if a.key.scheme != b.key.scheme {
        return Err(StatsError::SchemeMismatch(a.key.scheme.clone(), b.key.scheme.clone()));
    }
    if frame_ms == 0 {
        return Err(ModelError::ZeroFrame.into());
    }
    let span = session.duration_ms / frame_ms * frame_ms;
    if span == 0 {
        return Err(StatsError::ZeroFrames);
    }
    let fa = segments_to_frames(a.segments()?, frame_ms, 0, span)?;
    let fb = segments_to_frames(b.segments()?, frame_ms, 0, span)?;
    kappa_from_labels(&fa, &fb)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population variance.
fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(StatsError::TooFew { need: 2, got: x.len() });
    }
    Ok(())
}

fn product_moment(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::UndefinedCorrelation);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<AgreementResult, StatsError> {
    check_pair(x, y)?;
    Ok(AgreementResult {
        measure: Measure::Pearson,
        value: product_moment(x, y)?,
        n: x.len(),
        detail: Detail::None,
    })
}

/// 1-based ranks; tied values share the mean of their ranks.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let r = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = r;
        }
        i = j;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<AgreementResult, StatsError> {
    check_pair(x, y)?;
    Ok(AgreementResult {
        measure: Measure::Spearman,
        value: product_moment(&average_ranks(x), &average_ranks(y))?,
        n: x.len(),
        detail: Detail::None,
    })
}

/// Resamples every track to the lowest of their rates and truncates to the
/// shortest resulting length.
pub fn align_tracks(tracks: &[ContinuousTrack]) -> Result<Vec<ContinuousTrack>, StatsError> {
    let Some(lowest) = tracks
        .iter()
        .map(|t| t.sample_rate)
        .min_by(|a, b| (a.numer() as u128 * b.denom() as u128).cmp(&(b.numer() as u128 * a.denom() as u128)))
    else {
        return Ok(Vec::new());
    };
    let mut out = tracks
        .iter()
        .map(|t| resample_continuous(t, lowest))
        .collect::<Result<Vec<_>, _>>()?;
    let len = out.iter().map(ContinuousTrack::len).min().unwrap_or(0);
    for t in &mut out {
        t.values.truncate(len);
        t.confidences.truncate(len);
    }
    Ok(out)
}

/// Aligned values of several tracks, dropping positions where any track
/// has a hole.
fn aligned_values(tracks: &[ContinuousTrack]) -> Result<Vec<Vec<f64>>, StatsError> {
    let aligned = align_tracks(tracks)?;
    let len = aligned.first().map_or(0, ContinuousTrack::len);
    let keep: Vec<usize> = (0..len)
        .filter(|&i| aligned.iter().all(|t| !t.values[i].is_nan()))
        .collect();
    Ok(aligned
        .iter()
        .map(|t| keep.iter().map(|&i| t.values[i]).collect())
        .collect())
}

/// Pearson between two continuous tracks after alignment.
pub fn pearson_tracks(a: &ContinuousTrack, b: &ContinuousTrack) -> Result<AgreementResult, StatsError> {
    let v = aligned_values(&[a.clone(), b.clone()])?;
    pearson(&v[0], &v[1])
}

pub fn spearman_tracks(a: &ContinuousTrack, b: &ContinuousTrack) -> Result<AgreementResult, StatsError> {
    let v = aligned_values(&[a.clone(), b.clone()])?;
    spearman(&v[0], &v[1])
}

/// Cronbach's alpha over raters' value sequences (one sequence per rater,
/// items are positions), with population variances.
pub fn cronbach_alpha_values(raters: &[Vec<f64>]) -> Result<AgreementResult, StatsError> {
    let k = raters.len();
    if k < 2 {
        return Err(StatsError::TooFew { need: 2, got: k });
    }
    let n = raters[0].len();
    if let Some(r) = raters.iter().find(|r| r.len() != n) {
        return Err(StatsError::LengthMismatch(n, r.len()));
    }
    if n < 2 {
        return Err(StatsError::TooFew { need: 2, got: n });
    }
    let totals: Vec<f64> = (0..n).map(|i| raters.iter().map(|r| r[i]).sum()).collect();
    let total_variance = variance(&totals);
    if total_variance == 0.0 {
        return Err(StatsError::UndefinedAlpha);
    }
    let rater_variances: Vec<f64> = raters.iter().map(|r| variance(r)).collect();
    let kf = k as f64;
    let value = kf / (kf - 1.0) * (1.0 - rater_variances.iter().sum::<f64>() / total_variance);
    Ok(AgreementResult {
        measure: Measure::Alpha,
        value,
        n,
        detail: Detail::Alpha {
            raters: k,
            rater_variances,
            total_variance,
        },
    })
}

/// Cronbach's alpha over continuous tracks, aligned to their lowest rate.
pub fn cronbach_alpha(tracks: &[ContinuousTrack]) -> Result<AgreementResult, StatsError> {
    if tracks.len() < 2 {
        return Err(StatsError::TooFew { need: 2, got: tracks.len() });
    }
    cronbach_alpha_values(&aligned_values(tracks)?)
}
