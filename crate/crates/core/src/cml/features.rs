use crate::sampling::{DatasetIterator, Payload, WindowSample};

use super::CmlError;

/// Number of statistics per input dimension.
pub const STATS_PER_DIM: usize = 6;

/// Mean, population variance, min, max, first and last of every input
/// dimension, concatenated in declared input order.
///
/// Label payloads count as numeric (their ids). NaN values, i.e. frames a
/// track does not cover, are skipped.
pub fn window_features(ws: &WindowSample) -> Result<Vec<f64>, CmlError> {
    let mut out = Vec::new();
    for (id, payload) in &ws.inputs {
        match payload {
            Payload::Labels(l) => push_stats(&mut out, id, l.iter().map(|&v| v as f64))?,
            Payload::Values(v) => push_stats(&mut out, id, v.iter().copied())?,
            Payload::Samples { dim, data } => {
                let dim = *dim as usize;
                for d in 0..dim {
                    push_stats(&mut out, id, data.iter().skip(d).step_by(dim).map(|&v| v as f64))?;
                }
            }
            Payload::Text(_) => return Err(CmlError::NonNumeric(id.clone())),
        }
    }
    Ok(out)
}

/// Features of every window of `it`, keyed by the start of the window's
/// current frame.
pub fn feature_windows(it: DatasetIterator) -> Result<Vec<(u64, Vec<f64>)>, CmlError> {
    let spec = *it.spec();
    it.map(|w| {
        let w = w?;
        Ok((spec.current_frame_ms(w.t_start_ms), window_features(&w)?))
    })
    .collect()
}

fn push_stats(out: &mut Vec<f64>, id: &str, values: impl Iterator<Item = f64>) -> Result<(), CmlError> {
    let v: Vec<f64> = values.filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return Err(CmlError::EmptyInput(id.to_string()));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.extend([mean, var, min, max, v[0], v[v.len() - 1]]);
    Ok(())
}
