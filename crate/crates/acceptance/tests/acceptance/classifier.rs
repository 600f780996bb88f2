//! Softmax regression: gradient, initial loss and a separable toy set.

use std::cell::Cell;

use discover_core::cml::{loss_and_gradient, train, LinearClassifier, TrainConfig};
use proptest::prelude::*;

use crate::{ensure, runner, OrFail, Outcome};

const DRAWS: u32 = 100;
const H: f64 = 1e-5;
const FLOOR: f64 = 1e-6;

/// Cross-entropy plus ridge written out from the definition.
fn loss_oracle(m: &LinearClassifier, xs: &[Vec<f64>], ys: &[usize], l2: f64) -> f64 {
    let d = m.feature_dim;
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        let z: Vec<f64> = (0..m.bias.len())
            .map(|k| m.bias[k] + (0..d).map(|j| m.weights[k * d + j] * x[j]).sum::<f64>())
            .collect();
        let norm: f64 = z.iter().map(|v| v.exp()).sum();
        total -= (z[y].exp() / norm).ln();
    }
    total / xs.len() as f64 + 0.5 * l2 * m.weights.iter().map(|w| w * w).sum::<f64>()
}

fn worst_relative_error(m: &LinearClassifier, xs: &[Vec<f64>], ys: &[usize], l2: f64) -> f64 {
    let (_, g) = loss_and_gradient(m, xs, ys, l2);
    let n_w = m.weights.len();
    let mut worst: f64 = 0.0;
    for p in 0..n_w + m.bias.len() {
        let at = |delta: f64| {
            let mut m2 = m.clone();
            if p < n_w {
                m2.weights[p] += delta;
            } else {
                m2.bias[p - n_w] += delta;
            }
            loss_oracle(&m2, xs, ys, l2)
        };
        let numeric = (at(H) - at(-H)) / (2.0 * H);
        let analytic = if p < n_w { g.weights[p] } else { g.bias[p - n_w] };
        worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR));
    }
    worst
}

fn problem() -> impl Strategy<Value = (LinearClassifier, Vec<Vec<f64>>, Vec<usize>, f64)> {
    (2usize..6, 1usize..8, 1usize..32).prop_flat_map(|(c, d, n)| {
        (
            prop::collection::vec(-2.0..2.0f64, c * d),
            prop::collection::vec(-1.0..1.0f64, c),
            prop::collection::vec(prop::collection::vec(-3.0..3.0f64, d), n),
            prop::collection::vec(0..c, n),
            0.0..0.1f64,
        )
            .prop_map(move |(w, b, xs, ys, l2)| {
                let mut m = LinearClassifier::zeros((0..c as u32).collect(), d);
                m.weights = w;
                m.bias = b;
                (m, xs, ys, l2)
            })
    })
}

pub fn run() -> Outcome {
    let worst = Cell::new(0.0f64);
    runner(DRAWS)
        .run(&problem(), |(m, xs, ys, l2)| {
            let (loss, _) = loss_and_gradient(&m, &xs, &ys, l2);
            let want = loss_oracle(&m, &xs, &ys, l2);
            prop_assert!((loss - want).abs() <= 1e-9 * (1.0 + want.abs()), "loss {} vs {}", loss, want);
            let err = worst_relative_error(&m, &xs, &ys, l2);
            worst.set(worst.get().max(err));
            prop_assert!(err < 1e-4, "relative error {}", err);
            Ok(())
        })
        .map_err(|e| format!("gradient: {e}"))?;

    for c in 2..8u32 {
        let m = LinearClassifier::zeros((0..c).collect(), 3);
        let xs = [vec![1.0, -2.0, 0.5], vec![0.0, 3.0, 1.0], vec![4.0, 4.0, -4.0]];
        let (loss, _) = loss_and_gradient(&m, &xs, &[0, 1, (c - 1) as usize], 0.3);
        ensure((loss - (c as f64).ln()).abs() < 1e-9, || format!("{c} classes: initial loss {loss}"))?;
    }

    // three classes on a line, separated at x = -1 and x = 1
    let xs: Vec<Vec<f64>> = (0..60).map(|i| vec![-3.0 + i as f64 * 0.1 + 0.05]).collect();
    let ys: Vec<u32> = xs.iter().map(|x| if x[0] < -1.0 { 5 } else if x[0] < 1.0 { 6 } else { 9 }).collect();
    let cfg = TrainConfig {
        epochs: 5000,
        learning_rate: 0.5,
        l2: 0.0,
    };
    let trained = train(&xs, &ys, &[5, 6, 9], &cfg).or_fail()?;
    let mut hits = 0;
    for (x, y) in xs.iter().zip(&ys) {
        if trained.model.predict_one(x).or_fail()?.0 == *y {
            hits += 1;
        }
    }
    ensure(hits == xs.len(), || format!("training accuracy {hits}/{}", xs.len()))?;
    Ok(format!(
        "{DRAWS} draws, worst relative error {:.1e}, ln C exact, toy accuracy 1.0",
        worst.get()
    ))
}
