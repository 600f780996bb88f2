//! Agreement measures against hand-derived values and textbook oracles.

use std::collections::BTreeMap;

use discover_core::model::ContinuousTrack;
use discover_core::stats::{cronbach_alpha, cronbach_alpha_values, kappa_from_confusion, kappa_from_labels, pearson, spearman};
use discover_core::SampleRate;
use proptest::prelude::*;

use crate::{ensure, runner, OrFail, Outcome};

const CASES: u32 = 200;

fn kappa_oracle(a: &[u32], b: &[u32]) -> f64 {
    let n = a.len() as f64;
    let mut row: BTreeMap<u32, f64> = BTreeMap::new();
    let mut col: BTreeMap<u32, f64> = BTreeMap::new();
    let mut agree = 0.0;
    for (x, y) in a.iter().zip(b) {
        *row.entry(*x).or_default() += 1.0;
        *col.entry(*y).or_default() += 1.0;
        if x == y {
            agree += 1.0;
        }
    }
    let po = agree / n;
    let pe: f64 = row.iter().map(|(k, r)| r * col.get(k).copied().unwrap_or(0.0)).sum::<f64>() / (n * n);
    (po - pe) / (1.0 - pe)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// 1-based ranks, ties sharing their average rank.
fn ranks(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for (i, v) in x.iter().enumerate() {
        let below = x.iter().filter(|w| *w < v).count() as f64;
        let equal = x.iter().filter(|w| *w == v).count() as f64;
        out[i] = below + (equal + 1.0) / 2.0;
    }
    out
}

fn alpha_oracle(raters: &[Vec<f64>]) -> f64 {
    let k = raters.len() as f64;
    let var = |v: &[f64]| {
        let m = mean(v);
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
    };
    let items: f64 = raters.iter().map(|r| var(r)).sum();
    let totals: Vec<f64> = (0..raters[0].len()).map(|i| raters.iter().map(|r| r[i]).sum()).collect();
    k / (k - 1.0) * (1.0 - items / var(&totals))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn fixed_values() -> Result<(), String> {
    let po = 15.0 / 20.0;
    let pe = (12.0 * 13.0 + 8.0 * 7.0) / 400.0;
    let hand = (po - pe) / (1.0 - pe);
    let k = kappa_from_confusion(&[vec![10, 2], vec![3, 5]]).or_fail()?.value;
    ensure((k - 0.46809).abs() < 1e-5 && (k - hand).abs() < 1e-12, || format!("kappa {k}"))?;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (x, y, n) in [(0, 0, 10), (0, 1, 2), (1, 0, 3), (1, 1, 5)] {
        a.extend(std::iter::repeat_n(x, n));
        b.extend(std::iter::repeat_n(y, n));
    }
    let k2 = kappa_from_labels(&a, &b).or_fail()?.value;
    ensure((k2 - hand).abs() < 1e-12, || format!("kappa from labels {k2}"))?;

    let x = [1.0, 2.0, 3.0, 4.0, 5.0];
    let up = pearson(&x, &[3.0, 5.0, 7.0, 9.0, 11.0]).or_fail()?.value;
    let down = pearson(&x, &[10.0, 8.0, 6.0, 4.0, 2.0]).or_fail()?.value;
    let rho = spearman(&x, &[1.0, 8.0, 27.0, 64.0, 125.0]).or_fail()?.value;
    ensure(up == 1.0 && down == -1.0 && rho == 1.0, || format!("r {up}, r {down}, rho {rho}"))?;

    let rate = SampleRate::hz(25).or_fail()?;
    let track = ContinuousTrack::new(rate, (0..100).map(|i| (i as f64 * 0.37).sin()).collect());
    let alpha = cronbach_alpha(&[track.clone(), track.clone(), track]).or_fail()?.value;
    ensure((alpha - 1.0).abs() < 1e-12, || format!("alpha of identical raters {alpha}"))?;
    Ok(())
}

pub fn run() -> Outcome {
    fixed_values()?;
    let labels = (2usize..200).prop_flat_map(|n| (prop::collection::vec(0u32..4, n), prop::collection::vec(0u32..4, n)));
    runner(CASES)
        .run(&(labels, 1u32..50), |((a, b), shift)| {
            let k = kappa_from_labels(&a, &b).unwrap().value;
            let want = kappa_oracle(&a, &b);
            if want.is_finite() {
                prop_assert!(close(k, want, 1e-9), "kappa {} vs oracle {}", k, want);
            }
            prop_assert!(close(k, kappa_from_labels(&b, &a).unwrap().value, 1e-12));
            let relabel = |v: &[u32]| v.iter().map(|x| (3 - x) * 7 + shift).collect::<Vec<_>>();
            prop_assert!(close(k, kappa_from_labels(&relabel(&a), &relabel(&b)).unwrap().value, 1e-12));
            Ok(())
        })
        .map_err(|e| format!("kappa: {e}"))?;

    let pairs = (3usize..100).prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0..100.0f64, n),
            prop::collection::vec(-100.0..100.0f64, n),
        )
    });
    runner(CASES)
        .run(&(pairs, 0.1..10.0f64, -50.0..50.0f64), |((x, y), s, c)| {
            let r = pearson(&x, &y).unwrap().value;
            prop_assert!(close(r, pearson_oracle(&x, &y), 1e-9));
            prop_assert!(close(r, pearson(&y, &x).unwrap().value, 1e-12));
            let affine: Vec<f64> = x.iter().map(|v| s * v + c).collect();
            prop_assert!((r - pearson(&affine, &y).unwrap().value).abs() < 1e-9);
            let flipped: Vec<f64> = x.iter().map(|v| -s * v + c).collect();
            prop_assert!((r + pearson(&flipped, &y).unwrap().value).abs() < 1e-9);

            let rho = spearman(&x, &y).unwrap().value;
            prop_assert!(close(rho, pearson_oracle(&ranks(&x), &ranks(&y)), 1e-9));
            prop_assert!(close(rho, spearman(&y, &x).unwrap().value, 1e-12));
            let monotone: Vec<f64> = x.iter().map(|v| v.powi(3) + (v / 100.0).exp()).collect();
            prop_assert!((rho - spearman(&monotone, &y).unwrap().value).abs() < 1e-12);
            Ok(())
        })
        .map_err(|e| format!("correlation: {e}"))?;

    let raters = (2usize..6, 3usize..60)
        .prop_flat_map(|(k, n)| prop::collection::vec(prop::collection::vec(-10.0..10.0f64, n), k));
    runner(CASES)
        .run(&raters, |raters| {
            let a = cronbach_alpha_values(&raters).unwrap().value;
            prop_assert!(close(a, alpha_oracle(&raters), 1e-9), "alpha {} vs oracle {}", a, alpha_oracle(&raters));
            let mut reversed = raters.clone();
            reversed.reverse();
            prop_assert!(close(a, cronbach_alpha_values(&reversed).unwrap().value, 1e-12));
            let same = vec![raters[0].clone(); raters.len()];
            prop_assert!((cronbach_alpha_values(&same).unwrap().value - 1.0).abs() < 1e-12);
            Ok(())
        })
        .map_err(|e| format!("alpha: {e}"))?;
    Ok(format!("kappa 0.46809 exact to 1e-12, trivial cases exact, {CASES} cases x 3 measures match oracles"))
}
