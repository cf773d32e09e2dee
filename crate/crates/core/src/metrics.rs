//! Reconstruction quality: PSNR, milestone curves and their area.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Reported in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 99.0;

/// `10·log10(max(truth)² / MSE)`; `+∞` when the planes are identical.
pub fn psnr(truth: &Array2<f64>, estimate: &Array2<f64>) -> Result<f64> {
    if truth.dim() != estimate.dim() {
        return Err(Error::GridMismatch(format!(
            "PSNR of {:?} against {:?}",
            truth.dim(),
            estimate.dim()
        )));
    }
    let t = truth.as_standard_layout();
    let e = estimate.as_standard_layout();
    psnr_slice(t.as_slice().unwrap(), e.as_slice().unwrap())
}

pub(crate) fn psnr_slice(truth: &[f64], estimate: &[f64]) -> Result<f64> {
    let peak = truth.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::invalid("PSNR reference has no positive values"));
    }
    let mse = truth
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / truth.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// PSNR clamped to [`PSNR_CAP`].
pub fn psnr_capped(truth: &Array2<f64>, estimate: &Array2<f64>) -> Result<f64> {
    Ok(psnr(truth, estimate)?.min(PSNR_CAP))
}

/// PSNR for comparing an ERD map against ground-truth RD. An all-zero
/// reference scores the cap when matched exactly and 0 dB otherwise.
pub fn erd_psnr(rd: &Array2<f64>, erd: &Array2<f64>) -> Result<f64> {
    if rd.iter().all(|v| *v <= 0.0) {
        if rd.dim() != erd.dim() {
            return Err(Error::GridMismatch("ERD and RD shapes differ".into()));
        }
        return Ok(if rd == erd { PSNR_CAP } else { 0.0 });
    }
    psnr_capped(rd, erd)
}

/// Mean of the capped per-channel PSNRs.
pub fn mean_psnr(truth: &[Array2<f64>], estimate: &[Array2<f64>]) -> Result<f64> {
    if truth.is_empty() || truth.len() != estimate.len() {
        return Err(Error::invalid("mean PSNR needs matching non-empty channel lists"));
    }
    let mut total = 0.0;
    for (t, e) in truth.iter().zip(estimate) {
        total += psnr_capped(t, e)?;
    }
    Ok(total / truth.len() as f64)
}

/// Trapezoidal area under `(x, y)` points sorted by `x`.
pub fn trapezoid_auc(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

/// For each whole percent `p` in `1..=upto`, the index of the first entry of
/// `percents` that reaches `p`. Milestones that are never reached are
/// omitted.
pub fn milestone_steps(percents: &[f64], upto: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    for p in 1..=upto {
        while i < percents.len() && percents[i] + 1e-9 < p as f64 {
            i += 1;
        }
        if i == percents.len() {
            break;
        }
        out.push((p, i));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn psnr_examples() {
        let t = Array2::from_shape_vec((1, 2), vec![0.0, 1.0]).unwrap();
        let e = Array2::zeros((1, 2));
        assert!((psnr(&t, &e).unwrap() - 10.0 * 2f64.log10()).abs() < 1e-12);
        assert!((psnr(&t, &e).unwrap() - 3.0103).abs() < 1e-4);
        assert_eq!(psnr(&t, &t).unwrap(), f64::INFINITY);
        assert_eq!(psnr_capped(&t, &t).unwrap(), PSNR_CAP);
        assert!(psnr(&e, &t).is_err());
        assert!(psnr(&t, &Array2::zeros((2, 1))).is_err());
    }

    #[test]
    fn erd_psnr_zero_reference() {
        let z = Array2::zeros((2, 2));
        assert_eq!(erd_psnr(&z, &z).unwrap(), PSNR_CAP);
        assert_eq!(erd_psnr(&z, &Array2::from_elem((2, 2), 0.1)).unwrap(), 0.0);
    }

    #[test]
    fn trapezoid_examples() {
        assert_eq!(trapezoid_auc(&[]), 0.0);
        assert_eq!(trapezoid_auc(&[(1.0, 5.0)]), 0.0);
        assert_eq!(trapezoid_auc(&[(1.0, 0.0), (3.0, 2.0)]), 2.0);
        assert_eq!(trapezoid_auc(&[(1.0, 10.0), (2.0, 10.0), (3.0, 10.0)]), 20.0);
    }

    #[test]
    fn milestones_take_first_crossing() {
        let pct = [1.2, 1.9, 2.0, 2.5, 4.1, 4.2];
        assert_eq!(milestone_steps(&pct, 5), vec![(1, 0), (2, 2), (3, 4), (4, 4)]);
    }

    proptest! {
        #[test]
        fn psnr_is_scale_invariant(vals in prop::collection::vec(0.01f64..1.0, 8), noise in prop::collection::vec(-0.1f64..0.1, 8), alpha in 0.01f64..100.0) {
            let t = Array2::from_shape_vec((2, 4), vals).unwrap();
            let e = &t + &Array2::from_shape_vec((2, 4), noise).unwrap();
            let a = psnr(&t, &e).unwrap();
            let b = psnr(&(&t * alpha), &(&e * alpha)).unwrap();
            prop_assert!((a - b).abs() < 1e-9 || (a.is_infinite() && b.is_infinite()));
        }

        #[test]
        fn auc_is_monotone_under_domination(ys in prop::collection::vec(0.0f64..60.0, 2..30), bumps in prop::collection::vec(0.0f64..5.0, 30)) {
            let a: Vec<(f64, f64)> = ys.iter().enumerate().map(|(i, y)| (1.0 + i as f64, *y)).collect();
            let b: Vec<(f64, f64)> = a.iter().zip(&bumps).map(|((x, y), d)| (*x, y + d)).collect();
            prop_assert!(trapezoid_auc(&b) >= trapezoid_auc(&a));
        }
    }
}
