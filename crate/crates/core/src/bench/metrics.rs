use super::BenchError;

/// Absolute errors in the quantity's units; relative errors in percent.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MetricSet {
    pub mae: f64,
    pub maxae: f64,
    pub mape: Option<f64>,
    pub maxape: Option<f64>,
}

/// MAE and MAXAE; with `relative`, also MAPE and MAXAPE where each error is
/// divided by `|truth_i|` before averaging.
pub fn compute_metrics(truth: &[f64], predicted: &[f64], relative: bool) -> Result<MetricSet, BenchError> {
    if truth.len() != predicted.len() {
        return Err(BenchError::LengthMismatch { truth: truth.len(), predicted: predicted.len() });
    }
    if truth.is_empty() {
        return Err(BenchError::Empty);
    }
    let n = truth.len() as f64;
    let (mut sum, mut max) = (0.0, 0.0f64);
    let (mut rsum, mut rmax) = (0.0, 0.0f64);
    for (i, (&t, &p)) in truth.iter().zip(predicted).enumerate() {
        let e = (t - p).abs();
        sum += e;
        max = max.max(e);
        if relative {
            if t == 0.0 {
                return Err(BenchError::ZeroTruth(i));
            }
            let r = e / t.abs();
            rsum += r;
            rmax = rmax.max(r);
        }
    }
    Ok(MetricSet {
        mae: sum / n,
        maxae: max,
        mape: relative.then_some(100.0 * rsum / n),
        maxape: relative.then_some(100.0 * rmax),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_is_zero() {
        let m = compute_metrics(&[1.0, -3.0], &[1.0, -3.0], true).unwrap();
        assert_eq!(m, MetricSet { mae: 0.0, maxae: 0.0, mape: Some(0.0), maxape: Some(0.0) });
    }

    #[test]
    fn single_element() {
        let m = compute_metrics(&[2.0], &[1.0], true).unwrap();
        assert_eq!((m.mae, m.maxae, m.mape, m.maxape), (1.0, 1.0, Some(50.0), Some(50.0)));
    }

    #[test]
    fn hand_worked_pair() {
        let m = compute_metrics(&[1.0, 2.0], &[1.1, 1.8], true).unwrap();
        assert!((m.mae - 0.15).abs() < 1e-12);
        assert!((m.maxae - 0.2).abs() < 1e-12);
        assert!((m.mape.unwrap() - 10.0).abs() < 1e-9);
        assert!((m.maxape.unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        assert!(matches!(compute_metrics(&[1.0], &[1.0, 2.0], false), Err(BenchError::LengthMismatch { .. })));
        assert!(matches!(compute_metrics(&[], &[], false), Err(BenchError::Empty)));
        assert!(matches!(compute_metrics(&[1.0, 0.0], &[1.0, 1.0], true), Err(BenchError::ZeroTruth(1))));
        assert_eq!(compute_metrics(&[0.0], &[1.0], false).unwrap().mape, None);
    }
}
