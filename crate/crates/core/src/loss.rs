//! Pointwise forecast losses.

use crate::error::CoreError;
use crate::types::Forecast;

fn check_shapes(pred: &Forecast, truth: &Forecast) -> Result<(), CoreError> {
    if pred.shape() != truth.shape() {
        return Err(CoreError::dims(
            format!("{:?}", truth.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    Ok(())
}

/// Mean squared error over all `H x D_out` elements.
pub fn mse(pred: &Forecast, truth: &Forecast) -> Result<f64, CoreError> {
    check_shapes(pred, truth)?;
    Ok(mse_slice(pred.flat(), truth.flat()))
}

/// Mean absolute error over all `H x D_out` elements.
pub fn mae(pred: &Forecast, truth: &Forecast) -> Result<f64, CoreError> {
    check_shapes(pred, truth)?;
    Ok(mae_slice(pred.flat(), truth.flat()))
}

pub(crate) fn mse_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

pub(crate) fn mae_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f(v: &[f64]) -> Forecast {
        Forecast::univariate(v.to_vec()).unwrap()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&f(&[1.0, 2.0]), &f(&[1.0, 4.0])).unwrap(), 2.0);
        assert_eq!(mse(&f(&[3.0, 4.0]), &f(&[3.0, 4.0])).unwrap(), 0.0);
        let v = mse(&f(&[0.3, 0.3, 0.3]), &f(&[0.0, 0.6, 0.3])).unwrap();
        assert!((v - 0.06).abs() < 1e-15);
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&f(&[1.0, 2.0]), &f(&[1.0, 4.0])).unwrap(), 1.0);
        assert_eq!(mae(&f(&[1.0, 2.0]), &f(&[1.0, 2.0])).unwrap(), 0.0);
        assert_eq!(mae(&f(&[-1.0, 1.0]), &f(&[1.0, -1.0])).unwrap(), 2.0);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let two_ch = Forecast::from_flat(vec![1.0, 2.0], 2).unwrap();
        assert!(matches!(
            mse(&f(&[1.0, 2.0]), &two_ch),
            Err(CoreError::Dimension { .. })
        ));
        assert!(matches!(
            mae(&f(&[1.0]), &f(&[1.0, 2.0])),
            Err(CoreError::Dimension { .. })
        ));
    }

    proptest! {
        #[test]
        fn losses_nonnegative_symmetric_permutation_invariant(
            pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..40),
            rot in 0usize..40,
        ) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let (fa, fb) = (f(&a), f(&b));
            let m = mse(&fa, &fb).unwrap();
            prop_assert!(m >= 0.0);
            prop_assert_eq!(m, mse(&fb, &fa).unwrap());
            prop_assert_eq!(mae(&fa, &fb).unwrap(), mae(&fb, &fa).unwrap());
            prop_assert_eq!(m == 0.0, a == b);
            let k = rot % a.len();
            let (mut ra, mut rb) = (a.clone(), b.clone());
            ra.rotate_left(k);
            rb.rotate_left(k);
            let rm = mse(&f(&ra), &f(&rb)).unwrap();
            prop_assert!((rm - m).abs() <= 1e-9 * m.max(1.0));
        }
    }
}
