use crate::error::{invalid, shape_err, Result};
use crate::ops::softmax_cross_entropy;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Value and gradients of the imitation objective.
#[derive(Clone, Debug)]
pub struct ImitationLoss<T> {
    pub loss: T,
    pub cross_entropy: T,
    /// `(1/N)·Σᵢ‖g_C,i − g_F,i‖²`.
    pub feature_distance: T,
    pub d_logits: Tensor<T>,
    pub d_features: Tensor<T>,
}

/// `α·CE(logits, y) + ((1 − α)/2)·(1/N)·Σᵢ‖g_C,i − g_F,i‖²`, with `g_F` held constant.
pub fn imitation_loss<T: Scalar>(
    logits: &Tensor<T>,
    g_coarse: &Tensor<T>,
    g_fine: &Tensor<T>,
    onehot: &Tensor<T>,
    alpha: T,
) -> Result<ImitationLoss<T>> {
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(invalid!("alpha must lie in [0, 1], got {alpha}"));
    }
    if g_coarse.shape() != g_fine.shape() || g_coarse.rank() != 2 || g_coarse.dim(0) != logits.dim(0) {
        return Err(shape_err!(
            "imitation features {:?} vs target {:?} for logits {:?}",
            g_coarse.shape(),
            g_fine.shape(),
            logits.shape()
        ));
    }
    let (ce, d_ce) = softmax_cross_entropy(logits, onehot)?;
    let n = T::from_usize_lossy(logits.dim(0));
    let half = T::lit(0.5);
    let diff = g_coarse.zip_map(g_fine, |c, f| c - f)?;
    let feature_distance = diff.data().iter().map(|&d| d * d).sum::<T>() / n;
    let beta = T::one() - alpha;
    Ok(ImitationLoss {
        loss: alpha * ce + half * beta * feature_distance,
        cross_entropy: ce,
        feature_distance,
        d_logits: d_ce.map(|g| alpha * g),
        d_features: diff.map(|d| beta * d / n),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::gradcheck::central_difference_error;
    use crate::ops::one_hot;

    fn case() -> (Tensor<f64>, Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        let logits = Tensor::from_f64(&[2, 3], &[0.5, -1.0, 2.0, 1.5, 0.0, -0.5]).unwrap();
        let gc = Tensor::from_f64(&[2, 4], &[1.0, 0.0, 2.0, 0.5, 0.0, 3.0, 1.0, 1.0]).unwrap();
        let gf = Tensor::from_f64(&[2, 4], &[0.5, 0.5, 2.0, 0.0, 1.0, 1.0, 0.0, 2.0]).unwrap();
        (logits, gc, gf, one_hot(&[2, 0], 3).unwrap())
    }

    #[test]
    fn alpha_one_is_cross_entropy() {
        let (logits, gc, gf, y) = case();
        let l = imitation_loss(&logits, &gc, &gf, &y, 1.0).unwrap();
        let (ce, dce) = softmax_cross_entropy(&logits, &y).unwrap();
        assert_eq!(l.loss, ce);
        assert_eq!(l.d_logits, dce);
        assert!(l.d_features.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matching_features_leave_scaled_cross_entropy() {
        let (logits, gc, _, y) = case();
        let l = imitation_loss(&logits, &gc, &gc, &y, 0.4).unwrap();
        assert_eq!(l.loss, 0.4 * l.cross_entropy);
    }

    #[test]
    fn hand_built_case_matches_direct_formula() {
        let (logits, gc, gf, y) = case();
        // direct evaluation, written out per sample
        let lse = |r: &[f64]| r.iter().map(|v| v.exp()).sum::<f64>().ln();
        let ce = ((lse(&[0.5, -1.0, 2.0]) - 2.0) + (lse(&[1.5, 0.0, -0.5]) - 1.5)) / 2.0;
        let sq0 = 0.25 + 0.25 + 0.0 + 0.25;
        let sq1 = 1.0 + 4.0 + 1.0 + 1.0;
        let want = 0.4 * ce + 0.3 * (sq0 + sq1) / 2.0;
        let got = imitation_loss(&logits, &gc, &gf, &y, 0.4).unwrap().loss;
        assert!((got - want).abs() < 1e-12, "{got} vs {want}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (logits, gc, gf, y) = case();
        let l = imitation_loss(&logits, &gc, &gf, &y, 0.4).unwrap();
        let e1 = central_difference_error(
            |v| imitation_loss(&Tensor::new(&[2, 3], v.to_vec()).unwrap(), &gc, &gf, &y, 0.4).unwrap().loss,
            logits.data(),
            l.d_logits.data(),
            1e-5,
        );
        let e2 = central_difference_error(
            |v| imitation_loss(&logits, &Tensor::new(&[2, 4], v.to_vec()).unwrap(), &gf, &y, 0.4).unwrap().loss,
            gc.data(),
            l.d_features.data(),
            1e-5,
        );
        assert!(e1 < 1e-4 && e2 < 1e-4, "{e1} {e2}");
    }

    #[test]
    fn rejects_mismatch_and_bad_alpha() {
        let (logits, gc, _, y) = case();
        let short = Tensor::<f64>::zeros(&[2, 3]);
        assert!(imitation_loss(&logits, &gc, &short, &y, 0.4).is_err());
        assert!(imitation_loss(&logits, &gc, &gc, &y, 1.5).is_err());
    }

    #[test]
    fn continuous_in_alpha() {
        let (logits, gc, gf, y) = case();
        let at = |a: f64| imitation_loss(&logits, &gc, &gf, &y, a).unwrap().loss;
        for a in [0.0, 0.3, 0.999] {
            assert!((at(a) - at(a + 1e-7)).abs() < 1e-5);
        }
    }
}
