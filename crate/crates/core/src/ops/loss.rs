use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    if logits.rank() != 2 {
        return Err(shape_err!("softmax expects [N, K], got {:?}", logits.shape()));
    }
    let mut p = logits.clone();
    for i in 0..p.dim(0) {
        let row = p.row_mut(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(p)
}

/// Checks that every row holds a single 1 and zeros elsewhere.
pub fn validate_onehot<T: Scalar>(onehot: &Tensor<T>) -> Result<()> {
    for i in 0..onehot.dim(0) {
        let row = onehot.row(i);
        let ones = row.iter().filter(|&&v| v == T::one()).count();
        let zeros = row.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(invalid!("row {i} is not a one-hot vector"));
        }
    }
    Ok(())
}

pub fn one_hot<T: Scalar>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(invalid!("label {l} outside {classes} classes"));
        }
        t.row_mut(i)[l] = T::one();
    }
    Ok(t)
}

/// Mean cross-entropy of `softmax(logits)` against one-hot targets.
///
/// Returns the loss and its gradient with respect to the logits, `(p − y) / N`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, onehot: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if logits.shape() != onehot.shape() {
        return Err(shape_err!("logits {:?} vs targets {:?}", logits.shape(), onehot.shape()));
    }
    validate_onehot(onehot)?;
    let n = T::from_usize_lossy(logits.dim(0));
    let mut loss = T::zero();
    for i in 0..logits.dim(0) {
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
        for (&z, &y) in row.iter().zip(onehot.row(i)) {
            if y != T::zero() {
                loss += y * (lse - z);
            }
        }
    }
    let p = softmax(logits)?;
    let grad = p.zip_map(onehot, |p, y| (p - y) / n)?;
    Ok((loss / n, grad))
}
