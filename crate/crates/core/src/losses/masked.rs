//! Masked and unmasked denoising losses.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::tensor::LatentTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Divide by the number of masked elements (pixels times channels).
    #[default]
    Mean,
    /// Raw sum of squared masked residuals.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedLoss {
    pub value: f64,
    pub masked_elements: usize,
    /// Set when the mask selects nothing; `value` is then 0.
    pub empty_mask: bool,
}

fn check(eps: &LatentTensor, eps_hat: &LatentTensor, mask: &Array2<u8>) -> Result<()> {
    eps.ensure_same_shape(eps_hat)?;
    if mask.dim() != (eps.height(), eps.width()) {
        return Err(Error::Shape(format!(
            "mask {:?} does not match latent {}x{}",
            mask.dim(),
            eps.height(),
            eps.width()
        )));
    }
    Ok(())
}

fn masked_count(eps: &LatentTensor, mask: &Array2<u8>) -> usize {
    mask.iter().filter(|&&m| m != 0).count() * eps.channels()
}

pub fn masked_mse(eps: &LatentTensor, eps_hat: &LatentTensor, mask: &Array2<u8>) -> Result<MaskedLoss> {
    masked_mse_with(eps, eps_hat, mask, Normalization::Mean)
}

pub fn masked_mse_with(
    eps: &LatentTensor,
    eps_hat: &LatentTensor,
    mask: &Array2<u8>,
    norm: Normalization,
) -> Result<MaskedLoss> {
    check(eps, eps_hat, mask)?;
    let n = masked_count(eps, mask);
    let mut sum = 0.0;
    let (e, h) = (eps.array(), eps_hat.array());
    for ((c, y, x), &v) in e.indexed_iter() {
        if mask[[y, x]] != 0 {
            let r = v - h[[c, y, x]];
            sum += r * r;
        }
    }
    Ok(finish(sum, n, norm))
}

fn finish(sum: f64, n: usize, norm: Normalization) -> MaskedLoss {
    let value = match (norm, n) {
        (_, 0) => 0.0,
        (Normalization::Mean, n) => sum / n as f64,
        (Normalization::Sum, _) => sum,
    };
    MaskedLoss {
        value,
        masked_elements: n,
        empty_mask: n == 0,
    }
}

/// Loss and its gradient with respect to `eps_hat`.
pub fn masked_mse_grad(
    eps: &LatentTensor,
    eps_hat: &LatentTensor,
    mask: &Array2<u8>,
    norm: Normalization,
) -> Result<(MaskedLoss, LatentTensor)> {
    let loss = masked_mse_with(eps, eps_hat, mask, norm)?;
    let scale = match (norm, loss.masked_elements) {
        (_, 0) => 0.0,
        (Normalization::Mean, n) => 2.0 / n as f64,
        (Normalization::Sum, _) => 2.0,
    };
    let (ch, hh, ww) = eps.shape();
    let mut grad = LatentTensor::zeros(ch, hh, ww);
    let (e, h) = (eps.as_slice(), eps_hat.as_slice());
    let g = grad.as_mut_slice();
    for i in 0..g.len() {
        let (y, x) = ((i / ww) % hh, i % ww);
        if mask[[y, x]] != 0 {
            g[i] = scale * (h[i] - e[i]);
        }
    }
    Ok((loss, grad))
}

/// Plain mean squared error over every element.
pub fn joint_loss(eps: &LatentTensor, eps_hat: &LatentTensor) -> Result<f64> {
    eps.ensure_same_shape(eps_hat)?;
    let sum: f64 = eps
        .as_slice()
        .iter()
        .zip(eps_hat.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / eps.len() as f64)
}

pub fn joint_loss_grad(eps: &LatentTensor, eps_hat: &LatentTensor) -> Result<(f64, LatentTensor)> {
    let value = joint_loss(eps, eps_hat)?;
    let scale = 2.0 / eps.len() as f64;
    let mut grad = eps_hat.clone();
    for (g, e) in grad.as_mut_slice().iter_mut().zip(eps.as_slice()) {
        *g = scale * (*g - e);
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{gradient_failure, DEFAULT_STEP};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_enumerated_example() {
        let eps = LatentTensor::from_vec((1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let zero = LatentTensor::zeros(1, 2, 2);
        let l = masked_mse(&eps, &zero, &array![[1, 0], [0, 1]]).unwrap();
        assert_eq!(l.value, 8.5);
    }

    #[test]
    fn full_and_empty_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = LatentTensor::randn((3, 4, 5), &mut rng);
        let b = LatentTensor::randn((3, 4, 5), &mut rng);
        let full = masked_mse(&a, &b, &Array2::ones((4, 5))).unwrap();
        assert!((full.value - joint_loss(&a, &b).unwrap()).abs() <= 1e-12);
        let empty = masked_mse(&a, &b, &Array2::zeros((4, 5))).unwrap();
        assert_eq!(empty.value, 0.0);
        assert!(empty.empty_mask);
    }

    #[test]
    fn shape_errors() {
        let a = LatentTensor::zeros(1, 2, 2);
        assert!(masked_mse(&a, &LatentTensor::zeros(1, 2, 3), &Array2::ones((2, 2))).is_err());
        assert!(masked_mse(&a, &a, &Array2::ones((3, 2))).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eps = LatentTensor::randn((2, 3, 3), &mut rng);
        let hat = LatentTensor::randn((2, 3, 3), &mut rng);
        let mask = array![[1, 0, 1], [0, 1, 1], [0, 0, 1]];
        for norm in [Normalization::Mean, Normalization::Sum] {
            let (_, g) = masked_mse_grad(&eps, &hat, &mask, norm).unwrap();
            let f = |x: &[f64]| {
                let h = LatentTensor::from_vec((2, 3, 3), x.to_vec()).unwrap();
                masked_mse_with(&eps, &h, &mask, norm).unwrap().value
            };
            assert!(gradient_failure(f, hat.as_slice(), g.as_slice(), DEFAULT_STEP).is_none());
        }
        let (_, g) = joint_loss_grad(&eps, &hat).unwrap();
        let f = |x: &[f64]| joint_loss(&eps, &LatentTensor::from_vec((2, 3, 3), x.to_vec()).unwrap()).unwrap();
        assert!(gradient_failure(f, hat.as_slice(), g.as_slice(), DEFAULT_STEP).is_none());
    }
}
