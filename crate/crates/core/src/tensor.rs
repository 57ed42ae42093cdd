//! Dense latent/pixel tensors laid out as (channels, height, width).

use ndarray::Array3;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    data: Array3<f64>,
}

impl LatentTensor {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            data: Array3::zeros((channels, height, width)),
        }
    }

    pub fn from_array(data: Array3<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent tensor".into()));
        }
        // keep standard layout so `as_slice` is always available
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
        })
    }

    pub fn from_vec(shape: (usize, usize, usize), values: Vec<f64>) -> Result<Self> {
        let arr = Array3::from_shape_vec(shape, values).map_err(|e| Error::Shape(e.to_string()))?;
        Self::from_array(arr)
    }

    pub fn filled(shape: (usize, usize, usize), value: f64) -> Self {
        Self {
            data: Array3::from_elem(shape, value),
        }
    }

    pub fn randn<R: Rng + ?Sized>(shape: (usize, usize, usize), rng: &mut R) -> Self {
        let n = shape.0 * shape.1 * shape.2;
        let values: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        Self {
            data: Array3::from_shape_vec(shape, values).expect("shape matches length"),
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn array(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        self.data.as_slice_mut().expect("standard layout")
    }

    pub fn into_array(self) -> Array3<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_same_shape(&self, other: &LatentTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "tensor shapes differ: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &LatentTensor) -> f64 {
        self.as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
