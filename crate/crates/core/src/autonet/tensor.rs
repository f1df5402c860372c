use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shaped row-major buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Argument(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.shape[1];
        &self.data[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn view2(&self) -> Result<ArrayView2<'_, f64>> {
        if self.shape.len() != 2 {
            return Err(Error::Argument(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape
            )));
        }
        ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.data)
            .map_err(|e| Error::Internal(e.to_string()))
    }

    pub fn has_non_finite(&self) -> bool {
        self.data.iter().any(|x| !x.is_finite())
    }
}

impl From<Array2<f64>> for Tensor {
    fn from(a: Array2<f64>) -> Self {
        let shape = vec![a.nrows(), a.ncols()];
        let data = if a.is_standard_layout() {
            a.into_raw_vec_and_offset().0
        } else {
            a.iter().copied().collect()
        };
        Tensor { shape, data }
    }
}

impl TryFrom<Tensor> for Array2<f64> {
    type Error = Error;

    fn try_from(t: Tensor) -> Result<Self> {
        if t.shape.len() != 2 {
            return Err(Error::Argument(format!(
                "expected a rank-2 tensor, got shape {:?}",
                t.shape
            )));
        }
        Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data)
            .map_err(|e| Error::Internal(e.to_string()))
    }
}
