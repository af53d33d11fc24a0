//! Row-major rank-3 tensor (height x width x channels).

use crate::cwt::ScalogramTensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(h: usize, w: usize, c: usize) -> Tensor3 {
        Tensor3 {
            h,
            w,
            c,
            data: vec![0.0; h * w * c],
        }
    }

    pub fn from_data(h: usize, w: usize, c: usize, data: Vec<f64>) -> Result<Tensor3> {
        if data.len() != h * w * c {
            return Err(Error::parameter(format!(
                "tensor data length {} != {h}x{w}x{c}",
                data.len()
            )));
        }
        Ok(Tensor3 { h, w, c, data })
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.w + j) * self.c + k]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f64 {
        &mut self.data[(i * self.w + j) * self.c + k]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl From<&ScalogramTensor> for Tensor3 {
    fn from(t: &ScalogramTensor) -> Tensor3 {
        Tensor3 {
            h: t.num_scales(),
            w: t.time_len,
            c: t.num_channels(),
            data: t.data.clone(),
        }
    }
}
