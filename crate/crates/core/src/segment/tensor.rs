use crate::error::{Error, Result};

/// Dense `(batch, channels, height, width)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "tensor {dims:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor value {v}")));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    pub fn sample(&self, n: usize) -> &[f64] {
        let len = self.sample_len();
        &self.data[n * len..(n + 1) * len]
    }

    /// Plane `(n, c)` as a row-major `height * width` slice.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let hw = self.dims[2] * self.dims[3];
        let start = (n * self.dims[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub(crate) fn from_samples(c: usize, h: usize, w: usize, samples: Vec<Vec<f64>>) -> Self {
        let n = samples.len();
        let data: Vec<f64> = samples.into_iter().flatten().collect();
        debug_assert_eq!(data.len(), n * c * h * w);
        Tensor4 {
            dims: [n, c, h, w],
            data,
        }
    }
}

/// Single-sample feature map `(channels, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Map {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let hw = self.h * self.w;
        &self.data[c * hw..(c + 1) * hw]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let hw = self.h * self.w;
        &mut self.data[c * hw..(c + 1) * hw]
    }
}
