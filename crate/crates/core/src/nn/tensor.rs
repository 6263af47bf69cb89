use ndarray::{Array4, ArrayView4};

use crate::error::{Error, Result};

/// Dense NCHW tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::shape(format!("{n} values for {shape:?}"), data.len()));
        }
        Ok(Tensor { shape, data })
    }

    /// Convert an N×H×W×C array into NCHW layout.
    pub fn from_nhwc(x: ArrayView4<f64>) -> Self {
        let (n, h, w, c) = x.dim();
        let mut t = Tensor::zeros([n, c, h, w]);
        for ((i, y, xx, ch), &v) in x.indexed_iter() {
            t.data[((i * c + ch) * h + y) * w + xx] = v;
        }
        t
    }

    pub fn to_nhwc(&self) -> Array4<f64> {
        let [n, c, h, w] = self.shape;
        Array4::from_shape_fn((n, h, w, c), |(i, y, x, ch)| {
            self.data[((i * c + ch) * h + y) * w + x]
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Values of sample `i` (C·H·W contiguous).
    pub fn sample(&self, i: usize) -> &[f64] {
        let s = self.shape[1] * self.shape[2] * self.shape[3];
        &self.data[i * s..(i + 1) * s]
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}
