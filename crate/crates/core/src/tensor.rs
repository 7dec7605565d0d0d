//! Dense row-major `f64` arrays.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    #[inline]
    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Shape as a fixed 5-tuple `(B, C, T, H, W)`.
    pub fn dims5(&self) -> Result<[usize; 5]> {
        match self.shape[..] {
            [b, c, t, h, w] => Ok([b, c, t, h, w]),
            _ => Err(Error::Shape(format!(
                "expected a 5-d (B, C, T, H, W) tensor, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Sub-tensor along the leading axis.
    pub fn index_axis0(&self, i: usize) -> Tensor {
        let inner: usize = self.shape[1..].iter().product();
        Tensor {
            shape: self.shape[1..].to_vec(),
            data: self.data[i * inner..(i + 1) * inner].to_vec(),
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero tensors".into()))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(items.len() * first.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    first.shape, t.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape, data })
    }

    /// Concatenates two `(B, C, ...)` tensors along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.ndim() < 2 || a.shape[0] != b.shape[0] || a.shape[2..] != b.shape[2..] {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} and {:?} along channels",
                a.shape, b.shape
            )));
        }
        let batch = a.shape[0];
        let na = a.len() / batch;
        let nb = b.len() / batch;
        let mut data = Vec::with_capacity(a.len() + b.len());
        for i in 0..batch {
            data.extend_from_slice(&a.data[i * na..(i + 1) * na]);
            data.extend_from_slice(&b.data[i * nb..(i + 1) * nb]);
        }
        let mut shape = a.shape.clone();
        shape[1] += b.shape[1];
        Ok(Tensor { shape, data })
    }

    /// Inverse of [`Tensor::concat_channels`]: splits after `c_first` channels.
    pub fn split_channels(&self, c_first: usize) -> (Tensor, Tensor) {
        let batch = self.shape[0];
        let c = self.shape[1];
        let inner: usize = self.shape[2..].iter().product();
        let mut sa = self.shape.clone();
        sa[1] = c_first;
        let mut sb = self.shape.clone();
        sb[1] = c - c_first;
        let mut da = Vec::with_capacity(batch * c_first * inner);
        let mut db = Vec::with_capacity(batch * (c - c_first) * inner);
        for i in 0..batch {
            let base = i * c * inner;
            da.extend_from_slice(&self.data[base..base + c_first * inner]);
            db.extend_from_slice(&self.data[base + c_first * inner..base + c * inner]);
        }
        (Tensor { shape: sa, data: da }, Tensor { shape: sb, data: db })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_is_identity() {
        let a = Tensor::from_vec(&[2, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::from_vec(&[2, 2, 2], vec![5., 6., 7., 8., 9., 10., 11., 12.]).unwrap();
        let c = Tensor::concat_channels(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert_eq!(c.data(), &[1., 2., 5., 6., 7., 8., 3., 4., 9., 10., 11., 12.]);
        let (a2, b2) = c.split_channels(1);
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }
}
