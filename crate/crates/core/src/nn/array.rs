//! Dense row-major arrays over a selectable float precision.

use crate::{Error, Result};

/// Element dtype, as persisted in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F64 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }
}

/// Float scalar the whole stack is generic over. Training runs f32; gradient
/// checks run f64 so central differences stay above rounding noise.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;
    fn of_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;
    fn of_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;
    fn of_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major n-dimensional array. Rank 0 holds a single scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct Array<S> {
    dims: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Array<S> {
    pub fn zeros(dims: &[usize]) -> Self {
        let len = if dims.is_empty() { 1 } else { dims.iter().product() };
        Array { dims: dims.to_vec(), data: vec![S::zero(); len] }
    }

    pub fn filled(dims: &[usize], v: S) -> Self {
        let mut a = Self::zeros(dims);
        a.data.iter_mut().for_each(|x| *x = v);
        a
    }

    pub fn scalar(v: S) -> Self {
        Array { dims: vec![], data: vec![v] }
    }

    pub fn from_vec(dims: &[usize], data: Vec<S>) -> Result<Self> {
        let expect: usize = if dims.is_empty() { 1 } else { dims.iter().product() };
        if data.len() != expect {
            return Err(Error::InvalidInput(format!(
                "array data length {} does not match dims {:?}",
                data.len(),
                dims
            )));
        }
        Ok(Array { dims: dims.to_vec(), data })
    }

    pub fn from_fn(dims: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let len = if dims.is_empty() { 1 } else { dims.iter().product() };
        Array { dims: dims.to_vec(), data: (0..len).map(|i| f(i)).collect() }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Single held value of a rank-0 (or length-1) array.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar array");
        self.data[0]
    }

    /// Rows of a rank-2 array.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.dims[0]
    }

    /// Columns of a rank-2 array.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.rank(), 2);
        self.dims[1]
    }

    pub fn at2(&self, r: usize, c: usize) -> S {
        self.data[r * self.dims[1] + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.dims[1] + c] = v;
    }

    pub fn row(&self, r: usize) -> &[S] {
        let c = self.dims[self.rank() - 1];
        &self.data[r * c..(r + 1) * c]
    }

    /// Same data, new dims; total length must match.
    pub fn reshaped(&self, dims: &[usize]) -> Array<S> {
        let expect: usize = if dims.is_empty() { 1 } else { dims.iter().product() };
        assert_eq!(expect, self.data.len(), "reshape length mismatch");
        Array { dims: dims.to_vec(), data: self.data.clone() }
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Array<S> {
        Array { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Array<S>, f: impl Fn(S, S) -> S) -> Array<S> {
        debug_assert_eq!(self.dims, other.dims);
        Array {
            dims: self.dims.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Array<S>) {
        debug_assert_eq!(self.dims, other.dims, "add_assign shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn scale_assign(&mut self, k: S) {
        for a in self.data.iter_mut() {
            *a = *a * k;
        }
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Lossy precision conversion (used when loading checkpoints saved at a
    /// different precision).
    pub fn cast<T: Scalar>(&self) -> Array<T> {
        Array { dims: self.dims.clone(), data: self.data.iter().map(|v| T::of_f64(v.as_f64())).collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Array::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Array::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn scalar_rank_zero() {
        let a = Array::<f64>::scalar(2.5);
        assert_eq!(a.rank(), 0);
        assert_eq!(a.len(), 1);
        assert_eq!(a.item(), 2.5);
    }

    #[test]
    fn dtype_codes_round_trip() {
        assert_eq!(Dtype::from_code(Dtype::F32.code()).unwrap(), Dtype::F32);
        assert_eq!(Dtype::from_code(Dtype::F64.code()).unwrap(), Dtype::F64);
        assert!(Dtype::from_code(7).is_err());
    }
}
