use num_traits::Float;

use super::AutodiffError;

/// Scalar types the engine runs on. `f32` carries training and inference,
/// `f64` carries gradient checks and the channel-domain arithmetic.
pub trait Scalar:
    Float + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(x: f64) -> Self;
    fn from_f32(x: f32) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn from_f32(x: f32) -> Self {
        x
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn from_f32(x: f32) -> Self {
        x as f64
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense n-dimensional array in row-major order.
///
/// The shape always multiplies out to the data length; a rank-0 tensor holds
/// exactly one element and plays the role of a scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self, AutodiffError> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(AutodiffError::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![S::zero(); len],
        }
    }

    pub fn full(shape: Vec<usize>, value: S) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: S) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    /// Value of a rank-0 / single-element tensor.
    pub fn item(&self) -> S {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Same data under a new shape with identical element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Self, AutodiffError> {
        Self::new(shape, self.data.clone())
    }

    /// Lossless-where-possible conversion between scalar types
    /// (`f32 -> f64` is exact; `f64 -> f32` rounds).
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| T::from_f64(Scalar::as_f64(*v))).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// In-place elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<S>) -> Result<(), AutodiffError> {
        if self.shape != other.shape {
            return Err(super::shape_mismatch(
                "tensor add_assign",
                &self.shape,
                &other.shape,
            ));
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a = *a + *b;
        }
        Ok(())
    }

    /// Fill with a single value, keeping the shape.
    pub fn fill(&mut self, value: S) {
        for v in &mut self.data {
            *v = value;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data_length() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        let err = Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, AutodiffError::LengthMismatch { .. }));
    }

    #[test]
    fn scalar_tensor_is_rank_zero() {
        let t = Tensor::scalar(4.0f64);
        assert_eq!(t.rank(), 0);
        assert_eq!(t.len(), 1);
        assert_eq!(t.item(), 4.0);
    }

    #[test]
    fn cast_f32_to_f64_is_exact() {
        let t = Tensor::<f32>::new(vec![3], vec![0.1, -2.5, 7.0]).unwrap();
        let u: Tensor<f64> = t.cast();
        for (a, b) in t.data().iter().zip(u.data()) {
            assert_eq!(*a as f64, *b);
        }
    }
}
