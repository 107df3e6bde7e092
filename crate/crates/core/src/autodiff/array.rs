use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Array<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Array<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {numel} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: T) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn from_vec(data: Vec<T>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Size of the last dimension (1 for a 0-d array).
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `[numel / cols, cols]`.
    pub fn rows(&self) -> usize {
        let c = self.cols();
        if c == 0 {
            0
        } else {
            self.data.len() / c
        }
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} into {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    /// The single value of a one-element array.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    pub fn cast<U: Scalar>(&self) -> Array<U> {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }
}

/// Row-wise log-softmax with max subtraction.
pub fn log_softmax<T: Scalar>(logits: &Array<T>) -> Result<Array<T>> {
    if logits.cols() == 0 {
        return Err(Error::Shape("log_softmax needs a non-empty last dimension".into()));
    }
    let data = super::kernels::log_softmax_rows(logits.data(), logits.cols())?;
    Array::new(logits.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(Array::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn log_softmax_symmetric_pair() {
        let x = Array::new(vec![2], vec![0.0f32, 0.0]).unwrap();
        let y = log_softmax(&x).unwrap();
        for v in y.data() {
            assert!((v + std::f32::consts::LN_2).abs() < 1e-6);
        }
    }

    #[test]
    fn log_softmax_large_logits_do_not_overflow() {
        let x = Array::new(vec![2], vec![1000.0f32, 1000.0]).unwrap();
        let y = log_softmax(&x).unwrap();
        for v in y.data() {
            assert!((v + std::f32::consts::LN_2).abs() < 1e-6);
        }
    }

    #[test]
    fn log_softmax_rows_normalize() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..28).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let y = log_softmax(&Array::new(vec![4, 7], data).unwrap()).unwrap();
        for r in 0..4 {
            // direct summation in f64
            let s: f64 = y.row(r).iter().map(|v| (*v as f64).exp()).sum();
            assert!((s - 1.0).abs() < 1e-5, "row {r} sums to {s}");
        }
    }

    #[test]
    fn log_softmax_rejects_non_finite() {
        let x = Array::new(vec![2], vec![f32::NAN, 0.0]).unwrap();
        assert!(matches!(log_softmax(&x), Err(Error::NonFiniteLogits)));
        let x = Array::new(vec![2], vec![f32::INFINITY, 0.0]).unwrap();
        assert!(matches!(log_softmax(&x), Err(Error::NonFiniteLogits)));
    }
}
