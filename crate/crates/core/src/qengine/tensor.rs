use crate::netir::TensorShape;
use crate::Scalar;

/// Dense rank-4 tensor in NHWC order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub batch: usize,
    pub shape: TensorShape,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(batch: usize, shape: TensorShape) -> Self {
        Self { batch, shape, data: vec![T::zero(); batch * shape.numel()] }
    }

    pub fn from_vec(batch: usize, shape: TensorShape, data: Vec<T>) -> Self {
        assert_eq!(data.len(), batch * shape.numel(), "tensor data length");
        Self { batch, shape, data }
    }

    pub fn full(batch: usize, shape: TensorShape, v: T) -> Self {
        Self { batch, shape, data: vec![v; batch * shape.numel()] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Elements per batch item.
    pub fn item_len(&self) -> usize {
        self.shape.numel()
    }

    #[inline]
    pub fn index(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.shape.height + y) * self.shape.width + x) * self.shape.channels + c
    }

    pub fn item(&self, n: usize) -> &[T] {
        let len = self.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { batch: self.batch, shape: self.shape, data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }
}
