//! Dense row-major tensors over f32/f64 plus the handful of kernels the
//! model needs. Loops are written so the autovectorizer gets unit-stride
//! inner dimensions; summation order is fixed, so results are bit-stable.

use num_traits::Float;

/// Element type for all numeric code. Training runs at `f32`; gradient
/// verification instantiates the same code at `f64`.
pub trait Scalar:
    Float
    + num_traits::NumAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Row-major dense tensor. Rank is 1 or 2 everywhere in this crate.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<E> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Scalar> Tensor<E> {
    pub fn new(data: Vec<E>, shape: Vec<usize>) -> Self {
        assert_eq!(
            data.len(),
            shape.iter().product::<usize>(),
            "data length must match shape"
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![E::zero(); n] }
    }

    pub fn scalar(v: E) -> Self {
        Tensor { shape: vec![1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix (rank-1 tensors are one row).
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensor has a shape")
    }

    pub fn row(&self, i: usize) -> &[E] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [E] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> E {
        assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    pub fn is_scalar_shape(&self) -> bool {
        self.data.len() == 1
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Squared L2 norm accumulated in f64.
    pub fn sq_norm_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }
}

/// c = a @ b for a: [m,k], b: [k,n].
pub fn matmul<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul inner dims: {k} vs {k2}");
    let mut out = Tensor::zeros(vec![m, n]);
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (kk, &av) in arow.iter().enumerate() {
            let brow = b.row(kk);
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// c = a @ b^T for a: [m,k], b: [n,k]. Row-dot formulation.
pub fn matmul_nt<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let (m, k) = (a.rows(), a.cols());
    let (n, k2) = (b.rows(), b.cols());
    assert_eq!(k, k2, "matmul_nt inner dims: {k} vs {k2}");
    let mut out = Tensor::zeros(vec![m, n]);
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (j, o) in orow.iter_mut().enumerate() {
            *o = dot(arow, b.row(j));
        }
    }
    out
}

/// c = a^T @ b for a: [m,k], b: [m,n]. Accumulating-rank-one formulation.
pub fn matmul_tn<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let (m, k) = (a.rows(), a.cols());
    let (m2, n) = (b.rows(), b.cols());
    assert_eq!(m, m2, "matmul_tn outer dims: {m} vs {m2}");
    let mut out = Tensor::zeros(vec![k, n]);
    for i in 0..m {
        let arow = a.row(i);
        let brow = b.row(i);
        for (kk, &av) in arow.iter().enumerate() {
            let orow = out.row_mut(kk);
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

pub fn dot<E: Scalar>(a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = E::zero();
    for (&x, &y) in a.iter().zip(b.iter()) {
        acc = acc + x * y;
    }
    acc
}

/// y += alpha * x
pub fn axpy<E: Scalar>(alpha: E, x: &[E], y: &mut [E]) {
    debug_assert_eq!(x.len(), y.len());
    for (o, &v) in y.iter_mut().zip(x.iter()) {
        *o = *o + alpha * v;
    }
}

/// Numerically stable in-place softmax of a slice.
pub fn softmax_inplace<E: Scalar>(row: &mut [E]) {
    let mut max = E::neg_infinity();
    for &v in row.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = E::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// Log-softmax of one row evaluated entirely in f64; returns the log-prob
/// of `target` and the f64 probabilities (for backward).
pub fn log_softmax_pick_f64<E: Scalar>(row: &[E], target: usize) -> (f64, Vec<f64>) {
    let mut max = f64::NEG_INFINITY;
    for &v in row.iter() {
        let x = v.as_f64();
        if x > max {
            max = x;
        }
    }
    let mut sum = 0.0f64;
    let mut exps = Vec::with_capacity(row.len());
    for &v in row.iter() {
        let e = (v.as_f64() - max).exp();
        exps.push(e);
        sum += e;
    }
    let logprob = row[target].as_f64() - max - sum.ln();
    for e in exps.iter_mut() {
        *e /= sum;
    }
    (logprob, exps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![1.0f64, 2.0, 3.0, 4.0], vec![2, 2]);
        let b = Tensor::new(vec![5.0, 6.0, 7.0, 8.0], vec![2, 2]);
        let c = matmul(&a, &b);
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_variants_agree() {
        // a@b == matmul_nt(a, b^T) == matmul_tn(a^T, b), checked on randoms.
        use rand::Rng;
        let mut rng = crate::rng::stream_rng(1, "tensor-test");
        let mk = |r: usize, c: usize, rng: &mut rand_chacha::ChaCha8Rng| {
            Tensor::new((0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect(), vec![r, c])
        };
        let a = mk(3, 4, &mut rng);
        let b = mk(4, 5, &mut rng);
        let c = matmul(&a, &b);

        let mut bt = Tensor::<f64>::zeros(vec![5, 4]);
        for i in 0..4 {
            for j in 0..5 {
                bt.row_mut(j)[i] = b.row(i)[j];
            }
        }
        let c2 = matmul_nt(&a, &bt);
        let mut at = Tensor::<f64>::zeros(vec![4, 3]);
        for i in 0..3 {
            for j in 0..4 {
                at.row_mut(j)[i] = a.row(i)[j];
            }
        }
        let c3 = matmul_tn(&at, &b);
        for idx in 0..c.len() {
            assert!((c.data()[idx] - c2.data()[idx]).abs() < 1e-12);
            assert!((c.data()[idx] - c3.data()[idx]).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_normalizes() {
        let mut row = vec![1.0f32, 2.0, 3.0, -1.0];
        softmax_inplace(&mut row);
        let s: f32 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}
