use crate::error::{Error, Result};
use crate::real::Real;

/// Dense real array in row-major order.
///
/// Shapes are explicit: `[]` is a scalar, `[n]` a vector, `[r, c]` a matrix.
/// There is no implicit broadcasting; mixed-shape operations exist only as
/// named tape operations (row-vector add, row/column scaling).
#[derive(Clone, Debug, PartialEq)]
pub struct RealArray<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> RealArray<T> {
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::contract(format!(
                "array data length {} does not match shape {:?} (numel {})",
                data.len(),
                shape,
                numel
            )));
        }
        Ok(RealArray { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        RealArray {
            shape,
            data: vec![T::zero(); numel],
        }
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        RealArray {
            shape,
            data: vec![value; numel],
        }
    }

    /// Shape-`[]` scalar.
    pub fn scalar(value: T) -> Self {
        RealArray {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        RealArray {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec(vec![rows, cols], data)
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&x| T::of(x)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.len() <= 1
    }

    /// Row count of a matrix (`[r, c]`).
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Column count of a matrix (`[r, c]`).
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn get2(&self, r: usize, c: usize) -> T {
        self.data[r * self.shape[1] + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        RealArray {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Flat index of the first non-finite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|x| !x.is_finite())
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|x| x.as_f64()).collect()
    }

    /// Bit-exact equality, including distinguishing -0.0 from +0.0.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.as_f64().to_bits() == b.as_f64().to_bits())
    }
}

// ── Raw kernels ──────────────────────────────────────────────────────
//
// Shared by forward tape ops and their gradient rules. All operate on
// flat row-major slices; callers guarantee lengths.

/// out += a[m×k] · b[k×n]
pub(crate) fn matmul_nn_acc<T: Real>(
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    out: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for (i, out_row) in out.chunks_exact_mut(n).enumerate() {
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..kk * n + n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aik * bv;
            }
        }
    }
}

/// out += a[m×k] · bᵀ where b is stored [n×k]
pub(crate) fn matmul_nt_acc<T: Real>(
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    out: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for (i, out_row) in out.chunks_exact_mut(n).enumerate() {
        let a_row = &a[i * k..(i + 1) * k];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in a_row.iter().zip(b_row) {
                acc = acc + av * bv;
            }
            *o = *o + acc;
        }
    }
}

/// out += aᵀ · b where a is stored [m×k], b is [m×n], out is [k×n]
pub(crate) fn matmul_tn_acc<T: Real>(
    a: &[T],
    b: &[T],
    m: usize,
    k: usize,
    n: usize,
    out: &mut [T],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

pub(crate) fn check_same_shape<T: Real>(
    op: &'static str,
    a: &RealArray<T>,
    b: &RealArray<T>,
) -> Result<()> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_length_mismatch_rejected() {
        let r = RealArray::<f64>::from_vec(vec![2, 3], vec![1.0; 5]);
        assert!(r.is_err());
    }

    #[test]
    fn scalar_shape_is_empty() {
        let s = RealArray::scalar(3.0f64);
        assert!(s.shape().is_empty());
        assert_eq!(s.numel(), 1);
        assert!(s.is_scalar());
    }

    // Independent triple-loop product used as the matmul oracle.
    fn naive_matmul(a: &RealArray<f64>, b: &RealArray<f64>) -> Vec<f64> {
        let (m, k, n) = (a.rows(), a.cols(), b.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += a.get2(i, kk) * b.get2(kk, j);
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_kernel_matches_triple_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let a = RealArray::from_vec(vec![3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let b = RealArray::from_vec(vec![4, 2], (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap();
        let mut out = vec![0.0; 6];
        matmul_nn_acc(a.data(), b.data(), 3, 4, 2, &mut out);
        let expect = naive_matmul(&a, &b);
        for (x, y) in out.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
    }

    #[test]
    fn transposed_kernels_match_explicit_transpose() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let m = 3;
        let k = 5;
        let n = 4;
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n * k).map(|_| rng.gen_range(-1.0..1.0)).collect();

        // a[m×k] · (b[n×k])ᵀ against naive on materialized transpose
        let mut out = vec![0.0; m * n];
        matmul_nt_acc(&a, &b, m, k, n, &mut out);
        let mut bt = vec![0.0; k * n];
        for j in 0..n {
            for kk in 0..k {
                bt[kk * n + j] = b[j * k + kk];
            }
        }
        let mut expect = vec![0.0; m * n];
        matmul_nn_acc(&a, &bt, m, k, n, &mut expect);
        for (x, y) in out.iter().zip(&expect) {
            assert!((x - y).abs() < 1e-12);
        }

        // (c[m×k])ᵀ · d[m×n]
        let c: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut out2 = vec![0.0; k * n];
        matmul_tn_acc(&c, &d, m, k, n, &mut out2);
        let mut ct = vec![0.0; k * m];
        for i in 0..m {
            for kk in 0..k {
                ct[kk * m + i] = c[i * k + kk];
            }
        }
        let mut expect2 = vec![0.0; k * n];
        matmul_nn_acc(&ct, &d, k, m, n, &mut expect2);
        for (x, y) in out2.iter().zip(&expect2) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
