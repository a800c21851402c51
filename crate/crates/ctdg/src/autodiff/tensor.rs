//! Dense row-major f64 matrices and the matrix kernels used by the tape.
//!
//! Everything in the differentiable core is a matrix; vectors are stored as
//! a single row. Kernels are written so the inner loops run over contiguous
//! slices and autovectorize.

/// A dense, row-major, double-precision matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "tensor data length {} does not match shape {}x{}",
            data.len(),
            rows,
            cols
        );
        Tensor { rows, cols, data }
    }

    /// A 1 x n row vector.
    pub fn row(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor::from_vec(1, n, data)
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(1, 1, vec![v])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Maximum absolute entry; 0 for empty tensors.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

// Output tile width of the register micro-kernel.
const TILE_J: usize = 16;

/// out += a (m x k) * b (k x n). Accumulating form so backward passes can
/// add into existing gradient buffers without a temporary.
///
/// The hot path is a 4x16 register tile: accumulators stay in registers for
/// the whole k loop and touch memory once.
pub fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let mut i = 0;
    while i + 4 <= m {
        let mut j = 0;
        while j + TILE_J <= n {
            let mut acc = [[0.0f64; TILE_J]; 4];
            for kk in 0..k {
                let bt = &b[kk * n + j..kk * n + j + TILE_J];
                for (r, accr) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * k + kk];
                    for (o, &bv) in accr.iter_mut().zip(bt.iter()) {
                        *o += av * bv;
                    }
                }
            }
            for (r, accr) in acc.iter().enumerate() {
                let orow = &mut out[(i + r) * n + j..(i + r) * n + j + TILE_J];
                for (o, v) in orow.iter_mut().zip(accr.iter()) {
                    *o += v;
                }
            }
            j += TILE_J;
        }
        // column remainder for this row block
        if j < n {
            for r in 0..4 {
                let row = i + r;
                for kk in 0..k {
                    let av = a[row * k + kk];
                    let bt = &b[kk * n + j..(kk + 1) * n];
                    let orow = &mut out[row * n + j..(row + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(bt.iter()) {
                        *o += av * bv;
                    }
                }
            }
        }
        i += 4;
    }
    while i < m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bv;
            }
        }
        i += 1;
    }
}

/// out += a (m x k) * b^T where b is (n x k). Implemented by materializing
/// b^T once; the transpose cost is negligible next to the multiply.
pub fn matmul_nt_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let mut bt = vec![0.0f64; k * n];
    for j in 0..n {
        for kk in 0..k {
            bt[kk * n + j] = b[j * k + kk];
        }
    }
    matmul_acc(a, &bt, m, k, n, out);
}

/// out += a^T * b where a is (k x m) and b is (k x n). Same register tile as
/// [`matmul_acc`] with the a accesses transposed.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let mut i = 0;
    while i + 4 <= m {
        let mut j = 0;
        while j + TILE_J <= n {
            let mut acc = [[0.0f64; TILE_J]; 4];
            for kk in 0..k {
                let bt = &b[kk * n + j..kk * n + j + TILE_J];
                let abase = kk * m + i;
                for (r, accr) in acc.iter_mut().enumerate() {
                    let av = a[abase + r];
                    for (o, &bv) in accr.iter_mut().zip(bt.iter()) {
                        *o += av * bv;
                    }
                }
            }
            for (r, accr) in acc.iter().enumerate() {
                let orow = &mut out[(i + r) * n + j..(i + r) * n + j + TILE_J];
                for (o, v) in orow.iter_mut().zip(accr.iter()) {
                    *o += v;
                }
            }
            j += TILE_J;
        }
        if j < n {
            for kk in 0..k {
                let bt = &b[kk * n + j..(kk + 1) * n];
                for r in 0..4 {
                    let av = a[kk * m + i + r];
                    let orow = &mut out[(i + r) * n + j..(i + r + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(bt.iter()) {
                        *o += av * bv;
                    }
                }
            }
        }
        i += 4;
    }
    while i < m {
        for kk in 0..k {
            let av = a[kk * m + i];
            let brow = &b[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
        i += 1;
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(
        a.cols, b.rows,
        "matmul shape mismatch: {}x{} * {}x{}",
        a.rows, a.cols, b.rows, b.cols
    );
    let mut out = Tensor::zeros(a.rows, b.cols);
    matmul_acc(&a.data, &b.data, a.rows, a.cols, b.cols, &mut out.data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.at(i, k) * b.at(k, j);
                }
                out.set(i, j, s);
            }
        }
        out
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let m = rng.gen_range(1..9);
            let k = rng.gen_range(1..9);
            let n = rng.gen_range(1..9);
            let a = Tensor::from_vec(m, k, (0..m * k).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let b = Tensor::from_vec(k, n, (0..k * n).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let fast = matmul(&a, &b);
            let slow = naive(&a, &b);
            for (x, y) in fast.data().iter().zip(slow.data().iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn transposed_kernels_match_explicit_transpose() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let m = rng.gen_range(1..7);
            let k = rng.gen_range(1..7);
            let n = rng.gen_range(1..7);
            let a = Tensor::from_vec(m, k, (0..m * k).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let b = Tensor::from_vec(n, k, (0..n * k).map(|_| rng.gen_range(-2.0..2.0)).collect());
            // a * b^T via kernel vs via materialized transpose
            let mut bt = Tensor::zeros(k, n);
            for i in 0..n {
                for j in 0..k {
                    bt.set(j, i, b.at(i, j));
                }
            }
            let want = naive(&a, &bt);
            let mut got = Tensor::zeros(m, n);
            matmul_nt_acc(a.data(), b.data(), m, k, n, got.data_mut());
            for (x, y) in got.data().iter().zip(want.data().iter()) {
                assert!((x - y).abs() < 1e-12);
            }

            // a^T * c where a is (k x m)
            let a2 = Tensor::from_vec(k, m, (0..k * m).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let c = Tensor::from_vec(k, n, (0..k * n).map(|_| rng.gen_range(-2.0..2.0)).collect());
            let mut a2t = Tensor::zeros(m, k);
            for i in 0..k {
                for j in 0..m {
                    a2t.set(j, i, a2.at(i, j));
                }
            }
            let want = naive(&a2t, &c);
            let mut got = Tensor::zeros(m, n);
            matmul_tn_acc(a2.data(), c.data(), m, k, n, got.data_mut());
            for (x, y) in got.data().iter().zip(want.data().iter()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
