//! Row-major f64 matrix with an optional gradient buffer, plus the three
//! matmul kernels the dense layers need. Kernels parallelize over disjoint
//! output rows with a fixed per-row accumulation order, so results are
//! bit-identical regardless of thread count.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// FLOP threshold below which kernels stay single-threaded.
const PAR_FLOP_THRESHOLD: usize = 1 << 19;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
            grad: None,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("{rows}x{cols} = {} values", rows * cols),
                format!("{}", data.len()),
            ));
        }
        Ok(Tensor {
            rows,
            cols,
            data,
            grad: None,
        })
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![value; rows * cols],
            grad: None,
        }
    }

    /// Fan-scaled uniform init on (-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    pub fn glorot_uniform(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-a..a))
            .collect();
        Tensor {
            rows,
            cols,
            data,
            grad: None,
        }
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

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// Allocate the gradient buffer (zeroed) if absent.
    pub fn with_grad(mut self) -> Self {
        self.ensure_grad();
        self
    }

    pub fn ensure_grad(&mut self) {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn grad(&self) -> &[f64] {
        self.grad.as_deref().expect("tensor has no gradient buffer")
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        self.grad.as_deref_mut().expect("tensor has no gradient buffer")
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Simultaneous mutable access to values and gradient (for optimizers).
    pub fn data_and_grad_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        self.ensure_grad();
        (
            self.data.as_mut_slice(),
            self.grad.as_deref_mut().unwrap(),
        )
    }

    /// Accumulate `delta` (same shape) into the gradient buffer.
    pub fn accumulate_grad(&mut self, delta: &Tensor) {
        debug_assert_eq!(self.shape(), delta.shape());
        self.ensure_grad();
        let g = self.grad.as_deref_mut().unwrap();
        for (gi, di) in g.iter_mut().zip(&delta.data) {
            *gi += di;
        }
    }

    pub fn assert_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("{what} contains non-finite values")));
        }
        Ok(())
    }
}

/// y = x * w^T for x: B x k and w: m x k, giving B x m. Rows of both inputs
/// are contiguous, so each output element is one dot product.
pub fn matmul_nt(x: &Tensor, w: &Tensor) -> Tensor {
    assert_eq!(x.cols, w.cols, "matmul_nt inner dims");
    let (b, k, m) = (x.rows, x.cols, w.rows);
    let mut out = Tensor::zeros(b, m);
    let work = b * k * m;
    let body = |r: usize, out_row: &mut [f64]| {
        let xr = x.row(r);
        for (j, slot) in out_row.iter_mut().enumerate() {
            let wr = w.row(j);
            let mut acc = 0.0;
            for i in 0..k {
                acc += xr[i] * wr[i];
            }
            *slot = acc;
        }
    };
    if work >= PAR_FLOP_THRESHOLD && b > 1 {
        out.data
            .par_chunks_mut(m)
            .enumerate()
            .for_each(|(r, row)| body(r, row));
    } else {
        for r in 0..b {
            let row = &mut out.data[r * m..(r + 1) * m];
            body(r, row);
        }
    }
    out
}

/// out = a * b for a: B x m and b: m x k, giving B x k. Used for dx = dy * W.
pub fn matmul_nn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.cols, b.rows, "matmul_nn inner dims");
    let (n, m, k) = (a.rows, a.cols, b.cols);
    let mut out = Tensor::zeros(n, k);
    let work = n * m * k;
    let body = |r: usize, out_row: &mut [f64]| {
        let ar = a.row(r);
        for i in 0..m {
            let scale = ar[i];
            if scale == 0.0 {
                continue;
            }
            let br = b.row(i);
            for (slot, v) in out_row.iter_mut().zip(br) {
                *slot += scale * v;
            }
        }
    };
    if work >= PAR_FLOP_THRESHOLD && n > 1 {
        out.data
            .par_chunks_mut(k)
            .enumerate()
            .for_each(|(r, row)| body(r, row));
    } else {
        for r in 0..n {
            let row = &mut out.data[r * k..(r + 1) * k];
            body(r, row);
        }
    }
    out
}

/// out = a^T * b for a: B x m and b: B x k, giving m x k. Used for
/// dW = dy^T * x.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.rows, b.rows, "matmul_tn batch dims");
    let (n, m, k) = (a.rows, a.cols, b.cols);
    let mut out = Tensor::zeros(m, k);
    let work = n * m * k;
    let body = |i: usize, out_row: &mut [f64]| {
        for r in 0..n {
            let scale = a.get(r, i);
            if scale == 0.0 {
                continue;
            }
            let br = b.row(r);
            for (slot, v) in out_row.iter_mut().zip(br) {
                *slot += scale * v;
            }
        }
    };
    if work >= PAR_FLOP_THRESHOLD && m > 1 {
        out.data
            .par_chunks_mut(k)
            .enumerate()
            .for_each(|(i, row)| body(i, row));
    } else {
        for i in 0..m {
            let row = &mut out.data[i * k..(i + 1) * k];
            body(i, row);
        }
    }
    out
}

/// Elementwise sum of two same-shape tensors.
pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "add shapes");
    let mut out = a.clone();
    out.grad = None;
    for (o, v) in out.data.iter_mut().zip(&b.data) {
        *o += v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random::<f64>() - 0.5).collect();
        Tensor::from_vec(rows, cols, data).unwrap()
    }

    fn naive_nt(x: &Tensor, w: &Tensor) -> Tensor {
        let mut out = Tensor::zeros(x.rows(), w.rows());
        for r in 0..x.rows() {
            for j in 0..w.rows() {
                let mut acc = 0.0;
                for i in 0..x.cols() {
                    acc += x.get(r, i) * w.get(j, i);
                }
                out.set(r, j, acc);
            }
        }
        out
    }

    #[test]
    fn kernels_agree_with_naive_and_each_other() {
        let x = random_tensor(9, 33, 1);
        let w = random_tensor(21, 33, 2);
        let y = matmul_nt(&x, &w);
        let y_ref = naive_nt(&x, &w);
        for (a, b) in y.data().iter().zip(y_ref.data()) {
            assert!((a - b).abs() < 1e-12);
        }

        // dx = dy * W must equal matmul_nt with W transposed.
        let dy = random_tensor(9, 21, 3);
        let dx = matmul_nn(&dy, &w);
        let mut wt = Tensor::zeros(33, 21);
        for r in 0..21 {
            for c in 0..33 {
                wt.set(c, r, w.get(r, c));
            }
        }
        let dx_ref = naive_nt(&dy, &wt);
        for (a, b) in dx.data().iter().zip(dx_ref.data()) {
            assert!((a - b).abs() < 1e-12);
        }

        // dW = dy^T x checked entrywise.
        let dw = matmul_tn(&dy, &x);
        assert_eq!(dw.shape(), (21, 33));
        for i in 0..21 {
            for j in 0..33 {
                let mut acc = 0.0;
                for r in 0..9 {
                    acc += dy.get(r, i) * x.get(r, j);
                }
                assert!((dw.get(i, j) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn large_parallel_matmul_matches_serial_bitwise() {
        let x = random_tensor(64, 256, 7);
        let w = random_tensor(128, 256, 8);
        // 64*256*128 = 2M flops: parallel path engaged.
        let par = matmul_nt(&x, &w);
        // Serial reference with the same per-row accumulation order.
        let mut serial = Tensor::zeros(64, 128);
        for r in 0..64 {
            let xr = x.row(r);
            for j in 0..128 {
                let wr = w.row(j);
                let mut acc = 0.0;
                for i in 0..256 {
                    acc += xr[i] * wr[i];
                }
                serial.set(r, j, acc);
            }
        }
        for (a, b) in par.data().iter().zip(serial.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn grad_buffer_lifecycle() {
        let mut t = Tensor::zeros(2, 2).with_grad();
        t.grad_mut()[0] = 5.0;
        t.zero_grad();
        assert!(t.grad().iter().all(|&v| v == 0.0));
        let delta = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        t.accumulate_grad(&delta);
        t.accumulate_grad(&delta);
        assert_eq!(t.grad(), &[2.0, 4.0, 6.0, 8.0]);
    }
}
