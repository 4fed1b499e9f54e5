//! Dense kernels shared by the forward and backward passes: strided GEMM,
//! layer normalization, GELU and row softmax.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point element type of the network. Training runs in `f32`;
/// gradient checks run in `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + SubAssign + MulAssign + 'static
{
    const DTYPE: &'static str;

    /// Raw strided GEMM: `C = alpha * A * B + beta * C` with `A` m×k,
    /// `B` k×n, `C` m×n.
    ///
    /// # Safety
    /// All strided accesses must stay inside the allocations.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }

    /// `exp` for the hot activation loops. Exact (libm) unless overridden.
    #[inline]
    fn exp_fast(self) -> Self {
        self.exp()
    }
}

impl Real for f32 {
    const DTYPE: &'static str = "f32";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }

    #[inline]
    fn exp_fast(self) -> f32 {
        expf_poly(self)
    }
}

/// Branch-free single-precision `exp` (Cephes polynomial, about 2 ulp),
/// written so that loops over it auto-vectorize.
#[inline(always)]
pub fn expf_poly(x: f32) -> f32 {
    const ROUND: f32 = 12_582_912.0; // 1.5 * 2^23
    let x = x.clamp(-87.0, 88.0);
    let t = x * std::f32::consts::LOG2_E + ROUND;
    let n = t - ROUND;
    let r = x - n * 0.693_359_4 - n * -2.121_944_4e-4;
    let p = 1.987_569_1e-4_f32;
    let p = p * r + 1.398_199_9e-3;
    let p = p * r + 8.333_452e-3;
    let p = p * r + 4.166_579_6e-2;
    let p = p * r + 1.666_666_5e-1;
    let p = p * r + 0.5;
    let y = p * r * r + r + 1.0;
    let e = (t.to_bits() as i32).wrapping_sub(0x4B40_0000);
    y * f32::from_bits(((e + 127) << 23) as u32)
}

impl Real for f64 {
    const DTYPE: &'static str = "f64";

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// A row-major matrix view: element `(i, j)` of the (possibly transposed)
/// operand lives at `data[offset + i * rs + j * cs]`.
#[derive(Clone, Copy)]
pub struct View<'a, T> {
    pub data: &'a [T],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl<'a, T> View<'a, T> {
    /// `rows × cols` block starting at `offset` with leading dimension `ld`.
    pub fn new(data: &'a [T], offset: usize, rows: usize, cols: usize, ld: usize) -> Self {
        Self {
            data,
            offset,
            rows,
            cols,
            rs: ld,
            cs: 1,
        }
    }

    pub fn full(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self::new(data, 0, rows, cols, cols)
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// Mutable destination block, row-major with leading dimension `ld`.
pub struct ViewMut<'a, T> {
    pub data: &'a mut [T],
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub ld: usize,
}

impl<'a, T> ViewMut<'a, T> {
    pub fn new(data: &'a mut [T], offset: usize, rows: usize, cols: usize, ld: usize) -> Self {
        Self {
            data,
            offset,
            rows,
            cols,
            ld,
        }
    }

    pub fn full(data: &'a mut [T], rows: usize, cols: usize) -> Self {
        Self::new(data, 0, rows, cols, cols)
    }
}

/// `C = alpha * A * B + beta * C`. With `beta == 0` the previous contents
/// of `C` are ignored.
pub fn gemm<T: Real>(alpha: T, a: View<'_, T>, b: View<'_, T>, beta: T, c: ViewMut<'_, T>) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!((a.rows, b.cols), (c.rows, c.cols), "output shape differs");
    a.check();
    b.check();
    if c.rows > 0 && c.cols > 0 {
        assert!(c.offset + (c.rows - 1) * c.ld + c.cols - 1 < c.data.len());
    }
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    // SAFETY: every view was bounds-checked above; `c` is uniquely borrowed.
    unsafe {
        T::gemm_raw(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.ld as isize,
            1,
        )
    }
}

/// `y = x W + bias` for `x` n×d_in, `W` d_in×d_out.
pub fn linear<T: Real>(x: &[T], n: usize, w: &[T], bias: &[T], d_in: usize, d_out: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(n * d_out);
    for _ in 0..n {
        y.extend_from_slice(bias);
    }
    gemm(
        T::one(),
        View::full(x, n, d_in),
        View::full(w, d_in, d_out),
        T::one(),
        ViewMut::full(&mut y, n, d_out),
    );
    y
}

/// Accumulates `dW += x^T dy`, `db += colsum(dy)` and returns `dx = dy W^T`.
#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    x: &[T],
    dy: &[T],
    n: usize,
    w: &[T],
    d_in: usize,
    d_out: usize,
    dw: &mut [T],
    db: &mut [T],
    want_dx: bool,
) -> Option<Vec<T>> {
    gemm(
        T::one(),
        View::full(x, n, d_in).t(),
        View::full(dy, n, d_out),
        T::one(),
        ViewMut::full(dw, d_in, d_out),
    );
    for row in dy.chunks_exact(d_out) {
        for (acc, &v) in db.iter_mut().zip(row) {
            *acc += v;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![T::zero(); n * d_in];
        gemm(
            T::one(),
            View::full(dy, n, d_out),
            View::full(w, d_in, d_out).t(),
            T::zero(),
            ViewMut::full(&mut dx, n, d_in),
        );
        dx
    })
}

pub const LN_EPS: f64 = 1e-5;

/// Row-wise layer norm. Returns `(y, xhat, rstd)`.
pub fn layer_norm<T: Real>(x: &[T], d: usize, gain: &[T], bias: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = x.len() / d;
    let inv_d = T::one() / T::from_usize(d).unwrap();
    let eps = T::lit(LN_EPS);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); n];
    for (r, row) in x.chunks_exact(d).enumerate() {
        let mean = sum_lanes(row) * inv_d;
        let xh = &mut xhat[r * d..(r + 1) * d];
        for (h, &v) in xh.iter_mut().zip(row) {
            *h = v - mean;
        }
        let var = dot_lanes(xh, xh) * inv_d;
        let s = T::one() / (var + eps).sqrt();
        rstd[r] = s;
        let yr = &mut y[r * d..(r + 1) * d];
        for j in 0..d {
            xh[j] *= s;
            yr[j] = xh[j] * gain[j] + bias[j];
        }
    }
    (y, xhat, rstd)
}

/// Backward of [`layer_norm`]: accumulates gain/bias gradients and returns
/// the input gradient.
pub fn layer_norm_backward<T: Real>(
    dy: &[T],
    xhat: &[T],
    rstd: &[T],
    gain: &[T],
    d: usize,
    dgain: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    let inv_d = T::one() / T::from_usize(d).unwrap();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dxhat = vec![T::zero(); d];
    for (r, (dyr, xh)) in dy.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
        for j in 0..d {
            dgain[j] += dyr[j] * xh[j];
            dbias[j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
        }
        let mean_dxhat = sum_lanes(&dxhat) * inv_d;
        let mean_dxhat_xhat = dot_lanes(&dxhat, xh) * inv_d;
        let out = &mut dx[r * d..(r + 1) * d];
        for j in 0..d {
            out[j] = rstd[r] * (dxhat[j] - mean_dxhat - xh[j] * mean_dxhat_xhat);
        }
    }
    dx
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU, written as `x * sigmoid(2y)` (equal to
/// `x/2 * (1 + tanh y)`) because `exp` is much cheaper than `tanh`.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let y2 = T::lit(2.0 * GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    x / (T::one() + (-y2).exp_fast())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let a = T::lit(GELU_A);
    let y2 = T::lit(2.0 * GELU_C) * (x + a * x * x * x);
    let s = T::one() / (T::one() + (-y2).exp_fast());
    s + x * s * (T::one() - s) * T::lit(2.0 * GELU_C) * (T::one() + T::lit(3.0) * a * x * x)
}

// Reductions below use eight interleaved accumulators so the compiler can
// vectorize them; the summation order is fixed, so results stay
// deterministic.

#[inline]
pub fn sum_lanes<T: Real>(v: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = v.chunks_exact(8);
    let mut tail = T::zero();
    for &x in chunks.remainder() {
        tail += x;
    }
    for c in chunks {
        for j in 0..8 {
            acc[j] += c[j];
        }
    }
    acc.iter().fold(tail, |s, &a| s + a)
}

#[inline]
pub fn dot_lanes<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let mut tail = T::zero();
    for (&x, &y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    acc.iter().fold(tail, |s, &a| s + a)
}

#[inline]
fn max_lanes<T: Real>(v: &[T]) -> T {
    let mut acc = [T::neg_infinity(); 8];
    let chunks = v.chunks_exact(8);
    let mut m = T::neg_infinity();
    for &x in chunks.remainder() {
        m = if x > m { x } else { m };
    }
    for c in chunks {
        for j in 0..8 {
            acc[j] = if c[j] > acc[j] { c[j] } else { acc[j] };
        }
    }
    acc.iter().fold(m, |m, &a| if a > m { a } else { m })
}

/// In-place softmax of each `width`-long row, with max subtraction.
pub fn softmax_rows<T: Real>(data: &mut [T], width: usize) {
    for row in data.chunks_exact_mut(width) {
        let max = max_lanes(row);
        for v in row.iter_mut() {
            *v = (*v - max).exp_fast();
        }
        let inv = T::one() / sum_lanes(row);
        for v in row.iter_mut() {
            *v *= inv;
        }
    }
}

pub fn all_finite<T: Real>(data: &[T]) -> bool {
    data.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_with_transposes() {
        // A = [[1,2,3],[4,5,6]] (2x3), B = [[1,0],[0,1],[1,1]] (3x2)
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0f64; 4];
        gemm(
            1.0,
            View::full(&a, 2, 3),
            View::full(&b, 3, 2),
            0.0,
            ViewMut::full(&mut c, 2, 2),
        );
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);

        // A^T A (3x3) via a transposed view.
        let mut g = [0.0f64; 9];
        gemm(
            1.0,
            View::full(&a, 2, 3).t(),
            View::full(&a, 2, 3),
            0.0,
            ViewMut::full(&mut g, 3, 3),
        );
        assert_eq!(g, [17.0, 22.0, 27.0, 22.0, 29.0, 36.0, 27.0, 36.0, 45.0]);

        // Sub-block with leading dimension: columns 1..3 of A.
        let mut s = [1.0f64; 4];
        let sub = View::new(&a, 1, 2, 2, 3);
        let id = [1.0, 0.0, 0.0, 1.0];
        gemm(2.0, sub, View::full(&id, 2, 2), 1.0, ViewMut::full(&mut s, 2, 2));
        assert_eq!(s, [5.0, 7.0, 11.0, 13.0]);
    }

    #[test]
    fn fast_exp_is_accurate() {
        let mut worst = 0.0f64;
        let mut x = -87.0f32;
        while x < 88.0 {
            let exact = (x as f64).exp();
            worst = worst.max(((expf_poly(x) as f64) - exact).abs() / exact);
            x += 0.013;
        }
        assert!(worst < 5e-7, "relative error {worst:e}");
        assert_eq!(expf_poly(0.0), 1.0);
        assert_eq!(expf_poly(-1000.0), expf_poly(-87.0));
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for &x in &[-3.0f64, -1.0, -0.1, 0.0, 0.3, 2.0, 5.0] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut v = vec![1000.0f64, 1001.0, 999.0, -5.0, 0.0, 5.0];
        softmax_rows(&mut v, 3);
        for row in v.chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(v[1] > v[0] && v[0] > v[2]);
    }
}
