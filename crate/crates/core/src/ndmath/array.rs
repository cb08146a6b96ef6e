use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Array2 {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Array2 {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "Array2::new: {} values for a {rows}x{cols} array",
            data.len()
        );
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self { rows, cols, data: vec![value; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds an array from nested rows; all rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "Array2::from_rows: ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn row_vector(values: &[f64]) -> Self {
        Self::new(1, values.len(), values.to_vec())
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { 1.0 } else { 0.0 })
    }

    /// Entries drawn from `N(0, std^2)`.
    pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Self {
        use rand_distr::{Distribution, StandardNormal};
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies the rows `start..end` into a new array.
    pub fn slice_rows(&self, start: usize, end: usize) -> Array2 {
        assert!(start <= end && end <= self.rows, "slice_rows out of range");
        Array2::new(end - start, self.cols, self.data[start * self.cols..end * self.cols].to_vec())
    }

    pub fn transpose(&self) -> Array2 {
        Array2::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Array2 {
        Array2 { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Array2) -> f64 {
        assert_eq!(self.shape(), other.shape(), "max_abs_diff: shape mismatch");
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `self += other`, shapes must match.
    pub fn add_assign(&mut self, other: &Array2) {
        assert_eq!(self.shape(), other.shape(), "add_assign: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&self, k: f64) -> Array2 {
        self.map(|x| x * k)
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Array2) -> Array2 {
        assert_eq!(
            self.cols, other.rows,
            "matmul: {}x{} · {}x{} dimension mismatch",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Array2::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            &self.data,
            (self.cols as isize, 1),
            &other.data,
            (other.cols as isize, 1),
            &mut out.data,
        );
        out
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_matmul(&self, other: &Array2) -> Array2 {
        assert_eq!(
            self.rows, other.rows,
            "t_matmul: ({}x{})ᵀ · {}x{} dimension mismatch",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Array2::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            &self.data,
            (1, self.cols as isize),
            &other.data,
            (other.cols as isize, 1),
            &mut out.data,
        );
        out
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: &Array2) -> Array2 {
        assert_eq!(
            self.cols, other.cols,
            "matmul_t: {}x{} · ({}x{})ᵀ dimension mismatch",
            self.rows, self.cols, other.rows, other.cols
        );
        let mut out = Array2::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            &self.data,
            (self.cols as isize, 1),
            &other.data,
            (1, other.cols as isize),
            &mut out.data,
        );
        out
    }

    /// Column sums as a `1 x cols` row.
    pub fn column_sums(&self) -> Array2 {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        Array2::new(1, self.cols, out)
    }

    /// Upper bound on the largest singular value, tight to about 1e-5
    /// relative. Uses `σ² ≤ ‖G^k‖_F^{1/k}` for the Gram matrix `G` with
    /// `k = 2^20`, reached by repeated normalized squaring, then inflated by
    /// 1e-10 relative to absorb rounding.
    pub fn spectral_norm(&self) -> f64 {
        let mut g = if self.rows <= self.cols { self.matmul_t(self) } else { self.t_matmul(self) };
        let mut log_c = 0.0;
        const SQUARINGS: i32 = 20;
        for i in 0..=SQUARINGS {
            if i > 0 {
                g = g.matmul(&g);
                log_c *= 2.0;
            }
            let f = g.frobenius_norm();
            if f == 0.0 {
                return 0.0;
            }
            g = g.scale(1.0 / f);
            log_c += f.ln();
        }
        (log_c / 2f64.powi(SQUARINGS + 1)).exp() * (1.0 + 1e-10)
    }
}

impl fmt::Debug for Array2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Array2({}x{}) ", self.rows, self.cols)?;
        f.debug_list().entries((0..self.rows).map(|r| self.row(r))).finish()
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    // SAFETY: the strides describe in-bounds views of `a` (m x k), `b` (k x n)
    // and `c` (m x n, row-major); callers assert the dimensions.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product; panics on a dimension mismatch.
pub fn matmul(a: &Array2, b: &Array2) -> Array2 {
    a.matmul(b)
}

/// Element-wise add or multiply. `b` may be a `1 x n` row that is broadcast
/// over every row of an `m x n` `a`.
pub fn elementwise(a: &Array2, b: &Array2, kind: ElementwiseKind) -> Array2 {
    let op: fn(f64, f64) -> f64 = match kind {
        ElementwiseKind::Add => |x, y| x + y,
        ElementwiseKind::Mul => |x, y| x * y,
    };
    if a.shape() == b.shape() {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| op(x, y)).collect();
        return Array2::new(a.rows, a.cols, data);
    }
    assert!(
        b.rows == 1 && b.cols == a.cols,
        "elementwise: cannot broadcast {}x{} onto {}x{}",
        b.rows,
        b.cols,
        a.rows,
        a.cols
    );
    let mut out = Vec::with_capacity(a.len());
    for r in 0..a.rows {
        out.extend(a.row(r).iter().zip(&b.data).map(|(&x, &y)| op(x, y)));
    }
    Array2::new(a.rows, a.cols, out)
}

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Exact GeLU, `x * Φ(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

#[inline]
pub fn gelu_derivative(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

/// Largest `|d gelu / dx|` over the real line, attained at `x = √2`.
pub const GELU_LIPSCHITZ: f64 = 1.128_904_145_185_154_8;

pub fn activation(a: &Array2, kind: Activation) -> Array2 {
    match kind {
        Activation::Relu => a.map(|x| x.max(0.0)),
        Activation::Gelu => a.map(gelu),
    }
}

/// Inverted-dropout keep mask: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect()
}

pub fn dropout<R: Rng + ?Sized>(a: &Array2, rate: f64, mode: Mode, rng: &mut R) -> Result<Array2> {
    check_dropout_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(a.clone());
    }
    let mask = dropout_mask(a.len(), rate, rng);
    let data = a.data.iter().zip(&mask).map(|(x, m)| x * m).collect();
    Ok(Array2::new(a.rows, a.cols, data))
}

pub(crate) fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triple_loop(a: &Array2, b: &Array2) -> Array2 {
        Array2::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    #[test]
    fn identity_matmul() {
        let m = Array2::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(Array2::identity(2).matmul(&m), m);
    }

    #[test]
    fn row_times_column() {
        let a = Array2::from_rows(&[[1.0, 2.0]]);
        let b = Array2::from_rows(&[[3.0], [4.0]]);
        assert_eq!(a.matmul(&b), Array2::from_rows(&[[11.0]]));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Array2::random_normal(3, 4, 1.0, &mut rng);
        let b = Array2::random_normal(4, 2, 1.0, &mut rng);
        assert!(a.matmul(&b).max_abs_diff(&triple_loop(&a, &b)) < 1e-12);
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Array2::random_normal(5, 3, 1.0, &mut rng);
        let b = Array2::random_normal(5, 4, 1.0, &mut rng);
        let c = Array2::random_normal(6, 3, 1.0, &mut rng);
        assert!(a.t_matmul(&b).max_abs_diff(&triple_loop(&a.transpose(), &b)) < 1e-12);
        assert!(a.matmul_t(&c).max_abs_diff(&triple_loop(&a, &c.transpose())) < 1e-12);
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn matmul_rejects_mismatch() {
        Array2::zeros(2, 3).matmul(&Array2::zeros(2, 3));
    }

    #[test]
    fn elementwise_cases() {
        let z = elementwise(
            &Array2::from_rows(&[[2.0, 3.0]]),
            &Array2::from_rows(&[[0.0, 0.0]]),
            ElementwiseKind::Mul,
        );
        assert_eq!(z, Array2::from_rows(&[[0.0, 0.0]]));
        let b = elementwise(
            &Array2::from_rows(&[[1.0, 1.0], [2.0, 2.0]]),
            &Array2::from_rows(&[[10.0, 20.0]]),
            ElementwiseKind::Add,
        );
        assert_eq!(b, Array2::from_rows(&[[11.0, 21.0], [12.0, 22.0]]));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::random_normal(4, 4, 1.0, &mut rng);
        let y = Array2::random_normal(4, 4, 1.0, &mut rng);
        let m = elementwise(&x, &y, ElementwiseKind::Mul);
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(m.get(r, c), x.get(r, c) * y.get(r, c));
            }
        }
    }

    #[test]
    #[should_panic(expected = "cannot broadcast")]
    fn elementwise_rejects_bad_broadcast() {
        elementwise(&Array2::zeros(2, 3), &Array2::zeros(2, 2), ElementwiseKind::Add);
    }

    /// erf via its Maclaurin series, independent of libm.
    fn erf_series(x: f64) -> f64 {
        let mut term = x;
        let mut sum = x;
        for n in 1..200 {
            term *= -x * x / n as f64;
            sum += term / (2 * n + 1) as f64;
        }
        2.0 / std::f64::consts::PI.sqrt() * sum
    }

    #[test]
    fn activations() {
        let r = activation(&Array2::from_rows(&[[-1.0, 0.0, 2.0]]), Activation::Relu);
        assert_eq!(r, Array2::from_rows(&[[0.0, 0.0, 2.0]]));
        assert_eq!(gelu(0.0), 0.0);
        let oracle = 1.0 * 0.5 * (1.0 + erf_series(1.0 / 2f64.sqrt()));
        assert!((gelu(1.0) - oracle).abs() < 1e-14);
        assert!((gelu(1.0) - 0.841345).abs() < 1e-6);
    }

    #[test]
    fn gelu_lipschitz_constant_is_the_derivative_peak() {
        let s = std::f64::consts::SQRT_2;
        assert!((gelu_derivative(s) - GELU_LIPSCHITZ).abs() < 1e-12);
        let peak = (-4000..4000)
            .map(|i| gelu_derivative(i as f64 * 1e-3).abs())
            .fold(0.0, f64::max);
        assert!(peak <= GELU_LIPSCHITZ + 1e-12);
    }

    #[test]
    fn dropout_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = Array2::random_normal(3, 5, 1.0, &mut rng);
        assert_eq!(dropout(&a, 0.7, Mode::Eval, &mut rng).unwrap(), a);
        assert_eq!(dropout(&a, 0.0, Mode::Train, &mut rng).unwrap(), a);
        assert!(dropout(&a, 1.0, Mode::Train, &mut rng).is_err());

        let ones = Array2::filled(1, 100_000, 1.0);
        let out = dropout(&ones, 0.5, Mode::Train, &mut rng).unwrap();
        assert!((out.mean() - 1.0).abs() < 0.01, "mean {}", out.mean());
    }

    #[test]
    fn dropout_is_seed_deterministic() {
        let a = Array2::filled(4, 4, 2.0);
        let x = dropout(&a, 0.3, Mode::Train, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let y = dropout(&a, 0.3, Mode::Train, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn spectral_norm_bounds() {
        let d = Array2::from_rows(&[[3.0, 0.0, 0.0], [0.0, -5.0, 0.0]]);
        assert!((d.spectral_norm() - 5.0).abs() < 1e-4);
        assert!(d.spectral_norm() >= 5.0);
        assert_eq!(Array2::zeros(3, 2).spectral_norm(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Array2::random_normal(12, 7, 1.0, &mut rng);
        // power iteration from below as the oracle
        let mut v = Array2::filled(7, 1, 1.0);
        let mut est = 0.0;
        for _ in 0..2000 {
            let w = a.t_matmul(&a.matmul(&v));
            let n = w.frobenius_norm();
            v = w.scale(1.0 / n);
            est = a.matmul(&v).frobenius_norm();
        }
        let bound = a.spectral_norm();
        assert!(bound >= est && bound <= est * (1.0 + 1e-4), "{bound} vs {est}");
    }
}
