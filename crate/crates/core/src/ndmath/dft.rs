//! Unnormalized discrete Fourier transform.
//!
//! Lengths up to 64, and any length that is not a power of two, use direct
//! summation over a precomputed twiddle table. Longer power-of-two lengths use
//! an iterative radix-2 transform.

use std::f64::consts::PI;

/// Split real/imaginary storage for a complex sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVec {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVec {
    pub fn new(re: Vec<f64>, im: Vec<f64>) -> Self {
        assert_eq!(re.len(), im.len(), "ComplexVec: re/im length mismatch");
        Self { re, im }
    }

    pub fn zeros(n: usize) -> Self {
        Self { re: vec![0.0; n], im: vec![0.0; n] }
    }

    pub fn from_real(x: &[f64]) -> Self {
        Self { re: x.to_vec(), im: vec![0.0; x.len()] }
    }

    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    /// Complex modulus of entry `k`.
    pub fn abs(&self, k: usize) -> f64 {
        self.re[k].hypot(self.im[k])
    }
}

const DIRECT_MAX: usize = 64;

/// Precomputed transform of a fixed length.
#[derive(Debug, Clone)]
pub struct DftPlan {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl DftPlan {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "DftPlan: length must be at least 1");
        let (cos, sin) = (0..n)
            .map(|j| {
                let theta = 2.0 * PI * j as f64 / n as f64;
                (theta.cos(), theta.sin())
            })
            .unzip();
        Self { n, cos, sin }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn uses_radix2(&self) -> bool {
        self.n > DIRECT_MAX && self.n.is_power_of_two()
    }

    /// Forward transform of a real sequence, `X_k = Σ_t x_t e^{-2πi kt/n}`.
    pub fn forward_real(&self, x: &[f64]) -> ComplexVec {
        assert_eq!(x.len(), self.n, "dft: input length {} for plan of {}", x.len(), self.n);
        if self.uses_radix2() {
            let mut buf = ComplexVec::from_real(x);
            self.radix2_in_place(&mut buf);
            return buf;
        }
        let n = self.n;
        let mut out = ComplexVec::zeros(n);
        for k in 0..n {
            let (mut re, mut im) = (0.0, 0.0);
            let mut j = 0;
            for &v in x {
                re += v * self.cos[j];
                im -= v * self.sin[j];
                j += k;
                if j >= n {
                    j -= n;
                }
            }
            out.re[k] = re;
            out.im[k] = im;
        }
        out
    }

    /// Forward transform of a complex sequence.
    pub fn forward(&self, x: &ComplexVec) -> ComplexVec {
        assert_eq!(x.len(), self.n, "dft: input length {} for plan of {}", x.len(), self.n);
        if self.uses_radix2() {
            let mut buf = x.clone();
            self.radix2_in_place(&mut buf);
            return buf;
        }
        let n = self.n;
        let mut out = ComplexVec::zeros(n);
        for k in 0..n {
            let (mut re, mut im) = (0.0, 0.0);
            let mut j = 0;
            for t in 0..n {
                let (c, s) = (self.cos[j], self.sin[j]);
                re += x.re[t] * c + x.im[t] * s;
                im += x.im[t] * c - x.re[t] * s;
                j += k;
                if j >= n {
                    j -= n;
                }
            }
            out.re[k] = re;
            out.im[k] = im;
        }
        out
    }

    /// Vector-Jacobian product of `forward_real`: given the gradient of a
    /// scalar with respect to `Re X` and `Im X`, returns its gradient with
    /// respect to the real input. Equals `Re(DFT(g_re - i g_im))`.
    pub fn backward_real(&self, grad: &ComplexVec) -> Vec<f64> {
        let conj = ComplexVec::new(grad.re.clone(), grad.im.iter().map(|v| -v).collect());
        self.forward(&conj).re
    }

    fn radix2_in_place(&self, buf: &mut ComplexVec) {
        let n = self.n;
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.re.swap(i, j);
                buf.im.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let (wr, wi) = (self.cos[k * stride], -self.sin[k * stride]);
                    let (a, b) = (start + k, start + k + half);
                    let tr = buf.re[b] * wr - buf.im[b] * wi;
                    let ti = buf.re[b] * wi + buf.im[b] * wr;
                    buf.re[b] = buf.re[a] - tr;
                    buf.im[b] = buf.im[a] - ti;
                    buf.re[a] += tr;
                    buf.im[a] += ti;
                }
            }
            size *= 2;
        }
    }
}

/// Full unnormalized DFT of a real sequence.
pub fn dft(x: &[f64]) -> ComplexVec {
    DftPlan::new(x.len()).forward_real(x)
}
