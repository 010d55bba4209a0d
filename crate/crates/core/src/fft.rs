//! Iterative radix-2 FFT and a packed real-input transform built on it.
//!
//! Twiddles are computed once per plan in `f64` and rounded to the working
//! precision, so an `f32` plan carries no accumulated twiddle error.

use std::fmt::Debug;

use num_complex::Complex;
use num_traits::{Float, FloatConst};

/// Working precision of a transform.
pub trait Real: Float + FloatConst + Default + Debug + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f64 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    #[inline]
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

/// Complex FFT of a fixed power-of-two size.
#[derive(Debug, Clone)]
pub struct FftPlan<T> {
    size: usize,
    /// `exp(-2 pi i k / size)` for `k < size / 2`.
    twiddles: Vec<Complex<T>>,
    /// Bit-reversal permutation as swap pairs `(i, j)` with `i < j`.
    swaps: Vec<(u32, u32)>,
}

impl<T: Real> FftPlan<T> {
    pub fn new(size: usize) -> Self {
        assert!(size.is_power_of_two(), "FFT size must be a power of two, got {size}");
        let half = size / 2;
        let twiddles = (0..half)
            .map(|k| {
                let a = -2.0 * std::f64::consts::PI * k as f64 / size as f64;
                Complex::new(T::from_f64(a.cos()), T::from_f64(a.sin()))
            })
            .collect();
        let bits = size.trailing_zeros();
        let mut swaps = Vec::new();
        if size > 1 {
            for i in 0..size {
                let j = i.reverse_bits() >> (usize::BITS - bits);
                if i < j {
                    swaps.push((i as u32, j as u32));
                }
            }
        }
        Self { size, twiddles, swaps }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// In-place forward transform `X[k] = sum_n x[n] exp(-2 pi i k n / N)`.
    pub fn forward(&self, data: &mut [Complex<T>]) {
        assert_eq!(data.len(), self.size);
        for &(i, j) in &self.swaps {
            data.swap(i as usize, j as usize);
        }
        let mut len = 2;
        while len <= self.size {
            let half = len / 2;
            let stride = self.size / len;
            for chunk in data.chunks_exact_mut(len) {
                let (lo, hi) = chunk.split_at_mut(half);
                for k in 0..half {
                    let w = self.twiddles[k * stride];
                    let t = hi[k] * w;
                    hi[k] = lo[k] - t;
                    lo[k] = lo[k] + t;
                }
            }
            len <<= 1;
        }
    }

    /// In-place inverse transform including the `1/N` factor.
    pub fn inverse(&self, data: &mut [Complex<T>]) {
        for v in data.iter_mut() {
            *v = v.conj();
        }
        self.forward(data);
        let scale = T::one() / T::from_f64(self.size as f64);
        for v in data.iter_mut() {
            *v = v.conj() * scale;
        }
    }
}

/// Real-input FFT of size `M` computed with one complex FFT of size `M/2`.
///
/// The spectrum is stored as the `M/2 + 1` non-redundant bins.
#[derive(Debug, Clone)]
pub struct RealFft<T> {
    size: usize,
    half: FftPlan<T>,
    /// `exp(-2 pi i k / M)` for `k <= M / 2`.
    twiddles: Vec<Complex<T>>,
}

impl<T: Real> RealFft<T> {
    pub fn new(size: usize) -> Self {
        assert!(size >= 2 && size.is_power_of_two(), "real FFT size must be a power of two >= 2");
        let twiddles = (0..=size / 2)
            .map(|k| {
                let a = -2.0 * std::f64::consts::PI * k as f64 / size as f64;
                Complex::new(T::from_f64(a.cos()), T::from_f64(a.sin()))
            })
            .collect();
        Self {
            size,
            half: FftPlan::new(size / 2),
            twiddles,
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn bins(&self) -> usize {
        self.size / 2 + 1
    }

    /// Spectrum of `input` zero-padded to the transform size.
    pub fn forward(&self, input: &[T]) -> Vec<Complex<T>> {
        assert!(input.len() <= self.size, "input longer than transform");
        let h = self.size / 2;
        let mut z = vec![Complex::new(T::zero(), T::zero()); h];
        for (k, zk) in z.iter_mut().enumerate() {
            let re = input.get(2 * k).copied().unwrap_or_else(T::zero);
            let im = input.get(2 * k + 1).copied().unwrap_or_else(T::zero);
            *zk = Complex::new(re, im);
        }
        self.half.forward(&mut z);
        let half = T::from_f64(0.5);
        let mut out = Vec::with_capacity(h + 1);
        for k in 0..=h {
            let zk = z[k % h];
            let zc = z[(h - k) % h].conj();
            let even = (zk + zc) * half;
            // (zk - zc) / (2i)
            let d = zk - zc;
            let odd = Complex::new(d.im, -d.re) * half;
            out.push(even + self.twiddles[k] * odd);
        }
        out
    }

    /// First `out_len` samples of the inverse transform of a half spectrum.
    pub fn inverse(&self, spectrum: &[Complex<T>], out_len: usize) -> Vec<T> {
        let h = self.size / 2;
        assert_eq!(spectrum.len(), h + 1, "spectrum must hold M/2 + 1 bins");
        assert!(out_len <= self.size);
        let half = T::from_f64(0.5);
        let mut z = Vec::with_capacity(h);
        for k in 0..h {
            let xk = spectrum[k];
            let xc = spectrum[h - k].conj();
            let even = (xk + xc) * half;
            let odd = (xk - xc) * half * self.twiddles[k].conj();
            // even + i * odd
            z.push(Complex::new(even.re - odd.im, even.im + odd.re));
        }
        self.half.inverse(&mut z);
        let mut out = Vec::with_capacity(out_len);
        for v in z.iter() {
            if out.len() < out_len {
                out.push(v.re);
            }
            if out.len() < out_len {
                out.push(v.im);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_rng;
    use num_complex::Complex64;

    fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
        let n = x.len();
        (0..n)
            .map(|k| {
                x.iter()
                    .enumerate()
                    .map(|(t, v)| {
                        // Reduce the angle index exactly before converting.
                        let a = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                        v * Complex64::new(a.cos(), a.sin())
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn complex_fft_matches_naive_dft() {
        let mut rng = make_rng(1);
        for bits in 0..=12 {
            let n = 1usize << bits;
            let x: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.normal(), rng.normal())).collect();
            let expect = naive_dft(&x);
            let mut got = x.clone();
            FftPlan::<f64>::new(n).forward(&mut got);
            let err = got.iter().zip(&expect).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "n={n} err={err}");
        }
    }

    #[test]
    fn inverse_round_trips() {
        let mut rng = make_rng(2);
        let n = 512;
        let x: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.normal(), rng.normal())).collect();
        let plan = FftPlan::<f64>::new(n);
        let mut y = x.clone();
        plan.forward(&mut y);
        plan.inverse(&mut y);
        let err = y.iter().zip(&x).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-13);
    }

    #[test]
    fn real_fft_matches_naive_dft() {
        let mut rng = make_rng(3);
        for bits in 1..=12 {
            let n = 1usize << bits;
            let used = n - n / 3;
            let x: Vec<f64> = (0..used).map(|_| rng.normal()).collect();
            let padded: Vec<Complex64> = (0..n)
                .map(|t| Complex64::new(x.get(t).copied().unwrap_or(0.0), 0.0))
                .collect();
            let expect = naive_dft(&padded);
            let rfft = RealFft::<f64>::new(n);
            let got = rfft.forward(&x);
            assert_eq!(got.len(), n / 2 + 1);
            let err = got.iter().zip(&expect).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "n={n} err={err}");
            let back = rfft.inverse(&got, used);
            let err = back.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "n={n} inverse err={err}");
        }
    }

    #[test]
    fn f32_plan_is_close_to_f64() {
        let mut rng = make_rng(4);
        let n = 4096;
        let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let a = RealFft::<f64>::new(n).forward(&x);
        let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let b = RealFft::<f32>::new(n).forward(&xf);
        let err = a
            .iter()
            .zip(&b)
            .map(|(p, q)| (p - Complex64::new(q.re as f64, q.im as f64)).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }
}
