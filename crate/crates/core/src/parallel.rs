//! Time-parallel D-RF forward pass.
//!
//! Because the branch bank is diagonal and time-invariant, unrolling the
//! recurrence gives a causal convolution
//!
//! ```text
//! Z_i[t] = sum_{k=0..t} K_i[k] I[t-k],   K_i[k] = gamma_i exp(k delta (-1/tau_i + i omega_i))
//! ```
//!
//! evaluated with zero-padded FFTs of size `M >= 2L - 1`, so there is no
//! circular wraparound. The adaptive threshold only depends on pre-spikes
//! `P[t] = [H[t] >= V_pre]`, which are known for every `t` once `H` is, so it
//! is a short causal convolution as well.

use std::sync::{Arc, OnceLock};

use num_complex::{Complex, Complex64};

use crate::config::Precision;
use crate::dynamics::{check_forward_shapes, heaviside, window_sum, DendriticParams, DrfTrace, SomaParams};
use crate::error::{Error, Result};
use crate::fft::RealFft;
use crate::sequence::{ComplexStateSequence, RealSequence, SpikeTrain, TimeGrid};

/// Taps are recomputed from the closed form this often to bound drift.
pub const RENORM_INTERVAL: usize = 1024;

/// FFT plan for causal convolutions of length-`L` signals.
#[derive(Debug, Clone)]
pub struct TransformPlan {
    len: usize,
    size: usize,
    precision: Precision,
    fft64: Arc<RealFft<f64>>,
    fft32: Option<Arc<RealFft<f32>>>,
}

impl TransformPlan {
    pub fn new(len: usize) -> Self {
        Self::with_precision(len, Precision::F64)
    }

    pub fn with_precision(len: usize, precision: Precision) -> Self {
        assert!(len >= 1);
        let size = (2 * len - 1).next_power_of_two().max(2);
        let fft32 = match precision {
            Precision::F32 => Some(Arc::new(RealFft::new(size))),
            Precision::F64 => None,
        };
        Self {
            len,
            size,
            precision,
            fft64: Arc::new(RealFft::new(size)),
            fft32,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Transform size `M`.
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Half spectrum of a signal of at most `L` samples.
    pub fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        debug_assert!(x.len() <= self.len);
        match &self.fft32 {
            None => self.fft64.forward(x),
            Some(fft) => {
                let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
                fft.forward(&xf)
                    .into_iter()
                    .map(|c| Complex64::new(c.re as f64, c.im as f64))
                    .collect()
            }
        }
    }

    /// First `L` samples of an inverse transform.
    pub fn inverse(&self, spectrum: &[Complex64]) -> Vec<f64> {
        match &self.fft32 {
            None => self.fft64.inverse(spectrum, self.len),
            Some(fft) => {
                let s: Vec<Complex<f32>> = spectrum
                    .iter()
                    .map(|c| Complex::new(c.re as f32, c.im as f32))
                    .collect();
                fft.inverse(&s, self.len).into_iter().map(f64::from).collect()
            }
        }
    }

    /// `y[t] = sum_{k<=t} k[k] x[t-k]` for `t < L`, from both spectra.
    pub fn convolve(&self, x_spec: &[Complex64], k_spec: &[Complex64]) -> Vec<f64> {
        let prod: Vec<Complex64> = x_spec.iter().zip(k_spec).map(|(a, b)| a * b).collect();
        self.inverse(&prod)
    }

    /// `r[k] = sum_t g[t] x[t-k]` for `k < L`, from both spectra.
    pub fn correlate(&self, g_spec: &[Complex64], x_spec: &[Complex64]) -> Vec<f64> {
        let prod: Vec<Complex64> = g_spec.iter().zip(x_spec).map(|(a, b)| a * b.conj()).collect();
        self.inverse(&prod)
    }
}

/// Spectra of the real and imaginary tap planes of every branch.
#[derive(Debug)]
pub struct KernelSpectra {
    size: usize,
    precision: Precision,
    pub re: Vec<Vec<Complex64>>,
    pub im: Vec<Vec<Complex64>>,
}

/// Materialized branch kernels `K_i[k]` for `k < L`.
#[derive(Debug)]
pub struct ResonatorKernel {
    len: usize,
    branches: usize,
    gamma: Vec<f64>,
    /// `exp(k delta (-1/tau_i + i omega_i))`, branch-major.
    unit_re: Vec<f64>,
    unit_im: Vec<f64>,
    spectra: OnceLock<Arc<KernelSpectra>>,
}

impl ResonatorKernel {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn branches(&self) -> usize {
        self.branches
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// `K_i[k]`.
    pub fn tap(&self, i: usize, k: usize) -> Complex64 {
        let o = i * self.len + k;
        Complex64::new(self.unit_re[o], self.unit_im[o]) * self.gamma[i]
    }

    /// `K_i[k] / gamma_i`, well defined even when `gamma_i = 0`.
    pub fn unit_re(&self, i: usize) -> &[f64] {
        &self.unit_re[i * self.len..(i + 1) * self.len]
    }

    pub fn unit_im(&self, i: usize) -> &[f64] {
        &self.unit_im[i * self.len..(i + 1) * self.len]
    }

    pub fn taps_re(&self, i: usize) -> Vec<f64> {
        self.unit_re(i).iter().map(|u| u * self.gamma[i]).collect()
    }

    pub fn taps_im(&self, i: usize) -> Vec<f64> {
        self.unit_im(i).iter().map(|u| u * self.gamma[i]).collect()
    }

    fn compute_spectra(&self, plan: &TransformPlan) -> KernelSpectra {
        let (re, im) = (0..self.branches)
            .map(|i| (plan.spectrum(&self.taps_re(i)), plan.spectrum(&self.taps_im(i))))
            .unzip();
        KernelSpectra {
            size: plan.size(),
            precision: plan.precision(),
            re,
            im,
        }
    }

    /// Tap spectra at the plan's transform size, cached on first use.
    pub fn spectra(&self, plan: &TransformPlan) -> Arc<KernelSpectra> {
        let cached = self.spectra.get_or_init(|| Arc::new(self.compute_spectra(plan)));
        if cached.size == plan.size() && cached.precision == plan.precision() {
            cached.clone()
        } else {
            Arc::new(self.compute_spectra(plan))
        }
    }
}

/// Fills `re`/`im` with `exp(k * rate)` for `k < re.len()`, by repeated
/// multiplication re-anchored to the closed form every [`RENORM_INTERVAL`] taps.
/// `exp(k * rate)` with the rounding error of `k * rate.im` folded back in,
/// which matters once the phase reaches thousands of radians.
pub(crate) fn exp_at(rate: Complex64, k: f64) -> Complex64 {
    let phase = k * rate.im;
    let err = k.mul_add(rate.im, -phase);
    let (s, c) = phase.sin_cos();
    Complex64::new(c - s * err, s + c * err) * (k * rate.re).exp()
}

pub(crate) fn fill_unit_taps(rate: Complex64, re: &mut [f64], im: &mut [f64]) {
    let step = rate.exp();
    let mut u = Complex64::new(1.0, 0.0);
    for k in 0..re.len() {
        if k % RENORM_INTERVAL == 0 {
            u = exp_at(rate, k as f64);
        }
        re[k] = u.re;
        im[k] = u.im;
        u *= step;
    }
}

pub fn build_kernel(p: &DendriticParams, grid: &TimeGrid) -> ResonatorKernel {
    let len = grid.len();
    let n = p.n();
    let mut unit_re = vec![0.0; n * len];
    let mut unit_im = vec![0.0; n * len];
    for i in 0..n {
        fill_unit_taps(
            p.rate(i, grid.delta()),
            &mut unit_re[i * len..(i + 1) * len],
            &mut unit_im[i * len..(i + 1) * len],
        );
    }
    ResonatorKernel {
        len,
        branches: n,
        gamma: p.gamma().to_vec(),
        unit_re,
        unit_im,
        spectra: OnceLock::new(),
    }
}

/// Branch states of every input lane by FFT convolution.
pub fn fft_causal_conv(input: &RealSequence, kernel: &ResonatorKernel, plan: &TransformPlan) -> Result<ComplexStateSequence> {
    if input.len() != plan.len() || kernel.len() != plan.len() {
        return Err(Error::Shape(format!(
            "input length {}, kernel length {} and plan length {} must agree",
            input.len(),
            kernel.len(),
            plan.len()
        )));
    }
    let (batch, neurons, _) = input.shape();
    let spectra = kernel.spectra(plan);
    let mut out = ComplexStateSequence::zeros(batch, neurons, kernel.branches(), plan.len())?;
    for b in 0..batch {
        for j in 0..neurons {
            let xs = plan.spectrum(input.lane(b, j));
            for i in 0..kernel.branches() {
                let zr = plan.convolve(&xs, &spectra.re[i]);
                let zi = plan.convolve(&xs, &spectra.im[i]);
                let (re, im) = out.lane_mut(b, j, i);
                re.copy_from_slice(&zr);
                im.copy_from_slice(&zi);
            }
        }
    }
    Ok(out)
}

/// Threshold and spikes of one lane from its soma potential.
pub(crate) fn threshold_lane(h: &[f64], alpha: &[f64], v_pre: f64, v_th: &mut [f64], prespikes: &mut [u8]) {
    for (p, &hv) in prespikes.iter_mut().zip(h) {
        *p = (hv >= v_pre) as u8;
    }
    for t in 0..h.len() {
        v_th[t] = v_pre + window_sum(alpha, |k| if t > k { prespikes[t - 1 - k] } else { 0 });
    }
}

/// Convolutional adaptive threshold: `V_th = V_pre + alpha * P` (causal), `S = [H >= V_th]`.
pub fn parallel_threshold(potential: &RealSequence, s: &SomaParams) -> Result<(RealSequence, SpikeTrain)> {
    let (batch, neurons, len) = potential.shape();
    let mut threshold = RealSequence::zeros(batch, neurons, len)?;
    let mut spikes = SpikeTrain::zeros(batch, neurons, len)?;
    let mut pre = vec![0u8; len];
    for b in 0..batch {
        for j in 0..neurons {
            let h = potential.lane(b, j);
            threshold_lane(h, s.alpha(), s.v_pre(), threshold.lane_mut(b, j), &mut pre);
            let v_th = threshold.lane(b, j);
            let out = spikes.lane_mut(b, j);
            for t in 0..len {
                out[t] = heaviside(h[t] - v_th[t]) as u8;
            }
        }
    }
    Ok((threshold, spikes))
}

pub fn drf_parallel_forward(
    input: &RealSequence,
    p: &DendriticParams,
    s: &SomaParams,
    grid: &TimeGrid,
    plan: &TransformPlan,
) -> Result<DrfTrace> {
    check_forward_shapes(input, p, s, grid)?;
    let kernel = build_kernel(p, grid);
    let states = fft_causal_conv(input, &kernel, plan)?;
    let (batch, neurons, len) = input.shape();
    let mut potential = RealSequence::zeros(batch, neurons, len)?;
    for b in 0..batch {
        for j in 0..neurons {
            let h = potential.lane_mut(b, j);
            for (i, &c) in s.c().iter().enumerate() {
                for (hv, zr) in h.iter_mut().zip(states.lane_re(b, j, i)) {
                    *hv += c * zr;
                }
            }
        }
    }
    let (threshold, spikes) = parallel_threshold(&potential, s)?;
    Ok(DrfTrace {
        states,
        potential,
        threshold,
        spikes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::drf_sequential_forward;
    use crate::rng::make_rng;

    fn params(tau: &[f64], omega: &[f64], gamma: &[f64]) -> DendriticParams {
        DendriticParams::new(tau.to_vec(), omega.to_vec(), gamma.to_vec()).unwrap()
    }

    #[test]
    fn plan_size_avoids_wraparound() {
        for len in [1usize, 2, 3, 64, 257, 1024, 4097] {
            let plan = TransformPlan::new(len);
            assert!(plan.size() >= 2 * len - 1);
            assert!(plan.size().is_power_of_two());
        }
        assert_eq!(TransformPlan::new(1024).size(), 2048);
        assert_eq!(TransformPlan::new(257).size(), 1024);
    }

    #[test]
    fn first_tap_is_gain() {
        let p = params(&[0.5, 3.0], &[1.0, 7.0], &[0.3, -2.0]);
        let k = build_kernel(&p, &TimeGrid::new(0.1, 10).unwrap());
        assert_eq!(k.tap(0, 0), Complex64::new(0.3, 0.0));
        assert_eq!(k.tap(1, 0), Complex64::new(-2.0, 0.0));
    }

    #[test]
    fn real_geometric_taps() {
        let p = params(&[1.0], &[0.0], &[1.0]);
        let k = build_kernel(&p, &TimeGrid::new(1.0, 8).unwrap());
        for t in 0..8 {
            assert!((k.tap(0, t).re - (-(t as f64)).exp()).abs() < 1e-15);
            assert_eq!(k.tap(0, t).im, 0.0);
        }
    }

    #[test]
    fn taps_decay_geometrically() {
        let p = params(&[2.0], &[5.0], &[1.5]);
        let grid = TimeGrid::new(0.01, 3000).unwrap();
        let k = build_kernel(&p, &grid);
        let ratio = (-0.01f64 / 2.0).exp();
        for t in 0..2999 {
            let r = k.tap(0, t + 1).norm() / k.tap(0, t).norm();
            assert!((r - ratio).abs() < 1e-12, "t={t} r={r}");
        }
    }

    #[test]
    fn taps_match_closed_form_at_long_length() {
        let len = 32768;
        let grid = TimeGrid::new(0.01, len).unwrap();
        let p = params(&[30.0, 80.0, 300.0], &[3.0, 50.0, 280.0], &[0.01, 0.02, -0.01]);
        let k = build_kernel(&p, &grid);
        let mut worst = 0.0f64;
        for i in 0..3 {
            let (tau, omega, gamma) = (p.tau()[i], p.omega()[i], p.gamma()[i]);
            let theta = 0.01 * omega;
            for t in 0..len {
                let t = t as f64;
                let mag = gamma * (t * (-0.01 / tau)).exp();
                // Exact product split into head and tail so the oracle's own
                // argument rounding does not dominate.
                let head = t * theta;
                let tail = t.mul_add(theta, -head);
                let expect = Complex64::new(mag * (head.cos() - tail * head.sin()), mag * (head.sin() + tail * head.cos()));
                let t = t as usize;
                worst = worst.max((k.tap(i, t) - expect).norm() / expect.norm());
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }

    fn direct_conv(x: &[f64], k: &ResonatorKernel, i: usize) -> (Vec<f64>, Vec<f64>) {
        let len = x.len();
        let mut re = vec![0.0; len];
        let mut im = vec![0.0; len];
        for t in 0..len {
            for s in 0..=t {
                let tap = k.tap(i, s);
                re[t] += tap.re * x[t - s];
                im[t] += tap.im * x[t - s];
            }
        }
        (re, im)
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let p = params(&[1e-6], &[0.0], &[1.0]);
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let mut rng = make_rng(8);
        let x: Vec<f64> = (0..32).map(|_| rng.normal()).collect();
        let z = fft_causal_conv(
            &RealSequence::from_lane(x.clone()).unwrap(),
            &build_kernel(&p, &grid),
            &TransformPlan::new(32),
        )
        .unwrap();
        for t in 0..32 {
            assert!((z.lane_re(0, 0, 0)[t] - x[t]).abs() < 1e-12);
            assert!(z.lane_im(0, 0, 0)[t].abs() < 1e-12);
        }
    }

    #[test]
    fn fft_conv_matches_quadratic_sum() {
        let mut rng = make_rng(9);
        for len in [3usize, 64, 257, 1024, 4097] {
            let grid = TimeGrid::new(0.05, len).unwrap();
            let p = params(&[0.7, 4.0], &[2.0, 40.0], &[0.05, 0.05]);
            let k = build_kernel(&p, &grid);
            let x: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
            let z = fft_causal_conv(&RealSequence::from_lane(x.clone()).unwrap(), &k, &TransformPlan::new(len)).unwrap();
            for i in 0..2 {
                let (re, im) = direct_conv(&x, &k, i);
                let err = re
                    .iter()
                    .zip(z.lane_re(0, 0, i))
                    .chain(im.iter().zip(z.lane_im(0, 0, i)))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-9, "len={len} err={err}");
            }
        }
    }

    #[test]
    fn mismatched_plan_rejected() {
        let p = params(&[1.0], &[1.0], &[1.0]);
        let k = build_kernel(&p, &TimeGrid::new(1.0, 16).unwrap());
        let x = RealSequence::zeros(1, 1, 16).unwrap();
        assert!(fft_causal_conv(&x, &k, &TransformPlan::new(17)).is_err());
    }

    #[test]
    fn threshold_kernel_readback() {
        let mut h = vec![0.0; 12];
        h[5] = 1.5;
        let s = SomaParams::new(vec![1.0], 1.0, vec![0.3, 0.2, 0.1]).unwrap();
        let (v_th, spikes) = parallel_threshold(&RealSequence::from_lane(h).unwrap(), &s).unwrap();
        let expect = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.3, 1.2, 1.1, 1.0, 1.0, 1.0];
        for (a, b) in v_th.lane(0, 0).iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(spikes.count(), 1);
    }

    #[test]
    fn subthreshold_potential_is_silent() {
        let s = SomaParams::new(vec![1.0], 1.0, vec![0.5, 0.5]).unwrap();
        let h = RealSequence::from_lane(vec![0.99; 20]).unwrap();
        let (v_th, spikes) = parallel_threshold(&h, &s).unwrap();
        assert!(v_th.values().iter().all(|&v| v == 1.0));
        assert_eq!(spikes.count(), 0);
    }

    #[test]
    fn convolutional_threshold_equals_sequential_loop() {
        use crate::dynamics::adaptive_threshold_step;
        let mut rng = make_rng(10);
        for _ in 0..50 {
            let n_a = 1 + rng.below(8);
            let alpha: Vec<f64> = (0..n_a).map(|_| rng.uniform_in(0.01, 0.99)).collect();
            let s = SomaParams::new(vec![1.0], 1.0, alpha).unwrap();
            let h: Vec<f64> = (0..300).map(|_| rng.uniform_in(0.0, 3.0)).collect();
            let (v_th, spikes) = parallel_threshold(&RealSequence::from_lane(h.clone()).unwrap(), &s).unwrap();
            let mut window = vec![0u8; n_a];
            for t in 0..h.len() {
                let expect = adaptive_threshold_step(&window, &s);
                assert_eq!(v_th.lane(0, 0)[t].to_bits(), expect.to_bits());
                assert_eq!(spikes.lane(0, 0)[t], (h[t] >= expect) as u8);
                window.rotate_right(1);
                window[0] = (h[t] >= 1.0) as u8;
            }
        }
    }

    #[test]
    fn parallel_forward_matches_sequential() {
        let mut rng = make_rng(12);
        let len = 1024;
        let grid = TimeGrid::new(0.01, len).unwrap();
        let p = DendriticParams::init(4, &grid, &mut rng);
        let c: Vec<f64> = (0..4).map(|_| rng.uniform_in(-0.5, 0.5)).collect();
        let s = SomaParams::new(c, 1.0, vec![0.5, 0.3]).unwrap();
        let x = RealSequence::new(2, 3, len, (0..6 * len).map(|_| rng.normal()).collect()).unwrap();
        let seq = drf_sequential_forward(&x, &p, &s, &grid).unwrap();
        let par = drf_parallel_forward(&x, &p, &s, &grid, &TransformPlan::new(len)).unwrap();
        assert!(seq.states.max_abs_diff(&par.states).unwrap() < 1e-8);
    }

    #[test]
    fn causality() {
        let mut rng = make_rng(13);
        let len = 200;
        let grid = TimeGrid::new(0.02, len).unwrap();
        let p = DendriticParams::init(3, &grid, &mut rng);
        let s = SomaParams::new(vec![0.5, -0.2, 0.9], 1.0, vec![0.4]).unwrap();
        let plan = TransformPlan::new(len);
        let x: Vec<f64> = (0..len).map(|_| rng.normal() * 10.0).collect();
        let full = drf_parallel_forward(&RealSequence::from_lane(x.clone()).unwrap(), &p, &s, &grid, &plan).unwrap();
        for t0 in [1usize, 50, 199] {
            let mut cut = x.clone();
            cut[t0..].iter_mut().for_each(|v| *v = 0.0);
            let part = drf_parallel_forward(&RealSequence::from_lane(cut).unwrap(), &p, &s, &grid, &plan).unwrap();
            // FFT round-off is the only difference before t0.
            for i in 0..3 {
                for t in 0..t0 {
                    assert!((full.states.lane_re(0, 0, i)[t] - part.states.lane_re(0, 0, i)[t]).abs() < 1e-12);
                }
            }
            assert_eq!(&full.spikes.lane(0, 0)[..t0], &part.spikes.lane(0, 0)[..t0]);
        }
    }

    #[test]
    fn f32_states_within_policy_bound() {
        let mut rng = make_rng(14);
        let len = 4096;
        let grid = TimeGrid::new(0.01, len).unwrap();
        let p = DendriticParams::init(4, &grid, &mut rng);
        let s = SomaParams::new(vec![0.25; 4], 1.0, vec![0.5]).unwrap();
        let x = RealSequence::from_lane((0..len).map(|_| rng.normal()).collect()).unwrap();
        let seq = drf_sequential_forward(&x, &p, &s, &grid).unwrap();
        let plan = TransformPlan::with_precision(len, Precision::F32);
        let par = drf_parallel_forward(&x, &p, &s, &grid, &plan).unwrap();
        let err = seq.states.max_abs_diff(&par.states).unwrap();
        assert!(err <= 1e-3, "{err}");
    }
}
