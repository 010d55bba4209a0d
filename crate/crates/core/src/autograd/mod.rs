//! Reverse-mode gradients for the fixed D-RF operator set.
//!
//! The spike nonlinearity is differentiated with a double-Gaussian surrogate
//! and the adaptive threshold is detached: no gradient flows through
//! `V_th` or the pre-spikes. FFT convolutions are differentiated through
//! their adjoint correlations.

mod bptt;
mod grads;
mod network;

pub use bptt::{bptt_reference_grad, BPTT_MAX_LEN};
pub(crate) use bptt::sequential_backward;
pub use grads::{GradientSet, LayerGrads, ParamClass, ReadoutGrads};
pub use network::parallel_backward;

use std::f64::consts::{FRAC_1_SQRT_2, FRAC_2_SQRT_PI};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::dynamics::DendriticParams;
use crate::error::{Error, Result};
use crate::parallel::{ResonatorKernel, TransformPlan};
use crate::sequence::{ComplexStateSequence, RealSequence, TimeGrid};

const INV_SQRT_2PI: f64 = 0.5 * FRAC_2_SQRT_PI * FRAC_1_SQRT_2;

/// Double-Gaussian surrogate `G(x) = (1+h) phi(x; sigma) - h phi(x; s sigma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    sigma: f64,
    h: f64,
    s: f64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            h: 0.15,
            s: 6.0,
        }
    }
}

#[inline]
fn gaussian_pdf(x: f64, sigma: f64) -> f64 {
    let z = x / sigma;
    INV_SQRT_2PI / sigma * (-0.5 * z * z).exp()
}

#[inline]
fn gaussian_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

impl SurrogateSpec {
    pub fn new(sigma: f64, h: f64, s: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidParam {
                field: "sigma",
                reason: format!("must be > 0, got {sigma}"),
            });
        }
        if !(0.0..1.0).contains(&h) {
            return Err(Error::InvalidParam {
                field: "h",
                reason: format!("must lie in [0, 1), got {h}"),
            });
        }
        if !(s.is_finite() && s > 1.0) {
            return Err(Error::InvalidParam {
                field: "s",
                reason: format!("must be > 1, got {s}"),
            });
        }
        Ok(Self { sigma, h, s })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    #[inline]
    pub fn grad(&self, x: f64) -> f64 {
        (1.0 + self.h) * gaussian_pdf(x, self.sigma) - self.h * gaussian_pdf(x, self.s * self.sigma)
    }

    /// Antiderivative of [`grad`](Self::grad) rising from 0 to 1.
    #[inline]
    pub fn smooth_step(&self, x: f64) -> f64 {
        (1.0 + self.h) * gaussian_cdf(x / self.sigma) - self.h * gaussian_cdf(x / (self.s * self.sigma))
    }
}

pub fn surrogate_grad(x: f64, spec: &SurrogateSpec) -> f64 {
    spec.grad(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TapeOp {
    Spike,
    Conv,
    DrfLayer(usize),
}

/// Forward values saved for one backward rule.
#[derive(Debug, Clone)]
pub struct TapeNode {
    pub op: TapeOp,
    pub parents: Vec<usize>,
    pub input: Option<RealSequence>,
    pub input_spectra: Option<Vec<Vec<Complex64>>>,
    pub kernel: Option<Arc<ResonatorKernel>>,
    pub plan: Option<TransformPlan>,
    pub drive: Option<RealSequence>,
    pub potential: Option<RealSequence>,
    pub threshold: Option<RealSequence>,
    pub states: Option<ComplexStateSequence>,
    pub output: Option<RealSequence>,
}

impl TapeNode {
    pub fn new(op: TapeOp) -> Self {
        Self {
            op,
            parents: Vec::new(),
            input: None,
            input_spectra: None,
            kernel: None,
            plan: None,
            drive: None,
            potential: None,
            threshold: None,
            states: None,
            output: None,
        }
    }

    /// Node for the spike rule `S = Theta(H - V_th)`.
    pub fn spike(potential: RealSequence, threshold: RealSequence) -> Self {
        Self {
            potential: Some(potential),
            threshold: Some(threshold),
            ..Self::new(TapeOp::Spike)
        }
    }

    /// Node for the branch convolution of `input` with `kernel`. Spectra of
    /// every input lane are taken here, during the forward pass.
    pub fn conv(input: RealSequence, kernel: Arc<ResonatorKernel>, plan: TransformPlan) -> Self {
        let (batch, channels, _) = input.shape();
        let spectra = (0..batch)
            .flat_map(|b| (0..channels).map(move |c| (b, c)))
            .map(|(b, c)| plan.spectrum(input.lane(b, c)))
            .collect();
        Self {
            input: Some(input),
            input_spectra: Some(spectra),
            kernel: Some(kernel),
            plan: Some(plan),
            ..Self::new(TapeOp::Conv)
        }
    }
}

fn saved<'a, T>(v: &'a Option<T>, name: &'static str) -> Result<&'a T> {
    v.as_ref().ok_or(Error::Tape(name))
}

/// `dL/dH[t] = dL/dS[t] * G(H[t] - V_th[t])`.
pub fn spike_backward(grad_out: &RealSequence, tape: &TapeNode, spec: &SurrogateSpec) -> Result<RealSequence> {
    let h = saved(&tape.potential, "potential")?;
    let v = saved(&tape.threshold, "threshold")?;
    if grad_out.shape() != h.shape() {
        return Err(Error::Shape(format!(
            "spike gradient shape {:?} does not match potential shape {:?}",
            grad_out.shape(),
            h.shape()
        )));
    }
    let values = grad_out
        .values()
        .iter()
        .zip(h.values().iter().zip(v.values()))
        .map(|(g, (h, v))| g * spec.grad(h - v))
        .collect();
    let (b, c, l) = h.shape();
    RealSequence::new(b, c, l, values)
}

/// Gradient with respect to complex taps, stored as split planes
/// `dL/dRe K_i[k]` and `dL/dIm K_i[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TapGrads {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

/// Adjoint of [`fft_causal_conv`](crate::parallel::fft_causal_conv).
///
/// `grad_states` holds `dL/dRe Z` and `dL/dIm Z` in its two planes.
pub fn conv_backward(grad_states: &ComplexStateSequence, tape: &TapeNode) -> Result<(RealSequence, TapGrads)> {
    let input = saved(&tape.input, "input")?;
    let spectra = saved(&tape.input_spectra, "input_spectra")?;
    let kernel = saved(&tape.kernel, "kernel")?;
    let plan = saved(&tape.plan, "plan")?;
    let (batch, neurons, n, len) = grad_states.shape();
    if (batch, neurons, len) != input.shape() || n != kernel.branches() {
        return Err(Error::Shape(format!(
            "state gradient shape {:?} does not match input {:?} with {} branches",
            grad_states.shape(),
            input.shape(),
            kernel.branches()
        )));
    }
    let ks = kernel.spectra(plan);
    let mut grad_input = RealSequence::zeros(batch, neurons, len)?;
    let mut taps = TapGrads {
        re: vec![vec![0.0; len]; n],
        im: vec![vec![0.0; len]; n],
    };
    for b in 0..batch {
        for j in 0..neurons {
            let xs = &spectra[b * neurons + j];
            let gi = grad_input.lane_mut(b, j);
            for i in 0..n {
                let gr = plan.spectrum(grad_states.lane_re(b, j, i));
                let gm = plan.spectrum(grad_states.lane_im(b, j, i));
                for (acc, v) in gi.iter_mut().zip(plan.correlate(&gr, &ks.re[i])) {
                    *acc += v;
                }
                for (acc, v) in gi.iter_mut().zip(plan.correlate(&gm, &ks.im[i])) {
                    *acc += v;
                }
                for (acc, v) in taps.re[i].iter_mut().zip(plan.correlate(&gr, xs)) {
                    *acc += v;
                }
                for (acc, v) in taps.im[i].iter_mut().zip(plan.correlate(&gm, xs)) {
                    *acc += v;
                }
            }
        }
    }
    Ok((grad_input, taps))
}

/// Natural-parameter gradients of one branch from its tap gradient.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BranchGrad {
    pub tau: f64,
    pub omega: f64,
    pub gamma: f64,
}

/// Chain rule through `K[k] = gamma exp(k delta (-1/tau + i omega))` for one
/// branch, given unit taps `U[k] = K[k] / gamma`. `g_im = None` means a
/// gradient on the real plane only.
pub(crate) fn branch_param_grad(
    unit_re: &[f64],
    unit_im: &[f64],
    gamma: f64,
    tau: f64,
    delta: f64,
    g_re: &[f64],
    g_im: Option<&[f64]>,
) -> BranchGrad {
    // Re(conj(dK/dtheta) g) with dK/dgamma = U, dK/domega = i k delta K,
    // dK/dtau = (k delta / tau^2) K.
    let mut s_gamma = 0.0;
    let mut s_omega = 0.0;
    let mut s_tau = 0.0;
    for k in 0..g_re.len() {
        let (ur, ui) = (unit_re[k], unit_im[k]);
        let (gr, gi) = (g_re[k], g_im.map_or(0.0, |g| g[k]));
        let dot = ur * gr + ui * gi;
        let cross = ur * gi - ui * gr;
        let kf = k as f64;
        s_gamma += dot;
        s_omega += kf * cross;
        s_tau += kf * dot;
    }
    BranchGrad {
        tau: gamma * delta / (tau * tau) * s_tau,
        omega: gamma * delta * s_omega,
        gamma: s_gamma,
    }
}

/// Gradients of `tau`, `omega` and `gamma` for every branch.
pub fn param_backward(taps: &TapGrads, p: &DendriticParams, grid: &TimeGrid) -> Result<Vec<BranchGrad>> {
    if taps.re.len() != p.n() || taps.im.len() != p.n() {
        return Err(Error::Shape(format!("{} tap gradients for {} branches", taps.re.len(), p.n())));
    }
    let kernel = crate::parallel::build_kernel(p, grid);
    (0..p.n())
        .map(|i| {
            if taps.re[i].len() != grid.len() || taps.im[i].len() != grid.len() {
                return Err(Error::Shape(format!("tap gradient {i} has the wrong length")));
            }
            Ok(branch_param_grad(
                kernel.unit_re(i),
                kernel.unit_im(i),
                p.gamma()[i],
                p.tau()[i],
                grid.delta(),
                &taps.re[i],
                Some(&taps.im[i]),
            ))
        })
        .collect()
}
