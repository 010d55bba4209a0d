//! Step-by-step resonate-and-fire dynamics.
//!
//! This is the reference path. Each branch of a D-RF neuron is a damped
//! complex oscillator
//!
//! ```text
//! Z_i[t] = exp(delta * (-1/tau_i + i*omega_i)) * Z_i[t-1] + gamma_i * I[t]
//! ```
//!
//! the soma reads `H[t] = sum_i c_i * Re Z_i[t]`, and a spike fires when
//! `H[t] - V_th[t] >= 0`. The threshold is raised by recent pre-spikes
//! `P[t] = [H[t] >= V_pre]`: `V_th[t] = V_pre + sum_k alpha_k * P[t-k]`.
//! There is no membrane reset; the adaptive threshold takes its place.
//!
//! The pre-spike is taken on the weighted soma potential `H`, not on the raw
//! branch states. The two readings only coincide when every `c_i` is 1.

use num_complex::Complex64;

use crate::autograd::SurrogateSpec;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sequence::{ComplexStateSequence, RealSequence, SpikeTrain, TimeGrid};

/// Single resonate-and-fire oscillator: damping `b < 0`, angular frequency `omega > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RFParams {
    b: f64,
    omega: f64,
}

impl RFParams {
    pub fn new(b: f64, omega: f64) -> Result<Self> {
        if !(b.is_finite() && b < 0.0) {
            return Err(Error::InvalidParam {
                field: "b",
                reason: format!("damping must be negative, got {b}"),
            });
        }
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::InvalidParam {
                field: "omega",
                reason: format!("angular frequency must be positive, got {omega}"),
            });
        }
        Ok(Self { b, omega })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }
}

/// One step of the discretized RF neuron: `exp(delta (b + i omega)) z + delta I`.
pub fn rf_step(z: Complex64, input: f64, p: &RFParams, delta: f64) -> Complex64 {
    let decay = Complex64::new(delta * p.b, delta * p.omega).exp();
    decay * z + delta * input
}

/// Per-branch decay `tau`, angular frequency `omega` and input gain `gamma`.
#[derive(Debug, Clone, PartialEq)]
pub struct DendriticParams {
    tau: Vec<f64>,
    omega: Vec<f64>,
    gamma: Vec<f64>,
}

impl DendriticParams {
    pub fn new(tau: Vec<f64>, omega: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if tau.is_empty() || tau.len() != omega.len() || tau.len() != gamma.len() {
            return Err(Error::Shape(format!(
                "branch arrays must share a nonzero length: tau={}, omega={}, gamma={}",
                tau.len(),
                omega.len(),
                gamma.len()
            )));
        }
        if let Some(t) = tau.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(Error::InvalidParam {
                field: "tau",
                reason: format!("decay constants must be positive, got {t}"),
            });
        }
        if let Some(w) = omega.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidParam {
                field: "omega",
                reason: format!("angular frequencies must be non-negative, got {w}"),
            });
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gamma".into()));
        }
        Ok(Self { tau, omega, gamma })
    }

    /// Default initialization for a layer that sees sequences of `grid.len()` steps.
    ///
    /// Frequencies are log-uniform over `[pi / (L delta), 0.9 pi / delta]`,
    /// stratified so branch `i` lands in the `i`-th of `n` equal log-width
    /// bands. Decays are uniform over `[1, L delta]`, gains equal `delta`.
    pub fn init(n: usize, grid: &TimeGrid, rng: &mut Rng) -> Self {
        let delta = grid.delta();
        let span = grid.len() as f64 * delta;
        let (lo, hi) = (std::f64::consts::PI / span, 0.9 * std::f64::consts::PI / delta);
        let (llo, lhi) = (lo.ln(), hi.ln().max(lo.ln()));
        let (tlo, thi) = if span >= 1.0 { (1.0, span) } else { (span, 1.0) };
        let mut tau = Vec::with_capacity(n);
        let mut omega = Vec::with_capacity(n);
        for i in 0..n {
            let u = (i as f64 + rng.uniform()) / n as f64;
            omega.push((llo + u * (lhi - llo)).exp());
            tau.push(rng.uniform_in(tlo, thi));
        }
        Self {
            tau,
            omega,
            gamma: vec![delta; n],
        }
    }

    pub fn n(&self) -> usize {
        self.tau.len()
    }

    pub fn tau(&self) -> &[f64] {
        &self.tau
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// Continuous-time pole scaled by the step: `delta * (-1/tau_i + i omega_i)`.
    pub fn rate(&self, i: usize, delta: f64) -> Complex64 {
        Complex64::new(-delta / self.tau[i], delta * self.omega[i])
    }

    /// Zero-order-hold transition factors `exp(delta (-1/tau_i + i omega_i))`.
    pub fn transitions(&self, delta: f64) -> Vec<Complex64> {
        (0..self.n()).map(|i| self.rate(i, delta).exp()).collect()
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            tau: order.iter().map(|&i| self.tau[i]).collect(),
            omega: order.iter().map(|&i| self.omega[i]).collect(),
            gamma: order.iter().map(|&i| self.gamma[i]).collect(),
        }
    }
}

/// Soma: branch weights `c`, base threshold `v_pre`, adaptive kernel `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct SomaParams {
    c: Vec<f64>,
    v_pre: f64,
    alpha: Vec<f64>,
}

impl SomaParams {
    pub fn new(c: Vec<f64>, v_pre: f64, alpha: Vec<f64>) -> Result<Self> {
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("branch weights".into()));
        }
        if !(v_pre.is_finite() && v_pre > 0.0) {
            return Err(Error::InvalidParam {
                field: "v_pre",
                reason: format!("base threshold must be positive, got {v_pre}"),
            });
        }
        if let Some(a) = alpha.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(Error::InvalidParam {
                field: "alpha",
                reason: format!("adaptive weights must lie in (0, 1), got {a}"),
            });
        }
        Ok(Self { c, v_pre, alpha })
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn v_pre(&self) -> f64 {
        self.v_pre
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// Adaptive window length `n_a`.
    pub fn window(&self) -> usize {
        self.alpha.len()
    }

    pub fn with_alpha(&self, alpha: Vec<f64>) -> Result<Self> {
        Self::new(self.c.clone(), self.v_pre, alpha)
    }
}

/// Spike nonlinearity applied to `H - V_th`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpikeFn {
    /// `1` iff the argument is `>= 0`.
    Heaviside,
    /// Smooth step whose derivative is the surrogate gradient.
    Smooth(SurrogateSpec),
}

impl SpikeFn {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            SpikeFn::Heaviside => heaviside(x),
            SpikeFn::Smooth(spec) => spec.smooth_step(x),
        }
    }
}

#[inline]
pub fn heaviside(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// One ZOH step of every branch. Branches never interact.
pub fn drf_charge_step(z: &[Complex64], input: f64, p: &DendriticParams, delta: f64) -> Vec<Complex64> {
    z.iter()
        .enumerate()
        .map(|(i, zi)| p.rate(i, delta).exp() * zi + p.gamma[i] * input)
        .collect()
}

/// `H = sum_i c_i Re Z_i`.
pub fn soma_potential(z: &[Complex64], s: &SomaParams) -> Result<f64> {
    if z.len() != s.c.len() {
        return Err(Error::Shape(format!(
            "{} branch states but {} branch weights",
            z.len(),
            s.c.len()
        )));
    }
    Ok(z.iter().zip(&s.c).map(|(zi, ci)| ci * zi.re).sum())
}

/// `V_pre + sum_k alpha_k * window[k-1]` where `window[k-1] = P[t-k]`.
pub fn adaptive_threshold_step(recent_prespikes: &[u8], s: &SomaParams) -> f64 {
    s.v_pre + window_sum(&s.alpha, |k| recent_prespikes.get(k).copied().unwrap_or(0))
}

/// Shared by the sequential and convolutional threshold so both paths sum in
/// the same order and agree bit for bit.
#[inline]
pub(crate) fn window_sum(alpha: &[f64], prespike: impl Fn(usize) -> u8) -> f64 {
    let mut acc = 0.0;
    for (k, a) in alpha.iter().enumerate() {
        if prespike(k) != 0 {
            acc += a;
        }
    }
    acc
}

/// Every intermediate of a D-RF forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DrfTrace {
    pub states: ComplexStateSequence,
    pub potential: RealSequence,
    pub threshold: RealSequence,
    pub spikes: SpikeTrain,
}

pub(crate) fn check_forward_shapes(input: &RealSequence, p: &DendriticParams, s: &SomaParams, grid: &TimeGrid) -> Result<()> {
    if input.len() != grid.len() {
        return Err(Error::Shape(format!(
            "input has {} steps but the time grid has {}",
            input.len(),
            grid.len()
        )));
    }
    if s.c.len() != p.n() {
        return Err(Error::Shape(format!(
            "{} branches but {} soma weights",
            p.n(),
            s.c.len()
        )));
    }
    Ok(())
}

/// Runs the neuron over time. Each input channel drives one neuron with the
/// shared parameters, so the output has `neurons = channels`.
pub fn drf_sequential_forward(
    input: &RealSequence,
    p: &DendriticParams,
    s: &SomaParams,
    grid: &TimeGrid,
) -> Result<DrfTrace> {
    check_forward_shapes(input, p, s, grid)?;
    let (batch, neurons, len) = input.shape();
    let n = p.n();
    let decay = p.transitions(grid.delta());
    let mut states = ComplexStateSequence::zeros(batch, neurons, n, len)?;
    let mut potential = RealSequence::zeros(batch, neurons, len)?;
    let mut threshold = RealSequence::zeros(batch, neurons, len)?;
    let mut spikes = SpikeTrain::zeros(batch, neurons, len)?;
    let mut z = vec![Complex64::new(0.0, 0.0); n];
    let mut window = vec![0u8; s.window()];

    for b in 0..batch {
        for j in 0..neurons {
            let x = input.lane(b, j);
            z.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            window.iter_mut().for_each(|w| *w = 0);
            for t in 0..len {
                for i in 0..n {
                    z[i] = decay[i] * z[i] + p.gamma[i] * x[t];
                    let (re, im) = states.lane_mut(b, j, i);
                    re[t] = z[i].re;
                    im[t] = z[i].im;
                }
                let h = soma_potential(&z, s)?;
                let v_th = adaptive_threshold_step(&window, s);
                potential.lane_mut(b, j)[t] = h;
                threshold.lane_mut(b, j)[t] = v_th;
                spikes.lane_mut(b, j)[t] = heaviside(h - v_th) as u8;
                if !window.is_empty() {
                    window.rotate_right(1);
                    window[0] = (h >= s.v_pre) as u8;
                }
            }
        }
    }
    Ok(DrfTrace {
        states,
        potential,
        threshold,
        spikes,
    })
}
