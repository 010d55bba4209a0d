//! Stacked D-RF network: `dense -> D-RF layer` repeated, then a leaky
//! integrator readout decoded by its time mean.
//!
//! Every neuron owns its branch parameters. Positivity constraints are kept
//! by reparameterization: `tau = softplus(rho) + 1e-6`, `omega = rho^2`,
//! `alpha = logistic(rho)` and the readout leak `lambda = logistic(rho)`.

use std::sync::{Arc, Mutex};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::analysis::{branch_noise_gain, branch_peak_gain, spike_stats, SpikeStats};
use crate::autograd::{SurrogateSpec, TapeNode, TapeOp};
use crate::config::{Mode, Precision, RunConfig, SpikeFnKind};
use crate::dynamics::{adaptive_threshold_step, heaviside, DendriticParams, SomaParams, SpikeFn};
use crate::error::{Error, Result};
use crate::parallel::{build_kernel, threshold_lane, ResonatorKernel, TransformPlan};
use crate::rng::Rng;
use crate::sequence::{ComplexStateSequence, RealSequence, SpikeTrain, TimeGrid};

pub const TAU_FLOOR: f64 = 1e-6;
const LOGIT_CLAMP: f64 = 30.0;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP)).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Dense projection followed by `neurons` D-RF neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct DrfLayer {
    pub inputs: usize,
    pub neurons: usize,
    pub branches: usize,
    /// `neurons x inputs`, row-major.
    pub w: Vec<f64>,
    /// The following four are `neurons x branches`, row-major.
    pub tau_raw: Vec<f64>,
    pub omega_raw: Vec<f64>,
    /// Input gain in units of the time step: `gamma = delta * gamma_raw`.
    pub gamma_raw: Vec<f64>,
    pub c: Vec<f64>,
    /// Adaptive kernel, shared by the layer.
    pub alpha_raw: Vec<f64>,
    pub delta: f64,
}

impl DrfLayer {
    pub fn tau(&self, j: usize, i: usize) -> f64 {
        softplus(self.tau_raw[j * self.branches + i]) + TAU_FLOOR
    }

    pub fn omega(&self, j: usize, i: usize) -> f64 {
        let r = self.omega_raw[j * self.branches + i];
        r * r
    }

    pub fn gamma(&self, j: usize, i: usize) -> f64 {
        self.delta * self.gamma_raw[j * self.branches + i]
    }

    pub fn alpha(&self) -> Vec<f64> {
        self.alpha_raw.iter().map(|&r| logistic(r)).collect()
    }

    pub fn dendritic(&self, j: usize) -> Result<DendriticParams> {
        let n = self.branches;
        DendriticParams::new(
            (0..n).map(|i| self.tau(j, i)).collect(),
            (0..n).map(|i| self.omega(j, i)).collect(),
            (0..n).map(|i| self.gamma(j, i)).collect(),
        )
    }

    pub fn soma(&self, j: usize, v_pre: f64) -> Result<SomaParams> {
        let n = self.branches;
        SomaParams::new(self.c[j * n..(j + 1) * n].to_vec(), v_pre, self.alpha())
    }
}

/// `u = W S + b`, `y[t] = lambda y[t-1] + (1 - lambda) u[t]`, score = mean of `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub inputs: usize,
    pub classes: usize,
    /// `classes x inputs`, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub leak_raw: Vec<f64>,
}

impl Readout {
    pub fn leak(&self) -> f64 {
        logistic(self.leak_raw[0])
    }
}

/// Branch kernels of every neuron in one layer.
#[derive(Debug)]
pub(crate) struct LayerKernels {
    pub(crate) kernels: Vec<ResonatorKernel>,
    /// `sum_i c_i Re K_i[k]` per neuron, so that `H = combined * I`.
    pub(crate) combined_spectra: Vec<Vec<Complex64>>,
}

#[derive(Debug)]
pub(crate) struct KernelCache {
    version: u64,
    precision: Precision,
    pub(crate) plan: TransformPlan,
    pub(crate) layers: Vec<LayerKernels>,
}

#[derive(Debug)]
pub struct Model {
    pub layers: Vec<DrfLayer>,
    pub readout: Readout,
    pub delta: f64,
    pub v_pre: f64,
    pub spike_fn: SpikeFn,
    pub surrogate: SurrogateSpec,
    pub train_alpha: bool,
    pub precision: Precision,
    version: u64,
    cache: Mutex<Option<Arc<KernelCache>>>,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            readout: self.readout.clone(),
            delta: self.delta,
            v_pre: self.v_pre,
            spike_fn: self.spike_fn,
            surrogate: self.surrogate,
            train_alpha: self.train_alpha,
            precision: self.precision,
            version: self.version,
            cache: Mutex::new(None),
        }
    }
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
            && self.readout == other.readout
            && self.delta == other.delta
            && self.v_pre == other.v_pre
            && self.spike_fn == other.spike_fn
            && self.surrogate == other.surrogate
            && self.train_alpha == other.train_alpha
            && self.precision == other.precision
    }
}

/// Loss, accuracy and spike telemetry of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
    pub spikes: SpikeStats,
}

/// Everything a backward pass needs.
#[derive(Debug)]
pub struct NetworkTape {
    pub mode: Mode,
    pub layers: Vec<TapeNode>,
    /// Readout drive `u` and state `y`, `batch x classes x len`.
    pub readout_u: Vec<f64>,
    pub readout_y: Vec<f64>,
    pub(crate) kernels: Option<Arc<KernelCache>>,
}

#[derive(Debug)]
pub struct ForwardPass {
    /// `batch x classes`.
    pub scores: Vec<f64>,
    pub tape: NetworkTape,
    pub spikes: SpikeStats,
}

impl Model {
    /// Fresh model for `input_channels` input lanes and the configured task.
    pub fn from_config(cfg: &RunConfig, input_channels: usize, rng: &mut Rng) -> Result<Self> {
        let m = &cfg.model;
        let grid = TimeGrid::new(m.delta, cfg.task.length)?;
        let n = m.n;
        let mut layers = Vec::with_capacity(m.widths.len());
        let mut fan_in = input_channels;
        for &width in &m.widths {
            let scale = m.weight_gain / (fan_in as f64).sqrt();
            let w = (0..width * fan_in).map(|_| rng.normal() * scale).collect();
            let mut tau_raw = Vec::with_capacity(width * n);
            let mut omega_raw = Vec::with_capacity(width * n);
            let mut gamma_raw = Vec::with_capacity(width * n);
            let mut c = Vec::with_capacity(width * n);
            for _ in 0..width {
                let p = DendriticParams::init(n, &grid, rng);
                // Equal peak gain on every branch, scaled so the summed
                // potential has unit RMS under unit white drive.
                let peaks: Vec<f64> = (0..n).map(|i| branch_peak_gain(p.tau()[i], p.gamma()[i], m.delta)).collect();
                let rms = (0..n)
                    .map(|i| (branch_noise_gain(p.tau()[i], p.omega()[i], p.gamma()[i], m.delta) / peaks[i]).powi(2))
                    .sum::<f64>()
                    .sqrt();
                for i in 0..n {
                    tau_raw.push(softplus_inv(p.tau()[i] - TAU_FLOOR));
                    omega_raw.push(p.omega()[i].sqrt());
                    gamma_raw.push(p.gamma()[i] / m.delta);
                    c.push(1.0 / (rms * peaks[i]));
                }
            }
            layers.push(DrfLayer {
                inputs: fan_in,
                neurons: width,
                branches: n,
                w,
                tau_raw,
                omega_raw,
                gamma_raw,
                c,
                alpha_raw: vec![logit(m.alpha_init); m.n_a],
                delta: m.delta,
            });
            fan_in = width;
        }
        let classes = cfg.task.classes;
        let scale = 1.0 / (fan_in as f64).sqrt();
        let readout = Readout {
            inputs: fan_in,
            classes,
            w: (0..classes * fan_in).map(|_| rng.normal() * scale).collect(),
            b: vec![0.0; classes],
            leak_raw: vec![logit(m.readout_leak)],
        };
        let surrogate = SurrogateSpec::new(cfg.surrogate.sigma, cfg.surrogate.h, cfg.surrogate.s)?;
        Ok(Self {
            layers,
            readout,
            delta: m.delta,
            v_pre: m.v_pre,
            spike_fn: match m.spike_fn {
                SpikeFnKind::Heaviside => SpikeFn::Heaviside,
                SpikeFnKind::Smooth => SpikeFn::Smooth(surrogate),
            },
            surrogate,
            train_alpha: m.train_alpha,
            precision: cfg.precision,
            version: 0,
            cache: Mutex::new(None),
        })
    }

    pub fn input_channels(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn classes(&self) -> usize {
        self.readout.classes
    }

    /// Bumped on every parameter update; invalidates cached kernels.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn bump_version(&mut self) {
        self.version += 1;
        *self.cache.get_mut().expect("kernel cache lock") = None;
    }

    /// Parameter tensors in a fixed declaration order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.extend([&l.w[..], &l.tau_raw, &l.omega_raw, &l.gamma_raw, &l.c, &l.alpha_raw]);
        }
        out.extend([&self.readout.w[..], &self.readout.b, &self.readout.leak_raw]);
        out
    }

    /// Mutable view in the order of [`tensors`](Self::tensors). Callers must
    /// call [`bump_version`](Self::bump_version) after writing.
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.w);
            out.push(&mut l.tau_raw);
            out.push(&mut l.omega_raw);
            out.push(&mut l.gamma_raw);
            out.push(&mut l.c);
            out.push(&mut l.alpha_raw);
        }
        out.push(&mut self.readout.w);
        out.push(&mut self.readout.b);
        out.push(&mut self.readout.leak_raw);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Checks every constrained parameter against its type invariant.
    pub fn validate_params(&self) -> Result<()> {
        for l in &self.layers {
            for j in 0..l.neurons {
                l.dendritic(j)?;
                l.soma(j, self.v_pre)?;
            }
        }
        let lam = self.readout.leak();
        if !(lam > 0.0 && lam < 1.0) {
            return Err(Error::InvalidParam {
                field: "readout_leak",
                reason: format!("must lie in (0, 1), got {lam}"),
            });
        }
        if self.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    pub(crate) fn kernels(&self, len: usize) -> Result<Arc<KernelCache>> {
        let mut guard = self.cache.lock().expect("kernel cache lock");
        if let Some(c) = guard.as_ref() {
            if c.version == self.version && c.plan.len() == len && c.precision == self.precision {
                return Ok(c.clone());
            }
        }
        let grid = TimeGrid::new(self.delta, len)?;
        let plan = TransformPlan::with_precision(len, self.precision);
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let mut kernels = Vec::with_capacity(l.neurons);
            let mut combined_spectra = Vec::with_capacity(l.neurons);
            for j in 0..l.neurons {
                let k = build_kernel(&l.dendritic(j)?, &grid);
                let mut combined = vec![0.0; len];
                for i in 0..l.branches {
                    let scale = l.c[j * l.branches + i] * k.gamma()[i];
                    for (acc, u) in combined.iter_mut().zip(k.unit_re(i)) {
                        *acc += scale * u;
                    }
                }
                combined_spectra.push(plan.spectrum(&combined));
                kernels.push(k);
            }
            layers.push(LayerKernels {
                kernels,
                combined_spectra,
            });
        }
        let cache = Arc::new(KernelCache {
            version: self.version,
            precision: self.precision,
            plan,
            layers,
        });
        *guard = Some(cache.clone());
        Ok(cache)
    }

    fn check_input(&self, input: &RealSequence) -> Result<()> {
        if input.channels() != self.input_channels() {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {}",
                self.input_channels(),
                input.channels()
            )));
        }
        Ok(())
    }

    /// Runs the network and records the tape.
    pub fn forward(&self, input: &RealSequence, mode: Mode) -> Result<ForwardPass> {
        self.check_input(input)?;
        let len = input.len();
        let kernels = match mode {
            Mode::Parallel => Some(self.kernels(len)?),
            Mode::Sequential => None,
        };
        let mut nodes: Vec<TapeNode> = Vec::with_capacity(self.layers.len());
        let mut trains = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let x = match nodes.last() {
                None => input.clone(),
                Some(prev) => prev.output.clone().expect("layer output recorded"),
            };
            let mut node = match &kernels {
                Some(k) => self.layer_forward_parallel(layer, x, &k.layers[l], &k.plan)?,
                None => self.layer_forward_sequential(layer, x)?,
            };
            node.op = TapeOp::DrfLayer(l);
            if l > 0 {
                node.parents.push(l - 1);
            }
            trains.push(hard_spikes(&node)?);
            nodes.push(node);
        }
        let top = nodes.last().and_then(|n| n.output.as_ref()).expect("top output");
        let (scores, readout_u, readout_y) = self.readout_forward(top);
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("class scores".into()));
        }
        let spikes = spike_stats(&trains.iter().collect::<Vec<_>>())?;
        Ok(ForwardPass {
            scores,
            tape: NetworkTape {
                mode,
                layers: nodes,
                readout_u,
                readout_y,
                kernels,
            },
            spikes,
        })
    }

    fn layer_forward_parallel(&self, layer: &DrfLayer, x: RealSequence, k: &LayerKernels, plan: &TransformPlan) -> Result<TapeNode> {
        let (batch, _, len) = x.shape();
        let alpha = layer.alpha();
        let per: Vec<_> = (0..batch)
            .into_par_iter()
            .map(|b| {
                let xs = x.sample(b);
                let mut drive = vec![0.0; layer.neurons * len];
                let mut h = vec![0.0; layer.neurons * len];
                let mut v = vec![0.0; layer.neurons * len];
                let mut s = vec![0.0; layer.neurons * len];
                let mut spectra = Vec::with_capacity(layer.neurons);
                let mut pre = vec![0u8; len];
                for j in 0..layer.neurons {
                    let lane = j * len..(j + 1) * len;
                    dense_row(&layer.w[j * layer.inputs..(j + 1) * layer.inputs], xs, len, &mut drive[lane.clone()]);
                    let spec = plan.spectrum(&drive[lane.clone()]);
                    h[lane.clone()].copy_from_slice(&plan.convolve(&spec, &k.combined_spectra[j]));
                    threshold_lane(&h[lane.clone()], &alpha, self.v_pre, &mut v[lane.clone()], &mut pre);
                    for t in lane {
                        s[t] = self.spike_fn.apply(h[t] - v[t]);
                    }
                    spectra.push(spec);
                }
                (drive, h, v, s, spectra)
            })
            .collect();
        let mut node = TapeNode::new(TapeOp::DrfLayer(0));
        let mut all_spectra = Vec::with_capacity(batch * layer.neurons);
        let (mut drive, mut h, mut v, mut s) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (d, hh, vv, ss, sp) in per {
            drive.extend(d);
            h.extend(hh);
            v.extend(vv);
            s.extend(ss);
            all_spectra.extend(sp);
        }
        let n = layer.neurons;
        node.drive = Some(RealSequence::new(batch, n, len, drive)?);
        node.potential = Some(RealSequence::new(batch, n, len, h)?);
        node.threshold = Some(RealSequence::new(batch, n, len, v)?);
        node.output = Some(RealSequence::new(batch, n, len, s)?);
        node.input_spectra = Some(all_spectra);
        node.plan = Some(plan.clone());
        node.input = Some(x);
        Ok(node)
    }

    fn layer_forward_sequential(&self, layer: &DrfLayer, x: RealSequence) -> Result<TapeNode> {
        let (batch, _, len) = x.shape();
        let n = layer.branches;
        let params: Vec<(DendriticParams, SomaParams)> = (0..layer.neurons)
            .map(|j| Ok((layer.dendritic(j)?, layer.soma(j, self.v_pre)?)))
            .collect::<Result<_>>()?;
        let per: Vec<_> = (0..batch)
            .into_par_iter()
            .map(|b| {
                let xs = x.sample(b);
                let mut drive = vec![0.0; layer.neurons * len];
                let mut zr = vec![0.0; layer.neurons * n * len];
                let mut zi = vec![0.0; layer.neurons * n * len];
                let mut h = vec![0.0; layer.neurons * len];
                let mut v = vec![0.0; layer.neurons * len];
                let mut s = vec![0.0; layer.neurons * len];
                let mut window = vec![0u8; layer.alpha_raw.len()];
                let mut z = vec![Complex64::new(0.0, 0.0); n];
                for j in 0..layer.neurons {
                    let (p, soma) = &params[j];
                    let a = p.transitions(self.delta);
                    let drive_j = &mut drive[j * len..(j + 1) * len];
                    dense_row(&layer.w[j * layer.inputs..(j + 1) * layer.inputs], xs, len, drive_j);
                    z.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                    window.iter_mut().for_each(|w| *w = 0);
                    for t in 0..len {
                        let mut hv = 0.0;
                        for i in 0..n {
                            z[i] = a[i] * z[i] + p.gamma()[i] * drive_j[t];
                            let o = (j * n + i) * len + t;
                            zr[o] = z[i].re;
                            zi[o] = z[i].im;
                            hv += soma.c()[i] * z[i].re;
                        }
                        let vt = adaptive_threshold_step(&window, soma);
                        let o = j * len + t;
                        h[o] = hv;
                        v[o] = vt;
                        s[o] = self.spike_fn.apply(hv - vt);
                        if !window.is_empty() {
                            window.rotate_right(1);
                            window[0] = (hv >= self.v_pre) as u8;
                        }
                    }
                }
                (drive, zr, zi, h, v, s)
            })
            .collect();
        let (mut drive, mut zr, mut zi, mut h, mut v, mut s) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (d, r, i, hh, vv, ss) in per {
            drive.extend(d);
            zr.extend(r);
            zi.extend(i);
            h.extend(hh);
            v.extend(vv);
            s.extend(ss);
        }
        let nn = layer.neurons;
        let mut node = TapeNode::new(TapeOp::DrfLayer(0));
        node.drive = Some(RealSequence::new(batch, nn, len, drive)?);
        node.states = Some(ComplexStateSequence::new(batch, nn, n, len, zr, zi)?);
        node.potential = Some(RealSequence::new(batch, nn, len, h)?);
        node.threshold = Some(RealSequence::new(batch, nn, len, v)?);
        node.output = Some(RealSequence::new(batch, nn, len, s)?);
        node.input = Some(x);
        Ok(node)
    }

    /// Returns scores, `u` and `y`.
    fn readout_forward(&self, x: &RealSequence) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (batch, inputs, len) = x.shape();
        let r = &self.readout;
        let lam = r.leak();
        let k = r.classes;
        let mut u = vec![0.0; batch * k * len];
        let mut y = vec![0.0; batch * k * len];
        let mut scores = vec![0.0; batch * k];
        for b in 0..batch {
            let xs = x.sample(b);
            for c in 0..k {
                let o = (b * k + c) * len;
                let uc = &mut u[o..o + len];
                dense_row(&r.w[c * inputs..(c + 1) * inputs], xs, len, uc);
                uc.iter_mut().for_each(|v| *v += r.b[c]);
                let mut prev = 0.0;
                let mut sum = 0.0;
                for t in 0..len {
                    prev = lam * prev + (1.0 - lam) * uc[t];
                    y[o + t] = prev;
                    sum += prev;
                }
                scores[b * k + c] = sum / len as f64;
            }
        }
        (scores, u, y)
    }

    /// Mean cross-entropy and accuracy of a batch.
    pub fn forward_loss(&self, input: &RealSequence, labels: &[usize], mode: Mode) -> Result<LossOutput> {
        let pass = self.forward(input, mode)?;
        let (loss, _, correct) = cross_entropy(&pass.scores, labels, self.classes())?;
        Ok(LossOutput {
            loss,
            correct,
            count: labels.len(),
            spikes: pass.spikes,
        })
    }

    /// Loss and gradients with respect to every raw parameter.
    pub fn loss_and_grad(&self, input: &RealSequence, labels: &[usize], mode: Mode) -> Result<(LossOutput, crate::autograd::GradientSet)> {
        let pass = self.forward(input, mode)?;
        let (loss, gscores, correct) = cross_entropy(&pass.scores, labels, self.classes())?;
        let grads = match mode {
            Mode::Parallel => crate::autograd::parallel_backward(self, &pass.tape, &gscores)?,
            Mode::Sequential => crate::autograd::sequential_backward(self, &pass.tape, &gscores)?,
        };
        Ok((
            LossOutput {
                loss,
                correct,
                count: labels.len(),
                spikes: pass.spikes,
            },
            grads,
        ))
    }
}

/// `out[t] = sum_m w[m] x[m, t]` for a sample stored channel-major.
pub(crate) fn dense_row(w: &[f64], x: &[f64], len: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (m, &wm) in w.iter().enumerate() {
        if wm == 0.0 {
            continue;
        }
        for (o, xv) in out.iter_mut().zip(&x[m * len..(m + 1) * len]) {
            *o += wm * xv;
        }
    }
}

fn hard_spikes(node: &TapeNode) -> Result<SpikeTrain> {
    let h = node.potential.as_ref().ok_or(Error::Tape("potential"))?;
    let v = node.threshold.as_ref().ok_or(Error::Tape("threshold"))?;
    let (b, n, l) = h.shape();
    let bits = h.values().iter().zip(v.values()).map(|(h, v)| heaviside(h - v) as u8).collect();
    SpikeTrain::new(b, n, l, bits)
}

/// Mean cross-entropy, its gradient with respect to the scores, and the
/// number of argmax hits.
pub fn cross_entropy(scores: &[f64], labels: &[usize], classes: usize) -> Result<(f64, Vec<f64>, usize)> {
    if scores.len() != labels.len() * classes {
        return Err(Error::Shape(format!(
            "{} scores for {} labels and {classes} classes",
            scores.len(),
            labels.len()
        )));
    }
    let batch = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; scores.len()];
    let mut correct = 0;
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(Error::Shape(format!("label {label} out of range for {classes} classes")));
        }
        let row = &scores[b * classes..(b + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|s| (s - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - row[label];
        let best = row
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc })
            .0;
        correct += (best == label) as usize;
        for c in 0..classes {
            let p = (row[c] - lse).exp();
            grad[b * classes + c] = (p - (c == label) as u8 as f64) / batch;
        }
    }
    Ok((loss / batch, grad, correct))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_rng;

    fn small_config(len: usize) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.task.length = len;
        cfg.model.widths = vec![6, 5];
        cfg.model.n = 3;
        cfg
    }

    fn random_input(rng: &mut Rng, b: usize, l: usize) -> RealSequence {
        RealSequence::new(b, 1, l, (0..b * l).map(|_| rng.normal() * 2.0).collect()).unwrap()
    }

    #[test]
    fn reparameterizations_invert() {
        for y in [1e-3, 0.5, 1.0, 7.0, 50.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
        for p in [0.01, 0.3, 0.9] {
            assert!((logistic(logit(p)) - p).abs() < 1e-14);
        }
        assert!(logistic(1e9) < 1.0);
        assert!(logistic(-1e9) > 0.0);
    }

    #[test]
    fn cross_entropy_at_certainty() {
        let (loss, _, correct) = cross_entropy(&[60.0, 0.0, 0.0, 0.0, 60.0, 0.0], &[0, 1], 3).unwrap();
        assert!(loss < 1e-6);
        assert_eq!(correct, 2);
    }

    #[test]
    fn cross_entropy_gradient_rows_sum_to_zero() {
        let (_, g, _) = cross_entropy(&[0.3, -1.0, 2.0, 0.1], &[1, 0], 2).unwrap();
        assert!((g[0] + g[1]).abs() < 1e-16);
        assert!((g[2] + g[3]).abs() < 1e-16);
        assert!(cross_entropy(&[0.0; 4], &[2, 0], 2).is_err());
    }

    #[test]
    fn init_loss_is_near_log_k() {
        let cfg = small_config(128);
        let mut rng = make_rng(3);
        let model = Model::from_config(&cfg, 1, &mut rng).unwrap();
        let x = random_input(&mut rng, 16, 128);
        let labels: Vec<usize> = (0..16).map(|i| i % 4).collect();
        let out = model.forward_loss(&x, &labels, Mode::Parallel).unwrap();
        let k = (4.0f64).ln();
        assert!((out.loss - k).abs() < 0.1 * k, "{}", out.loss);
    }

    #[test]
    fn sequential_and_parallel_losses_agree() {
        let cfg = small_config(200);
        let mut rng = make_rng(4);
        let model = Model::from_config(&cfg, 1, &mut rng).unwrap();
        let x = random_input(&mut rng, 4, 200);
        let labels = vec![0, 1, 2, 3];
        let a = model.forward_loss(&x, &labels, Mode::Parallel).unwrap();
        let b = model.forward_loss(&x, &labels, Mode::Sequential).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-6 * b.loss, "{} vs {}", a.loss, b.loss);
        assert_eq!(a.spikes, b.spikes);
    }

    #[test]
    fn constraints_hold_at_init() {
        let cfg = small_config(64);
        let model = Model::from_config(&cfg, 1, &mut make_rng(5)).unwrap();
        model.validate_params().unwrap();
        assert_eq!(model.tensors().len(), 6 * 2 + 3);
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let cfg = small_config(64);
        let model = Model::from_config(&cfg, 1, &mut make_rng(6)).unwrap();
        let x = RealSequence::zeros(2, 3, 64).unwrap();
        assert!(matches!(model.forward(&x, Mode::Parallel), Err(Error::Shape(_))));
    }

    #[test]
    fn kernel_cache_follows_version() {
        let cfg = small_config(64);
        let mut model = Model::from_config(&cfg, 1, &mut make_rng(7)).unwrap();
        let a = model.kernels(64).unwrap();
        assert!(Arc::ptr_eq(&a, &model.kernels(64).unwrap()));
        model.bump_version();
        assert!(!Arc::ptr_eq(&a, &model.kernels(64).unwrap()));
    }
}
