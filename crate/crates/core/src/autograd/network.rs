//! Network-level backward pass through the FFT path.
//!
//! Each neuron's soma potential is `H = Kc * I` with the real combined
//! kernel `Kc[k] = sum_i c_i Re K_i[k]`, so one lane needs the spectrum of
//! `dL/dH` and two correlations: one against `Kc` for `dL/dI` and one
//! against `I` for `dL/dKc`.

use rayon::prelude::*;

use super::grads::{GradientSet, LayerGrads};
use super::{branch_param_grad, SurrogateSpec};
use crate::error::{Error, Result};
use crate::model::{logistic, DrfLayer, Model, NetworkTape};

/// `dL/dH` for one lane and the straight-through adaptive-kernel gradient.
pub(crate) fn spike_lane_backward(
    gs: &[f64],
    h: &[f64],
    v: &[f64],
    spec: &SurrogateSpec,
    v_pre: f64,
    alpha_grad: Option<&mut [f64]>,
    gh: &mut [f64],
) {
    for t in 0..gh.len() {
        gh[t] = gs[t] * spec.grad(h[t] - v[t]);
    }
    if let Some(ga) = alpha_grad {
        // dS/dV_th = -G, dV_th[t]/dalpha_k = P[t-k].
        for (k, acc) in ga.iter_mut().enumerate() {
            let lag = k + 1;
            let mut sum = 0.0;
            for t in lag..gh.len() {
                if h[t - lag] >= v_pre {
                    sum += gh[t];
                }
            }
            *acc -= sum;
        }
    }
}

/// Readout gradients and `dL/dS` of the top hidden layer (`batch x inputs x len`).
pub(crate) fn readout_backward(model: &Model, tape: &NetworkTape, gscores: &[f64], grads: &mut GradientSet) -> Result<Vec<f64>> {
    let top = tape
        .layers
        .last()
        .and_then(|n| n.output.as_ref())
        .ok_or(Error::Tape("output"))?;
    let (batch, inputs, len) = top.shape();
    let r = &model.readout;
    let k = r.classes;
    let lam = r.leak();
    let mut gs_top = vec![0.0; batch * inputs * len];
    let mut g_leak = 0.0;
    let mut gy = vec![0.0; len];
    let mut gu = vec![0.0; len];
    for b in 0..batch {
        let xs = top.sample(b);
        let gsb = &mut gs_top[b * inputs * len..(b + 1) * inputs * len];
        for c in 0..k {
            let o = (b * k + c) * len;
            let u = &tape.readout_u[o..o + len];
            let y = &tape.readout_y[o..o + len];
            let g = gscores[b * k + c] / len as f64;
            let mut next = 0.0;
            for t in (0..len).rev() {
                next = g + lam * next;
                gy[t] = next;
                gu[t] = (1.0 - lam) * next;
                let y_prev = if t > 0 { y[t - 1] } else { 0.0 };
                g_leak += next * (y_prev - u[t]);
            }
            grads.readout.b[c] += gu.iter().sum::<f64>();
            for m in 0..inputs {
                let xm = &xs[m * len..(m + 1) * len];
                grads.readout.w[c * inputs + m] += gu.iter().zip(xm).map(|(a, b)| a * b).sum::<f64>();
                let wm = r.w[c * inputs + m];
                for (acc, g) in gsb[m * len..(m + 1) * len].iter_mut().zip(&gu) {
                    *acc += wm * g;
                }
            }
        }
    }
    grads.readout.leak[0] += g_leak * lam * (1.0 - lam);
    Ok(gs_top)
}

/// Per-sample dense backward: adds `gI x^T` into `gw` and returns `W^T gI` if asked.
pub(crate) fn dense_backward(layer: &DrfLayer, gi: &[f64], x: &[f64], len: usize, gw: &mut [f64], want_gx: bool) -> Option<Vec<f64>> {
    let m_in = layer.inputs;
    for j in 0..layer.neurons {
        let gij = &gi[j * len..(j + 1) * len];
        for m in 0..m_in {
            gw[j * m_in + m] += gij.iter().zip(&x[m * len..(m + 1) * len]).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    if !want_gx {
        return None;
    }
    let mut gx = vec![0.0; m_in * len];
    for j in 0..layer.neurons {
        let gij = &gi[j * len..(j + 1) * len];
        for m in 0..m_in {
            let w = layer.w[j * m_in + m];
            for (acc, g) in gx[m * len..(m + 1) * len].iter_mut().zip(gij) {
                *acc += w * g;
            }
        }
    }
    Some(gx)
}

/// Chains natural-parameter gradients through the reparameterizations.
pub(crate) fn chain_raw(layer: &DrfLayer, g: &mut LayerGrads) {
    for (gt, r) in g.tau.iter_mut().zip(&layer.tau_raw) {
        *gt *= logistic(*r);
    }
    for (go, r) in g.omega.iter_mut().zip(&layer.omega_raw) {
        *go *= 2.0 * r;
    }
    for gg in g.gamma.iter_mut() {
        *gg *= layer.delta;
    }
    for (ga, r) in g.alpha.iter_mut().zip(&layer.alpha_raw) {
        let a = logistic(*r);
        *ga *= a * (1.0 - a);
    }
}

/// Sums per-sample results in sample order so the outcome does not depend
/// on how rayon schedules the work.
fn reduce_in_order(parts: impl IntoIterator<Item = Vec<f64>>, out: &mut [f64]) {
    for part in parts {
        for (o, v) in out.iter_mut().zip(part) {
            *o += v;
        }
    }
}

pub fn parallel_backward(model: &Model, tape: &NetworkTape, gscores: &[f64]) -> Result<GradientSet> {
    let kernels = tape.kernels.as_ref().ok_or(Error::Tape("kernels"))?;
    let plan = &kernels.plan;
    let mut grads = GradientSet::zeros_like(model);
    let mut gs = readout_backward(model, tape, gscores, &mut grads)?;
    for l in (0..model.layers.len()).rev() {
        let layer = &model.layers[l];
        let node = &tape.layers[l];
        let lk = &kernels.layers[l];
        let x = node.input.as_ref().ok_or(Error::Tape("input"))?;
        let h = node.potential.as_ref().ok_or(Error::Tape("potential"))?;
        let v = node.threshold.as_ref().ok_or(Error::Tape("threshold"))?;
        let spectra = node.input_spectra.as_ref().ok_or(Error::Tape("input_spectra"))?;
        let (batch, _, len) = x.shape();
        let nn = layer.neurons;
        let want_gx = l > 0;
        let n_a = layer.alpha_raw.len();
        let per: Vec<_> = (0..batch)
            .into_par_iter()
            .map(|b| {
                let mut gh = vec![0.0; len];
                let mut gi = vec![0.0; nn * len];
                let mut r = vec![0.0; nn * len];
                let mut ga = vec![0.0; n_a];
                let mut gw = vec![0.0; layer.w.len()];
                for j in 0..nn {
                    let lane = (b * nn + j) * len..(b * nn + j + 1) * len;
                    spike_lane_backward(
                        &gs[lane.clone()],
                        &h.values()[lane.clone()],
                        &v.values()[lane],
                        &model.surrogate,
                        model.v_pre,
                        model.train_alpha.then_some(&mut ga[..]),
                        &mut gh,
                    );
                    let spec = plan.spectrum(&gh);
                    gi[j * len..(j + 1) * len].copy_from_slice(&plan.correlate(&spec, &lk.combined_spectra[j]));
                    r[j * len..(j + 1) * len].copy_from_slice(&plan.correlate(&spec, &spectra[b * nn + j]));
                }
                let gx = dense_backward(layer, &gi, x.sample(b), len, &mut gw, want_gx);
                (r, gw, ga, gx)
            })
            .collect();
        let mut lg = LayerGrads {
            w: vec![0.0; layer.w.len()],
            tau: vec![0.0; layer.tau_raw.len()],
            omega: vec![0.0; layer.omega_raw.len()],
            gamma: vec![0.0; layer.gamma_raw.len()],
            c: vec![0.0; layer.c.len()],
            alpha: vec![0.0; n_a],
        };
        let mut g_kc = vec![0.0; nn * len];
        let mut next_gs = if want_gx { vec![0.0; batch * layer.inputs * len] } else { Vec::new() };
        for (b, (r, gw, ga, gx)) in per.into_iter().enumerate() {
            reduce_in_order([r], &mut g_kc);
            reduce_in_order([gw], &mut lg.w);
            reduce_in_order([ga], &mut lg.alpha);
            if let Some(gx) = gx {
                let m = layer.inputs * len;
                next_gs[b * m..(b + 1) * m].copy_from_slice(&gx);
            }
        }
        let nb = layer.branches;
        for j in 0..nn {
            let k = &lk.kernels[j];
            let gk = &g_kc[j * len..(j + 1) * len];
            for i in 0..nb {
                let o = j * nb + i;
                let tau = layer.tau(j, i);
                let bg = branch_param_grad(k.unit_re(i), k.unit_im(i), k.gamma()[i], tau, model.delta, gk, None);
                let c = layer.c[o];
                lg.tau[o] = c * bg.tau;
                lg.omega[o] = c * bg.omega;
                lg.gamma[o] = c * bg.gamma;
                lg.c[o] = k.gamma()[i] * bg.gamma;
            }
        }
        chain_raw(layer, &mut lg);
        grads.layers[l] = lg;
        gs = next_gs;
    }
    Ok(grads)
}
