//! Backpropagation through time over the step-by-step recurrence.
//!
//! For `z[t] = a z[t-1] + gamma I[t]` the complex adjoint obeys
//! `lambda[t] = dL/dH[t] c + conj(a) lambda[t+1]`, from which
//! `dL/da = sum_t conj(z[t-1]) lambda[t]`, `dL/dgamma = sum_t Re lambda[t] I[t]`
//! and `dL/dI[t] = sum_i gamma_i Re lambda_i[t]`.

use num_complex::Complex64;
use rayon::prelude::*;

use super::grads::{GradientSet, LayerGrads};
use super::network::{chain_raw, dense_backward, readout_backward, spike_lane_backward};
use crate::config::Mode;
use crate::error::{Error, Result};
use crate::model::{Model, NetworkTape};
use crate::sequence::RealSequence;

pub const BPTT_MAX_LEN: usize = 512;

/// Reference gradients by sequential forward and explicit reverse unrolling.
pub fn bptt_reference_grad(model: &Model, input: &RealSequence, labels: &[usize]) -> Result<(f64, GradientSet)> {
    if input.len() > BPTT_MAX_LEN {
        return Err(Error::ScaleGuard {
            len: input.len(),
            limit: BPTT_MAX_LEN,
        });
    }
    let (out, grads) = model.loss_and_grad(input, labels, Mode::Sequential)?;
    Ok((out.loss, grads))
}

pub(crate) fn sequential_backward(model: &Model, tape: &NetworkTape, gscores: &[f64]) -> Result<GradientSet> {
    let mut grads = GradientSet::zeros_like(model);
    let mut gs = readout_backward(model, tape, gscores, &mut grads)?;
    let delta = model.delta;
    for l in (0..model.layers.len()).rev() {
        let layer = &model.layers[l];
        let node = &tape.layers[l];
        let x = node.input.as_ref().ok_or(Error::Tape("input"))?;
        let drive = node.drive.as_ref().ok_or(Error::Tape("drive"))?;
        let states = node.states.as_ref().ok_or(Error::Tape("states"))?;
        let h = node.potential.as_ref().ok_or(Error::Tape("potential"))?;
        let v = node.threshold.as_ref().ok_or(Error::Tape("threshold"))?;
        let (batch, _, len) = x.shape();
        let nn = layer.neurons;
        let nb = layer.branches;
        let n_a = layer.alpha_raw.len();
        let want_gx = l > 0;
        let params: Vec<_> = (0..nn).map(|j| layer.dendritic(j)).collect::<Result<_>>()?;

        let per: Vec<_> = (0..batch)
            .into_par_iter()
            .map(|b| {
                let mut gh = vec![0.0; len];
                let mut gi = vec![0.0; nn * len];
                let mut ga_alpha = vec![0.0; n_a];
                let mut g_a = vec![Complex64::new(0.0, 0.0); nn * nb];
                let mut g_gamma = vec![0.0; nn * nb];
                let mut g_c = vec![0.0; nn * nb];
                let mut gw = vec![0.0; layer.w.len()];
                let mut lam = vec![Complex64::new(0.0, 0.0); nb];
                for j in 0..nn {
                    let p = &params[j];
                    let a = p.transitions(delta);
                    let lane = (b * nn + j) * len..(b * nn + j + 1) * len;
                    spike_lane_backward(
                        &gs[lane.clone()],
                        &h.values()[lane.clone()],
                        &v.values()[lane.clone()],
                        &model.surrogate,
                        model.v_pre,
                        model.train_alpha.then_some(&mut ga_alpha[..]),
                        &mut gh,
                    );
                    let ij = &drive.values()[lane];
                    let c = &layer.c[j * nb..(j + 1) * nb];
                    lam.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                    let gij = &mut gi[j * len..(j + 1) * len];
                    for t in (0..len).rev() {
                        let mut acc = 0.0;
                        for i in 0..nb {
                            let zr = states.lane_re(b, j, i);
                            let zi = states.lane_im(b, j, i);
                            lam[i] = gh[t] * c[i] + a[i].conj() * lam[i];
                            let o = j * nb + i;
                            if t > 0 {
                                g_a[o] += Complex64::new(zr[t - 1], -zi[t - 1]) * lam[i];
                            }
                            g_gamma[o] += lam[i].re * ij[t];
                            g_c[o] += gh[t] * zr[t];
                            acc += p.gamma()[i] * lam[i].re;
                        }
                        gij[t] = acc;
                    }
                }
                let gx = dense_backward(layer, &gi, x.sample(b), len, &mut gw, want_gx);
                (g_a, g_gamma, g_c, gw, ga_alpha, gx)
            })
            .collect();

        let mut lg = LayerGrads {
            w: vec![0.0; layer.w.len()],
            tau: vec![0.0; nn * nb],
            omega: vec![0.0; nn * nb],
            gamma: vec![0.0; nn * nb],
            c: vec![0.0; nn * nb],
            alpha: vec![0.0; n_a],
        };
        let mut g_a_total = vec![Complex64::new(0.0, 0.0); nn * nb];
        let mut next_gs = if want_gx { vec![0.0; batch * layer.inputs * len] } else { Vec::new() };
        for (b, (g_a, g_gamma, g_c, gw, ga_alpha, gx)) in per.into_iter().enumerate() {
            for (acc, v) in g_a_total.iter_mut().zip(g_a) {
                *acc += v;
            }
            for (acc, v) in lg.gamma.iter_mut().zip(g_gamma) {
                *acc += v;
            }
            for (acc, v) in lg.c.iter_mut().zip(g_c) {
                *acc += v;
            }
            for (acc, v) in lg.w.iter_mut().zip(gw) {
                *acc += v;
            }
            for (acc, v) in lg.alpha.iter_mut().zip(ga_alpha) {
                *acc += v;
            }
            if let Some(gx) = gx {
                let m = layer.inputs * len;
                next_gs[b * m..(b + 1) * m].copy_from_slice(&gx);
            }
        }
        for j in 0..nn {
            let a = params[j].transitions(delta);
            for i in 0..nb {
                let o = j * nb + i;
                let tau = params[j].tau()[i];
                let w = a[i].conj() * g_a_total[o];
                lg.tau[o] = delta / (tau * tau) * w.re;
                lg.omega[o] = delta * w.im;
            }
        }
        chain_raw(layer, &mut lg);
        grads.layers[l] = lg;
        gs = next_gs;
    }
    Ok(grads)
}
