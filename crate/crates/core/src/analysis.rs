//! Frequency responses, measured bandwidth, spike statistics and the
//! theoretical energy model.
//!
//! The D-RF response is the weighted sum of branch magnitudes, not the
//! magnitude of a summed complex transfer function. Negative weights can
//! make it negative; bandwidth is measured on the aggregate clamped at 0.

use num_complex::Complex64;

use crate::dynamics::{drf_charge_step, DendriticParams};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::sequence::SpikeTrain;

/// Default number of points on the `[0, pi]` grid.
pub const OMEGA_GRID_POINTS: usize = 4096;

/// `|delta / (1 - exp(delta b + i (delta omega - Omega)))|` with `Omega` in radians per step.
pub fn rf_response_closed_form(b: f64, omega: f64, delta: f64, big_omega: f64) -> f64 {
    let e = Complex64::new(delta * b, delta * omega - big_omega).exp();
    delta / (Complex64::new(1.0, 0.0) - e).norm()
}

/// `points` uniformly spaced values over `[0, pi]`.
pub fn omega_grid(points: usize) -> Vec<f64> {
    assert!(points >= 2);
    let step = std::f64::consts::PI / (points - 1) as f64;
    (0..points).map(|g| g as f64 * step).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyResponse {
    pub omega_grid: Vec<f64>,
    /// One curve per branch.
    pub branches: Vec<Vec<f64>>,
    /// `sum_i c_i * branches[i]`, unclamped.
    pub aggregate: Vec<f64>,
}

/// Magnitude response of branch `i` scaled by `|gamma_i| / delta`, which
/// reduces to the RF closed form when `gamma_i = delta`.
pub fn branch_response(p: &DendriticParams, i: usize, delta: f64, omega_grid: &[f64]) -> Vec<f64> {
    let scale = p.gamma()[i].abs() / delta;
    omega_grid
        .iter()
        .map(|&w| scale * rf_response_closed_form(-1.0 / p.tau()[i], p.omega()[i], delta, w))
        .collect()
}

pub fn drf_response(p: &DendriticParams, c: &[f64], delta: f64, omega_grid: &[f64]) -> Result<FrequencyResponse> {
    if c.len() != p.n() {
        return Err(Error::Shape(format!("{} weights for {} branches", c.len(), p.n())));
    }
    if omega_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParam {
            field: "omega_grid",
            reason: "must be strictly increasing".into(),
        });
    }
    let branches: Vec<Vec<f64>> = (0..p.n()).map(|i| branch_response(p, i, delta, omega_grid)).collect();
    let mut aggregate = vec![0.0; omega_grid.len()];
    for (ci, curve) in c.iter().zip(&branches) {
        for (a, m) in aggregate.iter_mut().zip(curve) {
            *a += ci * m;
        }
    }
    Ok(FrequencyResponse {
        omega_grid: omega_grid.to_vec(),
        branches,
        aggregate,
    })
}

/// Peak of a branch's magnitude response, reached at `Omega = delta omega`.
pub fn branch_peak_gain(tau: f64, gamma: f64, delta: f64) -> f64 {
    gamma.abs() / (1.0 - (-delta / tau).exp())
}

/// Root-sum-square of the real part of a branch's impulse response, i.e. its
/// output RMS under unit-variance white input.
pub fn branch_noise_gain(tau: f64, omega: f64, gamma: f64, delta: f64) -> f64 {
    let r2 = (-2.0 * delta / tau).exp();
    let rot = Complex64::from_polar(r2, 2.0 * delta * omega);
    let energy = 0.5 / (1.0 - r2) + 0.5 * (1.0 / (1.0 - rot)).re;
    gamma.abs() * energy.sqrt()
}

/// Weights giving every branch a peak of `1/n`, so the total gain budget is
/// the same for any branch count.
pub fn unit_budget_weights(p: &DendriticParams, delta: f64) -> Vec<f64> {
    let n = p.n() as f64;
    (0..p.n())
        .map(|i| 1.0 / (n * branch_peak_gain(p.tau()[i], p.gamma()[i], delta)))
        .collect()
}

/// Steady-state gain of branch `i` under a unit cosine at `big_omega`
/// radians per step, measured by lock-in demodulation of the simulated
/// state after `warmup` steps.
pub fn empirical_branch_response(p: &DendriticParams, i: usize, delta: f64, big_omega: f64, len: usize, warmup: usize) -> f64 {
    assert!(warmup < len);
    let single = DendriticParams::new(vec![p.tau()[i]], vec![p.omega()[i]], vec![p.gamma()[i]]).expect("valid branch");
    let mut z = vec![Complex64::new(0.0, 0.0)];
    let mut acc = Complex64::new(0.0, 0.0);
    for t in 0..len {
        let phase = big_omega * t as f64;
        z = drf_charge_step(&z, phase.cos(), &single, delta);
        if t >= warmup {
            acc += z[0] * Complex64::new(phase.cos(), -phase.sin());
        }
    }
    // cos = (e^{i W t} + e^{-i W t}) / 2, so the demodulated mean is H(W) / 2.
    let gain = 2.0 * acc.norm() / (len - warmup) as f64;
    gain * delta / p.gamma()[i].abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bandwidth {
    /// Closed `[lo, hi]` intervals in radians per step.
    pub intervals: Vec<(f64, f64)>,
    pub width: f64,
}

/// Union of grid cells whose clamped aggregate magnitude is at least
/// `level * peak`. Each selected grid point contributes one grid spacing.
pub fn measured_bandwidth(resp: &FrequencyResponse, level: f64) -> Result<Bandwidth> {
    let mags: Vec<f64> = resp.aggregate.iter().map(|m| m.max(0.0)).collect();
    let peak = mags.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(Error::DegenerateResponse);
    }
    let grid = &resp.omega_grid;
    let spacing = (grid[grid.len() - 1] - grid[0]) / (grid.len() - 1) as f64;
    let cut = level * peak;
    let mut intervals = Vec::new();
    let mut count = 0usize;
    let mut g = 0;
    while g < mags.len() {
        if mags[g] >= cut {
            let start = g;
            while g + 1 < mags.len() && mags[g + 1] >= cut {
                g += 1;
            }
            count += g - start + 1;
            intervals.push((grid[start] - 0.5 * spacing, grid[g] + 0.5 * spacing));
        }
        g += 1;
    }
    Ok(Bandwidth {
        intervals,
        width: count as f64 * spacing,
    })
}

/// Default half-power level.
pub fn half_power() -> f64 {
    std::f64::consts::FRAC_1_SQRT_2
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LayerSpikes {
    pub spikes: u64,
    pub slots: u64,
}

impl LayerSpikes {
    pub fn rate(&self) -> f64 {
        if self.slots == 0 {
            0.0
        } else {
            self.spikes as f64 / self.slots as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpikeStats {
    pub per_layer: Vec<LayerSpikes>,
}

impl SpikeStats {
    pub fn spikes(&self) -> u64 {
        self.per_layer.iter().map(|l| l.spikes).sum()
    }

    pub fn slots(&self) -> u64 {
        self.per_layer.iter().map(|l| l.slots).sum()
    }

    /// `spikes / (B N L)` over all layers.
    pub fn rate(&self) -> f64 {
        let slots = self.slots();
        if slots == 0 {
            0.0
        } else {
            self.spikes() as f64 / slots as f64
        }
    }

    /// Adds counts layer by layer; an empty accumulator adopts `other`'s layout.
    pub fn accumulate(&mut self, other: &SpikeStats) {
        if self.per_layer.is_empty() {
            self.per_layer = vec![LayerSpikes::default(); other.per_layer.len()];
        }
        for (a, b) in self.per_layer.iter_mut().zip(&other.per_layer) {
            a.spikes += b.spikes;
            a.slots += b.slots;
        }
    }
}

/// Spike counts per layer. Binary values are guaranteed by [`SpikeTrain`].
pub fn spike_stats(layers: &[&SpikeTrain]) -> Result<SpikeStats> {
    Ok(SpikeStats {
        per_layer: layers
            .iter()
            .map(|t| {
                let (b, n, l) = t.shape();
                LayerSpikes {
                    spikes: t.count(),
                    slots: (b * n * l) as u64,
                }
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyConstants {
    /// Joules per accumulate.
    pub e_ac: f64,
    /// Joules per multiply-accumulate.
    pub e_mac: f64,
}

impl Default for EnergyConstants {
    fn default() -> Self {
        Self {
            e_ac: 0.9e-12,
            e_mac: 4.6e-12,
        }
    }
}

/// Fan-out of each spiking layer and the count of real-valued MACs.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub fan_out: Vec<usize>,
    pub dense_macs: u64,
}

impl Topology {
    /// Spikes of layer `l` feed layer `l + 1` (or the readout); the first
    /// dense projection sees real inputs and costs full MACs.
    pub fn of_model(model: &Model, samples: usize, len: usize) -> Self {
        let mut fan_out: Vec<usize> = model.layers.iter().skip(1).map(|l| l.neurons).collect();
        fan_out.push(model.readout.classes);
        let first = &model.layers[0];
        Self {
            fan_out,
            dense_macs: (samples * len * first.inputs * first.neurons) as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerEnergy {
    pub spikes: u64,
    pub synaptic_ops: u64,
    pub energy_j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyReport {
    pub spike_rate: f64,
    pub synaptic_ops: u64,
    pub dense_macs: u64,
    pub energy_j: f64,
    pub per_layer: Vec<LayerEnergy>,
}

/// `E = sum_l spikes_l * fan_out_l * E_AC + dense_macs * E_MAC`.
pub fn energy_estimate(stats: &SpikeStats, topology: &Topology, constants: &EnergyConstants) -> Result<EnergyReport> {
    if !(constants.e_ac > 0.0 && constants.e_mac > 0.0) {
        return Err(Error::InvalidParam {
            field: "energy constants",
            reason: "must be > 0".into(),
        });
    }
    if stats.per_layer.len() != topology.fan_out.len() {
        return Err(Error::Shape(format!(
            "{} spiking layers but {} fan-out entries",
            stats.per_layer.len(),
            topology.fan_out.len()
        )));
    }
    let per_layer: Vec<LayerEnergy> = stats
        .per_layer
        .iter()
        .zip(&topology.fan_out)
        .map(|(l, &f)| {
            let ops = l.spikes * f as u64;
            LayerEnergy {
                spikes: l.spikes,
                synaptic_ops: ops,
                energy_j: ops as f64 * constants.e_ac,
            }
        })
        .collect();
    let synaptic_ops = per_layer.iter().map(|l| l.synaptic_ops).sum();
    let energy_j = per_layer.iter().map(|l| l.energy_j).sum::<f64>() + topology.dense_macs as f64 * constants.e_mac;
    Ok(EnergyReport {
        spike_rate: stats.rate(),
        synaptic_ops,
        dense_macs: topology.dense_macs,
        energy_j,
        per_layer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_rng;
    use crate::sequence::TimeGrid;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// `|sum_{k<=K} delta exp(k delta b) exp(i k (delta omega - Omega))|`.
    fn series(b: f64, omega: f64, delta: f64, w: f64) -> f64 {
        let terms = ((12.0 * 10f64.ln()) / (-delta * b)).ceil() as usize + 1;
        let mut re = 0.0;
        let mut im = 0.0;
        for k in 0..terms {
            let mag = delta * (k as f64 * delta * b).exp();
            let ph = k as f64 * (delta * omega - w);
            re += mag * ph.cos();
            im += mag * ph.sin();
        }
        re.hypot(im)
    }

    #[test]
    fn closed_form_impulse_limit() {
        for w in omega_grid(101) {
            assert!((rf_response_closed_form(-1e3, 2.0, 1.0, w) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn closed_form_at_resonance() {
        let (b, omega, delta) = (-2.0, 30.0, 0.01);
        let got = rf_response_closed_form(b, omega, delta, delta * omega);
        let expect = delta / (1.0 - (delta * b).exp());
        assert!((got - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn closed_form_matches_series_on_random_cases() {
        let mut rng = make_rng(40);
        for _ in 0..200 {
            let delta = rng.uniform_in(0.001, 0.1);
            let b = -rng.uniform_in(0.5, 50.0);
            let omega = rng.uniform_in(0.0, PI / delta);
            let w = rng.uniform_in(0.0, PI);
            let a = rf_response_closed_form(b, omega, delta, w);
            let s = series(b, omega, delta, w);
            assert!((a - s).abs() <= 1e-9 * s, "{a} vs {s}");
        }
    }

    #[test]
    fn single_branch_superposition_and_identity() {
        let p = DendriticParams::new(vec![2.0], vec![40.0], vec![0.01]).unwrap();
        let g = omega_grid(257);
        let r = drf_response(&p, &[1.0], 0.01, &g).unwrap();
        for (k, w) in g.iter().enumerate() {
            assert_eq!(r.aggregate[k], rf_response_closed_form(-0.5, 40.0, 0.01, *w));
        }
    }

    #[test]
    fn two_resonances_give_two_local_maxima() {
        let delta = 0.01;
        let p = DendriticParams::new(vec![3.0, 3.0], vec![30.0, 200.0], vec![delta, delta]).unwrap();
        let g = omega_grid(OMEGA_GRID_POINTS);
        let r = drf_response(&p, &[1.0, 1.0], delta, &g).unwrap();
        let maxima: Vec<f64> = (1..g.len() - 1)
            .filter(|&k| r.aggregate[k] > r.aggregate[k - 1] && r.aggregate[k] > r.aggregate[k + 1])
            .map(|k| g[k])
            .collect();
        let spacing = g[1];
        for target in [0.3, 2.0] {
            assert!(maxima.iter().any(|m| (m - target).abs() <= 2.0 * spacing), "{maxima:?}");
        }
    }

    #[test]
    fn empirical_gain_matches_closed_form_at_resonance() {
        let delta = 0.01;
        let p = DendriticParams::new(vec![0.5], vec![100.0], vec![delta]).unwrap();
        let w = delta * 100.0;
        let emp = empirical_branch_response(&p, 0, delta, w, 8192, 2048);
        let ana = rf_response_closed_form(-2.0, 100.0, delta, w);
        assert!((emp - ana).abs() < 0.02 * ana, "{emp} vs {ana}");
    }

    #[test]
    fn single_branch_band_is_one_interval() {
        let delta = 0.01;
        let p = DendriticParams::new(vec![1.0], vec![150.0], vec![delta]).unwrap();
        let r = drf_response(&p, &[1.0], delta, &omega_grid(OMEGA_GRID_POINTS)).unwrap();
        let bw = measured_bandwidth(&r, half_power()).unwrap();
        assert_eq!(bw.intervals.len(), 1);
        let (lo, hi) = bw.intervals[0];
        assert!(lo <= 1.5 && 1.5 <= hi);
    }

    #[test]
    fn full_level_selects_the_peak_bin() {
        let p = DendriticParams::new(vec![1.0], vec![150.0], vec![0.01]).unwrap();
        let g = omega_grid(1000);
        let r = drf_response(&p, &[1.0], 0.01, &g).unwrap();
        let bw = measured_bandwidth(&r, 1.0).unwrap();
        assert!((bw.width - g[1]).abs() < 1e-15);
    }

    #[test]
    fn zero_response_is_degenerate() {
        let p = DendriticParams::new(vec![1.0], vec![1.0], vec![0.0]).unwrap();
        let r = drf_response(&p, &[1.0], 0.01, &omega_grid(16)).unwrap();
        assert!(matches!(measured_bandwidth(&r, 0.5), Err(Error::DegenerateResponse)));
    }

    #[test]
    fn narrow_band_peak_location() {
        let delta = 0.01;
        let g = omega_grid(OMEGA_GRID_POINTS);
        for (tau, omega) in [(1.0, 50.0), (10.0, 200.0), (0.1, 250.0)] {
            let p = DendriticParams::new(vec![tau], vec![omega], vec![delta]).unwrap();
            let r = drf_response(&p, &[1.0], delta, &g).unwrap();
            let arg = (0..g.len()).max_by(|&a, &b| r.aggregate[a].total_cmp(&r.aggregate[b])).unwrap();
            assert!((g[arg] - delta * omega).abs() <= g[1], "tau={tau} omega={omega}");
        }
    }

    #[test]
    fn more_branches_cover_more_spectrum() {
        let grid = TimeGrid::new(0.01, 512).unwrap();
        let g = omega_grid(OMEGA_GRID_POINTS);
        let mut rng = make_rng(41);
        let width = |n: usize, rng: &mut crate::rng::Rng| {
            let p = DendriticParams::init(n, &grid, rng);
            let c = unit_budget_weights(&p, grid.delta());
            measured_bandwidth(&drf_response(&p, &c, grid.delta(), &g).unwrap(), half_power())
                .unwrap()
                .width
        };
        let w8 = width(8, &mut rng);
        let w1 = width(1, &mut rng);
        assert!(w8 > w1, "{w8} vs {w1}");
    }

    proptest! {
        #[test]
        fn response_is_weighted_sum(c in proptest::collection::vec(-2.0f64..2.0, 3), seed in 0u64..500) {
            let grid = TimeGrid::new(0.01, 256).unwrap();
            let p = DendriticParams::init(3, &grid, &mut make_rng(seed));
            let g = omega_grid(128);
            let r = drf_response(&p, &c, 0.01, &g).unwrap();
            for k in 0..g.len() {
                let single: f64 = (0..3).map(|i| c[i] * branch_response(&p, i, 0.01, &g)[k]).sum();
                prop_assert!((r.aggregate[k] - single).abs() <= 1e-12 * single.abs().max(1e-300));
            }
        }

        #[test]
        fn energy_is_monotone(a in 0u64..10_000, b in 0u64..10_000, extra in 0u64..1000, macs in 0u64..100_000) {
            let topo = Topology { fan_out: vec![16, 4], dense_macs: macs };
            let k = EnergyConstants::default();
            let stats = |x: u64, y: u64| SpikeStats { per_layer: vec![
                LayerSpikes { spikes: x, slots: 20_000 },
                LayerSpikes { spikes: y, slots: 20_000 },
            ] };
            let e0 = energy_estimate(&stats(a, b), &topo, &k).unwrap().energy_j;
            prop_assert!(energy_estimate(&stats(a + extra, b), &topo, &k).unwrap().energy_j >= e0);
            prop_assert!(energy_estimate(&stats(a, b + extra), &topo, &k).unwrap().energy_j >= e0);
        }
    }

    #[test]
    fn spike_rates() {
        let zeros = SpikeTrain::zeros(2, 3, 4).unwrap();
        assert_eq!(spike_stats(&[&zeros]).unwrap().rate(), 0.0);
        let ones = SpikeTrain::new(2, 3, 4, vec![1; 24]).unwrap();
        assert_eq!(spike_stats(&[&ones]).unwrap().rate(), 1.0);
        let mut rng = make_rng(42);
        let bits: Vec<u8> = (0..100_000).map(|_| (rng.uniform() < 0.1) as u8).collect();
        let t = SpikeTrain::new(10, 100, 100, bits).unwrap();
        let r = spike_stats(&[&t]).unwrap().rate();
        assert!((0.094..=0.106).contains(&r), "{r}");
    }

    #[test]
    fn energy_basics() {
        let k = EnergyConstants::default();
        let topo = Topology { fan_out: vec![8], dense_macs: 0 };
        let none = SpikeStats { per_layer: vec![LayerSpikes { spikes: 0, slots: 10 }] };
        assert_eq!(energy_estimate(&none, &topo, &k).unwrap().energy_j, 0.0);
        let one = SpikeStats { per_layer: vec![LayerSpikes { spikes: 5, slots: 10 }] };
        let two = SpikeStats { per_layer: vec![LayerSpikes { spikes: 10, slots: 10 }] };
        let e1 = energy_estimate(&one, &topo, &k).unwrap().energy_j;
        let e2 = energy_estimate(&two, &topo, &k).unwrap().energy_j;
        assert_eq!(e2, 2.0 * e1);
        assert!(energy_estimate(&one, &topo, &EnergyConstants { e_ac: 0.0, e_mac: 1.0 }).is_err());
    }
}
