//! Multi-tone classification.
//!
//! Class `c` owns tones `q = j K + c` (`j < tones_per_class`) out of `K T`
//! tones spread evenly over DFT bins `[L/32, 7L/16]`, so classes interleave
//! across the band and no single narrow filter separates them all.

use std::f64::consts::PI;

use super::{LabeledSequenceBatch, TaskSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::sequence::RealSequence;

/// DFT bins of each class's tones.
pub fn class_bins(spec: &TaskSpec) -> Result<Vec<Vec<usize>>> {
    spec.validate()?;
    let k = spec.classes;
    let total = k * spec.tones_per_class;
    let l = spec.length as f64;
    let (lo, hi) = (l / 32.0, 7.0 * l / 16.0);
    let bins: Vec<usize> = (0..total)
        .map(|q| {
            let f = if total == 1 { lo } else { lo + q as f64 * (hi - lo) / (total - 1) as f64 };
            f.round() as usize
        })
        .collect();
    if bins.windows(2).any(|w| w[0] == w[1]) || bins[0] == 0 || 2 * bins[total - 1] >= spec.length {
        return Err(Error::TaskSpec(format!(
            "{total} tones do not fit as distinct bins in (0, L/2) for L = {}",
            spec.length
        )));
    }
    Ok((0..k)
        .map(|c| (0..spec.tones_per_class).map(|j| bins[j * k + c]).collect())
        .collect())
}

/// `count` samples with labels `i mod K` in shuffled order.
pub fn gen_multitone(spec: &TaskSpec, count: usize, rng: &mut Rng) -> Result<LabeledSequenceBatch> {
    let bins = class_bins(spec)?;
    let l = spec.length;
    let mut labels: Vec<usize> = (0..count).map(|i| i % spec.classes).collect();
    rng.shuffle(&mut labels);
    let mut values = Vec::with_capacity(count * l);
    for &label in &labels {
        let phases: Vec<f64> = bins[label].iter().map(|_| rng.uniform_in(0.0, 2.0 * PI)).collect();
        for t in 0..l {
            let mut v = 0.0;
            for (&bin, &phase) in bins[label].iter().zip(&phases) {
                // Reduce the phase index exactly before converting to radians.
                let idx = (bin * t) % l;
                v += (2.0 * PI * idx as f64 / l as f64 + phase).sin();
            }
            values.push(spec.amplitude * v);
        }
        if spec.noise > 0.0 {
            let start = values.len() - l;
            for v in &mut values[start..] {
                *v += spec.noise * rng.normal();
            }
        }
    }
    LabeledSequenceBatch::new(RealSequence::new(count, 1, l, values)?, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TaskKind;
    use crate::rng::make_rng;

    fn spec(classes: usize, noise: f64) -> TaskSpec {
        TaskSpec {
            kind: TaskKind::Multitone,
            length: 512,
            classes,
            tones_per_class: 3,
            amplitude: 1.0,
            noise,
            train_size: 100,
            test_size: 10,
            perm_seed: 0,
        }
    }

    /// Energy of each DFT bin up to L/2, by direct summation.
    fn dft_energy(x: &[f64]) -> Vec<f64> {
        let l = x.len();
        (0..=l / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * ((k * t) % l) as f64 / l as f64;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    #[test]
    fn class_sets_are_disjoint() {
        let bins = class_bins(&spec(4, 0.1)).unwrap();
        let mut all: Vec<usize> = bins.concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 12);
        assert!(all.iter().all(|&b| b > 0 && b < 256));
    }

    #[test]
    fn energy_sits_in_class_bins() {
        let s = spec(2, 0.0);
        let bins = class_bins(&s).unwrap();
        let batch = gen_multitone(&s, 6, &mut make_rng(50)).unwrap();
        for (i, &label) in batch.labels.iter().enumerate() {
            let e = dft_energy(batch.inputs.sample(i));
            let total: f64 = e.iter().sum();
            let own: f64 = bins[label].iter().map(|&b| e[b]).sum();
            assert!(own > 0.95 * total, "{own} of {total}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let s = spec(4, 0.1);
        let a = gen_multitone(&s, 20, &mut make_rng(51)).unwrap();
        let b = gen_multitone(&s, 20, &mut make_rng(51)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn classes_are_balanced() {
        let s = spec(4, 0.1);
        let batch = gen_multitone(&s, 103, &mut make_rng(52)).unwrap();
        let mut counts = [0usize; 4];
        batch.labels.iter().for_each(|&l| counts[l] += 1);
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
    }

    #[test]
    fn zero_amplitude_rejected() {
        let mut s = spec(4, 0.1);
        s.amplitude = 0.0;
        assert!(gen_multitone(&s, 4, &mut make_rng(53)).is_err());
    }

    #[test]
    fn crowded_band_rejected() {
        let mut s = spec(8, 0.1);
        s.length = 16;
        assert!(matches!(class_bins(&s), Err(Error::TaskSpec(_))));
    }
}
