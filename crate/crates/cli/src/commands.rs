use std::fs;
use std::path::Path;

use drf_core::analysis::{drf_response, energy_estimate, measured_bandwidth, omega_grid, EnergyConstants, FrequencyResponse, Topology};
use drf_core::checkpoint::load_checkpoint;
use drf_core::report::{write_csv, MetricsWriter};
use drf_core::tasks::load_task;
use drf_core::trainer::{evaluate, Trainer};
use drf_core::{make_rng, ConfigError, Error, Mode, Model, RealSequence, RunConfig};
use serde::Serialize;

use crate::{apply_overrides, resolve_config, rundir, CliError, CliResult, Common};

pub fn train(common: &Common, cfg: RunConfig) -> CliResult<()> {
    let data = load_task(&cfg, &make_rng(cfg.seed))?;
    let mut tr = Trainer::new(&cfg, data.train.inputs.channels())?;
    let dir = rundir::create(&common.out, "train", &cfg)?;
    println!("{} trainable parameters", tr.model.parameter_count());
    let mut metrics = MetricsWriter::create(dir.join("metrics.csv"))?;
    match tr.fit(&data, Some(&mut metrics)) {
        Ok(rows) => {
            if let Some(last) = rows.iter().rev().find(|r| r.split == "test") {
                println!(
                    "epoch {}: test loss {:.4}, acc {:.4}, spike rate {:.4}",
                    last.epoch, last.loss, last.acc, last.spike_rate
                );
            }
        }
        Err(e @ Error::NumericAbort { .. }) => {
            fs::write(dir.join("abort.txt"), format!("{e}\n")).map_err(Error::from)?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    }
    tr.save(dir.join("model.ckpt"))?;
    println!("{}", dir.display());
    Ok(())
}

/// Model and config from a checkpoint, or a fresh model from the config.
fn model_for(common: &Common, checkpoint: Option<&Path>) -> CliResult<(RunConfig, Model)> {
    match checkpoint {
        Some(path) => {
            let tr = load_checkpoint(path)?;
            let cfg = apply_overrides(&tr.config, common)?;
            Ok((cfg, tr.model))
        }
        None => {
            let cfg = resolve_config(common)?;
            let tr = Trainer::new(&cfg, 1)?;
            Ok((cfg, tr.model))
        }
    }
}

fn check_index(model: &Model, layer: usize, neuron: usize) -> CliResult<()> {
    let Some(l) = model.layers.get(layer) else {
        return Err(CliError::Usage(format!("layer {layer} out of range (model has {})", model.layers.len())));
    };
    if neuron >= l.neurons {
        return Err(CliError::Usage(format!("neuron {neuron} out of range (layer has {})", l.neurons)));
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalRow {
    split: String,
    loss: f64,
    acc: f64,
    spike_rate: f64,
}

#[derive(Serialize)]
struct EnergyRow {
    layer: String,
    spikes: u64,
    synaptic_ops: u64,
    dense_macs: u64,
    energy_j: f64,
}

pub fn eval(common: &Common, checkpoint: &Path) -> CliResult<()> {
    let (cfg, model) = model_for(common, Some(checkpoint))?;
    let data = load_task(&cfg, &make_rng(cfg.seed))?;
    let dir = rundir::create(&common.out, "eval", &cfg)?;
    let m = evaluate(&model, &data.test, cfg.optim.batch_size, cfg.optim.mode)?;
    write_csv(
        dir.join("eval.csv"),
        &[EvalRow {
            split: "test".into(),
            loss: m.loss,
            acc: m.accuracy,
            spike_rate: m.spike_rate,
        }],
    )?;
    let topo = Topology::of_model(&model, data.test.len(), cfg.task.length);
    let report = energy_estimate(&m.spikes, &topo, &EnergyConstants::default())?;
    let mut rows: Vec<EnergyRow> = report
        .per_layer
        .iter()
        .enumerate()
        .map(|(i, l)| EnergyRow {
            layer: i.to_string(),
            spikes: l.spikes,
            synaptic_ops: l.synaptic_ops,
            dense_macs: 0,
            energy_j: l.energy_j,
        })
        .collect();
    rows.push(EnergyRow {
        layer: "total".into(),
        spikes: m.spikes.spikes(),
        synaptic_ops: report.synaptic_ops,
        dense_macs: report.dense_macs,
        energy_j: report.energy_j,
    });
    write_csv(dir.join("energy.csv"), &rows)?;
    println!("test loss {:.4}, acc {:.4}, spike rate {:.4}", m.loss, m.accuracy, m.spike_rate);
    println!(
        "energy {:.4e} J over {} samples ({} synaptic ops, {} dense MACs)",
        report.energy_j,
        data.test.len(),
        report.synaptic_ops,
        report.dense_macs
    );
    println!("{}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct ResponseRow<'a> {
    #[serde(rename = "Omega")]
    omega: f64,
    curve: &'a str,
    magnitude: f64,
}

#[derive(Serialize)]
struct BandwidthRow {
    curve: String,
    width: f64,
    intervals: usize,
}

pub fn analyze(common: &Common, checkpoint: Option<&Path>, layer: usize, neuron: usize, points: usize, level: f64) -> CliResult<()> {
    let (cfg, model) = model_for(common, checkpoint)?;
    check_index(&model, layer, neuron)?;
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::from(ConfigError::InvalidValue {
            field: "level".into(),
            reason: format!("must lie in (0, 1], got {level}"),
        })
        .into());
    }
    let l = &model.layers[layer];
    let p = l.dendritic(neuron)?;
    let n = l.branches;
    let c = &l.c[neuron * n..(neuron + 1) * n];
    let grid = omega_grid(points);
    let resp = drf_response(&p, c, model.delta, &grid)?;
    let dir = rundir::create(&common.out, "analyze", &cfg)?;

    let names: Vec<String> = (0..n).map(|i| format!("branch_{i}")).chain(["aggregate".to_string()]).collect();
    let mut rows = Vec::with_capacity(grid.len() * (n + 1));
    for (k, &omega) in grid.iter().enumerate() {
        for (i, curve) in resp.branches.iter().enumerate() {
            rows.push(ResponseRow {
                omega,
                curve: &names[i],
                magnitude: curve[k],
            });
        }
        rows.push(ResponseRow {
            omega,
            curve: &names[n],
            magnitude: resp.aggregate[k],
        });
    }
    write_csv(dir.join("response.csv"), &rows)?;

    let mut bw = Vec::with_capacity(n + 1);
    for (i, curve) in resp.branches.iter().enumerate() {
        let single = FrequencyResponse {
            omega_grid: grid.clone(),
            branches: vec![curve.clone()],
            aggregate: curve.clone(),
        };
        let b = measured_bandwidth(&single, level)?;
        bw.push(BandwidthRow {
            curve: names[i].clone(),
            width: b.width,
            intervals: b.intervals.len(),
        });
    }
    let agg = measured_bandwidth(&resp, level)?;
    bw.push(BandwidthRow {
        curve: "aggregate".into(),
        width: agg.width,
        intervals: agg.intervals.len(),
    });
    write_csv(dir.join("bandwidth.csv"), &bw)?;
    for row in &bw {
        println!("{:>10}: width {:.4} rad/step in {} interval(s)", row.curve, row.width, row.intervals);
    }
    println!("{}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct TraceRow {
    t: usize,
    branch: usize,
    re: f64,
    im: f64,
    #[serde(rename = "H")]
    h: f64,
    #[serde(rename = "V_th")]
    v_th: f64,
    spike: u8,
}

pub fn inspect(common: &Common, checkpoint: Option<&Path>, layer: usize, neuron: usize, sample: usize, zero: bool) -> CliResult<()> {
    let (cfg, model) = model_for(common, checkpoint)?;
    check_index(&model, layer, neuron)?;
    let len = cfg.task.length;
    let input = if zero {
        RealSequence::zeros(1, model.input_channels(), len)?
    } else {
        let data = load_task(&cfg, &make_rng(cfg.seed))?;
        if sample >= data.test.len() {
            return Err(CliError::Usage(format!("sample {sample} out of range (test split has {})", data.test.len())));
        }
        data.test.select(&[sample])?.inputs
    };
    let pass = model.forward(&input, Mode::Sequential)?;
    let node = &pass.tape.layers[layer];
    let missing = |what| CliError::Core(Error::Tape(what));
    let states = node.states.as_ref().ok_or_else(|| missing("states"))?;
    let h = node.potential.as_ref().ok_or_else(|| missing("potential"))?.lane(0, neuron);
    let v = node.threshold.as_ref().ok_or_else(|| missing("threshold"))?.lane(0, neuron);
    let s = node.output.as_ref().ok_or_else(|| missing("output"))?.lane(0, neuron);
    let n = model.layers[layer].branches;
    let mut rows = Vec::with_capacity(len * n);
    for t in 0..len {
        for i in 0..n {
            rows.push(TraceRow {
                t,
                branch: i,
                re: states.lane_re(0, neuron, i)[t],
                im: states.lane_im(0, neuron, i)[t],
                h: h[t],
                v_th: v[t],
                spike: (s[t] != 0.0) as u8,
            });
        }
    }
    let dir = rundir::create(&common.out, "inspect", &cfg)?;
    write_csv(dir.join("trace.csv"), &rows)?;
    let spikes = s.iter().filter(|&&x| x != 0.0).count();
    println!("layer {layer} neuron {neuron}: {spikes} spikes over {len} steps");
    println!("{}", dir.display());
    Ok(())
}
