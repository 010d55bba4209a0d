//! Wall-clock runtime of the four paths over a ladder of sequence lengths.
//!
//! Forward paths reuse cached kernels across repetitions, as inference does.
//! Training-step paths invalidate the cache before every call because an
//! optimizer step changes the parameters.

use std::time::Instant;

use drf_core::report::write_csv;
use drf_core::trainer::Trainer;
use drf_core::{make_rng, Error, Mode, Model, RealSequence, RunConfig};
use serde::Serialize;

use crate::{rundir, CliError, CliResult, Common};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Path {
    SequentialFwd,
    ParallelFwd,
    BpttBwd,
    ParallelBwd,
}

impl Path {
    pub const ALL: [Path; 4] = [Path::SequentialFwd, Path::ParallelFwd, Path::BpttBwd, Path::ParallelBwd];

    pub fn name(self) -> &'static str {
        match self {
            Path::SequentialFwd => "sequential_fwd",
            Path::ParallelFwd => "parallel_fwd",
            Path::BpttBwd => "bptt_bwd",
            Path::ParallelBwd => "parallel_bwd",
        }
    }
}

#[derive(Debug, Serialize)]
pub struct BenchRow {
    #[serde(rename = "L")]
    pub len: usize,
    pub path: &'static str,
    pub threads: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub reps: usize,
}

fn call(model: &mut Model, path: Path, x: &RealSequence, labels: &[usize]) -> Result<(), Error> {
    match path {
        Path::SequentialFwd => model.forward(x, Mode::Sequential).map(|_| ()),
        Path::ParallelFwd => model.forward(x, Mode::Parallel).map(|_| ()),
        Path::BpttBwd => {
            model.bump_version();
            model.loss_and_grad(x, labels, Mode::Sequential).map(|_| ())
        }
        Path::ParallelBwd => {
            model.bump_version();
            model.loss_and_grad(x, labels, Mode::Parallel).map(|_| ())
        }
    }
}

/// Mean and sample standard deviation in milliseconds.
fn time(reps: usize, warmup: usize, mut f: impl FnMut() -> Result<(), Error>) -> Result<(f64, f64), Error> {
    for _ in 0..warmup {
        f()?;
    }
    let mut ms = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f()?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean = ms.iter().sum::<f64>() / reps as f64;
    let var = if reps > 1 {
        ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64
    } else {
        0.0
    };
    Ok((mean, var.sqrt()))
}

pub fn run(common: &Common, cfg: RunConfig, lengths: &[usize], reps: usize, warmup: usize, batch: usize, threads: usize) -> CliResult<()> {
    if reps == 0 || batch == 0 || lengths.is_empty() {
        return Err(CliError::Usage("bench needs reps > 0, batch > 0 and at least one length".into()));
    }
    let all = if threads == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        threads
    };
    let mut variants = vec![1];
    if all > 1 {
        variants.push(all);
    }
    let dir = rundir::create(&common.out, "bench", &cfg)?;
    let mut rows = Vec::new();
    for &len in lengths {
        let mut lcfg = cfg.clone();
        lcfg.task.length = len;
        lcfg.validate().map_err(Error::from)?;
        let mut model = Trainer::new(&lcfg, 1)?.model;
        let mut rng = make_rng(lcfg.seed).fork(7);
        let x = RealSequence::new(batch, 1, len, (0..batch * len).map(|_| rng.normal()).collect())?;
        let labels: Vec<usize> = (0..batch).map(|i| i % lcfg.task.classes).collect();
        for &t in &variants {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
            for path in Path::ALL {
                let (mean_ms, std_ms) = pool.install(|| time(reps, warmup, || call(&mut model, path, &x, &labels)))?;
                println!("L={len:>6} {:<15} threads={t:<3} {mean_ms:>10.2} ms ± {std_ms:.2}", path.name());
                rows.push(BenchRow {
                    len,
                    path: path.name(),
                    threads: t,
                    mean_ms,
                    std_ms,
                    reps,
                });
            }
        }
    }
    write_csv(dir.join("bench.csv"), &rows)?;
    println!("{}", dir.display());
    Ok(())
}
