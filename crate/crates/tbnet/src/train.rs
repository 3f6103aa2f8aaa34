//! SGD training loop.

use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tbnet_core::corpus::{Corpus, Split};
use tbnet_core::losses::{attach_total_loss, LossBundle};
use tbnet_core::network::{prepare_sample, stack_samples};
use tbnet_core::synth::mix_seed;
use tbnet_core::{checkpoint, BinaryMask, NetInput, TbNet};
use tbnet_tensor::{Mode, ParamStore, Session, Sgd};

use crate::config::RunConfig;
use crate::data::{load_samples, Sample};
use crate::error::{AppError, AppResult};

pub const LOG_FILE: &str = "train_log.csv";
pub const SUMMARY_FILE: &str = "train_summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const NAN_DUMP_FILE: &str = "nan_dump.json";

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub total: f64,
    pub region: f64,
    pub boundary: f64,
    pub aware: f64,
    pub w1: f64,
    pub w2: f64,
    pub lr: f64,
    pub seconds: f64,
}

impl StepRecord {
    fn new(step: u64, epoch: usize, b: &LossBundle, lr: f64, seconds: f64) -> Self {
        Self {
            step,
            epoch,
            total: b.total,
            region: b.region,
            boundary: b.boundary,
            aware: b.aware,
            w1: b.class_weights.0,
            w2: b.class_weights.1,
            lr,
            seconds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub epochs: usize,
    pub samples: usize,
    /// Loss of the very first step.
    pub initial_loss: f64,
    pub first_epoch_loss: f64,
    /// Mean loss over the last epoch.
    pub final_loss: f64,
    pub seconds: f64,
    pub checkpoint: PathBuf,
}

struct Batch {
    epoch: usize,
    ids: Vec<String>,
    input: NetInput<f32>,
    masks: Vec<BinaryMask>,
    edges: Vec<BinaryMask>,
}

/// Sample order of every batch of every epoch; a pure function of the seed.
pub fn batch_plan(samples: usize, batch: usize, epochs: usize, seed: u64) -> Vec<(usize, Vec<usize>)> {
    let mut plan = Vec::new();
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..samples).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5EED_0000 + epoch as u64)));
        for chunk in order.chunks(batch) {
            plan.push((epoch, chunk.to_vec()));
        }
    }
    plan
}

#[derive(Serialize)]
struct NanDump<'a> {
    step: u64,
    epoch: usize,
    ids: &'a [String],
    total: String,
    region: String,
    boundary: String,
    aware: String,
    non_finite_gradients: Vec<String>,
    non_finite_parameters: Vec<String>,
}

/// Trains on the corpus' training split and writes the log, summary and checkpoint under `out`.
pub fn train(cfg: &RunConfig, out: &Path) -> AppResult<TrainSummary> {
    train_with(cfg, out, &mut |_| {})
}

/// [`train`] with a per-step callback.
pub fn train_with(cfg: &RunConfig, out: &Path, on_step: &mut dyn FnMut(&StepRecord)) -> AppResult<TrainSummary> {
    cfg.validate()?;
    let net_cfg = cfg.network()?;
    let corpus = Corpus::open(&cfg.corpus)?;
    let samples = load_samples(&corpus, Split::Train, net_cfg.input_size)?;
    std::fs::create_dir_all(out)?;
    cfg.persist(out)?;

    let mut store = ParamStore::<f32>::new();
    let net = TbNet::new(net_cfg.clone(), &mut store, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
    net.fit_frequency_norm(&mut store, &images)?;
    drop(images);
    // Training images are fixed, so their network inputs are computed once.
    let prepared = samples.iter().map(|s| prepare_sample::<f32>(&net_cfg, &s.image)).collect::<Result<Vec<_>, _>>()?;

    let mut sgd = Sgd::<f32>::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let lambdas = cfg.lambdas();
    let mut plan = batch_plan(samples.len(), cfg.batch_size, cfg.epochs, cfg.seed);
    if cfg.max_steps > 0 {
        plan.truncate(cfg.max_steps);
    }
    let mut log = csv::Writer::from_path(out.join(LOG_FILE))?;
    let start = Instant::now();
    let mut step = 0u64;
    let mut initial = f64::NAN;
    let mut epoch_sums: Vec<(f64, usize)> = Vec::new();

    std::thread::scope(|scope| -> AppResult<()> {
        let (tx, rx) = sync_channel::<AppResult<Batch>>(cfg.prefetch.max(1));
        let samples: &[Sample] = &samples;
        let prepared: &[_] = &prepared;
        let plan = &plan;
        scope.spawn(move || {
            for (epoch, idx) in plan {
                let batch = stack_samples(&idx.iter().map(|&i| &prepared[i]).collect::<Vec<_>>())
                    .map(|input| Batch {
                        epoch: *epoch,
                        ids: idx.iter().map(|&i| samples[i].id.clone()).collect(),
                        input,
                        masks: idx.iter().map(|&i| samples[i].mask.clone()).collect(),
                        edges: idx.iter().map(|&i| samples[i].edge.clone()).collect(),
                    })
                    .map_err(AppError::from);
                if tx.send(batch).is_err() {
                    return;
                }
            }
        });
        for batch in rx {
            let batch = batch?;
            let mut s = Session::new(&mut store, Mode::Train);
            let f = net.forward(&mut s, &batch.input)?;
            let (loss, bundle) = attach_total_loss(&mut s.graph, f.region_logits, f.boundary_logits, &batch.masks, &batch.edges, lambdas)?;
            let grads = s.graph.backward(loss);
            let bad_grads: Vec<String> = grads
                .params()
                .filter(|(_, g)| g.data().iter().any(|v| !v.is_finite()))
                .map(|(id, _)| s.store.entry(id).name().to_owned())
                .collect();
            if !bundle.total.is_finite() || !bad_grads.is_empty() {
                let dump = NanDump {
                    step,
                    epoch: batch.epoch,
                    ids: &batch.ids,
                    total: bundle.total.to_string(),
                    region: bundle.region.to_string(),
                    boundary: bundle.boundary.to_string(),
                    aware: bundle.aware.to_string(),
                    non_finite_gradients: bad_grads,
                    non_finite_parameters: s
                        .store
                        .iter()
                        .filter(|(_, e)| e.value().data().iter().any(|v| !v.is_finite()))
                        .map(|(_, e)| e.name().to_owned())
                        .collect(),
                };
                std::fs::write(out.join(NAN_DUMP_FILE), serde_json::to_string_pretty(&dump)?)?;
                return Err(AppError::numerical(format!(
                    "non-finite loss or gradient at step {step}; diagnostics in {}",
                    out.join(NAN_DUMP_FILE).display()
                )));
            }
            drop(s);
            sgd.step(&mut store, &grads);

            if step == 0 {
                initial = bundle.total;
            }
            if epoch_sums.len() <= batch.epoch {
                epoch_sums.resize(batch.epoch + 1, (0.0, 0));
            }
            epoch_sums[batch.epoch].0 += bundle.total;
            epoch_sums[batch.epoch].1 += 1;
            let rec = StepRecord::new(step, batch.epoch, &bundle, cfg.lr, start.elapsed().as_secs_f64());
            log.serialize(&rec)?;
            on_step(&rec);
            step += 1;
            if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every as u64 == 0 {
                checkpoint::save(&out.join("checkpoints").join(format!("step_{step:06}")), &net_cfg, &store, step)?;
                log.flush()?;
            }
        }
        Ok(())
    })?;
    log.flush()?;

    let ckpt = out.join(CHECKPOINT_DIR);
    checkpoint::save(&ckpt, &net_cfg, &store, step)?;
    let mean = |(s, n): (f64, usize)| if n > 0 { s / n as f64 } else { f64::NAN };
    let summary = TrainSummary {
        steps: step,
        epochs: epoch_sums.len(),
        samples: samples.len(),
        initial_loss: initial,
        first_epoch_loss: epoch_sums.first().copied().map_or(f64::NAN, mean),
        final_loss: epoch_sums.last().copied().map_or(f64::NAN, mean),
        seconds: start.elapsed().as_secs_f64(),
        checkpoint: ckpt,
    };
    std::fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Reads a training log back.
pub fn read_log(path: &Path) -> AppResult<Vec<StepRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<StepRecord>, _>>()?)
}
