//! Adam optimizer, mini-batch training over padded/sharded batches,
//! evaluation metrics, and update-count accounting.
//!
//! Parallelism is per batch: shards compute loss and gradients on disjoint
//! rows concurrently, then gradients are summed in shard order at a single
//! synchronization point, so training is bit-deterministic for a fixed
//! seed and shard plan.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffmath::RealArray;
use crate::error::{Error, Result};
use crate::network::{batch_targets, forward_batch, loss_node, Mode, Model, UpdateLedger};
use crate::real::Real;
use crate::tasks::{Dataset, EventSequence, Target};

fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    0.001
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_clip() -> Option<f64> {
    Some(10.0)
}
fn default_eval_batch() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Global gradient-norm clip; `null` disables.
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
    /// Parameter names excluded from training (e.g. ["tau", "s"]).
    #[serde(default)]
    pub freeze: Vec<String>,
    /// Shuffling/batching seed.
    pub seed: u64,
    /// Gradient shards per batch; 0 picks the thread count.
    #[serde(default)]
    pub shards: usize,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
}

impl TrainConfig {
    pub fn new(epochs: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size: default_batch(),
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            clip_norm: default_clip(),
            freeze: Vec::new(),
            seed,
            shards: 0,
            eval_batch: default_eval_batch(),
        }
    }
}

// ── Adam ─────────────────────────────────────────────────────────────

/// Bias-corrected Adam state: one first/second moment array per parameter,
/// in the same order as the parameter list it was built from.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    m: Vec<RealArray<T>>,
    v: Vec<RealArray<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(lr: T, beta1: T, beta2: T, eps: T, shapes: &[Vec<usize>]) -> Self {
        AdamState {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: shapes.iter().map(|s| RealArray::zeros(s.clone())).collect(),
            v: shapes.iter().map(|s| RealArray::zeros(s.clone())).collect(),
        }
    }

    pub fn from_config(cfg: &TrainConfig, shapes: &[Vec<usize>]) -> Self {
        Self::new(
            T::of(cfg.lr),
            T::of(cfg.beta1),
            T::of(cfg.beta2),
            T::of(cfg.eps),
            shapes,
        )
    }
}

/// One bias-corrected Adam update over named parameters.
///
/// Rejects non-finite gradients, naming the offending parameter. The
/// caller applies any domain projections (period floor, open-ratio clamp)
/// afterwards.
pub fn adam_step<T: Real>(
    state: &mut AdamState<T>,
    params: &mut [(&str, &mut RealArray<T>)],
    grads: &[RealArray<T>],
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::contract(format!(
            "adam_step arity mismatch: {} params, {} grads, {} slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((name, _), g) in params.iter().zip(grads) {
        if let Some(index) = g.first_non_finite() {
            return Err(Error::NonFinite {
                context: format!("gradient of `{name}`"),
                index,
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::one() - state.beta1.powi(t);
    let bc2 = T::one() - state.beta2.powi(t);
    let one = T::one();
    for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for ((pv, &gv), (mv, vv)) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mv = state.beta1 * *mv + (one - state.beta1) * gv;
            *vv = state.beta2 * *vv + (one - state.beta2) * gv * gv;
            let m_hat = *mv / bc1;
            let v_hat = *vv / bc2;
            *pv = *pv - state.lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Domain projection after an optimizer step: periods floored at 0.01;
/// the open ratio, when trained, clamped to [0.005, 1].
pub fn project_model<T: Real>(model: &mut Model<T>) {
    let train_ron = model.cfg.train_ron;
    if let Some(gate) = &mut model.gate {
        for tau in gate.tau.data_mut() {
            *tau = tau.max(T::of(0.01));
        }
        if train_ron {
            let r = &mut gate.r_on.data_mut()[0];
            *r = r.max(T::of(0.005)).min(T::one());
        }
    }
}

// ── Reports ──────────────────────────────────────────────────────────

/// Evaluation metric: classification accuracy or plain mean squared error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum MetricValue {
    Accuracy(f64),
    Mse(f64),
}

impl MetricValue {
    pub fn value(&self) -> f64 {
        match self {
            MetricValue::Accuracy(v) | MetricValue::Mse(v) => *v,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricValue::Accuracy(_) => "accuracy",
            MetricValue::Mse(_) => "mse",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub eval: Option<MetricValue>,
    pub updates_per_neuron_per_sequence: f64,
    pub wall_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateSummary {
    pub hidden: usize,
    pub sequences: u64,
    pub events: u64,
    pub total_updates: u64,
    pub updates_per_neuron: f64,
    pub updates_per_neuron_per_sequence: f64,
}

impl From<&UpdateLedger> for UpdateSummary {
    fn from(ledger: &UpdateLedger) -> Self {
        UpdateSummary {
            hidden: ledger.per_unit.len(),
            sequences: ledger.sequences,
            events: ledger.events,
            total_updates: ledger.total_updates(),
            updates_per_neuron: ledger.updates_per_neuron(),
            updates_per_neuron_per_sequence: ledger.updates_per_neuron_per_sequence(),
        }
    }
}

/// Per-epoch metrics, final update accounting, and provenance for one
/// training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub precision: String,
    pub dataset_hash: String,
    pub config: serde_json::Value,
    pub epochs: Vec<EpochStats>,
    pub final_metric: Option<MetricValue>,
    pub update_stats: Option<UpdateSummary>,
    pub diverged: bool,
    pub abort_reason: Option<String>,
}

impl TrainReport {
    /// Flat CSV: `epoch,split,metric,value` rows, optionally prefixed with
    /// a config-hash comment.
    pub fn to_csv(&self, config_hash: Option<&str>) -> String {
        let mut out = String::new();
        if let Some(hash) = config_hash {
            out.push_str(&format!("# config_hash={hash}\n"));
        }
        out.push_str("epoch,split,metric,value\n");
        for e in &self.epochs {
            out.push_str(&format!("{},train,loss,{}\n", e.epoch, e.train_loss));
            if let Some(metric) = &e.eval {
                out.push_str(&format!(
                    "{},test,{},{}\n",
                    e.epoch,
                    metric.name(),
                    metric.value()
                ));
            }
            out.push_str(&format!(
                "{},test,updates_per_neuron_per_seq,{}\n",
                e.epoch, e.updates_per_neuron_per_sequence
            ));
            out.push_str(&format!("{},train,wall_s,{}\n", e.epoch, e.wall_s));
        }
        out
    }

    /// Equality of everything a rerun must reproduce (wall time excluded).
    pub fn same_trajectory(&self, other: &TrainReport) -> bool {
        self.seed == other.seed
            && self.dataset_hash == other.dataset_hash
            && self.diverged == other.diverged
            && self.final_metric == other.final_metric
            && self.epochs.len() == other.epochs.len()
            && self
                .epochs
                .iter()
                .zip(&other.epochs)
                .all(|(a, b)| {
                    a.epoch == b.epoch
                        && a.train_loss == b.train_loss
                        && a.eval == b.eval
                        && a.updates_per_neuron_per_sequence == b.updates_per_neuron_per_sequence
                })
    }
}

// ── Evaluation ───────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct EvalResult {
    pub metric: MetricValue,
    pub ledger: UpdateLedger,
    pub n: usize,
}

/// Evaluate with the leak forced to zero: argmax accuracy for
/// classification, plain mean squared error for regression, plus
/// open-phase update statistics.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    seqs: &[EventSequence],
    batch_size: usize,
) -> Result<EvalResult> {
    if seqs.is_empty() {
        return Err(Error::contract("evaluation needs a non-empty dataset"));
    }
    let batch_size = batch_size.max(1);
    let chunks: Vec<&[EventSequence]> = seqs.chunks(batch_size).collect();
    let partials: Vec<Result<(f64, usize, usize, UpdateLedger)>> = chunks
        .par_iter()
        .map(|chunk| {
            let batch: Vec<&EventSequence> = chunk.iter().collect();
            let fb = forward_batch(model, &batch, &[], Mode::Eval)?;
            let out = fb.tape.value(fb.output);
            let mut sq_err = 0.0;
            let mut correct = 0usize;
            for (row, seq) in batch.iter().enumerate() {
                match seq.target {
                    Target::Class(label) => {
                        let mut best = 0;
                        for c in 1..out.cols() {
                            if out.get2(row, c) > out.get2(row, best) {
                                best = c;
                            }
                        }
                        if best == label {
                            correct += 1;
                        }
                    }
                    Target::Value(target) => {
                        let pred = out.get2(row, 0).as_f64();
                        sq_err += (pred - target) * (pred - target);
                    }
                }
            }
            Ok((sq_err, correct, batch.len(), fb.ledger))
        })
        .collect();

    let mut sq_err = 0.0;
    let mut correct = 0usize;
    let mut n = 0usize;
    let mut ledger = UpdateLedger::new(model.hidden());
    for partial in partials {
        let (s, c, k, l) = partial?;
        sq_err += s;
        correct += c;
        n += k;
        ledger.merge(&l);
    }
    let classification = matches!(seqs[0].target, Target::Class(_));
    let metric = if classification {
        MetricValue::Accuracy(correct as f64 / n as f64)
    } else {
        MetricValue::Mse(sq_err / n as f64)
    };
    Ok(EvalResult { metric, ledger, n })
}

// ── Training loop ────────────────────────────────────────────────────

fn shuffle_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1)
}

/// Batches for one epoch: seeded shuffle, then local length-sorting inside
/// chunks of a few batches to keep padding small without fixing batch
/// membership across epochs.
fn plan_batches(
    lengths: &[usize],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let mut indices: Vec<usize> = (0..lengths.len()).collect();
    indices.shuffle(rng);
    let bucket = batch_size * 8;
    let mut batches = Vec::new();
    for chunk in indices.chunks(bucket) {
        let mut chunk = chunk.to_vec();
        chunk.sort_by_key(|&i| std::cmp::Reverse(lengths[i]));
        for batch in chunk.chunks(batch_size) {
            batches.push(batch.to_vec());
        }
    }
    batches
}

fn shard_count(cfg: &TrainConfig, batch_len: usize) -> usize {
    let n = if cfg.shards > 0 {
        cfg.shards
    } else {
        rayon::current_num_threads()
    };
    n.clamp(1, batch_len)
}

/// Loss and gradient sum over one batch, sharded across threads. Gradients
/// arrive in trainable order; the loss is the exact batch mean.
fn batch_gradients<T: Real>(
    model: &Model<T>,
    batch: &[&EventSequence],
    trainable: &[&'static str],
    n_shards: usize,
) -> Result<(f64, Vec<RealArray<T>>)> {
    let shard_size = batch.len().div_ceil(n_shards);
    let shards: Vec<&[&EventSequence]> = batch.chunks(shard_size).collect();
    let denom = batch.len();
    let results: Vec<Result<(f64, Vec<RealArray<T>>)>> = shards
        .par_iter()
        .map(|shard| {
            let fb = forward_batch(model, shard, trainable, Mode::Train)?;
            let targets = batch_targets(shard)?;
            let mut tape = fb.tape;
            let loss = loss_node(&mut tape, fb.output, &targets, model.cfg.loss_kind, denom)?;
            let loss_val = tape.value(loss).data()[0].as_f64();
            let grads = tape.backward(loss)?;
            Ok((loss_val, grads.into_arrays()))
        })
        .collect();

    let mut total_loss = 0.0;
    let mut total_grads: Option<Vec<RealArray<T>>> = None;
    for result in results {
        let (loss, grads) = result?;
        total_loss += loss;
        match &mut total_grads {
            None => total_grads = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    for (av, &gv) in a.data_mut().iter_mut().zip(g.data()) {
                        *av = *av + gv;
                    }
                }
            }
        }
    }
    Ok((total_loss, total_grads.unwrap_or_default()))
}

fn clip_gradients<T: Real>(grads: &mut [RealArray<T>], clip: f64) {
    let norm_sq: f64 = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| v.as_f64() * v.as_f64())
        .sum();
    let norm = norm_sq.sqrt();
    if norm > clip {
        let scale = T::of(clip / norm);
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v = *v * scale;
            }
        }
    }
}

/// Train in place, evaluating on the test split after every epoch (with
/// the leak at zero). Divergence — a non-finite loss or gradient — aborts
/// early and returns the report accumulated so far with `diverged` set.
/// Epoch numbering continues from `model.epochs_trained`, so training a
/// loaded model resumes its numbering.
pub fn train<T: Real>(
    model: &mut Model<T>,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if data.train.is_empty() && cfg.epochs > 0 {
        return Err(Error::contract("training needs a non-empty train split"));
    }
    let trainable = model.trainable_names(&cfg.freeze);
    let shapes: Vec<Vec<usize>> = trainable
        .iter()
        .map(|n| model.param(n).expect("trainable param exists").shape().to_vec())
        .collect();
    let mut adam = AdamState::<T>::from_config(cfg, &shapes);
    let lengths: Vec<usize> = data.train.iter().map(|s| s.len()).collect();

    let mut report = TrainReport {
        seed: cfg.seed,
        precision: T::NAME.to_string(),
        dataset_hash: data.hash.clone(),
        config: serde_json::json!({ "model": model.cfg, "train": cfg }),
        epochs: Vec::new(),
        final_metric: None,
        update_stats: None,
        diverged: false,
        abort_reason: None,
    };

    let start_epoch = model.epochs_trained;
    'epochs: for epoch in start_epoch..start_epoch + cfg.epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed(cfg.seed, epoch));
        let batches = plan_batches(&lengths, cfg.batch_size.max(1), &mut rng);

        let mut loss_weighted = 0.0;
        let mut seen = 0usize;
        for (batch_no, batch_idx) in batches.iter().enumerate() {
            let batch: Vec<&EventSequence> =
                batch_idx.iter().map(|&i| &data.train[i]).collect();
            let n_shards = shard_count(cfg, batch.len());
            let (loss, mut grads) = batch_gradients(model, &batch, &trainable, n_shards)?;
            if !loss.is_finite() {
                report.diverged = true;
                report.abort_reason = Some(
                    Error::Divergence {
                        epoch,
                        batch: batch_no,
                        what: "loss",
                        param: "-".into(),
                    }
                    .to_string(),
                );
                break 'epochs;
            }
            if let Some(clip) = cfg.clip_norm {
                clip_gradients(&mut grads, clip);
            }
            let mut params: Vec<(&str, &mut RealArray<T>)> = Vec::with_capacity(trainable.len());
            // Disjoint name-indexed borrows; collect via raw model access.
            {
                let model_ptr: *mut Model<T> = model;
                for name in &trainable {
                    // Safety: trainable names are unique, so the mutable
                    // borrows are disjoint.
                    let arr = unsafe { (*model_ptr).param_mut(name).expect("trainable exists") };
                    params.push((name, arr));
                }
            }
            if let Err(err) = adam_step(&mut adam, &mut params, &grads) {
                let reason = match err {
                    Error::NonFinite { context, .. } => Error::Divergence {
                        epoch,
                        batch: batch_no,
                        what: "gradient",
                        param: context,
                    }
                    .to_string(),
                    other => other.to_string(),
                };
                report.diverged = true;
                report.abort_reason = Some(reason);
                break 'epochs;
            }
            drop(params);
            project_model(model);
            loss_weighted += loss * batch.len() as f64;
            seen += batch.len();
        }

        model.epochs_trained = epoch + 1;
        let train_loss = if seen > 0 { loss_weighted / seen as f64 } else { 0.0 };
        let (eval, upd) = if data.test.is_empty() {
            (None, 0.0)
        } else {
            let ev = evaluate(model, &data.test, cfg.eval_batch)?;
            let upd = ev.ledger.updates_per_neuron_per_sequence();
            report.final_metric = Some(ev.metric);
            report.update_stats = Some(UpdateSummary::from(&ev.ledger));
            (Some(ev.metric), upd)
        };
        report.epochs.push(EpochStats {
            epoch,
            train_loss,
            eval,
            updates_per_neuron_per_sequence: upd,
            wall_s: started.elapsed().as_secs_f64(),
        });
    }

    // Epoch-free runs still produce evaluation and update accounting.
    if cfg.epochs == 0 && !data.test.is_empty() {
        let ev = evaluate(model, &data.test, cfg.eval_batch)?;
        report.final_metric = Some(ev.metric);
        report.update_stats = Some(UpdateSummary::from(&ev.ledger));
    }
    Ok(report)
}

/// Ratio of per-neuron update counts between two runs over the same
/// dataset (gated vs dense, typically about the open ratio).
pub fn count_update_ratio(gated: &TrainReport, dense: &TrainReport) -> Result<f64> {
    if gated.dataset_hash != dense.dataset_hash {
        return Err(Error::DatasetHashMismatch {
            left: gated.dataset_hash.clone(),
            right: dense.dataset_hash.clone(),
        });
    }
    let (g, d) = match (&gated.update_stats, &dense.update_stats) {
        (Some(g), Some(d)) => (g, d),
        _ => {
            return Err(Error::contract(
                "both reports need update statistics (run with a test split)",
            ))
        }
    };
    if d.updates_per_neuron == 0.0 {
        return Err(Error::contract("dense report has zero updates"));
    }
    Ok(g.updates_per_neuron / d.updates_per_neuron)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{CellKind, GateBiasInit, LossKind, ModelConfig};
    use crate::tasks::{gen_dataset, FreqTaskConfig, TaskConfig};

    fn small_cfg(cell_kind: CellKind) -> ModelConfig {
        ModelConfig {
            cell_kind,
            in_dim: 1,
            hidden: 6,
            out_dim: 2,
            time_as_feature: true,
            loss_kind: LossKind::CrossEntropy,
            tau_init_range: (0.0, 3.0),
            peepholes: true,
            r_on: 0.05,
            alpha: 0.001,
            train_ron: false,
            bias_init: GateBiasInit::default(),
        }
    }

    fn small_dataset(n: usize) -> Dataset {
        let task = TaskConfig::Freq(FreqTaskConfig {
            duration_range: (10.0, 20.0),
            n_samples_range: (10.0, 20.0),
            ..FreqTaskConfig::standard()
        });
        gen_dataset(&task, n, 0.5, 77).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = AdamState::<f64>::new(0.001, 0.9, 0.999, 1e-8, &[vec![3]]);
        let mut p = RealArray::vector(vec![1.0, -2.0, 0.5]);
        let before = p.clone();
        let g = [RealArray::zeros(vec![3])];
        adam_step(&mut state, &mut [("p", &mut p)], &g).unwrap();
        assert!(p.bits_eq(&before));
    }

    #[test]
    fn first_step_moves_against_gradient() {
        let mut state = AdamState::<f64>::new(0.001, 0.9, 0.999, 1e-8, &[vec![2]]);
        let mut p = RealArray::vector(vec![0.0, 0.0]);
        let g = [RealArray::vector(vec![0.3, -0.7])];
        adam_step(&mut state, &mut [("p", &mut p)], &g).unwrap();
        assert!(p.data()[0] < 0.0);
        assert!(p.data()[1] > 0.0);
    }

    /// Independent scalar simulation of Adam under a constant gradient.
    fn scalar_adam_sim(g: f64, lr: f64, steps: usize) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut m, mut v) = (0.0, 0.0);
        let mut delta = 0.0;
        for t in 1..=steps {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            delta = lr * mh / (vh.sqrt() + eps);
        }
        delta.abs()
    }

    #[test]
    fn constant_gradient_update_magnitude_approaches_lr() {
        for g in [0.3, 2.0] {
            let mut state = AdamState::<f64>::new(0.001, 0.9, 0.999, 1e-8, &[vec![1]]);
            let mut p = RealArray::vector(vec![0.0]);
            let grad = [RealArray::vector(vec![g])];
            let mut last = 0.0;
            for _ in 0..1000 {
                let before = p.data()[0];
                adam_step(&mut state, &mut [("p", &mut p)], &grad).unwrap();
                last = (p.data()[0] - before).abs();
            }
            assert!((last - 0.001).abs() < 1e-3 * 0.001 + 1e-6, "step {last}");
            // Matches the independent scalar simulation.
            let sim = scalar_adam_sim(g, 0.001, 1000);
            assert!((last - sim).abs() < 1e-12);
        }
    }

    #[test]
    fn update_magnitude_invariant_to_gradient_scale() {
        let run = |g: f64| {
            let mut state = AdamState::<f64>::new(0.001, 0.9, 0.999, 1e-8, &[vec![1]]);
            let mut p = RealArray::vector(vec![0.0]);
            let grad = [RealArray::vector(vec![g])];
            let mut last = 0.0;
            for _ in 0..1000 {
                let before = p.data()[0];
                adam_step(&mut state, &mut [("p", &mut p)], &grad).unwrap();
                last = (p.data()[0] - before).abs();
            }
            last
        };
        let a = run(0.5);
        let b = run(1.0);
        assert!((a - b).abs() < 1e-3 * 0.001 + 1e-9);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut state = AdamState::<f64>::new(0.001, 0.9, 0.999, 1e-8, &[vec![1]]);
        let mut p = RealArray::vector(vec![0.0]);
        let g = [RealArray::vector(vec![f64::NAN])];
        let err = adam_step(&mut state, &mut [("w_hf", &mut p)], &g).unwrap_err();
        assert!(err.to_string().contains("w_hf"), "{err}");
    }

    #[test]
    fn zero_lr_training_preserves_params_bitwise() {
        let data = small_dataset(12);
        let cfg = small_cfg(CellKind::PhasedLstm);
        let mut model = Model::<f64>::init(&cfg, 9).unwrap();
        let snapshot = model.to_json().unwrap();
        let mut tc = TrainConfig::new(1, 5);
        tc.lr = 0.0;
        tc.batch_size = 4;
        train(&mut model, &data, &tc).unwrap();
        let mut reloaded = Model::<f64>::from_json(&snapshot).unwrap();
        reloaded.epochs_trained = model.epochs_trained;
        for name in model.param_names() {
            assert!(
                model.param(name).unwrap().bits_eq(reloaded.param(name).unwrap()),
                "{name} changed under lr=0"
            );
        }
    }

    #[test]
    fn training_is_deterministic_for_a_seed() {
        let data = small_dataset(10);
        let cfg = small_cfg(CellKind::PhasedLstm);
        let run = || {
            let mut model = Model::<f64>::init(&cfg, 3).unwrap();
            let mut tc = TrainConfig::new(1, 4);
            tc.batch_size = 3;
            train(&mut model, &data, &tc).unwrap()
        };
        let a = run();
        let b = run();
        assert!(a.same_trajectory(&b));
        assert_eq!(a.epochs[0].train_loss.to_bits(), b.epochs[0].train_loss.to_bits());
    }

    #[test]
    fn constant_class_predictor_scores_half_on_balanced_set() {
        let data = small_dataset(40);
        let cfg = small_cfg(CellKind::Lstm);
        let mut model = Model::<f64>::init(&cfg, 1).unwrap();
        // Zero everything, bias the output hard toward class 0.
        for name in model.param_names() {
            let arr = model.param_mut(name).unwrap();
            *arr = RealArray::zeros(arr.shape().to_vec());
        }
        *model.param_mut("b_out").unwrap() = RealArray::vector(vec![5.0, -5.0]);
        let ev = evaluate(&model, &data.test, 8).unwrap();
        assert_eq!(ev.metric, MetricValue::Accuracy(0.5));
    }

    #[test]
    fn update_ratio_of_dense_vs_itself_is_one() {
        let data = small_dataset(10);
        let cfg = small_cfg(CellKind::Lstm);
        let mut model = Model::<f64>::init(&cfg, 2).unwrap();
        let tc = TrainConfig::new(0, 1);
        let report = train(&mut model, &data, &tc).unwrap();
        let ratio = count_update_ratio(&report, &report).unwrap();
        assert_eq!(ratio, 1.0);
    }

    #[test]
    fn update_ratio_rejects_mismatched_datasets() {
        let cfg = small_cfg(CellKind::Lstm);
        let tc = TrainConfig::new(0, 1);
        let mut m1 = Model::<f64>::init(&cfg, 2).unwrap();
        let mut m2 = Model::<f64>::init(&cfg, 2).unwrap();
        let r1 = train(&mut m1, &small_dataset(10), &tc).unwrap();
        let r2 = train(&mut m2, &small_dataset(14), &tc).unwrap();
        assert!(matches!(
            count_update_ratio(&r1, &r2),
            Err(Error::DatasetHashMismatch { .. })
        ));
    }

    #[test]
    fn pinned_open_gate_ratio_is_one() {
        let data = small_dataset(10);
        let mut cfg = small_cfg(CellKind::PhasedLstm);
        cfg.r_on = 1.0;
        let mut gated = Model::<f64>::init(&cfg, 2).unwrap();
        let mut dense = Model::<f64>::init(&small_cfg(CellKind::Lstm), 2).unwrap();
        let tc = TrainConfig::new(0, 1);
        let rg = train(&mut gated, &data, &tc).unwrap();
        let rd = train(&mut dense, &data, &tc).unwrap();
        assert_eq!(count_update_ratio(&rg, &rd).unwrap(), 1.0);
    }
}
