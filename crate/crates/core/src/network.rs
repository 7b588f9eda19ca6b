//! Single-recurrent-layer classifier/regressor: cell parameters, seeded
//! initialization, batched sequence forward pass with update accounting,
//! losses, and the weight-file format.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cells::{
    gate_blend, lstm_step, time_gate, CellState, GateVars, LstmParams, LstmVars, PeepholeVars,
    TimeGateParams,
};
use crate::diffmath::gate::{gate_phase, gate_value};
use crate::diffmath::{NodeId, RealArray, Tape};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tasks::EventSequence;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellKind {
    Lstm,
    PhasedLstm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CrossEntropy,
    Mse,
}

/// Initial gate bias values (pre-activation offsets), all zero by default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateBiasInit {
    pub input: f64,
    pub forget: f64,
    pub cell: f64,
    pub output: f64,
}

fn default_true() -> bool {
    true
}
fn default_tau_range() -> (f64, f64) {
    (0.0, 3.0)
}
fn default_ron() -> f64 {
    0.05
}
fn default_alpha() -> f64 {
    0.001
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub cell_kind: CellKind,
    pub in_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    /// Ungated cells receive the timestamp as one extra input column.
    #[serde(default = "default_true")]
    pub time_as_feature: bool,
    pub loss_kind: LossKind,
    /// Periods initialize as exp(U(a, b)) per unit.
    #[serde(default = "default_tau_range")]
    pub tau_init_range: (f64, f64),
    #[serde(default = "default_true")]
    pub peepholes: bool,
    #[serde(default = "default_ron")]
    pub r_on: f64,
    /// Closed-phase leak used while training; evaluation always runs with 0.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Learn the open ratio as well (clamped to [0.005, 1] by the trainer).
    #[serde(default)]
    pub train_ron: bool,
    #[serde(default)]
    pub bias_init: GateBiasInit,
}

impl ModelConfig {
    /// Input width actually seen by the cell.
    pub fn effective_in_dim(&self) -> usize {
        match self.cell_kind {
            CellKind::Lstm if self.time_as_feature => self.in_dim + 1,
            _ => self.in_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Error::InvalidConfig {
            what: "model config",
            detail,
        };
        if self.in_dim == 0 || self.hidden == 0 || self.out_dim == 0 {
            return Err(bad(format!(
                "dimensions must be positive: in={}, hidden={}, out={}",
                self.in_dim, self.hidden, self.out_dim
            )));
        }
        if self.loss_kind == LossKind::CrossEntropy && self.out_dim < 2 {
            return Err(bad("cross-entropy needs at least two output classes".into()));
        }
        if self.tau_init_range.0 > self.tau_init_range.1 {
            return Err(bad(format!("tau init range {:?} is inverted", self.tau_init_range)));
        }
        if !(self.r_on > 0.0 && self.r_on <= 1.0) {
            return Err(bad(format!("open ratio must be in (0, 1], got {}", self.r_on)));
        }
        if self.alpha < 0.0 {
            return Err(bad(format!("leak must be non-negative, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// A full model: cell parameters, optional time gate, output projection,
/// and provenance (init seed, epochs already trained).
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub lstm: LstmParams<T>,
    pub gate: Option<TimeGateParams<T>>,
    pub w_out: RealArray<T>,
    pub b_out: RealArray<T>,
    pub rng_seed: u64,
    pub epochs_trained: usize,
}

fn glorot<T: Real>(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> RealArray<T> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| T::of(rng.gen_range(-limit..limit)))
        .collect();
    RealArray::from_vec(vec![rows, cols], data).expect("shape matches draw count")
}

fn uniform_draw(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

impl<T: Real> Model<T> {
    /// Deterministic seeded initialization.
    ///
    /// Weight matrices are scaled-uniform, biases come from `bias_init`,
    /// peepholes start at zero. Gate draws happen after all weight draws,
    /// so gated and ungated models with the same seed share identical
    /// weights when their input widths match. Periods are exp(U(a, b));
    /// each phase shift is U(0, tau) of its own unit.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.effective_in_dim();
        let h = cfg.hidden;

        let mut lstm = LstmParams::zeros(d, h, cfg.peepholes);
        lstm.w_xi = glorot(&mut rng, d, h);
        lstm.w_xf = glorot(&mut rng, d, h);
        lstm.w_xc = glorot(&mut rng, d, h);
        lstm.w_xo = glorot(&mut rng, d, h);
        lstm.w_hi = glorot(&mut rng, h, h);
        lstm.w_hf = glorot(&mut rng, h, h);
        lstm.w_hc = glorot(&mut rng, h, h);
        lstm.w_ho = glorot(&mut rng, h, h);
        lstm.b_i = RealArray::full(vec![h], T::of(cfg.bias_init.input));
        lstm.b_f = RealArray::full(vec![h], T::of(cfg.bias_init.forget));
        lstm.b_c = RealArray::full(vec![h], T::of(cfg.bias_init.cell));
        lstm.b_o = RealArray::full(vec![h], T::of(cfg.bias_init.output));
        let w_out = glorot(&mut rng, h, cfg.out_dim);
        let b_out = RealArray::zeros(vec![cfg.out_dim]);

        let gate = match cfg.cell_kind {
            CellKind::Lstm => None,
            CellKind::PhasedLstm => {
                let (a, b) = cfg.tau_init_range;
                let tau: Vec<T> = (0..h)
                    .map(|_| T::of(uniform_draw(&mut rng, a, b).exp()))
                    .collect();
                let s: Vec<T> = tau
                    .iter()
                    .map(|&t| T::of(uniform_draw(&mut rng, 0.0, t.as_f64())))
                    .collect();
                let gate = TimeGateParams::new(
                    RealArray::vector(tau),
                    RealArray::vector(s),
                    T::of(cfg.r_on),
                    T::of(cfg.alpha),
                );
                gate.validate()?;
                Some(gate)
            }
        };

        Ok(Model {
            cfg: cfg.clone(),
            lstm,
            gate,
            w_out,
            b_out,
            rng_seed: seed,
            epochs_trained: 0,
        })
    }

    pub fn hidden(&self) -> usize {
        self.cfg.hidden
    }

    /// All parameter names in canonical order (gradient and optimizer
    /// state follow this order).
    pub fn param_names(&self) -> Vec<&'static str> {
        let mut names = vec![
            "w_xi", "w_xf", "w_xc", "w_xo", "w_hi", "w_hf", "w_hc", "w_ho", "b_i", "b_f",
            "b_c", "b_o",
        ];
        if self.lstm.peepholes {
            names.extend(["w_ci", "w_cf", "w_co"]);
        }
        names.extend(["w_out", "b_out"]);
        if self.gate.is_some() {
            names.extend(["tau", "s", "r_on"]);
        }
        names
    }

    /// Names trained by default: everything except the open ratio (unless
    /// `train_ron`), minus an explicit freeze list.
    pub fn trainable_names(&self, freeze: &[String]) -> Vec<&'static str> {
        self.param_names()
            .into_iter()
            .filter(|&n| n != "r_on" || self.cfg.train_ron)
            .filter(|&n| !freeze.iter().any(|f| f == n))
            .collect()
    }

    pub fn param(&self, name: &str) -> Option<&RealArray<T>> {
        match name {
            "w_xi" => Some(&self.lstm.w_xi),
            "w_xf" => Some(&self.lstm.w_xf),
            "w_xc" => Some(&self.lstm.w_xc),
            "w_xo" => Some(&self.lstm.w_xo),
            "w_hi" => Some(&self.lstm.w_hi),
            "w_hf" => Some(&self.lstm.w_hf),
            "w_hc" => Some(&self.lstm.w_hc),
            "w_ho" => Some(&self.lstm.w_ho),
            "b_i" => Some(&self.lstm.b_i),
            "b_f" => Some(&self.lstm.b_f),
            "b_c" => Some(&self.lstm.b_c),
            "b_o" => Some(&self.lstm.b_o),
            "w_ci" if self.lstm.peepholes => Some(&self.lstm.w_ci),
            "w_cf" if self.lstm.peepholes => Some(&self.lstm.w_cf),
            "w_co" if self.lstm.peepholes => Some(&self.lstm.w_co),
            "w_out" => Some(&self.w_out),
            "b_out" => Some(&self.b_out),
            "tau" => self.gate.as_ref().map(|g| &g.tau),
            "s" => self.gate.as_ref().map(|g| &g.s),
            "r_on" => self.gate.as_ref().map(|g| &g.r_on),
            _ => None,
        }
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut RealArray<T>> {
        match name {
            "w_xi" => Some(&mut self.lstm.w_xi),
            "w_xf" => Some(&mut self.lstm.w_xf),
            "w_xc" => Some(&mut self.lstm.w_xc),
            "w_xo" => Some(&mut self.lstm.w_xo),
            "w_hi" => Some(&mut self.lstm.w_hi),
            "w_hf" => Some(&mut self.lstm.w_hf),
            "w_hc" => Some(&mut self.lstm.w_hc),
            "w_ho" => Some(&mut self.lstm.w_ho),
            "b_i" => Some(&mut self.lstm.b_i),
            "b_f" => Some(&mut self.lstm.b_f),
            "b_c" => Some(&mut self.lstm.b_c),
            "b_o" => Some(&mut self.lstm.b_o),
            "w_ci" if self.lstm.peepholes => Some(&mut self.lstm.w_ci),
            "w_cf" if self.lstm.peepholes => Some(&mut self.lstm.w_cf),
            "w_co" if self.lstm.peepholes => Some(&mut self.lstm.w_co),
            "w_out" => Some(&mut self.w_out),
            "b_out" => Some(&mut self.b_out),
            "tau" => self.gate.as_mut().map(|g| &mut g.tau),
            "s" => self.gate.as_mut().map(|g| &mut g.s),
            "r_on" => self.gate.as_mut().map(|g| &mut g.r_on),
            _ => None,
        }
    }

    /// Register every parameter on a tape, trainable ones via the
    /// parameter registry, the rest as constants. Registration follows
    /// `param_names()` order, so gradients align with the trainable list.
    pub fn register(
        &self,
        tape: &mut Tape<T>,
        trainable: &[&'static str],
        mode: Mode,
    ) -> ModelVars<T> {
        let mut by_name: BTreeMap<&'static str, NodeId> = BTreeMap::new();
        for name in self.param_names() {
            let value = self.param(name).expect("named param exists").clone();
            let id = if trainable.contains(&name) {
                tape.param(value)
            } else {
                tape.constant(value)
            };
            by_name.insert(name, id);
        }
        let lstm = LstmVars {
            w_xi: by_name["w_xi"],
            w_xf: by_name["w_xf"],
            w_xc: by_name["w_xc"],
            w_xo: by_name["w_xo"],
            w_hi: by_name["w_hi"],
            w_hf: by_name["w_hf"],
            w_hc: by_name["w_hc"],
            w_ho: by_name["w_ho"],
            b_i: by_name["b_i"],
            b_f: by_name["b_f"],
            b_c: by_name["b_c"],
            b_o: by_name["b_o"],
            peep: self.lstm.peepholes.then(|| PeepholeVars {
                w_ci: by_name["w_ci"],
                w_cf: by_name["w_cf"],
                w_co: by_name["w_co"],
            }),
        };
        let gate = self.gate.as_ref().map(|g| GateVars {
            tau: by_name["tau"],
            s: by_name["s"],
            ron: by_name["r_on"],
            alpha: match mode {
                Mode::Train => g.alpha,
                Mode::Eval => T::zero(),
            },
        });
        ModelVars {
            lstm,
            gate,
            w_out: by_name["w_out"],
            b_out: by_name["b_out"],
        }
    }
}

/// Whether the forward pass uses the training leak or the test-time
/// (zero-leak) gate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Tape handles for one registered model.
pub struct ModelVars<T> {
    pub lstm: LstmVars,
    pub gate: Option<GateVars<T>>,
    pub w_out: NodeId,
    pub b_out: NodeId,
}

/// Exact per-unit count of open-phase steps ("updates"). An update is a
/// step whose phase falls in the open interval (`phi < r_on`), counted
/// independently of the leak; ungated cells update every unit every step.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateLedger {
    pub per_unit: Vec<u64>,
    pub sequences: u64,
    pub events: u64,
}

impl UpdateLedger {
    pub fn new(hidden: usize) -> Self {
        UpdateLedger {
            per_unit: vec![0; hidden],
            sequences: 0,
            events: 0,
        }
    }

    pub fn merge(&mut self, other: &UpdateLedger) {
        if self.per_unit.len() < other.per_unit.len() {
            self.per_unit.resize(other.per_unit.len(), 0);
        }
        for (a, b) in self.per_unit.iter_mut().zip(&other.per_unit) {
            *a += b;
        }
        self.sequences += other.sequences;
        self.events += other.events;
    }

    pub fn total_updates(&self) -> u64 {
        self.per_unit.iter().sum()
    }

    /// Total updates a dense (every unit, every event) cell would do.
    pub fn dense_equivalent(&self) -> u64 {
        self.per_unit.len() as u64 * self.events
    }

    pub fn updates_per_neuron(&self) -> f64 {
        if self.per_unit.is_empty() {
            return 0.0;
        }
        self.total_updates() as f64 / self.per_unit.len() as f64
    }

    pub fn updates_per_neuron_per_sequence(&self) -> f64 {
        if self.sequences == 0 {
            return 0.0;
        }
        self.updates_per_neuron() / self.sequences as f64
    }
}

/// A completed batched forward pass: the tape it ran on, the output node
/// (`[batch × out_dim]`, final-step readout), and the update ledger.
pub struct ForwardBatch<T: Real> {
    pub tape: Tape<T>,
    pub vars: ModelVars<T>,
    pub output: NodeId,
    pub ledger: UpdateLedger,
}

/// Run a batch of sequences through the model.
///
/// Variable lengths are handled by padding with a per-step validity mask:
/// masked steps copy state forward exactly and count nothing. In `Eval`
/// mode (zero leak) a step whose gate is closed for every unit and row is
/// skipped outright; the blend would copy state bit-exactly anyway.
pub fn forward_batch<T: Real>(
    model: &Model<T>,
    batch: &[&EventSequence],
    trainable: &[&'static str],
    mode: Mode,
) -> Result<ForwardBatch<T>> {
    if batch.is_empty() {
        return Err(Error::contract("forward pass needs a non-empty batch"));
    }
    for (i, seq) in batch.iter().enumerate() {
        seq.validate(i)?;
        if let Some(e) = seq.events.iter().find(|e| e.y.len() != model.cfg.in_dim) {
            return Err(Error::contract(format!(
                "sequence {i} has feature width {} but the model expects {}",
                e.y.len(),
                model.cfg.in_dim
            )));
        }
    }

    let b = batch.len();
    let h = model.cfg.hidden;
    let d_eff = model.cfg.effective_in_dim();
    let time_feature = model.gate.is_none() && model.cfg.time_as_feature;
    let max_len = batch.iter().map(|s| s.len()).max().unwrap_or(0);

    let mut tape = Tape::new();
    let vars = model.register(&mut tape, trainable, mode);
    let mut state = CellState::zeros(&mut tape, b, h);
    let mut ledger = UpdateLedger::new(h);
    ledger.sequences = b as u64;

    let mut x_buf = vec![T::zero(); b * d_eff];
    let mut times = vec![0.0f64; b];

    for step in 0..max_len {
        let mut valid = vec![false; b];
        let mut n_valid = 0usize;
        for (row, seq) in batch.iter().enumerate() {
            if step < seq.len() {
                let e = &seq.events[step];
                valid[row] = true;
                n_valid += 1;
                times[row] = e.t;
                for (col, &y) in e.y.iter().enumerate() {
                    x_buf[row * d_eff + col] = T::of(y);
                }
                if time_feature {
                    x_buf[row * d_eff + d_eff - 1] = T::of(e.t);
                }
            } else {
                // Padded row: repeat the last timestamp, zero features.
                times[row] = state.t_prev[row];
                for col in 0..d_eff {
                    x_buf[row * d_eff + col] = T::zero();
                }
            }
        }
        ledger.events += n_valid as u64;

        // Gate bookkeeping (and the eval-time skip) happen outside the
        // tape, from the same parameter values the tape ops will read.
        let mut any_open_value = false;
        if let Some(gate) = &model.gate {
            let r_on = gate.r_on_value();
            let alpha = match mode {
                Mode::Train => gate.alpha,
                Mode::Eval => T::zero(),
            };
            for (row, &ok) in valid.iter().enumerate() {
                if !ok {
                    continue;
                }
                let t = T::of(times[row]);
                for j in 0..h {
                    let phi = gate_phase(t, gate.s.data()[j], gate.tau.data()[j]);
                    if phi < r_on {
                        ledger.per_unit[j] += 1;
                    }
                    if gate_value(phi, r_on, alpha).0 > T::zero() {
                        any_open_value = true;
                    }
                }
            }
            if mode == Mode::Eval && !any_open_value {
                // Fully closed, zero leak: the step is a bit-exact copy.
                for (row, &ok) in valid.iter().enumerate() {
                    if ok {
                        state.t_prev[row] = times[row];
                    }
                }
                continue;
            }
        } else {
            for j in 0..h {
                ledger.per_unit[j] += n_valid as u64;
            }
        }

        let x = tape.constant(RealArray::from_vec(vec![b, d_eff], x_buf.clone())?);
        let proposal = lstm_step(&mut tape, x, &state, &vars.lstm)?;

        let mask_nodes = if n_valid < b {
            let m: Vec<T> = valid
                .iter()
                .map(|&ok| if ok { T::one() } else { T::zero() })
                .collect();
            let inv: Vec<T> = m.iter().map(|&v| T::one() - v).collect();
            Some((
                tape.constant(RealArray::vector(m)),
                tape.constant(RealArray::vector(inv)),
            ))
        } else {
            None
        };

        let (c_next, h_next) = match &vars.gate {
            Some(gate) => {
                let k = time_gate(&mut tape, &times, gate)?;
                let k_eff = match mask_nodes {
                    Some((mask, _)) => tape.mul_col_vec(k, mask)?,
                    None => k,
                };
                (
                    gate_blend(&mut tape, k_eff, proposal.c, state.c)?,
                    gate_blend(&mut tape, k_eff, proposal.h, state.h)?,
                )
            }
            None => match mask_nodes {
                Some((mask, inv)) => {
                    let blend = |tape: &mut Tape<T>, new, old| -> Result<NodeId> {
                        let a = tape.mul_col_vec(new, mask)?;
                        let o = tape.mul_col_vec(old, inv)?;
                        tape.add(a, o)
                    };
                    (
                        blend(&mut tape, proposal.c, state.c)?,
                        blend(&mut tape, proposal.h, state.h)?,
                    )
                }
                None => (proposal.c, proposal.h),
            },
        };

        for (row, &ok) in valid.iter().enumerate() {
            if ok {
                state.t_prev[row] = times[row];
            }
        }
        state.c = c_next;
        state.h = h_next;
    }

    let projected = tape.matmul(state.h, vars.w_out)?;
    let output = tape.add_row_vec(projected, vars.b_out)?;
    Ok(ForwardBatch {
        tape,
        vars,
        output,
        ledger,
    })
}

/// Forward a single sequence; returns the raw output row and the ledger.
pub fn forward_sequence<T: Real>(
    model: &Model<T>,
    seq: &EventSequence,
    mode: Mode,
) -> Result<(RealArray<T>, UpdateLedger)> {
    let fb = forward_batch(model, &[seq], &[], mode)?;
    Ok((fb.tape.value(fb.output).clone(), fb.ledger))
}

/// Supervision targets for a batch.
#[derive(Clone, Debug)]
pub enum BatchTargets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

pub fn batch_targets(batch: &[&EventSequence]) -> Result<BatchTargets> {
    use crate::tasks::Target;
    let mut classes = Vec::new();
    let mut values = Vec::new();
    for seq in batch {
        match seq.target {
            Target::Class(c) => classes.push(c),
            Target::Value(v) => values.push(v),
        }
    }
    match (classes.is_empty(), values.is_empty()) {
        (false, true) => Ok(BatchTargets::Classes(classes)),
        (true, false) => Ok(BatchTargets::Values(values)),
        _ => Err(Error::contract(
            "batch mixes classification and regression targets",
        )),
    }
}

/// Scalar loss node over a batch output: mean cross-entropy with the
/// log-sum-exp shift, or half mean squared error. `denom` is the number of
/// rows the mean runs over — pass the full batch size when summing shard
/// losses so the shards add up to the exact batch mean.
pub fn loss_node<T: Real>(
    tape: &mut Tape<T>,
    output: NodeId,
    targets: &BatchTargets,
    kind: LossKind,
    denom: usize,
) -> Result<NodeId> {
    if denom == 0 {
        return Err(Error::contract("loss denominator must be positive"));
    }
    match (kind, targets) {
        (LossKind::CrossEntropy, BatchTargets::Classes(labels)) => {
            let ce = tape.cross_entropy_sum(output, labels)?;
            tape.scale(ce, T::of(1.0 / denom as f64))
        }
        (LossKind::Mse, BatchTargets::Values(values)) => {
            let shape = tape.value(output).shape().to_vec();
            if shape.len() != 2 || shape[1] != 1 || shape[0] != values.len() {
                return Err(Error::contract(format!(
                    "mse expects output shape [{}, 1], got {shape:?}",
                    values.len()
                )));
            }
            let target = tape.constant(RealArray::from_f64(shape, values)?);
            let diff = tape.sub(output, target)?;
            let sq = tape.mul(diff, diff)?;
            let total = tape.sum(sq)?;
            tape.scale(total, T::of(0.5 / denom as f64))
        }
        (LossKind::CrossEntropy, _) => Err(Error::contract(
            "cross-entropy loss needs class labels",
        )),
        (LossKind::Mse, _) => Err(Error::contract("mse loss needs value targets")),
    }
}

// ── Weight files ─────────────────────────────────────────────────────

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Flat versioned weight file: parameter name -> shape + row-major values,
/// with the config and provenance alongside.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    precision: String,
    config: ModelConfig,
    rng_seed: u64,
    epochs_trained: usize,
    params: BTreeMap<String, ParamEntry>,
}

impl<T: Real> Model<T> {
    pub fn to_json(&self) -> Result<String> {
        let mut params = BTreeMap::new();
        for name in self.param_names() {
            let arr = self.param(name).expect("named param exists");
            params.insert(
                name.to_string(),
                ParamEntry {
                    shape: arr.shape().to_vec(),
                    data: arr.to_f64_vec(),
                },
            );
        }
        let file = ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            precision: T::NAME.to_string(),
            config: self.cfg.clone(),
            rng_seed: self.rng_seed,
            epochs_trained: self.epochs_trained,
            params,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidConfig {
                what: "weight file",
                detail: format!(
                    "format version {} unsupported (expected {MODEL_FORMAT_VERSION})",
                    file.format_version
                ),
            });
        }
        if file.precision != T::NAME {
            return Err(Error::InvalidConfig {
                what: "weight file",
                detail: format!(
                    "precision {} does not match requested {}",
                    file.precision,
                    T::NAME
                ),
            });
        }
        let mut model = Model::init(&file.config, file.rng_seed)?;
        model.epochs_trained = file.epochs_trained;
        for name in model.param_names() {
            let entry = file.params.get(name).ok_or_else(|| Error::InvalidConfig {
                what: "weight file",
                detail: format!("missing parameter `{name}`"),
            })?;
            let arr = RealArray::from_f64(entry.shape.clone(), &entry.data)?;
            *model.param_mut(name).expect("named param exists") = arr;
        }
        if let Some(gate) = &model.gate {
            gate.validate()?;
        }
        model.lstm.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Peek at a weight file's precision field without committing to a type.
pub fn model_file_precision(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    value
        .get("precision")
        .and_then(|p| p.as_str())
        .map(str::to_owned)
        .ok_or_else(|| Error::InvalidConfig {
            what: "weight file",
            detail: "missing precision field".into(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{Event, Target};

    fn phased_cfg(in_dim: usize, hidden: usize, out_dim: usize) -> ModelConfig {
        ModelConfig {
            cell_kind: CellKind::PhasedLstm,
            in_dim,
            hidden,
            out_dim,
            time_as_feature: false,
            loss_kind: LossKind::CrossEntropy,
            tau_init_range: (0.0, 3.0),
            peepholes: true,
            r_on: 0.05,
            alpha: 0.001,
            train_ron: false,
            bias_init: GateBiasInit::default(),
        }
    }

    fn seq(times: &[f64], width: usize) -> EventSequence {
        EventSequence {
            events: times
                .iter()
                .enumerate()
                .map(|(i, &t)| Event {
                    t,
                    y: (0..width).map(|w| ((i + w) as f64 * 0.37).sin()).collect(),
                })
                .collect(),
            target: Target::Class(0),
        }
    }

    #[test]
    fn init_is_deterministic_and_tau_in_range() {
        let cfg = phased_cfg(1, 16, 2);
        let a = Model::<f64>::init(&cfg, 5).unwrap();
        let b = Model::<f64>::init(&cfg, 5).unwrap();
        assert!(a.lstm.w_xi.bits_eq(&b.lstm.w_xi));
        assert!(a.gate.as_ref().unwrap().tau.bits_eq(&b.gate.as_ref().unwrap().tau));
        for (&tau, &s) in a
            .gate
            .as_ref()
            .unwrap()
            .tau
            .data()
            .iter()
            .zip(a.gate.as_ref().unwrap().s.data())
        {
            assert!((1.0..=3.0f64.exp()).contains(&tau));
            assert!((0.0..=tau).contains(&s));
        }
        let c = Model::<f64>::init(&cfg, 6).unwrap();
        assert!(!a.lstm.w_xi.bits_eq(&c.lstm.w_xi));
    }

    #[test]
    fn degenerate_tau_range_is_constant() {
        let cfg = ModelConfig {
            tau_init_range: (2.0, 2.0),
            ..phased_cfg(1, 8, 2)
        };
        let m = Model::<f64>::init(&cfg, 1).unwrap();
        for &tau in m.gate.as_ref().unwrap().tau.data() {
            assert_eq!(tau, 2.0f64.exp());
        }
    }

    #[test]
    fn zero_weight_model_outputs_bias() {
        let cfg = phased_cfg(1, 4, 2);
        let mut m = Model::<f64>::init(&cfg, 3).unwrap();
        for name in ["w_xi", "w_xf", "w_xc", "w_xo", "w_hi", "w_hf", "w_hc", "w_ho", "w_out"] {
            let arr = m.param_mut(name).unwrap();
            *arr = RealArray::zeros(arr.shape().to_vec());
        }
        *m.param_mut("b_out").unwrap() = RealArray::vector(vec![0.25, -1.5]);
        let s = seq(&[0.0, 1.0, 2.5], 1);
        let (out, _) = forward_sequence(&m, &s, Mode::Eval).unwrap();
        assert_eq!(out.data(), &[0.25, -1.5]);
    }

    #[test]
    fn three_event_forward_matches_manual_composition() {
        use crate::cells::phased_lstm_step;
        let cfg = phased_cfg(1, 3, 2);
        let model = Model::<f64>::init(&cfg, 11).unwrap();
        let s = seq(&[0.3, 1.8, 2.2], 1);
        let (out, _) = forward_sequence(&model, &s, Mode::Train).unwrap();

        // Manual composition: three gated steps plus the projection.
        let mut tape = Tape::new();
        let vars = model.register(&mut tape, &[], Mode::Train);
        let mut state = CellState::zeros(&mut tape, 1, 3);
        for e in &s.events {
            let x = tape
                .constant(RealArray::from_vec(vec![1, 1], vec![e.y[0]]).unwrap());
            state = phased_lstm_step(
                &mut tape,
                x,
                &[e.t],
                &state,
                &vars.lstm,
                vars.gate.as_ref().unwrap(),
            )
            .unwrap();
        }
        let proj = tape.matmul(state.h, vars.w_out).unwrap();
        let manual = tape.add_row_vec(proj, vars.b_out).unwrap();
        for (a, b) in out.data().iter().zip(tape.value(manual).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn single_event_sequence_works() {
        let cfg = phased_cfg(1, 4, 2);
        let model = Model::<f64>::init(&cfg, 2).unwrap();
        let s = seq(&[1.25], 1);
        let (out, ledger) = forward_sequence(&model, &s, Mode::Eval).unwrap();
        assert_eq!(out.shape(), &[1, 2]);
        assert_eq!(ledger.events, 1);
    }

    #[test]
    fn permuting_batch_permutes_outputs() {
        let cfg = phased_cfg(1, 5, 2);
        let model = Model::<f64>::init(&cfg, 4).unwrap();
        let seqs = [
            seq(&[0.1, 0.9, 2.0, 3.3], 1),
            seq(&[0.5, 1.5], 1),
            seq(&[0.2, 1.1, 2.2], 1),
        ];
        let fwd = |order: [usize; 3]| {
            let batch: Vec<&EventSequence> = order.iter().map(|&i| &seqs[i]).collect();
            let fb = forward_batch(&model, &batch, &[], Mode::Eval).unwrap();
            fb.tape.value(fb.output).clone()
        };
        let a = fwd([0, 1, 2]);
        let b = fwd([2, 0, 1]);
        for (row_a, row_b) in [(0usize, 1usize), (1, 2), (2, 0)] {
            for c in 0..2 {
                assert_eq!(
                    a.get2(row_a, c).to_bits(),
                    b.get2(row_b, c).to_bits(),
                    "row {row_a} vs {row_b}"
                );
            }
        }
    }

    #[test]
    fn dense_cell_updates_every_unit_every_event() {
        let cfg = ModelConfig {
            cell_kind: CellKind::Lstm,
            ..phased_cfg(1, 6, 2)
        };
        let model = Model::<f64>::init(&cfg, 8).unwrap();
        let seqs = [seq(&[0.0, 1.0, 2.0], 1), seq(&[0.5, 1.5, 2.5, 3.5], 1)];
        let batch: Vec<&EventSequence> = seqs.iter().collect();
        let fb = forward_batch(&model, &batch, &[], Mode::Eval).unwrap();
        assert_eq!(fb.ledger.events, 7);
        assert!(fb.ledger.per_unit.iter().all(|&u| u == 7));
        assert_eq!(fb.ledger.total_updates(), fb.ledger.dense_equivalent());
    }

    #[test]
    fn cross_entropy_is_shift_invariant() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(
            RealArray::from_vec(vec![2, 3], vec![1.0, -0.5, 0.3, 4.0, 0.0, -2.0]).unwrap(),
        );
        let shifted = tape.constant(
            RealArray::from_vec(vec![2, 3], vec![8.5, 7.0, 7.8, 11.5, 7.5, 5.5]).unwrap(),
        );
        let targets = BatchTargets::Classes(vec![0, 2]);
        let a = loss_node(&mut tape, logits, &targets, LossKind::CrossEntropy, 2).unwrap();
        let b = loss_node(&mut tape, shifted, &targets, LossKind::CrossEntropy, 2).unwrap();
        let (av, bv) = (tape.value(a).data()[0], tape.value(b).data()[0]);
        assert!((av - bv).abs() < 1e-9, "{av} vs {bv}");
    }

    #[test]
    fn mse_zero_when_output_equals_target() {
        let mut tape = Tape::new();
        let out = tape.constant(RealArray::from_vec(vec![2, 1], vec![0.3, -0.7]).unwrap());
        let targets = BatchTargets::Values(vec![0.3, -0.7]);
        let l = loss_node(&mut tape, out, &targets, LossKind::Mse, 2).unwrap();
        assert_eq!(tape.value(l).data()[0], 0.0);
    }

    #[test]
    fn weight_file_round_trip_is_exact() {
        let cfg = phased_cfg(2, 7, 3);
        let model = Model::<f64>::init(&cfg, 123).unwrap();
        let text = model.to_json().unwrap();
        let loaded = Model::<f64>::from_json(&text).unwrap();
        for name in model.param_names() {
            assert!(
                model.param(name).unwrap().bits_eq(loaded.param(name).unwrap()),
                "param {name} not bit-identical after round trip"
            );
        }
        assert_eq!(loaded.rng_seed, 123);
    }
}
