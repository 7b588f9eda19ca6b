//! LSTM step, rhythmic time gate, and the time-gated (phased) step, all
//! expressed as tape operations.
//!
//! The ungated cell:
//! ```text
//! i = σ(x·W_xi + h·W_hi + w_ci ⊙ c_prev + b_i)
//! f = σ(x·W_xf + h·W_hf + w_cf ⊙ c_prev + b_f)
//! c = f ⊙ c_prev + i ⊙ tanh(x·W_xc + h·W_hc + b_c)
//! o = σ(x·W_xo + h·W_ho + w_co ⊙ c + b_o)
//! h = o ⊙ tanh(c)
//! ```
//! The gated step computes the same (c̃, h̃) as a proposal at the event's
//! timestamp, then blends with the previous state through the gate value k:
//! `c = k ⊙ c̃ + (1-k) ⊙ c_prev`, likewise for h. A fully closed gate
//! (k = 0) copies state bit-exactly; a fully open one (k = 1) reproduces
//! the ungated step bit-exactly.

use crate::diffmath::gate::{gate_value, GateBranch};
use crate::diffmath::{NodeId, RealArray, Tape};
use crate::error::{Error, Result};
use crate::real::Real;

/// All learnable arrays of the ungated cell. Matrices map
/// `[in_dim × hidden]` (input-to-gate) or `[hidden × hidden]` (recurrent);
/// biases and peephole weights are `[hidden]` vectors.
#[derive(Clone, Debug)]
pub struct LstmParams<T> {
    pub w_xi: RealArray<T>,
    pub w_xf: RealArray<T>,
    pub w_xc: RealArray<T>,
    pub w_xo: RealArray<T>,
    pub w_hi: RealArray<T>,
    pub w_hf: RealArray<T>,
    pub w_hc: RealArray<T>,
    pub w_ho: RealArray<T>,
    pub b_i: RealArray<T>,
    pub b_f: RealArray<T>,
    pub b_c: RealArray<T>,
    pub b_o: RealArray<T>,
    pub w_ci: RealArray<T>,
    pub w_cf: RealArray<T>,
    pub w_co: RealArray<T>,
    /// When false the peephole vectors stay zero and frozen.
    pub peepholes: bool,
}

impl<T: Real> LstmParams<T> {
    pub fn zeros(in_dim: usize, hidden: usize, peepholes: bool) -> Self {
        LstmParams {
            w_xi: RealArray::zeros(vec![in_dim, hidden]),
            w_xf: RealArray::zeros(vec![in_dim, hidden]),
            w_xc: RealArray::zeros(vec![in_dim, hidden]),
            w_xo: RealArray::zeros(vec![in_dim, hidden]),
            w_hi: RealArray::zeros(vec![hidden, hidden]),
            w_hf: RealArray::zeros(vec![hidden, hidden]),
            w_hc: RealArray::zeros(vec![hidden, hidden]),
            w_ho: RealArray::zeros(vec![hidden, hidden]),
            b_i: RealArray::zeros(vec![hidden]),
            b_f: RealArray::zeros(vec![hidden]),
            b_c: RealArray::zeros(vec![hidden]),
            b_o: RealArray::zeros(vec![hidden]),
            w_ci: RealArray::zeros(vec![hidden]),
            w_cf: RealArray::zeros(vec![hidden]),
            w_co: RealArray::zeros(vec![hidden]),
            peepholes,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w_xi.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w_xi.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, h) = (self.in_dim(), self.hidden());
        let shapes: [(&str, &RealArray<T>, Vec<usize>); 15] = [
            ("w_xi", &self.w_xi, vec![d, h]),
            ("w_xf", &self.w_xf, vec![d, h]),
            ("w_xc", &self.w_xc, vec![d, h]),
            ("w_xo", &self.w_xo, vec![d, h]),
            ("w_hi", &self.w_hi, vec![h, h]),
            ("w_hf", &self.w_hf, vec![h, h]),
            ("w_hc", &self.w_hc, vec![h, h]),
            ("w_ho", &self.w_ho, vec![h, h]),
            ("b_i", &self.b_i, vec![h]),
            ("b_f", &self.b_f, vec![h]),
            ("b_c", &self.b_c, vec![h]),
            ("b_o", &self.b_o, vec![h]),
            ("w_ci", &self.w_ci, vec![h]),
            ("w_cf", &self.w_cf, vec![h]),
            ("w_co", &self.w_co, vec![h]),
        ];
        for (name, arr, want) in shapes {
            if arr.shape() != want.as_slice() {
                return Err(Error::InvalidConfig {
                    what: "cell parameters",
                    detail: format!("{name} has shape {:?}, expected {want:?}", arr.shape()),
                });
            }
            if !arr.all_finite() {
                return Err(Error::InvalidConfig {
                    what: "cell parameters",
                    detail: format!("{name} contains non-finite values"),
                });
            }
        }
        Ok(())
    }
}

/// Oscillation parameters of the time gate: per-unit period and phase
/// shift (in the same time unit as input timestamps), a shared open-ratio
/// scalar (stored as a shape-`[]` array so it can optionally be trained),
/// and the closed-phase leak slope.
#[derive(Clone, Debug)]
pub struct TimeGateParams<T> {
    pub tau: RealArray<T>,
    pub s: RealArray<T>,
    pub r_on: RealArray<T>,
    pub alpha: T,
}

impl<T: Real> TimeGateParams<T> {
    pub fn new(tau: RealArray<T>, s: RealArray<T>, r_on: T, alpha: T) -> Self {
        TimeGateParams {
            tau,
            s,
            r_on: RealArray::scalar(r_on),
            alpha,
        }
    }

    pub fn r_on_value(&self) -> T {
        self.r_on.data()[0]
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau.shape().len() != 1 || self.s.shape() != self.tau.shape() {
            return Err(Error::InvalidConfig {
                what: "time gate parameters",
                detail: format!(
                    "tau shape {:?} and s shape {:?} must be equal vectors",
                    self.tau.shape(),
                    self.s.shape()
                ),
            });
        }
        if self.tau.data().iter().any(|&t| !(t > T::zero())) {
            return Err(Error::InvalidConfig {
                what: "time gate parameters",
                detail: "every period tau must be positive".into(),
            });
        }
        let r_on = self.r_on_value();
        if !self.r_on.is_scalar() || !(r_on > T::zero() && r_on <= T::one()) {
            return Err(Error::InvalidConfig {
                what: "time gate parameters",
                detail: format!("open ratio must be a scalar in (0, 1], got {r_on}"),
            });
        }
        if self.alpha < T::zero() {
            return Err(Error::InvalidConfig {
                what: "time gate parameters",
                detail: format!("leak must be non-negative, got {}", self.alpha),
            });
        }
        Ok(())
    }
}

/// Tape handles for registered cell parameters.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_xi: NodeId,
    pub w_xf: NodeId,
    pub w_xc: NodeId,
    pub w_xo: NodeId,
    pub w_hi: NodeId,
    pub w_hf: NodeId,
    pub w_hc: NodeId,
    pub w_ho: NodeId,
    pub b_i: NodeId,
    pub b_f: NodeId,
    pub b_c: NodeId,
    pub b_o: NodeId,
    pub peep: Option<PeepholeVars>,
}

#[derive(Clone, Copy, Debug)]
pub struct PeepholeVars {
    pub w_ci: NodeId,
    pub w_cf: NodeId,
    pub w_co: NodeId,
}

/// Tape handles for the gate parameters. `alpha` stays a plain constant:
/// it is a training-schedule knob, never a learned quantity.
#[derive(Clone, Copy, Debug)]
pub struct GateVars<T> {
    pub tau: NodeId,
    pub s: NodeId,
    pub ron: NodeId,
    pub alpha: T,
}

/// Recurrent state: cell and hidden activations `[batch × hidden]` on the
/// tape, plus the last-seen timestamp per batch row.
#[derive(Clone, Debug)]
pub struct CellState {
    pub c: NodeId,
    pub h: NodeId,
    pub t_prev: Vec<f64>,
}

impl CellState {
    /// Zero state for a fresh batch.
    pub fn zeros<T: Real>(tape: &mut Tape<T>, batch: usize, hidden: usize) -> Self {
        CellState {
            c: tape.constant(RealArray::zeros(vec![batch, hidden])),
            h: tape.constant(RealArray::zeros(vec![batch, hidden])),
            t_prev: vec![f64::NEG_INFINITY; batch],
        }
    }
}

/// One ungated step. Returns the new state; timestamps are untouched.
pub fn lstm_step<T: Real>(
    tape: &mut Tape<T>,
    x: NodeId,
    state: &CellState,
    vars: &LstmVars,
) -> Result<CellState> {
    let (c, h) = lstm_proposal(tape, x, state.c, state.h, vars)?;
    Ok(CellState {
        c,
        h,
        t_prev: state.t_prev.clone(),
    })
}

/// Shared proposal math: the full ungated update at the current input.
fn lstm_proposal<T: Real>(
    tape: &mut Tape<T>,
    x: NodeId,
    c_prev: NodeId,
    h_prev: NodeId,
    vars: &LstmVars,
) -> Result<(NodeId, NodeId)> {
    let gate_pre = |tape: &mut Tape<T>, wx, wh, peep: Option<NodeId>, b| -> Result<NodeId> {
        let xm = tape.matmul(x, wx)?;
        let hm = tape.matmul(h_prev, wh)?;
        let mut pre = tape.add(xm, hm)?;
        if let Some(w) = peep {
            let p = tape.mul_row_vec(c_prev, w)?;
            pre = tape.add(pre, p)?;
        }
        tape.add_row_vec(pre, b)
    };

    let i_pre = gate_pre(tape, vars.w_xi, vars.w_hi, vars.peep.map(|p| p.w_ci), vars.b_i)?;
    let i = tape.sigmoid(i_pre)?;
    let f_pre = gate_pre(tape, vars.w_xf, vars.w_hf, vars.peep.map(|p| p.w_cf), vars.b_f)?;
    let f = tape.sigmoid(f_pre)?;

    let g_pre = gate_pre(tape, vars.w_xc, vars.w_hc, None, vars.b_c)?;
    let g = tape.tanh(g_pre)?;

    let fc = tape.mul(f, c_prev)?;
    let ig = tape.mul(i, g)?;
    let c = tape.add(fc, ig)?;

    // Output-gate peephole reads the freshly proposed cell.
    let o_pre = {
        let xm = tape.matmul(x, vars.w_xo)?;
        let hm = tape.matmul(h_prev, vars.w_ho)?;
        let mut pre = tape.add(xm, hm)?;
        if let Some(p) = vars.peep {
            let pc = tape.mul_row_vec(c, p.w_co)?;
            pre = tape.add(pre, pc)?;
        }
        tape.add_row_vec(pre, vars.b_o)?
    };
    let o = tape.sigmoid(o_pre)?;
    let ct = tape.tanh(c)?;
    let h = tape.mul(o, ct)?;
    Ok((c, h))
}

/// Gate openness `[batch × hidden]` at the given timestamps.
pub fn time_gate<T: Real>(
    tape: &mut Tape<T>,
    times: &[f64],
    gate: &GateVars<T>,
) -> Result<NodeId> {
    let ts: Vec<T> = times.iter().map(|&t| T::of(t)).collect();
    tape.time_gate(&ts, gate.tau, gate.s, gate.ron, gate.alpha)
}

/// Convex blend of a proposal with the previous value through gate values
/// `k`: `k ⊙ proposal + (1-k) ⊙ previous`.
pub fn gate_blend<T: Real>(
    tape: &mut Tape<T>,
    k: NodeId,
    proposal: NodeId,
    previous: NodeId,
) -> Result<NodeId> {
    let kp = tape.mul(k, proposal)?;
    let km1 = tape.one_minus(k)?;
    let kc = tape.mul(km1, previous)?;
    tape.add(kp, kc)
}

/// One time-gated step at timestamps `times` (one per batch row).
///
/// Fails with a sequencing error if any timestamp goes backwards relative
/// to the row's previous update.
pub fn phased_lstm_step<T: Real>(
    tape: &mut Tape<T>,
    x: NodeId,
    times: &[f64],
    state: &CellState,
    vars: &LstmVars,
    gate: &GateVars<T>,
) -> Result<CellState> {
    if times.len() != state.t_prev.len() {
        return Err(Error::contract(format!(
            "phased step got {} timestamps for batch of {}",
            times.len(),
            state.t_prev.len()
        )));
    }
    for (b, (&t, &prev)) in times.iter().zip(&state.t_prev).enumerate() {
        if t < prev {
            return Err(Error::TimeOrder {
                sequence: b,
                step: 0,
                prev,
                next: t,
            });
        }
    }
    let (c_tilde, h_tilde) = lstm_proposal(tape, x, state.c, state.h, vars)?;
    let k = time_gate(tape, times, gate)?;
    let c = gate_blend(tape, k, c_tilde, state.c)?;
    let h = gate_blend(tape, k, h_tilde, state.h)?;
    Ok(CellState {
        c,
        h,
        t_prev: times.to_vec(),
    })
}

/// Closed-form cell decay of an ungated cell with forget gate pinned at
/// `1 - epsilon` and no input: `(1 - epsilon)^n * c0`. Oracle for the
/// exponential-decay contrast tests.
pub fn memory_decay_closed_form(epsilon: f64, n: u32, c0: f64) -> f64 {
    assert!(
        epsilon > 0.0 && epsilon < 1.0,
        "epsilon must be in (0, 1), got {epsilon}"
    );
    (1.0 - epsilon).powi(n as i32) * c0
}

/// Gate waveform sample for plotting/export: phase, openness, and branch
/// at time `t` for a single unit.
pub fn gate_waveform(tau: f64, s: f64, r_on: f64, alpha: f64, t: f64) -> (f64, f64, GateBranch) {
    let phi = crate::diffmath::gate::gate_phase(t, s, tau);
    let (k, branch) = gate_value(phi, r_on, alpha);
    (phi, k, branch)
}
