use crate::error::{Error, Result};
use crate::real::{sigmoid, Real};

use super::array::{
    check_same_shape, matmul_nn_acc, matmul_nt_acc, matmul_tn_acc, RealArray,
};
use super::gate::{gate_eval, gate_phase};

/// Handle to a recorded node. Valid only for the tape that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// Rhythmic-gate operation record: openness per (row, unit) from the row's
/// timestamp and the unit's period/shift, with a shared open-ratio operand.
struct GateOp<T> {
    times: Vec<T>,
    tau: NodeId,
    shift: NodeId,
    ron: NodeId,
    alpha: T,
}

enum Op<T> {
    Leaf,
    /// out = a[m×k] · b[k×n]
    Matmul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    /// Hadamard product.
    Mul { a: NodeId, b: NodeId },
    /// out = factor · x, constant factor.
    Scale { x: NodeId, factor: T },
    /// out = 1 - x
    OneMinus { x: NodeId },
    Sigmoid { x: NodeId },
    Tanh { x: NodeId },
    /// out[i,j] = m[i,j] + v[j]
    AddRowVec { m: NodeId, v: NodeId },
    /// out[i,j] = m[i,j] * v[j]
    MulRowVec { m: NodeId, v: NodeId },
    /// out[i,j] = m[i,j] * v[i]
    MulColVec { m: NodeId, v: NodeId },
    /// Scalar sum of all elements.
    Sum { x: NodeId },
    TimeGate(Box<GateOp<T>>),
    /// Scalar: sum over rows of -log softmax(logits)[label].
    CrossEntropySum { logits: NodeId, labels: Vec<usize> },
}

struct Node<T> {
    value: RealArray<T>,
    op: Op<T>,
}

/// Gradients of a scalar loss with respect to registered parameters,
/// in registration order. Parameters the loss never touched get exact zeros.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    entries: Vec<(NodeId, RealArray<T>)>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&RealArray<T>> {
        self.entries.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &RealArray<T>)> {
        self.entries.iter().map(|(p, g)| (*p, g))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Gradient arrays in registration order.
    pub fn into_arrays(self) -> Vec<RealArray<T>> {
        self.entries.into_iter().map(|(_, g)| g).collect()
    }
}

/// Append-only record of a forward computation, replayed in reverse for
/// gradients. Construction is eager: each operation computes its value as
/// it is recorded, so `value()` is always available.
///
/// Operands always precede their outputs, which makes a single reverse
/// sweep a valid topological order; the backward pass visits each node
/// exactly once and accumulates adjoints in a fixed order, so repeated
/// runs over identical inputs are bit-identical.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    params: Vec<NodeId>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: RealArray<T>, op: Op<T>) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { value, op });
        id
    }

    /// Record a non-trainable leaf (inputs, masks, targets).
    pub fn constant(&mut self, value: RealArray<T>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Record a trainable leaf and register it for gradient collection.
    pub fn param(&mut self, value: RealArray<T>) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.params.push(id);
        id
    }

    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    pub fn value(&self, id: NodeId) -> &RealArray<T> {
        &self.nodes[id.0].value
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    // ── Forward operations ───────────────────────────────────────────

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape().len() != 2 || bv.shape().len() != 2 || av.cols() != bv.rows() {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = RealArray::zeros(vec![m, n]);
        matmul_nn_acc(av.data(), bv.data(), m, k, n, out.data_mut());
        Ok(self.push(out, Op::Matmul { a, b }))
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<NodeId> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        check_same_shape(name, av, bv)?;
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = RealArray::from_vec(av.shape().to_vec(), data)?;
        Ok(self.push(out, op))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.zip_op("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: NodeId, factor: T) -> Result<NodeId> {
        let out = self.nodes[x.0].value.map(|v| factor * v);
        Ok(self.push(out, Op::Scale { x, factor }))
    }

    pub fn one_minus(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.nodes[x.0].value.map(|v| T::one() - v);
        Ok(self.push(out, Op::OneMinus { x }))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.nodes[x.0].value.map(sigmoid);
        Ok(self.push(out, Op::Sigmoid { x }))
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let out = self.nodes[x.0].value.map(|v| v.tanh());
        Ok(self.push(out, Op::Tanh { x }))
    }

    fn row_vec_op(
        &mut self,
        name: &'static str,
        m: NodeId,
        v: NodeId,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<NodeId> {
        let (mv, vv) = (&self.nodes[m.0].value, &self.nodes[v.0].value);
        if mv.shape().len() != 2 || vv.shape().len() != 1 || vv.numel() != mv.cols() {
            return Err(Error::ShapeMismatch {
                op: name,
                lhs: mv.shape().to_vec(),
                rhs: vv.shape().to_vec(),
            });
        }
        let cols = mv.cols();
        let data = mv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, vv.data()[i % cols]))
            .collect();
        let out = RealArray::from_vec(mv.shape().to_vec(), data)?;
        Ok(self.push(out, op))
    }

    /// Add a length-`c` vector to every row of an `[r, c]` matrix.
    pub fn add_row_vec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        self.row_vec_op("add_row_vec", m, v, |x, y| x + y, Op::AddRowVec { m, v })
    }

    /// Multiply every row of an `[r, c]` matrix elementwise by a length-`c` vector.
    pub fn mul_row_vec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        self.row_vec_op("mul_row_vec", m, v, |x, y| x * y, Op::MulRowVec { m, v })
    }

    /// Scale row `i` of an `[r, c]` matrix by `v[i]`.
    pub fn mul_col_vec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (mv, vv) = (&self.nodes[m.0].value, &self.nodes[v.0].value);
        if mv.shape().len() != 2 || vv.shape().len() != 1 || vv.numel() != mv.rows() {
            return Err(Error::ShapeMismatch {
                op: "mul_col_vec",
                lhs: mv.shape().to_vec(),
                rhs: vv.shape().to_vec(),
            });
        }
        let cols = mv.cols();
        let data = mv
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * vv.data()[i / cols])
            .collect();
        let out = RealArray::from_vec(mv.shape().to_vec(), data)?;
        Ok(self.push(out, Op::MulColVec { m, v }))
    }

    /// Scalar sum of all elements.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total = self.nodes[x.0].value.data().iter().copied().sum();
        Ok(self.push(RealArray::scalar(total), Op::Sum { x }))
    }

    /// Gate openness `k[b, j]` for timestamps `times[b]` and per-unit
    /// period/shift vectors. `ron` is a scalar node (shared open ratio);
    /// `alpha` is the closed-phase leak slope, constant on the tape.
    pub fn time_gate(
        &mut self,
        times: &[T],
        tau: NodeId,
        shift: NodeId,
        ron: NodeId,
        alpha: T,
    ) -> Result<NodeId> {
        let (tv, sv, rv) = (
            &self.nodes[tau.0].value,
            &self.nodes[shift.0].value,
            &self.nodes[ron.0].value,
        );
        if tv.shape().len() != 1 || sv.shape() != tv.shape() {
            return Err(Error::ShapeMismatch {
                op: "time_gate",
                lhs: tv.shape().to_vec(),
                rhs: sv.shape().to_vec(),
            });
        }
        if !rv.is_scalar() {
            return Err(Error::contract(format!(
                "time_gate open ratio must be scalar, got shape {:?}",
                rv.shape()
            )));
        }
        if times.is_empty() {
            return Err(Error::contract("time_gate needs at least one timestamp"));
        }
        let hidden = tv.numel();
        let batch = times.len();
        let r_on = rv.data()[0];
        let mut data = Vec::with_capacity(batch * hidden);
        for &t in times {
            for j in 0..hidden {
                let phi = gate_phase(t, sv.data()[j], tv.data()[j]);
                data.push(gate_eval(phi, r_on, alpha).k);
            }
        }
        let out = RealArray::from_vec(vec![batch, hidden], data)?;
        Ok(self.push(
            out,
            Op::TimeGate(Box::new(GateOp {
                times: times.to_vec(),
                tau,
                shift,
                ron,
                alpha,
            })),
        ))
    }

    /// Scalar sum over rows of the negative log softmax probability of each
    /// row's label, computed with the log-sum-exp shift for stability.
    pub fn cross_entropy_sum(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = &self.nodes[logits.0].value;
        if lv.shape().len() != 2 || lv.rows() != labels.len() {
            return Err(Error::contract(format!(
                "cross_entropy: logits shape {:?} incompatible with {} labels",
                lv.shape(),
                labels.len()
            )));
        }
        let classes = lv.cols();
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::contract(format!(
                "cross_entropy: label {bad} out of range for {classes} classes"
            )));
        }
        let mut total = T::zero();
        for (i, &label) in labels.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().copied().fold(row[0], |a, b| a.max(b));
            let lse: T = row.iter().map(|&x| (x - max).exp()).sum();
            total = total + (max + lse.ln() - row[label]);
        }
        Ok(self.push(
            RealArray::scalar(total),
            Op::CrossEntropySum {
                logits,
                labels: labels.to_vec(),
            },
        ))
    }

    // ── Backward pass ────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss node. Returns gradients for every
    /// registered parameter; parameters outside the loss's dependency cone
    /// get exact zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let loss_val = &self.nodes[loss.0].value;
        if !loss_val.is_scalar() {
            return Err(Error::contract(format!(
                "backward requires a scalar loss node, got shape {:?}",
                loss_val.shape()
            )));
        }

        let mut adj: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![T::one()]);

        for id in (0..=loss.0).rev() {
            if adj[id].is_none() {
                continue;
            }
            let (lo, hi) = adj.split_at_mut(id);
            let d_out = hi[0].as_ref().expect("adjoint present").as_slice();
            self.backward_op(id, d_out, lo);
        }

        let entries = self
            .params
            .iter()
            .map(|&p| {
                let grad = match adj[p.0].take() {
                    Some(data) => {
                        RealArray::from_vec(self.nodes[p.0].value.shape().to_vec(), data)
                            .expect("adjoint shape matches node")
                    }
                    None => RealArray::zeros(self.nodes[p.0].value.shape().to_vec()),
                };
                (p, grad)
            })
            .collect();
        Ok(Gradients { entries })
    }

    /// Adjoint slot for `id`, zero-initialized on first touch.
    fn slot<'a>(&self, adj: &'a mut [Option<Vec<T>>], id: NodeId) -> &'a mut [T] {
        let numel = self.nodes[id.0].value.numel();
        adj[id.0]
            .get_or_insert_with(|| vec![T::zero(); numel])
            .as_mut_slice()
    }

    fn backward_op(&self, id: usize, d_out: &[T], adj: &mut [Option<Vec<T>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}

            Op::Matmul { a, b } => {
                let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                let factor = sabotage_factor::<T>("matmul");
                let d_out = &scaled(d_out, factor);
                // dA += dC · Bᵀ
                matmul_nt_acc(d_out, bv.data(), m, n, k, self.slot(adj, *a));
                // dB += Aᵀ · dC
                matmul_tn_acc(av.data(), d_out, m, k, n, self.slot(adj, *b));
            }

            Op::Add { a, b } => {
                for (g, &d) in self.slot(adj, *a).iter_mut().zip(d_out) {
                    *g = *g + d;
                }
                for (g, &d) in self.slot(adj, *b).iter_mut().zip(d_out) {
                    *g = *g + d;
                }
            }

            Op::Sub { a, b } => {
                for (g, &d) in self.slot(adj, *a).iter_mut().zip(d_out) {
                    *g = *g + d;
                }
                for (g, &d) in self.slot(adj, *b).iter_mut().zip(d_out) {
                    *g = *g - d;
                }
            }

            Op::Mul { a, b } => {
                let bv = self.nodes[b.0].value.data().to_vec();
                for ((g, &d), &y) in self.slot(adj, *a).iter_mut().zip(d_out).zip(&bv) {
                    *g = *g + d * y;
                }
                let av = self.nodes[a.0].value.data().to_vec();
                for ((g, &d), &x) in self.slot(adj, *b).iter_mut().zip(d_out).zip(&av) {
                    *g = *g + d * x;
                }
            }

            Op::Scale { x, factor } => {
                let f = *factor;
                for (g, &d) in self.slot(adj, *x).iter_mut().zip(d_out) {
                    *g = *g + f * d;
                }
            }

            Op::OneMinus { x } => {
                for (g, &d) in self.slot(adj, *x).iter_mut().zip(d_out) {
                    *g = *g - d;
                }
            }

            Op::Sigmoid { x } => {
                let y = self.nodes[id].value.data();
                let factor = sabotage_factor::<T>("sigmoid").unwrap_or_else(T::one);
                let slot = self.slot(adj, *x);
                for ((g, &d), &yv) in slot.iter_mut().zip(d_out).zip(y) {
                    *g = *g + factor * d * yv * (T::one() - yv);
                }
            }

            Op::Tanh { x } => {
                let y = self.nodes[id].value.data();
                let factor = sabotage_factor::<T>("tanh").unwrap_or_else(T::one);
                let slot = self.slot(adj, *x);
                for ((g, &d), &yv) in slot.iter_mut().zip(d_out).zip(y) {
                    *g = *g + factor * d * (T::one() - yv * yv);
                }
            }

            Op::AddRowVec { m, v } => {
                let cols = self.nodes[m.0].value.cols();
                for (g, &d) in self.slot(adj, *m).iter_mut().zip(d_out) {
                    *g = *g + d;
                }
                let vslot = self.slot(adj, *v);
                for (i, &d) in d_out.iter().enumerate() {
                    vslot[i % cols] = vslot[i % cols] + d;
                }
            }

            Op::MulRowVec { m, v } => {
                let cols = self.nodes[m.0].value.cols();
                let vv = self.nodes[v.0].value.data().to_vec();
                for (i, (g, &d)) in self.slot(adj, *m).iter_mut().zip(d_out).enumerate() {
                    *g = *g + d * vv[i % cols];
                }
                let mv = self.nodes[m.0].value.data();
                let vslot = self.slot(adj, *v);
                for (i, &d) in d_out.iter().enumerate() {
                    vslot[i % cols] = vslot[i % cols] + d * mv[i];
                }
            }

            Op::MulColVec { m, v } => {
                let cols = self.nodes[m.0].value.cols();
                let vv = self.nodes[v.0].value.data().to_vec();
                for (i, (g, &d)) in self.slot(adj, *m).iter_mut().zip(d_out).enumerate() {
                    *g = *g + d * vv[i / cols];
                }
                let mv = self.nodes[m.0].value.data();
                let vslot = self.slot(adj, *v);
                for (i, &d) in d_out.iter().enumerate() {
                    vslot[i / cols] = vslot[i / cols] + d * mv[i];
                }
            }

            Op::Sum { x } => {
                let d = d_out[0];
                for g in self.slot(adj, *x).iter_mut() {
                    *g = *g + d;
                }
            }

            Op::TimeGate(gate) => {
                let tau_v = self.nodes[gate.tau.0].value.data().to_vec();
                let s_v = self.nodes[gate.shift.0].value.data().to_vec();
                let r_on = self.nodes[gate.ron.0].value.data()[0];
                let hidden = tau_v.len();
                let factor = sabotage_factor::<T>("time_gate").unwrap_or_else(T::one);

                let mut d_tau = vec![T::zero(); hidden];
                let mut d_s = vec![T::zero(); hidden];
                let mut d_ron = T::zero();
                for (b, &t) in gate.times.iter().enumerate() {
                    for j in 0..hidden {
                        let d = d_out[b * hidden + j];
                        if d == T::zero() {
                            continue;
                        }
                        let tau = tau_v[j];
                        let phi = gate_phase(t, s_v[j], tau);
                        let ev = gate_eval(phi, r_on, gate.alpha);
                        let dk_dphi = factor * ev.dk_dphi;
                        // phi = (t - s)/tau - floor((t - s)/tau), floor constant:
                        // dphi/ds = -1/tau, dphi/dtau = -(t - s)/tau^2
                        d_s[j] = d_s[j] - d * dk_dphi / tau;
                        d_tau[j] = d_tau[j] - d * dk_dphi * (t - s_v[j]) / (tau * tau);
                        d_ron = d_ron + d * ev.dk_dron;
                    }
                }
                for (g, d) in self.slot(adj, gate.tau).iter_mut().zip(d_tau) {
                    *g = *g + d;
                }
                for (g, d) in self.slot(adj, gate.shift).iter_mut().zip(d_s) {
                    *g = *g + d;
                }
                self.slot(adj, gate.ron)[0] = self.slot(adj, gate.ron)[0] + d_ron;
            }

            Op::CrossEntropySum { logits, labels } => {
                let lv = &self.nodes[logits.0].value;
                let classes = lv.cols();
                let d = d_out[0];
                let mut probs = vec![T::zero(); classes];
                for (i, &label) in labels.iter().enumerate() {
                    let row = lv.row(i);
                    let max = row.iter().copied().fold(row[0], |a, b| a.max(b));
                    let mut denom = T::zero();
                    for (p, &x) in probs.iter_mut().zip(row) {
                        *p = (x - max).exp();
                        denom = denom + *p;
                    }
                    let slot = self.slot(adj, *logits);
                    for (c, &p) in probs.iter().enumerate() {
                        let indicator = if c == label { T::one() } else { T::zero() };
                        slot[i * classes + c] = slot[i * classes + c] + d * (p / denom - indicator);
                    }
                }
            }
        }
    }
}

fn scaled<T: Real>(d: &[T], factor: Option<T>) -> Vec<T> {
    match factor {
        Some(f) => d.iter().map(|&x| f * x).collect(),
        None => d.to_vec(),
    }
}

// ── Gradient sabotage hook ──────────────────────────────────────────
//
// Negative control for the finite-difference verifier: setting
// PLSTM_SABOTAGE_GRAD to an op name (tanh, sigmoid, matmul, time_gate)
// corrupts that op's backward rule by 1%, which the verifier must flag.
// Read once per process; test-only.

#[doc(hidden)]
pub fn sabotaged_op() -> Option<&'static str> {
    use std::sync::OnceLock;
    static TARGET: OnceLock<Option<String>> = OnceLock::new();
    TARGET
        .get_or_init(|| std::env::var("PLSTM_SABOTAGE_GRAD").ok())
        .as_deref()
}

#[inline]
fn sabotage_factor<T: Real>(op: &str) -> Option<T> {
    match sabotaged_op() {
        Some(target) if target == op => Some(T::of(1.01)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arr(shape: Vec<usize>, data: Vec<f64>) -> RealArray<f64> {
        RealArray::from_vec(shape, data).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let eye = tape.constant(arr(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let m = tape.constant(arr(vec![2, 2], vec![3.0, -1.0, 2.5, 7.0]));
        let out = tape.matmul(eye, m).unwrap();
        assert_eq!(tape.value(out).data(), &[3.0, -1.0, 2.5, 7.0]);
    }

    #[test]
    fn matmul_small_case() {
        let mut tape = Tape::new();
        let a = tape.constant(arr(vec![1, 2], vec![1.0, 2.0]));
        let b = tape.constant(arr(vec![2, 1], vec![3.0, 4.0]));
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(RealArray::zeros(vec![2, 3]));
        let b = tape.constant(RealArray::zeros(vec![2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("matmul"), "{err}");
    }

    #[test]
    fn sigmoid_and_tanh_fixed_points() {
        let mut tape = Tape::new();
        let x = tape.constant(arr(vec![2], vec![0.0, 1.0]));
        let s = tape.sigmoid(x).unwrap();
        let t = tape.tanh(x).unwrap();
        assert_eq!(tape.value(s).data()[0], 0.5);
        assert_eq!(tape.value(t).data()[0], 0.0);
        let expect = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((tape.value(s).data()[1] - expect).abs() < 1e-12);
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::new();
        let p = tape.param(arr(vec![3], vec![0.3, -1.2, 5.0]));
        let loss = tape.sum(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(p).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_half_squared_norm_is_param() {
        let mut tape = Tape::new();
        let p = tape.param(arr(vec![3], vec![0.3, -1.2, 5.0]));
        let sq = tape.mul(p, p).unwrap();
        let s = tape.sum(sq).unwrap();
        let loss = tape.scale(s, 0.5).unwrap();
        let grads = tape.backward(loss).unwrap();
        for (g, x) in grads.get(p).unwrap().data().iter().zip([0.3, -1.2, 5.0]) {
            assert!((g - x).abs() < 1e-15);
        }
    }

    #[test]
    fn unused_param_gets_exact_zero() {
        let mut tape = Tape::new();
        let used = tape.param(arr(vec![2], vec![1.0, 2.0]));
        let unused = tape.param(arr(vec![2], vec![3.0, 4.0]));
        let loss = tape.sum(used).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(unused).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let p = tape.param(arr(vec![2], vec![1.0, 2.0]));
        assert!(matches!(tape.backward(p), Err(Error::Contract(_))));
    }

    #[test]
    fn backward_reruns_are_bit_identical() {
        let build = || {
            let mut tape = Tape::new();
            let p = tape.param(arr(vec![2, 2], vec![0.1, -0.4, 0.9, 0.2]));
            let q = tape.param(arr(vec![2, 2], vec![1.1, 0.3, -0.2, 0.5]));
            let prod = tape.matmul(p, q).unwrap();
            let sg = tape.sigmoid(prod).unwrap();
            let th = tape.tanh(sg).unwrap();
            let loss = tape.sum(th).unwrap();
            let g = tape.backward(loss).unwrap();
            (
                g.get(p).unwrap().to_f64_vec(),
                g.get(q).unwrap().to_f64_vec(),
            )
        };
        let (g1p, g1q) = build();
        let (g2p, g2q) = build();
        assert!(g1p.iter().zip(&g2p).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(g1q.iter().zip(&g2q).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln2() {
        let mut tape = Tape::new();
        let logits = tape.constant(arr(vec![1, 2], vec![0.7, 0.7]));
        let ce = tape.cross_entropy_sum(logits, &[0]).unwrap();
        assert!((tape.value(ce).data()[0] - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_label_out_of_range() {
        let mut tape = Tape::new();
        let logits = tape.constant(arr(vec![1, 2], vec![0.0, 0.0]));
        assert!(matches!(
            tape.cross_entropy_sum(logits, &[2]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn cross_entropy_matches_hand_computed_log_softmax() {
        let mut tape = Tape::new();
        let (a, b) = (1.37, -0.52);
        let logits = tape.constant(arr(vec![1, 2], vec![a, b]));
        let ce = tape.cross_entropy_sum(logits, &[1]).unwrap();
        let expect = -(b - (a.exp() + b.exp()).ln());
        assert!((tape.value(ce).data()[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn time_gate_values_match_scalar_gate_math() {
        use super::super::gate::gate_value;
        let mut tape = Tape::new();
        let tau = tape.param(arr(vec![2], vec![1.0, 2.0]));
        let s = tape.param(arr(vec![2], vec![0.0, 0.5]));
        let ron = tape.constant(RealArray::scalar(0.05));
        let k = tape
            .time_gate(&[0.0125, 4.9], tau, s, ron, 0.001)
            .unwrap();
        let kv = tape.value(k);
        assert_eq!(kv.shape(), &[2, 2]);
        for (b, &t) in [0.0125, 4.9].iter().enumerate() {
            for (j, (&tv, &sv)) in [1.0, 2.0].iter().zip(&[0.0, 0.5]).enumerate() {
                let (expect, _) = gate_value(gate_phase(t, sv, tv), 0.05, 0.001);
                assert_eq!(kv.get2(b, j), expect);
            }
        }
    }
}
