//! End-to-end finite-difference verification of the tape gradients through
//! the full recurrent model, including the gate timing parameters.
//!
//! The scenario search keeps every sampled phase at least `margin` away
//! from the piecewise-gate boundaries {0, r_on/2, r_on}, where the
//! one-sided derivative would make the comparison meaningless, and insists
//! on coverage of all three branches so the open-phase slopes are actually
//! exercised.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffmath::gate::gate_phase;
use crate::diffmath::{finite_difference_grad, max_rel_err, RealArray};
use crate::error::{Error, Result};
use crate::network::{
    batch_targets, forward_batch, loss_node, CellKind, GateBiasInit, LossKind, Mode, Model,
    ModelConfig,
};
use crate::tasks::{Event, EventSequence, Target};

#[derive(Clone, Debug)]
pub struct GradCheckSpec {
    pub cell_kind: CellKind,
    pub hidden: usize,
    pub batch: usize,
    pub events: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    pub peepholes: bool,
    pub train_ron: bool,
    pub seed: u64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub boundary_margin: f64,
}

impl Default for GradCheckSpec {
    fn default() -> Self {
        GradCheckSpec {
            cell_kind: CellKind::PhasedLstm,
            hidden: 4,
            batch: 2,
            events: 5,
            in_dim: 3,
            out_dim: 2,
            peepholes: true,
            train_ron: true,
            seed: 1,
            epsilon: 1e-5,
            tolerance: 1e-4,
            boundary_margin: 1e-3,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GroupResult {
    pub name: &'static str,
    pub worst_rel_err: f64,
    pub coords: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub groups: Vec<GroupResult>,
    pub tolerance: f64,
    pub scenario_seed: u64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.groups
            .iter()
            .map(|g| g.worst_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.worst() < self.tolerance
    }

    pub fn failing(&self) -> Vec<&GroupResult> {
        self.groups
            .iter()
            .filter(|g| g.worst_rel_err >= self.tolerance)
            .collect()
    }
}

fn model_config(spec: &GradCheckSpec) -> ModelConfig {
    ModelConfig {
        cell_kind: spec.cell_kind,
        in_dim: spec.in_dim,
        hidden: spec.hidden,
        out_dim: spec.out_dim,
        time_as_feature: false,
        loss_kind: LossKind::CrossEntropy,
        tau_init_range: (0.0, 2.0),
        peepholes: spec.peepholes,
        r_on: 0.05,
        alpha: 0.001,
        train_ron: spec.train_ron,
        bias_init: GateBiasInit::default(),
    }
}

fn make_batch(spec: &GradCheckSpec, rng: &mut ChaCha8Rng) -> Vec<EventSequence> {
    (0..spec.batch)
        .map(|row| {
            let mut t = rng.gen_range(0.0..2.0);
            let events = (0..spec.events)
                .map(|_| {
                    t += rng.gen_range(0.5..4.0);
                    Event {
                        t,
                        y: (0..spec.in_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    }
                })
                .collect();
            EventSequence {
                events,
                target: Target::Class(row % spec.out_dim),
            }
        })
        .collect()
}

/// True when every phase the scenario will sample is clear of branch
/// boundaries and all three branches occur at least once.
fn scenario_ok(spec: &GradCheckSpec, model: &Model<f64>, batch: &[EventSequence]) -> bool {
    let Some(gate) = &model.gate else {
        return true;
    };
    let r_on = gate.r_on_value();
    let (mut rise, mut fall, mut leak) = (false, false, false);
    for seq in batch {
        for e in &seq.events {
            for j in 0..model.hidden() {
                let phi = gate_phase(e.t, gate.s.data()[j], gate.tau.data()[j]);
                let margin = [0.0, r_on / 2.0, r_on, 1.0]
                    .iter()
                    .map(|b| (phi - b).abs())
                    .fold(f64::INFINITY, f64::min);
                if margin < spec.boundary_margin {
                    return false;
                }
                if phi < r_on / 2.0 {
                    rise = true;
                } else if phi < r_on {
                    fall = true;
                } else {
                    leak = true;
                }
            }
        }
    }
    rise && fall && leak
}

/// Compare every parameter's tape gradient against central differences on
/// the same loss. Deterministic in `spec.seed`: the scenario is the first
/// derived seed whose phases satisfy the boundary/coverage predicate.
pub fn run_gradcheck(spec: &GradCheckSpec) -> Result<GradCheckReport> {
    let cfg = model_config(spec);
    let mut scenario_seed = spec.seed;
    let (model, batch) = loop {
        let model = Model::<f64>::init(&cfg, scenario_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(scenario_seed ^ 0xF00D);
        let batch = make_batch(spec, &mut rng);
        if scenario_ok(spec, &model, &batch) {
            break (model, batch);
        }
        scenario_seed += 1;
        if scenario_seed > spec.seed + 10_000 {
            return Err(Error::contract(
                "no boundary-avoiding gradcheck scenario found; widen the margins",
            ));
        }
    };

    let refs: Vec<&EventSequence> = batch.iter().collect();
    let trainable = model.trainable_names(&[]);
    let targets = batch_targets(&refs)?;

    // Tape route.
    let fb = forward_batch(&model, &refs, &trainable, Mode::Train)?;
    let mut tape = fb.tape;
    let loss = loss_node(&mut tape, fb.output, &targets, cfg.loss_kind, refs.len())?;
    let tape_grads = tape.backward(loss)?.into_arrays();

    // Finite-difference route: re-run the forward pass at displaced
    // parameters; the tape is only used to evaluate the loss value.
    let params: Vec<RealArray<f64>> = trainable
        .iter()
        .map(|n| model.param(n).expect("trainable exists").clone())
        .collect();
    let loss_of = |candidate: &[RealArray<f64>]| -> Result<f64> {
        let mut m = model.clone();
        for (name, value) in trainable.iter().zip(candidate) {
            *m.param_mut(name).expect("trainable exists") = value.clone();
        }
        let fb = forward_batch(&m, &refs, &[], Mode::Train)?;
        let mut tape = fb.tape;
        let loss = loss_node(&mut tape, fb.output, &targets, cfg.loss_kind, refs.len())?;
        Ok(tape.value(loss).data()[0])
    };
    let fd_grads = finite_difference_grad(loss_of, &params, spec.epsilon)?;

    let groups = trainable
        .iter()
        .zip(tape_grads.iter().zip(&fd_grads))
        .map(|(&name, (tape_g, fd_g))| GroupResult {
            name,
            worst_rel_err: max_rel_err(tape_g, fd_g),
            coords: tape_g.numel(),
        })
        .collect();
    Ok(GradCheckReport {
        groups,
        tolerance: spec.tolerance,
        scenario_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_phased_model_passes() {
        let spec = GradCheckSpec {
            hidden: 2,
            batch: 1,
            events: 5,
            in_dim: 2,
            ..Default::default()
        };
        let report = run_gradcheck(&spec).unwrap();
        assert!(
            report.passed(),
            "worst {} in {:?}",
            report.worst(),
            report.failing().iter().map(|g| g.name).collect::<Vec<_>>()
        );
        // tau and s must actually be among the checked groups.
        for name in ["tau", "s", "r_on"] {
            assert!(report.groups.iter().any(|g| g.name == name));
        }
    }

    #[test]
    fn ungated_subset_passes() {
        let spec = GradCheckSpec {
            cell_kind: CellKind::Lstm,
            hidden: 3,
            batch: 2,
            events: 4,
            in_dim: 2,
            ..Default::default()
        };
        let report = run_gradcheck(&spec).unwrap();
        assert!(report.passed(), "worst {}", report.worst());
        assert!(report.groups.iter().all(|g| g.name != "tau"));
    }
}
