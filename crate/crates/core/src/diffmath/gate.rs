use crate::real::Real;

/// Which segment of the oscillation a phase value falls in.
///
/// The cycle is split into half-open intervals of the normalized phase:
/// rising `[0, r_on/2)`, falling `[r_on/2, r_on)`, leak `[r_on, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateBranch {
    Rise,
    Fall,
    Leak,
}

impl GateBranch {
    pub fn name(self) -> &'static str {
        match self {
            GateBranch::Rise => "rise",
            GateBranch::Fall => "fall",
            GateBranch::Leak => "leak",
        }
    }
}

/// Normalized phase `((t - s) mod tau) / tau` with floored mod, in `[0, 1)`.
///
/// Floored mod keeps the result non-negative for `t < s`, which happens at
/// sequence starts when phase shifts are drawn in `[0, tau]`.
#[inline]
pub fn gate_phase<T: Real>(t: T, s: T, tau: T) -> T {
    let rel = t - s;
    let mut m = rel - tau * (rel / tau).floor();
    // Rounding can land the residue exactly on tau (or just below zero);
    // fold it back so phi stays in [0, 1).
    if m >= tau {
        m = m - tau;
    }
    if m < T::zero() {
        m = T::zero();
    }
    m / tau
}

/// Gate openness for a phase value, with branch classification.
///
/// `r_on >= 1` pins the gate fully open (`k = 1`): with no closed segment
/// left, the cell must reduce exactly to an ungated step rather than to the
/// triangular ramp a literal reading of the piecewise form would give.
#[inline]
pub fn gate_value<T: Real>(phi: T, r_on: T, alpha: T) -> (T, GateBranch) {
    let half = r_on / T::of(2.0);
    if r_on >= T::one() {
        let branch = if phi < half { GateBranch::Rise } else { GateBranch::Fall };
        return (T::one(), branch);
    }
    if phi < half {
        (T::of(2.0) * phi / r_on, GateBranch::Rise)
    } else if phi < r_on {
        (T::of(2.0) - T::of(2.0) * phi / r_on, GateBranch::Fall)
    } else {
        (alpha * phi, GateBranch::Leak)
    }
}

/// Whether a phase value counts as an update (open phase, `phi < r_on`).
#[inline]
pub fn gate_open<T: Real>(phi: T, r_on: T) -> bool {
    phi < r_on
}

/// Gate value plus the local derivatives needed by the backward pass.
pub(crate) struct GateEval<T> {
    pub k: T,
    pub dk_dphi: T,
    pub dk_dron: T,
}

#[inline]
pub(crate) fn gate_eval<T: Real>(phi: T, r_on: T, alpha: T) -> GateEval<T> {
    let two = T::of(2.0);
    if r_on >= T::one() {
        // Pinned open: constant in all parameters.
        return GateEval {
            k: T::one(),
            dk_dphi: T::zero(),
            dk_dron: T::zero(),
        };
    }
    let half = r_on / two;
    if phi < half {
        GateEval {
            k: two * phi / r_on,
            dk_dphi: two / r_on,
            dk_dron: -two * phi / (r_on * r_on),
        }
    } else if phi < r_on {
        GateEval {
            k: two - two * phi / r_on,
            dk_dphi: -two / r_on,
            dk_dron: two * phi / (r_on * r_on),
        }
    } else {
        GateEval {
            k: alpha * phi,
            dk_dphi: alpha,
            dk_dron: T::zero(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_is_non_negative_for_t_before_s() {
        let phi = gate_phase(0.0f64, 1.5, 2.0);
        // (0 - 1.5) mod 2 = 0.5 -> phi = 0.25
        assert!((phi - 0.25).abs() < 1e-15);
        assert!(phi >= 0.0 && phi < 1.0);
    }

    #[test]
    fn peak_value_is_exactly_one() {
        // tau=1, s=0, r_on=0.05, t=0.025: phi = r_on/2 exactly, falling branch.
        let phi = gate_phase(0.025f64, 0.0, 1.0);
        let (k, branch) = gate_value(phi, 0.05, 0.001);
        assert_eq!(branch, GateBranch::Fall);
        assert_eq!(k, 1.0);
    }

    #[test]
    fn rising_midpoint() {
        // tau=1, s=0, r_on=0.05, t=0.0125 -> k = 2*0.0125/0.05 = 0.5
        let phi = gate_phase(0.0125f64, 0.0, 1.0);
        let (k, branch) = gate_value(phi, 0.05, 0.001);
        assert_eq!(branch, GateBranch::Rise);
        assert!((k - 0.5).abs() < 1e-12);
    }

    #[test]
    fn leak_branch_value() {
        // tau=1, s=0, r_on=0.05, alpha=0.001, t=0.5 -> phi=0.5, k=0.0005
        let phi = gate_phase(0.5f64, 0.0, 1.0);
        let (k, branch) = gate_value(phi, 0.05, 0.001);
        assert_eq!(branch, GateBranch::Leak);
        assert!((k - 0.0005).abs() < 1e-15);
    }

    #[test]
    fn hand_checked_leak_case() {
        // tau=2, s=0.5, t=4.9: phi = ((4.4) mod 2)/2 = 0.2 -> leak branch.
        let phi = gate_phase(4.9f64, 0.5, 2.0);
        assert!((phi - 0.2).abs() < 1e-12);
        let (k, branch) = gate_value(phi, 0.05, 0.001);
        assert_eq!(branch, GateBranch::Leak);
        assert!((k - 0.0002).abs() < 1e-15);
    }

    #[test]
    fn pinned_open_when_ron_is_one() {
        for t in [0.0f64, 0.1, 0.3, 0.77, 0.999] {
            let phi = gate_phase(t, 0.0, 1.0);
            let (k, _) = gate_value(phi, 1.0, 0.0);
            assert_eq!(k, 1.0);
        }
    }
}
