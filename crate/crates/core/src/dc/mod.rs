//! DC side: battery equivalent circuit, averaged boost converter, DC link,
//! dual-loop DC/DC controller with one-step predictor, and the dead-time block.

mod battery;
mod control;
mod deadtime;

pub use battery::{battery_derivatives, battery_voltage, BranchDerivatives};
pub use control::{
    converter_output_current, dc_electrical_derivatives, dcdc_control, predictor, ControlOutput,
    DcElectrical,
};
pub use deadtime::{
    deadtime_derivatives, pade_average, pade_outputs, pade_steady_state, PADE_STATES,
};

use serde::{Deserialize, Serialize};

use crate::config::BatteryOrder;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DcState {
    /// RL-branch currents (order 4 only).
    pub i_l1: f64,
    pub i_l2: f64,
    /// RC-branch voltages (orders 2 and 4).
    pub v_cb1: f64,
    pub v_cb2: f64,
    /// Battery / DC-DC inductor current.
    pub i_b: f64,
    pub v_dc: f64,
    /// Voltage-loop integrator.
    pub eta: f64,
    /// Current-loop integrator.
    pub zeta_i: f64,
    /// Dead-time states: two for the 2/2 Padé block, three for the 3/3 block.
    pub pade: [f64; PADE_STATES],
}

impl DcState {
    pub fn len(order: BatteryOrder) -> usize {
        4 + PADE_STATES + branch_count(order)
    }

    pub fn labels(order: BatteryOrder) -> Vec<&'static str> {
        let mut labels = Vec::with_capacity(Self::len(order));
        if order.has_rl_branches() {
            labels.extend(["i_l1", "i_l2"]);
        }
        if order.has_rc_branches() {
            labels.extend(["v_cb1", "v_cb2"]);
        }
        labels.extend([
            "i_b", "v_dc", "eta", "zeta_i", "pade2_1", "pade2_2", "pade3_1", "pade3_2", "pade3_3",
        ]);
        labels
    }

    /// Index of `v_dc` inside the DC block.
    pub fn v_dc_index(order: BatteryOrder) -> usize {
        branch_count(order) + 1
    }

    pub fn write_to(&self, order: BatteryOrder, out: &mut [f64]) {
        let mut k = 0;
        let mut push = |v: f64| {
            out[k] = v;
            k += 1;
        };
        if order.has_rl_branches() {
            push(self.i_l1);
            push(self.i_l2);
        }
        if order.has_rc_branches() {
            push(self.v_cb1);
            push(self.v_cb2);
        }
        push(self.i_b);
        push(self.v_dc);
        push(self.eta);
        push(self.zeta_i);
        for p in self.pade {
            push(p);
        }
    }

    pub fn read_from(order: BatteryOrder, x: &[f64]) -> Self {
        let mut s = DcState::default();
        let mut k = 0;
        let mut next = || {
            k += 1;
            x[k - 1]
        };
        if order.has_rl_branches() {
            s.i_l1 = next();
            s.i_l2 = next();
        }
        if order.has_rc_branches() {
            s.v_cb1 = next();
            s.v_cb2 = next();
        }
        s.i_b = next();
        s.v_dc = next();
        s.eta = next();
        s.zeta_i = next();
        for p in &mut s.pade {
            *p = next();
        }
        s
    }
}

fn branch_count(order: BatteryOrder) -> usize {
    match order {
        BatteryOrder::Zero => 0,
        BatteryOrder::Two => 2,
        BatteryOrder::Four => 4,
    }
}

/// Algebraic DC-side quantities at one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DcOutputs {
    pub v_b: f64,
    pub d_raw: f64,
    pub d_eff: f64,
    pub i_in: f64,
    pub i_out: f64,
    pub i_ref: f64,
    pub delta_i_out: f64,
    /// DC-link voltage seen by the controller (differs from `v_dc` only when
    /// the dead time delays the measurement).
    pub v_dc_measured: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_dimensions() {
        assert_eq!(DcState::len(BatteryOrder::Zero), 9);
        assert_eq!(DcState::len(BatteryOrder::Two), 11);
        assert_eq!(DcState::len(BatteryOrder::Four), 13);
        for order in BatteryOrder::ALL {
            assert_eq!(DcState::labels(order).len(), DcState::len(order));
            assert_eq!(DcState::labels(order)[DcState::v_dc_index(order)], "v_dc");
        }
    }

    #[test]
    fn round_trip_drops_absent_branches() {
        let s = DcState {
            i_l1: 1.0,
            i_l2: 2.0,
            v_cb1: 3.0,
            v_cb2: 4.0,
            i_b: 5.0,
            v_dc: 6.0,
            eta: 7.0,
            zeta_i: 8.0,
            pade: [9.0, 10.0, 11.0, 12.0, 13.0],
        };
        let mut buf = [0.0; 13];
        s.write_to(BatteryOrder::Four, &mut buf);
        assert_eq!(DcState::read_from(BatteryOrder::Four, &buf), s);

        s.write_to(BatteryOrder::Zero, &mut buf);
        let back = DcState::read_from(BatteryOrder::Zero, &buf);
        assert_eq!(back.i_b, 5.0);
        assert_eq!(back.v_cb1, 0.0);
        assert_eq!(back.pade, s.pade);
    }
}
