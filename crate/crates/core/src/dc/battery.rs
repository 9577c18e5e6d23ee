use crate::config::{BatteryOrder, BatteryParams};
use crate::error::{Error, Result};

use super::DcState;

/// Terminal voltage of the battery equivalent circuit for its configured order.
pub fn battery_voltage(state: &DcState, i_b: f64, battery: &BatteryParams) -> f64 {
    let b = battery;
    match b.order {
        BatteryOrder::Zero => b.v_oc - i_b * b.order0_resistance(),
        BatteryOrder::Two => b.v_oc - i_b * b.r_b0 - state.v_cb1 - state.v_cb2,
        BatteryOrder::Four => {
            b.v_oc
                - i_b * b.r_b0
                - b.r_b1 * (i_b - state.i_l1)
                - b.r_b2 * (i_b - state.i_l2)
                - state.v_cb1
                - state.v_cb2
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BranchDerivatives {
    pub di_l1: f64,
    pub di_l2: f64,
    pub dv_cb1: f64,
    pub dv_cb2: f64,
}

/// Derivatives of the RL branch currents and RC branch voltages. RL entries
/// stay zero for order 2.
pub fn battery_derivatives(
    state: &DcState,
    i_b: f64,
    battery: &BatteryParams,
    omega_b: f64,
) -> Result<BranchDerivatives> {
    let b = battery;
    if !b.order.has_rc_branches() {
        return Err(Error::domain(
            "battery_derivatives",
            "order-0 battery has no branch states",
        ));
    }
    let need = |name: &str, v: f64| {
        if v > 0.0 {
            Ok(())
        } else {
            Err(Error::domain(
                "battery_derivatives",
                format!("{name} = {v} must be > 0 for an active branch"),
            ))
        }
    };
    need("c_b1", b.c_b1)?;
    need("c_b2", b.c_b2)?;
    need("r_b3", b.r_b3)?;
    need("r_b4", b.r_b4)?;

    let mut d = BranchDerivatives {
        dv_cb1: omega_b / b.c_b1 * (i_b - state.v_cb1 / b.r_b3),
        dv_cb2: omega_b / b.c_b2 * (i_b - state.v_cb2 / b.r_b4),
        ..Default::default()
    };
    if b.order.has_rl_branches() {
        need("l_b1", b.l_b1)?;
        need("l_b2", b.l_b2)?;
        d.di_l1 = omega_b / b.l_b1 * b.r_b1 * (i_b - state.i_l1);
        d.di_l2 = omega_b / b.l_b2 * b.r_b2 * (i_b - state.i_l2);
    }
    Ok(d)
}
