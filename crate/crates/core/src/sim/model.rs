//! The coupled nonlinear right-hand side `x' = f(x, u, w)`.

use crate::ac::{self, AcOutputs, AcState};
use crate::config::{DeadTimeLocation, LoadParams, SystemParams};
use crate::dc::{self, DcOutputs};
use crate::error::{Error, Result};

use super::state::SystemState;

/// Algebraic signals computed alongside the derivative.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Evaluation {
    pub ac: AcOutputs,
    pub dc: DcOutputs,
}

/// Writes `f(x)` into `dx` and returns the algebraic signals at `x`.
pub fn system_derivative(
    x: &[f64],
    params: &SystemParams,
    load: &LoadParams,
    dx: &mut [f64],
) -> Result<Evaluation> {
    let order = params.battery.order;
    let state = SystemState::from_slice(order, x);
    let (deriv, eval) = evaluate(&state, params, load)?;
    deriv.write_to(dx);
    Ok(eval)
}

/// Typed form of [`system_derivative`].
pub fn evaluate(
    state: &SystemState,
    params: &SystemParams,
    load: &LoadParams,
) -> Result<(SystemState, Evaluation)> {
    let omega_b = params.bases.omega_b;
    let (acs, dcs) = (&state.ac, &state.dc);
    let v_dc = dcs.v_dc;
    if !(v_dc.is_finite() && v_dc > 0.0) {
        return Err(Error::domain(
            "system_derivative",
            format!("v_dc = {v_dc} must be > 0"),
        ));
    }

    // AC control cascade and filter
    let ac_out = ac::evaluate_outputs(acs, v_dc, &params.ac, load)?;
    let dac: AcState = ac::ac_derivatives(acs, &ac_out, &params.ac, omega_b)?;

    // DC side
    let dcp = &params.dc;
    let i_out = dc::converter_output_current(ac_out.v_m, acs.i_s, v_dc)?;
    let delta_i_out = dc::predictor(ac_out.v_m, dac.i_s, v_dc, dcp.t_s)?;
    let v_b = dc::battery_voltage(dcs, dcs.i_b, &params.battery);

    let mut ddc = dc::DcState::default();
    let (d_raw, d_eff, v_dc_measured, control, electrical);
    match dcp.dead_time_on {
        DeadTimeLocation::Duty => {
            // the averaged block has no feed-through, so d_eff is known
            // before the controller runs
            let (d, _) = dc::deadtime_derivatives(&dcs.pade, 0.0, dcp.t_dead, dcp.d_max)?;
            d_eff = d;
            electrical =
                dc::dc_electrical_derivatives(dcs.i_b, v_dc, d_eff, v_b, i_out, dcp, omega_b)?;
            v_dc_measured = v_dc;
            control = dc::dcdc_control(
                dcp.v_dc_star,
                v_dc_measured,
                electrical.i_in,
                i_out,
                dcs.eta,
                dcs.zeta_i,
                delta_i_out,
                &dcp.gains,
                dcp.d_max,
            );
            d_raw = control.d_raw;
            let (_, dpade) = dc::deadtime_derivatives(&dcs.pade, d_raw, dcp.t_dead, dcp.d_max)?;
            ddc.pade = dpade;
        }
        DeadTimeLocation::Measurement => {
            let (v_meas, dpade) = dc::pade_average(&dcs.pade, v_dc, dcp.t_dead)?;
            v_dc_measured = v_meas;
            ddc.pade = dpade;
            // i_in does not depend on d under power balance
            let pre = dc::dc_electrical_derivatives(dcs.i_b, v_dc, 0.0, v_b, i_out, dcp, omega_b)?;
            control = dc::dcdc_control(
                dcp.v_dc_star,
                v_dc_measured,
                pre.i_in,
                i_out,
                dcs.eta,
                dcs.zeta_i,
                delta_i_out,
                &dcp.gains,
                dcp.d_max,
            );
            d_raw = control.d_raw;
            d_eff = d_raw;
            electrical =
                dc::dc_electrical_derivatives(dcs.i_b, v_dc, d_eff, v_b, i_out, dcp, omega_b)?;
        }
    }

    if params.battery.order.has_rc_branches() {
        let br = dc::battery_derivatives(dcs, dcs.i_b, &params.battery, omega_b)?;
        ddc.i_l1 = br.di_l1;
        ddc.i_l2 = br.di_l2;
        ddc.v_cb1 = br.dv_cb1;
        ddc.v_cb2 = br.dv_cb2;
    }
    ddc.i_b = electrical.di_b;
    ddc.v_dc = electrical.dv_dc;
    ddc.eta = control.d_eta;
    ddc.zeta_i = control.d_zeta;

    let eval = Evaluation {
        ac: ac_out,
        dc: DcOutputs {
            v_b,
            d_raw,
            d_eff,
            i_in: electrical.i_in,
            i_out,
            i_ref: control.i_ref,
            delta_i_out,
            v_dc_measured,
        },
    };
    Ok((
        SystemState {
            order: state.order,
            ac: dac,
            dc: ddc,
        },
        eval,
    ))
}
