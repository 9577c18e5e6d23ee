use num_complex::Complex64;

use crate::config::{DcGains, DcParams, InputCurrentModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    /// Duty command clamped to `[0, d_max]`.
    pub d_raw: f64,
    pub i_ref: f64,
    pub d_eta: f64,
    pub d_zeta: f64,
}

/// Dual-loop PI controller: outer DC-voltage loop producing `i_ref`, inner
/// current loop with `i_out` feed-forward and the predictor term.
#[allow(clippy::too_many_arguments)]
pub fn dcdc_control(
    v_dc_star: f64,
    v_dc: f64,
    i_in: f64,
    i_out: f64,
    eta: f64,
    zeta_i: f64,
    delta_i_out: f64,
    gains: &DcGains,
    d_max: f64,
) -> ControlOutput {
    let err_v = v_dc_star - v_dc;
    let i_ref = gains.kp_vdc * err_v + gains.ki_vdc * eta;
    let err_i = i_ref + i_out - i_in;
    let d = gains.kp_ib * err_i + gains.ki_ib * zeta_i + gains.k_pred * delta_i_out;
    ControlOutput {
        d_raw: d.clamp(0.0, d_max),
        i_ref,
        d_eta: err_v,
        d_zeta: err_i,
    }
}

/// Forward-Euler estimate of the change in converter output current over one
/// switching period, using the instantaneous switching-current derivative.
pub fn predictor(v_m: Complex64, di_s: Complex64, v_dc: f64, t_s: f64) -> Result<f64> {
    if !(v_dc > 0.0) {
        return Err(Error::domain(
            "predictor",
            format!("v_dc = {v_dc} must be > 0"),
        ));
    }
    Ok(t_s * (v_m.re * di_s.re + v_m.im * di_s.im) / v_dc)
}

/// `i_out = p_inv / v_dc`.
pub fn converter_output_current(v_m: Complex64, i_s: Complex64, v_dc: f64) -> Result<f64> {
    if !(v_dc > 0.0) {
        return Err(Error::domain(
            "converter_output_current",
            format!("v_dc = {v_dc} must be > 0"),
        ));
    }
    Ok((v_m.re * i_s.re + v_m.im * i_s.im) / v_dc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcElectrical {
    pub di_b: f64,
    pub dv_dc: f64,
    pub i_in: f64,
}

/// Averaged boost converter and DC-link capacitor.
pub fn dc_electrical_derivatives(
    i_b: f64,
    v_dc: f64,
    d_eff: f64,
    v_b: f64,
    i_out: f64,
    dc: &DcParams,
    omega_b: f64,
) -> Result<DcElectrical> {
    if !(v_dc > 0.0) {
        return Err(Error::domain(
            "dc_electrical_derivatives",
            format!("v_dc = {v_dc} must be > 0"),
        ));
    }
    let i_in = match dc.input_current {
        InputCurrentModel::PowerBalance => v_b * i_b / v_dc,
        InputCurrentModel::AveragedBoost => (1.0 - d_eff) * i_b,
    };
    Ok(DcElectrical {
        di_b: omega_b / dc.l_dc * (v_b - (1.0 - d_eff) * v_dc),
        dv_dc: omega_b / dc.c_dc * (i_in - i_out),
        i_in,
    })
}
