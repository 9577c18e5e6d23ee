//! Grid-forming converter: droop, virtual impedance, cascaded voltage/current
//! loops, modulation limit and the LC filter plus line in the converter's
//! rotating dq frame.
//!
//! Complex numbers carry dq pairs as `d + j q`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::{AcParams, LoadModel, LoadParams};
use crate::error::{Error, Result};

/// Below this grid-current magnitude a constant-power load has no defined bus voltage.
pub const LOAD_CURRENT_GUARD: f64 = 1e-3;

const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AcState {
    /// Filter-capacitor voltage.
    pub e_g: Complex64,
    /// Grid-side current.
    pub i_g: Complex64,
    /// Switching (converter-side) current.
    pub i_s: Complex64,
    /// Voltage-loop integrator.
    pub xi: Complex64,
    /// Current-loop integrator.
    pub gamma: Complex64,
    pub theta_c: f64,
    pub p_tilde: f64,
    pub q_tilde: f64,
}

impl AcState {
    pub const LEN: usize = 13;

    pub const LABELS: [&'static str; Self::LEN] = [
        "e_g_d", "e_g_q", "i_g_d", "i_g_q", "i_s_d", "i_s_q", "xi_d", "xi_q", "gamma_d", "gamma_q",
        "theta_c", "p_tilde", "q_tilde",
    ];

    /// Index of `theta_c` in [`AcState::LABELS`].
    pub const THETA_INDEX: usize = 10;

    pub fn write_to(&self, out: &mut [f64]) {
        let values = [
            self.e_g.re,
            self.e_g.im,
            self.i_g.re,
            self.i_g.im,
            self.i_s.re,
            self.i_s.im,
            self.xi.re,
            self.xi.im,
            self.gamma.re,
            self.gamma.im,
            self.theta_c,
            self.p_tilde,
            self.q_tilde,
        ];
        out[..Self::LEN].copy_from_slice(&values);
    }

    pub fn read_from(x: &[f64]) -> Self {
        Self {
            e_g: Complex64::new(x[0], x[1]),
            i_g: Complex64::new(x[2], x[3]),
            i_s: Complex64::new(x[4], x[5]),
            xi: Complex64::new(x[6], x[7]),
            gamma: Complex64::new(x[8], x[9]),
            theta_c: x[10],
            p_tilde: x[11],
            q_tilde: x[12],
        }
    }
}

/// Algebraic quantities produced while evaluating the AC side.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AcOutputs {
    pub omega_c: f64,
    pub v_c: f64,
    pub v_bar: Complex64,
    pub i_s_ref: Complex64,
    /// Modulation reference before the limit.
    pub v_m_ref: Complex64,
    /// Modulation voltage after the limit.
    pub v_m: Complex64,
    /// Whether the limit was active.
    pub saturated: bool,
    pub p_c: f64,
    pub q_c: f64,
    pub v_l: Complex64,
}

/// `p_c + j q_c = e_g * conj(i_g)`.
pub fn compute_power(e_g: Complex64, i_g: Complex64) -> (f64, f64) {
    let s = e_g * i_g.conj();
    (s.re, s.im)
}

/// Frequency and voltage-magnitude references from the filtered powers.
pub fn outer_droop(p_tilde: f64, q_tilde: f64, ac: &AcParams) -> (f64, f64) {
    let omega_c = ac.omega_star + ac.rp * (ac.p_star - p_tilde);
    let v_c = ac.v_star + ac.rq * (ac.q_star - q_tilde);
    (omega_c, v_c)
}

pub fn power_filter_derivatives(
    p_c: f64,
    q_c: f64,
    p_tilde: f64,
    q_tilde: f64,
    omega_z: f64,
) -> Result<(f64, f64)> {
    if !(omega_z > 0.0) {
        return Err(Error::domain(
            "power_filter_derivatives",
            format!("omega_z = {omega_z} must be > 0"),
        ));
    }
    Ok((omega_z * (p_c - p_tilde), omega_z * (q_c - q_tilde)))
}

/// `v_bar = v_c - (r_v + j omega_c l_v) i_g` with `v_c` on the d axis.
pub fn virtual_impedance(v_c: f64, i_g: Complex64, omega_c: f64, r_v: f64, l_v: f64) -> Complex64 {
    Complex64::new(v_c, 0.0) - Complex64::new(r_v, omega_c * l_v) * i_g
}

/// Cascaded voltage and current PI loops with decoupling and feed-forward.
/// Returns `(i_s_ref, v_m_ref)`.
pub fn inner_loops(
    v_bar: Complex64,
    state: &AcState,
    omega_c: f64,
    ac: &AcParams,
) -> (Complex64, Complex64) {
    let i_s_ref = ac.kp_v * (v_bar - state.e_g)
        + ac.ki_v * state.xi
        + J * omega_c * ac.c_f * state.e_g
        + ac.kf_i * state.i_g;
    let v_m_ref = ac.kp_i * (i_s_ref - state.i_s)
        + ac.ki_i * state.gamma
        + J * omega_c * ac.l_f * state.i_s
        + ac.kf_v * state.e_g;
    (i_s_ref, v_m_ref)
}

/// Scales `v_m_ref` back onto the disc of radius `limit`. Returns the
/// limited vector and whether scaling happened.
pub fn saturate_modulation(v_m_ref: Complex64, limit: f64) -> Result<(Complex64, bool)> {
    if !(limit > 0.0) {
        return Err(Error::domain(
            "saturate_modulation",
            format!("modulation limit {limit} must be > 0 (v_dc <= 0?)"),
        ));
    }
    let norm = v_m_ref.norm();
    if norm == 0.0 {
        return Ok((Complex64::new(0.0, 0.0), false));
    }
    if norm <= limit {
        Ok((v_m_ref, false))
    } else {
        Ok((v_m_ref * (limit / norm), true))
    }
}

/// Bus voltage of a constant-power load drawing `(p_l, q_l)` through `i_g`.
pub fn load_bus_voltage(i_g: Complex64, p_l: f64, q_l: f64) -> Result<Complex64> {
    if i_g.norm() < LOAD_CURRENT_GUARD {
        return Err(Error::domain(
            "load_bus_voltage",
            format!(
                "|i_g| = {:.3e} below {LOAD_CURRENT_GUARD:e}; constant-power load is singular",
                i_g.norm()
            ),
        ));
    }
    Ok(Complex64::new(p_l, q_l) / i_g.conj())
}

/// Bus voltage of a static impedance that absorbs `(p_l, q_l)` at 1 pu.
pub fn impedance_load_voltage(i_g: Complex64, p_l: f64, q_l: f64) -> Result<Complex64> {
    // S = |v|^2 conj(y) at |v| = 1
    let y = Complex64::new(p_l, -q_l);
    if y.norm() < 1e-9 {
        return Err(Error::domain(
            "impedance_load_voltage",
            "load power is zero; open-circuit load has no bus voltage",
        ));
    }
    Ok(i_g / y)
}

pub fn load_voltage(i_g: Complex64, load: &LoadParams) -> Result<Complex64> {
    match load.model {
        LoadModel::ConstantPower => load_bus_voltage(i_g, load.p_l, load.q_l),
        LoadModel::ConstantImpedance => impedance_load_voltage(i_g, load.p_l, load.q_l),
    }
}

/// Switching-current derivative of the filter inductor (per second).
pub fn switching_current_derivative(
    state: &AcState,
    v_m: Complex64,
    omega_c: f64,
    ac: &AcParams,
    omega_b: f64,
) -> Complex64 {
    omega_b / ac.l_f * (v_m - state.e_g)
        - Complex64::new(ac.r_f / ac.l_f * omega_b, omega_b * omega_c) * state.i_s
}

/// Time derivatives of all 13 AC states, in [`AcState`] order.
pub fn ac_derivatives(
    state: &AcState,
    out: &AcOutputs,
    ac: &AcParams,
    omega_b: f64,
) -> Result<AcState> {
    let omega_c = out.omega_c;
    let di_s = switching_current_derivative(state, out.v_m, omega_c, ac, omega_b);
    let di_g = omega_b / ac.l_g * (state.e_g - out.v_l)
        - Complex64::new(ac.r_g / ac.l_g * omega_b, omega_b * omega_c) * state.i_g;
    let de_g = omega_b / ac.c_f * (state.i_s - state.i_g) - J * omega_c * omega_b * state.e_g;
    let (dp, dq) =
        power_filter_derivatives(out.p_c, out.q_c, state.p_tilde, state.q_tilde, ac.omega_z)?;
    Ok(AcState {
        e_g: de_g,
        i_g: di_g,
        i_s: di_s,
        xi: out.v_bar - state.e_g,
        gamma: out.i_s_ref - state.i_s,
        theta_c: omega_b * (omega_c - 1.0),
        p_tilde: dp,
        q_tilde: dq,
    })
}

/// Runs the control cascade from power measurement to the limited modulation voltage.
pub fn evaluate_outputs(
    state: &AcState,
    v_dc: f64,
    ac: &AcParams,
    load: &LoadParams,
) -> Result<AcOutputs> {
    let (p_c, q_c) = compute_power(state.e_g, state.i_g);
    let (omega_c, v_c) = outer_droop(state.p_tilde, state.q_tilde, ac);
    let v_bar = virtual_impedance(v_c, state.i_g, omega_c, ac.r_v, ac.l_v);
    let (i_s_ref, v_m_ref) = inner_loops(v_bar, state, omega_c, ac);
    let (v_m, saturated) = saturate_modulation(v_m_ref, ac.mod_limit * v_dc)?;
    let v_l = load_voltage(state.i_g, load)?;
    Ok(AcOutputs {
        omega_c,
        v_c,
        v_bar,
        i_s_ref,
        v_m_ref,
        v_m,
        saturated,
        p_c,
        q_c,
        v_l,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SystemParams;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn power_examples() {
        assert_eq!(compute_power(c(1.0, 0.0), c(0.5, 0.0)), (0.5, 0.0));
        let (p, q) = compute_power(c(1.0, 0.0), c(0.3, -0.4));
        assert!((p - 0.3).abs() < 1e-15 && (q - 0.4).abs() < 1e-15);
        assert_eq!(compute_power(c(0.0, 0.0), c(0.7, 0.2)), (0.0, 0.0));
    }

    #[test]
    fn droop_examples() {
        let mut ac = SystemParams::default().ac;
        ac.p_star = 0.5;
        ac.omega_star = 1.0;
        assert_eq!(outer_droop(0.5, ac.q_star, &ac).0, 1.0);

        ac.rp = 0.02;
        ac.p_star = 0.0;
        let (w, _) = outer_droop(0.5, 0.0, &ac);
        assert!((w - 0.99).abs() < 1e-15);

        ac.rq = 0.0;
        assert_eq!(outer_droop(0.0, 0.73, &ac).1, ac.v_star);
    }

    #[test]
    fn power_filter_examples() {
        assert_eq!(
            power_filter_derivatives(0.4, 0.1, 0.4, 0.1, 10.0).unwrap(),
            (0.0, 0.0)
        );
        let (dp, _) = power_filter_derivatives(0.6, 0.0, 0.5, 0.0, 50.0).unwrap();
        assert!((dp - 5.0).abs() < 1e-12);
        assert!(power_filter_derivatives(0.6, 0.0, 0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn virtual_impedance_examples() {
        assert_eq!(
            virtual_impedance(1.0, c(0.3, 0.2), 1.0, 0.0, 0.0),
            c(1.0, 0.0)
        );
        assert_eq!(
            virtual_impedance(1.0, c(0.0, 0.0), 1.0, 0.1, 0.2),
            c(1.0, 0.0)
        );
        assert!(close(
            virtual_impedance(1.0, c(1.0, 0.0), 1.0, 0.1, 0.0),
            c(0.9, 0.0),
            1e-15
        ));
    }

    #[test]
    fn inner_loop_null_controller() {
        let mut ac = SystemParams::default().ac;
        ac.kp_v = 0.0;
        ac.ki_v = 0.0;
        ac.kf_i = 0.0;
        ac.kp_i = 0.0;
        ac.ki_i = 0.0;
        ac.kf_v = 0.0;
        let s = AcState {
            e_g: c(1.0, 0.1),
            i_s: c(0.4, 0.2),
            xi: c(0.3, 0.3),
            ..Default::default()
        };
        let (i_ref, v_ref) = inner_loops(c(1.0, 0.0), &s, 0.0, &ac);
        assert_eq!(i_ref, c(0.0, 0.0));
        assert_eq!(v_ref, c(0.0, 0.0));
    }

    #[test]
    fn inner_loop_decoupling_only() {
        let mut ac = SystemParams::default().ac;
        ac.c_f = 0.1;
        let s = AcState {
            e_g: c(1.0, 0.0),
            ..Default::default()
        };
        // omega_c * c_f * e_g = 0.1
        let (i_ref, _) = inner_loops(c(1.0, 0.0), &s, 1.0, &ac);
        assert!(close(i_ref, c(0.0, 0.1), 1e-15));
    }

    #[test]
    fn saturation_examples() {
        assert_eq!(
            saturate_modulation(c(0.8, 0.0), 1.0).unwrap(),
            (c(0.8, 0.0), false)
        );
        let (v, sat) = saturate_modulation(c(3.0, 4.0), 1.0).unwrap();
        assert!(sat && close(v, c(0.6, 0.8), 1e-15));
        assert_eq!(
            saturate_modulation(c(0.0, 0.0), 1.0).unwrap().0,
            c(0.0, 0.0)
        );
        assert!(saturate_modulation(c(1.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn constant_power_load_examples() {
        assert!(close(
            load_bus_voltage(c(1.0, 0.0), 0.5, 0.0).unwrap(),
            c(0.5, 0.0),
            1e-15
        ));
        // (0 + 1j) / conj(0 + 1j) = j / -j = -1
        let v = load_bus_voltage(c(0.0, 1.0), 0.0, 1.0).unwrap();
        assert!(close(v, c(-1.0, 0.0), 1e-15));
        let s = v * c(0.0, 1.0).conj();
        assert!(close(s, c(0.0, 1.0), 1e-15));
        assert!(load_bus_voltage(c(1e-6, 0.0), 0.5, 0.0).is_err());
    }

    #[test]
    fn impedance_load_absorbs_rated_power_at_unit_voltage() {
        // i_g chosen so |v_l| = 1: i = conj(S) / conj(v) with v = 1
        let (p, q) = (0.6, 0.2);
        let i_g = c(p, -q);
        let v = impedance_load_voltage(i_g, p, q).unwrap();
        assert!(close(v, c(1.0, 0.0), 1e-14));
        assert!(impedance_load_voltage(i_g, 0.0, 0.0).is_err());
    }

    #[test]
    fn zero_forcing_switching_current() {
        let ac = SystemParams::default().ac;
        let s = AcState {
            e_g: c(0.9, 0.1),
            ..Default::default()
        };
        let d = switching_current_derivative(&s, s.e_g, 1.0, &ac, 377.0);
        assert_eq!(d, c(0.0, 0.0));
    }

    #[test]
    fn capacitor_pure_rotation_when_currents_match() {
        let ac = SystemParams::default().ac;
        let s = AcState {
            e_g: c(0.9, 0.1),
            i_s: c(0.4, -0.1),
            i_g: c(0.4, -0.1),
            ..Default::default()
        };
        let out = AcOutputs {
            omega_c: 0.98,
            v_m: s.e_g,
            v_l: s.e_g,
            ..Default::default()
        };
        let omega_b = 376.99;
        let d = ac_derivatives(&s, &out, &ac, omega_b).unwrap();
        assert!(close(d.e_g, -J * 0.98 * omega_b * s.e_g, 1e-12));
    }

    #[test]
    fn state_round_trip() {
        let s = AcState {
            e_g: c(1.0, 2.0),
            i_g: c(3.0, 4.0),
            i_s: c(5.0, 6.0),
            xi: c(7.0, 8.0),
            gamma: c(9.0, 10.0),
            theta_c: 11.0,
            p_tilde: 12.0,
            q_tilde: 13.0,
        };
        let mut buf = [0.0; AcState::LEN];
        s.write_to(&mut buf);
        assert_eq!(buf[AcState::THETA_INDEX], 11.0);
        assert_eq!(AcState::read_from(&buf), s);
    }

    fn cplx() -> impl Strategy<Value = Complex64> {
        (-10.0f64..10.0, -10.0f64..10.0).prop_map(|(a, b)| Complex64::new(a, b))
    }

    proptest! {
        #[test]
        fn saturation_bounded_idempotent_direction(x in cplx(), lim in 0.01f64..5.0) {
            let (v, _) = saturate_modulation(x, lim).unwrap();
            prop_assert!(v.norm() <= lim * (1.0 + 1e-15));
            let (v2, _) = saturate_modulation(v, lim).unwrap();
            prop_assert!((v2 - v).norm() <= 1e-15 * lim);
            if x.norm() > 0.0 {
                let cross = x.re * v.im - x.im * v.re;
                prop_assert!(cross.abs() <= 1e-12 * x.norm() * v.norm().max(1e-300));
                prop_assert!(x.re * v.re + x.im * v.im >= 0.0);
            }
        }

        #[test]
        fn constant_power_load_reproduces_power(i in cplx(), p in -2.0f64..2.0, q in -2.0f64..2.0) {
            prop_assume!(i.norm() >= LOAD_CURRENT_GUARD);
            let v = load_bus_voltage(i, p, q).unwrap();
            let s = v * i.conj();
            let tol = 1e-14 * (1.0 + p.abs() + q.abs());
            prop_assert!((s.re - p).abs() <= tol && (s.im - q).abs() <= tol);
        }

        #[test]
        fn power_scales_with_current(e in cplx(), i in cplx(), a in -5.0f64..5.0) {
            let (p, q) = compute_power(e, i);
            let (pa, qa) = compute_power(e, i * a);
            prop_assert!((pa - a * p).abs() <= 1e-12 * (1.0 + p.abs() * a.abs()));
            prop_assert!((qa - a * q).abs() <= 1e-12 * (1.0 + q.abs() * a.abs()));
        }

        #[test]
        fn zero_droop_pins_set_points(p in -3.0f64..3.0, q in -3.0f64..3.0) {
            let mut ac = SystemParams::default().ac;
            ac.rp = 0.0;
            ac.rq = 0.0;
            prop_assert_eq!(outer_droop(p, q, &ac), (ac.omega_star, ac.v_star));
        }
    }
}
