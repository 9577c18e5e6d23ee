//! Dead time as the average of a 2/2 and a 3/3 diagonal Padé delay.
//!
//! Both blocks use controllable canonical form in time normalized by the
//! delay, so the states stay O(input) whatever the delay:
//!
//! ```text
//! 2/2:  T x1' = x2
//!       T x2' = -12 x1 - 6 x2 + u             y2 = -12 x2 + u
//! 3/3:  T x1' = x2,  T x2' = x3
//!       T x3' = -120 x1 - 60 x2 - 12 x3 + u   y3 = 240 x1 + 24 x3 - u
//! ```
//!
//! The feed-through terms are +u and -u, so the averaged output has none.

use crate::error::{Error, Result};

pub const PADE_STATES: usize = 5;

/// Outputs `(y2, y3)` of the two blocks for input `u`.
pub fn pade_outputs(pade: &[f64; PADE_STATES], u: f64) -> (f64, f64) {
    let y2 = -12.0 * pade[1] + u;
    let y3 = 240.0 * pade[2] + 24.0 * pade[4] - u;
    (y2, y3)
}

/// Equilibrium states for a constant input `u`.
pub fn pade_steady_state(u: f64) -> [f64; PADE_STATES] {
    [u / 12.0, 0.0, u / 120.0, 0.0, 0.0]
}

/// Averaged delayed signal and state derivatives, unclamped.
pub fn pade_average(
    pade: &[f64; PADE_STATES],
    u: f64,
    t_dead: f64,
) -> Result<(f64, [f64; PADE_STATES])> {
    if !(t_dead > 0.0) {
        return Err(Error::domain(
            "deadtime_derivatives",
            format!("t_dead = {t_dead} must be > 0"),
        ));
    }
    let k = 1.0 / t_dead;
    let [a1, a2, b1, b2, b3] = *pade;
    let d = [
        k * a2,
        k * (-12.0 * a1 - 6.0 * a2 + u),
        k * b2,
        k * b3,
        k * (-120.0 * b1 - 60.0 * b2 - 12.0 * b3 + u),
    ];
    // strictly proper part only; the +u and -u feed-through terms cancel
    Ok((0.5 * (-12.0 * a2 + 240.0 * b1 + 24.0 * b3), d))
}

/// Returns the delayed duty clamped to `[0, d_max]` and the block's state
/// derivatives.
pub fn deadtime_derivatives(
    pade: &[f64; PADE_STATES],
    d_raw: f64,
    t_dead: f64,
    d_max: f64,
) -> Result<(f64, [f64; PADE_STATES])> {
    let (y, d) = pade_average(pade, d_raw, t_dead)?;
    Ok((y.clamp(0.0, d_max), d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rk4_step(x: &mut [f64; 5], u: f64, t_dead: f64, dt: f64) {
        let f = |x: &[f64; 5]| pade_average(x, u, t_dead).unwrap().1;
        let add = |x: &[f64; 5], k: &[f64; 5], h: f64| {
            let mut y = *x;
            for i in 0..5 {
                y[i] += h * k[i];
            }
            y
        };
        let k1 = f(x);
        let k2 = f(&add(x, &k1, dt / 2.0));
        let k3 = f(&add(x, &k2, dt / 2.0));
        let k4 = f(&add(x, &k3, dt));
        for i in 0..5 {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    #[test]
    fn steady_state_has_unit_gain() {
        let x = pade_steady_state(0.37);
        let (y, d) = pade_average(&x, 0.37, 3e-4).unwrap();
        assert!((y - 0.37).abs() < 1e-15);
        assert!(d.iter().all(|v| v.abs() < 1e-12));
        let (y2, y3) = pade_outputs(&x, 0.37);
        assert!((y2 - 0.37).abs() < 1e-15 && (y3 - 0.37).abs() < 1e-15);
    }

    #[test]
    fn held_input_converges_to_itself() {
        let t = 3.125e-4;
        let mut x = [0.0; 5];
        let dt = t / 200.0;
        for _ in 0..200 * 40 {
            rk4_step(&mut x, 0.6, t, dt);
        }
        let (y, _) = deadtime_derivatives(&x, 0.6, t, 0.9).unwrap();
        assert!((y - 0.6).abs() < 1e-9, "{y}");
    }

    #[test]
    fn step_response_starts_at_opposite_signs() {
        let x = [0.0; 5];
        let (y2, y3) = pade_outputs(&x, 1.0);
        assert_eq!((y2, y3), (1.0, -1.0));
        let (d_eff, _) = deadtime_derivatives(&x, 1.0, 1e-3, 0.9).unwrap();
        assert_eq!(d_eff, 0.0);
    }

    #[test]
    fn output_ignores_input_with_frozen_states() {
        let x = [0.04, 0.01, 0.004, -0.002, 0.03];
        let a = deadtime_derivatives(&x, 0.2, 1e-3, 0.9).unwrap().0;
        let b = deadtime_derivatives(&x, 0.8, 1e-3, 0.9).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn output_clamped() {
        let x = pade_steady_state(1.5);
        assert_eq!(deadtime_derivatives(&x, 1.5, 1e-3, 0.9).unwrap().0, 0.9);
        let x = pade_steady_state(-0.5);
        assert_eq!(deadtime_derivatives(&x, -0.5, 1e-3, 0.9).unwrap().0, 0.0);
    }

    #[test]
    fn rejects_non_positive_delay() {
        assert!(deadtime_derivatives(&[0.0; 5], 0.5, 0.0, 0.9).is_err());
    }

    #[test]
    fn delays_a_slow_sinusoid() {
        // exact delay line oracle at resolution t_dead / 100
        let t = 3.125e-4;
        let per = 100;
        let dt = t / per as f64;
        let omega = 0.5 / t;
        let u = |k: usize| (omega * k as f64 * dt).sin();
        let mut x = [0.0; 5];
        let n = per * 60;
        let mut err2 = 0.0;
        let mut ref2 = 0.0;
        for k in 0..n {
            // zero-order hold between samples of the oracle grid
            rk4_step(&mut x, u(k), t, dt);
            if k + 1 >= 20 * per {
                let (y, _) = pade_average(&x, u(k + 1), t).unwrap();
                let exact = u(k + 1 - per);
                err2 += (y - exact).powi(2);
                ref2 += exact.powi(2);
            }
        }
        let rel = (err2 / ref2).sqrt();
        assert!(rel < 0.05, "relative RMS {rel}");
    }
}
