//! Newton solver for operating points.
//!
//! `theta_c` is cyclic: no equation depends on it and its derivative is
//! `omega_b (omega_c - 1)`. A true equilibrium therefore needs `omega_c = 1`,
//! which the solver enforces by treating the active-power set point `p_star`
//! as the unknown in the `theta_c` slot, the same way a power flow
//! initializes converter set points. With zero active droop the angle is
//! pinned instead and the residual reports any frequency offset.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::config::{DeadTimeLocation, LoadParams, SystemParams};
use crate::dc::pade_steady_state;
use crate::error::{Error, Result};
use crate::numdiff::{central_jacobian, default_step};

use super::model::system_derivative;
use super::state::SystemState;

pub const RESIDUAL_TOL: f64 = 1e-10;
pub const MAX_ITERATIONS: usize = 50;

#[derive(Debug, Clone, PartialEq)]
pub struct Equilibrium {
    pub x: Vec<f64>,
    /// Parameters with `ac.p_star` set to the value that balances the droop.
    pub params: SystemParams,
    pub load: LoadParams,
    /// `max_i |f_i(x)|`.
    pub residual: f64,
    pub iterations: usize,
}

impl Equilibrium {
    pub fn state(&self) -> SystemState {
        SystemState::from_slice(self.params.battery.order, &self.x)
    }

    pub fn v_dc(&self) -> f64 {
        self.x[SystemState::v_dc_index(self.params.battery.order)]
    }
}

/// Initial guess: 1 pu-ish voltages, currents from the load, boost duty from
/// the voltage ratio and integrators back-solved from the loop equations.
pub fn flat_start(params: &SystemParams, load: &LoadParams) -> Vec<f64> {
    let ac = &params.ac;
    let dcp = &params.dc;
    let j = Complex64::new(0.0, 1.0);
    let e_g = Complex64::new(ac.v_star, 0.0);
    let i_g = Complex64::new(load.p_l, -load.q_l);
    let i_s = i_g + j * ac.c_f * e_g;
    let v_m = e_g + Complex64::new(ac.r_f, ac.l_f) * i_s;
    let xi = if ac.ki_v > 0.0 {
        (i_s - j * ac.c_f * e_g - ac.kf_i * i_g) / ac.ki_v
    } else {
        Complex64::new(0.0, 0.0)
    };
    let gamma = if ac.ki_i > 0.0 {
        (v_m - j * ac.l_f * i_s - ac.kf_v * e_g) / ac.ki_i
    } else {
        Complex64::new(0.0, 0.0)
    };
    let (p, q) = crate::ac::compute_power(e_g, i_g);

    let b = &params.battery;
    let v_dc = dcp.v_dc_star;
    let i_b = p / b.v_oc;
    let d = (1.0 - b.v_oc / v_dc).clamp(0.0, dcp.d_max);
    let mut state = SystemState {
        order: b.order,
        ac: crate::ac::AcState {
            e_g,
            i_g,
            i_s,
            xi,
            gamma,
            theta_c: 0.0,
            p_tilde: p,
            q_tilde: q,
        },
        dc: crate::dc::DcState {
            i_l1: i_b,
            i_l2: i_b,
            v_cb1: i_b * b.r_b3,
            v_cb2: i_b * b.r_b4,
            i_b,
            v_dc,
            eta: 0.0,
            zeta_i: if dcp.gains.ki_ib != 0.0 {
                d / dcp.gains.ki_ib
            } else {
                0.0
            },
            pade: [0.0; 5],
        },
    };
    state.dc.pade = match dcp.dead_time_on {
        DeadTimeLocation::Duty => pade_steady_state(d),
        DeadTimeLocation::Measurement => pade_steady_state(v_dc),
    };
    state.to_vec()
}

/// Unknown vector layout: the state with `theta_c` replaced by `p_star`
/// when active droop is present.
struct Problem<'a> {
    params: &'a SystemParams,
    load: &'a LoadParams,
    theta: f64,
    balance_p_star: bool,
}

impl Problem<'_> {
    fn residual(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let k = SystemState::theta_index();
        let mut params = *self.params;
        let mut x = z.to_vec();
        if self.balance_p_star {
            params.ac.p_star = z[k];
            x[k] = self.theta;
        }
        system_derivative(&x, &params, self.load, out)?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("find_equilibrium", "non-finite residual"));
        }
        Ok(())
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn two_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// LU solve, falling back to the minimum-norm least-squares step when the
/// Jacobian is (numerically) rank deficient, e.g. while a clamped PI output
/// removes an integrator from the loop.
fn newton_step(jac: DMatrix<f64>, rhs: DVector<f64>) -> Result<(DVector<f64>, bool)> {
    let lu = jac.clone().lu();
    let u = lu.u();
    let diag_max = u.diagonal().amax();
    let diag_min = u
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if diag_min > 1e-13 * diag_max {
        if let Some(step) = lu.solve(&rhs) {
            if step.iter().all(|v| v.is_finite()) {
                return Ok((step, false));
            }
        }
    }
    let svd = jac.svd(true, true);
    let tol = 1e-12 * svd.singular_values.amax();
    let step = svd.solve(&rhs, tol).map_err(|_| Error::SingularJacobian {
        context: "find_equilibrium".into(),
    })?;
    if step.iter().any(|v| !v.is_finite()) || step.amax() == 0.0 {
        return Err(Error::SingularJacobian {
            context: "find_equilibrium".into(),
        });
    }
    Ok((step, true))
}

struct Newton {
    z: Vec<f64>,
    g: Vec<f64>,
    res: f64,
    iterations: usize,
}

impl Problem<'_> {
    fn jacobian(&self, z: &[f64], active: &[usize]) -> Result<DMatrix<f64>> {
        let full = central_jacobian(
            z,
            z.len(),
            |_, zz, out| self.residual(zz, out),
            |_, v| default_step(v),
        )?;
        let m = active.len();
        Ok(DMatrix::from_fn(m, m, |r, c| full[(active[r], active[c])]))
    }

    /// Damped Newton from `z`.
    fn newton(&self, z: Vec<f64>, active: &[usize]) -> Result<Newton> {
        let n = z.len();
        let mut g = vec![0.0; n];
        self.residual(&z, &mut g)?;
        let mut st = Newton {
            res: inf_norm(&g),
            z,
            g,
            iterations: 0,
        };
        while st.res > RESIDUAL_TOL {
            if st.iterations == MAX_ITERATIONS {
                return Err(Error::NoConvergence {
                    iterations: st.iterations,
                    residual: st.res,
                });
            }
            st.iterations += 1;
            let jac = self.jacobian(&st.z, active)?;
            let rhs = DVector::from_fn(active.len(), |r, _| -st.g[active[r]]);
            let (step, rank_deficient) = newton_step(jac, rhs)?;

            // halve until the residual does not grow
            let base = two_norm(&st.g);
            let mut lambda = 1.0;
            let mut trial = st.z.clone();
            let mut g_trial = vec![0.0; n];
            loop {
                for (r, &i) in active.iter().enumerate() {
                    trial[i] = st.z[i] + lambda * step[r];
                }
                let ok = self.residual(&trial, &mut g_trial).is_ok();
                if ok && two_norm(&g_trial) <= base {
                    break;
                }
                lambda *= 0.5;
                if lambda < 1.0 / 1024.0 {
                    if ok && !rank_deficient {
                        break;
                    }
                    if rank_deficient {
                        return Err(Error::SingularJacobian {
                            context: format!("find_equilibrium, iteration {}", st.iterations),
                        });
                    }
                    return Err(Error::NoConvergence {
                        iterations: st.iterations,
                        residual: st.res,
                    });
                }
            }
            let step_size = inf_norm(step.as_slice()) * lambda;
            st.z = trial;
            st.g = g_trial;
            st.res = inf_norm(&st.g);

            // stiff rows (battery RL branches) amplify state rounding by up
            // to ~1e6; once the update is at machine precision no further
            // progress is possible
            let stalled = step_size <= 4.0 * f64::EPSILON * (1.0 + inf_norm(&st.z));
            if stalled && st.res < 1e-6 {
                break;
            }
        }
        Ok(st)
    }

    /// Pseudo-transient continuation: implicit Euler steps in pseudo time
    /// with switched evolution relaxation of the step. Follows the closed-loop
    /// dynamics out of regions where a clamp makes Newton rank deficient.
    /// The `p_star` row runs with reversed sign since raising `p_star` raises
    /// the frequency.
    fn continuation(&self, mut z: Vec<f64>, active: &[usize]) -> Result<Vec<f64>> {
        let n = z.len();
        let theta_k = SystemState::theta_index();
        let sign: Vec<f64> = active
            .iter()
            .map(|&i| {
                if self.balance_p_star && i == theta_k {
                    -1.0
                } else {
                    1.0
                }
            })
            .collect();
        let mut g = vec![0.0; n];
        self.residual(&z, &mut g)?;
        let mut norm = two_norm(&g);
        let mut delta = 1e-4;
        let mut trial = z.clone();
        let mut g_trial = vec![0.0; n];
        for _ in 0..CONTINUATION_STEPS {
            if inf_norm(&g) < 1e-6 {
                return Ok(z);
            }
            let mut m = -self.jacobian(&z, active)?;
            for r in 0..active.len() {
                m[(r, r)] += sign[r] / delta;
            }
            let rhs = DVector::from_fn(active.len(), |r, _| g[active[r]]);
            let Some(step) = m.lu().solve(&rhs) else {
                delta *= 0.1;
                continue;
            };
            for (r, &i) in active.iter().enumerate() {
                trial[i] = z[i] + step[r];
            }
            if self.residual(&trial, &mut g_trial).is_err() {
                delta *= 0.25;
                continue;
            }
            let new_norm = two_norm(&g_trial);
            delta = (delta * (norm / new_norm).clamp(0.5, 4.0)).min(1e6);
            z.clone_from(&trial);
            g.clone_from(&g_trial);
            norm = new_norm;
        }
        Err(Error::NoConvergence {
            iterations: CONTINUATION_STEPS,
            residual: inf_norm(&g),
        })
    }
}

const CONTINUATION_STEPS: usize = 400;

/// Solves `f(x) = 0` by damped Newton iteration with a central-difference
/// Jacobian. `guess` defaults to [`flat_start`]. When Newton fails from the
/// guess, pseudo-transient continuation brings the iterate into the Newton
/// basin first.
pub fn find_equilibrium(
    params: &SystemParams,
    load: &LoadParams,
    guess: Option<&[f64]>,
) -> Result<Equilibrium> {
    let order = params.battery.order;
    let n = SystemState::dim(order);
    let theta_k = SystemState::theta_index();
    let x0 = match guess {
        Some(g) => {
            if g.len() != n {
                return Err(Error::domain(
                    "find_equilibrium",
                    format!("guess has {} entries, expected {n}", g.len()),
                ));
            }
            g.to_vec()
        }
        None => flat_start(params, load),
    };
    let balance = params.ac.rp > 0.0;
    let problem = Problem {
        params,
        load,
        theta: x0[theta_k],
        balance_p_star: balance,
    };
    // with a pinned angle the theta column and row leave the Newton system
    let active: Vec<usize> = (0..n).filter(|&i| balance || i != theta_k).collect();

    let mut z0 = x0;
    if balance {
        z0[theta_k] = params.ac.p_star;
    }
    let st = match problem.newton(z0.clone(), &active) {
        Ok(st) => st,
        Err(first) => match problem
            .continuation(z0, &active)
            .and_then(|z| problem.newton(z, &active))
        {
            Ok(st) => st,
            Err(_) => return Err(first),
        },
    };

    let mut eq_params = *params;
    let mut x = st.z;
    if balance {
        eq_params.ac.p_star = x[theta_k];
        x[theta_k] = problem.theta;
    }
    Ok(Equilibrium {
        x,
        params: eq_params,
        load: *load,
        residual: st.res,
        iterations: st.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{BatteryOrder, DcGains};

    #[test]
    fn nominal_equilibrium_converges() {
        let params = SystemParams::default();
        let eq = find_equilibrium(&params, &params.load, None).unwrap();
        assert!(eq.residual < RESIDUAL_TOL, "{}", eq.residual);
        let mut dx = vec![0.0; eq.x.len()];
        let ev = system_derivative(&eq.x, &eq.params, &eq.load, &mut dx).unwrap();
        assert!(inf_norm(&dx) < RESIDUAL_TOL);
        // boost steady state
        let d = ev.dc.d_eff;
        assert!((d - (1.0 - ev.dc.v_b / eq.v_dc())).abs() < 1e-9);
        assert!((eq.v_dc() - params.dc.v_dc_star).abs() < 1e-9);
        assert!((ev.ac.omega_c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perturbed_guess_reaches_same_point() {
        let params = SystemParams::default();
        let eq = find_equilibrium(&params, &params.load, None).unwrap();
        let guess: Vec<f64> = eq.x.iter().map(|v| v * 1.1).collect();
        let eq2 = find_equilibrium(&params, &params.load, Some(&guess)).unwrap();
        for (a, b) in eq.x.iter().zip(&eq2.x) {
            if (a - b).abs() > 1e-8 {
                // theta is carried from the guess
                assert_eq!(*b, guess[SystemState::theta_index()]);
            }
        }
        assert!((eq.params.ac.p_star - eq2.params.ac.p_star).abs() < 1e-8);
    }

    #[test]
    fn stiff_voltage_loop_pins_capacitor_voltage() {
        let mut params = SystemParams::default();
        params.ac.r_v = 0.0;
        params.ac.l_v = 0.0;
        params.ac.rp = 0.0;
        params.ac.rq = 0.0;
        params.ac.r_f = 0.0;
        params.ac.r_g = 0.0;
        let eq = find_equilibrium(&params, &params.load, None).unwrap();
        let e_g = eq.state().ac.e_g;
        assert!((e_g.norm() - params.ac.v_star).abs() < 1e-8, "{e_g}");
    }

    #[test]
    fn all_orders_converge() {
        for order in BatteryOrder::ALL {
            let params = SystemParams::default().with_battery_order(order);
            let eq = find_equilibrium(&params, &params.load, None).unwrap();
            assert!(eq.residual < 1e-6, "order {order}: {}", eq.residual);
            let s = eq.state();
            if order == BatteryOrder::Four {
                assert!((s.dc.i_l1 - s.dc.i_b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn missing_current_integrator_has_no_equilibrium() {
        let params = SystemParams::default().with_gains(DcGains::new(5.0, 5.0, 5.0, 0.0, 0.0));
        assert!(find_equilibrium(&params, &params.load, None).is_err());
    }
}
