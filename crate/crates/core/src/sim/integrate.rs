//! Stiff adaptive integration (Rodas4, L-stable Rosenbrock of order 4 with
//! an embedded order-3 estimate) and a fixed-step RK4 reference.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numdiff::{central_jacobian, default_step};

/// Autonomous system `x' = f(x)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;
    fn rhs(&self, x: &[f64], dx: &mut [f64]) -> Result<()>;
}

impl<F> OdeSystem for (usize, F)
where
    F: Fn(&[f64], &mut [f64]) -> Result<()>,
{
    fn dim(&self) -> usize {
        self.0
    }
    fn rhs(&self, x: &[f64], dx: &mut [f64]) -> Result<()> {
        (self.1)(x, dx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub jacobians: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rodas4 {
    pub rtol: f64,
    pub atol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Rodas4 {
    fn default() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-8,
            h_init: 1e-6,
            h_min: 1e-14,
            h_max: 1e-2,
            max_steps: 2_000_000,
        }
    }
}

const GAMMA: f64 = 0.25;

const A21: f64 = 1.544;
const A31: f64 = 0.946_678_528_081_582_6;
const A32: f64 = 0.255_701_169_898_328_4;
const A41: f64 = 3.314_825_187_068_521;
const A42: f64 = 2.896_124_015_972_201;
const A43: f64 = 0.998_641_913_997_781_7;
const A51: f64 = 1.221_224_509_226_641;
const A52: f64 = 6.019_134_481_288_629;
const A53: f64 = 12.537_083_329_320_87;
const A54: f64 = -0.687_886_036_105_895;

const C21: f64 = -5.6688;
const C31: f64 = -2.430_093_356_833_875;
const C32: f64 = -0.206_359_915_709_191_5;
const C41: f64 = -0.107_352_905_815_137_5;
const C42: f64 = -9.594_562_251_023_355;
const C43: f64 = -20.470_286_148_096_15;
const C51: f64 = 7.496_443_313_967_647;
const C52: f64 = -10.246_804_314_641_22;
const C53: f64 = -33.999_903_528_199_05;
const C54: f64 = 11.708_908_932_061_6;
const C61: f64 = 8.083_246_795_921_522;
const C62: f64 = -7.981_132_988_064_893;
const C63: f64 = -31.521_594_328_743_71;
const C64: f64 = 16.319_305_431_231_36;
const C65: f64 = -6.058_818_238_834_054;

struct Work {
    n: usize,
    k: [Vec<f64>; 6],
    u: Vec<f64>,
    f: Vec<f64>,
}

impl Work {
    fn new(n: usize) -> Self {
        Self {
            n,
            k: std::array::from_fn(|_| vec![0.0; n]),
            u: vec![0.0; n],
            f: vec![0.0; n],
        }
    }
}

/// One Rosenbrock step of size `h` from `x` (`f0 = f(x)`, `jac = f'(x)`).
/// Writes the new state into `y` and returns the scaled error norm.
#[allow(clippy::too_many_arguments)]
fn rodas4_step<S: OdeSystem>(
    sys: &S,
    x: &[f64],
    f0: &[f64],
    jac: &DMatrix<f64>,
    h: f64,
    rtol: f64,
    atol: f64,
    work: &mut Work,
    y: &mut [f64],
    stats: &mut StepStats,
) -> Result<f64> {
    let n = work.n;
    let mut w = -jac.clone();
    let diag = 1.0 / (GAMMA * h);
    for i in 0..n {
        w[(i, i)] += diag;
    }
    let lu = w.lu();
    if !lu.is_invertible() {
        return Err(Error::SingularJacobian {
            context: "rodas4 iteration matrix".into(),
        });
    }
    let solve = |rhs: &[f64], out: &mut Vec<f64>| -> Result<()> {
        let b = DVector::from_column_slice(rhs);
        let s = lu.solve(&b).ok_or_else(|| Error::SingularJacobian {
            context: "rodas4 iteration matrix".into(),
        })?;
        out.copy_from_slice(s.as_slice());
        Ok(())
    };
    let inv_h = 1.0 / h;
    let Work { k, u, f, .. } = work;
    let mut rhs = vec![0.0; n];

    // stage 1
    solve(f0, &mut k[0])?;

    // stage 2
    for i in 0..n {
        u[i] = x[i] + A21 * k[0][i];
    }
    sys.rhs(u, f)?;
    stats.rhs_evals += 1;
    for i in 0..n {
        rhs[i] = f[i] + C21 * k[0][i] * inv_h;
    }
    solve(&rhs, &mut k[1])?;

    // stage 3
    for i in 0..n {
        u[i] = x[i] + A31 * k[0][i] + A32 * k[1][i];
    }
    sys.rhs(u, f)?;
    stats.rhs_evals += 1;
    for i in 0..n {
        rhs[i] = f[i] + (C31 * k[0][i] + C32 * k[1][i]) * inv_h;
    }
    solve(&rhs, &mut k[2])?;

    // stage 4
    for i in 0..n {
        u[i] = x[i] + A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i];
    }
    sys.rhs(u, f)?;
    stats.rhs_evals += 1;
    for i in 0..n {
        rhs[i] = f[i] + (C41 * k[0][i] + C42 * k[1][i] + C43 * k[2][i]) * inv_h;
    }
    solve(&rhs, &mut k[3])?;

    // stage 5
    for i in 0..n {
        u[i] = x[i] + A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i];
    }
    sys.rhs(u, f)?;
    stats.rhs_evals += 1;
    for i in 0..n {
        rhs[i] = f[i] + (C51 * k[0][i] + C52 * k[1][i] + C53 * k[2][i] + C54 * k[3][i]) * inv_h;
    }
    solve(&rhs, &mut k[4])?;

    // stage 6
    for i in 0..n {
        u[i] += k[4][i];
    }
    sys.rhs(u, f)?;
    stats.rhs_evals += 1;
    for i in 0..n {
        rhs[i] = f[i]
            + (C61 * k[0][i] + C62 * k[1][i] + C63 * k[2][i] + C64 * k[3][i] + C65 * k[4][i])
                * inv_h;
    }
    solve(&rhs, &mut k[5])?;

    let mut err = 0.0;
    for i in 0..n {
        y[i] = u[i] + k[5][i];
        let sc = atol + rtol * x[i].abs().max(y[i].abs());
        let e = k[5][i] / sc;
        err += e * e;
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration {
            time: f64::NAN,
            message: "non-finite stage".into(),
        });
    }
    Ok((err / n as f64).sqrt())
}

fn jacobian<S: OdeSystem>(sys: &S, x: &[f64], stats: &mut StepStats) -> Result<DMatrix<f64>> {
    let n = sys.dim();
    stats.jacobians += 1;
    stats.rhs_evals += 2 * n;
    central_jacobian(x, n, |_, xx, out| sys.rhs(xx, out), |_, v| default_step(v))
}

impl Rodas4 {
    /// Integrates from `(t0, x0)` to `t_end`, calling `observer(t, x)` after
    /// every accepted step. Steps never cross any of `breakpoints` (sorted),
    /// so discontinuous inputs switched there are seen exactly. The observer
    /// may mutate the system through interior state it captures; it is
    /// called at each breakpoint before the next step starts.
    pub fn integrate<S, O>(
        &self,
        sys: &S,
        t0: f64,
        x0: &[f64],
        t_end: f64,
        breakpoints: &[f64],
        mut observer: O,
    ) -> Result<(Vec<f64>, StepStats)>
    where
        S: OdeSystem,
        O: FnMut(f64, &[f64]) -> Result<()>,
    {
        let n = sys.dim();
        if x0.len() != n {
            return Err(Error::Integration {
                time: t0,
                message: format!("initial state has {} entries, expected {n}", x0.len()),
            });
        }
        let mut stats = StepStats::default();
        let mut work = Work::new(n);
        let mut x = x0.to_vec();
        let mut y = vec![0.0; n];
        let mut f0 = vec![0.0; n];
        let mut t = t0;
        let mut h = self.h_init.min(self.h_max);
        let mut last_rejected = false;

        let mut stops: Vec<f64> = breakpoints
            .iter()
            .copied()
            .filter(|&b| b > t0 && b < t_end)
            .collect();
        stops.push(t_end);
        let mut stop_idx = 0;

        let mut fresh = true;
        let mut jac = DMatrix::zeros(n, n);
        while t < t_end {
            if stats.accepted + stats.rejected >= self.max_steps {
                return Err(Error::Integration {
                    time: t,
                    message: format!("exceeded {} steps", self.max_steps),
                });
            }
            let target = stops[stop_idx];
            if fresh {
                sys.rhs(&x, &mut f0).map_err(|e| wrap(t, e))?;
                stats.rhs_evals += 1;
                jac = jacobian(sys, &x, &mut stats).map_err(|e| wrap(t, e))?;
                fresh = false;
            }
            let remaining = target - t;
            let clipped = h >= remaining * (1.0 - 1e-12);
            let h_try = if clipped { remaining } else { h };

            let outcome = rodas4_step(
                sys, &x, &f0, &jac, h_try, self.rtol, self.atol, &mut work, &mut y, &mut stats,
            );
            let err = match outcome {
                Ok(e) if e.is_finite() => e,
                // a stage left the model domain: treat as a failed step
                Ok(_) | Err(_) => f64::INFINITY,
            };

            if err <= 1.0 {
                stats.accepted += 1;
                t = if clipped { target } else { t + h_try };
                std::mem::swap(&mut x, &mut y);
                observer(t, &x)?;
                fresh = true;
                let fac = if err == 0.0 {
                    6.0
                } else {
                    (0.9 * err.powf(-0.25)).clamp(0.2, 6.0)
                };
                let fac = if last_rejected { fac.min(1.0) } else { fac };
                let h_new = h_try * fac;
                h = if clipped { h_new.max(h) } else { h_new };
                h = h.min(self.h_max);
                last_rejected = false;
                if clipped {
                    stop_idx = (stop_idx + 1).min(stops.len() - 1);
                }
            } else {
                stats.rejected += 1;
                let fac = if err.is_finite() {
                    (0.9 * err.powf(-0.25)).clamp(0.2, 1.0)
                } else {
                    0.25
                };
                h = h_try * fac;
                last_rejected = true;
                if h < self.h_min {
                    let reason = match outcome {
                        Err(e) => e.to_string(),
                        Ok(_) => format!("error norm {err:.3e}"),
                    };
                    return Err(Error::Integration {
                        time: t,
                        message: format!("step size {h:.3e} below minimum ({reason})"),
                    });
                }
            }
        }
        Ok((x, stats))
    }
}

fn wrap(t: f64, e: Error) -> Error {
    match e {
        Error::Integration { .. } => e,
        other => Error::Integration {
            time: t,
            message: other.to_string(),
        },
    }
}

/// Fixed-step classical Runge-Kutta, calling `observer` after every step.
pub fn rk4<S, O>(
    sys: &S,
    t0: f64,
    x0: &[f64],
    h: f64,
    steps: usize,
    mut observer: O,
) -> Result<Vec<f64>>
where
    S: OdeSystem,
    O: FnMut(usize, f64, &[f64]) -> Result<()>,
{
    let n = sys.dim();
    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut u = vec![0.0; n];
    for step in 0..steps {
        let t = t0 + step as f64 * h;
        let e = |err| wrap(t, err);
        sys.rhs(&x, &mut k1).map_err(e)?;
        for i in 0..n {
            u[i] = x[i] + 0.5 * h * k1[i];
        }
        sys.rhs(&u, &mut k2).map_err(e)?;
        for i in 0..n {
            u[i] = x[i] + 0.5 * h * k2[i];
        }
        sys.rhs(&u, &mut k3).map_err(e)?;
        for i in 0..n {
            u[i] = x[i] + h * k3[i];
        }
        sys.rhs(&u, &mut k4).map_err(e)?;
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Integration {
                time: t + h,
                message: "non-finite state".into(),
            });
        }
        observer(step + 1, t0 + (step + 1) as f64 * h, &x)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decay() -> (usize, impl Fn(&[f64], &mut [f64]) -> Result<()>) {
        (1, |x: &[f64], dx: &mut [f64]| {
            dx[0] = -x[0];
            Ok(())
        })
    }

    /// Pendulum-like nonlinear test problem with a smooth solution.
    fn nonlinear() -> (usize, impl Fn(&[f64], &mut [f64]) -> Result<()>) {
        (2, |x: &[f64], dx: &mut [f64]| {
            dx[0] = x[1];
            dx[1] = -x[0].sin() - 0.1 * x[1];
            Ok(())
        })
    }

    fn fixed_rodas(sys: &impl OdeSystem, x0: &[f64], h: f64, steps: usize) -> (Vec<f64>, f64) {
        let n = sys.dim();
        let mut work = Work::new(n);
        let mut stats = StepStats::default();
        let mut x = x0.to_vec();
        let mut y = vec![0.0; n];
        let mut f0 = vec![0.0; n];
        let mut max_err_est = 0.0_f64;
        for _ in 0..steps {
            sys.rhs(&x, &mut f0).unwrap();
            let jac = jacobian(sys, &x, &mut stats).unwrap();
            // unit scale so the estimate is an absolute local error
            let e = rodas4_step(
                sys, &x, &f0, &jac, h, 0.0, 1.0, &mut work, &mut y, &mut stats,
            )
            .unwrap();
            max_err_est = max_err_est.max(e);
            std::mem::swap(&mut x, &mut y);
        }
        (x, max_err_est)
    }

    #[test]
    fn fourth_order_convergence() {
        let sys = nonlinear();
        let x0 = [1.0, 0.0];
        let reference = rk4(&sys, 0.0, &x0, 1e-4, 20_000, |_, _, _| Ok(())).unwrap();
        let errs: Vec<f64> = [0.1_f64, 0.05, 0.025]
            .iter()
            .map(|&h| {
                let steps = (2.0 / h).round() as usize;
                let (x, _) = fixed_rodas(&sys, &x0, h, steps);
                ((x[0] - reference[0]).powi(2) + (x[1] - reference[1]).powi(2)).sqrt()
            })
            .collect();
        for w in errs.windows(2) {
            let rate = (w[0] / w[1]).log2();
            assert!(rate > 3.6 && rate < 4.6, "rate {rate}, errors {errs:?}");
        }
    }

    #[test]
    fn embedded_estimate_is_third_order() {
        let sys = nonlinear();
        let x0 = [1.0, 0.0];
        let (_, e1) = fixed_rodas(&sys, &x0, 0.02, 1);
        let (_, e2) = fixed_rodas(&sys, &x0, 0.01, 1);
        // local error of an order-3 method scales as h^4
        let rate = (e1 / e2).log2();
        assert!(rate > 3.5 && rate < 4.5, "rate {rate}");
    }

    #[test]
    fn adaptive_exponential_decay() {
        let sys = decay();
        let solver = Rodas4 {
            rtol: 1e-9,
            atol: 1e-12,
            ..Rodas4::default()
        };
        let (x, stats) = solver
            .integrate(&sys, 0.0, &[1.0], 1.0, &[], |_, _| Ok(()))
            .unwrap();
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-8, "{}", x[0]);
        assert!(stats.accepted > 0);
    }

    #[test]
    fn stiff_problem_takes_large_steps() {
        // fast relaxation onto a slow manifold x = cos t
        let sys = (2, |x: &[f64], dx: &mut [f64]| {
            dx[0] = 1.0;
            dx[1] = -1e7 * (x[1] - x[0].cos()) - x[0].sin();
            Ok(())
        });
        let solver = Rodas4 {
            h_max: 1.0,
            ..Rodas4::default()
        };
        let (x, stats) = solver
            .integrate(&sys, 0.0, &[0.0, 2.0], 2.0, &[], |_, _| Ok(()))
            .unwrap();
        assert!((x[1] - 2.0f64.cos()).abs() < 1e-6, "{}", x[1]);
        assert!(stats.accepted < 500, "{stats:?}");
    }

    #[test]
    fn lands_on_breakpoints() {
        let sys = decay();
        let mut hits = Vec::new();
        let bps = [0.1, 0.25, 0.7];
        Rodas4::default()
            .integrate(&sys, 0.0, &[1.0], 1.0, &bps, |t, _| {
                hits.push(t);
                Ok(())
            })
            .unwrap();
        for b in bps {
            assert!(hits.contains(&b), "missing {b}");
        }
        assert_eq!(*hits.last().unwrap(), 1.0);
    }

    #[test]
    fn domain_error_shrinks_step() {
        // rhs refuses x below 0.5; solution approaches 0.6 from above
        let sys = (1, |x: &[f64], dx: &mut [f64]| {
            if x[0] < 0.5 {
                return Err(Error::domain("test", "below floor"));
            }
            dx[0] = -50.0 * (x[0] - 0.6);
            Ok(())
        });
        let solver = Rodas4 {
            h_init: 1.0,
            h_max: 1.0,
            ..Rodas4::default()
        };
        let (x, stats) = solver
            .integrate(&sys, 0.0, &[1.0], 1.0, &[], |_, _| Ok(()))
            .unwrap();
        assert!((x[0] - 0.6).abs() < 1e-6);
        assert!(stats.rejected > 0);
    }

    #[test]
    fn rk4_matches_exponential() {
        let sys = decay();
        let x = rk4(&sys, 0.0, &[1.0], 0.01, 100, |_, _, _| Ok(())).unwrap();
        assert!((x[0] - (-1.0f64).exp()).abs() < 1e-9);
    }
}
