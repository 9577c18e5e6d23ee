//! Linearization at an equilibrium, eigenvalues, damping ratios and the
//! eigenvalue/damping feasibility test.

use std::fmt;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::config::{LoadParams, SystemParams};
use crate::error::{Error, Result};
use crate::numdiff::{central_jacobian, DEFAULT_REL_STEP};
use crate::sim::{system_derivative, Equilibrium, SystemState};

/// `|lambda|` below which a mode counts as structural zero.
pub const ZERO_MODE_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// `df/dx` (1/s).
    pub a: DMatrix<f64>,
    /// `df/dw` for `w = (p_l, q_l)`.
    pub b: DMatrix<f64>,
    pub x_eq: SystemState,
    pub labels: Vec<&'static str>,
}

fn step_for(scale: f64) -> impl Fn(usize, f64) -> f64 {
    move |_, v| scale * DEFAULT_REL_STEP * v.abs().max(1.0)
}

/// `A` and `B` by central differences with per-column step
/// `scale * max(1e-7, 1e-7 |x_j|)`.
pub fn jacobian_scaled(
    params: &SystemParams,
    load: &LoadParams,
    x_eq: &[f64],
    scale: f64,
) -> Result<LinearModel> {
    let order = params.battery.order;
    let n = SystemState::dim(order);
    if x_eq.len() != n {
        return Err(Error::domain(
            "jacobian",
            format!("state has {} entries, expected {n}", x_eq.len()),
        ));
    }
    let labels = SystemState::labels(order);
    let a = central_jacobian(
        x_eq,
        n,
        |j, x, out| {
            system_derivative(x, params, load, out)
                .map(|_| ())
                .map_err(|e| Error::domain("jacobian", format!("perturbing {}: {e}", labels[j])))
        },
        step_for(scale),
    )?;
    let w = [load.p_l, load.q_l];
    let b = central_jacobian(
        &w,
        n,
        |j, w, out| {
            let l = LoadParams {
                p_l: w[0],
                q_l: w[1],
                model: load.model,
            };
            system_derivative(x_eq, params, &l, out)
                .map(|_| ())
                .map_err(|e| {
                    let name = if j == 0 { "p_l" } else { "q_l" };
                    Error::domain("jacobian", format!("perturbing {name}: {e}"))
                })
        },
        step_for(scale),
    )?;
    Ok(LinearModel {
        a,
        b,
        x_eq: SystemState::from_slice(order, x_eq),
        labels,
    })
}

pub fn jacobian(params: &SystemParams, load: &LoadParams, x_eq: &[f64]) -> Result<LinearModel> {
    jacobian_scaled(params, load, x_eq, 1.0)
}

pub fn linearize(eq: &Equilibrium) -> Result<LinearModel> {
    jacobian(&eq.params, &eq.load, &eq.x)
}

/// Step-halving extrapolation `(4 A(h/2) - A(h)) / 3`.
pub fn richardson_jacobian(
    params: &SystemParams,
    load: &LoadParams,
    x_eq: &[f64],
) -> Result<DMatrix<f64>> {
    let coarse = jacobian_scaled(params, load, x_eq, 1.0)?.a;
    let fine = jacobian_scaled(params, load, x_eq, 0.5)?.a;
    Ok((fine * 4.0 - coarse) / 3.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    /// Sorted by descending real part, then descending imaginary part.
    pub eigenvalues: Vec<Complex64>,
    pub damping: Vec<f64>,
    pub zero_modes: Vec<usize>,
    /// State with the largest eigenvector component per mode.
    pub dominant: Vec<String>,
}

pub fn damping_ratio(lambda: Complex64) -> f64 {
    let mag = lambda.norm();
    if mag == 0.0 {
        0.0
    } else {
        -lambda.re / mag
    }
}

/// Eigenvalues of a real matrix with conjugate pairs made exact.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain(
            "eigen_analysis",
            "matrix has non-finite entries",
        ));
    }
    let n = a.nrows();
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 100 * n.max(10)).ok_or(Error::Eigen)?;
    let mut raw: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    raw.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));

    // pair each upper-half-plane value with its mirror
    let scale = raw.iter().fold(1.0_f64, |m, z| m.max(z.norm()));
    let mut used = vec![false; raw.len()];
    let mut out = raw.clone();
    for i in 0..raw.len() {
        if used[i] || raw[i].im <= 0.0 {
            continue;
        }
        let tol = 1e-7 * scale;
        let partner = (0..raw.len())
            .filter(|&j| !used[j] && j != i && raw[j].im < 0.0)
            .min_by(|&j, &k| {
                (raw[j] - raw[i].conj())
                    .norm()
                    .total_cmp(&(raw[k] - raw[i].conj()).norm())
            });
        match partner {
            Some(j) if (raw[j] - raw[i].conj()).norm() <= tol => {
                let re = 0.5 * (raw[i].re + raw[j].re);
                let im = 0.5 * (raw[i].im - raw[j].im);
                out[i] = Complex64::new(re, im);
                out[j] = Complex64::new(re, -im);
                used[i] = true;
                used[j] = true;
            }
            _ => {
                return Err(Error::domain(
                    "eigen_analysis",
                    format!("eigenvalue {} has no conjugate partner", raw[i]),
                ))
            }
        }
    }
    for (i, z) in raw.iter().enumerate() {
        if z.im < 0.0 && !used[i] {
            return Err(Error::domain(
                "eigen_analysis",
                format!("eigenvalue {z} has no conjugate partner"),
            ));
        }
        if z.im == 0.0 {
            used[i] = true;
        }
    }
    out.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    Ok(out)
}

/// Unit-norm eigenvector of `a` by inverse iteration.
fn eigenvector(a: &DMatrix<f64>, lambda: Complex64) -> Option<DVector<Complex64>> {
    let n = a.nrows();
    let shift = lambda + Complex64::new(1e-10, 1e-10) * lambda.norm().max(1.0);
    let m = DMatrix::from_fn(n, n, |i, j| {
        let v = Complex64::new(a[(i, j)], 0.0);
        if i == j {
            v - shift
        } else {
            v
        }
    });
    let lu = m.lu();
    let mut v = DVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.1 * i as f64, 0.0));
    for _ in 0..3 {
        v = lu.solve(&v)?;
        let norm = v.norm();
        if !norm.is_finite() || norm == 0.0 {
            return None;
        }
        v /= Complex64::new(norm, 0.0);
    }
    Some(v)
}

/// State with the largest participation factor `|w_k v_k|` in the mode.
fn dominant_state(a: &DMatrix<f64>, lambda: Complex64) -> Option<usize> {
    let right = eigenvector(a, lambda)?;
    let left = eigenvector(&a.transpose(), lambda)?;
    let part: Vec<f64> = right
        .iter()
        .zip(left.iter())
        .map(|(r, l)| (r * l).norm())
        .collect();
    (0..part.len()).max_by(|&i, &j| part[i].total_cmp(&part[j]))
}

pub fn eigen_analysis(a: &DMatrix<f64>, labels: &[&str]) -> Result<ModeReport> {
    let eigenvalues = eigenvalues(a)?;
    let damping = eigenvalues.iter().map(|&l| damping_ratio(l)).collect();
    let zero_modes = eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, l)| l.norm() < ZERO_MODE_THRESHOLD)
        .map(|(i, _)| i)
        .collect();
    let dominant = eigenvalues
        .iter()
        .map(|&l| match dominant_state(a, l) {
            Some(k) => labels
                .get(k)
                .map(|s| s.to_string())
                .unwrap_or_else(|| k.to_string()),
            None => "?".to_string(),
        })
        .collect();
    Ok(ModeReport {
        eigenvalues,
        damping,
        zero_modes,
        dominant,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Criteria {
    pub lambda_crit: f64,
    pub zeta_crit: f64,
}

impl Default for Criteria {
    fn default() -> Self {
        Self {
            lambda_crit: -3.0,
            zeta_crit: 0.35,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub feasible: bool,
    /// Largest real part over non-zero modes.
    pub max_real: f64,
    /// Smallest damping ratio over non-zero modes.
    pub min_damping: f64,
    /// The non-zero mode with the largest real part.
    pub binding: Option<Complex64>,
    /// Every non-zero mode violating a criterion.
    pub offenders: Vec<Complex64>,
}

impl ModeReport {
    pub fn nonzero(&self) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        self.eigenvalues
            .iter()
            .copied()
            .enumerate()
            .filter(|(i, _)| !self.zero_modes.contains(i))
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "# index re im zeta zero_mode dominant_state")?;
        for (i, l) in self.eigenvalues.iter().enumerate() {
            writeln!(
                w,
                "{i} {:.12e} {:.12e} {:.9} {} {}",
                l.re,
                l.im,
                self.damping[i],
                self.zero_modes.contains(&i),
                self.dominant[i]
            )?;
        }
        Ok(())
    }
}

pub fn check_feasibility(report: &ModeReport, criteria: &Criteria) -> Feasibility {
    let mut max_real = f64::NEG_INFINITY;
    let mut min_damping = f64::INFINITY;
    let mut binding = None;
    let mut offenders = Vec::new();
    for (i, l) in report.nonzero() {
        let zeta = report.damping[i];
        if l.re > max_real {
            max_real = l.re;
            binding = Some(l);
        }
        min_damping = min_damping.min(zeta);
        if l.re > criteria.lambda_crit || zeta < criteria.zeta_crit {
            offenders.push(l);
        }
    }
    Feasibility {
        feasible: offenders.is_empty(),
        max_real,
        min_damping,
        binding,
        offenders,
    }
}

impl fmt::Display for Feasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} (max Re = {:.6}, min zeta = {:.6}, offenders = {})",
            if self.feasible {
                "feasible"
            } else {
                "infeasible"
            },
            self.max_real,
            self.min_damping,
            self.offenders.len()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn report(eigs: &[Complex64]) -> ModeReport {
        ModeReport {
            eigenvalues: eigs.to_vec(),
            damping: eigs.iter().map(|&l| damping_ratio(l)).collect(),
            zero_modes: eigs
                .iter()
                .enumerate()
                .filter(|(_, l)| l.norm() < ZERO_MODE_THRESHOLD)
                .map(|(i, _)| i)
                .collect(),
            dominant: vec![String::new(); eigs.len()],
        }
    }

    #[test]
    fn diagonal_matrix() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, -2.0]));
        let r = eigen_analysis(&a, &["x", "y"]).unwrap();
        assert_eq!(r.eigenvalues.len(), 2);
        assert!((r.eigenvalues[0] - c(-1.0, 0.0)).norm() < 1e-12);
        assert!((r.eigenvalues[1] - c(-2.0, 0.0)).norm() < 1e-12);
        assert_eq!(r.damping, vec![1.0, 1.0]);
        assert_eq!(r.dominant, vec!["x", "y"]);
    }

    #[test]
    fn companion_damping() {
        let (zeta, w) = (0.35, 10.0);
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -w * w, -2.0 * zeta * w]);
        let r = eigen_analysis(&a, &["x", "v"]).unwrap();
        for d in &r.damping {
            assert!((d - zeta).abs() < 1e-9, "{d}");
        }
        assert_eq!(r.damping[0], r.damping[1]);
        assert_eq!(r.eigenvalues[0], r.eigenvalues[1].conj());
    }

    #[test]
    fn rotation_is_undamped() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let r = eigen_analysis(&a, &["x", "y"]).unwrap();
        for d in &r.damping {
            assert!(d.abs() < 1e-12);
        }
        assert!(r.zero_modes.is_empty());
    }

    #[test]
    fn positive_real_mode_has_negative_damping() {
        assert_eq!(damping_ratio(c(2.0, 0.0)), -1.0);
        assert_eq!(damping_ratio(c(-2.0, 0.0)), 1.0);
    }

    #[test]
    fn feasibility_examples() {
        let crit = Criteria::default();
        let ok = check_feasibility(&report(&[c(-5.0, 2.0), c(-5.0, -2.0)]), &crit);
        assert!(ok.feasible);
        assert!((ok.min_damping - 0.928).abs() < 1e-3);

        let margin = check_feasibility(&report(&[c(-2.0, 0.0)]), &crit);
        assert!(!margin.feasible);
        assert_eq!(margin.offenders, vec![c(-2.0, 0.0)]);

        let damping = check_feasibility(&report(&[c(-1.0, 10.0), c(-1.0, -10.0)]), &crit);
        assert!(!damping.feasible);
        assert!((damping.min_damping - 0.0995).abs() < 1e-4);
    }

    #[test]
    fn zero_modes_are_excluded() {
        let crit = Criteria::default();
        let f = check_feasibility(&report(&[c(1e-9, 0.0), c(-4.0, 0.0)]), &crit);
        assert!(f.feasible);
        assert_eq!(f.binding, Some(c(-4.0, 0.0)));
    }

    #[test]
    fn permutation_leaves_spectrum() {
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                -1.0, 2.0, 0.0, 0.3, -3.0, -0.5, 1.0, 0.0, 0.0, 0.2, -4.0, 1.0, 0.5, 0.0, -1.0,
                -2.0,
            ],
        );
        let perm = [2, 0, 3, 1];
        let p = DMatrix::from_fn(4, 4, |i, j| a[(perm[i], perm[j])]);
        let e1 = eigenvalues(&a).unwrap();
        let e2 = eigenvalues(&p).unwrap();
        for (x, y) in e1.iter().zip(&e2) {
            assert!((x - y).norm() < 1e-9, "{x} vs {y}");
        }
    }
}
