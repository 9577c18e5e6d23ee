//! DC gain grid search: small-signal screen, large-signal L2 ranking, and the
//! predictor and capacitance sweeps.

use std::fmt;
use std::io::{self, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DcGains, SystemParams};
use crate::error::{Error, Result};
use crate::sim::{find_equilibrium, simulate_from, Equilibrium, Scenario, SystemState};
use crate::smallsignal::{check_feasibility, eigenvalues, jacobian, Criteria, ModeReport};
use crate::smallsignal::{damping_ratio, ZERO_MODE_THRESHOLD};

pub use crate::sim::l2_objective;

/// Candidates handled sequentially with warm starts by one task. Fixed so
/// results do not depend on the worker count.
pub const CHUNK: usize = 32;

pub const GAIN_NAMES: [&str; 4] = ["kp_vdc", "ki_vdc", "kp_ib", "ki_ib"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainGrid {
    /// `(min, max)` per gain, in [`GAIN_NAMES`] order.
    pub bounds: [(f64, f64); 4],
    pub step: f64,
}

impl Default for GainGrid {
    fn default() -> Self {
        Self::uniform(0.0, 10.0, 0.5)
    }
}

impl GainGrid {
    pub fn uniform(k_min: f64, k_max: f64, step: f64) -> Self {
        Self {
            bounds: [(k_min, k_max); 4],
            step,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::Tuning(format!(
                "grid step {} must be > 0",
                self.step
            )));
        }
        for (name, (lo, hi)) in GAIN_NAMES.iter().zip(self.bounds) {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::Tuning(format!("bounds for {name}: ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    pub fn axis(&self, dim: usize) -> Vec<f64> {
        let (lo, hi) = self.bounds[dim];
        let n = ((hi - lo) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|k| lo + k as f64 * self.step).collect()
    }

    pub fn cardinality(&self) -> usize {
        (0..4).map(|d| self.axis(d).len()).product()
    }
}

/// Lexicographic enumeration (`kp_vdc` slowest) with `k_pred = 0`.
pub fn enumerate_gains(grid: &GainGrid) -> Result<Vec<DcGains>> {
    grid.validate()?;
    let axes: Vec<Vec<f64>> = (0..4).map(|d| grid.axis(d)).collect();
    let mut out = Vec::with_capacity(grid.cardinality());
    for &a in &axes[0] {
        for &b in &axes[1] {
            for &c in &axes[2] {
                for &d in &axes[3] {
                    out.push(DcGains::new(a, b, c, d, 0.0));
                }
            }
        }
    }
    Ok(out)
}

/// Fine candidates within one fine step of any feasible coarse point.
pub fn refine_around(fine: &GainGrid, feasible_coarse: &[DcGains]) -> Result<Vec<DcGains>> {
    let all = enumerate_gains(fine)?;
    let near = |g: &DcGains, c: &DcGains| {
        let (a, b) = (gain_vector(g), gain_vector(c));
        a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= fine.step * (1.0 + 1e-9))
    };
    Ok(all
        .into_iter()
        .filter(|g| feasible_coarse.iter().any(|c| near(g, c)))
        .collect())
}

fn gain_vector(g: &DcGains) -> [f64; 4] {
    [g.kp_vdc, g.ki_vdc, g.kp_ib, g.ki_ib]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenRecord {
    pub index: usize,
    pub gains: DcGains,
    pub feasible: bool,
    /// Why the candidate is infeasible, if it is.
    pub reason: Option<String>,
    /// Largest real part over non-zero modes.
    pub max_real: f64,
    pub min_damping: f64,
    pub binding: Option<Complex64>,
    #[serde(skip)]
    pub equilibrium: Option<Equilibrium>,
}

/// Adapts a neighbouring equilibrium to new gains: only the current-loop
/// integrator depends on them at steady state.
fn warm_guess(prev: &Equilibrium, params: &SystemParams) -> Vec<f64> {
    let order = params.battery.order;
    let mut s = SystemState::from_slice(order, &prev.x);
    let old = prev.params.dc.gains;
    let new = params.dc.gains;
    if new.ki_ib != 0.0 {
        s.dc.zeta_i = old.ki_ib * s.dc.zeta_i / new.ki_ib;
    }
    if new.ki_vdc != 0.0 {
        s.dc.eta = old.ki_vdc * s.dc.eta / new.ki_vdc;
    }
    s.to_vec()
}

/// Equilibrium, linearization and eigenvalue test for one gain set.
pub fn screen_candidate(
    index: usize,
    gains: DcGains,
    params: &SystemParams,
    criteria: &Criteria,
    warm: Option<&Equilibrium>,
) -> ScreenRecord {
    let p = params.with_gains(gains);
    let mut rec = ScreenRecord {
        index,
        gains,
        feasible: false,
        reason: None,
        max_real: f64::NAN,
        min_damping: f64::NAN,
        binding: None,
        equilibrium: None,
    };
    let guess = warm.map(|w| warm_guess(w, &p));
    let eq = match find_equilibrium(&p, &p.load, guess.as_deref()) {
        Ok(eq) => eq,
        Err(e) if guess.is_some() => match find_equilibrium(&p, &p.load, None) {
            Ok(eq) => eq,
            Err(_) => {
                rec.reason = Some(format!("equilibrium: {e}"));
                return rec;
            }
        },
        Err(e) => {
            rec.reason = Some(format!("equilibrium: {e}"));
            return rec;
        }
    };
    let a = match jacobian(&eq.params, &eq.load, &eq.x) {
        Ok(lm) => lm.a,
        Err(e) => {
            rec.reason = Some(format!("jacobian: {e}"));
            return rec;
        }
    };
    let eigs = match eigenvalues(&a) {
        Ok(e) => e,
        Err(e) => {
            rec.reason = Some(format!("eigenvalues: {e}"));
            return rec;
        }
    };
    let report = ModeReport {
        damping: eigs.iter().map(|&l| damping_ratio(l)).collect(),
        zero_modes: eigs
            .iter()
            .enumerate()
            .filter(|(_, l)| l.norm() < ZERO_MODE_THRESHOLD)
            .map(|(i, _)| i)
            .collect(),
        dominant: vec![String::new(); eigs.len()],
        eigenvalues: eigs,
    };
    let verdict = check_feasibility(&report, criteria);
    rec.max_real = verdict.max_real;
    rec.min_damping = verdict.min_damping;
    rec.binding = verdict.binding;
    rec.feasible = verdict.feasible;
    if report.zero_modes.len() != 1 {
        // only the angle mode is structural; another zero mode is an
        // integrator left without feedback
        rec.feasible = false;
        rec.reason = Some(format!("{} zero modes", report.zero_modes.len()));
    } else if !verdict.feasible {
        let worst = verdict.offenders[0];
        rec.reason = Some(format!(
            "mode {:.4}{:+.4}j violates criteria (zeta {:.4})",
            worst.re,
            worst.im,
            damping_ratio(worst)
        ));
    }
    rec.equilibrium = Some(eq);
    rec
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        b = b.num_threads(w.max(1));
    }
    b.build()
        .map_err(|e| Error::Tuning(format!("thread pool: {e}")))
}

/// Screens every candidate; records keep enumeration order. Within a chunk
/// each candidate is warm-started from its predecessor's equilibrium.
pub fn screen_small_signal(
    candidates: &[DcGains],
    params: &SystemParams,
    criteria: &Criteria,
    workers: Option<usize>,
) -> Result<Vec<ScreenRecord>> {
    let pool = pool(workers)?;
    let chunks: Vec<Vec<ScreenRecord>> = pool.install(|| {
        candidates
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut out = Vec::with_capacity(chunk.len());
                let mut warm: Option<Equilibrium> = None;
                for (k, g) in chunk.iter().enumerate() {
                    let rec = screen_candidate(c * CHUNK + k, *g, params, criteria, warm.as_ref());
                    if let Some(eq) = &rec.equilibrium {
                        warm = Some(eq.clone());
                    }
                    out.push(rec);
                }
                out
            })
            .collect()
    });
    Ok(chunks.into_iter().flatten().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub index: usize,
    pub gains: DcGains,
    pub feasible: bool,
    pub reason: Option<String>,
    pub max_real: f64,
    pub min_damping: f64,
    pub objective: Option<f64>,
    pub max_deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub candidates: usize,
    pub feasible_count: usize,
    pub simulated_count: usize,
    pub best_index: usize,
    pub best_gains: DcGains,
    pub best_objective: f64,
    pub best_max_deviation: f64,
    pub records: Vec<CandidateRecord>,
}

/// Simulates every feasible record and returns the L2 argmin (first index
/// wins ties). Simulation failures mark the candidate infeasible.
pub fn optimize_gains(
    screened: &[ScreenRecord],
    params: &SystemParams,
    scenario: &Scenario,
    workers: Option<usize>,
) -> Result<TuningReport> {
    scenario.validate()?;
    let pool = pool(workers)?;
    let records: Vec<CandidateRecord> = pool.install(|| {
        screened
            .par_iter()
            .map(|s| {
                let mut rec = screen_records(std::slice::from_ref(s)).remove(0);
                if !s.feasible {
                    return rec;
                }
                let matches =
                    |eq: &Equilibrium| eq.load.p_l == scenario.p_l && eq.load.q_l == scenario.q_l;
                let run = match &s.equilibrium {
                    Some(eq) if matches(eq) => simulate_from(eq, scenario),
                    _ => crate::sim::simulate(
                        &params.with_gains(s.gains),
                        &Scenario {
                            gains: None,
                            ..*scenario
                        },
                    ),
                };
                match run {
                    Ok(traj) => {
                        rec.objective = Some(l2_objective(&traj, traj.v_dc_star));
                        rec.max_deviation = Some(traj.max_deviation());
                    }
                    Err(e) => {
                        rec.feasible = false;
                        rec.reason = Some(format!("simulation: {e}"));
                    }
                }
                rec
            })
            .collect()
    });

    let mut best: Option<&CandidateRecord> = None;
    for r in &records {
        if let Some(obj) = r.objective {
            if best.is_none_or(|b| obj < b.objective.unwrap()) {
                best = Some(r);
            }
        }
    }
    let best = best.ok_or_else(|| {
        Error::Tuning(if screened.iter().any(|s| s.feasible) {
            "every feasible candidate failed to simulate".into()
        } else {
            "no feasible candidates (empty gain set)".into()
        })
    })?;
    Ok(TuningReport {
        candidates: records.len(),
        feasible_count: records.iter().filter(|r| r.feasible).count(),
        simulated_count: records.iter().filter(|r| r.objective.is_some()).count(),
        best_index: best.index,
        best_gains: best.gains,
        best_objective: best.objective.unwrap(),
        best_max_deviation: best.max_deviation.unwrap(),
        records,
    })
}

/// Screen plus optimization over a grid.
pub fn tune(
    grid: &GainGrid,
    params: &SystemParams,
    criteria: &Criteria,
    scenario: &Scenario,
    workers: Option<usize>,
) -> Result<TuningReport> {
    let candidates = enumerate_gains(grid)?;
    let params = scenario.apply(params);
    let scenario = Scenario {
        gains: None,
        order: None,
        ..*scenario
    };
    let screened = screen_small_signal(&candidates, &params, criteria, workers)?;
    optimize_gains(&screened, &params, &scenario, workers)
}

/// Coarse screen at twice the step, then the full step around survivors.
pub fn tune_coarse_to_fine(
    grid: &GainGrid,
    params: &SystemParams,
    criteria: &Criteria,
    scenario: &Scenario,
    workers: Option<usize>,
) -> Result<TuningReport> {
    let coarse = GainGrid {
        step: 2.0 * grid.step,
        ..*grid
    };
    let params = scenario.apply(params);
    let scenario = Scenario {
        gains: None,
        order: None,
        ..*scenario
    };
    let first = screen_small_signal(&enumerate_gains(&coarse)?, &params, criteria, workers)?;
    let survivors: Vec<DcGains> = first
        .iter()
        .filter(|r| r.feasible)
        .map(|r| r.gains)
        .collect();
    let refined = refine_around(grid, &survivors)?;
    let screened = screen_small_signal(&refined, &params, criteria, workers)?;
    optimize_gains(&screened, &params, &scenario, workers)
}

pub const TUNING_CSV_HEADER: &str =
    "index,kp_vdc,ki_vdc,kp_ib,ki_ib,feasible,max_real,min_damping,objective,max_deviation,reason";

/// Screen results as unsimulated candidate records.
pub fn screen_records(screened: &[ScreenRecord]) -> Vec<CandidateRecord> {
    screened
        .iter()
        .map(|s| CandidateRecord {
            index: s.index,
            gains: s.gains,
            feasible: s.feasible,
            reason: s.reason.clone(),
            max_real: s.max_real,
            min_damping: s.min_damping,
            objective: None,
            max_deviation: None,
        })
        .collect()
}

/// One row per candidate, columns as in [`TUNING_CSV_HEADER`].
pub fn write_records_csv<W: Write>(records: &[CandidateRecord], mut w: W) -> io::Result<()> {
    writeln!(w, "{TUNING_CSV_HEADER}")?;
    for r in records {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.12e}")).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{:.9e},{:.9e},{},{},{}",
            r.index,
            r.gains.kp_vdc,
            r.gains.ki_vdc,
            r.gains.kp_ib,
            r.gains.ki_ib,
            r.feasible as u8,
            r.max_real,
            r.min_damping,
            opt(r.objective),
            opt(r.max_deviation),
            r.reason.as_deref().unwrap_or("").replace(',', ";")
        )?;
    }
    Ok(())
}

impl TuningReport {
    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        write_records_csv(&self.records, w)
    }
}

impl fmt::Display for TuningReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "candidates = {}", self.candidates)?;
        writeln!(f, "feasible = {}", self.feasible_count)?;
        writeln!(f, "simulated = {}", self.simulated_count)?;
        writeln!(f, "best_index = {}", self.best_index)?;
        writeln!(f, "best_gains = {}", self.best_gains)?;
        writeln!(f, "best_objective = {:.9e}", self.best_objective)?;
        writeln!(f, "best_max_deviation = {:.9e}", self.best_max_deviation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpredRow {
    pub k_pred: f64,
    pub max_deviation: f64,
    pub l2_objective: f64,
    /// Percent reduction of the maximum deviation versus `k_pred = 0`.
    pub reduction_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpredReport {
    pub rows: Vec<KpredRow>,
}

impl KpredReport {
    pub const CSV_HEADER: &'static str = "k_pred,max_deviation,l2_objective,reduction_pct";

    /// Row with the largest reduction (first on ties).
    pub fn best(&self) -> &KpredRow {
        self.rows.iter().fold(&self.rows[0], |b, r| {
            if r.reduction_pct > b.reduction_pct {
                r
            } else {
                b
            }
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{:.12e},{:.12e},{:.6}",
                r.k_pred, r.max_deviation, r.l2_objective, r.reduction_pct
            )?;
        }
        Ok(())
    }
}

fn run_gains(
    params: &SystemParams,
    scenario: &Scenario,
    gains: DcGains,
) -> Result<crate::sim::Trajectory> {
    let sc = Scenario {
        gains: Some(gains),
        ..*scenario
    };
    crate::sim::simulate(params, &sc)
}

pub fn sweep_kpred(
    gains: DcGains,
    kpred_values: &[f64],
    params: &SystemParams,
    scenario: &Scenario,
    workers: Option<usize>,
) -> Result<KpredReport> {
    if !kpred_values.contains(&0.0) {
        return Err(Error::Tuning("k_pred values must include 0".into()));
    }
    let pool = pool(workers)?;
    let runs: Vec<Result<(f64, f64)>> = pool.install(|| {
        kpred_values
            .par_iter()
            .map(|&k| {
                let t = run_gains(params, scenario, gains.with_k_pred(k))?;
                Ok((t.max_deviation(), l2_objective(&t, t.v_dc_star)))
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(runs.len());
    for (k, r) in kpred_values.iter().zip(runs) {
        let (dev, l2) = r.map_err(|e| Error::Tuning(format!("k_pred = {k}: {e}")))?;
        rows.push(KpredRow {
            k_pred: *k,
            max_deviation: dev,
            l2_objective: l2,
            reduction_pct: 0.0,
        });
    }
    let base = rows.iter().find(|r| r.k_pred == 0.0).unwrap().max_deviation;
    for r in &mut rows {
        r.reduction_pct = if r.k_pred == 0.0 {
            0.0
        } else {
            100.0 * (base - r.max_deviation) / base
        };
    }
    Ok(KpredReport { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitanceRow {
    pub c_dc_farads: f64,
    pub max_deviation_base: f64,
    pub max_deviation_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitanceReport {
    pub k_pred: f64,
    pub rows: Vec<CapacitanceRow>,
}

impl CapacitanceReport {
    pub const CSV_HEADER: &'static str = "c_dc_farads,max_deviation_kpred0,max_deviation_kpred";

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{:.6e},{:.12e},{:.12e}",
                r.c_dc_farads, r.max_deviation_base, r.max_deviation_pred
            )?;
        }
        Ok(())
    }
}

/// Max deviation per DC-link capacitance (F) with `k_pred = 0` and with the
/// given `k_pred`.
pub fn sweep_capacitance(
    gains: DcGains,
    c_values: &[f64],
    k_pred: f64,
    params: &SystemParams,
    scenario: &Scenario,
    workers: Option<usize>,
) -> Result<CapacitanceReport> {
    if let Some(c) = c_values.iter().find(|c| !(c.is_finite() && **c > 0.0)) {
        return Err(Error::Tuning(format!("capacitance {c} F must be > 0")));
    }
    let pool = pool(workers)?;
    let jobs: Vec<(usize, f64)> = (0..c_values.len())
        .flat_map(|i| [(i, 0.0), (i, k_pred)])
        .collect();
    let runs: Vec<Result<f64>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(i, k)| {
                let p = params.with_dc_capacitance(c_values[i]);
                Ok(run_gains(&p, scenario, gains.with_k_pred(k))?.max_deviation())
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(c_values.len());
    let mut it = runs.into_iter();
    for &c in c_values {
        let wrap = |r: Result<f64>| r.map_err(|e| Error::Tuning(format!("C_DC = {c} F: {e}")));
        let base = wrap(it.next().unwrap())?;
        let pred = wrap(it.next().unwrap())?;
        rows.push(CapacitanceRow {
            c_dc_farads: c,
            max_deviation_base: base,
            max_deviation_pred: pred,
        });
    }
    Ok(CapacitanceReport { k_pred, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_cardinality() {
        assert_eq!(GainGrid::uniform(0.0, 10.0, 0.5).cardinality(), 194_481);
        assert_eq!(GainGrid::uniform(0.0, 10.0, 5.0).cardinality(), 81);
        let zero = enumerate_gains(&GainGrid::uniform(0.0, 0.0, 0.5)).unwrap();
        assert_eq!(zero, vec![DcGains::new(0.0, 0.0, 0.0, 0.0, 0.0)]);
        assert_eq!(
            enumerate_gains(&GainGrid::uniform(0.0, 10.0, 5.0))
                .unwrap()
                .len(),
            81
        );
    }

    #[test]
    fn enumeration_is_lexicographic() {
        let g = enumerate_gains(&GainGrid::uniform(0.0, 1.0, 1.0)).unwrap();
        assert_eq!(g[0], DcGains::new(0.0, 0.0, 0.0, 0.0, 0.0));
        assert_eq!(g[1], DcGains::new(0.0, 0.0, 0.0, 1.0, 0.0));
        assert_eq!(g[2], DcGains::new(0.0, 0.0, 1.0, 0.0, 0.0));
        assert_eq!(g[15], DcGains::new(1.0, 1.0, 1.0, 1.0, 0.0));
        assert!(g.iter().all(|c| c.k_pred == 0.0));
    }

    #[test]
    fn invalid_grids_rejected() {
        assert!(GainGrid::uniform(0.0, 10.0, 0.0).validate().is_err());
        assert!(GainGrid::uniform(5.0, 1.0, 0.5).validate().is_err());
    }

    #[test]
    fn refinement_stays_near_survivors() {
        let fine = GainGrid::uniform(0.0, 2.0, 0.5);
        let r = refine_around(&fine, &[DcGains::new(1.0, 1.0, 1.0, 1.0, 0.0)]).unwrap();
        assert_eq!(r.len(), 81);
        assert!(r.iter().all(|g| (g.kp_vdc - 1.0).abs() <= 0.5));
    }

    #[test]
    fn all_zero_gains_infeasible() {
        let params = SystemParams::default();
        let rec = screen_candidate(
            0,
            DcGains::new(0.0, 0.0, 0.0, 0.0, 0.0),
            &params,
            &Criteria::default(),
            None,
        );
        assert!(!rec.feasible);
        assert!(rec.reason.is_some());
    }

    #[test]
    fn impossible_criterion_empties_gamma() {
        let params = SystemParams::default();
        let crit = Criteria {
            lambda_crit: -1e6,
            zeta_crit: 0.35,
        };
        let cands = enumerate_gains(&GainGrid::uniform(2.5, 5.0, 2.5)).unwrap();
        let recs = screen_small_signal(&cands, &params, &crit, Some(2)).unwrap();
        assert!(recs.iter().all(|r| !r.feasible));
        let err = optimize_gains(&recs, &params, &Scenario::default(), Some(2)).unwrap_err();
        assert!(err.to_string().contains("no feasible"));
    }

    #[test]
    fn kpred_sweep_requires_baseline() {
        let params = SystemParams::default();
        let err = sweep_kpred(params.dc.gains, &[1.0], &params, &Scenario::default(), None);
        assert!(err.is_err());
    }
}
