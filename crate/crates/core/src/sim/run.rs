use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::config::{BatteryOrder, DcGains, LoadParams, SystemParams};
use crate::error::{Error, Result};

use super::equilibrium::{find_equilibrium, Equilibrium};
use super::integrate::{rk4, OdeSystem, Rodas4};
use super::model::{system_derivative, Evaluation};
use super::state::SystemState;

pub const SIM_RTOL: f64 = 1e-8;
pub const SIM_ATOL: f64 = 1e-10;

/// Load-step experiment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub p_l: f64,
    pub q_l: f64,
    pub delta_p_l: f64,
    /// Step time (s).
    pub t_step: f64,
    /// Horizon (s).
    pub t_end: f64,
    pub order: Option<BatteryOrder>,
    pub gains: Option<DcGains>,
    /// Record spacing (s).
    pub stride: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            p_l: 0.5,
            q_l: 0.0,
            delta_p_l: 0.5,
            t_step: 0.05,
            t_end: 0.5,
            order: None,
            gains: None,
            stride: 1e-4,
        }
    }
}

impl Scenario {
    /// Nominal load taken from `params`, other fields at their defaults.
    pub fn for_params(params: &SystemParams) -> Self {
        Self {
            p_l: params.load.p_l,
            q_l: params.load.q_l,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if !(self.t_step.is_finite() && self.t_end.is_finite()) || self.t_step < 0.0 {
            return bad(format!(
                "invalid times t_step = {}, t_end = {}",
                self.t_step, self.t_end
            ));
        }
        if self.t_step >= self.t_end {
            return bad(format!(
                "t_step = {} must be < t_end = {}",
                self.t_step, self.t_end
            ));
        }
        if !(self.stride.is_finite() && self.stride > 0.0) || self.stride > self.t_end {
            return bad(format!("stride = {} must be in (0, t_end]", self.stride));
        }
        if !self.delta_p_l.is_finite() || !self.p_l.is_finite() || !self.q_l.is_finite() {
            return bad("load values must be finite".into());
        }
        Ok(())
    }

    /// Parameters with the scenario's order and gain overrides applied.
    pub fn apply(&self, params: &SystemParams) -> SystemParams {
        let mut p = *params;
        if let Some(order) = self.order {
            p = p.with_battery_order(order);
        }
        if let Some(gains) = self.gains {
            p = p.with_gains(gains);
        }
        p.load.p_l = self.p_l;
        p.load.q_l = self.q_l;
        p
    }

    pub fn nominal_load(&self, params: &SystemParams) -> LoadParams {
        LoadParams {
            p_l: self.p_l,
            q_l: self.q_l,
            model: params.load.model,
        }
    }

    pub fn stepped_load(&self, params: &SystemParams) -> LoadParams {
        LoadParams {
            p_l: self.p_l + self.delta_p_l,
            ..self.nominal_load(params)
        }
    }

    pub fn sample_times(&self) -> Vec<f64> {
        let n = (self.t_end / self.stride).round() as usize;
        let mut times: Vec<f64> = (0..=n).map(|k| k as f64 * self.stride).collect();
        times.retain(|&t| t <= self.t_end);
        if *times.last().unwrap() < self.t_end {
            times.push(self.t_end);
        }
        times
    }
}

/// Derived signals at one sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputRecord {
    pub v_dc: f64,
    pub v_b: f64,
    pub i_b: f64,
    pub i_in: f64,
    pub i_out: f64,
    pub d_raw: f64,
    pub d_eff: f64,
    pub v_m_ref_mag: f64,
    pub v_m_mag: f64,
    pub omega_c: f64,
    pub p_c: f64,
    pub q_c: f64,
    pub saturated: bool,
}

impl OutputRecord {
    /// CSV column names, in order. `v_dc` and `i_b` are states and appear
    /// only in the state columns.
    pub const COLUMNS: [&'static str; 10] = [
        "v_b",
        "i_in",
        "i_out",
        "d_raw",
        "d_eff",
        "v_m_ref_mag",
        "v_m_mag",
        "omega_c",
        "p_c",
        "q_c",
    ];

    fn from_eval(state: &SystemState, ev: &Evaluation) -> Self {
        Self {
            v_dc: state.dc.v_dc,
            v_b: ev.dc.v_b,
            i_b: state.dc.i_b,
            i_in: ev.dc.i_in,
            i_out: ev.dc.i_out,
            d_raw: ev.dc.d_raw,
            d_eff: ev.dc.d_eff,
            v_m_ref_mag: ev.ac.v_m_ref.norm(),
            v_m_mag: ev.ac.v_m.norm(),
            omega_c: ev.ac.omega_c,
            p_c: ev.ac.p_c,
            q_c: ev.ac.q_c,
            saturated: ev.ac.saturated,
        }
    }

    fn columns(&self) -> [f64; 10] {
        [
            self.v_b,
            self.i_in,
            self.i_out,
            self.d_raw,
            self.d_eff,
            self.v_m_ref_mag,
            self.v_m_mag,
            self.omega_c,
            self.p_c,
            self.q_c,
        ]
    }
}

/// Counters gathered at every accepted step (not only at recorded samples).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Accepted steps at which the modulation limiter was active.
    pub saturated_steps: usize,
    pub d_raw_min: f64,
    pub d_raw_max: f64,
    pub d_eff_min: f64,
    pub d_eff_max: f64,
    /// `max |v_dc i_in - v_b i_b|`.
    pub power_identity_error: f64,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self {
            accepted_steps: 0,
            rejected_steps: 0,
            saturated_steps: 0,
            d_raw_min: f64::INFINITY,
            d_raw_max: f64::NEG_INFINITY,
            d_eff_min: f64::INFINITY,
            d_eff_max: f64::NEG_INFINITY,
            power_identity_error: 0.0,
        }
    }
}

impl Diagnostics {
    fn observe(&mut self, rec: &OutputRecord) {
        self.accepted_steps += 1;
        if rec.saturated {
            self.saturated_steps += 1;
        }
        self.d_raw_min = self.d_raw_min.min(rec.d_raw);
        self.d_raw_max = self.d_raw_max.max(rec.d_raw);
        self.d_eff_min = self.d_eff_min.min(rec.d_eff);
        self.d_eff_max = self.d_eff_max.max(rec.d_eff);
        let gap = (rec.v_dc * rec.i_in - rec.v_b * rec.i_b).abs();
        self.power_identity_error = self.power_identity_error.max(gap);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub order: BatteryOrder,
    pub v_dc_star: f64,
    pub t_step: f64,
    pub times: Vec<f64>,
    pub states: Vec<SystemState>,
    pub outputs: Vec<OutputRecord>,
    pub diagnostics: Diagnostics,
}

impl Trajectory {
    fn new(order: BatteryOrder, v_dc_star: f64, t_step: f64) -> Self {
        Self {
            order,
            v_dc_star,
            t_step,
            times: Vec::new(),
            states: Vec::new(),
            outputs: Vec::new(),
            diagnostics: Diagnostics::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn v_dc(&self) -> Vec<f64> {
        self.outputs.iter().map(|o| o.v_dc).collect()
    }

    pub fn max_deviation(&self) -> f64 {
        self.outputs
            .iter()
            .map(|o| (o.v_dc - self.v_dc_star).abs())
            .fold(0.0, f64::max)
    }

    pub fn summary(&self) -> Summary {
        let fold = |f: fn(&OutputRecord) -> f64| {
            self.outputs
                .iter()
                .map(f)
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
        };
        let (d_min, d_max) = fold(|o| o.d_eff);
        let (m_min, m_max) = fold(|o| o.v_m_mag);
        Summary {
            samples: self.len(),
            max_deviation: self.max_deviation(),
            l2_objective: l2_objective(self, self.v_dc_star),
            d_min,
            d_max,
            mod_min: m_min,
            mod_max: m_max,
            saturated_steps: self.diagnostics.saturated_steps,
            accepted_steps: self.diagnostics.accepted_steps,
        }
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut cols = vec!["time".to_string()];
        cols.extend(
            SystemState::labels(self.order)
                .iter()
                .map(|s| s.to_string()),
        );
        cols.extend(OutputRecord::COLUMNS.iter().map(|s| s.to_string()));
        cols
    }

    /// Time, states in serialization order, then [`OutputRecord::COLUMNS`].
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{}", self.csv_header().join(","))?;
        for ((t, s), o) in self.times.iter().zip(&self.states).zip(&self.outputs) {
            write!(w, "{t:.9e}")?;
            for v in s.to_vec() {
                write!(w, ",{v:.12e}")?;
            }
            for v in o.columns() {
                write!(w, ",{v:.12e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Trapezoidal `∫ (v_dc_star - v_dc)^2 dt` over samples with `t >= t_step`.
pub fn l2_objective(traj: &Trajectory, v_dc_star: f64) -> f64 {
    let pts: Vec<(f64, f64)> = traj
        .times
        .iter()
        .zip(&traj.outputs)
        .filter(|(t, _)| **t >= traj.t_step)
        .map(|(t, o)| (*t, (v_dc_star - o.v_dc).powi(2)))
        .collect();
    pts.windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub samples: usize,
    pub max_deviation: f64,
    pub l2_objective: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub mod_min: f64,
    pub mod_max: f64,
    pub saturated_steps: usize,
    pub accepted_steps: usize,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples = {}", self.samples)?;
        writeln!(f, "max_deviation = {:.9e}", self.max_deviation)?;
        writeln!(f, "l2_objective = {:.9e}", self.l2_objective)?;
        writeln!(f, "d_min = {:.9e}", self.d_min)?;
        writeln!(f, "d_max = {:.9e}", self.d_max)?;
        writeln!(f, "modulation_min = {:.9e}", self.mod_min)?;
        writeln!(f, "modulation_max = {:.9e}", self.mod_max)?;
        writeln!(f, "saturated_steps = {}", self.saturated_steps)?;
        writeln!(f, "accepted_steps = {}", self.accepted_steps)
    }
}

struct Plant<'a> {
    params: &'a SystemParams,
    load: LoadParams,
}

impl OdeSystem for Plant<'_> {
    fn dim(&self) -> usize {
        SystemState::dim(self.params.battery.order)
    }
    fn rhs(&self, x: &[f64], dx: &mut [f64]) -> Result<()> {
        system_derivative(x, self.params, &self.load, dx).map(|_| ())
    }
}

fn record(x: &[f64], plant: &Plant, scratch: &mut [f64]) -> Result<(SystemState, OutputRecord)> {
    let ev = system_derivative(x, plant.params, &plant.load, scratch)?;
    let s = SystemState::from_slice(plant.params.battery.order, x);
    let rec = OutputRecord::from_eval(&s, &ev);
    Ok((s, rec))
}

/// Solves the pre-step equilibrium and integrates the load step.
pub fn simulate(params: &SystemParams, scenario: &Scenario) -> Result<Trajectory> {
    scenario.validate()?;
    let p = scenario.apply(params);
    p.validate()?;
    let eq = find_equilibrium(&p, &scenario.nominal_load(&p), None)?;
    simulate_from(&eq, scenario)
}

/// Integrates the load step from an already solved equilibrium. Order and
/// gain overrides in `scenario` are ignored; `eq.params` is used as is.
pub fn simulate_from(eq: &Equilibrium, scenario: &Scenario) -> Result<Trajectory> {
    simulate_with(
        eq,
        scenario,
        &Rodas4 {
            rtol: SIM_RTOL,
            atol: SIM_ATOL,
            h_init: 1e-7,
            h_max: scenario.stride,
            ..Rodas4::default()
        },
    )
}

pub fn simulate_with(eq: &Equilibrium, scenario: &Scenario, solver: &Rodas4) -> Result<Trajectory> {
    scenario.validate()?;
    if eq.load.p_l != scenario.p_l || eq.load.q_l != scenario.q_l {
        return Err(Error::Scenario(format!(
            "equilibrium solved at load ({}, {}), scenario starts from ({}, {})",
            eq.load.p_l, eq.load.q_l, scenario.p_l, scenario.q_l
        )));
    }
    let params = &eq.params;
    let samples = scenario.sample_times();
    let mut traj = Trajectory::new(params.battery.order, params.dc.v_dc_star, scenario.t_step);
    let mut scratch = vec![0.0; eq.x.len()];

    let segments = [
        (0.0, scenario.t_step, scenario.nominal_load(params)),
        (
            scenario.t_step,
            scenario.t_end,
            scenario.stepped_load(params),
        ),
    ];
    let mut x = eq.x.clone();
    {
        let plant = Plant {
            params,
            load: segments[0].2,
        };
        let (s, rec) = record(&x, &plant, &mut scratch)?;
        traj.times.push(0.0);
        traj.states.push(s);
        traj.outputs.push(rec);
    }
    let mut next = 1;
    for (t0, t1, load) in segments {
        if t1 <= t0 {
            continue;
        }
        let plant = Plant { params, load };
        let bps: Vec<f64> = samples
            .iter()
            .copied()
            .filter(|&t| t > t0 && t < t1)
            .collect();
        let mut sample_error = None;
        let (x_end, stats) = solver.integrate(&plant, t0, &x, t1, &bps, |t, xs| {
            let (s, rec) = record(xs, &plant, &mut scratch)?;
            traj.diagnostics.observe(&rec);
            while next < samples.len() && samples[next] < t {
                next += 1;
            }
            if next < samples.len() && samples[next] == t {
                traj.times.push(t);
                traj.states.push(s);
                traj.outputs.push(rec);
                next += 1;
            }
            if xs.iter().any(|v| !v.is_finite()) {
                sample_error = Some(t);
            }
            Ok(())
        })?;
        if let Some(t) = sample_error {
            return Err(Error::Integration {
                time: t,
                message: "non-finite state".into(),
            });
        }
        traj.diagnostics.rejected_steps += stats.rejected;
        x = x_end;
    }
    Ok(traj)
}

/// Fixed-step RK4 run of the same experiment. `t_step` and the record
/// stride must be integer multiples of `dt`. The order-4 battery needs
/// `dt` well below `l_b2 / (omega_b r_b2)`.
pub fn reference_integrate(
    params: &SystemParams,
    scenario: &Scenario,
    dt: f64,
) -> Result<Trajectory> {
    scenario.validate()?;
    let p = scenario.apply(params);
    p.validate()?;
    let eq = find_equilibrium(&p, &scenario.nominal_load(&p), None)?;
    reference_from(&eq, scenario, dt)
}

pub fn reference_from(eq: &Equilibrium, scenario: &Scenario, dt: f64) -> Result<Trajectory> {
    scenario.validate()?;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::Scenario(format!("dt = {dt} must be > 0")));
    }
    let multiple = |v: f64, name: &str| -> Result<usize> {
        let k = (v / dt).round();
        if ((k * dt) - v).abs() > 1e-9 * v.max(dt) {
            return Err(Error::Scenario(format!(
                "{name} = {v} is not a multiple of dt = {dt}"
            )));
        }
        Ok(k as usize)
    };
    let n_step = multiple(scenario.t_step, "t_step")?;
    let n_stride = multiple(scenario.stride, "stride")?.max(1);
    let n_end = multiple(scenario.t_end, "t_end")?;
    let params = &eq.params;
    let mut traj = Trajectory::new(params.battery.order, params.dc.v_dc_star, scenario.t_step);
    let mut scratch = vec![0.0; eq.x.len()];
    let x0_norm = eq.x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let limit = 1e3 * (1.0 + x0_norm);

    let mut x = eq.x.clone();
    {
        let plant = Plant {
            params,
            load: scenario.nominal_load(params),
        };
        let (s, rec) = record(&x, &plant, &mut scratch)?;
        traj.times.push(0.0);
        traj.states.push(s);
        traj.outputs.push(rec);
    }
    let segments = [
        (0, n_step, scenario.nominal_load(params)),
        (n_step, n_end, scenario.stepped_load(params)),
    ];
    for (k0, k1, load) in segments {
        if k1 <= k0 {
            continue;
        }
        let plant = Plant { params, load };
        x = rk4(&plant, k0 as f64 * dt, &x, dt, k1 - k0, |i, _, xs| {
            let k = k0 + i;
            if xs.iter().any(|v| v.abs() > limit) {
                return Err(Error::Integration {
                    time: k as f64 * dt,
                    message: format!("state norm exploded; dt = {dt} s is too large"),
                });
            }
            let (s, rec) = record(xs, &plant, &mut scratch)?;
            traj.diagnostics.observe(&rec);
            if k % n_stride == 0 {
                traj.times.push(k as f64 * dt);
                traj.states.push(s);
                traj.outputs.push(rec);
            }
            Ok(())
        })
        .map_err(|e| match e {
            Error::Integration { time, message } if !message.contains("dt") => Error::Integration {
                time,
                message: format!("{message} (dt = {dt} s)"),
            },
            other => other,
        })?;
    }
    Ok(traj)
}
