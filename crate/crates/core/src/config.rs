//! Model parameters, per-unit conversion and the flat `key = value` config format.
//!
//! Config files use dotted section names, one assignment per line:
//!
//! ```text
//! # DC link
//! dc.c_dc = 2e-3        # F
//! battery.order = 4
//! ```
//!
//! AC-side quantities are given directly in per unit. DC-side and battery
//! quantities are given in SI units and converted with the DC base
//! impedance. Every key and its unit is listed in [`KEYS`]; omitted keys take
//! the value from [`PhysicalConfig::default`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Environment variable naming a directory that holds `default.cfg`.
pub const CONFIG_DIR_ENV: &str = "GFM_BESS_CONFIG_DIR";

/// File name looked up inside [`CONFIG_DIR_ENV`].
pub const DEFAULT_CONFIG_NAME: &str = "default.cfg";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Ac,
    Dc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quantity {
    Resistance,
    Inductance,
    Capacitance,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseValues {
    /// Apparent power base (VA), shared by both sides.
    pub s_base: f64,
    /// AC peak line-to-neutral voltage (V).
    pub v_ac_base: f64,
    /// Base angular frequency (rad/s).
    pub omega_b: f64,
    /// DC voltage base, twice the AC peak line-to-neutral base (V).
    pub v_dc_base: f64,
    pub z_ac_base: f64,
    pub z_dc_base: f64,
}

impl BaseValues {
    pub fn new(s_base: f64, v_ac_base: f64, f_base: f64) -> Result<Self> {
        for (key, v) in [
            ("bases.s_base", s_base),
            ("bases.v_ac_base", v_ac_base),
            ("bases.f_base", f_base),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(key, 0, format!("{v} must be finite and > 0")));
            }
        }
        let v_dc_base = 2.0 * v_ac_base;
        Ok(Self {
            s_base,
            v_ac_base,
            omega_b: 2.0 * std::f64::consts::PI * f_base,
            v_dc_base,
            // three-phase base with peak phase quantities: S = 3/2 V I
            z_ac_base: 1.5 * v_ac_base * v_ac_base / s_base,
            z_dc_base: v_dc_base * v_dc_base / s_base,
        })
    }

    pub fn z_base(&self, side: Side) -> f64 {
        match side {
            Side::Ac => self.z_ac_base,
            Side::Dc => self.z_dc_base,
        }
    }
}

/// Converts an SI resistance, inductance or capacitance to per unit.
///
/// Inductances and capacitances are expressed as reactances at the base
/// frequency, which is what the `omega_b / l` and `omega_b / c` factors in
/// the state equations expect.
pub fn to_per_unit(value: f64, quantity: Quantity, bases: &BaseValues, side: Side) -> f64 {
    let z = bases.z_base(side);
    match quantity {
        Quantity::Resistance => value / z,
        Quantity::Inductance => bases.omega_b * value / z,
        Quantity::Capacitance => bases.omega_b * value * z,
    }
}

pub fn from_per_unit(value: f64, quantity: Quantity, bases: &BaseValues, side: Side) -> f64 {
    let z = bases.z_base(side);
    match quantity {
        Quantity::Resistance => value * z,
        Quantity::Inductance => value * z / bases.omega_b,
        Quantity::Capacitance => value / (bases.omega_b * z),
    }
}

/// AC filter, grid impedance and grid-forming control parameters, all per unit.
///
/// `omega_z` is in rad/s since simulation time runs in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcParams {
    pub r_f: f64,
    pub l_f: f64,
    pub c_f: f64,
    pub r_g: f64,
    pub l_g: f64,
    pub r_v: f64,
    pub l_v: f64,
    pub rp: f64,
    pub rq: f64,
    pub omega_z: f64,
    pub kp_v: f64,
    pub ki_v: f64,
    pub kf_i: f64,
    pub kp_i: f64,
    pub ki_i: f64,
    pub kf_v: f64,
    pub p_star: f64,
    pub q_star: f64,
    pub v_star: f64,
    pub omega_star: f64,
    /// Modulation limit as a multiple of `v_dc`.
    pub mod_limit: f64,
}

/// The five DC/DC controller gains.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DcGains {
    pub kp_vdc: f64,
    pub ki_vdc: f64,
    pub kp_ib: f64,
    pub ki_ib: f64,
    pub k_pred: f64,
}

impl DcGains {
    pub fn new(kp_vdc: f64, ki_vdc: f64, kp_ib: f64, ki_ib: f64, k_pred: f64) -> Self {
        Self {
            kp_vdc,
            ki_vdc,
            kp_ib,
            ki_ib,
            k_pred,
        }
    }

    pub fn with_k_pred(self, k_pred: f64) -> Self {
        Self { k_pred, ..self }
    }
}

impl fmt::Display for DcGains {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "kp_vdc={} ki_vdc={} kp_ib={} ki_ib={} k_pred={}",
            self.kp_vdc, self.ki_vdc, self.kp_ib, self.ki_ib, self.k_pred
        )
    }
}

/// How the converter input current `i_in` is obtained from the inductor current.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InputCurrentModel {
    /// `v_dc * i_in = v_b * i_b`.
    PowerBalance,
    /// `i_in = (1 - d) * i_b`, the textbook averaged boost switch.
    AveragedBoost,
}

/// Signal delayed by the dead-time block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DeadTimeLocation {
    /// Delay the duty command between controller and converter.
    Duty,
    /// Delay the DC-link voltage measurement seen by the controller.
    Measurement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcParams {
    /// DC-link capacitance (pu).
    pub c_dc: f64,
    /// DC/DC inductance (pu).
    pub l_dc: f64,
    /// Switching frequency (Hz).
    pub f_sw: f64,
    /// Switching period (s), always `1 / f_sw`.
    pub t_s: f64,
    pub d_max: f64,
    pub v_dc_star: f64,
    pub gains: DcGains,
    /// Dead-time delay (s).
    pub t_dead: f64,
    pub input_current: InputCurrentModel,
    pub dead_time_on: DeadTimeLocation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BatteryOrder {
    Zero,
    Two,
    Four,
}

impl BatteryOrder {
    pub const ALL: [BatteryOrder; 3] = [BatteryOrder::Zero, BatteryOrder::Two, BatteryOrder::Four];

    pub fn as_u8(self) -> u8 {
        match self {
            BatteryOrder::Zero => 0,
            BatteryOrder::Two => 2,
            BatteryOrder::Four => 4,
        }
    }

    pub fn from_u8(order: u8) -> Option<Self> {
        match order {
            0 => Some(BatteryOrder::Zero),
            2 => Some(BatteryOrder::Two),
            4 => Some(BatteryOrder::Four),
            _ => None,
        }
    }

    pub fn has_rl_branches(self) -> bool {
        self == BatteryOrder::Four
    }

    pub fn has_rc_branches(self) -> bool {
        self != BatteryOrder::Zero
    }
}

impl fmt::Display for BatteryOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_u8())
    }
}

impl FromStr for BatteryOrder {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.trim()
            .parse::<u8>()
            .ok()
            .and_then(BatteryOrder::from_u8)
            .ok_or_else(|| format!("battery order must be 0, 2 or 4, got `{s}`"))
    }
}

/// Battery equivalent circuit, per unit on the DC base.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryParams {
    pub order: BatteryOrder,
    pub v_oc: f64,
    pub r_b0: f64,
    pub r_b1: f64,
    pub r_b2: f64,
    pub r_b3: f64,
    pub r_b4: f64,
    pub l_b1: f64,
    pub l_b2: f64,
    pub c_b1: f64,
    pub c_b2: f64,
    /// For order 0, use `r_b0 + r_b3 + r_b4` so the steady state matches the
    /// full circuit.
    pub lumped_r0: bool,
}

impl BatteryParams {
    /// Series resistance used by the order-0 model.
    pub fn order0_resistance(&self) -> f64 {
        if self.lumped_r0 {
            self.r_b0 + self.r_b3 + self.r_b4
        } else {
            self.r_b0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoadModel {
    /// Static impedance sized to absorb `(p_l, q_l)` at 1 pu voltage.
    ConstantImpedance,
    /// `v_l = (p_l + j q_l) / conj(i_g)`.
    ConstantPower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadParams {
    pub p_l: f64,
    pub q_l: f64,
    pub model: LoadModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub bases: BaseValues,
    pub ac: AcParams,
    pub dc: DcParams,
    pub battery: BatteryParams,
    pub load: LoadParams,
}

impl Default for SystemParams {
    fn default() -> Self {
        PhysicalConfig::default()
            .resolve()
            .expect("built-in defaults are valid")
    }
}

impl SystemParams {
    pub fn with_gains(mut self, gains: DcGains) -> Self {
        self.dc.gains = gains;
        self
    }

    pub fn with_battery_order(mut self, order: BatteryOrder) -> Self {
        self.battery.order = order;
        self
    }

    /// Replaces the DC-link capacitance, given in farads.
    pub fn with_dc_capacitance(mut self, farads: f64) -> Self {
        self.dc.c_dc = to_per_unit(farads, Quantity::Capacitance, &self.bases, Side::Dc);
        self
    }

    pub fn dc_capacitance_farads(&self) -> f64 {
        from_per_unit(self.dc.c_dc, Quantity::Capacitance, &self.bases, Side::Dc)
    }

    /// Checks every per-unit invariant.
    pub fn validate(&self) -> Result<()> {
        let ac = &self.ac;
        for (key, v) in [
            ("ac.r_f", ac.r_f),
            ("ac.r_g", ac.r_g),
            ("ac.r_v", ac.r_v),
            ("ac.l_v", ac.l_v),
            ("ac.rp", ac.rp),
            ("ac.rq", ac.rq),
            ("ac.kp_v", ac.kp_v),
            ("ac.ki_v", ac.ki_v),
            ("ac.kf_i", ac.kf_i),
            ("ac.kp_i", ac.kp_i),
            ("ac.ki_i", ac.ki_i),
            ("ac.kf_v", ac.kf_v),
        ] {
            non_negative(key, v)?;
        }
        for (key, v) in [
            ("ac.l_f", ac.l_f),
            ("ac.c_f", ac.c_f),
            ("ac.l_g", ac.l_g),
            ("ac.omega_z", ac.omega_z),
            ("ac.mod_limit", ac.mod_limit),
            ("ac.v_star", ac.v_star),
            ("ac.omega_star", ac.omega_star),
        ] {
            positive(key, v)?;
        }
        finite("ac.p_star", ac.p_star)?;
        finite("ac.q_star", ac.q_star)?;

        let dc = &self.dc;
        positive("dc.c_dc", dc.c_dc)?;
        positive("dc.l_dc", dc.l_dc)?;
        positive("dc.f_sw", dc.f_sw)?;
        positive("dc.t_dead", dc.t_dead)?;
        positive("dc.v_dc_star", dc.v_dc_star)?;
        if !(dc.d_max > 0.0 && dc.d_max < 1.0) {
            return Err(invalid(
                "dc.d_max",
                0,
                format!("{} must lie in (0, 1)", dc.d_max),
            ));
        }
        if dc.t_s != 1.0 / dc.f_sw {
            return Err(invalid("dc.t_s", 0, "must equal 1 / f_sw".into()));
        }
        if dc.dead_time_on == DeadTimeLocation::Measurement
            && dc.input_current == InputCurrentModel::AveragedBoost
        {
            return Err(invalid(
                "dc.dead_time_on",
                0,
                "measurement delay requires dc.input_current = power-balance".into(),
            ));
        }
        let g = &dc.gains;
        for (key, v) in [
            ("dc.kp_vdc", g.kp_vdc),
            ("dc.ki_vdc", g.ki_vdc),
            ("dc.kp_ib", g.kp_ib),
            ("dc.ki_ib", g.ki_ib),
            ("dc.k_pred", g.k_pred),
        ] {
            finite(key, v)?;
        }

        let b = &self.battery;
        positive("battery.v_oc", b.v_oc)?;
        for (key, v) in [
            ("battery.r_b0", b.r_b0),
            ("battery.r_b1", b.r_b1),
            ("battery.r_b2", b.r_b2),
            ("battery.r_b3", b.r_b3),
            ("battery.r_b4", b.r_b4),
            ("battery.l_b1", b.l_b1),
            ("battery.l_b2", b.l_b2),
            ("battery.c_b1", b.c_b1),
            ("battery.c_b2", b.c_b2),
        ] {
            non_negative(key, v)?;
        }
        if b.order.has_rc_branches() {
            for (key, v) in [
                ("battery.r_b3", b.r_b3),
                ("battery.r_b4", b.r_b4),
                ("battery.c_b1", b.c_b1),
                ("battery.c_b2", b.c_b2),
            ] {
                positive(key, v)?;
            }
        }
        if b.order.has_rl_branches() {
            for (key, v) in [("battery.l_b1", b.l_b1), ("battery.l_b2", b.l_b2)] {
                positive(key, v)?;
            }
        }

        finite("load.p_l", self.load.p_l)?;
        finite("load.q_l", self.load.q_l)?;
        Ok(())
    }
}

fn invalid(key: &str, line: usize, message: String) -> Error {
    Error::InvalidParam {
        key: key.to_string(),
        line,
        message,
    }
}

fn finite(key: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(key, 0, format!("{v} is not finite")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(key, 0, format!("{v} must be finite and >= 0")))
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(key, 0, format!("{v} must be finite and > 0")))
    }
}

/// Parameters as they appear in a config file: AC side in per unit,
/// DC side and battery in SI units.
///
/// The defaults describe a 200 kVA, 480 V (line-to-line), 60 Hz unit. AC-side
/// values are generic grid-forming defaults and are meant to be overridden.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalConfig {
    pub s_base: f64,
    pub v_ac_base: f64,
    pub f_base: f64,
    pub ac: AcParams,
    /// F
    pub c_dc: f64,
    /// H
    pub l_dc: f64,
    /// Hz
    pub f_sw: f64,
    pub d_max: f64,
    pub v_dc_star: f64,
    pub gains: DcGains,
    /// s; `None` means one switching period.
    pub t_dead: Option<f64>,
    pub input_current: InputCurrentModel,
    pub dead_time_on: DeadTimeLocation,
    pub order: BatteryOrder,
    /// pu
    pub v_oc: f64,
    /// Ω
    pub r_b: [f64; 5],
    /// H
    pub l_b: [f64; 2],
    /// F
    pub c_b: [f64; 2],
    pub lumped_r0: bool,
    pub load: LoadParams,
}

/// Default DC/DC gains, selected with the small-signal screen and the
/// large-signal objective on the default system.
pub const DEFAULT_GAINS: DcGains = DcGains {
    kp_vdc: 4.0,
    ki_vdc: 10.0,
    kp_ib: 2.5,
    ki_ib: 9.5,
    k_pred: 0.0,
};

impl Default for PhysicalConfig {
    fn default() -> Self {
        Self {
            s_base: 200e3,
            v_ac_base: 480.0 * (2.0f64 / 3.0).sqrt(),
            f_base: 60.0,
            ac: AcParams {
                r_f: 0.003,
                l_f: 0.08,
                c_f: 0.074,
                r_g: 0.01,
                l_g: 0.2,
                r_v: 0.0,
                l_v: 0.2,
                rp: 0.05,
                rq: 0.01,
                omega_z: 2.0 * std::f64::consts::PI * 5.0,
                kp_v: 0.59,
                ki_v: 736.0,
                kf_i: 0.0,
                kp_i: 1.27,
                ki_i: 14.3,
                kf_v: 0.0,
                p_star: 0.5,
                q_star: 0.0,
                v_star: 1.0,
                omega_star: 1.0,
                mod_limit: 1.0,
            },
            c_dc: 2e-3,
            l_dc: 3e-3,
            f_sw: 3.2e3,
            d_max: 0.9,
            v_dc_star: 1.05,
            gains: DEFAULT_GAINS,
            t_dead: None,
            input_current: InputCurrentModel::PowerBalance,
            dead_time_on: DeadTimeLocation::Duty,
            order: BatteryOrder::Zero,
            v_oc: 0.5,
            r_b: [1.5e-3, 95e-3, 0.4e-3, 2.2e-3, 0.55e-3],
            l_b: [35e-9, 15e-9],
            c_b: [0.55, 22.7e3],
            lumped_r0: false,
            load: LoadParams {
                p_l: 0.5,
                q_l: 0.0,
                model: LoadModel::ConstantImpedance,
            },
        }
    }
}

impl PhysicalConfig {
    /// Converts to per unit and validates.
    pub fn resolve(&self) -> Result<SystemParams> {
        if !(self.c_dc.is_finite() && self.c_dc > 0.0) {
            return Err(invalid(
                "dc.c_dc",
                0,
                format!("{} F must be > 0", self.c_dc),
            ));
        }
        let bases = BaseValues::new(self.s_base, self.v_ac_base, self.f_base)?;
        let pu = |v: f64, q: Quantity| to_per_unit(v, q, &bases, Side::Dc);
        let f_sw = self.f_sw;
        let t_s = 1.0 / f_sw;
        let params = SystemParams {
            bases,
            ac: self.ac,
            dc: DcParams {
                c_dc: pu(self.c_dc, Quantity::Capacitance),
                l_dc: pu(self.l_dc, Quantity::Inductance),
                f_sw,
                t_s,
                d_max: self.d_max,
                v_dc_star: self.v_dc_star,
                gains: self.gains,
                t_dead: self.t_dead.unwrap_or(t_s),
                input_current: self.input_current,
                dead_time_on: self.dead_time_on,
            },
            battery: BatteryParams {
                order: self.order,
                v_oc: self.v_oc,
                r_b0: pu(self.r_b[0], Quantity::Resistance),
                r_b1: pu(self.r_b[1], Quantity::Resistance),
                r_b2: pu(self.r_b[2], Quantity::Resistance),
                r_b3: pu(self.r_b[3], Quantity::Resistance),
                r_b4: pu(self.r_b[4], Quantity::Resistance),
                l_b1: pu(self.l_b[0], Quantity::Inductance),
                l_b2: pu(self.l_b[1], Quantity::Inductance),
                c_b1: pu(self.c_b[0], Quantity::Capacitance),
                c_b2: pu(self.c_b[1], Quantity::Capacitance),
                lumped_r0: self.lumped_r0,
            },
            load: self.load,
        };
        params.validate()?;
        Ok(params)
    }

    fn set(&mut self, key: &str, raw: &str, line: usize) -> Result<()> {
        let num = || -> Result<f64> {
            raw.parse::<f64>()
                .map_err(|_| invalid(key, line, format!("`{raw}` is not a number")))
        };
        match key {
            "bases.s_base" => self.s_base = num()?,
            "bases.v_ac_base" => self.v_ac_base = num()?,
            "bases.f_base" => self.f_base = num()?,
            "ac.r_f" => self.ac.r_f = num()?,
            "ac.l_f" => self.ac.l_f = num()?,
            "ac.c_f" => self.ac.c_f = num()?,
            "ac.r_g" => self.ac.r_g = num()?,
            "ac.l_g" => self.ac.l_g = num()?,
            "ac.r_v" => self.ac.r_v = num()?,
            "ac.l_v" => self.ac.l_v = num()?,
            "ac.rp" => self.ac.rp = num()?,
            "ac.rq" => self.ac.rq = num()?,
            "ac.omega_z" => self.ac.omega_z = num()?,
            "ac.kp_v" => self.ac.kp_v = num()?,
            "ac.ki_v" => self.ac.ki_v = num()?,
            "ac.kf_i" => self.ac.kf_i = num()?,
            "ac.kp_i" => self.ac.kp_i = num()?,
            "ac.ki_i" => self.ac.ki_i = num()?,
            "ac.kf_v" => self.ac.kf_v = num()?,
            "ac.p_star" => self.ac.p_star = num()?,
            "ac.q_star" => self.ac.q_star = num()?,
            "ac.v_star" => self.ac.v_star = num()?,
            "ac.omega_star" => self.ac.omega_star = num()?,
            "ac.mod_limit" => self.ac.mod_limit = num()?,
            "dc.c_dc" => self.c_dc = num()?,
            "dc.l_dc" => self.l_dc = num()?,
            "dc.f_sw" => self.f_sw = num()?,
            "dc.d_max" => self.d_max = num()?,
            "dc.v_dc_star" => self.v_dc_star = num()?,
            "dc.kp_vdc" => self.gains.kp_vdc = num()?,
            "dc.ki_vdc" => self.gains.ki_vdc = num()?,
            "dc.kp_ib" => self.gains.kp_ib = num()?,
            "dc.ki_ib" => self.gains.ki_ib = num()?,
            "dc.k_pred" => self.gains.k_pred = num()?,
            "dc.t_dead" => self.t_dead = Some(num()?),
            "dc.input_current" => {
                self.input_current = match raw {
                    "power-balance" => InputCurrentModel::PowerBalance,
                    "averaged-boost" => InputCurrentModel::AveragedBoost,
                    _ => {
                        return Err(invalid(
                            key,
                            line,
                            format!("`{raw}`: expected power-balance or averaged-boost"),
                        ))
                    }
                }
            }
            "dc.dead_time_on" => {
                self.dead_time_on = match raw {
                    "duty" => DeadTimeLocation::Duty,
                    "measurement" => DeadTimeLocation::Measurement,
                    _ => {
                        return Err(invalid(
                            key,
                            line,
                            format!("`{raw}`: expected duty or measurement"),
                        ))
                    }
                }
            }
            "battery.order" => {
                self.order = raw.parse().map_err(|m| invalid(key, line, m))?;
            }
            "battery.v_oc" => self.v_oc = num()?,
            "battery.r_b0" => self.r_b[0] = num()?,
            "battery.r_b1" => self.r_b[1] = num()?,
            "battery.r_b2" => self.r_b[2] = num()?,
            "battery.r_b3" => self.r_b[3] = num()?,
            "battery.r_b4" => self.r_b[4] = num()?,
            "battery.l_b1" => self.l_b[0] = num()?,
            "battery.l_b2" => self.l_b[1] = num()?,
            "battery.c_b1" => self.c_b[0] = num()?,
            "battery.c_b2" => self.c_b[1] = num()?,
            "battery.lumped_r0" => {
                self.lumped_r0 = match raw {
                    "true" => true,
                    "false" => false,
                    _ => return Err(invalid(key, line, format!("`{raw}` is not true/false"))),
                }
            }
            "load.p_l" => self.load.p_l = num()?,
            "load.q_l" => self.load.q_l = num()?,
            "load.model" => {
                self.load.model = match raw {
                    "constant-impedance" => LoadModel::ConstantImpedance,
                    "constant-power" => LoadModel::ConstantPower,
                    _ => {
                        return Err(invalid(
                            key,
                            line,
                            format!("`{raw}`: expected constant-impedance or constant-power"),
                        ))
                    }
                }
            }
            _ => {
                return Err(Error::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }
}

/// Every accepted key with its unit.
pub const KEYS: &[(&str, &str)] = &[
    ("bases.s_base", "VA"),
    ("bases.v_ac_base", "V, AC peak line-to-neutral"),
    ("bases.f_base", "Hz"),
    ("ac.r_f", "pu"),
    ("ac.l_f", "pu"),
    ("ac.c_f", "pu"),
    ("ac.r_g", "pu"),
    ("ac.l_g", "pu"),
    ("ac.r_v", "pu"),
    ("ac.l_v", "pu"),
    ("ac.rp", "pu"),
    ("ac.rq", "pu"),
    ("ac.omega_z", "rad/s"),
    ("ac.kp_v", "pu"),
    ("ac.ki_v", "pu/s"),
    ("ac.kf_i", "pu"),
    ("ac.kp_i", "pu"),
    ("ac.ki_i", "pu/s"),
    ("ac.kf_v", "pu"),
    ("ac.p_star", "pu"),
    ("ac.q_star", "pu"),
    ("ac.v_star", "pu"),
    ("ac.omega_star", "pu"),
    ("ac.mod_limit", "multiple of v_dc"),
    ("dc.c_dc", "F"),
    ("dc.l_dc", "H"),
    ("dc.f_sw", "Hz"),
    ("dc.d_max", "-"),
    ("dc.v_dc_star", "pu"),
    ("dc.kp_vdc", "pu"),
    ("dc.ki_vdc", "pu/s"),
    ("dc.kp_ib", "pu"),
    ("dc.ki_ib", "pu/s"),
    ("dc.k_pred", "pu"),
    ("dc.t_dead", "s"),
    ("dc.input_current", "power-balance | averaged-boost"),
    ("dc.dead_time_on", "duty | measurement"),
    ("battery.order", "0 | 2 | 4"),
    ("battery.v_oc", "pu"),
    ("battery.r_b0", "Ω"),
    ("battery.r_b1", "Ω"),
    ("battery.r_b2", "Ω"),
    ("battery.r_b3", "Ω"),
    ("battery.r_b4", "Ω"),
    ("battery.l_b1", "H"),
    ("battery.l_b2", "H"),
    ("battery.c_b1", "F"),
    ("battery.c_b2", "F"),
    ("battery.lumped_r0", "true | false"),
    ("load.p_l", "pu"),
    ("load.q_l", "pu"),
    ("load.model", "constant-impedance | constant-power"),
];

/// Parses config text into `(key, raw value, line)` triples. Duplicate keys
/// are rejected.
pub fn parse_entries(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let mut entries = Vec::new();
    for (idx, raw_line) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::ConfigParse {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim();
        let value = value.trim().trim_matches('"');
        if key.is_empty() || value.is_empty() {
            return Err(Error::ConfigParse {
                line,
                message: "empty key or value".into(),
            });
        }
        if let Some(first) = seen.insert(key.to_string(), line) {
            return Err(Error::ConfigParse {
                line,
                message: format!("`{key}` already set on line {first}"),
            });
        }
        entries.push((key.to_string(), value.to_string(), line));
    }
    Ok(entries)
}

/// Parses config text, applying each entry over the defaults.
pub fn parse_config(text: &str) -> Result<SystemParams> {
    let entries = parse_entries(text)?;
    let mut cfg = PhysicalConfig::default();
    for (key, value, line) in &entries {
        cfg.set(key, value, *line)?;
    }
    cfg.resolve().map_err(|err| match err {
        Error::InvalidParam { key, message, .. } => {
            let line = entries
                .iter()
                .find(|(k, _, _)| *k == key)
                .map_or(0, |(_, _, l)| *l);
            Error::InvalidParam { key, line, message }
        }
        other => other,
    })
}

pub fn load_config(path: impl AsRef<Path>) -> Result<SystemParams> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::ConfigIo {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}
