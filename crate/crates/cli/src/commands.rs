use std::io::Write;
use std::path::Path;

use serde_json::json;

use gfm_bess::config::{load_config, CONFIG_DIR_ENV, DEFAULT_CONFIG_NAME};
use gfm_bess::sim::{find_equilibrium, simulate, Scenario};
use gfm_bess::smallsignal::{check_feasibility, eigen_analysis, linearize, Criteria};
use gfm_bess::tuner::{
    enumerate_gains, optimize_gains, refine_around, screen_records, screen_small_signal,
    sweep_capacitance, sweep_kpred, write_records_csv, GainGrid,
};
use gfm_bess::{BatteryOrder, DcGains, SystemParams};

use crate::args::{Cli, Command, CriteriaArgs, ScenarioArgs, SweepKind};
use crate::output::OutDir;
use crate::units::parse_capacitance;
use crate::Failure;

pub fn run(cli: Cli) -> Result<(), Failure> {
    let params = resolve_config(cli.config.as_deref())?;
    let workers = match cli.workers {
        Some(0) => return Err(Failure::Usage("--workers must be >= 1".into())),
        w => w,
    };
    let out = cli.out.as_path();
    match cli.command {
        Command::Simulate(sc) => cmd_simulate(&params, &sc, out),
        Command::CompareOrders { scenario, orders } => {
            cmd_compare(&params, &scenario, &orders, out)
        }
        Command::Linearize { scenario, criteria } => {
            cmd_linearize(&params, &scenario, criteria, out)
        }
        Command::Tune {
            scenario,
            criteria,
            step,
            k_min,
            k_max,
            coarse_to_fine,
        } => {
            let grid = GainGrid::uniform(k_min, k_max, step);
            cmd_tune(
                &params,
                &scenario,
                criteria,
                grid,
                coarse_to_fine,
                workers,
                out,
            )
        }
        Command::Sweep { kind } => match kind {
            SweepKind::Kpred { scenario, values } => {
                cmd_kpred(&params, &scenario, &values, workers, out)
            }
            SweepKind::Cdc {
                scenario,
                values,
                kpred,
            } => {
                let farads = values
                    .iter()
                    .map(|v| parse_capacitance(v))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(Failure::Usage)?;
                cmd_cdc(&params, &scenario, &farads, kpred, workers, out)
            }
        },
    }
}

/// `--config`, else `$GFM_BESS_CONFIG_DIR/default.cfg` if present, else
/// the built-in parameters.
fn resolve_config(explicit: Option<&Path>) -> Result<SystemParams, Failure> {
    if let Some(path) = explicit {
        return Ok(load_config(path)?);
    }
    if let Some(dir) = std::env::var_os(CONFIG_DIR_ENV) {
        let path = Path::new(&dir).join(DEFAULT_CONFIG_NAME);
        if path.is_file() {
            return Ok(load_config(path)?);
        }
    }
    Ok(SystemParams::default())
}

fn order_from(raw: u8) -> Result<BatteryOrder, Failure> {
    BatteryOrder::from_u8(raw)
        .ok_or_else(|| Failure::Usage(format!("battery order must be 0, 2 or 4, got {raw}")))
}

fn scenario_from(params: &SystemParams, a: &ScenarioArgs) -> Result<Scenario, Failure> {
    let order = a.order.map(order_from).transpose()?;
    let base = params.dc.gains;
    let gains = match (&a.gains, a.k_pred) {
        (None, None) => None,
        (g, k) => {
            let g = g
                .as_deref()
                .map(|v| DcGains::new(v[0], v[1], v[2], v[3], base.k_pred))
                .unwrap_or(base);
            Some(g.with_k_pred(k.unwrap_or(g.k_pred)))
        }
    };
    if let Some(g) = gains {
        let all = [g.kp_vdc, g.ki_vdc, g.kp_ib, g.ki_ib, g.k_pred];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Failure::Usage(format!(
                "gains must be finite and >= 0, got {g}"
            )));
        }
    }
    let sc = Scenario {
        p_l: a.p_load.unwrap_or(params.load.p_l),
        q_l: a.q_load.unwrap_or(params.load.q_l),
        delta_p_l: a.dp,
        t_step: a.t_step,
        t_end: a.t_end,
        order,
        gains,
        stride: a.stride,
    };
    sc.validate()?;
    Ok(sc)
}

fn criteria_from(c: CriteriaArgs) -> Result<Criteria, Failure> {
    if !c.lambda_crit.is_finite() || !(0.0..=1.0).contains(&c.zeta_crit) {
        return Err(Failure::Usage(format!(
            "criteria need finite lambda_crit and zeta_crit in [0, 1], got {} and {}",
            c.lambda_crit, c.zeta_crit
        )));
    }
    Ok(Criteria {
        lambda_crit: c.lambda_crit,
        zeta_crit: c.zeta_crit,
    })
}

fn cmd_simulate(params: &SystemParams, a: &ScenarioArgs, out: &Path) -> Result<(), Failure> {
    let sc = scenario_from(params, a)?;
    let traj = simulate(params, &sc)?;
    let summary = traj.summary();
    let mut dir = OutDir::create(out)?;
    dir.write("trajectory.csv", |w| traj.write_csv(w))?;
    dir.write_text("summary.txt", &summary.to_string())?;
    dir.finish("simulate", &sc.apply(params), json!({ "scenario": sc }))?;
    print!("{summary}");
    Ok(())
}

fn cmd_compare(
    params: &SystemParams,
    a: &ScenarioArgs,
    orders: &[u8],
    out: &Path,
) -> Result<(), Failure> {
    if orders.is_empty() {
        return Err(Failure::Usage(
            "--orders must name at least one order".into(),
        ));
    }
    let orders = orders
        .iter()
        .map(|&o| order_from(o))
        .collect::<Result<Vec<_>, _>>()?;
    let base = scenario_from(params, a)?;
    let mut runs = Vec::with_capacity(orders.len());
    for &order in &orders {
        let sc = Scenario {
            order: Some(order),
            ..base
        };
        runs.push(simulate(params, &sc)?);
    }
    let mut dir = OutDir::create(out)?;
    dir.write("compare_orders.csv", |w| {
        write!(w, "time")?;
        for o in &orders {
            write!(w, ",v_dc_order{}", o.as_u8())?;
        }
        writeln!(w)?;
        let series: Vec<Vec<f64>> = runs.iter().map(|t| t.v_dc()).collect();
        for (k, t) in runs[0].times.iter().enumerate() {
            write!(w, "{t:.9e}")?;
            for s in &series {
                write!(w, ",{:.12e}", s[k])?;
            }
            writeln!(w)?;
        }
        Ok(())
    })?;
    let mut text = String::new();
    for (o, t) in orders.iter().zip(&runs) {
        text += &format!(
            "order{}_max_deviation = {:.9e}\n",
            o.as_u8(),
            t.max_deviation()
        );
    }
    let reference = runs[0].v_dc();
    for (o, t) in orders.iter().zip(&runs).skip(1) {
        let gap = t
            .v_dc()
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        text += &format!(
            "max_gap_order{}_vs_order{} = {:.9e}\n",
            o.as_u8(),
            orders[0].as_u8(),
            gap
        );
    }
    dir.write_text("summary.txt", &text)?;
    let order_list: Vec<u8> = orders.iter().map(|o| o.as_u8()).collect();
    dir.finish(
        "compare-orders",
        &base.apply(params),
        json!({ "scenario": base, "orders": order_list }),
    )?;
    print!("{text}");
    Ok(())
}

fn cmd_linearize(
    params: &SystemParams,
    a: &ScenarioArgs,
    c: CriteriaArgs,
    out: &Path,
) -> Result<(), Failure> {
    let sc = scenario_from(params, a)?;
    let criteria = criteria_from(c)?;
    let p = sc.apply(params);
    let eq = find_equilibrium(&p, &sc.nominal_load(&p), None)?;
    let lin = linearize(&eq)?;
    let report = eigen_analysis(&lin.a, &lin.labels)?;
    let verdict = check_feasibility(&report, &criteria);
    let mut dir = OutDir::create(out)?;
    dir.write("modes.txt", |w| report.write_text(w))?;
    let text = format!(
        "verdict = {}\nmax_real = {:.9e}\nmin_damping = {:.9e}\nzero_modes = {}\nbinding = {}\nequilibrium_residual = {:.3e}\n",
        if verdict.feasible { "feasible" } else { "infeasible" },
        verdict.max_real,
        verdict.min_damping,
        report.zero_modes.len(),
        verdict
            .binding
            .map(|l| format!("{:.9e}{:+.9e}i", l.re, l.im))
            .unwrap_or_else(|| "none".into()),
        eq.residual,
    );
    dir.write_text("summary.txt", &text)?;
    dir.finish(
        "linearize",
        &p,
        json!({ "scenario": sc, "criteria": criteria }),
    )?;
    print!("{text}");
    Ok(())
}

fn cmd_tune(
    params: &SystemParams,
    a: &ScenarioArgs,
    c: CriteriaArgs,
    grid: GainGrid,
    coarse_to_fine: bool,
    workers: Option<usize>,
    out: &Path,
) -> Result<(), Failure> {
    if a.gains.is_some() {
        return Err(Failure::Usage(
            "tune searches the gains; --gains is not accepted".into(),
        ));
    }
    let sc = scenario_from(params, a)?;
    let criteria = criteria_from(c)?;
    grid.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let p = sc.apply(params);
    let sc = Scenario {
        order: None,
        gains: None,
        ..sc
    };
    let candidates = if coarse_to_fine {
        let coarse = GainGrid {
            step: 2.0 * grid.step,
            ..grid
        };
        let first = screen_small_signal(&enumerate_gains(&coarse)?, &p, &criteria, workers)?;
        let survivors: Vec<DcGains> = first
            .iter()
            .filter(|r| r.feasible)
            .map(|r| r.gains)
            .collect();
        refine_around(&grid, &survivors)?
    } else {
        enumerate_gains(&grid)?
    };
    let screened = screen_small_signal(&candidates, &p, &criteria, workers)?;
    let mut dir = OutDir::create(out)?;
    let settings = json!({
        "scenario": sc,
        "criteria": criteria,
        "grid": { "k_min": grid.bounds[0].0, "k_max": grid.bounds[0].1, "step": grid.step },
        "coarse_to_fine": coarse_to_fine,
    });
    let feasible = screened.iter().filter(|r| r.feasible).count();
    if feasible == 0 {
        let records = screen_records(&screened);
        dir.write("tuning.csv", |w| write_records_csv(&records, w))?;
        let text = format!(
            "candidates = {}\nfeasible = 0\nresult = no gain set meets lambda_crit = {} and zeta_crit = {}\n",
            records.len(),
            criteria.lambda_crit,
            criteria.zeta_crit
        );
        dir.write_text("tuning_summary.txt", &text)?;
        dir.finish("tune", &p, settings)?;
        return Err(Failure::Model(format!(
            "no feasible gains among {} candidates (see tuning.csv)",
            records.len()
        )));
    }
    let report = optimize_gains(&screened, &p, &sc, workers)?;
    dir.write("tuning.csv", |w| report.write_csv(w))?;
    dir.write_text("tuning_summary.txt", &report.to_string())?;
    dir.finish("tune", &p, settings)?;
    print!("{report}");
    Ok(())
}

fn cmd_kpred(
    params: &SystemParams,
    a: &ScenarioArgs,
    values: &[f64],
    workers: Option<usize>,
    out: &Path,
) -> Result<(), Failure> {
    if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Failure::Usage(
            "k_pred values must be finite and >= 0".into(),
        ));
    }
    if !values.contains(&0.0) {
        return Err(Failure::Usage("k_pred values must include 0".into()));
    }
    let sc = scenario_from(params, a)?;
    let p = sc.apply(params);
    let gains = p.dc.gains;
    let sc = Scenario {
        order: None,
        gains: None,
        ..sc
    };
    let report = sweep_kpred(gains, values, &p, &sc, workers)?;
    let best = report.best();
    let text = format!(
        "best_k_pred = {}\nbest_max_deviation = {:.9e}\nbest_reduction_pct = {:.6}\n",
        best.k_pred, best.max_deviation, best.reduction_pct
    );
    let mut dir = OutDir::create(out)?;
    dir.write("kpred.csv", |w| report.write_csv(w))?;
    dir.write_text("summary.txt", &text)?;
    dir.finish(
        "sweep kpred",
        &p,
        json!({ "scenario": sc, "values": values }),
    )?;
    print!("{text}");
    Ok(())
}

fn cmd_cdc(
    params: &SystemParams,
    a: &ScenarioArgs,
    farads: &[f64],
    k_pred: f64,
    workers: Option<usize>,
    out: &Path,
) -> Result<(), Failure> {
    if !k_pred.is_finite() || k_pred < 0.0 {
        return Err(Failure::Usage(format!(
            "--kpred must be finite and >= 0, got {k_pred}"
        )));
    }
    let sc = scenario_from(params, a)?;
    let p = sc.apply(params);
    let gains = p.dc.gains;
    let sc = Scenario {
        order: None,
        gains: None,
        ..sc
    };
    let report = sweep_capacitance(gains, farads, k_pred, &p, &sc, workers)?;
    let mut dir = OutDir::create(out)?;
    dir.write("cdc.csv", |w| report.write_csv(w))?;
    let mut text = String::new();
    for r in &report.rows {
        text += &format!(
            "c_dc = {:.6e} F: max_deviation k_pred=0 {:.9e}, k_pred={} {:.9e}\n",
            r.c_dc_farads, r.max_deviation_base, k_pred, r.max_deviation_pred
        );
    }
    dir.write_text("summary.txt", &text)?;
    dir.finish(
        "sweep cdc",
        &p,
        json!({ "scenario": sc, "c_dc_farads": farads, "k_pred": k_pred }),
    )?;
    print!("{text}");
    Ok(())
}
