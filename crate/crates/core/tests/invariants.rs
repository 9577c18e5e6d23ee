use nalgebra::DMatrix;
use proptest::prelude::*;

use gfm_bess::config::{from_per_unit, parse_config, to_per_unit, BaseValues, Quantity, Side};
use gfm_bess::dc::{battery_voltage, dcdc_control, pade_average, pade_steady_state, DcState};
use gfm_bess::sim::{find_equilibrium, simulate, system_derivative, Scenario, SystemState};
use gfm_bess::smallsignal::{damping_ratio, eigenvalues};
use gfm_bess::tuner::{enumerate_gains, GainGrid};
use gfm_bess::{BatteryOrder, DcGains, SystemParams};

fn short(delta: f64) -> Scenario {
    Scenario {
        delta_p_l: delta,
        t_step: 0.01,
        t_end: 0.06,
        stride: 1e-3,
        ..Scenario::default()
    }
}

proptest! {
    #[test]
    fn per_unit_round_trip(
        v in 1e-9f64..1e3,
        q in prop_oneof![Just(Quantity::Resistance), Just(Quantity::Inductance), Just(Quantity::Capacitance)],
        dc in any::<bool>(),
        s in 1e3f64..1e7,
        vb in 100.0f64..2e4,
    ) {
        let b = BaseValues::new(s, vb, 60.0).unwrap();
        let side = if dc { Side::Dc } else { Side::Ac };
        let back = from_per_unit(to_per_unit(v, q, &b, side), q, &b, side);
        prop_assert!((back - v).abs() <= 1e-12 * v);
    }

    #[test]
    fn duty_command_stays_in_range(
        err_v in -10.0f64..10.0,
        i_in in -5.0f64..5.0,
        i_out in -5.0f64..5.0,
        eta in -10.0f64..10.0,
        zeta in -10.0f64..10.0,
        k in proptest::array::uniform5(0.0f64..10.0),
    ) {
        let g = DcGains::new(k[0], k[1], k[2], k[3], k[4]);
        let out = dcdc_control(1.0, 1.0 - err_v, i_in, i_out, eta, zeta, 0.1, &g, 0.9);
        prop_assert!((0.0..=0.9).contains(&out.d_raw));
    }

    #[test]
    fn pade_has_unit_dc_gain(u in -2.0f64..2.0, t_dead in 1e-6f64..1e-2) {
        let (y, d) = pade_average(&pade_steady_state(u), u, t_dead).unwrap();
        prop_assert!((y - u).abs() <= 1e-14 * u.abs().max(1.0));
        prop_assert!(d.iter().all(|v| v.abs() <= 1e-9 * u.abs().max(1.0) / t_dead));
    }

    #[test]
    fn battery_orders_agree_at_equilibrium(i_b in -2.0f64..2.0) {
        let mut b = SystemParams::default().battery;
        let s4 = DcState {
            i_l1: i_b,
            i_l2: i_b,
            v_cb1: i_b * b.r_b3,
            v_cb2: i_b * b.r_b4,
            i_b,
            ..DcState::default()
        };
        b.order = BatteryOrder::Four;
        let v4 = battery_voltage(&s4, i_b, &b);
        b.order = BatteryOrder::Zero;
        b.lumped_r0 = true;
        let v0 = battery_voltage(&DcState::default(), i_b, &b);
        prop_assert!((v4 - v0).abs() <= 1e-14);
    }

    #[test]
    fn damping_ratio_is_bounded(re in -1e4f64..1e4, im in -1e4f64..1e4) {
        let z = damping_ratio(num_complex::Complex64::new(re, im));
        prop_assert!((-1.0..=1.0).contains(&z));
        if re < 0.0 {
            prop_assert!(z > 0.0);
        }
    }

    #[test]
    fn spectrum_is_conjugate_closed_and_permutation_invariant(
        entries in proptest::collection::vec(-5.0f64..5.0, 36),
        shift in 0usize..6,
    ) {
        let a = DMatrix::from_row_slice(6, 6, &entries);
        let eigs = eigenvalues(&a).unwrap();
        for l in &eigs {
            prop_assert!(eigs.iter().any(|m| (m.conj() - l).norm() <= 1e-9 * (1.0 + l.norm())));
        }
        let perm = DMatrix::from_fn(6, 6, |i, j| if j == (i + shift) % 6 { 1.0 } else { 0.0 });
        let b = &perm * &a * perm.transpose();
        let mut p: Vec<_> = eigs.iter().map(|l| (l.re, l.im)).collect();
        let mut q: Vec<_> = eigenvalues(&b).unwrap().iter().map(|l| (l.re, l.im)).collect();
        p.sort_by(|x, y| x.partial_cmp(y).unwrap());
        q.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (x, y) in p.iter().zip(&q) {
            prop_assert!((x.0 - y.0).abs() <= 1e-8 && (x.1 - y.1).abs() <= 1e-8, "{x:?} {y:?}");
        }
    }

    #[test]
    fn grid_cardinality_matches_enumeration(lo in 0.0f64..2.0, span in 0.0f64..3.0, step in 0.75f64..2.0) {
        let grid = GainGrid::uniform(lo, lo + span, step);
        let per_axis = (span / step).floor() as usize + 1;
        prop_assert_eq!(grid.cardinality(), per_axis.pow(4));
        prop_assert_eq!(enumerate_gains(&grid).unwrap().len(), grid.cardinality());
    }

    #[test]
    fn unknown_keys_name_their_line(pad in 0usize..5) {
        let text = format!("{}bogus.key = 1\n", "# comment\n".repeat(pad));
        let e = parse_config(&text).unwrap_err().to_string();
        let line = format!("line {}", pad + 1);
        prop_assert!(e.contains(&line) && e.contains("bogus.key"), "{}", e);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn power_identity_holds_along_trajectories(p_l in 0.2f64..0.8, dp in -0.15f64..0.15) {
        let sc = Scenario { p_l, ..short(dp) };
        let t = simulate(&SystemParams::default(), &sc).unwrap();
        prop_assert!(t.diagnostics.power_identity_error <= 1e-12);
        prop_assert!(t.diagnostics.d_eff_min >= 0.0 && t.diagnostics.d_eff_max <= 0.9);
    }
}

#[test]
fn equilibrium_is_a_fixed_point_for_every_order() {
    for order in BatteryOrder::ALL {
        let p = SystemParams::default().with_battery_order(order);
        let eq = find_equilibrium(&p, &p.load, None).unwrap();
        let mut dx = vec![0.0; eq.x.len()];
        system_derivative(&eq.x, &eq.params, &eq.load, &mut dx).unwrap();
        let theta = SystemState::theta_index();
        let worst = dx
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != theta)
            .map(|(_, v)| v.abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8, "order {order:?}: {worst:e}");
        assert_eq!(eq.x.len(), [22, 24, 26][order.as_u8() as usize / 2]);
    }
}

#[test]
fn zero_disturbance_stays_at_equilibrium() {
    let t = simulate(&SystemParams::default(), &short(0.0)).unwrap();
    let v0 = t.v_dc()[0];
    let drift = t.v_dc().iter().map(|v| (v - v0).abs()).fold(0.0, f64::max);
    assert!(drift < 1e-8, "{drift:e}");
}

#[test]
fn simulation_is_deterministic() {
    let p = SystemParams::default();
    let a = simulate(&p, &short(0.3)).unwrap();
    let b = simulate(&p, &short(0.3)).unwrap();
    assert_eq!(a, b);
    let mut ca = Vec::new();
    let mut cb = Vec::new();
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn load_step_lowers_dc_voltage_then_recovers() {
    let sc = Scenario {
        t_end: 0.3,
        ..short(0.5)
    };
    let t = simulate(&SystemParams::default(), &sc).unwrap();
    let v = t.v_dc();
    let star = t.v_dc_star;
    let dip = v.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(dip < star - 1e-4, "no visible dip: {dip}");
    assert!((v.last().unwrap() - star).abs() < 0.25 * (star - dip));
    let pre = v.iter().zip(&t.times).filter(|(_, &time)| time < sc.t_step);
    assert!(pre.map(|(x, _)| (x - star).abs()).fold(0.0, f64::max) < 1e-8);
}

#[test]
fn state_labels_match_dimensions() {
    for order in BatteryOrder::ALL {
        assert_eq!(SystemState::labels(order).len(), SystemState::dim(order));
        assert_eq!(DcState::len(order) + 13, SystemState::dim(order));
        assert_eq!(DcState::labels(order).len(), DcState::len(order));
    }
}
