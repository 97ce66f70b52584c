use proptest::prelude::*;
use wbms_core::wakeup::*;

#[test]
fn default_idle_powers() {
    let m = PowerModel::default();
    let q = m.quantize().unwrap();
    assert_eq!(q.idle_power_pw(Method::Ed), 117_810_000);
    assert_eq!(q.idle_power_pw(Method::Eh), 98_340_000);
    assert_eq!(idle_power(&m, Method::Ed).unwrap(), 117.81);
    assert_eq!(idle_power(&m, Method::Eh).unwrap(), 98.34);
}

#[test]
fn default_voltage_is_power_over_current() {
    // 117.81 uW / 35.7 uA
    assert!((117.81f64 / 35.7 - PowerModel::default().supply_voltage_v).abs() < 1e-12);
}

#[test]
fn idle_day_is_constant_profile() {
    let m = PowerModel::default();
    let t = simulate(&m, &StorageScenario::idle(1.0), Method::Ed).unwrap();
    assert_eq!(t.events.len(), 1);
    assert_eq!(t.avg_power_uw, 117.81);
    assert_eq!(t.total_energy_aj(), 117_810_000u128 * 86_400_000_000);
    assert!((t.total_energy_uj() - 117.81 * 86_400.0).abs() < 1e-6);
    assert_eq!(t.active_energy_aj, 0);
}

#[test]
fn eh_beats_ed_on_idle_day() {
    let m = PowerModel::default();
    let s = StorageScenario::idle(1.0);
    let ed = simulate(&m, &s, Method::Ed).unwrap();
    let eh = simulate(&m, &s, Method::Eh).unwrap();
    assert!(eh.total_energy_aj() < ed.total_energy_aj());
}

// Closed form: sum of P_state * dt over the day divided by the day.
#[test]
fn one_session_matches_closed_form() {
    let m = PowerModel::default();
    let s = StorageScenario::daily(1, 60.0);
    for method in Method::ALL {
        let (idle_uw, wake_uw, lat_s) = match method {
            Method::Ed => (3.3 * 35.7, 3.3 * 35.7, 0.005),
            Method::Eh => (3.3 * 29.8, 3.3 * 29.8, 0.050),
        };
        let active_uw = 3.3 * 50_000.0;
        let expected =
            (idle_uw * (86_400.0 - 60.0) + wake_uw * lat_s + active_uw * (60.0 - lat_s)) / 86_400.0;
        let t = simulate(&m, &s, method).unwrap();
        assert!(
            ((t.avg_power_uw - expected) / expected).abs() < 1e-9,
            "{method:?}: {} vs {expected}",
            t.avg_power_uw
        );
    }
}

#[test]
fn trace_follows_flowchart() {
    let m = PowerModel::default();
    let s = StorageScenario::daily(3, 120.0);
    for method in Method::ALL {
        let t = simulate(&m, &s, method).unwrap();
        assert_eq!(t.events.len(), 1 + 3 * 3);
        for w in t.events.windows(2) {
            assert!(w[0].time_us <= w[1].time_us);
            assert!(is_valid_transition(method, w[0].state, w[1].state));
        }
    }
}

#[test]
fn session_at_time_zero() {
    let m = PowerModel::default();
    let s = StorageScenario {
        duration_days: 1.0,
        readouts: vec![Readout {
            start_time_s: 0.0,
            session_length_s: 10.0,
        }],
    };
    let t = simulate(&m, &s, Method::Eh).unwrap();
    assert_eq!(t.events[0].state, PowerState::HarvestBoot);
    assert_eq!(t.events[0].time_us, 0);
}

#[test]
fn scenario_errors() {
    let m = PowerModel::default();
    let overlap = StorageScenario {
        duration_days: 1.0,
        readouts: vec![
            Readout {
                start_time_s: 100.0,
                session_length_s: 60.0,
            },
            Readout {
                start_time_s: 130.0,
                session_length_s: 60.0,
            },
        ],
    };
    assert_eq!(
        simulate(&m, &overlap, Method::Ed),
        Err(SimError::OverlappingSessions {
            first: 0,
            second: 1
        })
    );
    let past_end = StorageScenario {
        duration_days: 1.0,
        readouts: vec![Readout {
            start_time_s: 86_399.0,
            session_length_s: 2.0,
        }],
    };
    assert!(matches!(
        simulate(&m, &past_end, Method::Ed),
        Err(SimError::InvalidScenario(_))
    ));
    let too_short = StorageScenario {
        duration_days: 1.0,
        readouts: vec![Readout {
            start_time_s: 10.0,
            session_length_s: 0.01,
        }],
    };
    assert!(simulate(&m, &too_short, Method::Ed).is_ok());
    assert!(matches!(
        simulate(&m, &too_short, Method::Eh),
        Err(SimError::InvalidScenario(_))
    ));
    assert!(simulate(&m, &StorageScenario::idle(0.0), Method::Ed).is_err());
}

#[test]
fn model_validation() {
    let m = PowerModel {
        eh_wakeup_latency_ms: 1.0,
        ..Default::default()
    };
    assert!(matches!(m.quantize(), Err(SimError::InvalidModel(_))));
    let m = PowerModel {
        ntag_standby_current_ua: 0.0,
        ..Default::default()
    };
    assert!(m.quantize().is_err());
    let m = PowerModel {
        supply_voltage_v: f64::NAN,
        ..Default::default()
    };
    assert!(m.quantize().is_err());
}

#[test]
fn compare_default_rankings() {
    let c = compare_methods(&PowerModel::default(), &StorageScenario::daily(1, 60.0)).unwrap();
    assert_eq!(c.power_winner, Ranking::Eh);
    assert_eq!(c.latency_winner, Ranking::Ed);
    assert!(c.always_on_avg_power_uw > 1000.0);
}

#[test]
fn compare_reports_latency_tie() {
    let mut m = PowerModel::default();
    m.eh_wakeup_latency_ms = m.ed_wakeup_latency_ms;
    let c = compare_methods(&m, &StorageScenario::idle(1.0)).unwrap();
    assert_eq!(c.latency_winner, Ranking::Tie);
}

fn arb_model() -> impl Strategy<Value = PowerModel> {
    (
        1.0f64..5.0,
        1.0f64..100.0,
        1.0f64..80.0,
        0.5f64..20.0,
        1.0f64..20.0,
        0.1f64..20.0,
        0.0f64..100.0,
    )
        .prop_map(|(v, vlps, act, stby, tag_act, ed, extra)| PowerModel {
            supply_voltage_v: v,
            bpc_vlps_current_ua: vlps,
            bpc_active_current_ma: act,
            ntag_standby_current_ua: stby,
            ntag_active_current_ma: tag_act,
            ed_wakeup_latency_ms: ed,
            eh_wakeup_latency_ms: ed + extra,
        })
}

proptest! {
    #[test]
    fn eh_idle_below_ed_idle(m in arb_model()) {
        prop_assert!(idle_power(&m, Method::Eh).unwrap() < idle_power(&m, Method::Ed).unwrap());
    }

    #[test]
    fn energy_equals_piecewise_integral(m in arb_model(), n in 0u32..4, len in 1.0f64..600.0) {
        let s = StorageScenario::daily(n.max(1), len);
        for method in Method::ALL {
            let t = simulate(&m, &s, method).unwrap();
            let mut sum = 0u128;
            for (i, e) in t.events.iter().enumerate() {
                let end = t.events.get(i + 1).map_or(t.duration_us, |x| x.time_us);
                sum += e.power_pw as u128 * (end - e.time_us) as u128;
            }
            prop_assert_eq!(sum, t.total_energy_aj());
        }
    }

    #[test]
    fn adding_session_never_lowers_energy(m in arb_model(), start in 0.0f64..80_000.0, len in 1.0f64..600.0) {
        let base = StorageScenario::idle(1.0);
        let mut more = base.clone();
        more.readouts.push(Readout { start_time_s: start, session_length_s: len });
        for method in Method::ALL {
            let a = simulate(&m, &base, method).unwrap();
            let b = simulate(&m, &more, method).unwrap();
            prop_assert!(b.total_energy_aj() >= a.total_energy_aj());
        }
    }
}
