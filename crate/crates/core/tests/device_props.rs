use gated_apd::device::{
    afterpulse_prob, preset, trap_capture, trap_decay, BiasPoint, DeviceCharacteristic, TrapParams, TrapState,
};
use proptest::prelude::*;

/// Valid tables built from positive increments.
fn table() -> impl Strategy<Value = Vec<BiasPoint>> {
    prop::collection::vec((0.05f64..1.0, 0.0f64..0.05, 0.0f64..1e-5), 1..8).prop_map(|steps| {
        let (mut ob, mut eta, mut pd) = (0.0, 0.0, 0.0);
        steps
            .into_iter()
            .map(|(d_ob, d_eta, d_pd)| {
                ob += d_ob;
                eta += d_eta;
                pd += d_pd;
                BiasPoint {
                    overbias: ob,
                    efficiency: eta,
                    dark_prob: pd,
                }
            })
            .collect()
    })
}

fn trap() -> impl Strategy<Value = TrapParams> {
    (0.0f64..0.5, 1e-4f64..0.1, 1e-7f64..1e-4).prop_map(|(capture, release, tau_s)| TrapParams {
        capture,
        release,
        tau_s,
        ..TrapParams::NONE
    })
}

proptest! {
    #[test]
    fn interpolation_is_monotone(rows in table(), a in 0.0f64..10.0, b in 0.0f64..10.0) {
        let dev = DeviceCharacteristic::new("random", 178.0, 50.0, rows, TrapParams::NONE, 0.2, None).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(dev.efficiency_at(lo) <= dev.efficiency_at(hi));
        prop_assert!(dev.dark_prob_at(lo) <= dev.dark_prob_at(hi));
        prop_assert!((0.0..=1.0).contains(&dev.efficiency_at(hi)));
    }

    #[test]
    fn decay_composes(pop in 0.0f64..100.0, t1 in 0.0f64..2e-5, t2 in 0.0f64..2e-5, params in trap()) {
        let s = TrapState { population: pop, last_update_time: 0.0 };
        let two = trap_decay(trap_decay(s, &params, t1).unwrap(), &params, t2).unwrap();
        let one = trap_decay(s, &params, t1 + t2).unwrap();
        let scale = one.population.abs().max(f64::MIN_POSITIVE);
        prop_assert!((two.population - one.population).abs() <= 1e-12 * scale);
    }

    #[test]
    fn afterpulse_monotone_in_population(p1 in 0.0f64..1e4, p2 in 0.0f64..1e4, params in trap()) {
        let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
        let at = |p: f64| afterpulse_prob(TrapState { population: p, last_update_time: 0.0 }, &params);
        prop_assert!(at(lo) <= at(hi));
        prop_assert!((0.0..=1.0).contains(&at(hi)));
    }
}

#[test]
fn single_avalanche_afterpulse_falls_with_interval() {
    let dev = preset("EPM239BA-178K").unwrap();
    let ob = dev.default_overbias();
    let filled = trap_capture(TrapState::EMPTY, &dev.trap, ob, 0.95).unwrap();
    let mut last = f64::INFINITY;
    for k in 1..=50 {
        let dt = k as f64 * 0.2e-6;
        let p = afterpulse_prob(trap_decay(filled, &dev.trap, dt).unwrap(), &dev.trap);
        assert!(p < last, "interval {dt}: {p} !< {last}");
        last = p;
    }
}
