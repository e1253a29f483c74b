mod common;

use agriswarm_core::sim::{run, FaultKind, RunStatus};
use proptest::prelude::*;

fn fault_kind() -> impl Strategy<Value = FaultKind> {
    prop_oneof![
        (5.0f64..80.0).prop_map(|pct| FaultKind::BatteryDrop { pct }),
        (1u64..60).prop_map(|duration| FaultKind::CommBlackout { duration }),
        Just(FaultKind::ControllerFail),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn random_runs_keep_every_waypoint_accounted_for(
        w in 40.0f64..160.0,
        h in 30.0f64..100.0,
        spacing in 4.0f64..12.0,
        drains in prop::collection::vec(0.02f64..0.15, 1..4),
        loss in 0.0f64..0.4,
        faults in prop::collection::vec((0u64..400, 1u8..4, fault_kind()), 0..4),
        redispatch in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let fleet = drains.iter().enumerate().map(|(i, c)| common::member(i as u8 + 1, (0.0, 0.0), *c)).collect();
        let mut s = common::scenario(w, h, spacing, fleet);
        s.radio.loss_prob = loss;
        s.seed = seed;
        s.gs_redispatch = redispatch;
        s.max_ticks = 30_000;
        let n = drains.len() as u8;
        s.faults = faults.into_iter().filter(|f| f.1 <= n).map(|(t, u, k)| common::fault(t, u, k)).collect();

        let out = run(s).unwrap();
        let r = &out.report;
        prop_assert!(r.status == RunStatus::Done, "{:?} after {} ticks: {:?}", r.status, r.ticks, r.waypoints);
        prop_assert!(r.waypoints.no_loss, "{:?}", r.waypoints);
        prop_assert_eq!(r.waypoints.executed_twice, 0);
        prop_assert!(r.energy_balanced);
        prop_assert!((0.0..=100.0).contains(&r.coverage_pct));
        let reported: u64 = r.stranded.iter().map(|s| s.count).sum();
        prop_assert_eq!(reported, r.waypoints.stranded);
        prop_assert_eq!(r.waypoints.executed + r.waypoints.stranded, r.waypoints.planned);
    }
}
