mod common;

use agriswarm_core::allocator::{reachable_distance, update_drain_const, BatteryModel, FlightLogEntry};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn segments_stay_strictly_inside_budget_and_rejoin_to_the_plan(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bad = common::segmentation_violations(&mut rng);
        prop_assert!(bad.is_empty(), "{:?}", bad);
    }

    #[test]
    fn reachable_distance_grows_with_level(
        lo in 10.0f64..100.0,
        extra in 0.0f64..50.0,
        threshold in 10.0f64..50.0,
        c in 0.001f64..1.0,
    ) {
        let hi = (lo + extra).min(100.0);
        let a = reachable_distance(&BatteryModel { level_pct: lo, threshold_pct: threshold, drain_const: c });
        let b = reachable_distance(&BatteryModel { level_pct: hi, threshold_pct: threshold, drain_const: c });
        prop_assert!(a >= 0.0);
        prop_assert!(b >= a);
    }

    #[test]
    fn single_flight_estimate_is_the_observed_rate(
        start in 20.0f64..=100.0,
        used in 1.0f64..20.0,
        distance in 1.0f64..5000.0,
    ) {
        let e = FlightLogEntry { initial_pct: start, final_pct: start - used, distance_m: distance, mission_id: 1 };
        let c = update_drain_const(&[e]).unwrap();
        prop_assert!((c - used / distance).abs() <= 1e-12 * (used / distance).max(1.0));
    }
}
