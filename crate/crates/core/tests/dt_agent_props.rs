mod common;

use common::{id, random_observation};
use hmt_core::dt_agent::{current_phase, decide, DecisionTreePolicy};
use hmt_core::episode::{run_episode, AiChoice};
use hmt_core::skills::Observation;
use hmt_core::MissionConfig;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn never_places_across_ten_thousand_observations() {
    let policy = DecisionTreePolicy::reference();
    let mission = MissionConfig::default();
    let me = id("ai");
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut per_phase = [0u32; 5];
    for i in 0..10_000 {
        let update = random_observation(&mut rng, &mission);
        let obs = Observation { me: &me, mission: &mission, update: &update };
        let (action, trace) = decide(&policy, &obs);
        assert!(!action.is_place(), "observation {i} produced {action:?}");
        assert_eq!(trace.emitted_action, action);
        per_phase[trace.phase as usize - 1] += 1;
    }
    assert!(per_phase.iter().all(|&n| n >= 200), "phase coverage {per_phase:?}");
}

#[test]
fn phase_endpoints() {
    let t = MissionConfig::default().phase_thresholds;
    assert_eq!(current_phase(0.0, &t), 1);
    assert_eq!(current_phase(1.0, &t), 5);
}

#[test]
fn episode_phases_never_go_back() {
    let policy = DecisionTreePolicy::reference();
    for seed in [1, 7, 21] {
        let run = run_episode(MissionConfig::default(), AiChoice::DecisionTree(policy.clone()), seed).unwrap();
        let phases: Vec<u8> = run.timeline.traces().map(|(_, t)| t.phase).collect();
        assert!(!phases.is_empty());
        assert!(phases.windows(2).all(|w| w[0] <= w[1]), "seed {seed}: {phases:?}");
        assert!(run.timeline.traces().all(|(_, t)| policy.is_valid_trace(t)));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn decide_is_pure_and_traced(seed in any::<u64>()) {
        let policy = DecisionTreePolicy::reference();
        let mission = MissionConfig::default();
        let me = id("ai");
        let update = random_observation(&mut ChaCha8Rng::seed_from_u64(seed), &mission);
        let obs = Observation { me: &me, mission: &mission, update: &update };
        let first = decide(&policy, &obs);
        let copy = update.clone();
        let again = decide(&policy, &Observation { me: &me, mission: &mission, update: &copy });
        prop_assert_eq!(&first, &again);
        let (action, trace) = first;
        prop_assert!(policy.is_valid_trace(&trace));
        prop_assert_eq!(trace.phase, current_phase(update.world.completion, &mission.phase_thresholds));
        prop_assert_eq!(trace.sim_time, update.world.clock);
        prop_assert!(!action.is_place());
    }

    #[test]
    fn phase_is_monotone_in_completion(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let t = MissionConfig::default().phase_thresholds;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(current_phase(lo, &t) <= current_phase(hi, &t));
        prop_assert!((1..=5).contains(&current_phase(a, &t)));
    }
}
