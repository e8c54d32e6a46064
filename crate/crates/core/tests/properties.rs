//! Public-API properties checked over many seeds.

use overbook::evalbench::{dominates, pareto_front};
use overbook::experiment::ExperimentConfig;
use overbook::noshow::PredictorConfig;
use overbook::simenv::DecisionEnv;
use overbook::{Action, SchedulingEnv, SimConfig, SimWorld};
use proptest::prelude::*;

fn small_world(rate: f64) -> std::sync::Arc<SimWorld> {
    let sim = SimConfig {
        arrival_rate: rate,
        horizon_days: 6,
        slots_per_day: 6,
        topology: vec![vec![2], vec![1]],
        ..SimConfig::default()
    };
    SimWorld::new(&sim, &PredictorConfig::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Any legal action sequence keeps the bookkeeping consistent.
    #[test]
    fn random_play_keeps_books_balanced(seed in any::<u64>(), choices in prop::collection::vec(0usize..3, 512), rate in 2.0f64..20.0) {
        let mut env = SchedulingEnv::reset(small_world(rate), seed).unwrap();
        let mut k = 0;
        while let Some((_, mask)) = env.decision() {
            let mask = *mask;
            let allowed: Vec<Action> = Action::ALL.into_iter().filter(|&a| mask.allows(a)).collect();
            let a = allowed[choices[k % choices.len()] % allowed.len()];
            k += 1;
            env.step(a).unwrap();
        }
        let c = env.counts();
        prop_assert_eq!(c.scheduled + c.rejected, c.requests);
        prop_assert_eq!(c.shows + c.no_shows, c.scheduled);
        for (_, slot) in env.calendar().iter() {
            prop_assert!(slot.bookings().len() <= 2);
        }
        prop_assert!(env.step(Action::SingleBook).is_err());
    }

    /// Front members are undominated; everything else is dominated by some front member.
    #[test]
    fn pareto_front_is_exact(points in prop::collection::vec(prop::array::uniform3(0u8..5), 1..24)) {
        let pts: Vec<[f64; 3]> = points.iter().map(|p| p.map(f64::from)).collect();
        let front = pareto_front(&pts);
        for i in 0..pts.len() {
            let dominated = pts.iter().any(|q| dominates(q, &pts[i]));
            prop_assert_eq!(front.contains(&i), !dominated);
        }
    }
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    let mut cfg = ExperimentConfig {
        seed: 42,
        ..ExperimentConfig::default()
    };
    cfg.sim.arrival_rate = 12.5;
    cfg.save(&path).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), cfg);
}
