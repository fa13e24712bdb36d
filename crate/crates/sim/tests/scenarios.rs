use std::collections::BTreeSet;

use cortex_core::planner::{generate_state_tree, select_action, ScoreWeights, NO_OP};
use cortex_sim::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run_to_feedback(sim: &mut Simulator, action: &str) -> Feedback {
    if let Some(fb) = sim.begin(action).unwrap() {
        return fb;
    }
    loop {
        for e in sim.tick(None) {
            if let SimEvent::Feedback(fb) = e {
                return fb;
            }
        }
    }
}

/// Plan greedily with the belief model until the goal holds or `limit`
/// decisions were made. Returns the actions taken.
fn solve(spec: ScenarioSpec, goal: Goal, hint: &str, limit: usize) -> (bool, Vec<String>) {
    let mut sim = Simulator::new(spec.clone());
    let model = PlanningModel::new(goal.clone(), spec.vocab(), spec.transitions.clone(), spec.world.clone()).with_hint(hint);
    let mut searched = BTreeSet::new();
    let mut tried = BTreeSet::new();
    let mut taken = Vec::new();
    for _ in 0..limit {
        let belief = Belief::from_observation(&sim.observe(), &spec.world, &searched, &tried);
        if goal.holds(sim.world()) {
            return (true, taken);
        }
        let key = belief.key();
        let available: Vec<String> = cortex_core::planner::TransitionModel::applicable(&model, &key);
        if available.is_empty() {
            return (false, taken);
        }
        let tree = generate_state_tree(&key, &available, &model, 2, &ScoreWeights::default()).unwrap();
        let choice = select_action(&tree, &available).unwrap();
        if choice.selected_action == NO_OP {
            return (true, taken);
        }
        let fb = run_to_feedback(&mut sim, &choice.selected_action);
        if fb.success {
            if let Ok(Action::Open(c)) = fb.action.parse() {
                searched.insert(c);
            }
            if let Ok(Action::LookFrom(v)) = fb.action.parse() {
                tried.insert(v);
            }
        }
        taken.push(choice.selected_action);
    }
    (goal.holds(sim.world()), taken)
}

fn certain(mut spec: ScenarioSpec) -> ScenarioSpec {
    for o in spec.transitions.outcomes.values_mut() {
        o.success = 1.0;
    }
    spec
}

#[test]
fn task_one_layout() {
    let spec = load_scenario(1, 0).unwrap();
    assert!(!spec.world.containers["cabinet"].open);
    assert_eq!(spec.world.objects["cube"].container.as_deref(), Some("cabinet"));
    assert!(!observe(&spec.world).sees("cube"));
    assert_eq!(spec.goal, Goal::Lifted(ObjRef::Id("cube".into())));
}

#[test]
fn deletion_is_scheduled_at_sixty_seconds() {
    let spec = load_scenario(8, 3).unwrap();
    assert_eq!(spec.events, vec![ScheduledEvent { tick: 6000, event: WorldEvent::Remove { object: "apple_1".into() } }]);
}

#[test]
fn scenarios_are_deterministic_and_bounded() {
    for task in 1..=8 {
        for seed in 0..5 {
            assert_eq!(load_scenario(task, seed).unwrap(), load_scenario(task, seed).unwrap());
            let spec = load_scenario(task, seed).unwrap();
            assert!(!check_success(&spec.world, &spec.goal), "task {task} starts solved");
            assert_eq!(ScenarioSpec::from_json(&spec.to_json()).unwrap(), spec);
        }
    }
    assert_eq!(load_scenario(9, 0), Err(SimError::UnknownTask(9)));
    assert_eq!(load_scenario(0, 0), Err(SimError::UnknownTask(0)));
}

#[test]
fn open_then_grasp() {
    let spec = certain(load_scenario(1, 0).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut w = spec.world.clone();
    for a in ["move to cabinet", "open cabinet", "grasp cube"] {
        let (next, _, events) = step(&w, &a.parse().unwrap(), &spec.transitions, &mut rng);
        assert!(matches!(&events[0], SimEvent::Feedback(f) if f.success), "{a}");
        w = next;
    }
    assert_eq!(w.gripper.holding.as_deref(), Some("cube"));
}

#[test]
fn grasp_through_closed_cabinet_fails_without_change() {
    let spec = load_scenario(1, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (w, _, _) = step(&spec.world, &"move to cabinet".parse().unwrap(), &spec.transitions, &mut rng);
    let (after, _, events) = step(&w, &"grasp cube".parse().unwrap(), &spec.transitions, &mut rng);
    assert_eq!(after, w);
    match &events[0] {
        SimEvent::Feedback(f) => {
            assert!(!f.success);
            assert!(f.error.as_deref().unwrap().contains("closed"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn deletion_hides_apple_from_the_next_observation() {
    let spec = load_scenario(8, 0).unwrap();
    let mut sim = Simulator::new(spec);
    let mut fired = 0;
    while sim.tick_now() < 6000 {
        assert!(sim.observe().sees("apple_1"));
        fired += sim.tick(None).iter().filter(|e| matches!(e, SimEvent::Fired(_))).count();
    }
    assert_eq!(fired, 1);
    assert!(!sim.world().objects["apple_1"].present);
    assert!(!sim.observe().sees("apple_1"));
    for _ in 0..100 {
        assert!(sim.tick(None).is_empty());
    }
}

#[test]
fn viewpoint_reveals_occluded_apple() {
    let seed = (0..50).find(|&s| load_scenario(7, s).unwrap().world.objects["apple"].hidden_from.len() == 1).unwrap();
    let w = load_scenario(7, seed).unwrap().world;
    assert!(!observe(&w).sees("apple"));
    let left = viewpoint_change(&w, "left");
    assert!(observe(&left).sees("apple"));
    let front = viewpoint_change(&left, "front");
    assert!(!observe(&front).sees("apple"));
    for (id, o) in &left.objects {
        assert_eq!(o.location, w.objects[id].location);
    }
}

#[test]
fn wrong_charger_reports_mismatch() {
    let spec = certain(load_scenario(4, 0).unwrap());
    let mut sim = Simulator::new(spec);
    for a in ["move to table", "grasp charger_right", "move to socket"] {
        assert!(run_to_feedback(&mut sim, a).success, "{a}");
    }
    let fb = run_to_feedback(&mut sim, "plug into socket_1");
    assert!(!fb.success);
    assert!(fb.error.unwrap().contains("mismatch"));
    assert!(!sim.is_success());
}

#[test]
fn unknown_action_is_rejected() {
    let mut sim = Simulator::new(load_scenario(2, 0).unwrap());
    assert!(matches!(sim.begin("grasp unicorn"), Err(SimError::NotInVocabulary(_))));
}

#[test]
fn fetch_takes_longer_than_the_deletion_delay() {
    let mut spec = load_scenario(8, 1).unwrap();
    spec.events.clear();
    let mut sim = Simulator::new(certain(spec));
    for a in ["move to counter", "grasp apple_1", "lift", "move to user", "place at user"] {
        assert!(run_to_feedback(&mut sim, a).success, "{a}");
    }
    assert!(sim.is_success());
    assert!(sim.tick_now() > DELETION_TICK, "finished at {}", sim.tick_now());
    assert!(sim.tick_now() < 7000, "finished at {}", sim.tick_now());
}

#[test]
fn belief_planner_solves_each_task_when_actions_cannot_fail() {
    let cases: Vec<(u8, Box<dyn Fn(&ScenarioSpec) -> Goal>)> = vec![
        (1, Box::new(|s| s.goal.clone())),
        (2, Box::new(|s| s.goal.clone())),
        (3, Box::new(|s| s.goal.clone())),
        (4, Box::new(|_| Goal::Plugged(ObjRef::Id("charger_left".into()), "socket_1".into()))),
        (5, Box::new(|s| s.goal.clone())),
        (6, Box::new(|s| s.goal.clone())),
        (7, Box::new(|s| s.goal.clone())),
    ];
    for (task, goal) in cases {
        for seed in 0..10 {
            let spec = certain(load_scenario(task, seed).unwrap());
            let hint = spec.sensors.values().cloned().collect::<Vec<_>>().join(" ") + " " + &spec.mission;
            let g = goal(&spec);
            let (ok, taken) = solve(spec, g, &hint, 20);
            assert!(ok, "task {task} seed {seed}: {taken:?}");
        }
    }
}

#[test]
fn planner_finds_the_spare_apple_after_deletion() {
    for seed in 0..20 {
        let spec = load_scenario(8, seed).unwrap();
        if !spec.world.objects.contains_key("apple_2") {
            continue;
        }
        let mut spec = certain(spec);
        spec.world.objects.get_mut("apple_1").unwrap().present = false;
        spec.events.clear();
        let goal = spec.goal.clone();
        let (ok, taken) = solve(spec, goal, "", 20);
        assert!(ok, "seed {seed}: {taken:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn observations_never_leak_and_objects_are_conserved(task in 1u8..=8, seed in 0u64..1000, picks in prop::collection::vec(0usize..64, 1..40)) {
        let spec = load_scenario(task, seed).unwrap();
        let vocab = spec.vocab();
        let count = spec.world.objects.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = spec.world.clone();
        for p in picks {
            let a = &vocab[p % vocab.len()];
            let (next, obs, _) = step(&w, a, &spec.transitions, &mut rng);
            for o in &obs.objects {
                let real = &next.objects[&o.id];
                prop_assert!(real.present && !real.occluded);
            }
            prop_assert_eq!(next.objects.len(), count);
            prop_assert_eq!(next.present_count(), count);
            w = next;
        }
    }
}
