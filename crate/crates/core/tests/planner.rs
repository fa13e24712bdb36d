mod oracles;

use std::collections::BTreeSet;

use proptest::prelude::*;

use cortex_core::planner::{action_values, select_action, validate_state_tree, StateTree, DISCOUNT};

fn vocab() -> BTreeSet<String> {
    oracles::TREE_VOCAB.iter().map(|s| s.to_string()).collect()
}

fn available() -> Vec<String> {
    vocab().into_iter().collect()
}

#[test]
fn selection_agrees_with_exhaustive_search() {
    let mut r = oracles::rng(11);
    for i in 0..300 {
        let tree = oracles::random_tree(&mut r, 4, 3);
        let (best, values) = oracles::exhaustive_best(&tree);
        let got = select_action(&tree, &available()).unwrap();
        assert_eq!(got.selected_action, best, "tree {i}: {values:?}");
        for (a, v) in action_values(&tree, DISCOUNT) {
            assert!((v - values[&a]).abs() < 1e-12, "tree {i} action {a}");
        }
    }
}

#[test]
fn every_mutation_is_rejected() {
    let mut r = oracles::rng(12);
    let vocab = vocab();
    let mut seen = BTreeSet::new();
    for i in 0..1_000 {
        let mut tree = oracles::random_tree(&mut r, 4, 3);
        assert!(validate_state_tree(&tree.to_document(), Some(&vocab)).is_ok(), "tree {i} should be valid");
        let rule = oracles::mutate_tree(&mut r, &mut tree);
        seen.insert(rule);
        assert!(validate_state_tree(&tree.to_document(), Some(&vocab)).is_err(), "tree {i}: {rule} mutation accepted");
        assert!(tree.validate(Some(&vocab)).is_err(), "tree {i}: {rule} mutation accepted by validate");
    }
    assert_eq!(seen.len(), 6, "{seen:?}");
}

proptest! {
    #[test]
    fn document_round_trip_preserves_tree(seed in any::<u64>()) {
        let tree = oracles::random_tree(&mut oracles::rng(seed), 4, 3);
        let back = StateTree::from_document(&tree.to_document(), Some(&vocab())).unwrap();
        prop_assert_eq!(back.layers(), tree.layers());
        prop_assert_eq!(back.root.node_count(), tree.root.node_count());
        let (a, _) = oracles::exhaustive_best(&back);
        prop_assert_eq!(a, select_action(&tree, &available()).unwrap().selected_action);
    }

    #[test]
    fn chosen_action_is_never_dominated(seed in any::<u64>()) {
        let tree = oracles::random_tree(&mut oracles::rng(seed), 4, 3);
        let values = action_values(&tree, DISCOUNT);
        let chosen = select_action(&tree, &available()).unwrap().selected_action;
        let best = values[&chosen];
        prop_assert!(values.values().all(|v| *v <= best + 1e-12));
    }
}
