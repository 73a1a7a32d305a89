use std::collections::BTreeSet;

use proptest::prelude::*;
use wsqkd_core::netgraph::{
    build_plan, default_label, find_isomorphism, node_schedule, plan_for_nodes, route_lookup, router_permutation,
    validate_plan, NetworkPlan, NodeId, Role,
};
use wsqkd_core::Error;

fn field_rule() -> NetworkPlan {
    NetworkPlan::from_cycles(
        vec![vec![0, 1, 2, 3, 4], vec![0, 2, 4, 1, 3]],
        (0..5).map(default_label).collect(),
        vec![1530.0, 1550.0],
    )
    .unwrap()
}

#[test]
fn plans_up_to_eight_wavelengths_are_valid() {
    for n in 1..=8 {
        let plan = build_plan(n).unwrap();
        assert_eq!(validate_plan(&plan), vec![], "N = {n}");
        assert_eq!(plan.links.len(), n * (2 * n + 1));
    }
}

#[test]
fn two_wavelength_plan_matches_field_rule() {
    let plan = build_plan(2).unwrap();
    let sigma = find_isomorphism(&plan, &field_rule()).expect("isomorphic");
    let reference = field_rule();
    for l in &plan.links {
        assert!(reference.links.iter().any(|r| r.src.0 == sigma[l.src.0]
            && r.dst.0 == sigma[l.dst.0]
            && r.wavelength.index == l.wavelength.index));
    }
}

#[test]
fn field_examples_route_on_their_wavelength() {
    let plan = field_rule();
    let id = |l: &str| plan.node(l).unwrap();
    let ab = route_lookup(&plan, id("A"), id("B")).unwrap();
    assert_eq!((ab.src, ab.dst, ab.wavelength.index), (id("A"), id("B"), 0));
    let ca = route_lookup(&plan, id("C"), id("A")).unwrap();
    assert_eq!(ca.wavelength.index, 1);
    assert_eq!((ca.src, ca.dst), (id("A"), id("C")));
    assert!(matches!(route_lookup(&plan, id("B"), id("B")), Err(Error::SelfLink(_))));
}

#[test]
fn even_node_counts_are_rejected_with_a_hint() {
    let e = plan_for_nodes(6).unwrap_err();
    assert!(e.to_string().contains("7 nodes"), "{e}");
    assert_eq!(plan_for_nodes(7).unwrap().n_wavelengths, 3);
}

#[test]
fn corrupted_plan_is_reported() {
    let mut plan = build_plan(3).unwrap();
    plan.links[0].dst = plan.links[0].src;
    assert!(!validate_plan(&plan).is_empty());
}

proptest! {
    #[test]
    fn every_pair_has_exactly_one_link(n in 1usize..=8, a in 0usize..17, b in 0usize..17) {
        let plan = build_plan(n).unwrap();
        let (a, b) = (a % plan.node_count, b % plan.node_count);
        prop_assume!(a != b);
        let l = route_lookup(&plan, NodeId(a), NodeId(b)).unwrap();
        prop_assert_eq!(route_lookup(&plan, NodeId(b), NodeId(a)).unwrap(), l);
        prop_assert_eq!(plan.links.iter().filter(|x| x.connects(NodeId(a), NodeId(b))).count(), 1);
    }

    #[test]
    fn router_permutations_are_single_cycles(n in 1usize..=8) {
        let plan = build_plan(n).unwrap();
        for w in 0..n {
            let p = router_permutation(&plan, w).unwrap();
            prop_assert!(p.is_permutation());
            prop_assert!(p.is_single_cycle());
            prop_assert!(!p.has_fixed_point());
        }
    }

    #[test]
    fn each_node_sends_and_receives_once_per_wavelength(n in 1usize..=8) {
        let plan = build_plan(n).unwrap();
        for v in 0..plan.node_count {
            let sched = node_schedule(&plan, NodeId(v)).unwrap();
            prop_assert_eq!(sched.len(), 2 * n);
            for w in 0..n {
                let roles: BTreeSet<_> = sched.iter().filter(|e| e.wavelength.index == w).map(|e| e.role).collect();
                prop_assert_eq!(roles, BTreeSet::from([Role::Transmit, Role::Receive]));
            }
            let peers: BTreeSet<_> = sched.iter().map(|e| e.peer).collect();
            prop_assert_eq!(peers.len(), 2 * n);
        }
    }

    #[test]
    fn build_plan_is_deterministic(n in 1usize..=8) {
        prop_assert_eq!(build_plan(n).unwrap(), build_plan(n).unwrap());
    }
}
