use std::collections::HashMap;

use indexmap::IndexMap;
use proptest::prelude::*;
use rome_core::{Hierarchy, HierarchySpec};

/// Balanced tree from per-level fan-outs, bottom order permuted by `perm`.
fn spec_from(fanouts: &[Vec<usize>], perm: &[usize]) -> HierarchySpec {
    let depth = fanouts.len();
    let levels: Vec<String> = (0..=depth).rev().map(|d| format!("L{d}")).collect();
    let mut children = IndexMap::new();
    let mut frontier = vec!["root".to_string()];
    for (d, sizes) in fanouts.iter().enumerate() {
        let mut next = Vec::new();
        for (p, parent) in frontier.iter().enumerate() {
            let size = sizes[p % sizes.len()];
            let kids: Vec<String> = (0..size).map(|k| format!("n{d}-{p}-{k}")).collect();
            next.extend(kids.iter().cloned());
            children.insert(parent.clone(), kids);
        }
        frontier = next;
    }
    let bottom_order = perm
        .iter()
        .map(|&i| frontier[i % frontier.len()].clone())
        .collect();
    HierarchySpec {
        levels,
        children,
        bottom_order,
    }
}

fn bottoms_under(node: &str, children: &IndexMap<String, Vec<String>>) -> Vec<String> {
    match children.get(node) {
        None => vec![node.to_string()],
        Some(kids) => kids
            .iter()
            .flat_map(|k| bottoms_under(k, children))
            .collect(),
    }
}

fn tree() -> impl Strategy<Value = HierarchySpec> {
    (1usize..=3)
        .prop_flat_map(|depth| {
            prop::collection::vec(prop::collection::vec(1usize..=4, 1..4), depth)
        })
        .prop_flat_map(|fanouts| {
            let spec = spec_from(&fanouts, &[]);
            let n_bottom = count_bottom(&spec);
            let perm = Just((0..n_bottom).collect::<Vec<_>>()).prop_shuffle();
            (Just(fanouts), perm)
        })
        .prop_map(|(fanouts, perm)| spec_from(&fanouts, &perm))
        .prop_filter("at most 50 nodes", |spec| {
            spec.children.len() + spec.bottom_order.len() <= 50
        })
}

fn count_bottom(spec: &HierarchySpec) -> usize {
    bottoms_under("root", &spec.children).len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn structural_identities_hold_exactly(spec in tree()) {
        let h = Hierarchy::build(&spec).unwrap();
        let cs = h.constraint() * h.summing();
        prop_assert!(cs.iter().all(|v| *v == 0.0));
        let js = h.selector() * h.summing();
        prop_assert_eq!(js, nalgebra::DMatrix::identity(h.n_bottom(), h.n_bottom()));
    }

    #[test]
    fn summing_rows_match_descendant_walk(spec in tree()) {
        let h = Hierarchy::build(&spec).unwrap();
        let column: HashMap<&str, usize> = spec
            .bottom_order
            .iter()
            .enumerate()
            .map(|(j, b)| (b.as_str(), j))
            .collect();
        for (i, label) in h.labels().iter().enumerate() {
            let mut expected = vec![0.0; h.n_bottom()];
            for b in bottoms_under(label, &spec.children) {
                expected[column[b.as_str()]] = 1.0;
            }
            let row: Vec<f64> = h.summing().row(i).iter().copied().collect();
            prop_assert_eq!(row, expected, "row of {}", label);
        }
    }

    #[test]
    fn builds_are_stable(spec in tree()) {
        let a = Hierarchy::build(&spec).unwrap();
        let b = Hierarchy::build(&HierarchySpec::from_json(&spec.to_json().unwrap()).unwrap()).unwrap();
        prop_assert_eq!(a.labels(), b.labels());
        prop_assert_eq!(a.summing(), b.summing());
        prop_assert_eq!(a.constraint(), b.constraint());
    }
}
