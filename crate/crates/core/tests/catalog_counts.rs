use std::collections::{BTreeSet, HashMap};

use autodo_core::catalog::{node_id, seed, BrowseTarget, Catalog, CategoryNode, Taxonomy};
use proptest::prelude::*;

/// Three levels in each taxonomy: 3 roots, 3 children each, 2 grandchildren each.
fn nodes() -> Vec<CategoryNode> {
    let mut out = Vec::new();
    let mut push = |tax: Taxonomy, code: String, parent: Option<&str>| {
        out.push(CategoryNode {
            id: node_id(tax, &code),
            title: format!("node {code}"),
            parent_id: parent.map(|p| node_id(tax, p)),
            taxonomy: tax,
            code,
        });
    };
    for root in ["11", "21", "22"] {
        push(Taxonomy::Industry, root.to_string(), None);
        for c in 1..=3 {
            let child = format!("{root}{c}");
            push(Taxonomy::Industry, child.clone(), Some(root));
            for g in 1..=2 {
                push(Taxonomy::Industry, format!("{child}{g}"), Some(&child));
            }
        }
    }
    for root in ["plan", "route", "assign"] {
        push(Taxonomy::DoType, root.to_string(), None);
        for c in 1..=3 {
            let child = format!("{root}_{c}");
            push(Taxonomy::DoType, child.clone(), Some(root));
            for g in 1..=2 {
                push(Taxonomy::DoType, format!("{child}_{g}"), Some(&child));
            }
        }
    }
    out
}

/// Distinct templates attached anywhere in the subtree below `id`,
/// enumerated by walking child links from scratch.
fn brute_force(all: &[CategoryNode], attachments: &[BTreeSet<String>], id: &str) -> usize {
    let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
    for n in all {
        if let Some(p) = &n.parent_id {
            children.entry(p.as_str()).or_default().push(&n.id);
        }
    }
    let mut subtree = BTreeSet::new();
    let mut stack = vec![id];
    while let Some(n) = stack.pop() {
        subtree.insert(n.to_string());
        stack.extend(children.get(n).into_iter().flatten());
    }
    attachments.iter().filter(|cats| !cats.is_disjoint(&subtree)).count()
}

fn publishes() -> impl Strategy<Value = Vec<Vec<usize>>> {
    let n = nodes().len();
    prop::collection::vec(prop::collection::vec(0..n, 1..4), 200)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn counts_match_subtree_enumeration(picks in publishes()) {
        let all = nodes();
        let mut catalog = Catalog::from_nodes(all.clone()).unwrap();
        let spec = seed::gridworld();
        let mut attachments = Vec::new();
        for (i, pick) in picks.iter().enumerate() {
            let cats: BTreeSet<String> = pick.iter().map(|&k| all[k].id.clone()).collect();
            catalog
                .publish_template(spec.clone(), &format!("t{i}"), "", cats.clone(), "prop")
                .unwrap();
            attachments.push(cats);
        }
        for n in &all {
            let expected = brute_force(&all, &attachments, &n.id);
            prop_assert_eq!(catalog.template_count(&n.id), expected, "node {}", n.id);
            let view = catalog.browse(BrowseTarget::Node(&n.id)).unwrap();
            prop_assert_eq!(view.pinned.unwrap().template_count, expected);
        }
        for tax in [Taxonomy::Industry, Taxonomy::DoType] {
            let roots = catalog.browse(BrowseTarget::Root(tax)).unwrap();
            for r in roots.children {
                prop_assert_eq!(r.template_count, brute_force(&all, &attachments, &r.node.id));
            }
        }
    }
}
