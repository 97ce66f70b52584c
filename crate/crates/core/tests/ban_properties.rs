use proptest::prelude::*;
use wbms_core::ban::{
    check_trace, derive, parse_statement_with, saturate, Goal, Protocol, Statement,
    DEFAULT_MAX_DEPTH,
};

fn mirror(name: &str) -> String {
    match name {
        "NR" => "MN",
        "MN" => "NR",
        "chr" => "cht",
        "cht" => "chr",
        "X" => "X'",
        "X'" => "X",
        other => other,
    }
    .to_string()
}

#[test]
fn mirrored_protocol_gives_mirrored_trace() {
    let (p, goals) = Protocol::bundled();
    let t = derive(&p.assumptions, &p.messages, &goals, DEFAULT_MAX_DEPTH).unwrap();

    let assumptions: Vec<Statement> = p.assumptions.iter().map(|s| s.rename(&mirror)).collect();
    let messages: Vec<(u32, Statement)> = p
        .messages
        .iter()
        .map(|(n, s)| (*n, s.rename(&mirror)))
        .collect();
    let mgoals: Vec<Goal> = goals
        .iter()
        .map(|g| Goal {
            label: g.label.clone(),
            statement: g.statement.rename(&mirror),
        })
        .collect();
    let m = derive(&assumptions, &messages, &mgoals, DEFAULT_MAX_DEPTH).unwrap();
    check_trace(&m).unwrap();

    for g in &goals {
        assert_eq!(t.rule_sequence(&g.label), m.rule_sequence(&g.label));
    }
    let mut a: Vec<String> = t
        .steps
        .iter()
        .map(|s| s.conclusion.rename(&mirror).to_string())
        .collect();
    let mut b: Vec<String> = m.steps.iter().map(|s| s.conclusion.to_string()).collect();
    a.sort();
    b.sort();
    assert_eq!(a, b);
}

#[test]
fn g1_traces_are_mirror_images() {
    let (p, goals) = Protocol::bundled();
    let t = derive(&p.assumptions, &p.messages, &goals, DEFAULT_MAX_DEPTH).unwrap();
    let conclusions = |label: &str| -> Vec<Statement> {
        t.goal(label)
            .unwrap()
            .steps
            .iter()
            .map(|id| t.lookup(id).unwrap().clone())
            .collect()
    };
    let g11: Vec<String> = conclusions("G1.1")
        .iter()
        .map(|s| s.rename(&mirror).to_string())
        .collect();
    let g12: Vec<String> = conclusions("G1.2")
        .iter()
        .map(|s| s.to_string().replace("MN <-KM-> NR", "NR <-KM-> MN"))
        .collect();
    let g11: Vec<String> = g11
        .iter()
        .map(|s| s.replace("MN <-KM-> NR", "NR <-KM-> MN"))
        .collect();
    assert_eq!(g11, g12);
}

fn extra_pool(p: &Protocol) -> Vec<Statement> {
    [
        "NR |= fresh(cht)",
        "MN |= fresh(X)",
        "NR |= NR <-KS-> MN",
        "MN |= MN <-KM-> NR",
        "NR |= MN |~ chr",
        "MN <| {chr}_KS",
        "fresh(X')",
        "NR |= fresh(X) => NR |= fresh(cht)",
    ]
    .iter()
    .map(|s| parse_statement_with(s, Some(&p.symbols)).unwrap())
    .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adding_assumptions_keeps_goals(base_mask in 0u32..(1 << 8), extra_mask in 0u32..(1 << 16)) {
        let (p, goals) = Protocol::bundled();
        let pool: Vec<Statement> = p.assumptions.iter().cloned().chain(extra_pool(&p)).collect();
        let small: Vec<Statement> = pool
            .iter()
            .enumerate()
            .filter(|(i, _)| *i < 8 && base_mask & (1 << i) != 0)
            .map(|(_, s)| s.clone())
            .collect();
        let large: Vec<Statement> = pool
            .iter()
            .enumerate()
            .filter(|(i, _)| (*i < 8 && base_mask & (1 << i) != 0) || extra_mask & (1 << i) != 0)
            .map(|(_, s)| s.clone())
            .collect();
        let cs = saturate(&small, &p.messages, &[], 64);
        let cl = saturate(&large, &p.messages, &[], 64);
        prop_assert!(cs.fixpoint && cl.fixpoint);
        for g in &goals {
            if cs.contains(&g.statement) {
                prop_assert!(cl.contains(&g.statement), "{} lost", g.label);
            }
        }
        for s in cs.statements() {
            prop_assert!(cl.contains(s));
        }
    }

    #[test]
    fn traces_for_any_subset_are_sound(mask in 0u32..(1 << 8)) {
        let (p, goals) = Protocol::bundled();
        let assumptions: Vec<Statement> = p
            .assumptions
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, s)| s.clone())
            .collect();
        let c = saturate(&assumptions, &p.messages, &[], 64);
        let reachable: Vec<Goal> = goals.into_iter().filter(|g| c.contains(&g.statement)).collect();
        if !reachable.is_empty() {
            let t = derive(&assumptions, &p.messages, &reachable, DEFAULT_MAX_DEPTH).unwrap();
            prop_assert!(check_trace(&t).is_ok());
        }
    }

    #[test]
    fn saturation_terminates(mask in 0u32..(1 << 16)) {
        let (p, _) = Protocol::bundled();
        let pool: Vec<Statement> = p.assumptions.iter().cloned().chain(extra_pool(&p)).collect();
        let chosen: Vec<Statement> = pool
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, s)| s.clone())
            .collect();
        let c = saturate(&chosen, &p.messages, &[], 1000);
        prop_assert!(c.fixpoint);
        prop_assert!(c.rounds < 20);
    }
}
