mod common;

use common::{ab_example, beam_oracle, greedy_path, random_answers, random_beam, vote_oracle, vote_trace};
use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use reasongraph_core::analysis::normalize_answer;
use reasongraph_core::synth::{random_trace, SynthConfig};
use reasongraph_core::{analyze, best_beam_path, majority_vote, trace_stats, Analysis, ReasoningMethod};

#[test]
fn beam_matches_exhaustive_oracle() {
    let mut rng = StdRng::seed_from_u64(0xbea3);
    for case_no in 0..500 {
        let case = random_beam(&mut rng, 4, 4);
        let (want_path, want_total) = beam_oracle(&case);
        let got = best_beam_path(&case.trace).expect("scored beam trace");
        assert!(
            (got.total - want_total as f64 / 100.0).abs() < 1e-9,
            "case {case_no}: total {} vs oracle {}",
            got.total,
            want_total
        );
        assert_eq!(got.path, want_path, "case {case_no}");
    }
}

#[test]
fn optimum_beats_greedy_in_ab_example() {
    let t = ab_example();
    let best = best_beam_path(&t).unwrap();
    assert_eq!(best.path, ["B", "D"]);
    assert!((best.total - 1.2).abs() < 1e-12);
    assert_eq!(greedy_path(&t), ["A", "C"]);
    let out = analyze(t);
    assert_eq!(
        out.trace.selected_path.as_deref().unwrap(),
        ["Q", "B", "D", "F"]
    );
    assert!(out.diagnostics.is_empty(), "{:?}", out.diagnostics);
}

#[test]
fn oracle_finds_greedy_gaps_in_random_trees() {
    let mut rng = StdRng::seed_from_u64(11);
    let gaps = (0..500)
        .map(|_| random_beam(&mut rng, 4, 4))
        .filter(|c| greedy_path(&c.trace) != beam_oracle(c).0)
        .count();
    assert!(gaps > 0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn scaling_scores_keeps_the_argmax(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut rng = StdRng::seed_from_u64(seed);
        let case = random_beam(&mut rng, 4, 4);
        let before = best_beam_path(&case.trace).unwrap();
        let mut scaled = case.trace.clone();
        for n in &mut scaled.nodes {
            n.score = n.score.map(|s| s * c);
        }
        let after = best_beam_path(&scaled).unwrap();
        prop_assert_eq!(&after.path, &before.path);
        prop_assert!((after.total - before.total * c).abs() <= 1e-9 * (1.0 + after.total.abs()));
    }

    #[test]
    fn synthetic_beam_traces_agree_with_oracle(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let t = random_trace(ReasoningMethod::BeamSearch, &mut rng, &SynthConfig::default());
        let hundredths = t
            .nodes
            .iter()
            .map(|n| (n.score.unwrap_or(0.0) * 100.0).round() as u32)
            .collect();
        let case = common::BeamCase { trace: t, hundredths };
        let (path, _) = beam_oracle(&case);
        prop_assert_eq!(best_beam_path(&case.trace).unwrap().path, path);
    }

    #[test]
    fn vote_counts_are_consistent(seed in any::<u64>()) {
        let mut rng = StdRng::seed_from_u64(seed);
        let answers = random_answers(&mut rng);
        let v = majority_vote(&vote_trace(&answers)).unwrap();
        prop_assert_eq!(v.counts.values().sum::<usize>(), answers.len());
        prop_assert_eq!(v.counts[&v.winner], *v.counts.values().max().unwrap());
    }
}

#[test]
fn vote_matches_frequency_oracle() {
    let mut rng = StdRng::seed_from_u64(0x707e);
    let mut ties = 0;
    for case_no in 0..500 {
        let answers = random_answers(&mut rng);
        let want = vote_oracle(&answers);
        let got = majority_vote(&vote_trace(&answers)).unwrap();
        assert_eq!(got.winner, want.winner, "case {case_no}: {answers:?}");
        assert_eq!(got.tie, want.tie, "case {case_no}: {answers:?}");
        assert_eq!(got.counts.len(), want.counts.len(), "case {case_no}");
        for (k, v) in &want.counts {
            assert_eq!(got.counts.get(k), Some(v), "case {case_no}: {k}");
        }
        ties += usize::from(want.tie);
    }
    assert!(ties > 0, "the generator should produce some ties");
}

#[test]
fn vote_examples() {
    let run = |xs: &[&str]| {
        let answers: Vec<(u32, String)> =
            xs.iter().enumerate().map(|(i, a)| (i as u32, a.to_string())).collect();
        majority_vote(&vote_trace(&answers)).unwrap()
    };
    let v = run(&["4", "4", "5"]);
    assert_eq!((v.winner.as_str(), v.tie), ("4", false));
    assert_eq!(v.counts["4"], 2);
    assert_eq!(v.counts["5"], 1);
    let v = run(&["4", "5"]);
    assert_eq!((v.winner.as_str(), v.tie), ("4", true));
    let v = run(&["Paris.", " paris"]);
    assert_eq!(v.winner, "paris");
    assert_eq!(v.counts.len(), 1);
    assert_eq!(v.counts["paris"], 2);
}

#[test]
fn normalizer_agrees_with_oracle_normalizer() {
    for a in common::ANSWER_POOL {
        assert_eq!(normalize_answer(a), common::oracle_normalize(a), "{a:?}");
    }
}

#[test]
fn stats_counts_match_collections() {
    let mut rng = StdRng::seed_from_u64(5);
    for m in ReasoningMethod::ALL {
        for _ in 0..100 {
            let t = random_trace(m, &mut rng, &SynthConfig::default());
            let s = trace_stats(&t);
            assert_eq!(s.node_count, t.nodes.len());
            assert_eq!(s.edge_count, t.edges.len());
            assert_eq!(s.kind_counts.values().sum::<usize>(), t.nodes.len());
        }
    }
    let s = trace_stats(&ab_example());
    assert_eq!((s.node_count, s.depth, s.max_width), (6, 3, 2));
}

#[test]
fn analyze_attaches_vote_for_self_consistency() {
    let answers = vec![(0, "4".to_string()), (1, "4".to_string()), (2, "5".to_string())];
    let out = analyze(vote_trace(&answers));
    match out.analysis {
        Some(Analysis::Vote(v)) => assert_eq!(v.winner, "4"),
        other => panic!("unexpected analysis {other:?}"),
    }
}
