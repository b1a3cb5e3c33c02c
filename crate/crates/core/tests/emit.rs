mod common;

use std::fs;
use std::time::Instant;

use proptest::prelude::*;
use rand::rngs::StdRng;
use rand::SeedableRng;
use reasongraph_core::synth::{random_trace, SynthConfig};
use reasongraph_core::{
    analyze, emit, escape_label, validate_diagram, wrap_label, Direction, ReasoningMethod,
    VisualizationConfig,
};

fn is_edge(line: &str) -> bool {
    line.contains(" --> ") || line.contains(" ==> ")
}

fn is_node(line: &str) -> bool {
    line.starts_with("    n") && !is_edge(line)
}

fn random_config(rng: &mut StdRng) -> VisualizationConfig {
    use rand::Rng;
    let wrap = rng.random_range(8..=120);
    VisualizationConfig {
        direction: if rng.random_bool(0.5) { Direction::TopDown } else { Direction::LeftRight },
        wrap_width: wrap,
        show_scores: rng.random_bool(0.5),
        max_label_chars: rng.random_range(wrap..=400),
        ..VisualizationConfig::default()
    }
}

#[test]
fn emitted_diagrams_validate() {
    let mut rng = StdRng::seed_from_u64(0xd1a9);
    for i in 0..1000 {
        let t = random_trace(ReasoningMethod::ALL[i % 6], &mut rng, &SynthConfig::default());
        let t = analyze(t).trace;
        let config = random_config(&mut rng);
        let doc = emit(&t, &config).unwrap();
        let problems = validate_diagram(&doc);
        assert!(problems.is_empty(), "{problems:?}\n{}", doc.text);

        let lines: Vec<&str> = doc.text.lines().collect();
        assert_eq!(lines.iter().filter(|l| is_node(l)).count(), t.nodes.len());
        assert_eq!(lines.iter().filter(|l| is_edge(l)).count(), t.edges.len());
        let selected = t.edges.iter().filter(|e| e.on_selected_path).count();
        assert_eq!(lines.iter().filter(|l| l.contains(" ==> ")).count(), selected);
        assert_eq!(doc.id_map.len(), t.nodes.len());
        assert_eq!(emit(&t, &config).unwrap(), doc, "emission must be deterministic");
    }
}

#[test]
fn hundred_node_emission_is_fast() {
    let t = common::hundred_node_trace();
    let config = VisualizationConfig::default();
    let mut times: Vec<f64> = (0..100)
        .map(|_| {
            let started = Instant::now();
            let doc = emit(&t, &config).unwrap();
            std::hint::black_box(doc);
            started.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let median = times[50];
    assert!(median < 0.050, "median emit {median:.6}s");
}

proptest! {
    #[test]
    fn escape_is_identity_on_safe_text(s in "[^\"<>&\n]*") {
        prop_assert_eq!(escape_label(&s), s);
    }

    #[test]
    fn escaped_labels_never_contain_raw_specials(s in any::<String>()) {
        let e = escape_label(&s);
        prop_assert!(!e.contains('"') && !e.contains('\n'));
        prop_assert!(!e.replace("<br/>", "").contains(['<', '>']));
    }

    #[test]
    fn wrapped_lines_respect_width(words in proptest::collection::vec("[a-z]{1,40}", 0..30), w in 8usize..60) {
        let label = words.join(" ");
        let wrapped = wrap_label(&label, w, 240);
        for line in wrapped.split("<br/>") {
            prop_assert!(line.chars().count() <= w, "{line:?} wider than {w}");
        }
        if label.chars().count() <= 240 {
            prop_assert_eq!(
                wrapped.replace("<br/>", "").replace(' ', ""),
                label.replace(' ', "")
            );
        }
    }
}

#[test]
fn wrap_examples() {
    assert_eq!(wrap_label("alpha beta gamma", 10, 240), "alpha beta<br/>gamma");
    assert_eq!(wrap_label("short", 30, 240), "short");
    let long = "a".repeat(241);
    let wrapped = wrap_label(&long, 30, 240);
    let lines: Vec<&str> = wrapped.split("<br/>").collect();
    assert_eq!(lines.len(), 9);
    assert!(lines[..8].iter().all(|l| l.chars().count() == 30));
    assert_eq!(lines[8], "…");
    assert_eq!(wrapped.replace("<br/>", ""), format!("{}…", "a".repeat(240)));
}

#[test]
fn golden_diagrams_match_byte_for_byte() {
    for g in common::goldens() {
        let first = common::render_golden(&g);
        assert_eq!(common::render_golden(&g), first);
        let path = common::golden_dir().join(format!("{}.mmd", g.name));
        if std::env::var_os("REASONGRAPH_BLESS").is_some() {
            fs::write(&path, &first).unwrap();
        }
        let want = fs::read_to_string(&path).unwrap();
        assert_eq!(first, want, "{} drifted from its golden file", g.name);
    }
}
