mod common;

use common::{random_scenario, Knobs};
use holosim_core::scenario::{parse_scenario, reference_example, render, REFERENCE_SCENARIO};
use holosim_core::ScenarioError;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn line_of(text: &str, needle: &str) -> usize {
    text.lines().position(|l| l.contains(needle)).unwrap() + 1
}

#[test]
fn reference_round_trips() {
    let s = reference_example();
    assert_eq!(parse_scenario(&render(&s)).unwrap(), s);
}

#[test]
fn out_of_range_error_names_its_line() {
    let text = REFERENCE_SCENARIO.replace("α A=0.05", "α A=1.2");
    let line = line_of(&text, "α A=1.2");
    match parse_scenario(&text) {
        Err(ScenarioError::Parse { line: l, reason }) => {
            assert_eq!(l, line);
            assert!(reason.contains("1.2"), "{reason}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn undeclared_field_is_rejected() {
    let text = REFERENCE_SCENARIO.replace("C = D", "C = D H");
    let err = parse_scenario(&text).unwrap_err().to_string();
    assert!(err.contains('H'), "{err}");
}

#[test]
fn malformed_inputs() {
    for (from, to) in [
        ("[agents]", "[agentz]"),
        ("k = 1", "k = one"),
        ("horizon = 50", "horizont = 50"),
        ("7 β answer c1", "7 β answer c9"),
        ("5 α query A β", "5 α query Q β"),
    ] {
        let text = REFERENCE_SCENARIO.replace(from, to);
        assert_ne!(text, REFERENCE_SCENARIO, "{from}");
        assert!(parse_scenario(&text).is_err(), "{from} -> {to}");
    }
    assert!(parse_scenario("").is_err());
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let text = REFERENCE_SCENARIO.replace("[budgets]", "# budgets follow\n\n[budgets]   # inline");
    assert_eq!(parse_scenario(&text).unwrap(), reference_example());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_scenarios_round_trip(seed in any::<u64>(), anneal in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_scenario(&mut rng, &Knobs { anneal_p0: (anneal * 100.0).round() / 100.0, lottery: seed % 2 == 0 });
        let text = render(&s);
        let back = parse_scenario(&text).unwrap();
        prop_assert_eq!(render(&back), text);
        prop_assert_eq!(back, s);
    }

    #[test]
    fn parser_never_panics(text in "\\PC{0,200}") {
        let _ = parse_scenario(&text);
    }
}
