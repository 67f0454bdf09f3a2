use bazaar_core::agent::{parse_model_output, ParseErrorKind, ParsedOutput};
use proptest::prelude::*;
use proptest::test_runner::TestRunner;
use serde_json::{Map, Value};

fn words(max_lines: usize) -> impl Strategy<Value = String> {
    prop::collection::vec(prop::collection::vec("[a-z0-9,.?']{1,9}", 1..8).prop_map(|w| w.join(" ")), 1..=max_lines)
        .prop_map(|lines| lines.join("\n"))
}

fn json_value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<bool>().prop_map(Value::Bool),
        (-1_000_000i64..1_000_000).prop_map(Value::from),
        "\\PC{0,20}".prop_map(Value::String),
        prop::collection::vec("[a-z ]{0,8}", 0..4).prop_map(Value::from),
    ]
}

fn arguments() -> impl Strategy<Value = Map<String, Value>> {
    prop::collection::btree_map("[a-z_]{1,12}", json_value(), 0..5).prop_map(|m| m.into_iter().collect())
}

fn parsed_output() -> impl Strategy<Value = ParsedOutput> {
    prop_oneof![
        (words(3), "[a-z][a-z_]{0,20}", arguments()).prop_map(|(thought, tool_name, arguments)| {
            ParsedOutput::Action {
                thought,
                tool_name,
                arguments,
            }
        }),
        (words(3), words(4)).prop_map(|(thought, answer)| ParsedOutput::FinalAnswer { thought, answer }),
        words(2).prop_map(|answer| ParsedOutput::FinalAnswer {
            thought: String::new(),
            answer
        }),
    ]
}

pub fn render_then_parse_is_identity() {
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 500,
        failure_persistence: None,
        ..ProptestConfig::default()
    });
    runner
        .run(&parsed_output(), |out| {
            let text = out.render();
            let back = parse_model_output(&text).expect("well-formed output parses");
            prop_assert_eq!(&back, &out);
            prop_assert_eq!(back.render(), text);
            Ok(())
        })
        .unwrap();
}

const ACTION_HEAD: &str = "Thought: I should renew it.\nAction: renew_listing\n";

fn malformed() -> Vec<(String, ParseErrorKind)> {
    use ParseErrorKind::*;
    let with_input = |input: &str| format!("{ACTION_HEAD}Action Input:{input}");
    vec![
        (String::new(), UnknownShape),
        ("   \n\t\n".into(), UnknownShape),
        ("Action: renew_listing\nAction Input: {}".into(), MissingMarker),
        ("Action Input: {\"listing_id\": \"L7\"}".into(), MissingMarker),
        ("Thought: just thinking out loud".into(), MissingMarker),
        ("Thought: a\nThought: b\nAction: x\nAction Input: {}".into(), UnknownShape),
        ("Thought: a\nThought: b\nFinal Answer: c".into(), UnknownShape),
        ("Thought: a\nAction Input: {}".into(), MissingMarker),
        (ACTION_HEAD.into(), MissingMarker),
        (format!("{ACTION_HEAD}Thought: again"), MissingMarker),
        (with_input(" {\"listing_id\": "), MalformedArguments),
        (with_input(" [\"L7\"]"), MalformedArguments),
        (with_input(" \"L7\""), MalformedArguments),
        (with_input(" 42"), MalformedArguments),
        (with_input(" null"), MalformedArguments),
        (with_input(" {'listing_id': 'L7'}"), MalformedArguments),
        (with_input("\n```json\n{\"listing_id\": \"L7\"}"), MalformedArguments),
        (with_input(""), MalformedArguments),
        ("Thought: a\nAction: renew listing\nAction Input: {}".into(), UnknownShape),
        ("Thought:\nAction: renew_listing\nAction Input: {}".into(), UnknownShape),
    ]
}

pub fn malformed_fixtures_give_designated_errors() {
    let fixtures = malformed();
    assert_eq!(fixtures.len(), 20);
    for (i, (text, kind)) in fixtures.iter().enumerate() {
        match parse_model_output(text) {
            Err(e) => assert_eq!(e.kind, *kind, "fixture {i}: {text:?} gave {e}"),
            Ok(p) => panic!("fixture {i}: {text:?} parsed as {p:?}"),
        }
    }
}

#[test]
fn render_then_parse_is_identity_test() {
    render_then_parse_is_identity();
}

#[test]
fn malformed_fixtures_give_designated_errors_test() {
    malformed_fixtures_give_designated_errors();
}
