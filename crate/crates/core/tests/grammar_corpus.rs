//! Every phrase in the case_a lexicon, parsed and executed against a fresh
//! scene, compared with the hand-written table in the testkit.

use std::time::Duration;

use scopevoice_core::call::FunctionCall;
use scopevoice_core::grammar::{build_lexicon, parse_utterance};
use scopevoice_testkit::corpus::check_case_a;
use scopevoice_testkit::fixture;

#[test]
fn every_case_a_phrase_does_what_the_table_says() {
    let took = check_case_a();
    assert!(took < Duration::from_secs(1), "{took:?}");
}

#[test]
fn named_synonym_pairs_share_targets() {
    let case = fixture("case_a");
    let lex = build_lexicon(&case).unwrap();
    for group in [
        ["tumor", "lesion", "cancer"].as_slice(),
        &["hepatic artery", "liver artery"],
    ] {
        let first = lex.get(group[0]).unwrap();
        for p in group {
            assert_eq!(lex.get(p).unwrap(), first, "{p}");
        }
    }
}

#[test]
fn keyword_inside_a_sentence() {
    let case = fixture("case_a");
    let lex = build_lexicon(&case).unwrap();
    let p = parse_utterance(&lex, "please, the superior mesenteric artery on").unwrap();
    assert_eq!(
        p.to_call(),
        FunctionCall::new("set_visibility", ["superior_mesenteric_artery", "on"])
    );
    assert!(parse_utterance(&lex, "what a lovely morning").is_none());
}
