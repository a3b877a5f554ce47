//! What every case_a keyword should do, written out by hand from the case
//! file, and a checker that parses and executes each phrase.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use scopevoice_core::call::FunctionCall;
use scopevoice_core::dispatcher::{execute, Effect, Registry};
use scopevoice_core::grammar::{build_lexicon, parse_utterance, ParseMode};
use scopevoice_core::scene::{CtScroll, PatientCase, SceneState};

use crate::{case_path, fixture};

#[derive(Debug, Clone, PartialEq)]
pub enum Expect {
    Segments(Vec<String>),
    Freeze,
    Tracking,
    CtPanel,
    PatientPanel,
    Scroll(CtScroll),
    Capture(bool),
    PoseReset,
}

/// Segment phrases straight from the case file, independent of the loader.
pub fn segment_table(case_id: &str) -> BTreeMap<String, Expect> {
    let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(case_path(case_id)).unwrap()).unwrap();
    let mut out = BTreeMap::new();
    for s in raw["segments"].as_array().unwrap() {
        let id = s["id"].as_str().unwrap().to_string();
        let mut names = vec![s["display_name"].as_str().unwrap().to_lowercase()];
        names.extend(
            s["synonyms"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_str().unwrap().to_lowercase()),
        );
        for n in names {
            out.insert(n, Expect::Segments(vec![id.clone()]));
        }
    }
    out
}

/// The case_a lexicon as it should come out of the builder.
pub fn full_table() -> BTreeMap<String, Expect> {
    let mut t = segment_table("case_a");
    let arteries = [
        "celiac_trunk",
        "gastroduodenal_artery",
        "superior_mesenteric_artery",
        "splenic_artery",
        "gastric_artery",
        "hepatic_artery",
    ];
    let veins = ["portal_vein", "vena_cava", "splenic_vein", "mesenteric_vein"];
    t.insert("arteries".into(), Expect::Segments(arteries.map(String::from).to_vec()));
    t.insert("veins".into(), Expect::Segments(veins.map(String::from).to_vec()));
    for p in [
        "patient history",
        "patient diagnosis",
        "patient medication",
        "diagnosis",
        "medication",
    ] {
        t.insert(p.into(), Expect::PatientPanel);
    }
    for p in [
        "ct",
        "ct image",
        "ct images",
        "tomography",
        "computed tomography",
        "ct scan",
        "ct scans",
    ] {
        t.insert(p.into(), Expect::CtPanel);
    }
    t.insert("go up".into(), Expect::Scroll(CtScroll::Up));
    t.insert("go down".into(), Expect::Scroll(CtScroll::Down));
    t.insert("stop".into(), Expect::Scroll(CtScroll::Idle));
    t.insert("capture photo".into(), Expect::Capture(false));
    t.insert("capture hologram".into(), Expect::Capture(true));
    t.insert("freeze".into(), Expect::Freeze);
    t.insert("marker tracking".into(), Expect::Tracking);
    t.insert("reset".into(), Expect::PoseReset);
    t
}

fn run(case: &PatientCase, reg: &Registry, state: &SceneState, call: FunctionCall) -> (SceneState, Vec<Effect>) {
    execute(reg, case, state, &[call]).unwrap()
}

pub fn check_phrase(case: &PatientCase, reg: &Registry, phrase: &str, expect: &Expect) {
    let lex = build_lexicon(case).unwrap();
    let blank = SceneState::initial(case);
    let parse = parse_utterance(&lex, phrase).unwrap_or_else(|| panic!("{phrase:?} did not parse"));
    assert_eq!(parse.matched_phrase, phrase);
    match expect {
        Expect::Segments(ids) => {
            let on = |s: &SceneState| ids.iter().all(|id| s.is_visible(id)) && s.visible_set().len() == ids.len();
            assert_eq!(parse.mode, ParseMode::Toggle, "{phrase}");
            let (toggled, _) = run(case, reg, &blank, parse.to_call());
            assert!(on(&toggled), "{phrase}: toggle from blank");
            let (back, _) = run(case, reg, &toggled, parse.to_call());
            assert_eq!(back, blank, "{phrase}: second toggle");
            let p_on = parse_utterance(&lex, &format!("{phrase} on")).unwrap();
            assert_eq!(p_on.mode, ParseMode::On);
            let (s, _) = run(case, reg, &blank, p_on.to_call());
            assert!(on(&s), "{phrase} on");
            let (s2, _) = run(case, reg, &s, p_on.to_call());
            assert_eq!(s2, s, "{phrase} on is idempotent");
            let p_off = parse_utterance(&lex, &format!("{phrase} off")).unwrap();
            assert_eq!(p_off.mode, ParseMode::Off);
            assert_eq!(run(case, reg, &s, p_off.to_call()).0, blank, "{phrase} off");
        }
        Expect::Freeze => {
            let (s, _) = run(case, reg, &blank, parse.to_call());
            assert!(s.frozen() && !s.marker_tracking());
        }
        Expect::Tracking => {
            let frozen = run(case, reg, &blank, FunctionCall::new("control", ["freeze"])).0;
            let (s, _) = run(case, reg, &frozen, parse.to_call());
            assert!(!s.frozen() && s.marker_tracking());
        }
        Expect::CtPanel => {
            let (s, _) = run(case, reg, &blank, parse.to_call());
            assert!(s.ct_panel_open());
            assert!(!run(case, reg, &s, parse.to_call()).0.ct_panel_open());
        }
        Expect::PatientPanel => {
            let (s, _) = run(case, reg, &blank, parse.to_call());
            assert!(s.patient_panel_open());
            assert!(!run(case, reg, &s, parse.to_call()).0.patient_panel_open());
        }
        Expect::Scroll(dir) => {
            // scrolling needs the CT panel
            assert!(
                execute(reg, case, &blank, &[parse.to_call()]).is_err(),
                "{phrase} without CT"
            );
            let open = run(case, reg, &blank, FunctionCall::new("control", ["toggle_ct"])).0;
            let moving = run(case, reg, &open, FunctionCall::new("control", ["scroll_down"])).0;
            let (s, _) = run(case, reg, &moving, parse.to_call());
            assert_eq!(s.ct_scroll(), *dir, "{phrase}");
        }
        Expect::Capture(holo) => {
            let (s, fx) = run(case, reg, &blank, parse.to_call());
            assert_eq!(s, blank);
            assert_eq!(fx, vec![Effect::CaptureRequested { with_holograms: *holo }]);
        }
        Expect::PoseReset => {
            let (s, fx) = run(case, reg, &blank, parse.to_call());
            assert_eq!(s, blank);
            assert_eq!(fx, vec![Effect::PoseReset]);
        }
    }
}

/// Checks the case_a lexicon against [`full_table`] phrase by phrase and
/// returns how long the parse and execute loop took.
pub fn check_case_a() -> Duration {
    let case = fixture("case_a");
    let reg = Registry::standard();
    let lex = build_lexicon(&case).unwrap();
    let table = full_table();
    let phrases: Vec<&str> = lex.entries().map(|(p, _)| p).collect();
    let listed: Vec<&str> = table.keys().map(String::as_str).collect();
    assert_eq!(phrases, listed, "lexicon and table disagree");
    let start = Instant::now();
    for (phrase, expect) in &table {
        check_phrase(&case, &reg, phrase, expect);
    }
    start.elapsed()
}
