//! Acceptance suite: one PASS or FAIL line per criterion, then a non-zero
//! exit if anything failed.
//!
//!     cargo test -p scopevoice --test acceptance

#[path = "common/mod.rs"]
mod common;

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use nalgebra::Point3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scopevoice::engine::{EventFrame, EventKind, Mode, SessionRecord};
use scopevoice::script::{load_script, replay, Step};
use scopevoice_core::call::{parse_response, FunctionCall};
use scopevoice_core::dictation::{DictationEvent, DictationMachine, ListeningProfile, SessionEvent};
use scopevoice_core::dispatcher::{execute, Registry};
use scopevoice_core::mesh::shapes::icosphere;
use scopevoice_core::prompt::{build_initial_prompt, render_json, schema, ExampleStore, PromptDocument};
use scopevoice_core::proximity::{distance_matrix, min_distance};
use scopevoice_core::router::{BackendError, ChatBackend, DeterministicBackend, IntentRouter, Role, RouterOutcome};
use scopevoice_core::scene::SceneState;
use scopevoice_testkit::corpus::check_case_a;
use scopevoice_testkit::{
    brute_force_distance, brute_force_distance_until, case_a_tasks, fixture, fuzz_reply, lumpy_sphere,
    oracle_infiltration, oracle_matrix, oracle_resection, random_soup, relative_error,
};

type Check = fn() -> Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn grammar_corpus() -> Result<String, String> {
    let took = check_case_a();
    ensure(took < Duration::from_secs(1), || format!("took {took:?}"))?;
    let n = scopevoice_testkit::corpus::full_table().len();
    Ok(format!("{n} phrases in {took:.1?}"))
}

fn checkpoints(steps: &[Step]) -> Vec<BTreeSet<String>> {
    steps
        .iter()
        .filter_map(|s| match s {
            Step::Checkpoint { expect_visible, .. } => Some(expect_visible.clone()),
            Step::Utterance { .. } => None,
        })
        .collect()
}

fn task_fixtures() -> Result<String, String> {
    let case = fixture("case_a");
    let mut want: Vec<BTreeSet<String>> = case_a_tasks(&case)[..4].iter().map(|t| t.expected.clone()).collect();
    want.push(oracle_infiltration(&case));
    want.push(oracle_resection(&case));
    let mut summary = Vec::new();
    for mode in [Mode::Grammar, Mode::Llm] {
        let backend: Option<Arc<dyn ChatBackend>> = (mode == Mode::Llm).then(|| Arc::new(DeterministicBackend) as _);
        let (mut passed, mut expected) = (0, Vec::new());
        for stem in ["tasks_1_to_4", "tasks_5_6"] {
            let mut session = common::session("case_a", mode, backend.clone());
            let steps = load_script(&common::script_path("case_a", stem, mode)).map_err(|e| e.to_string())?;
            expected.extend(checkpoints(&steps));
            let report = replay(&mut session, &steps).map_err(|e| e.to_string())?;
            if let Some(t) = report.tasks.iter().find(|t| !t.passed) {
                return Err(format!("{mode:?} task {}: visible {:?}", t.task, t.actual));
            }
            passed += report.passed;
        }
        ensure(expected == want, || {
            format!("{mode:?} script expectations differ from the named and oracle sets")
        })?;
        ensure(passed == 6, || format!("{mode:?}: {passed}/6"))?;
        summary.push(format!("{mode:?} 6/6").to_lowercase());
    }
    Ok(summary.join(", "))
}

fn geometry_oracle() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for case_id in ["case_a", "case_b"] {
        let case = fixture(case_id);
        let fast = distance_matrix(&case);
        for (i, row) in oracle_matrix(&case).iter().enumerate() {
            for (j, &want) in row.iter().enumerate() {
                worst = worst.max(relative_error(fast.at(i, j), want));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce);
    for k in 0..100 {
        let n = rng.random_range(1..=200);
        let a = if k % 2 == 0 {
            random_soup(&mut rng, n, Point3::origin(), 4.0)
        } else {
            lumpy_sphere(&mut rng, Point3::origin(), 2.0, (n % 2) as u32, 0.1)
        };
        let m = rng.random_range(1..=200);
        let offset = Point3::new(
            rng.random_range(-6.0..6.0),
            rng.random_range(-6.0..6.0),
            rng.random_range(-6.0..6.0),
        );
        let b = random_soup(&mut rng, m, offset, 3.0);
        worst = worst.max(relative_error(min_distance(&a, &b), brute_force_distance(&a, &b)));
    }
    ensure(worst <= 1e-9, || format!("relative error {worst:e}"))?;

    let a = icosphere(Point3::origin(), 10.0, 5);
    let b = icosphere(Point3::new(25.0, 3.0, -2.0), 10.0, 5);
    let start = Instant::now();
    min_distance(&a, &b);
    let budget = start.elapsed();
    let slow = brute_force_distance_until(&a, &b, Some(Instant::now() + budget));
    ensure(slow.is_none(), || format!("brute force finished within {budget:?}"))?;
    Ok(format!(
        "max relative error {worst:.1e}; {} triangles each, accelerated {budget:.1?}",
        a.triangle_count()
    ))
}

/// Feeds an activation at 0, fragments at `said`, and 100 ms ticks, and
/// returns when the query came out.
fn emitted_at(profile: ListeningProfile, said: &[u64]) -> Option<u64> {
    let mut m = DictationMachine::new(profile);
    let mut out = m.on_event(&DictationEvent::Activation { at: 0 }).unwrap();
    let mut said = said.iter().peekable();
    for t in (100..=40_000).step_by(100) {
        while let Some(&&f) = said.peek().filter(|&&&f| f <= t) {
            out.extend(
                m.on_event(&DictationEvent::Fragment {
                    at: f,
                    text: "w".into(),
                })
                .unwrap(),
            );
            said.next();
        }
        out.extend(m.on_event(&DictationEvent::Tick { at: t }).unwrap());
    }
    let ready: Vec<u64> = out
        .iter()
        .filter_map(|e| match e {
            SessionEvent::QueryReady { at, .. } => Some(*at),
            _ => None,
        })
        .collect();
    (ready.len() == 1).then(|| ready[0])
}

fn dictation_timing() -> Result<String, String> {
    let traces: [(&str, ListeningProfile, Vec<u64>, u64); 4] = [
        (
            "study, speech ends early",
            ListeningProfile::study(),
            vec![1_500, 4_200, 6_800],
            10_000,
        ),
        (
            "study, speech crosses the window",
            ListeningProfile::study(),
            vec![3_000, 7_000, 9_500, 11_300],
            13_300,
        ),
        ("refined", ListeningProfile::refined(), vec![800, 2_200], 3_700),
        (
            "refined, late pause",
            ListeningProfile::refined(),
            vec![400, 1_600, 3_050],
            4_550,
        ),
    ];
    for (name, profile, said, want) in traces {
        let got = emitted_at(profile, &said);
        ensure(got == Some(want), || {
            format!("{name}: emitted at {got:?}, expected {want}")
        })?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0xd1c7);
    for k in 0..1_000 {
        let profile = if rng.random_bool(0.5) {
            ListeningProfile::refined()
        } else {
            ListeningProfile::study()
        };
        let mut said = Vec::new();
        let mut t = 0;
        for _ in 0..rng.random_range(1..12) {
            t += rng.random_range(1..3_000);
            said.push(t);
        }
        // a fragment that arrives after emission belongs to no query
        let mut bound = profile.min_listen_ms.max(said[0] + profile.silence_tail_ms);
        for &f in &said[1..] {
            if f < bound {
                bound = bound.max(f + profile.silence_tail_ms);
            }
        }
        let got = emitted_at(profile.clone(), &said);
        ensure(got.is_some_and(|g| g >= bound), || {
            format!("schedule {k} {said:?}: {got:?} before {bound}")
        })?;
        ensure(got == Some(bound), || {
            format!("schedule {k} {said:?}: {got:?}, expected {bound}")
        })?;
    }
    Ok("4 traces exact, 1000 random schedules".into())
}

/// Counts the system messages in each request.
#[derive(Default)]
struct Observed {
    inner: DeterministicBackend,
    systems: Mutex<Vec<usize>>,
}

impl ChatBackend for Observed {
    fn name(&self) -> &str {
        "observed"
    }

    fn complete(&self, messages: &[(Role, &str)]) -> Result<String, BackendError> {
        self.systems
            .lock()
            .unwrap()
            .push(messages.iter().filter(|(r, _)| *r == Role::System).count());
        self.inner.complete(messages)
    }
}

fn visible(s: &SessionRecord) -> BTreeSet<String> {
    s.scene.visible_set().iter().map(|id| id.to_string()).collect()
}

fn dictate(s: &mut SessionRecord, text: &str, at: u64) -> Vec<EventFrame> {
    let mut out = s.handle_utterance(&format!("assistant {text}"), at).unwrap();
    out.extend(s.settle().unwrap());
    out
}

fn anti_drift_and_reset() -> Result<String, String> {
    let observed = Arc::new(Observed::default());
    let mut s = common::session("case_a", Mode::Llm, Some(observed.clone()));
    for (k, task) in case_a_tasks(&fixture("case_a"))[..5].iter().enumerate() {
        dictate(&mut s, task.sentence, k as u64 * 10_000);
    }
    let chat = s.chat.as_ref().unwrap();
    let prompts = chat
        .transcript()
        .iter()
        .filter(|m| m.role == Role::System && m.text == chat.prompt_text())
        .count();
    ensure(chat.reinjections() == 5 && prompts == 6, || {
        format!("{} re-injections, {prompts} prompt copies", chat.reinjections())
    })?;
    let systems = observed.systems.lock().unwrap().clone();
    ensure(systems == [1, 2, 3, 4, 5], || {
        format!("system messages per request {systems:?}")
    })?;

    let sentence = "Prepare the view for the venous reconstruction";
    let mut s = common::session("case_a", Mode::Llm, Some(Arc::new(DeterministicBackend)));
    let out = dictate(&mut s, sentence, 0);
    ensure(out.iter().any(|e| e.kind == EventKind::Retry), || {
        "uncorrected sentence already resolved".into()
    })?;
    let out = dictate(
        &mut s,
        &format!("start over: \"{sentence}\" should only show the portal vein and the mesenteric vein"),
        10_000,
    );
    ensure(out.iter().any(|e| e.kind == EventKind::ChatReset), || {
        "no chat reset".into()
    })?;
    let want = vec![FunctionCall::new(
        "exclusive_visibility",
        ["portal_vein", "mesenteric_vein"],
    )];
    let last = s.chat.as_ref().unwrap().prompt().examples.last().cloned();
    ensure(
        last.as_ref()
            .is_some_and(|e| e.sentence == sentence && e.result == want),
        || format!("last example {last:?}"),
    )?;
    dictate(&mut s, "tumor on", 20_000);
    dictate(&mut s, sentence, 30_000);
    let shown = visible(&s);
    ensure(
        shown == BTreeSet::from(["mesenteric_vein".into(), "portal_vein".into()]),
        || format!("visible {shown:?}"),
    )?;
    Ok("5 turns, 5 re-injections; corrected sentence resolves after reset".into())
}

struct Fuzzed {
    rng: Mutex<ChaCha8Rng>,
    replies: AtomicUsize,
}

impl ChatBackend for Fuzzed {
    fn name(&self) -> &str {
        "fuzzed"
    }

    fn complete(&self, _: &[(Role, &str)]) -> Result<String, BackendError> {
        self.replies.fetch_add(1, Ordering::Relaxed);
        Ok(fuzz_reply(&mut *self.rng.lock().unwrap()))
    }
}

fn safety_gate() -> Result<String, String> {
    // the parser and dispatcher on their own
    let case = fixture("case_a");
    let reg = Registry::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5afe);
    let mut unregistered = 0;
    for _ in 0..10_000 {
        if let Ok(calls) = parse_response(&fuzz_reply(&mut rng)) {
            if execute(&reg, &case, &SceneState::initial(&case), &calls).is_ok() {
                unregistered += calls.iter().filter(|c| !reg.contains(&c.name)).count();
            }
        }
    }

    // the router: executed replies only ever carry registered names
    let m = distance_matrix(&case);
    let fuzzed = Arc::new(Fuzzed {
        rng: Mutex::new(ChaCha8Rng::seed_from_u64(0xf022)),
        replies: AtomicUsize::new(0),
    });
    let router = IntentRouter::new(
        Arc::new(case.clone()),
        Arc::new(m),
        Arc::new(Registry::standard()),
        fuzzed.clone(),
        Arc::new(Mutex::new(ExampleStore::default())),
    );
    let mut chat = router.start_session().unwrap();
    for turn in 0..10_000 {
        if turn % 200 == 0 {
            chat = router.start_session().unwrap();
        }
        match router.submit_query(&mut chat, "do something").unwrap() {
            RouterOutcome::Executed(calls) => unregistered += calls.iter().filter(|c| !reg.contains(&c.name)).count(),
            RouterOutcome::ResetPerformed { session, .. } => chat = *session,
            RouterOutcome::Retry { .. } => {}
        }
    }

    // whole sessions: a query that ends in Retry changes nothing
    let fuzzed = Arc::new(Fuzzed {
        rng: Mutex::new(ChaCha8Rng::seed_from_u64(0xf023)),
        replies: AtomicUsize::new(0),
    });
    let (mut retries, mut mutated) = (0, 0);
    let mut s = common::session("case_a", Mode::Llm, Some(fuzzed.clone()));
    for k in 0..10_000u64 {
        if k % 200 == 0 {
            s = common::session("case_a", Mode::Llm, Some(fuzzed.clone()));
        }
        let before = s.view().digest;
        let at = s.clock_ms();
        let mut out = s.handle_utterance("assistant do something", at).unwrap();
        out.extend(s.settle().unwrap());
        let Some(q) = out.iter().position(|e| e.kind == EventKind::QueryReady) else {
            return Err(format!("query {k} never completed"));
        };
        let after_query = &out[q + 1..];
        if after_query.iter().any(|e| e.kind == EventKind::Retry) {
            retries += 1;
            let changed = after_query
                .iter()
                .any(|e| matches!(e.kind, EventKind::Effects | EventKind::StateSnapshot));
            // scrolling between queries is the only other source of change
            let scrolled = out[..q].iter().any(|e| e.kind == EventKind::Effects);
            if changed || (!scrolled && s.view().digest != before) {
                mutated += 1;
            }
        }
    }
    ensure(unregistered == 0, || {
        format!("{unregistered} unregistered calls executed")
    })?;
    ensure(mutated == 0, || {
        format!("{mutated} of {retries} retries changed the scene")
    })?;
    ensure(retries > 1_000, || format!("only {retries} retries; fuzzer too weak"))?;
    Ok(format!(
        "0 unregistered executions, 0 mutations over {retries} engine retries"
    ))
}

fn prompt_format() -> Result<String, String> {
    let case = fixture("case_a");
    let doc = build_initial_prompt(
        &case,
        &distance_matrix(&case),
        &Registry::standard(),
        &ExampleStore::shipped(),
    )
    .map_err(|e| e.to_string())?;
    let text = render_json(&doc);
    schema::validate(&text).map_err(|e| e.join("; "))?;
    let back = PromptDocument::parse(&text).map_err(|e| e.to_string())?;
    ensure(render_json(&back) == text, || "round trip changed the text".into())?;
    let golden = std::fs::read(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../core/tests/golden/case_a_prompt.json"
    ))
    .map_err(|e| e.to_string())?;
    ensure(golden == text.as_bytes(), || "differs from golden file".into())?;
    Ok(format!("{} bytes, matches golden", text.len()))
}

fn main() {
    let checks: [(&str, Check); 7] = [
        ("grammar corpus", grammar_corpus),
        ("task fixtures", task_fixtures),
        ("geometry oracle", geometry_oracle),
        ("dictation timing", dictation_timing),
        ("anti-drift and reset", anti_drift_and_reset),
        ("safety gate", safety_gate),
        ("prompt format", prompt_format),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match result {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} of 7 criteria failed");
        std::process::exit(1);
    }
    println!("7 of 7 criteria passed");
}
