//! Chat sessions end to end against the offline backend: prompt re-sending,
//! the correction loop, and a fuzzed backend that must never get an
//! unregistered call executed.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scopevoice_core::call::{parse_response, FunctionCall};
use scopevoice_core::dispatcher::{execute, Registry};
use scopevoice_core::prompt::ExampleStore;
use scopevoice_core::proximity::distance_matrix;
use scopevoice_core::router::{BackendError, ChatBackend, DeterministicBackend, IntentRouter, Role, RouterOutcome};
use scopevoice_core::scene::{PatientCase, SceneState};
use scopevoice_testkit::{case_a_tasks, fixture, fuzz_reply};

fn router_with(case: PatientCase, backend: Arc<dyn ChatBackend>, store: ExampleStore) -> IntentRouter {
    let m = distance_matrix(&case);
    IntentRouter::new(
        Arc::new(case),
        Arc::new(m),
        Arc::new(Registry::standard()),
        backend,
        Arc::new(Mutex::new(store)),
    )
}

/// Counts system prompts in each request before delegating.
#[derive(Default)]
struct Observed {
    inner: DeterministicBackend,
    system_counts: Mutex<Vec<usize>>,
}

impl ChatBackend for Observed {
    fn name(&self) -> &str {
        "observed"
    }

    fn complete(&self, messages: &[(Role, &str)]) -> Result<String, BackendError> {
        self.system_counts
            .lock()
            .unwrap()
            .push(messages.iter().filter(|(r, _)| *r == Role::System).count());
        self.inner.complete(messages)
    }
}

#[test]
fn five_turns_five_reinjections() {
    let backend = Arc::new(Observed::default());
    let case = fixture("case_a");
    let tasks = case_a_tasks(&case);
    let router = router_with(case, backend.clone(), ExampleStore::shipped());
    let mut session = router.start_session().unwrap();
    for task in &tasks[..5] {
        assert!(matches!(
            router.submit_query(&mut session, task.sentence).unwrap(),
            RouterOutcome::Executed(_)
        ));
    }
    assert_eq!(session.turn_count(), 5);
    assert_eq!(session.reinjections(), 5);
    let roles: Vec<Role> = session.transcript().iter().map(|m| m.role).collect();
    let mut expected = vec![Role::System];
    for _ in 0..5 {
        expected.extend([Role::User, Role::Assistant, Role::System]);
    }
    assert_eq!(roles, expected);
    assert!(session
        .transcript()
        .iter()
        .filter(|m| m.role == Role::System)
        .all(|m| m.text == session.prompt_text()));
    // the k-th request already carries the prompt k times
    assert_eq!(*backend.system_counts.lock().unwrap(), vec![1, 2, 3, 4, 5]);
}

#[test]
fn failed_turn_is_not_counted() {
    struct Down;
    impl ChatBackend for Down {
        fn name(&self) -> &str {
            "down"
        }
        fn complete(&self, _: &[(Role, &str)]) -> Result<String, BackendError> {
            Err(BackendError::Unavailable("offline".into()))
        }
    }
    let router = router_with(fixture("case_a"), Arc::new(Down), ExampleStore::shipped());
    let mut session = router.start_session().unwrap();
    assert!(matches!(
        router.submit_query(&mut session, "show the tumor").unwrap(),
        RouterOutcome::Retry { .. }
    ));
    assert_eq!(session.transcript().len(), 1);
    assert_eq!(session.reinjections(), 0);
}

#[test]
fn correction_changes_the_next_answer() {
    let sentence = "Prepare the view for the venous reconstruction";
    let logs = tempfile::tempdir().unwrap();
    let store = ExampleStore::shipped().with_log(logs.path(), "case_a").unwrap();
    let router = router_with(fixture("case_a"), Arc::new(DeterministicBackend), store);
    let mut session = router.start_session().unwrap();
    assert!(matches!(
        router.submit_query(&mut session, sentence).unwrap(),
        RouterOutcome::Retry { .. }
    ));

    let reset = format!("Start over: \"{sentence}\" should only show the portal vein and the mesenteric vein");
    let (mut next, correction) = match router.submit_query(&mut session, &reset).unwrap() {
        RouterOutcome::ResetPerformed { session, correction } => (*session, correction),
        other => panic!("expected a reset, got {other:?}"),
    };
    let want = vec![FunctionCall::new(
        "exclusive_visibility",
        ["portal_vein", "mesenteric_vein"],
    )];
    assert_eq!(correction.sentence, sentence);
    assert_eq!(correction.result, want);
    assert!(session.is_closed());
    assert!(router.submit_query(&mut session, sentence).is_err());

    let last = next.prompt().examples.last().unwrap();
    assert_eq!((last.sentence.as_str(), &last.result), (sentence, &want));
    assert_eq!(next.transcript().len(), 1);
    match router.submit_query(&mut next, sentence).unwrap() {
        RouterOutcome::Executed(calls) => assert_eq!(calls, want),
        other => panic!("expected execution, got {other:?}"),
    }

    // the correction survives a restart through the log
    let reloaded = ExampleStore::shipped().with_log(logs.path(), "case_a").unwrap();
    assert_eq!(reloaded.corrections().len(), 1);
    assert_eq!(reloaded.corrections()[0].result, want);
}

/// Replies with the next fuzzed string.
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

#[test]
fn fuzzed_replies_never_run_unregistered_calls() {
    let case = fixture("case_a");
    let reg = Registry::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut parsed = 0;
    for _ in 0..10_000 {
        let reply = fuzz_reply(&mut rng);
        if let Ok(calls) = parse_response(&reply) {
            parsed += 1;
            let before = SceneState::initial(&case);
            if execute(&reg, &case, &before, &calls).is_ok() {
                assert!(calls.iter().all(|c| reg.contains(&c.name)), "{reply:?}");
            }
        }
    }
    assert!(parsed > 1_000, "fuzzer too weak: {parsed}");
}

#[test]
fn fuzzed_backend_through_the_router() {
    let backend = Arc::new(Fuzzed {
        rng: Mutex::new(ChaCha8Rng::seed_from_u64(11)),
        replies: AtomicUsize::new(0),
    });
    let case = fixture("case_a");
    let reg = Registry::standard();
    let router = router_with(case.clone(), backend.clone(), ExampleStore::default());
    let mut state = SceneState::initial(&case);
    let (mut executed, mut retried, mut unregistered, mut mutated) = (0, 0, 0, 0);
    let mut session = router.start_session().unwrap();
    for turn in 0..10_000 {
        if turn % 200 == 0 {
            session = router.start_session().unwrap();
        }
        let before = state.clone();
        match router.submit_query(&mut session, "do something").unwrap() {
            RouterOutcome::Executed(calls) => {
                unregistered += calls.iter().filter(|c| !reg.contains(&c.name)).count();
                if let Ok((next, _)) = execute(&reg, &case, &state, &calls) {
                    state = next;
                }
                executed += 1;
            }
            RouterOutcome::Retry { .. } => {
                retried += 1;
                if state != before {
                    mutated += 1;
                }
            }
            RouterOutcome::ResetPerformed { session: next, .. } => session = *next,
        }
    }
    assert_eq!(backend.replies.load(Ordering::Relaxed), 10_000);
    assert_eq!((unregistered, mutated), (0, 0));
    assert!(
        executed > 20 && retried > 1_000,
        "executed {executed}, retried {retried}"
    );
}
