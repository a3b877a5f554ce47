//! Function registry and the all-or-nothing executor shared by both voice
//! interfaces. This is the only place a [`FunctionCall`] turns into a scene
//! mutation.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::call::FunctionCall;
use crate::scene::{
    Category, ControlAction, ControlEffect, PatientCase, SceneState, SegmentId, Target, VisibilityMode,
};

/// Name of the chat-reset function. The router intercepts it; it never reaches
/// [`execute`].
pub const RESET_CHAT: &str = "reset_chat";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgDomain {
    Segment,
    Category,
    Mode,
    Action,
    FreeText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exact(usize),
    AtLeast(usize),
}

impl Arity {
    fn accepts(self, n: usize) -> bool {
        match self {
            Arity::Exact(k) => n == k,
            Arity::AtLeast(k) => n >= k,
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Exact(k) => write!(f, "{k}"),
            Arity::AtLeast(k) => write!(f, "at least {k}"),
        }
    }
}

/// What a registered function does when executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    SetVisibility,
    SetGroupVisibility,
    ExclusiveVisibility,
    ResetVisibility,
    Control,
    ResetChat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionDescriptor {
    pub name: String,
    /// Parameter labels and domains. For variadic functions the last entry
    /// repeats.
    pub params: Vec<(String, ArgDomain)>,
    pub arity: Arity,
    pub binding: Binding,
}

impl FunctionDescriptor {
    pub fn new(name: &str, binding: Binding, params: &[(&str, ArgDomain)]) -> Self {
        Self {
            name: name.to_string(),
            params: params.iter().map(|(p, d)| (p.to_string(), *d)).collect(),
            arity: Arity::Exact(params.len()),
            binding,
        }
    }

    pub fn variadic(mut self, min: usize) -> Self {
        self.arity = Arity::AtLeast(min);
        self
    }

    fn domain_of(&self, index: usize) -> ArgDomain {
        self.params
            .get(index)
            .or(self.params.last())
            .map(|(_, d)| *d)
            .unwrap_or(ArgDomain::FreeText)
    }

    /// The signature line listed in the prompt's method list.
    pub fn signature(&self) -> String {
        let mut parts: Vec<String> = self
            .params
            .iter()
            .map(|(label, domain)| match domain {
                ArgDomain::Segment | ArgDomain::Category => label.clone(),
                ArgDomain::Mode => "on|off|toggle".to_string(),
                ArgDomain::Action => ControlAction::ALL.map(ControlAction::as_str).join("|"),
                ArgDomain::FreeText => format!("\"<{label}>\""),
            })
            .collect();
        if matches!(self.arity, Arity::AtLeast(_)) {
            parts.push("...".into());
        }
        format!("{}({})", self.name, parts.join(", "))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("function {0} is already registered")]
    DuplicateName(String),
    #[error("registry must contain reset_chat exactly once")]
    MissingResetChat,
}

#[derive(Debug, Default, Clone)]
pub struct RegistryBuilder {
    descriptors: Vec<FunctionDescriptor>,
}

impl RegistryBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(mut self, d: FunctionDescriptor) -> Result<Self, RegistryError> {
        if self.descriptors.iter().any(|x| x.name == d.name) {
            return Err(RegistryError::DuplicateName(d.name));
        }
        self.descriptors.push(d);
        Ok(self)
    }

    pub fn finalize(self) -> Result<Registry, RegistryError> {
        let resets = self
            .descriptors
            .iter()
            .filter(|d| d.binding == Binding::ResetChat && d.name == RESET_CHAT)
            .count();
        if resets != 1 {
            return Err(RegistryError::MissingResetChat);
        }
        Ok(Registry {
            descriptors: self.descriptors,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    descriptors: Vec<FunctionDescriptor>,
}

impl Registry {
    /// The shipped function surface.
    pub fn standard() -> Self {
        use ArgDomain::*;
        RegistryBuilder::new()
            .register(FunctionDescriptor::new(
                "set_visibility",
                Binding::SetVisibility,
                &[("organType", Segment), ("mode", Mode)],
            ))
            .and_then(|r| {
                r.register(FunctionDescriptor::new(
                    "set_group_visibility",
                    Binding::SetGroupVisibility,
                    &[("organCategory", Category), ("mode", Mode)],
                ))
            })
            .and_then(|r| {
                r.register(
                    FunctionDescriptor::new(
                        "exclusive_visibility",
                        Binding::ExclusiveVisibility,
                        &[("organType", Segment)],
                    )
                    .variadic(1),
                )
            })
            .and_then(|r| {
                r.register(FunctionDescriptor::new(
                    "reset_visibility",
                    Binding::ResetVisibility,
                    &[],
                ))
            })
            .and_then(|r| {
                r.register(FunctionDescriptor::new(
                    "control",
                    Binding::Control,
                    &[("action", Action)],
                ))
            })
            .and_then(|r| {
                r.register(FunctionDescriptor::new(
                    RESET_CHAT,
                    Binding::ResetChat,
                    &[("sentence", FreeText), ("corrected result", FreeText)],
                ))
            })
            .and_then(RegistryBuilder::finalize)
            .expect("standard registry is well formed")
    }

    pub fn descriptors(&self) -> &[FunctionDescriptor] {
        &self.descriptors
    }

    pub fn get(&self, name: &str) -> Option<&FunctionDescriptor> {
        self.descriptors.iter().find(|d| d.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn signatures(&self) -> Vec<String> {
        self.descriptors.iter().map(FunctionDescriptor::signature).collect()
    }

    /// Checks name, arity and every argument's domain against `case`.
    pub fn validate(&self, case: &PatientCase, call: &FunctionCall) -> Result<(), String> {
        let d = self
            .get(&call.name)
            .ok_or_else(|| format!("unknown function {}", call.name))?;
        if !d.arity.accepts(call.args.len()) {
            return Err(format!(
                "{} takes {} argument(s), got {}",
                d.name,
                d.arity,
                call.args.len()
            ));
        }
        for (i, arg) in call.args.iter().enumerate() {
            let ok = match d.domain_of(i) {
                ArgDomain::Segment => case.segment(arg).is_some(),
                ArgDomain::Category => arg
                    .parse::<Category>()
                    .map(|c| case.in_category(c).next().is_some())
                    .unwrap_or(false),
                ArgDomain::Mode => arg.parse::<VisibilityMode>().is_ok(),
                ArgDomain::Action => arg.parse::<ControlAction>().is_ok(),
                ArgDomain::FreeText => true,
            };
            if !ok {
                return Err(format!("{}: argument {} ({arg:?}) is out of domain", d.name, i + 1));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Effect {
    VisibilityChanged {
        segment: SegmentId,
        visible: bool,
    },
    ControlApplied {
        action: ControlAction,
    },
    CaptureRequested {
        with_holograms: bool,
    },
    PoseReset,
    CtScrolled {
        index: u32,
    },
    ChatReset {
        sentence: String,
        result: Vec<FunctionCall>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DispatchError {
    #[error("batch rejected: {}", reasons.join("; "))]
    RejectedBatch { reasons: Vec<String> },
    #[error("reset_chat must be intercepted before dispatch")]
    ContractViolation,
}

/// Validates every call, then applies them in order. Either all calls take
/// effect or none do; on error the caller's state is untouched.
pub fn execute(
    registry: &Registry,
    case: &PatientCase,
    state: &SceneState,
    calls: &[FunctionCall],
) -> Result<(SceneState, Vec<Effect>), DispatchError> {
    if calls.iter().any(|c| c.name == RESET_CHAT) {
        return Err(DispatchError::ContractViolation);
    }
    let reasons: Vec<String> = calls.iter().filter_map(|c| registry.validate(case, c).err()).collect();
    if !reasons.is_empty() {
        return Err(DispatchError::RejectedBatch { reasons });
    }
    let mut next = state.clone();
    let mut effects = Vec::new();
    for call in calls {
        let binding = registry.get(&call.name).map(|d| d.binding);
        let reject = |reason: String| DispatchError::RejectedBatch { reasons: vec![reason] };
        match binding {
            Some(Binding::SetVisibility) | Some(Binding::SetGroupVisibility) => {
                let target = case.resolve_target(&call.args[0]).map_err(|e| reject(e.to_string()))?;
                let mode = call.args[1].parse::<VisibilityMode>().map_err(reject)?;
                next = next
                    .set_visibility(case, &target, mode)
                    .map_err(|e| reject(e.to_string()))?;
                push_visibility(&mut effects, case, &next, &target);
            }
            Some(Binding::ExclusiveVisibility) => {
                for s in &case.segments {
                    let on = call.args.iter().any(|a| a == s.id.as_str());
                    next = next
                        .with_segment(s.id.as_str(), on)
                        .map_err(|e| reject(e.to_string()))?;
                    effects.push(Effect::VisibilityChanged {
                        segment: s.id.clone(),
                        visible: on,
                    });
                }
            }
            Some(Binding::ResetVisibility) => {
                for s in &case.segments {
                    next = next
                        .with_segment(s.id.as_str(), false)
                        .map_err(|e| reject(e.to_string()))?;
                    effects.push(Effect::VisibilityChanged {
                        segment: s.id.clone(),
                        visible: false,
                    });
                }
            }
            Some(Binding::Control) => {
                let action = call.args[0].parse::<ControlAction>().map_err(reject)?;
                let (after, effect) = next.control(action).map_err(|e| reject(format!("{}: {e}", call)))?;
                next = after;
                effects.push(match effect {
                    Some(ControlEffect::Capture { with_holograms }) => Effect::CaptureRequested { with_holograms },
                    Some(ControlEffect::PoseReset) => Effect::PoseReset,
                    None => Effect::ControlApplied { action },
                });
            }
            Some(Binding::ResetChat) => return Err(DispatchError::ContractViolation),
            None => return Err(reject(format!("unknown function {}", call.name))),
        }
    }
    Ok((next, effects))
}

fn push_visibility(effects: &mut Vec<Effect>, case: &PatientCase, state: &SceneState, target: &Target) {
    for id in case.target_segments(target).unwrap_or_default() {
        effects.push(Effect::VisibilityChanged {
            visible: state.is_visible(id.as_str()),
            segment: id,
        });
    }
}

/// Rebuilds a scene by applying a logged effect stream to `initial`.
pub fn replay_effects<'a>(
    initial: &SceneState,
    effects: impl IntoIterator<Item = &'a Effect>,
) -> Result<SceneState, crate::scene::SceneError> {
    let mut state = initial.clone();
    for e in effects {
        state = match e {
            Effect::VisibilityChanged { segment, visible } => state.with_segment(segment.as_str(), *visible)?,
            Effect::ControlApplied { action } => state.control(*action)?.0,
            Effect::CtScrolled { index } => state.with_ct_index(*index),
            Effect::CaptureRequested { .. } | Effect::PoseReset | Effect::ChatReset { .. } => state,
        };
    }
    Ok(state)
}

/// Appends effects to a JSON-lines audit log.
pub fn write_effects<W: Write>(out: &mut W, effects: &[Effect]) -> std::io::Result<()> {
    for e in effects {
        serde_json::to_writer(&mut *out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_effects<R: BufRead>(input: R) -> std::io::Result<Vec<Effect>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::test_support::vascular_case;

    fn call(name: &str, args: &[&str]) -> FunctionCall {
        FunctionCall::new(name, args.iter().copied())
    }

    #[test]
    fn registered_functions_show_up_as_signatures() {
        let r = Registry::standard();
        let sigs = r.signatures();
        assert!(sigs.contains(&"set_visibility(organType, on|off|toggle)".to_string()));
        assert!(sigs.iter().any(|s| s.starts_with("reset_chat(\"<sentence>\"")));
        assert_eq!(sigs.len(), r.descriptors().len());
    }

    #[test]
    fn duplicate_and_missing_reset() {
        let d = FunctionDescriptor::new("control", Binding::Control, &[("action", ArgDomain::Action)]);
        let b = RegistryBuilder::new().register(d.clone()).unwrap();
        assert_eq!(
            b.clone().register(d).unwrap_err(),
            RegistryError::DuplicateName("control".into())
        );
        assert_eq!(b.finalize().unwrap_err(), RegistryError::MissingResetChat);
    }

    #[test]
    fn sequential_batch() {
        let case = vascular_case();
        let s0 = SceneState::initial(&case);
        let (s, eff) = execute(
            &Registry::standard(),
            &case,
            &s0,
            &[
                call("set_visibility", &["tumor", "on"]),
                call("set_visibility", &["portal_vein", "on"]),
            ],
        )
        .unwrap();
        assert!(s.is_visible("tumor") && s.is_visible("portal_vein"));
        assert_eq!(eff.len(), 2);
    }

    #[test]
    fn bad_call_rejects_whole_batch() {
        let case = vascular_case();
        let s0 = SceneState::initial(&case);
        let r = execute(
            &Registry::standard(),
            &case,
            &s0,
            &[call("set_visibility", &["tumor", "on"]), call("bogus", &["1"])],
        );
        assert!(matches!(r, Err(DispatchError::RejectedBatch { ref reasons }) if reasons.len() == 1));
    }

    #[test]
    fn late_precondition_failure_rejects_batch() {
        let case = vascular_case();
        let s0 = SceneState::initial(&case);
        let r = execute(
            &Registry::standard(),
            &case,
            &s0,
            &[
                call("set_visibility", &["tumor", "on"]),
                call("control", &["scroll_up"]),
            ],
        );
        assert!(matches!(r, Err(DispatchError::RejectedBatch { .. })));
    }

    #[test]
    fn domains_and_arity() {
        let case = vascular_case();
        let r = Registry::standard();
        assert!(r.validate(&case, &call("set_visibility", &["tumor"])).is_err());
        assert!(r.validate(&case, &call("set_visibility", &["spleen", "on"])).is_err());
        assert!(r.validate(&case, &call("set_visibility", &["tumor", "maybe"])).is_err());
        assert!(r
            .validate(&case, &call("set_group_visibility", &["arteries", "on"]))
            .is_ok());
        assert!(r
            .validate(&case, &call("set_group_visibility", &["organ", "on"]))
            .is_err());
        assert!(r.validate(&case, &call("exclusive_visibility", &[])).is_err());
        assert!(r
            .validate(&case, &call("exclusive_visibility", &["tumor", "portal_vein"]))
            .is_ok());
        assert!(r.validate(&case, &call("control", &["dance"])).is_err());
    }

    #[test]
    fn reset_chat_is_a_contract_violation() {
        let case = vascular_case();
        let r = execute(
            &Registry::standard(),
            &case,
            &SceneState::initial(&case),
            &[call(RESET_CHAT, &["a", "control(freeze)"])],
        );
        assert_eq!(r.unwrap_err(), DispatchError::ContractViolation);
    }

    #[test]
    fn exclusive_and_reset_visibility() {
        let case = vascular_case();
        let reg = Registry::standard();
        let s0 = SceneState::initial(&case);
        let (s, _) = execute(&reg, &case, &s0, &[call("set_group_visibility", &["vein", "on"])]).unwrap();
        let (s, eff) = execute(
            &reg,
            &case,
            &s,
            &[call("exclusive_visibility", &["tumor", "hepatic_artery"])],
        )
        .unwrap();
        assert_eq!(
            s.visible_set(),
            ["hepatic_artery", "tumor"].into_iter().map(SegmentId::from).collect()
        );
        assert_eq!(eff.len(), case.segments.len());
        let (s, _) = execute(&reg, &case, &s, &[call("reset_visibility", &[])]).unwrap();
        assert!(s.visible_set().is_empty());
    }

    #[test]
    fn effect_log_replays_to_same_state() {
        let case = vascular_case();
        let reg = Registry::standard();
        let s0 = SceneState::initial(&case);
        let batches = [
            vec![call("set_group_visibility", &["artery", "on"])],
            vec![call("control", &["toggle_ct"]), call("control", &["scroll_down"])],
            vec![
                call("set_visibility", &["hepatic_artery", "toggle"]),
                call("control", &["freeze"]),
            ],
            vec![
                call("control", &["capture_photo"]),
                call("control", &["toggle_patient_info"]),
            ],
        ];
        let mut state = s0.clone();
        let mut log = Vec::new();
        for b in &batches {
            let (next, eff) = execute(&reg, &case, &state, b).unwrap();
            assert!(!eff.is_empty());
            write_effects(&mut log, &eff).unwrap();
            state = next;
        }
        let effects = read_effects(log.as_slice()).unwrap();
        assert_eq!(replay_effects(&s0, &effects).unwrap().digest(), state.digest());
    }
}
