use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::Serialize;

use super::{Event, EventSequence, FnId, HandleId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Structured,
    General,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Structured => "structured",
            Mode::General => "general",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    GetBeforeFutureReturn,
    UnknownHandle,
    SingleTouch,
    UnsyncedSpawn,
    SyncWithoutSpawn,
    ReturnFromRoot,
    UnclosedFrame,
    DuplicateHandle,
    DuplicateFunction,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::GetBeforeFutureReturn => "get before future return",
            ViolationKind::UnknownHandle => "get on unknown handle",
            ViolationKind::SingleTouch => "single-touch",
            ViolationKind::UnsyncedSpawn => "unsynced spawn",
            ViolationKind::SyncWithoutSpawn => "sync without outstanding spawn",
            ViolationKind::ReturnFromRoot => "return from root",
            ViolationKind::UnclosedFrame => "unclosed frame at end of trace",
            ViolationKind::DuplicateHandle => "duplicate handle",
            ViolationKind::DuplicateFunction => "duplicate function id",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// 1-based trace line (event index + 1); `len + 1` for end-of-trace.
    pub line: usize,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.kind)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: &ViolationKind) -> bool {
        self.violations.iter().any(|v| &v.kind == kind)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

struct Frame {
    handle: Option<HandleId>,
    unsynced: usize,
}

#[derive(Default)]
struct HandleState {
    closed: bool,
    gets: usize,
}

/// Checks frame balance, sync discipline, and forward-pointing gets. In
/// structured mode each handle may additionally be gotten at most once.
pub fn validate(seq: &EventSequence, mode: Mode) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut stack = vec![Frame {
        handle: None,
        unsynced: 0,
    }];
    let mut handles: HashMap<HandleId, HandleState> = HashMap::new();
    let mut funcs: HashSet<FnId> = HashSet::new();
    let mut push = |line: usize, kind: ViolationKind| report.violations.push(Violation { line, kind });

    for (i, ev) in seq.events.iter().enumerate() {
        let line = i + 1;
        match *ev {
            Event::Spawn { func } => {
                if !funcs.insert(func) {
                    push(line, ViolationKind::DuplicateFunction);
                }
                stack.last_mut().expect("root frame").unsynced += 1;
                stack.push(Frame {
                    handle: None,
                    unsynced: 0,
                });
            }
            Event::Create { func, handle } => {
                if !funcs.insert(func) {
                    push(line, ViolationKind::DuplicateFunction);
                }
                if handles.insert(handle, HandleState::default()).is_some() {
                    push(line, ViolationKind::DuplicateHandle);
                }
                stack.push(Frame {
                    handle: Some(handle),
                    unsynced: 0,
                });
            }
            Event::Sync => {
                let top = stack.last_mut().expect("root frame");
                if top.unsynced == 0 {
                    push(line, ViolationKind::SyncWithoutSpawn);
                } else {
                    top.unsynced -= 1;
                }
            }
            Event::Get { handle } => match handles.get_mut(&handle) {
                None => push(line, ViolationKind::UnknownHandle),
                Some(st) => {
                    if !st.closed {
                        push(line, ViolationKind::GetBeforeFutureReturn);
                    }
                    st.gets += 1;
                    if mode == Mode::Structured && st.gets > 1 {
                        push(line, ViolationKind::SingleTouch);
                    }
                }
            },
            Event::Ret => {
                if stack.len() == 1 {
                    push(line, ViolationKind::ReturnFromRoot);
                    continue;
                }
                let frame = stack.pop().expect("non-root frame");
                if frame.unsynced > 0 {
                    push(line, ViolationKind::UnsyncedSpawn);
                    // The parent still waits on these children in LIFO
                    // order; they stay unsynced from its perspective.
                }
                if let Some(h) = frame.handle {
                    if let Some(st) = handles.get_mut(&h) {
                        st.closed = true;
                    }
                }
            }
            Event::Read { .. } | Event::Write { .. } => {}
        }
    }

    let end = seq.events.len() + 1;
    if stack.len() > 1 {
        push(end, ViolationKind::UnclosedFrame);
    }
    if stack[0].unsynced > 0 {
        push(end, ViolationKind::UnsyncedSpawn);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::EventSequence;

    fn seq(text: &str) -> EventSequence {
        EventSequence::parse_str(text).unwrap()
    }

    #[test]
    fn valid_trace() {
        let s = seq(r#"{"t":"spawn","f":1}
{"t":"ret"}
{"t":"create","f":2,"h":1}
{"t":"ret"}
{"t":"sync"}
{"t":"get","h":1}"#);
        assert!(validate(&s, Mode::Structured).is_ok());
        assert!(validate(&s, Mode::General).is_ok());
    }

    #[test]
    fn get_inside_open_future() {
        let s = seq(r#"{"t":"create","f":1,"h":1}
{"t":"get","h":1}
{"t":"ret"}"#);
        let r = validate(&s, Mode::General);
        assert_eq!(
            r.violations,
            vec![Violation {
                line: 2,
                kind: ViolationKind::GetBeforeFutureReturn
            }]
        );
        assert_eq!(r.to_string(), "line 2: get before future return");
    }

    #[test]
    fn double_get_only_rejected_when_structured() {
        let s = seq(r#"{"t":"create","f":1,"h":1}
{"t":"ret"}
{"t":"get","h":1}
{"t":"get","h":1}"#);
        assert!(validate(&s, Mode::General).is_ok());
        let r = validate(&s, Mode::Structured);
        assert_eq!(r.violations.len(), 1);
        assert!(r.has(&ViolationKind::SingleTouch));
    }

    #[test]
    fn return_with_unsynced_spawn() {
        let s = seq(r#"{"t":"spawn","f":1}
{"t":"spawn","f":2}
{"t":"ret"}
{"t":"ret"}
{"t":"sync"}"#);
        let r = validate(&s, Mode::General);
        assert_eq!(r.violations[0].kind, ViolationKind::UnsyncedSpawn);
        assert_eq!(r.violations[0].line, 4);
    }

    #[test]
    fn structural_errors() {
        let r = validate(&seq(r#"{"t":"ret"}"#), Mode::General);
        assert!(r.has(&ViolationKind::ReturnFromRoot));
        let r = validate(&seq(r#"{"t":"sync"}"#), Mode::General);
        assert!(r.has(&ViolationKind::SyncWithoutSpawn));
        let r = validate(&seq(r#"{"t":"spawn","f":1}"#), Mode::General);
        assert!(r.has(&ViolationKind::UnclosedFrame));
        let r = validate(&seq(r#"{"t":"get","h":3}"#), Mode::General);
        assert!(r.has(&ViolationKind::UnknownHandle));
        let r = validate(
            &seq(r#"{"t":"create","f":1,"h":1}
{"t":"ret"}
{"t":"create","f":2,"h":1}
{"t":"ret"}"#),
            Mode::General,
        );
        assert!(r.has(&ViolationKind::DuplicateHandle));
        let r = validate(
            &seq(r#"{"t":"spawn","f":1}
{"t":"ret"}
{"t":"spawn","f":1}
{"t":"ret"}
{"t":"sync"}
{"t":"sync"}"#),
            Mode::General,
        );
        assert!(r.has(&ViolationKind::DuplicateFunction));
    }

    #[test]
    fn root_spawn_left_unsynced() {
        let r = validate(&seq("{\"t\":\"spawn\",\"f\":1}\n{\"t\":\"ret\"}\n"), Mode::General);
        assert_eq!(
            r.violations,
            vec![Violation {
                line: 3,
                kind: ViolationKind::UnsyncedSpawn
            }]
        );
    }
}
