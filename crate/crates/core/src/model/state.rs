use serde::{Deserialize, Serialize};

use super::{Frame, FrameRef, FrameType, ModelError};

/// Trim, case-fold and collapse internal whitespace runs to a single space.
pub fn normalize_content(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// The set of frames raised so far in a session.
///
/// Frames are unique by `(frame_type, normalized content)` and keep their
/// insertion order, so `(frame_type, index)` addresses never move.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "StateRepr")]
pub struct DialogueState {
    frames: Vec<Frame>,
}

#[derive(Deserialize)]
struct StateRepr {
    #[serde(default)]
    frames: Vec<Frame>,
}

impl From<StateRepr> for DialogueState {
    fn from(r: StateRepr) -> Self {
        DialogueState::from_frames(r.frames)
    }
}

impl DialogueState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a state, folding frames with equal identity into the first
    /// occurrence (later attribute values win).
    pub fn from_frames(frames: impl IntoIterator<Item = Frame>) -> Self {
        let mut state = Self::new();
        for f in frames {
            state.absorb(f);
        }
        state
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn count_of(&self, frame_type: FrameType) -> usize {
        self.frames
            .iter()
            .filter(|f| f.frame_type == frame_type)
            .count()
    }

    /// 1-based per-type lookup.
    pub fn frame(&self, frame_type: FrameType, index: u32) -> Option<&Frame> {
        if index == 0 {
            return None;
        }
        self.frames
            .iter()
            .filter(|f| f.frame_type == frame_type)
            .nth(index as usize - 1)
    }

    /// Frames paired with their `(frame_type, index)` address.
    pub fn addressed(&self) -> impl Iterator<Item = (FrameType, u32, &Frame)> {
        let mut counters = [0u32; 4];
        self.frames.iter().map(move |f| {
            let slot = FrameType::ALL.iter().position(|t| *t == f.frame_type).unwrap();
            counters[slot] += 1;
            (f.frame_type, counters[slot], f)
        })
    }

    pub fn position_of(&self, key: &(FrameType, String)) -> Option<usize> {
        self.frames.iter().position(|f| &f.identity_key() == key)
    }

    /// Adds a frame, or folds its attributes into the existing frame with the
    /// same identity. Incoming values overwrite existing ones attribute by
    /// attribute; the existing content text and position are kept.
    pub fn absorb(&mut self, frame: Frame) {
        match self.position_of(&frame.identity_key()) {
            Some(pos) => {
                let existing = &mut self.frames[pos];
                for (name, value) in frame.set_attributes() {
                    existing.set_attribute(name, value);
                }
            }
            None => self.frames.push(frame),
        }
    }

    /// Returns a new state with `frame` absorbed.
    pub fn with_frame(&self, frame: Frame) -> Self {
        let mut next = self.clone();
        next.absorb(frame);
        next
    }

    /// Compact JSON used in prompts and retrieval text.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("dialogue state serializes")
    }
}

/// Result of resolving a [`FrameRef`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolved<'a> {
    Frame(&'a Frame),
    Attribute { frame: &'a Frame, value: &'a str },
}

impl<'a> Resolved<'a> {
    pub fn frame(&self) -> &'a Frame {
        match self {
            Resolved::Frame(f) | Resolved::Attribute { frame: f, .. } => f,
        }
    }
}

pub fn resolve_ref<'a>(state: &'a DialogueState, r: &FrameRef) -> Result<Resolved<'a>, ModelError> {
    let frame = state.frame(r.frame_type, r.index).ok_or_else(|| {
        ModelError::UnresolvedReference(format!("no {} frame #{}", r.frame_type, r.index))
    })?;
    match &r.frame_attribute {
        None => Ok(Resolved::Frame(frame)),
        Some(attr) => frame
            .attribute(attr)
            .map(|value| Resolved::Attribute { frame, value })
            .ok_or_else(|| {
                ModelError::UnresolvedReference(format!(
                    "{} frame #{} has no `{attr}`",
                    r.frame_type, r.index
                ))
            }),
    }
}
