use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConditionKind {
    Video,
    Text,
}

impl fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ConditionKind::Video => "video",
            ConditionKind::Text => "text",
        })
    }
}

/// An opaque condition handle, or the null embedding of its kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConditionId {
    kind: ConditionKind,
    id: Option<String>,
}

impl ConditionId {
    /// Empty ids are the wire encoding of null, so they map to null here too.
    pub fn new(kind: ConditionKind, id: Option<&str>) -> Self {
        Self { kind, id: id.filter(|s| !s.is_empty()).map(str::to_owned) }
    }

    pub fn video(id: &str) -> Self {
        Self::new(ConditionKind::Video, Some(id))
    }

    pub fn text(id: &str) -> Self {
        Self::new(ConditionKind::Text, Some(id))
    }

    pub fn null(kind: ConditionKind) -> Self {
        Self { kind, id: None }
    }

    pub fn null_video() -> Self {
        Self::null(ConditionKind::Video)
    }

    pub fn null_text() -> Self {
        Self::null(ConditionKind::Text)
    }

    pub fn kind(&self) -> ConditionKind {
        self.kind
    }

    pub fn id(&self) -> Option<&str> {
        self.id.as_deref()
    }

    pub fn is_null(&self) -> bool {
        self.id.is_none()
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.id {
            Some(id) => f.write_str(id),
            None => f.write_str("∅"),
        }
    }
}

/// The `(video, text)` conditioning tuple of one velocity evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConditionPair {
    video: ConditionId,
    text: ConditionId,
}

impl ConditionPair {
    pub fn new(video: ConditionId, text: ConditionId) -> Result<Self> {
        if video.kind() != ConditionKind::Video || text.kind() != ConditionKind::Text {
            return Err(Error::Parameter(format!(
                "condition pair slots got ({}, {}) kinds",
                video.kind(),
                text.kind()
            )));
        }
        Ok(Self { video, text })
    }

    pub fn from_ids(video: Option<&str>, text: Option<&str>) -> Self {
        Self { video: ConditionId::new(ConditionKind::Video, video), text: ConditionId::new(ConditionKind::Text, text) }
    }

    pub fn null() -> Self {
        Self::from_ids(None, None)
    }

    pub fn video(&self) -> &ConditionId {
        &self.video
    }

    pub fn text(&self) -> &ConditionId {
        &self.text
    }
}

impl fmt::Display for ConditionPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.video, self.text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slot_kinds_are_checked() {
        assert!(ConditionPair::new(ConditionId::text("a"), ConditionId::null_text()).is_err());
        assert!(ConditionPair::new(ConditionId::null_video(), ConditionId::null_video()).is_err());
        let p = ConditionPair::new(ConditionId::video("v"), ConditionId::null_text()).unwrap();
        assert_eq!(p.video().id(), Some("v"));
        assert!(p.text().is_null());
    }

    #[test]
    fn empty_id_is_null() {
        assert!(ConditionId::new(ConditionKind::Text, Some("")).is_null());
        assert_eq!(ConditionPair::from_ids(Some(""), None), ConditionPair::null());
    }
}
