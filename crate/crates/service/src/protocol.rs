//! Wire types shared with clients. Unknown fields are ignored on read.
//!
//! Stream messages are envelopes `{"type": "frame" | "command" | "error", "step": n, "payload": ...}`:
//! - `frame` (server to client): a [`FrameMessage`] for the state the session now waits in;
//! - `command` (client to server): a [`Command`](crate::session::Command), e.g.
//!   `{"command": "take_control", "action": 3}`; the step field is informational;
//! - `error` (server to client): `{"message": ...}`; the session is unchanged.

use serde::{Deserialize, Serialize};

use crate::session::{Command, Frame, InterventionRecord, StepRecord};

pub const PROTOCOL_VERSION: u32 = 1;
pub const DECISION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvelopeKind {
    Frame,
    Command,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: EnvelopeKind,
    #[serde(default)]
    pub step: u64,
    #[serde(default)]
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMessage {
    pub frame: Frame,
    /// The step that led here; absent on the first frame of a connection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last: Option<StepRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention: Option<InterventionRecord>,
}

impl Envelope {
    pub fn frame(msg: &FrameMessage) -> Self {
        Self { kind: EnvelopeKind::Frame, step: msg.frame.step, payload: serde_json::to_value(msg).unwrap_or_default() }
    }

    pub fn command(step: u64, cmd: Command) -> Self {
        Self { kind: EnvelopeKind::Command, step, payload: serde_json::to_value(cmd).unwrap_or_default() }
    }

    pub fn error(step: u64, message: &str) -> Self {
        Self { kind: EnvelopeKind::Error, step, payload: serde_json::json!({ "message": message }) }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }

    /// Reads a client message; an empty payload means no command.
    pub fn parse_command(text: &str) -> Result<Command, String> {
        let env: Envelope = serde_json::from_str(text).map_err(|e| format!("malformed envelope: {e}"))?;
        if env.kind != EnvelopeKind::Command {
            return Err(format!("clients may only send command envelopes, got {:?}", env.kind));
        }
        if env.payload.is_null() {
            return Ok(Command::None);
        }
        serde_json::from_value(env.payload).map_err(|e| format!("malformed command: {e}"))
    }

    pub fn frame_message(&self) -> Option<FrameMessage> {
        (self.kind == EnvelopeKind::Frame).then(|| serde_json::from_value(self.payload.clone()).ok()).flatten()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Deploy,
    Decline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRequest {
    pub client: String,
    pub deck: String,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Stored once per (client, deck); repeating the same submission returns it unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub version: u32,
    pub client: String,
    pub deck: String,
    pub decision: Decision,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub timestamp_ms: u64,
}
