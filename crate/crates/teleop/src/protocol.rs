//! Client-to-server messages of the `/ws` protocol.
//!
//! Server-to-client state messages are [`vrb_formation::sim::StateSnapshot`].

use serde::{Deserialize, Serialize};
use vrb_formation::sim::PROTOCOL_VERSION;
use vrb_formation::vrb::Vec5;

use crate::error::ProtocolError;

/// `{"v":1,"type":"cmd","deta":[...],"stamp":...}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandMessage {
    pub v: u32,
    /// `(dphi/dt, ds_x/dt, ds_y/dt, dt_x/dt, dt_y/dt)` in rad/s, 1/s and m/s.
    pub deta: [f64; 5],
    /// Client clock, ms.
    pub stamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Cmd(CommandMessage),
}

/// Reply to a rejected client message. The connection stays open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMessage {
    pub v: u32,
    #[serde(rename = "type")]
    pub kind: String,
    pub message: String,
}

impl ErrorMessage {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            v: PROTOCOL_VERSION,
            kind: "error".into(),
            message: message.into(),
        }
    }
}

/// Per-axis magnitude limits on operator rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateLimits {
    /// rad/s.
    pub rotation: f64,
    /// 1/s, applied to both scale axes.
    pub scale: f64,
    /// m/s, applied to both translation axes.
    pub translation: f64,
}

impl Default for RateLimits {
    fn default() -> Self {
        Self {
            rotation: 0.5,
            scale: 0.5,
            translation: 1.0,
        }
    }
}

impl RateLimits {
    pub fn clamp(&self, deta: &[f64; 5]) -> Vec5 {
        let limits = [
            self.rotation,
            self.scale,
            self.scale,
            self.translation,
            self.translation,
        ];
        Vec5::from_fn(|k, _| deta[k].clamp(-limits[k], limits[k]))
    }
}

/// Parses and validates one text frame.
pub fn parse_client_message(text: &str) -> Result<ClientMessage, ProtocolError> {
    let msg: ClientMessage =
        serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    match &msg {
        ClientMessage::Cmd(cmd) => {
            if cmd.v != PROTOCOL_VERSION {
                return Err(ProtocolError::Version(cmd.v));
            }
            if !cmd.deta.iter().all(|v| v.is_finite()) {
                return Err(ProtocolError::NonFinite);
            }
        }
    }
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_command() {
        let msg = parse_client_message(r#"{"v":1,"type":"cmd","deta":[0,0,0,0.5,0],"stamp":12}"#)
            .unwrap();
        assert_eq!(
            msg,
            ClientMessage::Cmd(CommandMessage {
                v: 1,
                deta: [0.0, 0.0, 0.0, 0.5, 0.0],
                stamp: 12,
            })
        );
    }

    #[test]
    fn round_trips_through_json() {
        let msg = ClientMessage::Cmd(CommandMessage {
            v: 1,
            deta: [0.1, -0.2, 0.0, 1.0, -1.0],
            stamp: 99,
        });
        let text = serde_json::to_string(&msg).unwrap();
        assert!(text.contains(r#""type":"cmd""#));
        assert_eq!(parse_client_message(&text).unwrap(), msg);
    }

    #[test]
    fn rejects_bad_messages() {
        assert!(matches!(
            parse_client_message("not json"),
            Err(ProtocolError::Malformed(_))
        ));
        assert!(matches!(
            parse_client_message(r#"{"v":1,"type":"cmd","deta":[0,0,0],"stamp":0}"#),
            Err(ProtocolError::Malformed(_))
        ));
        assert!(matches!(
            parse_client_message(r#"{"v":1,"type":"jump","deta":[0,0,0,0,0],"stamp":0}"#),
            Err(ProtocolError::Malformed(_))
        ));
        assert_eq!(
            parse_client_message(r#"{"v":2,"type":"cmd","deta":[0,0,0,0,0],"stamp":0}"#),
            Err(ProtocolError::Version(2))
        );
        assert!(
            parse_client_message(r#"{"v":1,"type":"cmd","deta":[1e999,0,0,0,0],"stamp":0}"#)
                .is_err()
        );
    }

    #[test]
    fn clamps_each_axis() {
        let limits = RateLimits::default();
        let out = limits.clamp(&[2.0, -3.0, 0.2, 5.0, -0.5]);
        assert_eq!(out, Vec5::from([0.5, -0.5, 0.2, 1.0, -0.5]));
    }
}
