//! JSON text frames exchanged with a live client.

use serde::{Deserialize, Serialize};

use crate::simulation::{Classification, TreatmentKind, TrialMetrics};
use crate::supervisor::InterventionRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Free driving under keyboard control.
    I,
    /// Intervention scenes.
    II,
    /// Team supervision.
    III,
}

/// Optional knobs for `start_phase`. Unset fields fall back to the server defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Number of Phase II scenes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenes: Option<usize>,
    /// Phase length in ticks (Phases I and III).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<TreatmentKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Control { u: f64 },
    Intervene,
    Remove { obstacle_id: u64 },
    StartPhase {
        phase: Phase,
        #[serde(default)]
        params: PhaseParams,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotFrame {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleFrame {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub id: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Crash,
    Trip,
    Removal,
    SceneEnd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State {
        phase: Option<Phase>,
        tick: u64,
        robots: Vec<RobotFrame>,
        obstacles: Vec<ObstacleFrame>,
        score: i64,
        /// Seconds left in the phase; Phase II reports the current scene's budget.
        time_left: f64,
    },
    Event {
        kind: EventKind,
        tick: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        robot: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        obstacle_id: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        classification: Option<Classification>,
        /// Phase II scene index.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scene: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        record: Option<InterventionRecord>,
        /// Final metrics, sent with the last Phase III event.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        metrics: Option<TrialMetrics>,
    },
    Error { message: String },
}

impl ServerMessage {
    pub fn event(kind: EventKind, tick: u64) -> Self {
        ServerMessage::Event {
            kind,
            tick,
            robot: None,
            obstacle_id: None,
            classification: None,
            scene: None,
            record: None,
            metrics: None,
        }
    }

    pub fn error(message: impl Into<String>) -> Self {
        ServerMessage::Error { message: message.into() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn client_messages_parse() {
        let m: ClientMessage = serde_json::from_str(r#"{"type":"control","u":-1.0}"#).unwrap();
        assert_eq!(m, ClientMessage::Control { u: -1.0 });
        let m: ClientMessage = serde_json::from_str(r#"{"type":"intervene"}"#).unwrap();
        assert_eq!(m, ClientMessage::Intervene);
        let m: ClientMessage = serde_json::from_str(r#"{"type":"remove","obstacle_id":7}"#).unwrap();
        assert_eq!(m, ClientMessage::Remove { obstacle_id: 7 });
        let m: ClientMessage =
            serde_json::from_str(r#"{"type":"start_phase","phase":"II","params":{"scenes":3,"seed":9}}"#).unwrap();
        assert_eq!(
            m,
            ClientMessage::StartPhase {
                phase: Phase::II,
                params: PhaseParams { scenes: Some(3), seed: Some(9), ..Default::default() }
            }
        );
        let m: ClientMessage = serde_json::from_str(r#"{"type":"start_phase","phase":"III"}"#).unwrap();
        assert!(matches!(m, ClientMessage::StartPhase { phase: Phase::III, .. }));
        assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"jump"}"#).is_err());
        assert!(serde_json::from_str::<ClientMessage>(r#"{"type":"control"}"#).is_err());
    }

    #[test]
    fn server_messages_have_wire_shape() {
        let state = ServerMessage::State {
            phase: Some(Phase::III),
            tick: 4,
            robots: vec![RobotFrame { x: 1.0, y: 2.0, theta: 0.5, id: 0 }],
            obstacles: vec![ObstacleFrame { cx: 3.0, cy: 4.0, r: 1.0, id: 9 }],
            score: -5,
            time_left: 1.5,
        };
        let v: serde_json::Value = serde_json::to_value(&state).unwrap();
        assert_eq!(v["type"], "state");
        assert_eq!(v["phase"], "III");
        assert_eq!(v["robots"][0]["theta"], 0.5);
        assert_eq!(v["obstacles"][0]["id"], 9);
        assert_eq!(v["time_left"], 1.5);

        let mut ev = ServerMessage::event(EventKind::Removal, 12);
        if let ServerMessage::Event { obstacle_id, classification, .. } = &mut ev {
            *obstacle_id = Some(3);
            *classification = Some(Classification::TruePositive);
        }
        let v: serde_json::Value = serde_json::to_value(&ev).unwrap();
        assert_eq!(v["type"], "event");
        assert_eq!(v["kind"], "removal");
        assert_eq!(v["classification"], "true_positive");
        assert!(v.get("record").is_none());

        let v = serde_json::to_value(ServerMessage::error("bad")).unwrap();
        assert_eq!(v, serde_json::json!({"type": "error", "message": "bad"}));
    }
}
