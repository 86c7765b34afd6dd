//! Websocket round trip against a live server.

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::thread;

use safekernel::reachability::{Grid3, ValueFunction};
use safekernel::session::{EventKind, Server, ServerConfig, ServerMessage, SessionConfig, TeamSetup};
use safekernel::simulation::{AlphaRule, Treatment, TreatmentKind};
use safekernel::supervisor::read_records;
use tungstenite::{connect, Message};

fn flat_team() -> Vec<TeamSetup> {
    let grid = Grid3::square(15.0, 7, 4).unwrap();
    let vf = Arc::new(ValueFunction::from_fn(grid, 1.0, 1.0, |x, y, _| x.hypot(y) - 1.0).unwrap());
    vec![TeamSetup { treatment: Treatment { kind: TreatmentKind::Standard, vf, alpha: 0.0 }, alpha_rule: AlphaRule::Zero }]
}

#[test]
fn phase_two_over_a_socket() {
    let log_dir = std::env::temp_dir().join(format!("safekernel-server-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&log_dir);
    let mut config = ServerConfig::new(0, SessionConfig::new(flat_team()));
    config.tick_hz = 600.0;
    config.log_dir = Some(log_dir.clone());
    let server = Server::bind(config).unwrap();
    let addr = server.local_addr().unwrap();
    let shutdown = server.shutdown_handle();
    let handle = thread::spawn(move || server.run().unwrap());

    let (mut ws, _) = connect(format!("ws://{addr}")).unwrap();
    ws.send(Message::text("{\"type\":\"warp\"}")).unwrap();
    ws.send(Message::text(r#"{"type":"start_phase","phase":"II","params":{"scenes":2,"seed":5}}"#)).unwrap();

    let mut saw_error = false;
    let mut saw_state = false;
    let mut pressed_for = None;
    let mut records = 0;
    let mut scenes_done = 0;
    while scenes_done < 2 {
        let Message::Text(text) = ws.read().unwrap() else { continue };
        match serde_json::from_str::<ServerMessage>(&text).unwrap() {
            ServerMessage::Error { .. } => saw_error = true,
            ServerMessage::State { phase: Some(_), robots, obstacles, tick, .. } => {
                saw_state = true;
                if !robots.is_empty() && pressed_for != Some(obstacles[0].id) && tick > 0 {
                    pressed_for = Some(obstacles[0].id);
                    ws.send(Message::text(r#"{"type":"intervene"}"#)).unwrap();
                }
            }
            ServerMessage::Event { kind: EventKind::SceneEnd, record, .. } => {
                scenes_done += 1;
                records += record.is_some() as usize;
            }
            _ => {}
        }
    }
    ws.close(None).unwrap();
    shutdown.store(true, Ordering::Relaxed);
    handle.join().unwrap();

    assert!(saw_error);
    assert!(saw_state);
    assert_eq!(records, 2);
    let log = std::fs::read_dir(&log_dir).unwrap().next().unwrap().unwrap().path();
    let saved = read_records(std::io::BufReader::new(std::fs::File::open(log).unwrap())).unwrap();
    assert_eq!(saved.len(), 2);
    std::fs::remove_dir_all(&log_dir).unwrap();
}

#[test]
fn busy_port_is_reported() {
    let first = Server::bind(ServerConfig::new(0, SessionConfig::new(flat_team()))).unwrap();
    let port = first.local_addr().unwrap().port();
    let err = Server::bind(ServerConfig::new(port, SessionConfig::new(flat_team())))
        .err()
        .expect("second bind should fail");
    assert!(err.to_string().contains("busy"), "{err}");
}
