//! Host the live protocol and drive a Phase II session from a scripted client.
//!
//! ```text
//! cargo run --release --example live_session
//! ```
//!
//! A browser client talks to the same endpoint with the same JSON frames.

use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::thread;

use safekernel::reachability::{signed_distance_payoff, Grid3, KeepOutDisk};
use safekernel::session::{EventKind, Server, ServerConfig, ServerMessage, SessionConfig, TeamSetup};
use safekernel::simulation::{AlphaRule, Treatment, TreatmentKind};
use safekernel::Error;
use tungstenite::{connect, Message};

pub fn run() -> safekernel::Result<()> {
    // Phase III is not visited here, so the raw distance field is enough.
    let vf = Arc::new(signed_distance_payoff(&KeepOutDisk::at_origin(1.0)?, &Grid3::square(15.0, 31, 12)?)?);
    let team = vec![TeamSetup {
        treatment: Treatment { kind: TreatmentKind::Standard, vf, alpha: 0.0 },
        alpha_rule: AlphaRule::Zero,
    }];
    let mut config = ServerConfig::new(0, SessionConfig::new(team));
    config.tick_hz = 240.0;
    let server = Server::bind(config)?;
    let addr = server.local_addr()?;
    let stop = server.shutdown_handle();
    let handle = thread::spawn(move || server.run());
    println!("serving ws://{addr}");

    let ws_err = |e: tungstenite::Error| Error::Protocol(e.to_string());
    let (mut ws, _) = connect(format!("ws://{addr}")).map_err(ws_err)?;
    ws.send(Message::text(r#"{"type":"start_phase","phase":"II","params":{"scenes":3,"seed":4}}"#)).map_err(ws_err)?;

    let (mut frames, mut ended) = (0, 0);
    while ended < 3 {
        let Message::Text(text) = ws.read().map_err(ws_err)? else { continue };
        match serde_json::from_str::<ServerMessage>(&text)? {
            ServerMessage::State { robots, .. } if !robots.is_empty() => {
                frames += 1;
                // Press intervene about half a second into each scene.
                if frames % 60 == 0 {
                    ws.send(Message::text(r#"{"type":"intervene"}"#)).map_err(ws_err)?;
                }
            }
            ServerMessage::Event { kind: EventKind::SceneEnd, scene, record, .. } => {
                ended += 1;
                frames = 0;
                match record {
                    Some(r) => println!(
                        "scene {}: intervened at tick {}, obstacle-frame state ({:.2}, {:.2}, {:.2})",
                        scene.unwrap_or(0),
                        r.tick,
                        r.relative_state.x,
                        r.relative_state.y,
                        r.relative_state.theta
                    ),
                    None => println!("scene {}: passed without intervention", scene.unwrap_or(0)),
                }
            }
            _ => {}
        }
    }
    let _ = ws.close(None);
    stop.store(true, Ordering::Relaxed);
    handle.join().expect("server thread")?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> safekernel::Result<()> {
    run()
}
