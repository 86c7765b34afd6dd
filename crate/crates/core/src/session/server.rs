use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use tungstenite::{Message, WebSocket};

use super::protocol::ServerMessage;
use super::session::{LogSink, Session, SessionConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub port: u16,
    /// Physics rate.
    pub tick_hz: f64,
    /// A state frame goes out every this many ticks.
    pub broadcast_every: u64,
    /// Per-session JSONL logs and reports land here when set.
    pub log_dir: Option<PathBuf>,
    pub session: Arc<SessionConfig>,
}

impl ServerConfig {
    pub fn new(port: u16, session: SessionConfig) -> Self {
        ServerConfig { port, tick_hz: 60.0, broadcast_every: 2, log_dir: None, session: Arc::new(session) }
    }
}

pub struct Server {
    listener: TcpListener,
    config: ServerConfig,
    shutdown: Arc<AtomicBool>,
    next_session: AtomicU64,
}

impl Server {
    /// Binds to `127.0.0.1:port`; port 0 picks a free one.
    pub fn bind(config: ServerConfig) -> Result<Self> {
        if !(config.tick_hz > 0.0) || config.broadcast_every == 0 {
            return Err(Error::InvalidArgument("tick rate and broadcast decimation must be positive".into()));
        }
        if let Some(dir) = &config.log_dir {
            std::fs::create_dir_all(dir)?;
        }
        let listener = TcpListener::bind(("127.0.0.1", config.port)).map_err(|e| match e.kind() {
            ErrorKind::AddrInUse => Error::InvalidArgument(format!("port {} is busy", config.port)),
            _ => Error::Io(e),
        })?;
        listener.set_nonblocking(true)?;
        Ok(Server { listener, config, shutdown: Arc::new(AtomicBool::new(false)), next_session: AtomicU64::new(0) })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Setting the flag stops the accept loop and every live session.
    pub fn shutdown_handle(&self) -> Arc<AtomicBool> {
        self.shutdown.clone()
    }

    /// Accepts connections until shut down. Each one runs its own session thread.
    pub fn run(&self) -> Result<()> {
        let mut workers = Vec::new();
        while !self.shutdown.load(Ordering::Relaxed) {
            match self.listener.accept() {
                Ok((stream, _)) => {
                    let n = self.next_session.fetch_add(1, Ordering::Relaxed);
                    let id = format!("session-{n:04}");
                    let config = self.config.clone();
                    let shutdown = self.shutdown.clone();
                    workers.push(thread::spawn(move || {
                        if let Err(e) = serve_connection(stream, id.clone(), &config, &shutdown) {
                            eprintln!("{id}: {e}");
                        }
                    }));
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
                Err(e) => return Err(e.into()),
            }
            workers.retain(|w| !w.is_finished());
        }
        for w in workers {
            let _ = w.join();
        }
        Ok(())
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &ServerMessage) -> Result<()> {
    let text = serde_json::to_string(msg)?;
    ws.send(Message::text(text)).map_err(|e| Error::Protocol(e.to_string()))
}

fn serve_connection(stream: TcpStream, id: String, config: &ServerConfig, shutdown: &AtomicBool) -> Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| Error::Protocol(format!("handshake failed: {e}")))?;
    let sink = match &config.log_dir {
        Some(dir) => LogSink::file(dir.join(format!("{id}.jsonl")))?,
        None => LogSink::memory(),
    };
    let mut session = Session::new(id.clone(), config.session.clone(), sink);
    let period = Duration::from_secs_f64(1.0 / config.tick_hz);
    let mut next_tick = Instant::now() + period;
    let mut count: u64 = 0;
    let mut reported = false;

    loop {
        if shutdown.load(Ordering::Relaxed) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        loop {
            let now = Instant::now();
            if now >= next_tick {
                break;
            }
            ws.get_mut().set_read_timeout(Some(next_tick - now))?;
            match ws.read() {
                Ok(Message::Text(text)) => {
                    for reply in session.handle_text(&text) {
                        send(&mut ws, &reply)?;
                    }
                }
                Ok(Message::Close(_)) => return Ok(()),
                Ok(_) => {}
                Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    break
                }
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
                Err(e) => return Err(Error::Protocol(e.to_string())),
            }
        }
        next_tick += period;
        let events = match session.step() {
            Ok(events) => events,
            Err(e) => vec![ServerMessage::error(e.to_string())],
        };
        for ev in &events {
            send(&mut ws, ev)?;
        }
        count += 1;
        if count % config.broadcast_every == 0 {
            send(&mut ws, &session.state_message())?;
        }
        if !reported {
            if let (Some(report), Some(dir)) = (session.report(), &config.log_dir) {
                let file = std::fs::File::create(dir.join(format!("{id}-report.json")))?;
                serde_json::to_writer_pretty(file, report)?;
                reported = true;
            }
        }
    }
}
