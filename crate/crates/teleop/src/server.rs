//! WebSocket transport: one session per connection on `/`, and read-only
//! telemetry subscribers on `/watch` that see every session's output.

// tungstenite's own error type is large; it only travels up one frame here.
#![allow(clippy::result_large_err)]

use std::io;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread;

use log::{info, warn};
use tungstenite::handshake::server::{Request, Response};
use tungstenite::handshake::HandshakeError;
use tungstenite::{accept_hdr, Message, WebSocket};

use crate::protocol::Outbound;
use crate::session::{DirSink, Session, SessionOptions};

pub const WATCH_PATH: &str = "/watch";

/// Fan-out of outbound JSON to any number of watchers.
#[derive(Debug, Clone, Default)]
pub struct Watchers {
    subscribers: Arc<Mutex<Vec<Sender<String>>>>,
}

impl Watchers {
    pub fn subscribe(&self) -> Receiver<String> {
        let (tx, rx) = mpsc::channel();
        self.subscribers.lock().expect("watchers lock").push(tx);
        rx
    }

    /// Sends to every live subscriber and forgets the ones that hung up.
    pub fn publish(&self, text: &str) {
        self.subscribers
            .lock()
            .expect("watchers lock")
            .retain(|tx| tx.send(text.to_owned()).is_ok());
    }

    pub fn len(&self) -> usize {
        self.subscribers.lock().expect("watchers lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub options: SessionOptions,
    /// Where `record_stop` writes episodes.
    pub episodes_dir: PathBuf,
}

/// Accepts connections until the listener fails. Each connection runs on
/// its own thread.
pub fn serve(listener: TcpListener, config: ServerConfig) -> io::Result<()> {
    let watchers = Watchers::default();
    info!("listening on {}", listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = stream?;
        let config = config.clone();
        let watchers = watchers.clone();
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = handle_connection(stream, &config, &watchers) {
                warn!("connection {peer:?} ended: {e}");
            }
        });
    }
    Ok(())
}

fn handle_connection(stream: TcpStream, config: &ServerConfig, watchers: &Watchers) -> tungstenite::Result<()> {
    let mut path = String::new();
    let ws = accept_hdr(stream, |req: &Request, resp: Response| {
        path = req.uri().path().to_owned();
        Ok(resp)
    })
    .map_err(|e| match e {
        HandshakeError::Failure(e) => e,
        // Blocking sockets never interrupt a handshake.
        HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    if path == WATCH_PATH {
        watch(ws, watchers.subscribe())
    } else {
        let session = Session::new(config.options.clone(), Box::new(DirSink::new(&config.episodes_dir)));
        run_session(ws, session, watchers)
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &Outbound, watchers: &Watchers) -> tungstenite::Result<()> {
    let text = msg.to_json();
    watchers.publish(&text);
    ws.send(Message::text(text))
}

fn run_session(mut ws: WebSocket<TcpStream>, mut session: Session, watchers: &Watchers) -> tungstenite::Result<()> {
    send(&mut ws, &session.state_message(), watchers)?;
    loop {
        let replies = match ws.read()? {
            Message::Text(text) => session.handle_text(&text),
            Message::Binary(_) => vec![Outbound::error("invalid_message", "frames must be JSON text")],
            Message::Close(_) => return Ok(()),
            Message::Ping(_) | Message::Pong(_) | Message::Frame(_) => continue,
        };
        for reply in &replies {
            send(&mut ws, reply, watchers)?;
        }
    }
}

fn watch(mut ws: WebSocket<TcpStream>, rx: Receiver<String>) -> tungstenite::Result<()> {
    for text in rx {
        ws.send(Message::text(text))?;
    }
    Ok(())
}
