//! WebSocket front end: one thread per connection, one [`Session`] each,
//! frames handled strictly in arrival order.

use std::fs::OpenOptions;
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;

use tungstenite::{Message, WebSocket};

use crate::session::{append_log, ModelStore, ServerFrame, Session};

pub struct Server {
    listener: TcpListener,
    store: Arc<ModelStore>,
    log_dir: Option<PathBuf>,
    next_id: Arc<AtomicU64>,
}

impl Server {
    pub fn bind(addr: &str, store: ModelStore, log_dir: Option<PathBuf>) -> std::io::Result<Self> {
        if let Some(dir) = &log_dir {
            std::fs::create_dir_all(dir)?;
        }
        Ok(Server {
            listener: TcpListener::bind(addr)?,
            store: Arc::new(store),
            log_dir,
            next_id: Arc::new(AtomicU64::new(1)),
        })
    }

    pub fn local_addr(&self) -> std::io::Result<std::net::SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until the listener fails.
    pub fn run(self) -> std::io::Result<()> {
        for stream in self.listener.incoming() {
            let stream = match stream {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let store = Arc::clone(&self.store);
            let id = self.next_id.fetch_add(1, Ordering::Relaxed);
            let log_path = self.log_dir.as_ref().map(|d| d.join(format!("session-{id}.jsonl")));
            thread::spawn(move || {
                if let Err(e) = handle_connection(stream, store, id, log_path) {
                    log::info!("session {id} ended: {e}");
                }
            });
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> thread::JoinHandle<std::io::Result<()>> {
        thread::spawn(move || self.run())
    }
}

#[allow(clippy::result_large_err)]
fn send(ws: &mut WebSocket<TcpStream>, frame: &ServerFrame) -> tungstenite::Result<()> {
    ws.send(Message::text(frame.to_json()))
}

fn handle_connection(
    stream: TcpStream,
    store: Arc<ModelStore>,
    id: u64,
    log_path: Option<PathBuf>,
) -> Result<(), Box<dyn std::error::Error>> {
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream)?;
    let mut session = Session::new(id, store);
    let mut log_file = match log_path {
        Some(p) => Some(OpenOptions::new().create(true).append(true).open(p)?),
        None => None,
    };
    let mut logged = 0;
    let mut flush_log = |session: &Session, logged: &mut usize| -> std::io::Result<()> {
        if let Some(f) = log_file.as_mut() {
            append_log(f, &session.log()[*logged..])?;
        }
        *logged = session.log().len();
        Ok(())
    };
    flush_log(&session, &mut logged)?;
    log::info!("session {id} opened");
    send(&mut ws, &session.hello())?;
    loop {
        let reply = match ws.read() {
            Ok(Message::Text(text)) => session.handle_text(text.as_str()),
            Ok(Message::Binary(_)) => ServerFrame::Error {
                message: "binary frames are not supported".into(),
            },
            Ok(Message::Close(_)) => break,
            Ok(_) => continue,
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => break,
            Err(e) => return Err(e.into()),
        };
        flush_log(&session, &mut logged)?;
        send(&mut ws, &reply)?;
    }
    log::info!("session {id} closed after {} log entries", session.log().len());
    Ok(())
}
