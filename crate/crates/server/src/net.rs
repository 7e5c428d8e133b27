use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tungstenite::{accept, Message, WebSocket};

use crate::session::{Hub, Outgoing, Session};

/// How often an idle connection checks for notifications.
const POLL_INTERVAL: Duration = Duration::from_millis(20);

/// Websocket endpoint. Each connection runs in its own thread.
pub struct Server {
    listener: TcpListener,
    hub: Arc<Hub>,
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, hub: Arc<Hub>) -> std::io::Result<Server> {
        Ok(Server { listener: TcpListener::bind(addr)?, hub })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections until the listener fails.
    pub fn run(self) -> std::io::Result<()> {
        for stream in self.listener.incoming() {
            let stream = stream?;
            let hub = Arc::clone(&self.hub);
            std::thread::spawn(move || {
                let peer = stream.peer_addr().ok();
                if let Err(e) = serve_connection(stream, hub) {
                    log::info!("connection {peer:?} closed: {e}");
                }
            });
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> JoinHandle<std::io::Result<()>> {
        std::thread::spawn(move || self.run())
    }
}

fn send_all(ws: &mut WebSocket<TcpStream>, out: Vec<Outgoing>) -> tungstenite::Result<()> {
    for m in out {
        ws.write(match m {
            Outgoing::Text(t) => Message::text(t),
            Outgoing::Binary(b) => Message::binary(b),
        })?;
    }
    ws.flush()
}

fn serve_connection(stream: TcpStream, hub: Arc<Hub>) -> tungstenite::Result<()> {
    stream.set_nodelay(true).ok();
    let mut ws = accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_mut().set_read_timeout(Some(POLL_INTERVAL))?;
    let mut session = Session::new(hub);
    let hello = session.hello();
    send_all(&mut ws, hello)?;
    loop {
        let notes = session.poll_notifications();
        if !notes.is_empty() {
            send_all(&mut ws, notes)?;
        }
        match ws.read() {
            Ok(Message::Text(t)) => {
                let replies = session.handle(&t);
                send_all(&mut ws, replies)?;
            }
            Ok(Message::Binary(_)) => {
                let replies = session.handle("<binary>");
                send_all(&mut ws, replies)?;
            }
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e),
        }
    }
}
