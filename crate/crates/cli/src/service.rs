//! Local WebSocket demo service. One client at a time; binary messages carry
//! little-endian PCM-16, text messages carry commands, and every reply is
//! one JSON event per message.

use std::io::ErrorKind;
use std::net::{Ipv4Addr, TcpListener, TcpStream};
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use tungstenite::{Message, WebSocket};

use kwspot_core::pipeline::{Detector, DetectorConfig, ServiceEvent};
use kwspot_core::QuantizedModel;

/// Binds localhost:`port`; port 0 picks a free one.
pub fn bind(port: u16) -> Result<TcpListener> {
    TcpListener::bind((Ipv4Addr::LOCALHOST, port)).map_err(|e| match e.kind() {
        ErrorKind::AddrInUse => anyhow!("port in use: {port}"),
        _ => anyhow!(e).context(format!("binding port {port}")),
    })
}

fn error_event(message: impl Into<String>) -> ServiceEvent {
    ServiceEvent::Error {
        message: message.into(),
    }
}

/// Events answering one client message. Protocol errors become ERROR
/// events; the session continues.
pub fn respond(detector: &mut Detector, message: &Message) -> Vec<ServiceEvent> {
    match message {
        Message::Binary(bytes) => {
            if bytes.len() % 2 != 0 {
                return vec![error_event(format!(
                    "malformed frame: {} bytes is not a whole number of PCM-16 samples",
                    bytes.len()
                ))];
            }
            let samples: Vec<i16> = bytes
                .chunks_exact(2)
                .map(|p| i16::from_le_bytes([p[0], p[1]]))
                .collect();
            detector
                .push(&samples)
                .unwrap_or_else(|e| vec![error_event(e.to_string())])
        }
        Message::Text(text) => match text.trim() {
            "reset" => vec![detector.reset()],
            other => vec![error_event(format!("unknown command {other:?}"))],
        },
        _ => Vec::new(),
    }
}

/// Runs one session until the client closes.
pub fn handle_client(stream: TcpStream, model: Arc<QuantizedModel>, config: DetectorConfig) -> Result<()> {
    let mut detector = Detector::new(model, config)?;
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream).map_err(|e| anyhow!("handshake failed: {e}"))?;
    loop {
        let message = match ws.read() {
            Ok(m) => m,
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(anyhow!(e)),
        };
        if message.is_close() {
            // tungstenite answers the close frame on the next read
            continue;
        }
        for event in respond(&mut detector, &message) {
            ws.send(Message::text(event.to_json()))?;
        }
    }
}

/// Accepts clients one after another. Stops after `max_clients` sessions
/// when given.
pub fn serve(
    listener: TcpListener,
    model: Arc<QuantizedModel>,
    config: DetectorConfig,
    max_clients: Option<usize>,
) -> Result<()> {
    Detector::new(model.clone(), config).context("invalid service configuration")?;
    for (i, stream) in listener.incoming().enumerate() {
        let stream = stream.context("accepting connection")?;
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        if let Err(e) = handle_client(stream, model.clone(), config) {
            eprintln!("client {peer}: {e:#}");
        }
        if max_clients.is_some_and(|m| i + 1 >= m) {
            break;
        }
    }
    Ok(())
}
