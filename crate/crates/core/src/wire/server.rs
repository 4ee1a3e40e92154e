use std::io::{BufReader, BufWriter, Read, Write};
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use super::client::{ByteReader, ByteWriter, Connector};
use super::{
    encode, read_frame, ErrorMessage, EvalResponse, Message, WireMessage, WireTensor, CODE_BACKEND, CODE_UNEXPECTED,
};
use crate::backend::VelocityField;
use crate::error::{Error, Result};

fn send(w: &mut impl Write, msg: WireMessage) -> Result<()> {
    w.write_all(&encode(&msg)?)?;
    w.flush()?;
    Ok(())
}

fn send_error(w: &mut impl Write, id: u64, code: u16, message: String) -> Result<()> {
    send(w, WireMessage::new(id, Message::Error(ErrorMessage { code, message })))
}

/// Answers frames on one connection until the peer closes it.
///
/// A hello must come first and is echoed back. Evaluation failures are
/// reported as error frames and the connection stays up; malformed frames
/// and protocol violations get an error frame and then close the connection.
pub fn serve_connection<B, R, W>(backend: &B, reader: R, writer: W) -> Result<()>
where
    B: VelocityField + ?Sized,
    R: Read,
    W: Write,
{
    let mut reader = BufReader::new(reader);
    let mut writer = BufWriter::new(writer);
    let mut greeted = false;
    loop {
        let frame = match read_frame(&mut reader) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(Error::Wire(e)) => {
                let _ = send_error(&mut writer, 0, e.code(), e.to_string());
                return Err(Error::Wire(e));
            }
            Err(e) => return Err(e),
        };
        let id = frame.request_id;
        match frame.message {
            Message::Hello => {
                greeted = true;
                send(&mut writer, WireMessage::new(id, Message::Hello))?;
            }
            Message::EvalRequest(req) if greeted => {
                let reply = req.to_batch().and_then(|batch| backend.evaluate(&batch));
                match reply {
                    Ok(vs) => {
                        let items = vs.iter().map(WireTensor::from_latent).collect();
                        send(&mut writer, WireMessage::new(id, Message::EvalResponse(EvalResponse { items })))?;
                    }
                    Err(e) => send_error(&mut writer, id, CODE_BACKEND, e.to_string())?,
                }
            }
            other => {
                let what = if greeted { "unexpected" } else { "hello required before" };
                let msg = format!("{what} message type {}", other.msg_type());
                send_error(&mut writer, id, CODE_UNEXPECTED, msg.clone())?;
                return Err(Error::Protocol(msg));
            }
        }
    }
}

/// Serves every incoming TCP connection on its own thread. Runs until the
/// listener fails.
pub fn serve_tcp(listener: TcpListener, backend: Arc<dyn VelocityField>) -> Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let backend = backend.clone();
        thread::spawn(move || {
            let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
            let reader = match stream.try_clone() {
                Ok(r) => r,
                Err(e) => return log::warn!("{peer}: {e}"),
            };
            if let Err(e) = serve_connection(&*backend, reader, stream) {
                log::warn!("{peer}: {e}");
            }
        });
    }
    Ok(())
}

/// Connector that starts an in-process server thread per connection,
/// talking over a pair of OS pipes.
pub fn loopback_connector(backend: Arc<dyn VelocityField>) -> Arc<Connector> {
    Arc::new(move || {
        let (client_read, server_write) = std::io::pipe()?;
        let (server_read, client_write) = std::io::pipe()?;
        let backend = backend.clone();
        thread::Builder::new().name("counterflow-loopback".into()).spawn(move || {
            if let Err(e) = serve_connection(&*backend, server_read, server_write) {
                log::debug!("loopback server: {e}");
            }
        })?;
        Ok((Box::new(client_read) as ByteReader, Box::new(client_write) as ByteWriter))
    })
}
