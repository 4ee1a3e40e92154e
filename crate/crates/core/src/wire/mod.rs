//! Length-prefixed binary protocol for remote velocity evaluation.
//!
//! All integers and floats are little-endian. A frame is
//!
//! ```text
//! u32 length | "CFV1" | u8 msg_type | u64 request_id | payload
//! ```
//!
//! where `length` counts every byte after itself, so a hello frame (empty
//! payload) carries `length = 13` and occupies 17 bytes on the wire.
//!
//! | type | name          | payload |
//! |------|---------------|---------|
//! | 0    | hello         | empty |
//! | 1    | eval_request  | `f64 t`, `u16 n`, then `n` × (`u16 len` + UTF-8 video id, `u16 len` + UTF-8 text id, `u32 F`, `u32 D`, `F·D` × `f32`) |
//! | 2    | eval_response | `u16 n`, then `n` × (`u32 F`, `u32 D`, `F·D` × `f32`) |
//! | 3    | error         | `u16 code`, `u16 len` + UTF-8 message |
//!
//! An empty id is the null condition. Tensors are frame-major. Engine latents
//! are `f64`; they are rounded to `f32` when crossing the wire.

mod client;
pub mod conformance;
mod server;

pub use client::{Connector, Endpoint, RemoteBackend, RemoteOptions};
pub use server::{loopback_connector, serve_connection, serve_tcp};

use std::io::Read;

use thiserror::Error;

use crate::backend::{VelocityBatch, VelocityRequest};
use crate::condition::ConditionPair;
use crate::error::Error;
use crate::latent::Latent;

pub const MAGIC: [u8; 4] = *b"CFV1";
/// Bytes of magic, type and request id.
pub const HEADER_LEN: usize = 13;
pub const MAX_FRAME_LEN: usize = 1 << 28;

pub const MSG_HELLO: u8 = 0;
pub const MSG_EVAL_REQUEST: u8 = 1;
pub const MSG_EVAL_RESPONSE: u8 = 2;
pub const MSG_ERROR: u8 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("truncated frame: needed {needed} bytes, had {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown message type {0}")]
    UnknownMsgType(u8),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
    #[error("empty batch")]
    EmptyBatch,
    #[error("frame of {0} bytes exceeds limit")]
    FrameTooLarge(usize),
}

impl WireError {
    /// Stable numeric code, also used in error frames.
    pub fn code(&self) -> u16 {
        match self {
            WireError::BadMagic(_) => 1,
            WireError::Truncated { .. } => 2,
            WireError::UnknownMsgType(_) => 3,
            WireError::LengthMismatch(_) => 4,
            WireError::InvalidPayload(_) => 5,
            WireError::EmptyBatch => 6,
            WireError::FrameTooLarge(_) => 7,
        }
    }
}

/// Error-frame code for a failed evaluation on the server.
pub const CODE_BACKEND: u16 = 16;
/// Error-frame code for a message the receiver did not expect.
pub const CODE_UNEXPECTED: u16 = 17;

#[derive(Debug, Clone)]
pub struct WireTensor {
    pub frames: u32,
    pub dims: u32,
    pub data: Vec<f32>,
}

/// Tensors compare by bit pattern.
impl PartialEq for WireTensor {
    fn eq(&self, other: &Self) -> bool {
        self.frames == other.frames
            && self.dims == other.dims
            && self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl WireTensor {
    pub fn from_latent(l: &Latent) -> Self {
        Self {
            frames: l.frames() as u32,
            dims: l.dims() as u32,
            data: l.as_slice().iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn to_latent(&self) -> crate::error::Result<Latent> {
        Latent::from_vec(self.frames as usize, self.dims as usize, self.data.iter().map(|&x| x as f64).collect())
    }

    fn shape(&self) -> (u32, u32) {
        (self.frames, self.dims)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    /// Empty means null.
    pub video: String,
    pub text: String,
    pub tensor: WireTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRequest {
    pub t: f64,
    pub items: Vec<EvalItem>,
}

impl EvalRequest {
    pub fn from_batch(batch: &VelocityBatch) -> Self {
        let items = batch
            .requests()
            .iter()
            .map(|r| EvalItem {
                video: r.cond.video().id().unwrap_or_default().to_owned(),
                text: r.cond.text().id().unwrap_or_default().to_owned(),
                tensor: WireTensor::from_latent(&r.latent),
            })
            .collect();
        Self { t: batch.t(), items }
    }

    pub fn to_batch(&self) -> crate::error::Result<VelocityBatch> {
        VelocityBatch::new(
            self.items
                .iter()
                .map(|i| {
                    Ok(VelocityRequest {
                        latent: i.tensor.to_latent()?,
                        t: self.t,
                        cond: ConditionPair::from_ids(Some(&i.video), Some(&i.text)),
                    })
                })
                .collect::<crate::error::Result<Vec<_>>>()?,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResponse {
    pub items: Vec<WireTensor>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorMessage {
    pub code: u16,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello,
    EvalRequest(EvalRequest),
    EvalResponse(EvalResponse),
    Error(ErrorMessage),
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        match self {
            Message::Hello => MSG_HELLO,
            Message::EvalRequest(_) => MSG_EVAL_REQUEST,
            Message::EvalResponse(_) => MSG_EVAL_RESPONSE,
            Message::Error(_) => MSG_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WireMessage {
    pub request_id: u64,
    pub message: Message,
}

impl WireMessage {
    pub fn new(request_id: u64, message: Message) -> Self {
        Self { request_id, message }
    }
}

// ---- encoding ----

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<(), WireError> {
    let len = u16::try_from(s.len()).map_err(|_| WireError::InvalidPayload(format!("string of {} bytes", s.len())))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, t: &WireTensor) -> Result<(), WireError> {
    let n = t.frames as usize * t.dims as usize;
    if t.data.len() != n {
        return Err(WireError::LengthMismatch(format!("{}x{} tensor with {} values", t.frames, t.dims, t.data.len())));
    }
    out.extend_from_slice(&t.frames.to_le_bytes());
    out.extend_from_slice(&t.dims.to_le_bytes());
    for x in &t.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(())
}

fn batch_len(n: usize) -> Result<u16, WireError> {
    if n == 0 {
        return Err(WireError::EmptyBatch);
    }
    u16::try_from(n).map_err(|_| WireError::InvalidPayload(format!("batch of {n} items")))
}

fn uniform_shapes<'a>(mut shapes: impl Iterator<Item = &'a WireTensor>) -> Result<(), WireError> {
    if let Some(first) = shapes.next() {
        if let Some(other) = shapes.find(|t| t.shape() != first.shape()) {
            return Err(WireError::InvalidPayload(format!(
                "batch mixes {:?} and {:?} tensors",
                first.shape(),
                other.shape()
            )));
        }
    }
    Ok(())
}

/// Serializes one frame, length prefix included.
pub fn encode(msg: &WireMessage) -> Result<Vec<u8>, WireError> {
    let mut out = vec![0u8; 4];
    out.extend_from_slice(&MAGIC);
    out.push(msg.message.msg_type());
    out.extend_from_slice(&msg.request_id.to_le_bytes());
    match &msg.message {
        Message::Hello => {}
        Message::EvalRequest(req) => {
            let n = batch_len(req.items.len())?;
            uniform_shapes(req.items.iter().map(|i| &i.tensor))?;
            out.extend_from_slice(&req.t.to_le_bytes());
            out.extend_from_slice(&n.to_le_bytes());
            for item in &req.items {
                put_str(&mut out, &item.video)?;
                put_str(&mut out, &item.text)?;
                put_tensor(&mut out, &item.tensor)?;
            }
        }
        Message::EvalResponse(resp) => {
            let n = batch_len(resp.items.len())?;
            uniform_shapes(resp.items.iter())?;
            out.extend_from_slice(&n.to_le_bytes());
            for t in &resp.items {
                put_tensor(&mut out, t)?;
            }
        }
        Message::Error(e) => {
            out.extend_from_slice(&e.code.to_le_bytes());
            put_str(&mut out, &e.message)?;
        }
    }
    let body = out.len() - 4;
    if body > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(body));
    }
    out[..4].copy_from_slice(&(body as u32).to_le_bytes());
    Ok(out)
}

// ---- decoding ----

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            WireError::LengthMismatch(format!(
                "payload needs {n} more bytes at offset {}, frame has {}",
                self.pos,
                self.buf.len() - self.pos
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String, WireError> {
        let n = self.u16()? as usize;
        let bytes = self.take(n)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| WireError::InvalidPayload("id is not UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<WireTensor, WireError> {
        let frames = self.u32()?;
        let dims = self.u32()?;
        let bytes = (frames as usize)
            .checked_mul(dims as usize)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| WireError::LengthMismatch(format!("{frames}x{dims} tensor overflows")))?;
        let raw = self.take(bytes)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(WireTensor { frames, dims, data })
    }

    fn finish(&self) -> Result<(), WireError> {
        if self.pos != self.buf.len() {
            return Err(WireError::LengthMismatch(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// Decodes the bytes that follow a length prefix.
pub fn decode_body(body: &[u8]) -> Result<WireMessage, WireError> {
    if body.len() >= 4 && body[..4] != MAGIC {
        return Err(WireError::BadMagic(body[..4].try_into().unwrap()));
    }
    if body.len() < HEADER_LEN {
        return Err(WireError::LengthMismatch(format!("frame length {} below header size", body.len())));
    }
    let mut c = Cursor { buf: body, pos: 4 };
    let msg_type = c.take(1)?[0];
    let request_id = c.u64()?;
    let message = match msg_type {
        MSG_HELLO => Message::Hello,
        MSG_EVAL_REQUEST => {
            let t = c.f64()?;
            let n = c.u16()?;
            if n == 0 {
                return Err(WireError::EmptyBatch);
            }
            let items = (0..n)
                .map(|_| Ok(EvalItem { video: c.string()?, text: c.string()?, tensor: c.tensor()? }))
                .collect::<Result<Vec<_>, WireError>>()?;
            uniform_shapes(items.iter().map(|i| &i.tensor))?;
            Message::EvalRequest(EvalRequest { t, items })
        }
        MSG_EVAL_RESPONSE => {
            let n = c.u16()?;
            if n == 0 {
                return Err(WireError::EmptyBatch);
            }
            let items = (0..n).map(|_| c.tensor()).collect::<Result<Vec<_>, WireError>>()?;
            uniform_shapes(items.iter())?;
            Message::EvalResponse(EvalResponse { items })
        }
        MSG_ERROR => Message::Error(ErrorMessage { code: c.u16()?, message: c.string()? }),
        other => return Err(WireError::UnknownMsgType(other)),
    };
    c.finish()?;
    Ok(WireMessage { request_id, message })
}

/// Decodes exactly one frame, length prefix included.
pub fn decode(bytes: &[u8]) -> Result<WireMessage, WireError> {
    let (msg, used) = decode_prefix(bytes)?;
    if used != bytes.len() {
        return Err(WireError::LengthMismatch(format!("{} bytes after frame end", bytes.len() - used)));
    }
    Ok(msg)
}

/// Decodes the first frame of `bytes`, returning it with its total size.
pub fn decode_prefix(bytes: &[u8]) -> Result<(WireMessage, usize), WireError> {
    if bytes.len() < 4 {
        return Err(WireError::Truncated { needed: 4, available: bytes.len() });
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len));
    }
    if bytes.len() - 4 < len {
        return Err(WireError::Truncated { needed: 4 + len, available: bytes.len() });
    }
    Ok((decode_body(&bytes[4..4 + len])?, 4 + len))
}

fn read_full(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

/// Reads one frame from a stream. `Ok(None)` is a clean close between frames.
pub fn read_frame(r: &mut impl Read) -> Result<Option<WireMessage>, Error> {
    let io = |e: std::io::Error| Error::Transport(e.to_string());
    let mut prefix = [0u8; 4];
    match read_full(r, &mut prefix).map_err(io)? {
        0 => return Ok(None),
        4 => {}
        n => return Err(WireError::Truncated { needed: 4, available: n }.into()),
    }
    let len = u32::from_le_bytes(prefix) as usize;
    if len > MAX_FRAME_LEN {
        return Err(WireError::FrameTooLarge(len).into());
    }
    let mut body = vec![0u8; len];
    let got = read_full(r, &mut body).map_err(io)?;
    if got < len {
        return Err(WireError::Truncated { needed: 4 + len, available: 4 + got }.into());
    }
    Ok(Some(decode_body(&body)?))
}
