//! Binary framing for the device/broker link.
//!
//! Each message is a 5-octet header followed by the body:
//!
//! ```text
//! octet 0      command code
//! octet 1..3   message id, big-endian u16, never zero
//! octet 3..5   body length, big-endian u16, at most 1024
//! octet 5..    body, verbatim
//! ```
//!
//! Hardware writes carry an ASCII body of NUL-joined fields,
//! e.g. `vw\0*0\0*23.4` (no trailing NUL). Responses carry a two-octet
//! big-endian status code.

use thiserror::Error;

/// Upper bound on a message body, in octets.
pub const MAX_BODY_LEN: usize = 1024;
/// Fixed header size, in octets.
pub const HEADER_LEN: usize = 5;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("unknown command code {code:#04x}")]
    UnknownCommand { code: u8 },
    #[error("body of {len} octets exceeds the {MAX_BODY_LEN}-octet cap")]
    BodyTooLarge { len: usize },
    #[error("message id must not be zero")]
    ZeroMessageId,
    #[error("malformed hardware body: {0}")]
    MalformedBody(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Command {
    Response = 0,
    Login = 2,
    Ping = 6,
    Hardware = 20,
}

impl Command {
    pub fn from_u8(code: u8) -> Option<Self> {
        match code {
            0 => Some(Command::Response),
            2 => Some(Command::Login),
            6 => Some(Command::Ping),
            20 => Some(Command::Hardware),
            _ => None,
        }
    }
}

/// Status carried in the two-octet body of a `Response`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatusCode {
    Ok,
    InvalidToken,
    IllegalCommand,
    Other(u16),
}

impl StatusCode {
    pub fn as_u16(self) -> u16 {
        match self {
            StatusCode::Ok => 200,
            StatusCode::InvalidToken => 9,
            StatusCode::IllegalCommand => 2,
            StatusCode::Other(code) => code,
        }
    }

    pub fn from_u16(code: u16) -> Self {
        match code {
            200 => StatusCode::Ok,
            9 => StatusCode::InvalidToken,
            2 => StatusCode::IllegalCommand,
            other => StatusCode::Other(other),
        }
    }
}

/// One framed message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolMessage {
    pub command: Command,
    pub message_id: u16,
    pub body: Vec<u8>,
}

impl ProtocolMessage {
    pub fn login(message_id: u16, token: &str) -> Self {
        Self { command: Command::Login, message_id, body: token.as_bytes().to_vec() }
    }

    pub fn ping(message_id: u16) -> Self {
        Self { command: Command::Ping, message_id, body: Vec::new() }
    }

    pub fn hardware_write(message_id: u16, pin: u8, value: &str) -> Self {
        Self {
            command: Command::Hardware,
            message_id,
            body: encode_hardware_body(pin, value),
        }
    }

    pub fn response(message_id: u16, status: StatusCode) -> Self {
        Self {
            command: Command::Response,
            message_id,
            body: status.as_u16().to_be_bytes().to_vec(),
        }
    }

    /// Status code of a `Response` message, if this is one.
    pub fn status(&self) -> Option<StatusCode> {
        if self.command != Command::Response || self.body.len() != 2 {
            return None;
        }
        Some(StatusCode::from_u16(u16::from_be_bytes([self.body[0], self.body[1]])))
    }
}

/// Serializes one message to wire octets.
pub fn encode_message(msg: &ProtocolMessage) -> Result<Vec<u8>, ProtocolError> {
    if msg.message_id == 0 {
        return Err(ProtocolError::ZeroMessageId);
    }
    if msg.body.len() > MAX_BODY_LEN {
        return Err(ProtocolError::BodyTooLarge { len: msg.body.len() });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + msg.body.len());
    out.push(msg.command as u8);
    out.extend_from_slice(&msg.message_id.to_be_bytes());
    out.extend_from_slice(&(msg.body.len() as u16).to_be_bytes());
    out.extend_from_slice(&msg.body);
    Ok(out)
}

/// Attempts to cut one message off the front of `buf`.
///
/// `Ok(None)` means the buffer holds an incomplete message; errors poison
/// the stream and the connection carrying it must be dropped. The header is
/// validated as soon as it is complete, before the body arrives.
fn decode_one(buf: &[u8]) -> Result<Option<(ProtocolMessage, usize)>, ProtocolError> {
    if buf.len() < HEADER_LEN {
        return Ok(None);
    }
    let command = Command::from_u8(buf[0]).ok_or(ProtocolError::UnknownCommand { code: buf[0] })?;
    let message_id = u16::from_be_bytes([buf[1], buf[2]]);
    if message_id == 0 {
        return Err(ProtocolError::ZeroMessageId);
    }
    let body_len = u16::from_be_bytes([buf[3], buf[4]]) as usize;
    if body_len > MAX_BODY_LEN {
        return Err(ProtocolError::BodyTooLarge { len: body_len });
    }
    let total = HEADER_LEN + body_len;
    if buf.len() < total {
        return Ok(None);
    }
    let msg = ProtocolMessage { command, message_id, body: buf[HEADER_LEN..total].to_vec() };
    Ok(Some((msg, total)))
}

/// Extracts every complete message from `buf`, returning the unconsumed
/// tail. A truncated final message is not an error; it is the remainder.
pub fn decode_stream(buf: &[u8]) -> Result<(Vec<ProtocolMessage>, &[u8]), ProtocolError> {
    let mut messages = Vec::new();
    let mut offset = 0;
    while let Some((msg, consumed)) = decode_one(&buf[offset..])? {
        messages.push(msg);
        offset += consumed;
    }
    Ok((messages, &buf[offset..]))
}

/// Incremental decoder owning one connection's receive buffer.
///
/// Unlike [`decode_stream`], messages are handed out one at a time, so
/// everything complete before a framing error can still be processed.
#[derive(Debug, Default, Clone)]
pub struct StreamDecoder {
    buf: Vec<u8>,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete message, if any. An `Err` is fatal for the stream.
    pub fn next_message(&mut self) -> Result<Option<ProtocolMessage>, ProtocolError> {
        match decode_one(&self.buf)? {
            Some((msg, consumed)) => {
                self.buf.drain(..consumed);
                Ok(Some(msg))
            }
            None => Ok(None),
        }
    }

    pub fn pending_len(&self) -> usize {
        self.buf.len()
    }
}

/// Decoded body of a `Hardware` message. The verb is always `vw`
/// (virtual write); only the pin and its ASCII value vary.
#[derive(Debug, Clone, PartialEq)]
pub struct HardwareBody {
    pub pin: u8,
    pub value: String,
}

/// NUL-joins `vw`, the pin and the value, with no trailing NUL.
pub fn encode_hardware_body(pin: u8, value: &str) -> Vec<u8> {
    let mut body = Vec::with_capacity(4 + value.len());
    body.extend_from_slice(b"vw");
    body.push(0);
    body.extend_from_slice(pin.to_string().as_bytes());
    body.push(0);
    body.extend_from_slice(value.as_bytes());
    body
}

/// Splits and validates a hardware body: exactly three NUL-separated
/// fields, verb `vw`, pin in 0..=255, value a finite decimal.
pub fn parse_hardware_body(body: &[u8]) -> Result<HardwareBody, ProtocolError> {
    let text = std::str::from_utf8(body)
        .map_err(|_| ProtocolError::MalformedBody("body is not ASCII".into()))?;
    let fields: Vec<&str> = text.split('\0').collect();
    if fields.len() != 3 {
        return Err(ProtocolError::MalformedBody(format!(
            "expected 3 fields, got {}",
            fields.len()
        )));
    }
    if fields[0] != "vw" {
        return Err(ProtocolError::MalformedBody(format!("unsupported verb {:?}", fields[0])));
    }
    let pin: u8 = fields[1]
        .parse()
        .map_err(|_| ProtocolError::MalformedBody(format!("bad pin {:?}", fields[1])))?;
    let numeric: f64 = fields[2]
        .parse()
        .map_err(|_| ProtocolError::MalformedBody(format!("bad value {:?}", fields[2])))?;
    if !numeric.is_finite() {
        return Err(ProtocolError::MalformedBody(format!("non-finite value {:?}", fields[2])));
    }
    Ok(HardwareBody { pin, value: fields[2].to_string() })
}
