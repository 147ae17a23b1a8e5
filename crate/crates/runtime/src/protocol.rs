//! Framing for every message exchanged between the orchestrator and the
//! workers, and between workers over S-links.
//!
//! Frame layout, little-endian:
//!
//! ```text
//! 0   magic "IMCE"
//! 4   version u8
//! 5   type u8
//! 6   channel u32
//! 10  seq u64
//! 18  payload_len u32
//! 22  payload
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"IMCE";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 22;
/// Upper bound on a payload; larger length fields are rejected before any
/// allocation happens.
pub const MAX_PAYLOAD: u32 = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    Configure = 2,
    Weights = 3,
    Infer = 4,
    Tensor = 5,
    Stats = 6,
    Ack = 7,
    Error = 8,
    Shutdown = 9,
}

impl MsgType {
    pub const ALL: [MsgType; 9] = [
        MsgType::Hello,
        MsgType::Configure,
        MsgType::Weights,
        MsgType::Infer,
        MsgType::Tensor,
        MsgType::Stats,
        MsgType::Ack,
        MsgType::Error,
        MsgType::Shutdown,
    ];

    pub fn from_u8(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == b)
    }
}

/// Shutdown channel values.
pub const SHUTDOWN_EXIT: u32 = 0;
pub const SHUTDOWN_RESET: u32 = 1;

/// Configure channel values: load the board, then open its S-links.
pub const CONFIGURE_LOAD: u32 = 0;
pub const CONFIGURE_CONNECT: u32 = 1;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    Version(u8),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD} byte limit")]
    TooLarge(u32),
    #[error("truncated frame: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("malformed {kind:?} payload: {reason}")]
    Payload { kind: MsgType, reason: String },
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComMessage {
    pub kind: MsgType,
    pub channel: u32,
    pub seq: u64,
    pub payload: Vec<u8>,
}

impl ComMessage {
    pub fn new(kind: MsgType, channel: u32, seq: u64, payload: Vec<u8>) -> Self {
        Self {
            kind,
            channel,
            seq,
            payload,
        }
    }

    pub fn tensor(channel: u32, seq: u64, data: &[i8]) -> Self {
        Self::new(MsgType::Tensor, channel, seq, i8_bytes(data))
    }

    pub fn infer(channel: u32, seq: u64, data: &[i8]) -> Self {
        Self::new(MsgType::Infer, channel, seq, i8_bytes(data))
    }

    pub fn ack(of: MsgType, seq: u64) -> Self {
        let mut p = vec![of as u8];
        p.extend_from_slice(&seq.to_le_bytes());
        Self::new(MsgType::Ack, 0, seq, p)
    }

    pub fn error(channel: u32, seq: u64, text: impl Into<String>) -> Self {
        Self::new(MsgType::Error, channel, seq, text.into().into_bytes())
    }

    pub fn shutdown(channel: u32) -> Self {
        Self::new(MsgType::Shutdown, channel, 0, Vec::new())
    }

    pub fn json<T: serde::Serialize>(kind: MsgType, channel: u32, seq: u64, v: &T) -> Self {
        Self::new(kind, channel, seq, serde_json::to_vec(v).expect("serializable payload"))
    }

    pub fn parse_json<T: for<'de> serde::Deserialize<'de>>(&self) -> Result<T, ProtocolError> {
        serde_json::from_slice(&self.payload).map_err(|e| self.bad(e.to_string()))
    }

    /// The (type, seq) pair an Ack refers to.
    pub fn acked(&self) -> Result<(MsgType, u64), ProtocolError> {
        if self.kind != MsgType::Ack || self.payload.len() != 9 {
            return Err(self.bad(format!("expected 9 byte ack, got {} bytes", self.payload.len())));
        }
        let kind = MsgType::from_u8(self.payload[0]).ok_or_else(|| self.bad("unknown acked type".into()))?;
        let seq = u64::from_le_bytes(self.payload[1..9].try_into().expect("8 bytes"));
        Ok((kind, seq))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.payload).into_owned()
    }

    pub fn as_i8(&self) -> Vec<i8> {
        self.payload.iter().map(|&b| b as i8).collect()
    }

    fn bad(&self, reason: String) -> ProtocolError {
        ProtocolError::Payload { kind: self.kind, reason }
    }

    pub fn frame_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.frame_len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.kind as u8);
        out.extend_from_slice(&self.channel.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes one frame from the front of `buf`, returning it with the
    /// number of bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Self, usize), ProtocolError> {
        let header: &[u8; HEADER_LEN] = buf
            .get(..HEADER_LEN)
            .and_then(|h| h.try_into().ok())
            .ok_or(ProtocolError::Truncated {
                need: HEADER_LEN,
                have: buf.len(),
            })?;
        let (kind, channel, seq, len) = parse_header(header)?;
        let need = HEADER_LEN + len as usize;
        let payload = buf
            .get(HEADER_LEN..need)
            .ok_or(ProtocolError::Truncated { need, have: buf.len() })?;
        Ok((Self::new(kind, channel, seq, payload.to_vec()), need))
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), ProtocolError> {
        w.write_all(&self.encode())?;
        w.flush()?;
        Ok(())
    }

    /// Reads one frame. A clean end of stream before the first header byte
    /// is reported as [`ProtocolError::Closed`].
    pub fn read_from(r: &mut impl Read) -> Result<Self, ProtocolError> {
        let mut header = [0u8; HEADER_LEN];
        let mut got = 0;
        while got < HEADER_LEN {
            match r.read(&mut header[got..]) {
                Ok(0) if got == 0 => return Err(ProtocolError::Closed),
                Ok(0) => {
                    return Err(ProtocolError::Truncated {
                        need: HEADER_LEN,
                        have: got,
                    })
                }
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        let (kind, channel, seq, len) = parse_header(&header)?;
        let mut payload = vec![0u8; len as usize];
        r.read_exact(&mut payload).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => ProtocolError::Truncated {
                need: HEADER_LEN + len as usize,
                have: HEADER_LEN,
            },
            _ => e.into(),
        })?;
        Ok(Self::new(kind, channel, seq, payload))
    }
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(MsgType, u32, u64, u32), ProtocolError> {
    let magic: [u8; 4] = h[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(ProtocolError::BadMagic(magic));
    }
    if h[4] != VERSION {
        return Err(ProtocolError::Version(h[4]));
    }
    let kind = MsgType::from_u8(h[5]).ok_or(ProtocolError::UnknownType(h[5]))?;
    let channel = u32::from_le_bytes(h[6..10].try_into().expect("4 bytes"));
    let seq = u64::from_le_bytes(h[10..18].try_into().expect("8 bytes"));
    let len = u32::from_le_bytes(h[18..22].try_into().expect("4 bytes"));
    if len > MAX_PAYLOAD {
        return Err(ProtocolError::TooLarge(len));
    }
    Ok((kind, channel, seq, len))
}

pub fn i8_bytes(d: &[i8]) -> Vec<u8> {
    d.iter().map(|&v| v as u8).collect()
}

/// Hello payload sent by whoever opens a connection.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "peer", rename_all = "lowercase")]
pub enum Hello {
    /// Orchestrator configuration connection.
    Control { version: u8 },
    /// S-link from another board carrying one transition.
    Link { version: u8, from_board: u32, channel: u32 },
    /// Worker reply.
    Worker { version: u8, role: String },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let m = ComMessage::new(MsgType::Tensor, 0x0102_0304, 5, vec![9, 8]);
        let b = m.encode();
        assert_eq!(&b[..4], b"IMCE");
        assert_eq!(b[4], VERSION);
        assert_eq!(b[5], 5);
        assert_eq!(&b[6..10], &[4, 3, 2, 1]);
        assert_eq!(&b[10..18], &[5, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&b[18..22], &[2, 0, 0, 0]);
        assert_eq!(&b[22..], &[9, 8]);
    }

    #[test]
    fn ack_round_trip() {
        let a = ComMessage::ack(MsgType::Weights, 77);
        assert_eq!(a.acked().unwrap(), (MsgType::Weights, 77));
    }

    #[test]
    fn oversize_rejected_before_allocation() {
        let mut b = ComMessage::new(MsgType::Infer, 0, 0, vec![]).encode();
        b[18..22].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(ComMessage::decode(&b), Err(ProtocolError::TooLarge(_))));
        assert!(matches!(
            ComMessage::read_from(&mut b.as_slice()),
            Err(ProtocolError::TooLarge(_))
        ));
    }
}
