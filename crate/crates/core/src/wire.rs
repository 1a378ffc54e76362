//! Binary wire protocol shared by every node role and the client.
//!
//! Frame layout: `[payload_len u32 BE][kind u8][payload]`.
//!
//! Command layout (Request and Replicate payloads):
//! `[opcode u8][key_len u32 BE][key][val_len u32 BE][value][count u32 BE]`.
//!
//! Reply layout: `[status u8][val_len u32 BE][value]`. A SCAN reply value is a
//! concatenation of `[key_len u32 BE][key][val_len u32 BE][val]` entries.

use std::fmt;
use std::num::NonZeroU32;
use std::ops::Deref;

use bytes::{Buf, BufMut, Bytes, BytesMut};
use thiserror::Error;

/// Longest key accepted anywhere in the system.
pub const MAX_KEY_LEN: usize = 65_535;
/// Largest frame payload a decoder will accept (16 MiB).
pub const MAX_FRAME_PAYLOAD: usize = 16 * 1024 * 1024;
/// Length prefix plus kind byte.
pub const FRAME_HEADER_LEN: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("invalid key: {0}")]
    InvalidKey(&'static str),
    #[error("invalid command: {0}")]
    InvalidCommand(&'static str),
    #[error("malformed command: {0}")]
    MalformedCommand(&'static str),
    #[error("malformed reply: {0}")]
    MalformedReply(&'static str),
    #[error("malformed scan entries: {0}")]
    MalformedScan(&'static str),
    #[error("malformed endpoint: {0}")]
    MalformedEndpoint(&'static str),
    #[error("frame declares {0} payload bytes, limit is 16 MiB")]
    FrameTooLarge(u32),
    #[error("unknown frame kind 0x{0:02x}")]
    MalformedFrame(u8),
}

/// A non-empty key of at most [`MAX_KEY_LEN`] bytes.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Key(Bytes);

impl Key {
    pub fn new(bytes: impl Into<Bytes>) -> Result<Self, WireError> {
        let bytes = bytes.into();
        if bytes.is_empty() {
            return Err(WireError::InvalidKey("key is empty"));
        }
        if bytes.len() > MAX_KEY_LEN {
            return Err(WireError::InvalidKey("key longer than 65535 bytes"));
        }
        Ok(Key(bytes))
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_bytes(self) -> Bytes {
        self.0
    }
}

impl Deref for Key {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Key({:?})", String::from_utf8_lossy(&self.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Opcode {
    Set = 0x01,
    Get = 0x02,
    Del = 0x03,
    Scan = 0x04,
}

impl TryFrom<u8> for Opcode {
    type Error = WireError;

    fn try_from(b: u8) -> Result<Self, WireError> {
        match b {
            0x01 => Ok(Opcode::Set),
            0x02 => Ok(Opcode::Get),
            0x03 => Ok(Opcode::Del),
            0x04 => Ok(Opcode::Scan),
            _ => Err(WireError::MalformedCommand("unknown opcode")),
        }
    }
}

/// A store operation. The variants make the per-opcode field rules
/// unrepresentable when violated: only SET carries a value, only SCAN a count.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Command {
    Set {
        key: Key,
        value: Bytes,
    },
    Get {
        key: Key,
    },
    Del {
        key: Key,
    },
    /// Up to `count` entries with key >= `start`, in lexicographic order.
    Scan {
        start: Key,
        count: NonZeroU32,
    },
}

impl Command {
    pub fn set(key: impl Into<Bytes>, value: impl Into<Bytes>) -> Result<Self, WireError> {
        Ok(Command::Set {
            key: Key::new(key)?,
            value: value.into(),
        })
    }

    pub fn get(key: impl Into<Bytes>) -> Result<Self, WireError> {
        Ok(Command::Get {
            key: Key::new(key)?,
        })
    }

    pub fn del(key: impl Into<Bytes>) -> Result<Self, WireError> {
        Ok(Command::Del {
            key: Key::new(key)?,
        })
    }

    pub fn scan(start: impl Into<Bytes>, count: u32) -> Result<Self, WireError> {
        let count =
            NonZeroU32::new(count).ok_or(WireError::InvalidCommand("SCAN count must be >= 1"))?;
        Ok(Command::Scan {
            start: Key::new(start)?,
            count,
        })
    }

    pub fn opcode(&self) -> Opcode {
        match self {
            Command::Set { .. } => Opcode::Set,
            Command::Get { .. } => Opcode::Get,
            Command::Del { .. } => Opcode::Del,
            Command::Scan { .. } => Opcode::Scan,
        }
    }

    pub fn key(&self) -> &Key {
        match self {
            Command::Set { key, .. } | Command::Get { key } | Command::Del { key } => key,
            Command::Scan { start, .. } => start,
        }
    }

    /// True exactly for the commands that change stored data (SET and DEL).
    pub fn is_write(&self) -> bool {
        matches!(self, Command::Set { .. } | Command::Del { .. })
    }

    pub fn encoded_len(&self) -> usize {
        let value_len = match self {
            Command::Set { value, .. } => value.len(),
            _ => 0,
        };
        1 + 4 + self.key().len() + 4 + value_len + 4
    }

    pub fn encode(&self) -> Bytes {
        let mut buf = BytesMut::with_capacity(self.encoded_len());
        self.encode_into(&mut buf);
        buf.freeze()
    }

    pub fn encode_into(&self, buf: &mut BytesMut) {
        let (value, count): (&[u8], u32) = match self {
            Command::Set { value, .. } => (value, 0),
            Command::Scan { count, .. } => (&[], count.get()),
            _ => (&[], 0),
        };
        let key = self.key();
        buf.reserve(self.encoded_len());
        buf.put_u8(self.opcode() as u8);
        buf.put_u32(key.len() as u32);
        buf.put_slice(key);
        buf.put_u32(value.len() as u32);
        buf.put_slice(value);
        buf.put_u32(count);
    }

    /// Exact inverse of [`Command::encode`]. Every declared length is checked
    /// against the buffer before it is used.
    pub fn decode(mut bytes: &[u8]) -> Result<Self, WireError> {
        use WireError::MalformedCommand as Bad;

        if bytes.remaining() < 1 {
            return Err(Bad("truncated before opcode"));
        }
        let opcode = Opcode::try_from(bytes.get_u8())?;
        let key_len = read_len(&mut bytes).ok_or(Bad("truncated key length"))?;
        if key_len == 0 {
            return Err(Bad("empty key"));
        }
        if key_len > MAX_KEY_LEN {
            return Err(Bad("key longer than 65535 bytes"));
        }
        let key = take(&mut bytes, key_len).ok_or(Bad("truncated key"))?;
        let val_len = match read_len(&mut bytes) {
            Some(n) => n,
            None if opcode == Opcode::Set => return Err(Bad("SET missing value")),
            None => return Err(Bad("truncated value length")),
        };
        let value = match take(&mut bytes, val_len) {
            Some(v) => v,
            None if opcode == Opcode::Set => return Err(Bad("SET missing value")),
            None => return Err(Bad("truncated value")),
        };
        if bytes.remaining() < 4 {
            return Err(Bad("truncated count"));
        }
        let count = bytes.get_u32();
        if bytes.has_remaining() {
            return Err(Bad("trailing bytes"));
        }

        let key = Key(Bytes::copy_from_slice(key));
        match opcode {
            Opcode::Set => {
                if count != 0 {
                    return Err(Bad("SET with non-zero count"));
                }
                Ok(Command::Set {
                    key,
                    value: Bytes::copy_from_slice(value),
                })
            }
            Opcode::Get | Opcode::Del => {
                if !value.is_empty() {
                    return Err(Bad("GET/DEL with a value"));
                }
                if count != 0 {
                    return Err(Bad("GET/DEL with non-zero count"));
                }
                Ok(if opcode == Opcode::Get {
                    Command::Get { key }
                } else {
                    Command::Del { key }
                })
            }
            Opcode::Scan => {
                if !value.is_empty() {
                    return Err(Bad("SCAN with a value"));
                }
                let count = NonZeroU32::new(count).ok_or(Bad("SCAN with zero count"))?;
                Ok(Command::Scan { start: key, count })
            }
        }
    }
}

fn read_len(bytes: &mut &[u8]) -> Option<usize> {
    if bytes.remaining() < 4 {
        return None;
    }
    Some(bytes.get_u32() as usize)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Option<&'a [u8]> {
    if bytes.len() < n {
        return None;
    }
    let (head, tail) = bytes.split_at(n);
    *bytes = tail;
    Some(head)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Status {
    Ok = 0x00,
    NotFound = 0x01,
    Error = 0x02,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Reply {
    status: Status,
    value: Bytes,
}

impl Reply {
    pub fn ok() -> Self {
        Reply {
            status: Status::Ok,
            value: Bytes::new(),
        }
    }

    pub fn ok_with(value: impl Into<Bytes>) -> Self {
        Reply {
            status: Status::Ok,
            value: value.into(),
        }
    }

    pub fn not_found() -> Self {
        Reply {
            status: Status::NotFound,
            value: Bytes::new(),
        }
    }

    /// Error reply; the value carries a human-readable reason.
    pub fn error(reason: impl Into<Bytes>) -> Self {
        Reply {
            status: Status::Error,
            value: reason.into(),
        }
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn value(&self) -> &Bytes {
        &self.value
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    pub fn encode(&self) -> Bytes {
        let mut buf = BytesMut::with_capacity(5 + self.value.len());
        buf.put_u8(self.status as u8);
        buf.put_u32(self.value.len() as u32);
        buf.put_slice(&self.value);
        buf.freeze()
    }

    pub fn decode(mut bytes: &[u8]) -> Result<Self, WireError> {
        use WireError::MalformedReply as Bad;

        if bytes.remaining() < 1 {
            return Err(Bad("truncated before status"));
        }
        let status = match bytes.get_u8() {
            0x00 => Status::Ok,
            0x01 => Status::NotFound,
            0x02 => Status::Error,
            _ => return Err(Bad("unknown status")),
        };
        let len = read_len(&mut bytes).ok_or(Bad("truncated value length"))?;
        let value = take(&mut bytes, len).ok_or(Bad("truncated value"))?;
        if bytes.has_remaining() {
            return Err(Bad("trailing bytes"));
        }
        if status == Status::NotFound && !value.is_empty() {
            return Err(Bad("NotFound with a value"));
        }
        Ok(Reply {
            status,
            value: Bytes::copy_from_slice(value),
        })
    }
}

/// Packs SCAN results into a reply value.
pub fn encode_scan_entries<'a, I>(entries: I) -> Bytes
where
    I: IntoIterator<Item = (&'a [u8], &'a [u8])>,
{
    let mut buf = BytesMut::new();
    for (k, v) in entries {
        buf.put_u32(k.len() as u32);
        buf.put_slice(k);
        buf.put_u32(v.len() as u32);
        buf.put_slice(v);
    }
    buf.freeze()
}

pub fn decode_scan_entries(mut bytes: &[u8]) -> Result<Vec<(Bytes, Bytes)>, WireError> {
    use WireError::MalformedScan as Bad;

    let mut out = Vec::new();
    while bytes.has_remaining() {
        let klen = read_len(&mut bytes).ok_or(Bad("truncated key length"))?;
        let k = take(&mut bytes, klen).ok_or(Bad("truncated key"))?;
        let vlen = read_len(&mut bytes).ok_or(Bad("truncated value length"))?;
        let v = take(&mut bytes, vlen).ok_or(Bad("truncated value"))?;
        out.push((Bytes::copy_from_slice(k), Bytes::copy_from_slice(v)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameKind {
    Request = 0x01,
    Reply = 0x02,
    Replicate = 0x03,
    RegisterSlave = 0x04,
    Ack = 0x05,
}

impl TryFrom<u8> for FrameKind {
    type Error = WireError;

    fn try_from(b: u8) -> Result<Self, WireError> {
        match b {
            0x01 => Ok(FrameKind::Request),
            0x02 => Ok(FrameKind::Reply),
            0x03 => Ok(FrameKind::Replicate),
            0x04 => Ok(FrameKind::RegisterSlave),
            0x05 => Ok(FrameKind::Ack),
            other => Err(WireError::MalformedFrame(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub payload: Bytes,
}

impl Frame {
    pub fn new(kind: FrameKind, payload: impl Into<Bytes>) -> Self {
        Frame {
            kind,
            payload: payload.into(),
        }
    }

    pub fn request(cmd: &Command) -> Self {
        Frame::new(FrameKind::Request, cmd.encode())
    }

    pub fn replicate(cmd: &Command) -> Self {
        Frame::new(FrameKind::Replicate, cmd.encode())
    }

    pub fn reply(reply: &Reply) -> Self {
        Frame::new(FrameKind::Reply, reply.encode())
    }

    pub fn ack() -> Self {
        Frame::new(FrameKind::Ack, Bytes::new())
    }

    pub fn encode(&self) -> Bytes {
        let mut buf = BytesMut::with_capacity(FRAME_HEADER_LEN + self.payload.len());
        self.encode_into(&mut buf);
        buf.freeze()
    }

    pub fn encode_into(&self, buf: &mut BytesMut) {
        debug_assert!(self.payload.len() <= MAX_FRAME_PAYLOAD);
        buf.reserve(FRAME_HEADER_LEN + self.payload.len());
        buf.put_u32(self.payload.len() as u32);
        buf.put_u8(self.kind as u8);
        buf.put_slice(&self.payload);
    }

    /// Pops one complete frame off the front of `buf`, if there is one.
    ///
    /// The header is validated as soon as its five bytes are present, so an
    /// oversized or unknown frame is rejected before its payload is buffered.
    pub fn decode_from(buf: &mut BytesMut) -> Result<Option<Frame>, WireError> {
        if buf.len() < FRAME_HEADER_LEN {
            return Ok(None);
        }
        let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]);
        if len as usize > MAX_FRAME_PAYLOAD {
            return Err(WireError::FrameTooLarge(len));
        }
        let kind = FrameKind::try_from(buf[4])?;
        let total = FRAME_HEADER_LEN + len as usize;
        if buf.len() < total {
            buf.reserve(total - buf.len());
            return Ok(None);
        }
        buf.advance(FRAME_HEADER_LEN);
        let payload = buf.split_to(len as usize).freeze();
        Ok(Some(Frame { kind, payload }))
    }
}

/// Incremental frame decoder for a byte stream delivered in arbitrary chunks.
/// One per connection.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: BytesMut,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, chunk: &[u8]) {
        self.buf.extend_from_slice(chunk);
    }

    pub fn next_frame(&mut self) -> Result<Option<Frame>, WireError> {
        Frame::decode_from(&mut self.buf)
    }

    /// Bytes received but not yet consumed by a complete frame.
    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn set_layout_is_exact() {
        let bytes = Command::set("a", "b").unwrap().encode();
        let expected: &[u8] = &[0x01, 0, 0, 0, 1, b'a', 0, 0, 0, 1, b'b', 0, 0, 0, 0];
        assert_eq!(&bytes[..], expected);
    }

    #[test]
    fn get_layout_is_exact() {
        let bytes = Command::get("a").unwrap().encode();
        let expected: &[u8] = &[0x02, 0, 0, 0, 1, b'a', 0, 0, 0, 0, 0, 0, 0, 0];
        assert_eq!(bytes.len(), 14);
        assert_eq!(&bytes[..], expected);
    }

    #[test]
    fn decode_inverts_encode() {
        let cmd = Command::set("k", "v").unwrap();
        assert_eq!(Command::decode(&cmd.encode()).unwrap(), cmd);
    }

    #[test]
    fn decode_rejects_bad_input() {
        let cases: Vec<(Vec<u8>, &str)> = vec![
            (vec![], "truncated before opcode"),
            (
                vec![0x09, 0, 0, 0, 1, b'a', 0, 0, 0, 0, 0, 0, 0, 0],
                "unknown opcode",
            ),
            (vec![0x02, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0], "empty key"),
            (vec![0x01, 0, 0, 0, 1, b'a'], "SET missing value"),
            (
                vec![0x01, 0, 0, 0, 1, b'a', 0, 0, 0, 5, b'x'],
                "SET missing value",
            ),
            (
                vec![0x02, 0, 0, 0, 1, b'a', 0, 0, 0, 0, 0, 0, 0, 0, 0xff],
                "trailing bytes",
            ),
            (
                vec![0x02, 0, 0, 0, 1, b'a', 0, 0, 0, 1, b'x', 0, 0, 0, 0],
                "GET/DEL with a value",
            ),
            (
                vec![0x04, 0, 0, 0, 1, b'a', 0, 0, 0, 0, 0, 0, 0, 0],
                "SCAN with zero count",
            ),
            (
                vec![0x02, 0xff, 0xff, 0xff, 0xff, b'a'],
                "key longer than 65535 bytes",
            ),
        ];
        for (bytes, reason) in cases {
            assert_eq!(
                Command::decode(&bytes),
                Err(WireError::MalformedCommand(reason)),
                "input {bytes:?}"
            );
        }
    }

    #[test]
    fn constructors_enforce_invariants() {
        assert!(Command::get("").is_err());
        assert!(Command::scan("a", 0).is_err());
        assert!(Key::new(vec![0u8; MAX_KEY_LEN]).is_ok());
        assert!(Key::new(vec![0u8; MAX_KEY_LEN + 1]).is_err());
    }

    #[test]
    fn is_write_matches_mutating_commands() {
        assert!(Command::set("k", "v").unwrap().is_write());
        assert!(Command::del("k").unwrap().is_write());
        assert!(!Command::get("k").unwrap().is_write());
        assert!(!Command::scan("k", 3).unwrap().is_write());
    }

    #[test]
    fn ack_frame_is_five_bytes() {
        assert_eq!(&Frame::ack().encode()[..], &[0, 0, 0, 0, 0x05]);
    }

    #[test]
    fn oversized_frame_rejected_from_header_alone() {
        let mut dec = FrameDecoder::new();
        dec.extend(&[0x01, 0x00, 0x00, 0x01, 0x01]);
        assert_eq!(dec.next_frame(), Err(WireError::FrameTooLarge(0x0100_0001)));

        let mut dec = FrameDecoder::new();
        dec.extend(&[0x01, 0x00, 0x00, 0x00, 0x01]);
        assert_eq!(dec.next_frame(), Ok(None));
    }

    #[test]
    fn unknown_frame_kind_rejected() {
        let mut dec = FrameDecoder::new();
        dec.extend(&[0, 0, 0, 0, 0x06]);
        assert_eq!(dec.next_frame(), Err(WireError::MalformedFrame(0x06)));
    }

    #[test]
    fn two_frames_one_byte_at_a_time() {
        let a = Frame::request(&Command::set("alpha", "1").unwrap());
        let b = Frame::ack();
        let mut stream = a.encode().to_vec();
        stream.extend_from_slice(&b.encode());

        let mut dec = FrameDecoder::new();
        let mut out = Vec::new();
        for byte in stream {
            dec.extend(&[byte]);
            while let Some(f) = dec.next_frame().unwrap() {
                out.push(f);
            }
        }
        assert_eq!(out, vec![a, b]);
        assert_eq!(dec.buffered(), 0);
    }

    #[test]
    fn reply_not_found_must_be_empty() {
        assert_eq!(
            Reply::decode(&[0x01, 0, 0, 0, 1, b'x']),
            Err(WireError::MalformedReply("NotFound with a value"))
        );
        let r = Reply::ok_with("v");
        assert_eq!(Reply::decode(&r.encode()).unwrap(), r);
    }

    #[test]
    fn scan_entries_round_trip() {
        let entries: Vec<(&[u8], &[u8])> = vec![(b"b", b"2"), (b"c", b"")];
        let packed = encode_scan_entries(entries.iter().copied());
        let back = decode_scan_entries(&packed).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(&back[0].0[..], b"b");
        assert_eq!(&back[1].1[..], b"");
        assert!(decode_scan_entries(&packed[..packed.len() - 1]).is_err());
    }

    pub(crate) fn arb_command() -> impl Strategy<Value = Command> {
        let key = proptest::collection::vec(any::<u8>(), 1..48);
        let value = proptest::collection::vec(any::<u8>(), 0..96);
        prop_oneof![
            (key.clone(), value).prop_map(|(k, v)| Command::set(k, v).unwrap()),
            key.clone().prop_map(|k| Command::get(k).unwrap()),
            key.clone().prop_map(|k| Command::del(k).unwrap()),
            (key, 1u32..=u32::MAX).prop_map(|(k, c)| Command::scan(k, c).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn reply_round_trip(status in 0u8..3, value in proptest::collection::vec(any::<u8>(), 0..64)) {
            let reply = match status {
                0 => Reply::ok_with(value),
                1 => Reply::not_found(),
                _ => Reply::error(value),
            };
            prop_assert_eq!(Reply::decode(&reply.encode()).unwrap(), reply);
        }

        #[test]
        fn command_decoder_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            // Either outcome is fine; reaching here means no panic.
            let _ = Command::decode(&bytes);
        }

        #[test]
        fn any_truncation_of_a_valid_command_fails(cmd in arb_command(), cut in 0usize..200) {
            let bytes = cmd.encode();
            let cut = cut % bytes.len();
            prop_assert!(Command::decode(&bytes[..cut]).is_err());
        }
    }
}
