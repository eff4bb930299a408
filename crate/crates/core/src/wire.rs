//! Fixed-width protocol parameters and the five on-air message layouts.
//!
//! Every field is a fixed number of bytes, integers are big-endian and
//! messages are the plain concatenation of their fields. There is no
//! framing: the receiver must already know which kind of message it expects.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WireError {
    #[error("malformed {kind} message: expected {expected} bytes, got {actual}")]
    Length {
        kind: MessageKind,
        expected: usize,
        actual: usize,
    },
    #[error("invalid time window: start {start} must be strictly before end {end}")]
    InvalidWindow { start: u32, end: u32 },
    #[error("access rights use reserved bits: {0:#034x}")]
    ReservedRights(u128),
    #[error("expected {expected} bytes for {what}, got {actual}")]
    FieldLength {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid hex for {what}: {source}")]
    Hex {
        what: &'static str,
        #[source]
        source: hex::FromHexError,
    },
}

/// Seconds since the Unix epoch, truncated to 32 bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Timestamp32(pub u32);

impl Timestamp32 {
    pub const LEN: usize = 4;

    pub fn to_bytes(self) -> [u8; 4] {
        self.0.to_be_bytes()
    }

    pub fn from_bytes(bytes: [u8; 4]) -> Self {
        Self(u32::from_be_bytes(bytes))
    }

    pub fn seconds(self) -> u32 {
        self.0
    }

    pub fn saturating_add(self, secs: u32) -> Self {
        Self(self.0.saturating_add(secs))
    }
}

impl fmt::Display for Timestamp32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for Timestamp32 {
    fn from(secs: u32) -> Self {
        Self(secs)
    }
}

/// Validity window `[start, end]` of a grant, encoded as `start || end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TimeWindow {
    start: Timestamp32,
    end: Timestamp32,
}

impl TimeWindow {
    pub const LEN: usize = 8;

    pub fn new(start: Timestamp32, end: Timestamp32) -> Result<Self, WireError> {
        if start >= end {
            return Err(WireError::InvalidWindow {
                start: start.0,
                end: end.0,
            });
        }
        Ok(Self { start, end })
    }

    pub fn start(&self) -> Timestamp32 {
        self.start
    }

    pub fn end(&self) -> Timestamp32 {
        self.end
    }

    pub fn to_bytes(&self) -> [u8; 8] {
        let mut out = [0u8; 8];
        out[..4].copy_from_slice(&self.start.to_bytes());
        out[4..].copy_from_slice(&self.end.to_bytes());
        out
    }

    pub fn from_bytes(bytes: [u8; 8]) -> Result<Self, WireError> {
        let (start, end) = bytes.split_at(4);
        Self::new(
            Timestamp32::from_bytes(start.try_into().expect("4-byte half")),
            Timestamp32::from_bytes(end.try_into().expect("4-byte half")),
        )
    }
}

/// 128-bit access-rights code. Only the low three bits carry meaning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct AccessRights(u128);

impl AccessRights {
    pub const LEN: usize = 16;
    pub const READ: u128 = 0b100;
    pub const WRITE: u128 = 0b010;
    pub const EXECUTE: u128 = 0b001;
    const DEFINED: u128 = 0b111;

    pub fn new(read: bool, write: bool, execute: bool) -> Self {
        let mut bits = 0;
        if read {
            bits |= Self::READ;
        }
        if write {
            bits |= Self::WRITE;
        }
        if execute {
            bits |= Self::EXECUTE;
        }
        Self(bits)
    }

    pub fn from_bits(bits: u128) -> Result<Self, WireError> {
        if bits & !Self::DEFINED != 0 {
            return Err(WireError::ReservedRights(bits));
        }
        Ok(Self(bits))
    }

    /// Parses either a permission string such as `rw-` / `rwx` / `r`, or a
    /// 32-character hex code.
    pub fn parse(text: &str) -> Result<Self, WireError> {
        if text.len() == 32 {
            let bytes = decode_hex_array::<16>("access rights", text)?;
            return Self::from_bytes(bytes);
        }
        let (mut r, mut w, mut x) = (false, false, false);
        for c in text.chars() {
            match c {
                'r' => r = true,
                'w' => w = true,
                'x' => x = true,
                '-' => {}
                _ => {
                    return Err(WireError::FieldLength {
                        what: "access rights",
                        expected: 32,
                        actual: text.len(),
                    })
                }
            }
        }
        Ok(Self::new(r, w, x))
    }

    pub fn bits(&self) -> u128 {
        self.0
    }

    pub fn can_read(&self) -> bool {
        self.0 & Self::READ != 0
    }

    pub fn can_write(&self) -> bool {
        self.0 & Self::WRITE != 0
    }

    pub fn can_execute(&self) -> bool {
        self.0 & Self::EXECUTE != 0
    }

    pub fn to_bytes(&self) -> [u8; 16] {
        self.0.to_be_bytes()
    }

    pub fn from_bytes(bytes: [u8; 16]) -> Result<Self, WireError> {
        Self::from_bits(u128::from_be_bytes(bytes))
    }
}

impl fmt::Display for AccessRights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{}{}",
            if self.can_read() { 'r' } else { '-' },
            if self.can_write() { 'w' } else { '-' },
            if self.can_execute() { 'x' } else { '-' },
        )
    }
}

pub(crate) fn decode_hex_array<const N: usize>(
    what: &'static str,
    text: &str,
) -> Result<[u8; N], WireError> {
    let bytes = hex::decode(text).map_err(|source| WireError::Hex { what, source })?;
    let actual = bytes.len();
    bytes.try_into().map_err(|_| WireError::FieldLength {
        what,
        expected: N,
        actual,
    })
}

macro_rules! byte_newtype {
    ($(#[$meta:meta])* $name:ident, $len:expr, $what:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash)]
        pub struct $name(pub(crate) [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn from_bytes(bytes: [u8; $len]) -> Self {
                Self(bytes)
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(text: &str) -> Result<Self, WireError> {
                decode_hex_array::<$len>($what, text).map(Self)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!(stringify!($name), "({})"), self.to_hex())
            }
        }
    };
}

byte_newtype!(
    /// Fresh 128-bit challenge drawn by a tag or a UAV.
    Nonce128, 16, "nonce"
);
byte_newtype!(
    /// A tag's secret identifier. It is also the tag's MAC key and never goes on air.
    TagId, 16, "tag id"
);
byte_newtype!(
    /// Per-grant pseudonym of a tag.
    TempId, 16, "temporary id"
);
byte_newtype!(
    /// Per-grant key shared by a tag and the UAV holding the grant.
    TagKey, 20, "tag key"
);
byte_newtype!(MacTag, 20, "mac");
byte_newtype!(SessionKey, 20, "session key");

/// Discriminates the five messages; the medium carries it out of band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageKind {
    AuthA,
    AuthB,
    AuthC,
    SearchA,
    SearchB,
}

impl MessageKind {
    pub const ALL: [MessageKind; 5] = [
        MessageKind::AuthA,
        MessageKind::AuthB,
        MessageKind::AuthC,
        MessageKind::SearchA,
        MessageKind::SearchB,
    ];

    pub fn encoded_len(self) -> usize {
        match self {
            MessageKind::AuthA => TimeWindow::LEN + AccessRights::LEN + Nonce128::LEN,
            MessageKind::AuthB => MacTag::LEN + Nonce128::LEN,
            MessageKind::AuthC => MacTag::LEN + Timestamp32::LEN,
            MessageKind::SearchA => {
                TimeWindow::LEN + AccessRights::LEN + MacTag::LEN + Timestamp32::LEN
            }
            MessageKind::SearchB => MacTag::LEN + Nonce128::LEN,
        }
    }

    pub fn encoded_bits(self) -> usize {
        self.encoded_len() * 8
    }

    /// Short direction label used in transcripts.
    pub fn label(self) -> &'static str {
        match self {
            MessageKind::AuthA => "A",
            MessageKind::AuthB => "B",
            MessageKind::AuthC => "C",
            MessageKind::SearchA => "SA",
            MessageKind::SearchB => "SB",
        }
    }
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Broadcast that opens a mass-authentication round.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthA {
    pub window: TimeWindow,
    pub rights: AccessRights,
    pub uav_nonce: Nonce128,
}

/// A tag's challenge response to [`AuthA`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthB {
    pub tag_mac: MacTag,
    pub tag_nonce: Nonce128,
}

/// The UAV's proof of key possession, carrying the new timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuthC {
    pub uav_mac: MacTag,
    pub timestamp: Timestamp32,
}

/// Targeted query: only the tag whose key reproduces `query_mac` answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchA {
    pub window: TimeWindow,
    pub rights: AccessRights,
    pub query_mac: MacTag,
    pub timestamp: Timestamp32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchB {
    pub tag_mac: MacTag,
    pub tag_nonce: Nonce128,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolMessage {
    AuthA(AuthA),
    AuthB(AuthB),
    AuthC(AuthC),
    SearchA(SearchA),
    SearchB(SearchB),
}

impl ProtocolMessage {
    pub fn kind(&self) -> MessageKind {
        match self {
            ProtocolMessage::AuthA(_) => MessageKind::AuthA,
            ProtocolMessage::AuthB(_) => MessageKind::AuthB,
            ProtocolMessage::AuthC(_) => MessageKind::AuthC,
            ProtocolMessage::SearchA(_) => MessageKind::SearchA,
            ProtocolMessage::SearchB(_) => MessageKind::SearchB,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.kind().encoded_len());
        match self {
            ProtocolMessage::AuthA(m) => {
                out.extend_from_slice(&m.window.to_bytes());
                out.extend_from_slice(&m.rights.to_bytes());
                out.extend_from_slice(&m.uav_nonce.0);
            }
            ProtocolMessage::AuthB(m) => {
                out.extend_from_slice(&m.tag_mac.0);
                out.extend_from_slice(&m.tag_nonce.0);
            }
            ProtocolMessage::AuthC(m) => {
                out.extend_from_slice(&m.uav_mac.0);
                out.extend_from_slice(&m.timestamp.to_bytes());
            }
            ProtocolMessage::SearchA(m) => {
                out.extend_from_slice(&m.window.to_bytes());
                out.extend_from_slice(&m.rights.to_bytes());
                out.extend_from_slice(&m.query_mac.0);
                out.extend_from_slice(&m.timestamp.to_bytes());
            }
            ProtocolMessage::SearchB(m) => {
                out.extend_from_slice(&m.tag_mac.0);
                out.extend_from_slice(&m.tag_nonce.0);
            }
        }
        debug_assert_eq!(out.len(), self.kind().encoded_len());
        out
    }

    pub fn decode(bytes: &[u8], kind: MessageKind) -> Result<Self, WireError> {
        if bytes.len() != kind.encoded_len() {
            return Err(WireError::Length {
                kind,
                expected: kind.encoded_len(),
                actual: bytes.len(),
            });
        }
        let mut r = Reader(bytes);
        let msg = match kind {
            MessageKind::AuthA => ProtocolMessage::AuthA(AuthA {
                window: TimeWindow::from_bytes(r.take())?,
                rights: AccessRights::from_bytes(r.take())?,
                uav_nonce: Nonce128(r.take()),
            }),
            MessageKind::AuthB => ProtocolMessage::AuthB(AuthB {
                tag_mac: MacTag(r.take()),
                tag_nonce: Nonce128(r.take()),
            }),
            MessageKind::AuthC => ProtocolMessage::AuthC(AuthC {
                uav_mac: MacTag(r.take()),
                timestamp: Timestamp32::from_bytes(r.take()),
            }),
            MessageKind::SearchA => ProtocolMessage::SearchA(SearchA {
                window: TimeWindow::from_bytes(r.take())?,
                rights: AccessRights::from_bytes(r.take())?,
                query_mac: MacTag(r.take()),
                timestamp: Timestamp32::from_bytes(r.take()),
            }),
            MessageKind::SearchB => ProtocolMessage::SearchB(SearchB {
                tag_mac: MacTag(r.take()),
                tag_nonce: Nonce128(r.take()),
            }),
        };
        Ok(msg)
    }
}

macro_rules! message_from {
    ($($variant:ident),*) => {$(
        impl From<$variant> for ProtocolMessage {
            fn from(m: $variant) -> Self {
                ProtocolMessage::$variant(m)
            }
        }
    )*};
}

message_from!(AuthA, AuthB, AuthC, SearchA, SearchB);

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        head.try_into().expect("length checked before field reads")
    }
}
