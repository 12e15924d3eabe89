//! Correction stream codec and transport.
//!
//! Frames follow RTCM3 conventions: preamble `0xD3`, six reserved zero bits,
//! a 10-bit payload length, the payload and a CRC-24Q over everything before
//! it. All multi-byte integers are big-endian. The first payload byte is the
//! message type.

mod codec;
mod ntrip;

pub use codec::*;
pub use ntrip::*;

/// Preamble byte opening every frame.
pub const PREAMBLE: u8 = 0xD3;
/// Largest payload expressible in the 10-bit length field.
pub const MAX_PAYLOAD: usize = 1023;
/// Preamble + length + CRC.
pub const FRAME_OVERHEAD: usize = 6;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("payload of {0} bytes exceeds the 1023-byte frame limit")]
    PayloadTooLarge(usize),
    #[error("need more data")]
    NeedMoreData,
    #[error("crc mismatch (expected {expected:06x}, got {actual:06x})")]
    CrcMismatch { expected: u32, actual: u32 },
    #[error("unknown message type {0}")]
    UnknownMsgType(u8),
    #[error("malformed {0} payload")]
    MalformedPayload(&'static str),
    #[error("cannot bind caster: {0}")]
    BindFailure(std::io::Error),
    #[error("cannot connect to caster: {0}")]
    ConnectFailure(std::io::Error),
    #[error("caster rejected the credentials")]
    AuthRejected,
    #[error("mountpoint not served; caster returned its sourcetable")]
    MountNotFound(String),
    #[error("unexpected caster response: {0}")]
    BadResponse(String),
    #[error("stream closed by peer")]
    StreamClosed,
    #[error("client disconnected: {0}")]
    ClientDisconnect(std::io::Error),
    #[error("transport i/o: {0}")]
    Io(#[from] std::io::Error),
}

const CRC24Q_POLY: u32 = 0x0186_4CFB;

const fn crc24q_table() -> [u32; 256] {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = (i as u32) << 16;
        let mut bit = 0;
        while bit < 8 {
            crc <<= 1;
            if crc & 0x0100_0000 != 0 {
                crc ^= CRC24Q_POLY;
            }
            bit += 1;
        }
        table[i] = crc & 0x00FF_FFFF;
        i += 1;
    }
    table
}

static CRC24Q_TABLE: [u32; 256] = crc24q_table();

/// CRC-24Q (polynomial 0x1864CFB, zero initial value, no reflection).
pub fn crc24q(data: &[u8]) -> u32 {
    data.iter().fold(0u32, |crc, &b| {
        ((crc << 8) & 0x00FF_FFFF) ^ CRC24Q_TABLE[(((crc >> 16) as u8) ^ b) as usize]
    })
}
