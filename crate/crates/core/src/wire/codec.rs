use nalgebra::Vector3;

use super::{crc24q, WireError, FRAME_OVERHEAD, MAX_PAYLOAD, PREAMBLE};
use crate::constellation::{ConstellationId, SatKey};
use crate::observation::{EpochObservations, Fixed32, Observation};

/// 0.1 mm per unit.
pub const RANGE_UNITS_PER_M: i64 = 10_000;
/// 0.1 milli-cycle per unit.
pub const PHASE_UNITS_PER_CYCLE: i64 = 10_000;
/// 0.25 dB-Hz per unit.
pub const CN0_UNITS_PER_DBHZ: f64 = 4.0;

const STATION_INFO_BODY: usize = 2 + 3 * 8 + 1;
const EPOCH_HEADER_BODY: usize = 2 + 4 + 1;
const SAT_RECORD_LEN: usize = 20;
/// Records that fit one observation frame.
pub const MAX_SAT_RECORDS: usize = (MAX_PAYLOAD - 1 - EPOCH_HEADER_BODY) / SAT_RECORD_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    StationInfo = 1,
    ObservationEpoch = 2,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(MsgType::StationInfo),
            2 => Some(MsgType::ObservationEpoch),
            _ => None,
        }
    }
}

/// A typed frame. On the wire the type is the first payload byte, followed
/// by `body`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectionFrame {
    pub msg_type: MsgType,
    pub body: Vec<u8>,
}

impl CorrectionFrame {
    pub fn payload_len(&self) -> usize {
        1 + self.body.len()
    }
}

/// Wraps a raw payload: preamble, length, payload, CRC.
pub fn encode_payload(payload: &[u8]) -> Result<Vec<u8>, WireError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(WireError::PayloadTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(payload.len() + FRAME_OVERHEAD);
    out.push(PREAMBLE);
    out.push(((payload.len() >> 8) & 0x03) as u8);
    out.push((payload.len() & 0xFF) as u8);
    out.extend_from_slice(payload);
    let crc = crc24q(&out);
    out.extend_from_slice(&crc.to_be_bytes()[1..]);
    Ok(out)
}

pub fn encode_frame(frame: &CorrectionFrame) -> Result<Vec<u8>, WireError> {
    let mut payload = Vec::with_capacity(frame.payload_len());
    payload.push(frame.msg_type as u8);
    payload.extend_from_slice(&frame.body);
    encode_payload(&payload)
}

/// Why `decode_frame` produced no frame. `consumed` bytes may be discarded
/// before retrying.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeError {
    NeedMoreData { consumed: usize },
    CrcMismatch { expected: u32, actual: u32, consumed: usize },
    UnknownMsgType { msg_type: Option<u8>, consumed: usize },
}

impl DecodeError {
    pub fn consumed(&self) -> usize {
        match *self {
            DecodeError::NeedMoreData { consumed }
            | DecodeError::CrcMismatch { consumed, .. }
            | DecodeError::UnknownMsgType { consumed, .. } => consumed,
        }
    }
}

impl From<DecodeError> for WireError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::NeedMoreData { .. } => WireError::NeedMoreData,
            DecodeError::CrcMismatch { expected, actual, .. } => WireError::CrcMismatch { expected, actual },
            DecodeError::UnknownMsgType { msg_type, .. } => WireError::UnknownMsgType(msg_type.unwrap_or(0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub frame: CorrectionFrame,
    /// Bytes from the start of the input up to the end of the frame.
    pub consumed: usize,
}

/// Finds and validates the first frame in `bytes`. Leading bytes before a
/// preamble are skipped; after a CRC failure the scan resumes one byte past
/// the rejected preamble.
pub fn decode_frame(bytes: &[u8]) -> Result<Decoded, DecodeError> {
    // A preamble followed by non-zero reserved bits cannot open a frame.
    let candidate = |i: usize| bytes[i] == PREAMBLE && bytes.get(i + 1).is_none_or(|b| b & 0xFC == 0);
    let Some(start) = (0..bytes.len()).find(|&i| candidate(i)) else {
        return Err(DecodeError::NeedMoreData { consumed: bytes.len() });
    };
    let rest = &bytes[start..];
    if rest.len() < 3 {
        return Err(DecodeError::NeedMoreData { consumed: start });
    }
    let len = (((rest[1] & 0x03) as usize) << 8) | rest[2] as usize;
    let total = len + FRAME_OVERHEAD;
    if rest.len() < total {
        return Err(DecodeError::NeedMoreData { consumed: start });
    }
    let expected = crc24q(&rest[..3 + len]);
    let actual = u32::from_be_bytes([0, rest[3 + len], rest[4 + len], rest[5 + len]]);
    if expected != actual {
        return Err(DecodeError::CrcMismatch { expected, actual, consumed: start + 1 });
    }
    let payload = &rest[3..3 + len];
    let consumed = start + total;
    let Some(&type_byte) = payload.first() else {
        return Err(DecodeError::UnknownMsgType { msg_type: None, consumed });
    };
    match MsgType::from_u8(type_byte) {
        Some(msg_type) => Ok(Decoded {
            frame: CorrectionFrame { msg_type, body: payload[1..].to_vec() },
            consumed,
        }),
        None => Err(DecodeError::UnknownMsgType { msg_type: Some(type_byte), consumed }),
    }
}

/// Incremental decoder over an unreliable byte stream.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    pub crc_errors: u64,
    pub unknown_frames: u64,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn next_frame(&mut self) -> Option<CorrectionFrame> {
        loop {
            match decode_frame(&self.buf) {
                Ok(d) => {
                    self.buf.drain(..d.consumed);
                    return Some(d.frame);
                }
                Err(e) => {
                    self.buf.drain(..e.consumed());
                    match e {
                        DecodeError::NeedMoreData { .. } => return None,
                        DecodeError::CrcMismatch { .. } => self.crc_errors += 1,
                        DecodeError::UnknownMsgType { .. } => self.unknown_frames += 1,
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StationInfo {
    pub station_id: u16,
    /// 0.1 mm units
    pub ecef_x: i64,
    pub ecef_y: i64,
    pub ecef_z: i64,
    pub healthy: bool,
}

impl StationInfo {
    pub fn from_ecef(station_id: u16, pos: &Vector3<f64>, healthy: bool) -> Self {
        let q = |v: f64| (v * RANGE_UNITS_PER_M as f64).round() as i64;
        StationInfo { station_id, ecef_x: q(pos.x), ecef_y: q(pos.y), ecef_z: q(pos.z), healthy }
    }

    pub fn ecef(&self) -> Vector3<f64> {
        let m = |v: i64| v as f64 / RANGE_UNITS_PER_M as f64;
        Vector3::new(m(self.ecef_x), m(self.ecef_y), m(self.ecef_z))
    }

    fn encode_body(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(STATION_INFO_BODY);
        b.extend_from_slice(&self.station_id.to_be_bytes());
        b.extend_from_slice(&self.ecef_x.to_be_bytes());
        b.extend_from_slice(&self.ecef_y.to_be_bytes());
        b.extend_from_slice(&self.ecef_z.to_be_bytes());
        b.push(if self.healthy { 0x80 } else { 0x00 });
        b
    }

    fn decode_body(b: &[u8]) -> Result<Self, WireError> {
        if b.len() != STATION_INFO_BODY {
            return Err(WireError::MalformedPayload("station info"));
        }
        let i64_at = |o: usize| i64::from_be_bytes(b[o..o + 8].try_into().expect("8 bytes"));
        Ok(StationInfo {
            station_id: u16::from_be_bytes([b[0], b[1]]),
            ecef_x: i64_at(2),
            ecef_y: i64_at(10),
            ecef_z: i64_at(18),
            healthy: b[26] & 0x80 != 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SatRecord {
    /// 4-bit constellation code
    pub constellation_id: u8,
    pub sat_id: u8,
    /// 0.1 mm units
    pub pseudorange: i64,
    /// 0.1 milli-cycle units
    pub carrier_phase: i64,
    /// 0.25 dB-Hz units
    pub cn0: u8,
    pub lock: bool,
    /// 7-bit wrapping counter
    pub loss_count: u8,
}

impl SatRecord {
    pub fn from_observation(o: &Observation) -> Self {
        SatRecord {
            constellation_id: o.key.constellation.code(),
            sat_id: o.key.sat_id,
            pseudorange: o.pseudorange.to_units(RANGE_UNITS_PER_M),
            carrier_phase: o.carrier_phase.to_units(PHASE_UNITS_PER_CYCLE),
            cn0: (o.cn0 * CN0_UNITS_PER_DBHZ).round().clamp(0.0, 255.0) as u8,
            lock: o.lock,
            loss_count: (o.loss_of_lock_count % 128) as u8,
        }
    }

    pub fn key(&self) -> Option<SatKey> {
        ConstellationId::from_code(self.constellation_id).map(|c| SatKey::new(c, self.sat_id))
    }

    pub fn to_observation(&self) -> Option<Observation> {
        Some(Observation {
            key: self.key()?,
            pseudorange: Fixed32::from_ratio(self.pseudorange, RANGE_UNITS_PER_M),
            carrier_phase: Fixed32::from_ratio(self.carrier_phase, PHASE_UNITS_PER_CYCLE),
            cn0: self.cn0 as f64 / CN0_UNITS_PER_DBHZ,
            lock: self.lock,
            loss_of_lock_count: self.loss_count as u32,
        })
    }

    fn sort_key(&self) -> (u8, u8) {
        (self.constellation_id, self.sat_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationEpochMsg {
    pub week: u16,
    pub tow_ms: u32,
    /// Sorted ascending by (constellation, sat id).
    pub records: Vec<SatRecord>,
}

impl ObservationEpochMsg {
    /// Builds the message from the locked observations of `epoch`.
    pub fn from_epoch(week: u16, tow_ms: u32, epoch: &EpochObservations) -> Self {
        let mut records: Vec<SatRecord> = epoch.locked_obs().map(SatRecord::from_observation).collect();
        records.sort_by_key(|r| r.sort_key());
        records.truncate(MAX_SAT_RECORDS);
        ObservationEpochMsg { week, tow_ms, records }
    }

    pub fn to_epoch(&self, t: f64, receiver_id: u16) -> EpochObservations {
        let mut obs: Vec<Observation> = self.records.iter().filter_map(|r| r.to_observation()).collect();
        obs.sort_by_key(|o| o.key);
        obs.dedup_by_key(|o| o.key);
        EpochObservations { t, receiver_id, obs, rx_clock_bias: f64::NAN }
    }

    fn encode_body(&self) -> Vec<u8> {
        let mut b = Vec::with_capacity(EPOCH_HEADER_BODY + SAT_RECORD_LEN * self.records.len());
        b.extend_from_slice(&self.week.to_be_bytes());
        b.extend_from_slice(&self.tow_ms.to_be_bytes());
        b.push(self.records.len() as u8);
        for r in &self.records {
            b.push((r.constellation_id & 0x0F) << 4);
            b.push(r.sat_id);
            b.extend_from_slice(&r.pseudorange.to_be_bytes());
            b.extend_from_slice(&r.carrier_phase.to_be_bytes());
            b.push(r.cn0);
            b.push(((r.lock as u8) << 7) | (r.loss_count & 0x7F));
        }
        b
    }

    fn decode_body(b: &[u8]) -> Result<Self, WireError> {
        if b.len() < EPOCH_HEADER_BODY {
            return Err(WireError::MalformedPayload("observation epoch"));
        }
        let n = b[6] as usize;
        if b.len() != EPOCH_HEADER_BODY + n * SAT_RECORD_LEN {
            return Err(WireError::MalformedPayload("observation epoch"));
        }
        let records = b[EPOCH_HEADER_BODY..]
            .chunks_exact(SAT_RECORD_LEN)
            .map(|r| SatRecord {
                constellation_id: r[0] >> 4,
                sat_id: r[1],
                pseudorange: i64::from_be_bytes(r[2..10].try_into().expect("8 bytes")),
                carrier_phase: i64::from_be_bytes(r[10..18].try_into().expect("8 bytes")),
                cn0: r[18],
                lock: r[19] & 0x80 != 0,
                loss_count: r[19] & 0x7F,
            })
            .collect();
        Ok(ObservationEpochMsg {
            week: u16::from_be_bytes([b[0], b[1]]),
            tow_ms: u32::from_be_bytes([b[2], b[3], b[4], b[5]]),
            records,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    StationInfo(StationInfo),
    ObservationEpoch(ObservationEpochMsg),
}

impl Message {
    pub fn to_frame(&self) -> CorrectionFrame {
        match self {
            Message::StationInfo(m) => CorrectionFrame { msg_type: MsgType::StationInfo, body: m.encode_body() },
            Message::ObservationEpoch(m) => {
                CorrectionFrame { msg_type: MsgType::ObservationEpoch, body: m.encode_body() }
            }
        }
    }

    pub fn from_frame(frame: &CorrectionFrame) -> Result<Self, WireError> {
        match frame.msg_type {
            MsgType::StationInfo => StationInfo::decode_body(&frame.body).map(Message::StationInfo),
            MsgType::ObservationEpoch => ObservationEpochMsg::decode_body(&frame.body).map(Message::ObservationEpoch),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        encode_frame(&self.to_frame())
    }
}
