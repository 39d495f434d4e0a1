//! Sensor packet codec.
//!
//! ```text
//! offset  size  field
//! 0       2     magic "CS"
//! 2       8     sensor id, ASCII, right-padded with spaces
//! 10      2     sequence number, big-endian, wrapping
//! 12      4     time offset in ms, big-endian
//! 16      1     interval count n, 1..=15
//! 17      2n    RR intervals in ms, big-endian
//! 17+2n   1     XOR of all preceding bytes
//! ```

use std::fmt;

use thiserror::Error;

pub const MAGIC: [u8; 2] = *b"CS";
pub const SENSOR_ID_LEN: usize = 8;
pub const MAX_INTERVALS: usize = 15;
const HEADER_LEN: usize = 17;
/// Length of a frame carrying the maximum number of intervals.
pub const MAX_FRAME_LEN: usize = frame_len(MAX_INTERVALS);

pub const fn frame_len(count: usize) -> usize {
    HEADER_LEN + 2 * count + 1
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PacketError {
    #[error("short read: need {needed} bytes, got {got}")]
    ShortRead { needed: usize, got: usize },
    #[error("not a packet")]
    NotAPacket,
    #[error("corrupt: checksum {found:#04x}, expected {expected:#04x}")]
    Checksum { expected: u8, found: u8 },
    #[error("corrupt: {0}")]
    Corrupt(String),
    #[error("interval count {0} outside 1..=15")]
    Count(usize),
    #[error("invalid sensor id {0:?}")]
    SensorId(String),
}

/// Printable ASCII token of 1 to 8 characters without spaces.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SensorId([u8; SENSOR_ID_LEN]);

impl SensorId {
    pub fn new(id: &str) -> Result<Self, PacketError> {
        let ok = !id.is_empty() && id.len() <= SENSOR_ID_LEN && id.bytes().all(|b| b.is_ascii_graphic());
        if !ok {
            return Err(PacketError::SensorId(id.to_owned()));
        }
        let mut raw = [b' '; SENSOR_ID_LEN];
        raw[..id.len()].copy_from_slice(id.as_bytes());
        Ok(Self(raw))
    }

    fn from_wire(raw: [u8; SENSOR_ID_LEN]) -> Result<Self, PacketError> {
        let id = std::str::from_utf8(&raw).map_err(|_| PacketError::SensorId(String::from_utf8_lossy(&raw).into()))?;
        Self::new(id.trim_end_matches(' '))
    }

    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.0).expect("ascii").trim_end_matches(' ')
    }

    pub fn as_bytes(&self) -> &[u8; SENSOR_ID_LEN] {
        &self.0
    }
}

impl fmt::Debug for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SensorId({:?})", self.as_str())
    }
}

impl fmt::Display for SensorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensorPacket {
    pub sensor: SensorId,
    pub seq: u16,
    /// Milliseconds from the start of the record to the end of the newest
    /// interval in `rr`.
    pub time_offset_ms: u32,
    /// Most recent intervals, oldest first.
    pub rr: Vec<u16>,
}

fn checksum(bytes: &[u8]) -> u8 {
    bytes.iter().fold(0, |acc, b| acc ^ b)
}

pub fn encode_packet(p: &SensorPacket) -> Result<Vec<u8>, PacketError> {
    let n = p.rr.len();
    if !(1..=MAX_INTERVALS).contains(&n) {
        return Err(PacketError::Count(n));
    }
    let mut out = Vec::with_capacity(frame_len(n));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(p.sensor.as_bytes());
    out.extend_from_slice(&p.seq.to_be_bytes());
    out.extend_from_slice(&p.time_offset_ms.to_be_bytes());
    out.push(n as u8);
    for rr in &p.rr {
        out.extend_from_slice(&rr.to_be_bytes());
    }
    out.push(checksum(&out));
    Ok(out)
}

/// Validates magic, length and checksum before reading any field.
pub fn decode_packet(bytes: &[u8]) -> Result<SensorPacket, PacketError> {
    if bytes.len() < MAGIC.len() {
        return Err(PacketError::ShortRead {
            needed: frame_len(1),
            got: bytes.len(),
        });
    }
    if bytes[..2] != MAGIC {
        return Err(PacketError::NotAPacket);
    }
    if bytes.len() < HEADER_LEN {
        return Err(PacketError::ShortRead {
            needed: frame_len(1),
            got: bytes.len(),
        });
    }
    let needed = frame_len(bytes[16] as usize);
    if bytes.len() < needed {
        return Err(PacketError::ShortRead {
            needed,
            got: bytes.len(),
        });
    }
    if bytes.len() > needed {
        return Err(PacketError::Corrupt(format!(
            "{} trailing bytes after a {needed}-byte frame",
            bytes.len() - needed
        )));
    }
    let (body, sum) = bytes.split_at(needed - 1);
    let expected = checksum(body);
    if expected != sum[0] {
        return Err(PacketError::Checksum {
            expected,
            found: sum[0],
        });
    }

    let count = bytes[16] as usize;
    if !(1..=MAX_INTERVALS).contains(&count) {
        return Err(PacketError::Count(count));
    }
    let sensor = SensorId::from_wire(bytes[2..10].try_into().unwrap())?;
    let seq = u16::from_be_bytes([bytes[10], bytes[11]]);
    let time_offset_ms = u32::from_be_bytes(bytes[12..16].try_into().unwrap());
    let rr = bytes[HEADER_LEN..HEADER_LEN + 2 * count]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok(SensorPacket {
        sensor,
        seq,
        time_offset_ms,
        rr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn packet(n: usize) -> SensorPacket {
        SensorPacket {
            sensor: SensorId::new("dev42").unwrap(),
            seq: 0xBEEF,
            time_offset_ms: 123_456,
            rr: (0..n).map(|i| 700 + 13 * i as u16).collect(),
        }
    }

    #[test]
    fn full_window_is_48_bytes() {
        let bytes = encode_packet(&packet(15)).unwrap();
        assert_eq!(bytes.len(), 48);
        assert_eq!(MAX_FRAME_LEN, 48);
        assert_eq!(&bytes[..2], b"CS");
        assert_eq!(&bytes[2..10], b"dev42   ");
        assert_eq!(&bytes[10..12], &[0xBE, 0xEF]);
        assert_eq!(decode_packet(&bytes).unwrap(), packet(15));
    }

    #[test]
    fn count_limits() {
        assert_eq!(encode_packet(&packet(0)), Err(PacketError::Count(0)));
        assert_eq!(encode_packet(&packet(16)), Err(PacketError::Count(16)));
        assert!(encode_packet(&packet(1)).is_ok());
    }

    #[test]
    fn short_and_foreign_input() {
        assert!(matches!(decode_packet(&[]), Err(PacketError::ShortRead { .. })));
        assert!(matches!(decode_packet(b"C"), Err(PacketError::ShortRead { .. })));
        assert_eq!(decode_packet(b"XX and then some more bytes"), Err(PacketError::NotAPacket));
        let bytes = encode_packet(&packet(15)).unwrap();
        assert!(matches!(decode_packet(&bytes[..47]), Err(PacketError::ShortRead { needed: 48, got: 47 })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_packet(&long), Err(PacketError::Corrupt(_))));
    }

    #[test]
    fn every_single_byte_corruption_is_detected() {
        let bytes = encode_packet(&packet(15)).unwrap();
        for i in 0..bytes.len() {
            for flip in [0x01u8, 0x80, 0xFF] {
                let mut bad = bytes.clone();
                bad[i] ^= flip;
                let err = decode_packet(&bad).unwrap_err();
                match i {
                    0 | 1 => assert_eq!(err, PacketError::NotAPacket),
                    16 => assert!(matches!(err, PacketError::ShortRead { .. } | PacketError::Corrupt(_))),
                    _ => assert!(matches!(err, PacketError::Checksum { .. }), "byte {i}: {err}"),
                }
            }
        }
    }

    #[test]
    fn sensor_id_rules() {
        assert!(SensorId::new("").is_err());
        assert!(SensorId::new("a b").is_err());
        assert!(SensorId::new("123456789").is_err());
        assert_eq!(SensorId::new("12345678").unwrap().as_str(), "12345678");
    }
}
