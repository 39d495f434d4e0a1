//! Sensor emulation: one packet per beat carrying the latest intervals,
//! sent over a length-prefixed byte stream.
//!
//! Each frame is preceded by one length byte; a zero length ends the
//! stream.

use std::io::{ErrorKind, Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{encode_packet, SensorId, SensorPacket, StreamError, MAX_FRAME_LEN, MAX_INTERVALS};

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayOptions {
    /// Packets per second relative to one per second; infinite disables
    /// sleeping.
    pub speed: f64,
    /// Probability that a packet starts a drop.
    pub drop: f64,
    /// Consecutive packets lost per drop.
    pub drop_burst: usize,
    pub seed: u64,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self {
            speed: f64::INFINITY,
            drop: 0.0,
            drop_burst: 1,
            seed: 0,
        }
    }
}

impl ReplayOptions {
    pub fn validate(&self) -> Result<(), StreamError> {
        if !(self.speed > 0.0) {
            return Err(StreamError::Config(format!("speed {} must be positive", self.speed)));
        }
        if !(0.0..1.0).contains(&self.drop) {
            return Err(StreamError::Config(format!("drop probability {} outside [0, 1)", self.drop)));
        }
        if self.drop_burst == 0 {
            return Err(StreamError::Config("drop burst must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ReplayStats {
    pub packets: usize,
    pub sent: usize,
    pub dropped: usize,
}

/// Converts intervals to wire values; they must be whole milliseconds that
/// fit in 16 bits.
pub fn rr_to_wire(rr: &[f64]) -> Result<Vec<u16>, StreamError> {
    rr.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v.fract() == 0.0 && v >= 1.0 && v <= f64::from(u16::MAX) {
                Ok(v as u16)
            } else {
                Err(StreamError::Config(format!("interval {i} = {v} ms is not a whole 16-bit millisecond value")))
            }
        })
        .collect()
}

/// Packet `i` carries intervals `i-14 ..= i` and ends at their cumulative
/// time.
pub fn sensor_packets(sensor: SensorId, rr: &[u16]) -> Result<Vec<SensorPacket>, StreamError> {
    let mut end = 0u32;
    rr.iter()
        .enumerate()
        .map(|(i, &v)| {
            end = end
                .checked_add(u32::from(v))
                .ok_or_else(|| StreamError::Config("record longer than the 32-bit time offset".into()))?;
            Ok(SensorPacket {
                sensor,
                seq: i as u16,
                time_offset_ms: end,
                rr: rr[(i + 1).saturating_sub(MAX_INTERVALS)..=i].to_vec(),
            })
        })
        .collect()
}

/// Which of `n` packets are lost. The last packet is always delivered.
pub fn drop_mask(n: usize, opts: &ReplayOptions) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut mask = vec![false; n];
    let mut i = 0;
    while i + 1 < n {
        if opts.drop > 0.0 && rng.gen_bool(opts.drop) {
            let end = (i + opts.drop_burst).min(n - 1);
            mask[i..end].iter_mut().for_each(|m| *m = true);
            i = end;
        } else {
            i += 1;
        }
    }
    mask
}

pub fn write_frame(mut w: impl Write, frame: &[u8]) -> std::io::Result<()> {
    assert!(!frame.is_empty() && frame.len() <= MAX_FRAME_LEN);
    w.write_all(&[frame.len() as u8])?;
    w.write_all(frame)
}

pub fn write_end(mut w: impl Write) -> std::io::Result<()> {
    w.write_all(&[0])?;
    w.flush()
}

/// Next frame, or `None` at the end marker. End of input anywhere else is
/// an [`StreamError::Disconnected`].
pub fn read_frame(mut r: impl Read) -> Result<Option<Vec<u8>>, StreamError> {
    let mut len = [0u8; 1];
    read_exact(&mut r, &mut len)?;
    if len[0] == 0 {
        return Ok(None);
    }
    let mut frame = vec![0u8; len[0] as usize];
    read_exact(&mut r, &mut frame)?;
    Ok(Some(frame))
}

fn read_exact(mut r: impl Read, buf: &mut [u8]) -> Result<(), StreamError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof | ErrorKind::ConnectionReset | ErrorKind::ConnectionAborted => StreamError::Disconnected,
        _ => StreamError::Io(e),
    })
}

/// Writes the packet stream of `rr` to `w`, then the end marker.
pub fn replay_to(mut w: impl Write, sensor: SensorId, rr: &[u16], opts: &ReplayOptions) -> Result<ReplayStats, StreamError> {
    opts.validate()?;
    if rr.is_empty() {
        return Err(StreamError::Config("cannot replay an empty record".into()));
    }
    let packets = sensor_packets(sensor, rr)?;
    let mask = drop_mask(packets.len(), opts);
    let pause = opts.speed.is_finite().then(|| Duration::from_secs_f64(1.0 / opts.speed));
    let mut stats = ReplayStats {
        packets: packets.len(),
        ..ReplayStats::default()
    };
    for (p, dropped) in packets.iter().zip(mask) {
        if dropped {
            stats.dropped += 1;
        } else {
            write_frame(&mut w, &encode_packet(p)?)?;
            stats.sent += 1;
        }
        if let Some(pause) = pause {
            w.flush()?;
            std::thread::sleep(pause);
        }
    }
    write_end(&mut w)?;
    Ok(stats)
}

/// Connects to a listener and replays `rr` over TCP.
pub fn replay_sensor(
    addr: impl ToSocketAddrs,
    sensor: SensorId,
    rr: &[u16],
    opts: &ReplayOptions,
) -> Result<ReplayStats, StreamError> {
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let stats = replay_to(std::io::BufWriter::new(&stream), sensor, rr, opts)?;
    stream.shutdown(std::net::Shutdown::Write)?;
    Ok(stats)
}
