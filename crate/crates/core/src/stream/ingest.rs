//! Reassembly of the RR sequence from overlapping packet windows.
//!
//! Every interval in a packet has a reconstructable end time: the newest
//! one ends at the packet's time offset and each earlier one ends where its
//! successor starts. Intervals ending after the assembled sequence are new.
//! A window that starts after the assembled sequence ends means intervals
//! were lost; the whole window is appended after a discontinuity marker.

use super::{SensorId, SensorPacket, StreamError};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StreamState {
    sensor: Option<SensorId>,
    rr: Vec<u16>,
    /// End time of every assembled interval (ms since record start).
    ends: Vec<u64>,
    /// Assembled indices at which a new contiguous piece starts.
    discontinuities: Vec<usize>,
    last_seq: Option<u16>,
}

/// Result of one [`StreamState::ingest`] call.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Ingested {
    /// Newly appended intervals in ms.
    pub appended: Vec<u16>,
    /// True when `appended` starts a new piece after lost intervals.
    pub discontinuity: bool,
}

impl StreamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sensor(&self) -> Option<SensorId> {
        self.sensor
    }

    /// Assembled intervals, append-only.
    pub fn rr(&self) -> &[u16] {
        &self.rr
    }

    pub fn end_times(&self) -> &[u64] {
        &self.ends
    }

    pub fn len(&self) -> usize {
        self.rr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rr.is_empty()
    }

    pub fn discontinuities(&self) -> &[usize] {
        &self.discontinuities
    }

    pub fn last_seq(&self) -> Option<u16> {
        self.last_seq
    }

    pub fn ingest(&mut self, p: &SensorPacket) -> Result<Ingested, StreamError> {
        match self.sensor {
            Some(id) if id != p.sensor => {
                return Err(StreamError::SensorMismatch {
                    expected: id.to_string(),
                    found: p.sensor.to_string(),
                })
            }
            None => self.sensor = Some(p.sensor),
            _ => {}
        }
        if p.rr.is_empty() || p.rr.len() > super::MAX_INTERVALS {
            return Err(StreamError::Packet(super::PacketError::Count(p.rr.len())));
        }

        let mut ends = vec![0u64; p.rr.len()];
        let mut t = u64::from(p.time_offset_ms);
        for (i, &rr) in p.rr.iter().enumerate().rev() {
            ends[i] = t;
            t = t.checked_sub(u64::from(rr)).ok_or_else(|| {
                StreamError::Misaligned(format!("packet {} starts before the record start", p.seq))
            })?;
        }
        let window_start = t;
        self.last_seq = Some(p.seq);

        let Some(&assembled_end) = self.ends.last() else {
            self.append(&p.rr, &ends);
            return Ok(Ingested {
                appended: p.rr.clone(),
                discontinuity: false,
            });
        };

        if window_start > assembled_end {
            self.discontinuities.push(self.rr.len());
            self.append(&p.rr, &ends);
            return Ok(Ingested {
                appended: p.rr.clone(),
                discontinuity: true,
            });
        }

        let first_new = ends.partition_point(|&e| e <= assembled_end);
        for i in 0..first_new {
            let Ok(pos) = self.ends.binary_search(&ends[i]) else {
                // Intervals before the assembled start or inside a lost gap
                // cannot be checked; only a partial overlap is an error.
                let next = self.ends.partition_point(|&e| e < ends[i]);
                let next_start = self.ends[next] - u64::from(self.rr[next]);
                if next_start < ends[i] {
                    return Err(StreamError::Misaligned(format!(
                        "packet {}: interval ending at {} ms straddles an assembled beat",
                        p.seq, ends[i]
                    )));
                }
                continue;
            };
            if self.rr[pos] != p.rr[i] {
                return Err(StreamError::Misaligned(format!(
                    "packet {}: interval ending at {} ms is {} ms, assembled {} ms",
                    p.seq, ends[i], p.rr[i], self.rr[pos]
                )));
            }
        }
        if first_new < p.rr.len() && ends[first_new] - u64::from(p.rr[first_new]) != assembled_end {
            return Err(StreamError::Misaligned(format!(
                "packet {}: first new interval does not start at the assembled end {assembled_end} ms",
                p.seq
            )));
        }
        let appended = p.rr[first_new..].to_vec();
        self.append(&appended, &ends[first_new..]);
        Ok(Ingested {
            appended,
            discontinuity: false,
        })
    }

    fn append(&mut self, rr: &[u16], ends: &[u64]) {
        self.rr.extend_from_slice(rr);
        self.ends.extend_from_slice(ends);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pkt(seq: u16, end: u32, rr: &[u16]) -> SensorPacket {
        SensorPacket {
            sensor: SensorId::new("s1").unwrap(),
            seq,
            time_offset_ms: end,
            rr: rr.to_vec(),
        }
    }

    #[test]
    fn first_packet_appends_everything() {
        let mut s = StreamState::new();
        let out = s.ingest(&pkt(0, 2400, &[800, 790, 810])).unwrap();
        assert_eq!(out.appended, vec![800, 790, 810]);
        assert!(!out.discontinuity);
        assert_eq!(s.end_times(), &[800, 1590, 2400]);
    }

    #[test]
    fn sliding_window_appends_only_the_new_beat() {
        let mut s = StreamState::new();
        s.ingest(&pkt(0, 2400, &[800, 790, 810])).unwrap();
        let out = s.ingest(&pkt(1, 3220, &[790, 810, 820])).unwrap();
        assert_eq!(out.appended, vec![820]);
        assert_eq!(s.rr(), &[800, 790, 810, 820]);
    }

    #[test]
    fn repeated_window_appends_nothing() {
        let mut s = StreamState::new();
        s.ingest(&pkt(0, 2400, &[800, 790, 810])).unwrap();
        assert!(s.ingest(&pkt(1, 2400, &[800, 790, 810])).unwrap().appended.is_empty());
        assert_eq!(s.len(), 3);
    }

    #[test]
    fn gap_appends_window_after_marker() {
        let mut s = StreamState::new();
        s.ingest(&pkt(0, 1600, &[800, 800])).unwrap();
        let out = s.ingest(&pkt(9, 5000, &[700, 700])).unwrap();
        assert!(out.discontinuity);
        assert_eq!(out.appended, vec![700, 700]);
        assert_eq!(s.discontinuities(), &[2]);
    }

    #[test]
    fn adjacent_window_without_overlap_is_contiguous() {
        let mut s = StreamState::new();
        s.ingest(&pkt(0, 1600, &[800, 800])).unwrap();
        let out = s.ingest(&pkt(1, 3000, &[700, 700])).unwrap();
        assert!(!out.discontinuity);
        assert!(s.discontinuities().is_empty());
    }

    #[test]
    fn conflicting_overlap_rejected() {
        let mut s = StreamState::new();
        s.ingest(&pkt(0, 2400, &[800, 790, 810])).unwrap();
        assert!(matches!(s.ingest(&pkt(1, 3220, &[790, 811, 819])), Err(StreamError::Misaligned(_))));
    }

    #[test]
    fn sensor_mismatch_rejected() {
        let mut s = StreamState::new();
        s.ingest(&pkt(0, 800, &[800])).unwrap();
        let mut other = pkt(1, 1600, &[800, 800]);
        other.sensor = SensorId::new("s2").unwrap();
        assert!(matches!(s.ingest(&other), Err(StreamError::SensorMismatch { .. })));
        assert_eq!(s.len(), 1);
    }
}
