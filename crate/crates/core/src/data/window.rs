//! Segmentation of records into overlapping windows and the inverse.
//!
//! A record is conceptually extended by replicating its first sample `P`
//! times on the left and its last sample on the right. Segment `j` covers
//! padded positions `j·Ts .. j·Ts + T`, so its central `Ts` targets are
//! original samples `j·Ts .. (j+1)·Ts` and neighbouring segments share
//! `2P` inputs.

use super::{DataError, RhythmRecord};

/// Scale applied after median removal (ms).
pub const NORM_SCALE_MS: f64 = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub record_id: String,
    /// Index of the segment within its record.
    pub index: usize,
    /// Original sample index of `input[0]`; negative inside the left pad.
    /// `target[j]` corresponds to sample `start + P + j`.
    pub start: isize,
    /// Normalized inputs, `T` values.
    pub input: Vec<f64>,
    /// Median removed by normalization (ms).
    pub median: f64,
    /// Labels of the central slice, `Ts` values; 0 past the record end.
    pub target: Vec<u8>,
    /// How many targets map onto real samples.
    pub valid: usize,
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Subtracts the median and divides by [`NORM_SCALE_MS`]. Returns the
/// normalized values and the median needed to invert.
pub fn normalize(rr: &[f64]) -> (Vec<f64>, f64) {
    assert!(!rr.is_empty(), "normalize needs at least one sample");
    let m = median(rr);
    (rr.iter().map(|&v| (v - m) / NORM_SCALE_MS).collect(), m)
}

pub fn denormalize(values: &[f64], median: f64) -> Vec<f64> {
    values.iter().map(|&v| v * NORM_SCALE_MS + median).collect()
}

/// Number of segments needed to cover `len` samples.
pub fn segment_count(len: usize, seg_len: usize, pad: usize) -> usize {
    len.div_ceil(seg_len - 2 * pad)
}

/// Raw (unnormalized) input of segment `index` over `samples`, with
/// boundary replication.
pub fn segment_input(samples: &[f64], index: usize, seg_len: usize, pad: usize) -> Vec<f64> {
    let ts = seg_len - 2 * pad;
    let last = samples.len() as isize - 1;
    let start = (index * ts) as isize - pad as isize;
    (0..seg_len as isize)
        .map(|i| samples[(start + i).clamp(0, last) as usize])
        .collect()
}

fn check_geometry(seg_len: usize, pad: usize) -> Result<(), DataError> {
    if seg_len <= 2 * pad {
        return Err(DataError::Geometry { seg_len, pad });
    }
    Ok(())
}

pub fn window(record: &RhythmRecord, seg_len: usize, pad: usize) -> Result<Vec<Segment>, DataError> {
    check_geometry(seg_len, pad)?;
    if record.is_empty() {
        return Err(DataError::EmptyRecord(record.id.clone()));
    }
    let ts = seg_len - 2 * pad;
    let n = record.len();
    Ok((0..segment_count(n, seg_len, pad))
        .map(|index| {
            let (input, median) = normalize(&segment_input(&record.rr, index, seg_len, pad));
            let first = index * ts;
            let valid = ts.min(n - first);
            let mut target = vec![0u8; ts];
            target[..valid].copy_from_slice(&record.labels[first..first + valid]);
            Segment {
                record_id: record.id.clone(),
                index,
                start: first as isize - pad as isize,
                input,
                median,
                target,
                valid,
            }
        })
        .collect())
}

/// Reassembles per-target values of one record's segments into one value
/// per original sample. `parts` holds `(segment start, Ts values)` in any
/// order.
pub fn stitch<T: Clone>(mut parts: Vec<(isize, Vec<T>)>, pad: usize, len: usize) -> Result<Vec<T>, DataError> {
    parts.sort_by_key(|(start, _)| *start);
    let mut out = Vec::with_capacity(len);
    for (start, values) in parts {
        let first = start + pad as isize;
        if first != out.len() as isize {
            return Err(DataError::MissingSegment { at: out.len() });
        }
        out.extend(values);
    }
    if out.len() < len {
        return Err(DataError::MissingSegment { at: out.len() });
    }
    out.truncate(len);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(n: usize) -> RhythmRecord {
        let rr = (0..n).map(|i| 700.0 + (i % 13) as f64 * 10.0).collect();
        let labels = (0..n).map(|i| u8::from(i % 7 == 3)).collect();
        RhythmRecord::from_intervals("r", rr, labels).unwrap()
    }

    fn labels_back(rec: &RhythmRecord, segs: &[Segment]) -> Vec<u8> {
        stitch(segs.iter().map(|s| (s.start, s.target.clone())).collect(), 4, rec.len()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert!(normalize(&[800.0; 8]).0.iter().all(|&v| v == 0.0));
        let mut seg = vec![800.0; 9];
        seg[4] = 900.0;
        let (out, m) = normalize(&seg);
        assert_eq!(m, 800.0);
        assert_eq!(out[4], 1.0);
        let shifted: Vec<f64> = seg.iter().map(|v| v + 50.0).collect();
        assert_eq!(normalize(&shifted).0, out);
        assert_eq!(denormalize(&out, m), seg);
    }

    #[test]
    fn one_segment_for_24_samples() {
        let rec = record(24);
        let segs = window(&rec, 32, 4).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].valid, 24);
        assert_eq!(segs[0].target, rec.labels);
        assert_eq!(segs[0].start, -4);
    }

    #[test]
    fn two_segments_for_48_samples() {
        let rec = record(48);
        let segs = window(&rec, 32, 4).unwrap();
        assert_eq!(segs.len(), 2);
        assert_eq!(segs[0].target, rec.labels[0..24]);
        assert_eq!(segs[1].target, rec.labels[24..48]);
    }

    #[test]
    fn neighbours_share_two_pad_inputs() {
        let rec = record(100);
        let raw: Vec<Vec<f64>> = (0..3).map(|j| segment_input(&rec.rr, j, 32, 4)).collect();
        for j in 0..2 {
            assert_eq!(raw[j][24..32], raw[j + 1][0..8]);
        }
        assert_eq!(raw[1][0], rec.rr[20]);
    }

    #[test]
    fn boundary_replication() {
        let rec = record(30);
        let first = segment_input(&rec.rr, 0, 32, 4);
        assert!(first[..5].iter().all(|&v| v == rec.rr[0]));
        let last = segment_input(&rec.rr, 1, 32, 4);
        assert!(last[10..].iter().all(|&v| v == rec.rr[29]));
    }

    #[test]
    fn empty_record_and_bad_geometry_rejected() {
        let empty = RhythmRecord {
            id: "e".into(),
            rr: vec![],
            labels: vec![],
            times: vec![],
        };
        assert!(matches!(window(&empty, 32, 4), Err(DataError::EmptyRecord(_))));
        assert!(window(&record(10), 8, 4).is_err());
    }

    #[test]
    fn stitch_is_order_independent() {
        let rec = record(77);
        let mut segs = window(&rec, 32, 4).unwrap();
        segs.reverse();
        segs.swap(0, 2);
        assert_eq!(labels_back(&rec, &segs), rec.labels);
    }

    #[test]
    fn stitch_reports_gap() {
        let rec = record(77);
        let mut segs = window(&rec, 32, 4).unwrap();
        segs.remove(1);
        let parts = segs.iter().map(|s| (s.start, s.target.clone())).collect();
        assert!(matches!(stitch(parts, 4, rec.len()), Err(DataError::MissingSegment { at: 24 })));
    }
}
