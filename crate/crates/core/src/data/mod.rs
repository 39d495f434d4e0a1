//! Rhythmogram records: CSV ingestion, windowing, normalization and a
//! synthetic corpus generator.

mod csv;
mod record;
mod synth;
mod window;

pub use self::csv::{parse_csv, read_csv, write_csv, write_csv_with_predictions, CsvIssue, ParsedCsv, HEADER};
pub use record::{rr_plausible, RhythmRecord, RR_MAX_MS, RR_MIN_MS};
pub use synth::{record_seed, synth_corpus, synth_record, Spike, SynthConfig, SynthRecord};
pub use window::{denormalize, normalize, segment_count, segment_input, stitch, window, Segment, NORM_SCALE_MS};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("record {id}: {reason}")]
    InvalidRecord { id: String, reason: String },
    #[error("record {0} is empty")]
    EmptyRecord(String),
    #[error("segment length {seg_len} must exceed twice the pad {pad}")]
    Geometry { seg_len: usize, pad: usize },
    #[error("missing segment covering sample {at}")]
    MissingSegment { at: usize },
    #[error("synthetic config: {0}")]
    Synth(String),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CorpusStats {
    pub records: usize,
    pub samples: usize,
    pub positives: usize,
    pub positive_rate: f64,
}

pub fn corpus_stats(records: &[RhythmRecord]) -> CorpusStats {
    let samples: usize = records.iter().map(RhythmRecord::len).sum();
    let positives: usize = records.iter().map(RhythmRecord::positives).sum();
    CorpusStats {
        records: records.len(),
        samples,
        positives,
        positive_rate: if samples == 0 { 0.0 } else { positives as f64 / samples as f64 },
    }
}
