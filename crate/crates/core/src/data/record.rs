use super::DataError;

/// Lowest accepted RR interval, exclusive (ms).
pub const RR_MIN_MS: f64 = 200.0;
/// Highest accepted RR interval, exclusive (ms).
pub const RR_MAX_MS: f64 = 3000.0;

pub fn rr_plausible(rr: f64) -> bool {
    rr > RR_MIN_MS && rr < RR_MAX_MS
}

/// One subject's rhythmogram with per-sample spike-maximum labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RhythmRecord {
    pub id: String,
    /// RR intervals in milliseconds.
    pub rr: Vec<f64>,
    /// 1 marks a spike maximum.
    pub labels: Vec<u8>,
    /// Measurement time of each sample in milliseconds.
    pub times: Vec<f64>,
}

impl RhythmRecord {
    pub fn new(id: impl Into<String>, rr: Vec<f64>, labels: Vec<u8>, times: Vec<f64>) -> Result<Self, DataError> {
        let rec = Self {
            id: id.into(),
            rr,
            labels,
            times,
        };
        rec.validate()?;
        Ok(rec)
    }

    /// Builds a record whose times are the running sum of its intervals.
    pub fn from_intervals(id: impl Into<String>, rr: Vec<f64>, labels: Vec<u8>) -> Result<Self, DataError> {
        let times = rr
            .iter()
            .scan(0.0, |t, &r| {
                *t += r;
                Some(*t)
            })
            .collect();
        Self::new(id, rr, labels, times)
    }

    pub fn len(&self) -> usize {
        self.rr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rr.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let invalid = |reason: String| {
            Err(DataError::InvalidRecord {
                id: self.id.clone(),
                reason,
            })
        };
        if self.rr.is_empty() {
            return invalid("record has no samples".into());
        }
        if self.labels.len() != self.rr.len() || self.times.len() != self.rr.len() {
            return invalid(format!(
                "length mismatch: rr {}, labels {}, times {}",
                self.rr.len(),
                self.labels.len(),
                self.times.len()
            ));
        }
        if let Some(i) = self.rr.iter().position(|&r| !rr_plausible(r)) {
            return invalid(format!("rr[{i}] = {} outside ({RR_MIN_MS}, {RR_MAX_MS}) ms", self.rr[i]));
        }
        if let Some(i) = self.labels.iter().position(|&l| l > 1) {
            return invalid(format!("label[{i}] = {} is not 0 or 1", self.labels[i]));
        }
        if let Some(i) = self.times.windows(2).position(|w| w[1] <= w[0]) {
            return invalid(format!("time not increasing at sample {}", i + 1));
        }
        Ok(())
    }
}
