use super::TrainError;

/// Per-sample confusion counts for the positive (spike) class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_predictions(pred: &[u8], truth: &[u8]) -> Result<Self, TrainError> {
        let mut c = Self::default();
        c.add(pred, truth)?;
        Ok(c)
    }

    pub fn add(&mut self, pred: &[u8], truth: &[u8]) -> Result<(), TrainError> {
        if pred.len() != truth.len() {
            return Err(TrainError::LengthMismatch {
                what: "predictions",
                expected: truth.len(),
                found: pred.len(),
            });
        }
        for (&p, &t) in pred.iter().zip(truth) {
            match (p != 0, t != 0) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => self.tn += 1,
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.tn += other.tn;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f_score(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Binary F1 of `pred` against `truth`.
pub fn f_score(pred: &[u8], truth: &[u8]) -> Result<f64, TrainError> {
    Ok(Confusion::from_predictions(pred, truth)?.f_score())
}
