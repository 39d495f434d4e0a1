//! Rhythmogram CSV: `id, rr_ms, markup, time_ms` with markup 1 on spike
//! maxima. A header line is recognised by a non-numeric first field, and a
//! trailing fifth column is accepted and ignored.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{rr_plausible, DataError, RhythmRecord};

pub const HEADER: &str = "id,rr_ms,markup,time_ms";

/// A rejected row or record, with its 1-based line number.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvIssue {
    pub line: u64,
    pub record: Option<String>,
    pub message: String,
}

impl std::fmt::Display for CsvIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.record {
            Some(id) => write!(f, "line {} (record {id}): {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedCsv {
    /// Accepted records in order of first appearance.
    pub records: Vec<RhythmRecord>,
    pub issues: Vec<CsvIssue>,
}

pub fn parse_csv(path: impl AsRef<Path>) -> Result<ParsedCsv, DataError> {
    read_csv(std::fs::File::open(path)?)
}

struct Pending {
    id: String,
    rr: Vec<f64>,
    labels: Vec<u8>,
    times: Vec<f64>,
    broken: bool,
}

pub fn read_csv(reader: impl Read) -> Result<ParsedCsv, DataError> {
    let mut rdr = ::csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(::csv::Trim::All)
        .from_reader(reader);

    let mut order: Vec<Pending> = Vec::new();
    let mut by_id: HashMap<String, usize> = HashMap::new();
    let mut issues = Vec::new();
    let mut first = true;

    for row in rdr.records() {
        let row = row.map_err(|e| DataError::Csv(e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let is_first = std::mem::replace(&mut first, false);
        if is_first && row.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let issue = |record: Option<&str>, message: String| CsvIssue {
            line,
            record: record.map(str::to_owned),
            message,
        };
        if row.len() != 4 && row.len() != 5 {
            issues.push(issue(None, format!("expected 4 or 5 columns, found {}", row.len())));
            continue;
        }
        let id = &row[0];
        if id.is_empty() {
            issues.push(issue(None, "empty identifier".into()));
            continue;
        }
        let rr = match row[1].parse::<f64>() {
            Ok(v) if rr_plausible(v) => v,
            Ok(v) => {
                issues.push(issue(Some(id), format!("rr {v} ms outside the plausible range")));
                continue;
            }
            Err(_) => {
                issues.push(issue(Some(id), format!("non-numeric rr {:?}", &row[1])));
                continue;
            }
        };
        let label = match &row[2] {
            "0" => 0u8,
            "1" => 1u8,
            other => {
                issues.push(issue(Some(id), format!("markup {other:?} is not 0 or 1")));
                continue;
            }
        };
        let time = match row[3].parse::<f64>() {
            Ok(v) if v.is_finite() => v,
            _ => {
                issues.push(issue(Some(id), format!("invalid time {:?}", &row[3])));
                continue;
            }
        };

        let slot = *by_id.entry(id.to_owned()).or_insert_with(|| {
            order.push(Pending {
                id: id.to_owned(),
                rr: Vec::new(),
                labels: Vec::new(),
                times: Vec::new(),
                broken: false,
            });
            order.len() - 1
        });
        let rec = &mut order[slot];
        if rec.broken {
            continue;
        }
        if rec.times.last().is_some_and(|&prev| time <= prev) {
            rec.broken = true;
            issues.push(issue(
                Some(id),
                format!("time {time} does not increase; record rejected"),
            ));
            continue;
        }
        rec.rr.push(rr);
        rec.labels.push(label);
        rec.times.push(time);
    }

    let records = order
        .into_iter()
        .filter(|p| !p.broken)
        .map(|p| RhythmRecord::new(p.id, p.rr, p.labels, p.times))
        .collect::<Result<_, _>>()?;
    Ok(ParsedCsv { records, issues })
}

fn check_id(id: &str) -> std::io::Result<()> {
    if id.is_empty() || id.contains([',', '"', '\n', '\r']) {
        return Err(std::io::Error::new(
            std::io::ErrorKind::InvalidInput,
            format!("record id {id:?} cannot be written unquoted"),
        ));
    }
    Ok(())
}

/// Writes records with a header line and `\n` line endings.
pub fn write_csv(mut w: impl Write, records: &[RhythmRecord]) -> std::io::Result<()> {
    writeln!(w, "{HEADER}")?;
    for rec in records {
        check_id(&rec.id)?;
        for i in 0..rec.len() {
            writeln!(w, "{},{},{},{}", rec.id, rec.rr[i], rec.labels[i], rec.times[i])?;
        }
    }
    Ok(())
}

/// Like [`write_csv`] with a fifth `prediction` column.
pub fn write_csv_with_predictions(
    mut w: impl Write,
    records: &[RhythmRecord],
    predictions: &[Vec<u8>],
) -> std::io::Result<()> {
    assert_eq!(records.len(), predictions.len());
    writeln!(w, "{HEADER},prediction")?;
    for (rec, pred) in records.iter().zip(predictions) {
        check_id(&rec.id)?;
        assert_eq!(rec.len(), pred.len());
        for i in 0..rec.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                rec.id, rec.rr[i], rec.labels[i], rec.times[i], pred[i]
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ParsedCsv {
        read_csv(text.as_bytes()).unwrap()
    }

    #[test]
    fn single_row() {
        let p = parse("7,812,0,15000\n");
        assert!(p.issues.is_empty());
        assert_eq!(p.records.len(), 1);
        let r = &p.records[0];
        assert_eq!((r.id.as_str(), r.rr[0], r.labels[0], r.times[0]), ("7", 812.0, 0, 15000.0));
    }

    #[test]
    fn empty_file() {
        let p = parse("");
        assert!(p.records.is_empty() && p.issues.is_empty());
    }

    #[test]
    fn bad_markup_rejected_with_line() {
        let p = parse("id,rr,markup,time\n1,800,0,800\n1,810,2,1610\n1,790,1,2400\n");
        assert_eq!(p.issues.len(), 1);
        assert_eq!(p.issues[0].line, 3);
        assert_eq!(p.records[0].rr, vec![800.0, 790.0]);
    }

    #[test]
    fn non_numeric_rr_rejected() {
        let p = parse("1,800,0,800\n1,abc,0,1600\n");
        assert_eq!(p.issues.len(), 1);
        assert_eq!(p.issues[0].line, 2);
        assert_eq!(p.records[0].len(), 1);
    }

    #[test]
    fn non_monotonic_time_rejects_record() {
        let p = parse("1,800,0,800\n2,800,0,800\n1,800,0,700\n2,810,1,1610\n");
        assert_eq!(p.records.len(), 1);
        assert_eq!(p.records[0].id, "2");
        assert_eq!(p.issues[0].record.as_deref(), Some("1"));
        assert_eq!(p.issues[0].line, 3);
    }

    #[test]
    fn interleaved_ids_grouped_and_fifth_column_ignored() {
        let p = parse("a,800,0,800,x\nb,700,1,700,y\na,810,1,1610,z\n");
        // header detection only applies to line 1, whose first field is "a"
        assert_eq!(p.records.len(), 2);
        assert_eq!(p.records[0].id, "b");
        let p = parse("10,800,0,800,x\n11,700,1,700,y\n10,810,1,1610,z\n");
        assert_eq!(p.records.len(), 2);
        assert_eq!(p.records[0].rr, vec![800.0, 810.0]);
    }

    #[test]
    fn write_then_read_roundtrip() {
        let recs = vec![
            RhythmRecord::from_intervals("3", vec![812.0, 799.5, 1023.25], vec![0, 1, 0]).unwrap(),
            RhythmRecord::new("4", vec![640.0], vec![1], vec![0.125]).unwrap(),
        ];
        let mut buf = Vec::new();
        write_csv(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,rr_ms,markup,time_ms\n3,812,0,812\n"));
        assert!(!text.contains('\r'));
        let back = read_csv(buf.as_slice()).unwrap();
        assert!(back.issues.is_empty());
        assert_eq!(back.records, recs);
    }
}
