//! Tab-separated dataset files.
//!
//! One record per line: `id<TAB>sequence<TAB>country<TAB>YYYY-MM<TAB>lineage`.
//! Lines starting with `#` are comments.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encode::SequenceRecord;
use crate::error::{Error, Result};

/// Calendar month, serialized as `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct YearMonth {
    pub year: i32,
    /// 1-based.
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::InvalidConfig(format!("month {month} out of range 1..=12")));
        }
        Ok(Self { year, month })
    }

    fn ordinal(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    fn from_ordinal(ordinal: i64) -> Self {
        Self { year: ordinal.div_euclid(12) as i32, month: ordinal.rem_euclid(12) as u32 + 1 }
    }

    /// The month `offset` months after `self`.
    pub fn plus(self, offset: u32) -> Self {
        Self::from_ordinal(self.ordinal() + offset as i64)
    }

    /// Months from `start` to `self`; negative if `self` is earlier.
    pub fn months_since(self, start: YearMonth) -> i64 {
        self.ordinal() - start.ordinal()
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("`{s}` is not a YYYY-MM month"));
        let (y, m) = s.split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year = y.parse().map_err(|_| bad())?;
        let month = m.parse().map_err(|_| bad())?;
        Self::new(year, month).map_err(|_| bad())
    }
}

impl TryFrom<String> for YearMonth {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<YearMonth> for String {
    fn from(m: YearMonth) -> String {
        m.to_string()
    }
}

/// The months covered by an experiment: `start` and the `months - 1` that follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StudyWindow {
    pub start: YearMonth,
    pub months: u32,
}

impl StudyWindow {
    pub fn index_of(&self, month: YearMonth) -> Option<u32> {
        let offset = month.months_since(self.start);
        (0..self.months as i64).contains(&offset).then_some(offset as u32)
    }

    pub fn month_at(&self, index: u32) -> YearMonth {
        self.start.plus(index)
    }
}

pub fn parse_tsv(text: &str, window: &StudyWindow, source: &str) -> Result<Vec<SequenceRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: source.to_string(), line: lineno + 1, msg };
        let cols: Vec<&str> = line.split('\t').collect();
        let [id, sequence, country, month, lineage] = cols[..] else {
            return Err(err(format!("expected 5 tab-separated columns, found {}", cols.len())));
        };
        if sequence.is_empty() {
            return Err(err(format!("record `{id}` has an empty sequence")));
        }
        let ym: YearMonth = month.parse().map_err(|e: Error| err(e.to_string()))?;
        let month = window.index_of(ym).ok_or_else(|| {
            err(format!(
                "month {ym} of record `{id}` lies outside the study window {}..{}",
                window.start,
                window.month_at(window.months.saturating_sub(1))
            ))
        })?;
        records.push(SequenceRecord {
            id: id.to_string(),
            sequence: sequence.to_string(),
            country: country.to_string(),
            month,
            lineage: lineage.to_string(),
        });
    }
    Ok(records)
}

pub fn read_tsv(path: &Path, window: &StudyWindow) -> Result<Vec<SequenceRecord>> {
    let text = fs::read_to_string(path)?;
    parse_tsv(&text, window, &path.display().to_string())
}

/// Write records; each `comments` line is emitted as a `# ` header line.
pub fn write_tsv(path: &Path, records: &[SequenceRecord], window: &StudyWindow, comments: &[String]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    for r in records {
        writeln!(out, "{}\t{}\t{}\t{}\t{}", r.id, r.sequence, r.country, window.month_at(r.month), r.lineage)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window() -> StudyWindow {
        StudyWindow { start: "2021-01".parse().unwrap(), months: 6 }
    }

    #[test]
    fn month_arithmetic() {
        let start: YearMonth = "2020-11".parse().unwrap();
        assert_eq!(start.plus(3).to_string(), "2021-02");
        assert_eq!("2021-02".parse::<YearMonth>().unwrap().months_since(start), 3);
        assert!("2021-13".parse::<YearMonth>().is_err());
        assert!("21-01".parse::<YearMonth>().is_err());
    }

    #[test]
    fn parses_records_and_skips_comments() {
        let text = "# header\nid1\tACD\tUSA\t2021-03\tAlpha\n\nid2\tMK\tEngland\t2021-01\tBeta\n";
        let recs = parse_tsv(text, &window(), "mem").unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].month, 2);
        assert_eq!(recs[1].country, "England");
    }

    #[test]
    fn rejects_bad_lines() {
        let w = window();
        assert!(matches!(parse_tsv("a\tb\tc\n", &w, "m"), Err(Error::Parse { line: 1, .. })));
        assert!(parse_tsv("a\tAC\tUSA\t2022-01\tAlpha\n", &w, "m").is_err());
        assert!(parse_tsv("a\t\tUSA\t2021-01\tAlpha\n", &w, "m").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join(format!("epic-tsv-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("d.tsv");
        let recs = parse_tsv("x\tAC\tUSA\t2021-06\tGamma\n", &window(), "m").unwrap();
        write_tsv(&path, &recs, &window(), &["made in a test".into()]).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# made in a test\n"));
        assert_eq!(read_tsv(&path, &window()).unwrap(), recs);
        fs::remove_dir_all(dir).ok();
    }
}
