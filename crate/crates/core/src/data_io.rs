//! Record ingestion, daily aggregation per keyword class, and the
//! `date,count` file format.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::series::CountSeries;

/// Label of the series counting every in-range record once.
pub const TOTAL_LABEL: &str = "TOTAL";

const BUNDLED_CLASSES: &str = include_str!("../data/keyword_classes.json");

/// Keyword classes keyed by label. A record belongs to a class when any of
/// the class keywords is a case-insensitive substring of its keyword field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeywordClassMap {
    classes: BTreeMap<String, Vec<String>>,
}

impl KeywordClassMap {
    pub fn new(classes: impl IntoIterator<Item = (String, Vec<String>)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (label, keywords) in classes {
            if label.trim().is_empty() {
                return Err(Error::InvalidArgument("class label must not be empty".into()));
            }
            if label == TOTAL_LABEL {
                return Err(Error::InvalidArgument(format!("class label {TOTAL_LABEL} is reserved")));
            }
            if keywords.is_empty() || keywords.iter().any(|k| k.trim().is_empty()) {
                return Err(Error::InvalidArgument(format!(
                    "class {label} needs a non-empty list of non-empty keywords"
                )));
            }
            if map.insert(label.clone(), keywords).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate class label {label}")));
            }
        }
        if map.is_empty() {
            return Err(Error::InvalidArgument("class map has no classes".into()));
        }
        Ok(Self { classes: map })
    }

    /// The CY / ON / TW partition shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_CLASSES).expect("bundled class map is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ordered: OrderedEntries = serde_json::from_str(text)?;
        Self::new(ordered.0)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }

    pub fn keywords(&self, label: &str) -> Option<&[String]> {
        self.classes.get(label).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    fn lowered(&self) -> Vec<Vec<String>> {
        self.classes
            .values()
            .map(|ks| ks.iter().map(|k| k.to_lowercase()).collect())
            .collect()
    }
}

impl<'de> Deserialize<'de> for KeywordClassMap {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let ordered = OrderedEntries::deserialize(deserializer)?;
        Self::new(ordered.0).map_err(serde::de::Error::custom)
    }
}

/// JSON object entries in file order, keeping duplicate keys so they can be
/// rejected rather than silently overwritten.
struct OrderedEntries(Vec<(String, Vec<String>)>);

impl<'de> Deserialize<'de> for OrderedEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = OrderedEntries;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object mapping class labels to keyword lists")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Self::Value, A::Error> {
                let mut entries = Vec::new();
                while let Some(entry) = access.next_entry()? {
                    entries.push(entry);
                }
                Ok(OrderedEntries(entries))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct RawRecord {
    pub timestamp: DateTime<Utc>,
    pub keyword: String,
    pub id: String,
}

/// Records read from a file, plus the lines dropped for bad timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordBatch {
    pub records: Vec<RawRecord>,
    pub rejected_lines: Vec<usize>,
}

impl RecordBatch {
    pub fn rejected(&self) -> usize {
        self.rejected_lines.len()
    }
}

/// Accepts RFC 3339, `YYYY-MM-DD HH:MM:SS`, `YYYY-MM-DDTHH:MM:SS` (both
/// read as UTC) and bare dates (midnight UTC).
pub fn parse_timestamp(text: &str) -> Option<DateTime<Utc>> {
    let text = text.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(text) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(text, fmt) {
            return Some(t.and_utc());
        }
    }
    NaiveDate::parse_from_str(text, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|t| t.and_utc())
}

#[derive(Deserialize)]
struct RecordRow {
    id: String,
    timestamp: String,
    keyword: String,
}

fn push_row(batch: &mut RecordBatch, row: RecordRow, line: usize) {
    match parse_timestamp(&row.timestamp) {
        Some(timestamp) => batch.records.push(RawRecord {
            timestamp,
            keyword: row.keyword,
            id: row.id,
        }),
        None => batch.rejected_lines.push(line),
    }
}

/// Reads `id,timestamp,keyword` CSV (with header).
pub fn read_records_csv<R: Read>(reader: R) -> Result<RecordBatch> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut batch = RecordBatch::default();
    for row in rdr.deserialize::<RecordRow>() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(line, e.to_string())
        })?;
        // header is line 1
        let line = batch.records.len() + batch.rejected_lines.len() + 2;
        push_row(&mut batch, row, line);
    }
    Ok(batch)
}

/// Reads JSON lines with `id`, `timestamp` and `keyword` string fields.
/// Blank lines are skipped.
pub fn read_records_jsonl<R: Read>(reader: R) -> Result<RecordBatch> {
    let mut batch = RecordBatch::default();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: RecordRow = serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        push_row(&mut batch, row, i + 1);
    }
    Ok(batch)
}

/// Dispatches on extension: `.jsonl` / `.ndjson` are JSON lines, anything
/// else is CSV.
pub fn read_records(path: &Path) -> Result<RecordBatch> {
    let file = std::fs::File::open(path)?;
    let jsonl = matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl") | Some("ndjson")
    );
    let batch = if jsonl {
        read_records_jsonl(file)
    } else {
        read_records_csv(file)
    };
    batch.map_err(|e| e.with_path(path))
}

/// Daily series per class plus [`TOTAL_LABEL`].
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregation {
    pub series: BTreeMap<String, CountSeries>,
    pub out_of_range: usize,
    pub duplicates: usize,
}

/// Counts records per UTC day over `[start, end]`, zero-filling empty days.
///
/// Records sharing an `id` collapse to the smallest `(timestamp, keyword)`
/// among them, so the result does not depend on record order. A record
/// counts once in every class it matches and once in the total.
pub fn aggregate_daily(
    records: &[RawRecord],
    start: NaiveDate,
    end: NaiveDate,
    classes: &KeywordClassMap,
    exec: Execution,
) -> Result<Aggregation> {
    if start > end {
        return Err(Error::InvalidArgument(format!("start date {start} is after end date {end}")));
    }
    let days = (end - start).num_days() as usize + 1;

    let mut unique: HashMap<&str, &RawRecord> = HashMap::with_capacity(records.len());
    for r in records {
        unique
            .entry(r.id.as_str())
            .and_modify(|kept| {
                if (&r.timestamp, &r.keyword) < (&kept.timestamp, &kept.keyword) {
                    *kept = r;
                }
            })
            .or_insert(r);
    }
    let duplicates = records.len() - unique.len();
    let kept: Vec<&RawRecord> = unique.into_values().collect();

    let lowered = classes.lowered();
    let placed: Vec<Option<(usize, Vec<bool>)>> = exec.map(&kept, |r| {
        let day = r.timestamp.date_naive();
        if day < start || day > end {
            return None;
        }
        let keyword = r.keyword.to_lowercase();
        let hits = lowered
            .iter()
            .map(|ks| ks.iter().any(|k| keyword.contains(k.as_str())))
            .collect();
        Some(((day - start).num_days() as usize, hits))
    });

    let mut total = vec![0u64; days];
    let mut per_class = vec![vec![0u64; days]; classes.len()];
    let mut out_of_range = 0;
    for p in placed {
        match p {
            Some((d, hits)) => {
                total[d] += 1;
                for (c, hit) in hits.into_iter().enumerate() {
                    per_class[c][d] += hit as u64;
                }
            }
            None => out_of_range += 1,
        }
    }

    let mut series = BTreeMap::new();
    for (label, counts) in classes.labels().zip(per_class) {
        series.insert(label.to_string(), CountSeries::new(start, counts, label)?);
    }
    series.insert(TOTAL_LABEL.to_string(), CountSeries::new(start, total, TOTAL_LABEL)?);
    Ok(Aggregation {
        series,
        out_of_range,
        duplicates,
    })
}

/// Reads a `date,count` file of consecutive days. The series label is the
/// file stem.
pub fn read_counts_csv(path: &Path) -> Result<CountSeries> {
    let file = std::fs::File::open(path)?;
    let label = path.file_stem().and_then(|s| s.to_str()).unwrap_or("series");
    read_counts(file, label).map_err(|e| e.with_path(path))
}

pub fn read_counts<R: Read>(reader: R, label: &str) -> Result<CountSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(|e| Error::parse(1, e.to_string()))?;
    if header.len() != 2 || &header[0] != "date" || &header[1] != "count" {
        return Err(Error::parse(1, "expected header `date,count`"));
    }
    let mut start = None;
    let mut prev: Option<NaiveDate> = None;
    let mut counts = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            Error::parse(line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != 2 {
            return Err(Error::parse(line, format!("expected 2 fields, found {}", rec.len())));
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|e| Error::parse(line, format!("bad date {:?}: {e}", &rec[0])))?;
        let count: u64 = rec[1]
            .parse()
            .map_err(|_| Error::parse(line, format!("count {:?} is not a non-negative integer", &rec[1])))?;
        if let Some(p) = prev {
            if p.succ_opt() != Some(date) {
                return Err(Error::parse(line, format!("date {date} does not follow {p}")));
            }
        }
        start.get_or_insert(date);
        prev = Some(date);
        counts.push(count);
    }
    let start = start.ok_or_else(|| Error::parse(1, "no data rows"))?;
    CountSeries::new(start, counts, label)
}

pub fn write_counts<W: Write>(series: &CountSeries, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "count"])?;
    for (t, c) in series.counts().iter().enumerate() {
        w.write_record([series.date_at(t + 1).to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_counts_csv(series: &CountSeries, path: &Path) -> Result<()> {
    write_counts(series, std::fs::File::create(path)?)
}
