//! ECDC variant CSV ingestion.
//!
//! Columns are matched by header name; the required ones are `country`,
//! `year_week`, `source`, `variant` and `number_detections_variant`. Any other
//! column is ignored. Files ending in `.gz` are decompressed transparently.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate, Weekday};
use flate2::read::GzDecoder;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ndcore::Matrix;

pub const REQUIRED_COLUMNS: [&str; 5] = [
    "country",
    "year_week",
    "source",
    "variant",
    "number_detections_variant",
];

/// ISO year and week, rendered `YYYY-WW`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearWeek {
    pub year: i32,
    pub week: u32,
}

impl YearWeek {
    pub fn new(year: i32, week: u32) -> Result<Self> {
        if !(1..=53).contains(&week) {
            return Err(Error::param(format!("week {week} outside 01..53")));
        }
        Ok(YearWeek { year, week })
    }

    fn monday(self) -> Option<NaiveDate> {
        NaiveDate::from_isoywd_opt(self.year, self.week, Weekday::Mon)
    }

    /// Following ISO week.
    pub fn succ(self) -> Result<YearWeek> {
        let monday = self
            .monday()
            .ok_or_else(|| Error::Data(format!("{self} is not a valid ISO week")))?;
        let next = monday + chrono::Duration::days(7);
        let iso = next.iso_week();
        Ok(YearWeek {
            year: iso.year(),
            week: iso.week(),
        })
    }

    /// Every ISO week from `self` to `last` inclusive.
    pub fn range_inclusive(self, last: YearWeek) -> Result<Vec<YearWeek>> {
        if last.monday().is_none() {
            return Err(Error::Data(format!("{last} is not a valid ISO week")));
        }
        let mut out = vec![self];
        let mut cur = self;
        while cur < last {
            cur = cur.succ()?;
            out.push(cur);
        }
        Ok(out)
    }
}

impl fmt::Display for YearWeek {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.week)
    }
}

impl FromStr for YearWeek {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let b = s.as_bytes();
        let digits = |r: std::ops::Range<usize>| b[r].iter().all(u8::is_ascii_digit);
        if b.len() != 7 || b[4] != b'-' || !digits(0..4) || !digits(5..7) {
            return Err(Error::param(format!("`{s}` is not a YYYY-WW week")));
        }
        YearWeek::new(s[..4].parse().expect("digits"), s[5..].parse().expect("digits"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Source {
    Gisaid,
    Tessy,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Gisaid => "GISAID",
            Source::Tessy => "TESSy",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gisaid" => Ok(Source::Gisaid),
            "tessy" => Ok(Source::Tessy),
            other => Err(Error::param(format!("unknown source `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CaseRecord {
    pub country: String,
    pub year_week: YearWeek,
    pub source: Source,
    pub variant: String,
    pub detections: u64,
}

/// Parses CSV rows, failing on the first malformed one.
pub fn parse_csv<R: Read>(reader: R) -> Result<Vec<CaseRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Format(format!("cannot read header row: {e}")))?
        .clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Format("missing header row".into()));
    }
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(REQUIRED_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.trim().eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Format(format!("missing required column `{name}`")))?;
    }
    let [c_country, c_week, c_source, c_variant, c_count] = idx;

    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Row {
                line,
                message: format!("malformed CSV row: {e}"),
            }
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let row_err = |column: &str, message: String| Error::Row {
            line,
            message: format!("column {column}: {message}"),
        };
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let year_week = field(c_week)
            .parse::<YearWeek>()
            .map_err(|e| row_err("year_week", e.to_string()))?;
        let source = field(c_source)
            .parse::<Source>()
            .map_err(|e| row_err("source", e.to_string()))?;
        let raw = field(c_count);
        let detections = raw.parse::<u64>().map_err(|_| {
            row_err(
                "number_detections_variant",
                format!("`{raw}` is not a nonnegative integer count"),
            )
        })?;
        let country = field(c_country);
        let variant = field(c_variant);
        if country.is_empty() || variant.is_empty() {
            return Err(row_err("country/variant", "empty label".into()));
        }
        out.push(CaseRecord {
            country: country.to_string(),
            year_week,
            source,
            variant: variant.to_string(),
            detections,
        });
    }
    Ok(out)
}

/// Opens `path`, decompressing when the name ends in `.gz`.
pub fn open_data(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

pub fn read_records(path: &Path) -> Result<Vec<CaseRecord>> {
    parse_csv(open_data(path)?)
}

/// Hex SHA-256 of the raw bytes at `path`.
pub fn file_sha256(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    std::io::copy(&mut file, &mut hasher).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(hasher.finalize()))
}

pub fn filter_source(records: &[CaseRecord], source: Source) -> Vec<CaseRecord> {
    records.iter().filter(|r| r.source == source).cloned().collect()
}

/// Dense `week x country` counts for one variant.
#[derive(Clone, Debug, PartialEq)]
pub struct VariantPanel {
    pub variant: String,
    pub countries: Vec<String>,
    pub weeks: Vec<YearWeek>,
    pub values: Matrix,
}

impl VariantPanel {
    pub fn total(&self) -> f64 {
        self.values.as_slice().iter().sum()
    }

    pub fn country_index(&self, country: &str) -> Option<usize> {
        self.countries.iter().position(|c| c == country)
    }

    /// Single-country panel.
    pub fn country_slice(&self, idx: usize) -> VariantPanel {
        VariantPanel {
            variant: self.variant.clone(),
            countries: vec![self.countries[idx].clone()],
            weeks: self.weeks.clone(),
            values: Matrix::from_fn(self.weeks.len(), 1, |r, _| self.values.get(r, idx)),
        }
    }

    /// One record per cell, zeros included.
    pub fn to_records(&self, source: Source) -> Vec<CaseRecord> {
        let mut out = Vec::with_capacity(self.values.as_slice().len());
        for (w, week) in self.weeks.iter().enumerate() {
            for (c, country) in self.countries.iter().enumerate() {
                out.push(CaseRecord {
                    country: country.clone(),
                    year_week: *week,
                    source,
                    variant: self.variant.clone(),
                    detections: self.values.get(w, c) as u64,
                });
            }
        }
        out
    }
}

/// Pivots records into one panel per variant.
///
/// Every panel shares the same axes: all countries seen in `records`
/// (lexicographic) and every ISO week between the earliest and latest week
/// seen. Missing cells are zero and duplicate cells are summed.
pub fn build_panels(records: &[CaseRecord]) -> Result<BTreeMap<String, VariantPanel>> {
    if records.is_empty() {
        return Err(Error::Data("no records to build panels from".into()));
    }
    let countries: Vec<String> = records
        .iter()
        .map(|r| r.country.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let first = records.iter().map(|r| r.year_week).min().expect("nonempty");
    let last = records.iter().map(|r| r.year_week).max().expect("nonempty");
    let weeks = first.range_inclusive(last)?;
    let week_index: BTreeMap<YearWeek, usize> = weeks.iter().enumerate().map(|(i, w)| (*w, i)).collect();
    let country_index: BTreeMap<&str, usize> = countries.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let mut panels: BTreeMap<String, VariantPanel> = BTreeMap::new();
    for r in records {
        let w = *week_index
            .get(&r.year_week)
            .ok_or_else(|| Error::Data(format!("{} is not a valid ISO week", r.year_week)))?;
        let c = country_index[r.country.as_str()];
        let panel = panels.entry(r.variant.clone()).or_insert_with(|| VariantPanel {
            variant: r.variant.clone(),
            countries: countries.clone(),
            weeks: weeks.clone(),
            values: Matrix::zeros(weeks.len(), countries.len()),
        });
        let v = panel.values.get(w, c) + r.detections as f64;
        panel.values.set(w, c, v);
    }
    Ok(panels)
}

pub fn write_records_csv<W: Write>(writer: W, records: &[CaseRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let fmt_err = |e: csv::Error| Error::Format(format!("writing CSV: {e}"));
    w.write_record(REQUIRED_COLUMNS).map_err(fmt_err)?;
    for r in records {
        w.write_record([
            r.country.as_str(),
            &r.year_week.to_string(),
            r.source.as_str(),
            r.variant.as_str(),
            &r.detections.to_string(),
        ])
        .map_err(fmt_err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("writing CSV: {e}")))?;
    Ok(())
}

/// What `ingest-check` reports about a data file.
#[derive(Clone, Debug)]
pub struct IngestSummary {
    pub source: Source,
    pub records_total: usize,
    pub records_kept: usize,
    pub countries: Vec<String>,
    pub first_week: YearWeek,
    pub last_week: YearWeek,
    pub week_count: usize,
    /// Variant name and total detections, in name order.
    pub variant_totals: Vec<(String, f64)>,
    /// Variants present in the file but absent after source filtering.
    pub dropped_variants: Vec<String>,
}

pub fn summarize(records: &[CaseRecord], source: Source) -> Result<(IngestSummary, BTreeMap<String, VariantPanel>)> {
    let kept = filter_source(records, source);
    if kept.is_empty() {
        return Err(Error::Data(format!("no {source} records in the input")));
    }
    let panels = build_panels(&kept)?;
    let all_variants: BTreeSet<&str> = records.iter().map(|r| r.variant.as_str()).collect();
    let dropped = all_variants
        .into_iter()
        .filter(|v| !panels.contains_key(*v))
        .map(str::to_string)
        .collect();
    let any = panels.values().next().expect("nonempty");
    let summary = IngestSummary {
        source,
        records_total: records.len(),
        records_kept: kept.len(),
        countries: any.countries.clone(),
        first_week: any.weeks[0],
        last_week: *any.weeks.last().expect("nonempty"),
        week_count: any.weeks.len(),
        variant_totals: panels.iter().map(|(k, p)| (k.clone(), p.total())).collect(),
        dropped_variants: dropped,
    };
    Ok((summary, panels))
}
