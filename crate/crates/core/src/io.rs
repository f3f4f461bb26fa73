//! CSV formats.
//!
//! Panel (`survey,t,y,n`, 1-based `t`, missing cells absent) preceded by
//! `# key: value` meta lines for `population`, `time_points` and `surveys`:
//!
//! ```text
//! # population: 10000
//! # time_points: 10
//! # surveys: s1,s2,s3
//! survey,t,y,n
//! s1,1,9,100
//! ```
//!
//! Dated records are `survey,date,y,n` with ISO-8601 dates; benchmarks are
//! `t,rate,margin`. Summary tables are written as `t,median,lower,upper`,
//! `name,median,lower,upper,r_hat,ess` and `survey,label,t,median,lower,upper`.

use std::io::{BufRead, BufReader, Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ParamRow, PhiRow, RateRow, SurveyPanel};

/// Data of the three-survey, ten-point illustrative example (population 10^4).
pub const EXAMPLE_COUNTS: [[(u64, u64); 10]; 3] = [
    [(9, 100), (18, 100), (4, 100), (14, 100), (20, 100), (3, 100), (8, 100), (3, 100), (6, 100), (12, 100)],
    [(66, 1000), (48, 1000), (7, 1000), (19, 1000), (30, 1000), (2, 1000), (10, 1000), (2, 1000), (2, 1000), (6, 1000)],
    [(207, 1000), (293, 1000), (102, 1000), (208, 1000), (345, 1000), (117, 1000), (185, 1000), (145, 1000), (174, 1000), (441, 1000)],
];

pub fn example_panel() -> SurveyPanel {
    let rows: Vec<Vec<(u64, u64)>> = EXAMPLE_COUNTS.iter().map(|r| r.to_vec()).collect();
    SurveyPanel::from_counts(10_000, vec!["survey1".into(), "survey2".into(), "survey3".into()], &rows)
}

#[derive(Debug, Serialize, Deserialize)]
struct PanelRow {
    survey: String,
    t: usize,
    y: Option<u64>,
    n: Option<u64>,
}

pub fn write_panel<W: Write>(panel: &SurveyPanel, mut w: W) -> Result<()> {
    writeln!(w, "# population: {}", panel.population())?;
    writeln!(w, "# time_points: {}", panel.n_times())?;
    writeln!(w, "# surveys: {}", panel.labels().join(","))?;
    let mut csv = csv::Writer::from_writer(w);
    let mut any = false;
    for k in 0..panel.n_surveys() {
        for t in 0..panel.n_times() {
            let (y, n) = panel.raw(k, t);
            if y.is_some() || n.is_some() {
                csv.serialize(PanelRow { survey: panel.labels()[k].clone(), t: t + 1, y, n })?;
                any = true;
            }
        }
    }
    if !any {
        csv.write_record(["survey", "t", "y", "n"])?;
    }
    csv.flush()?;
    Ok(())
}

/// Splits leading `# key: value` lines from the CSV body.
fn split_meta<R: Read>(r: R) -> Result<(Vec<(String, String)>, String)> {
    let mut meta = Vec::new();
    let mut body = String::new();
    for line in BufReader::new(r).lines() {
        let line = line?;
        if let Some(rest) = line.trim_start().strip_prefix('#') {
            if let Some((k, v)) = rest.split_once(':') {
                meta.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        body.push_str(&line);
        body.push('\n');
    }
    Ok((meta, body))
}

pub fn read_panel<R: Read>(r: R) -> Result<SurveyPanel> {
    let (meta, body) = split_meta(r)?;
    let get = |key: &str| meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
    let population: u64 = get("population")
        .ok_or_else(|| Error::Parse("panel is missing `# population:` meta line".into()))?
        .parse()
        .map_err(|e| Error::Parse(format!("bad population: {e}")))?;
    let mut rows = Vec::new();
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(body.as_bytes());
    for row in rdr.deserialize::<PanelRow>() {
        rows.push(row?);
    }
    let mut labels: Vec<String> = match get("surveys") {
        Some(s) if !s.is_empty() => s.split(',').map(|l| l.trim().to_string()).collect(),
        _ => Vec::new(),
    };
    for row in &rows {
        if !labels.contains(&row.survey) {
            labels.push(row.survey.clone());
        }
    }
    let max_t = rows.iter().map(|r| r.t).max().unwrap_or(0);
    let time_points = match get("time_points") {
        Some(v) => v.parse().map_err(|e| Error::Parse(format!("bad time_points: {e}")))?,
        None => max_t,
    };
    if max_t > time_points {
        return Err(Error::Parse(format!("row at t={max_t} beyond time_points={time_points}")));
    }
    let mut panel = SurveyPanel::new(population, labels, time_points);
    for row in rows {
        if row.t == 0 {
            return Err(Error::Parse("time points are 1-based".into()));
        }
        let k = panel.survey_index(&row.survey).expect("label registered above");
        if panel.raw(k, row.t - 1) != (None, None) {
            return Err(Error::Parse(format!("duplicate cell ({}, {})", row.survey, row.t)));
        }
        panel.set_raw(k, row.t - 1, row.y, row.n);
    }
    Ok(panel)
}

/// One survey result dated by calendar day.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatedRecord {
    pub survey: String,
    pub date: NaiveDate,
    pub y: u64,
    pub n: u64,
}

pub fn read_records<R: Read>(r: R) -> Result<Vec<DatedRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(r);
    let mut out = Vec::new();
    for rec in rdr.deserialize::<DatedRecord>() {
        let rec = rec?;
        if rec.y > rec.n {
            return Err(Error::Parse(format!("record {} {}: y exceeds n", rec.survey, rec.date)));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records<W: Write>(records: &[DatedRecord], w: W) -> Result<()> {
    write_rows(records, w)
}

/// Benchmark rate with an absolute margin at one (1-based) time point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkPoint {
    pub t: usize,
    pub rate: f64,
    pub margin: f64,
}

pub fn read_benchmark<R: Read>(r: R) -> Result<Vec<BenchmarkPoint>> {
    let rows: Vec<BenchmarkPoint> = read_rows(r)?;
    for b in &rows {
        if !(b.rate > 0.0 && b.rate < 1.0) || b.margin < 0.0 {
            return Err(Error::Parse(format!("benchmark at t={} out of range", b.t)));
        }
    }
    Ok(rows)
}

pub fn write_rows<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>, R: Read>(r: R) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(r);
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn write_rates<W: Write>(rows: &[RateRow], w: W) -> Result<()> {
    write_rows(rows, w)
}

pub fn read_rates<R: Read>(r: R) -> Result<Vec<RateRow>> {
    read_rows(r)
}

pub fn write_params<W: Write>(rows: &[ParamRow], w: W) -> Result<()> {
    write_rows(rows, w)
}

pub fn write_phi<W: Write>(rows: &[PhiRow], w: W) -> Result<()> {
    write_rows(rows, w)
}
