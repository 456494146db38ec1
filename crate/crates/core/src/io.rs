//! CSV readers and writers for series, events, predictions and the
//! intermediate files passed between CLI stages.
//!
//! Readers never abort on a bad data row: the row is skipped and counted in
//! an [`IngestReport`]. Only a malformed header is fatal.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use csv::{ReaderBuilder, StringRecord, Terminator, WriterBuilder};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::model::{
    format_timestamp, parse_timestamp, EventClass, LabeledEvent, Sample, ScoredEvent,
    ScoringInterval, Series, DEFAULT_CADENCE_SECONDS,
};

pub const SERIES_HEADER: [&str; 5] = ["series_id", "step", "timestamp", "anglez", "enmo"];
pub const EVENTS_HEADER: [&str; 5] = ["series_id", "night", "event", "step", "timestamp"];
pub const PREDICTIONS_HEADER: [&str; 5] = ["row_id", "series_id", "step", "event", "score"];
pub const INTERVALS_HEADER: [&str; 3] = ["series_id", "start_step", "end_step"];
pub const PROBA_HEADER: [&str; 3] = ["series_id", "step", "proba"];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_skipped: usize,
    pub skip_reasons: BTreeMap<String, usize>,
    /// Rows kept with a negative enmo reset to zero.
    pub clamped_enmo: usize,
}

impl IngestReport {
    fn skip(&mut self, reason: &str) {
        self.rows_skipped += 1;
        *self.skip_reasons.entry(reason.to_string()).or_default() += 1;
    }
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source)
}

fn writer<W: Write>(sink: W) -> csv::Writer<W> {
    WriterBuilder::new()
        .terminator(Terminator::Any(b'\n'))
        .from_writer(sink)
}

/// Maps each required column to its position in `header`.
fn column_positions<const N: usize>(
    header: &StringRecord,
    required: &[&str; N],
) -> Result<[usize; N]> {
    let mut out = [0usize; N];
    for (slot, name) in out.iter_mut().zip(required) {
        *slot = header
            .iter()
            .position(|h| h.trim_start_matches('\u{feff}') == *name)
            .ok_or_else(|| Error::Header {
                expected: required.join(","),
                found: header.iter().collect::<Vec<_>>().join(","),
            })?;
    }
    Ok(out)
}

fn field(rec: &StringRecord, idx: usize) -> Option<&str> {
    rec.get(idx)
}

/// Reads a series CSV, grouping rows by `series_id` in order of first
/// appearance. Samples are sorted by step; negative enmo is clamped to 0.
pub fn read_series_csv<R: Read>(source: R) -> Result<(Vec<Series>, IngestReport)> {
    let mut rdr = reader(source);
    let cols = column_positions(rdr.headers()?, &SERIES_HEADER)?;
    let mut report = IngestReport::default();
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Sample>> = HashMap::new();

    for rec in rdr.records() {
        report.rows_read += 1;
        let Ok(rec) = rec else {
            report.skip("parse");
            continue;
        };
        let parsed = (|| {
            let id = field(&rec, cols[0])?.to_string();
            let step = field(&rec, cols[1])?.parse::<u64>().ok()?;
            let timestamp = parse_timestamp(field(&rec, cols[2])?).ok()?;
            let anglez = field(&rec, cols[3])?.parse::<f64>().ok()?;
            let enmo = field(&rec, cols[4])?.parse::<f64>().ok()?;
            (!id.is_empty() && anglez.is_finite() && enmo.is_finite()).then_some((
                id,
                Sample {
                    step,
                    timestamp,
                    anglez,
                    enmo,
                },
            ))
        })();
        let Some((id, mut sample)) = parsed else {
            report.skip("parse");
            continue;
        };
        if sample.enmo < 0.0 {
            sample.enmo = 0.0;
            report.clamped_enmo += 1;
        }
        groups
            .entry(id.clone())
            .or_insert_with(|| {
                order.push(id);
                Vec::new()
            })
            .push(sample);
    }

    let series = order
        .into_iter()
        .map(|id| {
            let mut samples = groups.remove(&id).unwrap_or_default();
            samples.sort_by_key(|s| s.step);
            let cadence_seconds = infer_cadence(&samples);
            Series {
                series_id: id,
                samples,
                cadence_seconds,
            }
        })
        .collect();
    Ok((series, report))
}

fn infer_cadence(samples: &[Sample]) -> u32 {
    match samples {
        [a, b, ..] if b.step > a.step => {
            let dt = (b.timestamp - a.timestamp).num_seconds();
            let per_step = dt / (b.step - a.step) as i64;
            u32::try_from(per_step)
                .ok()
                .filter(|&c| c > 0)
                .unwrap_or(DEFAULT_CADENCE_SECONDS)
        }
        _ => DEFAULT_CADENCE_SECONDS,
    }
}

pub fn write_series_csv<W: Write>(series: &[Series], sink: W) -> Result<()> {
    let mut w = writer(sink);
    w.write_record(SERIES_HEADER)?;
    for s in series {
        for x in &s.samples {
            w.write_record([
                s.series_id.as_str(),
                &x.step.to_string(),
                &format_timestamp(&x.timestamp),
                &x.anglez.to_string(),
                &x.enmo.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads ground-truth events. Rows for nights without a recorded event
/// (blank step/timestamp) are skipped as `unlabeled_night`.
pub fn read_events_csv<R: Read>(source: R) -> Result<(Vec<LabeledEvent>, IngestReport)> {
    let mut rdr = reader(source);
    let cols = column_positions(rdr.headers()?, &EVENTS_HEADER)?;
    let mut report = IngestReport::default();
    let mut out = Vec::new();

    for rec in rdr.records() {
        report.rows_read += 1;
        let Ok(rec) = rec else {
            report.skip("parse");
            continue;
        };
        let get = |i: usize| field(&rec, cols[i]).unwrap_or("");
        let (step_s, ts_s) = (get(3), get(4));
        if step_s.is_empty() || ts_s.is_empty() {
            report.skip("unlabeled_night");
            continue;
        }
        let Ok(class) = get(2).parse::<EventClass>() else {
            report.skip("bad_event");
            continue;
        };
        let parsed = (|| {
            Some(LabeledEvent {
                series_id: Some(get(0)).filter(|s| !s.is_empty())?.to_string(),
                night: get(1).parse().ok()?,
                class,
                step: step_s
                    .parse::<f64>()
                    .ok()
                    .filter(|v| *v >= 0.0 && v.fract() == 0.0)? as u64,
                timestamp: parse_timestamp(ts_s).ok()?,
            })
        })();
        match parsed {
            Some(ev) => out.push(ev),
            None => report.skip("parse"),
        }
    }
    Ok((out, report))
}

pub fn write_events_csv<W: Write>(events: &[LabeledEvent], sink: W) -> Result<()> {
    let mut w = writer(sink);
    w.write_record(EVENTS_HEADER)?;
    for e in events {
        w.write_record([
            e.series_id.as_str(),
            &e.night.to_string(),
            e.class.as_str(),
            &e.step.to_string(),
            &format_timestamp(&e.timestamp),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes predictions as `row_id,series_id,step,event,score`.
///
/// Scores use the shortest decimal form that parses back to the same
/// `f64`, so reading the file reproduces the input exactly.
pub fn write_predictions<W: Write>(events: &[ScoredEvent], sink: W) -> Result<()> {
    let mut seen = HashSet::with_capacity(events.len());
    for e in events {
        if !seen.insert((e.series_id.as_str(), e.step, e.class)) {
            return Err(Error::DuplicatePrediction {
                series_id: e.series_id.clone(),
                step: e.step,
                event: e.class.to_string(),
            });
        }
        if !e.confidence.is_finite() || e.confidence < 0.0 {
            return Err(Error::Invalid(format!(
                "score {} for series {} step {} is not a finite non-negative number",
                e.confidence, e.series_id, e.step
            )));
        }
    }
    let mut w = writer(sink);
    w.write_record(PREDICTIONS_HEADER)?;
    for (row_id, e) in events.iter().enumerate() {
        w.write_record([
            row_id.to_string().as_str(),
            &e.series_id,
            &e.step.to_string(),
            e.class.as_str(),
            &e.confidence.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(source: R) -> Result<Vec<ScoredEvent>> {
    let mut rdr = reader(source);
    let cols = column_positions(rdr.headers()?, &PREDICTIONS_HEADER)?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Parse(format!("predictions row {}: bad {what}", line + 1));
        let get = |i: usize| field(&rec, cols[i]).unwrap_or("");
        out.push(ScoredEvent {
            series_id: get(1).to_string(),
            step: get(2).parse().map_err(|_| bad("step"))?,
            class: get(3).parse().map_err(|_| bad("event"))?,
            confidence: get(4)
                .parse::<f64>()
                .ok()
                .filter(|c| c.is_finite())
                .ok_or_else(|| bad("score"))?,
        });
    }
    Ok(out)
}

pub fn write_intervals_csv<W: Write>(intervals: &[ScoringInterval], sink: W) -> Result<()> {
    let mut w = writer(sink);
    w.write_record(INTERVALS_HEADER)?;
    for iv in intervals {
        w.write_record([
            iv.series_id.as_str(),
            &iv.start_step.to_string(),
            &iv.end_step.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_intervals_csv<R: Read>(source: R) -> Result<Vec<ScoringInterval>> {
    let mut rdr = reader(source);
    let cols = column_positions(rdr.headers()?, &INTERVALS_HEADER)?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| field(&rec, cols[i]).unwrap_or("");
        let bad = || Error::Parse(format!("intervals row {}", line + 1));
        let iv = ScoringInterval {
            series_id: get(0).to_string(),
            start_step: get(1).parse().map_err(|_| bad())?,
            end_step: get(2).parse().map_err(|_| bad())?,
        };
        if iv.start_step >= iv.end_step {
            return Err(Error::Parse(format!(
                "intervals row {}: empty interval [{}, {})",
                line + 1,
                iv.start_step,
                iv.end_step
            )));
        }
        out.push(iv);
    }
    Ok(out)
}

/// Writes `series_id,step,<feature columns...>` for one or more matrices.
/// All matrices must share the same column names.
pub fn write_features_csv<W: Write>(matrices: &[FeatureMatrix], sink: W) -> Result<()> {
    let mut w = writer(sink);
    let names = matrices
        .first()
        .map(|m| m.column_names.clone())
        .unwrap_or_default();
    let mut header = vec!["series_id".to_string(), "step".to_string()];
    header.extend(names.iter().cloned());
    w.write_record(&header)?;
    for m in matrices {
        if m.column_names != names {
            return Err(Error::Invalid(format!(
                "feature matrix for {} has different columns",
                m.series_id
            )));
        }
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for r in 0..m.n_rows() {
            row.clear();
            row.push(m.series_id.clone());
            row.push(m.steps[r].to_string());
            row.extend(m.columns.iter().map(|c| c[r].to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_features_csv<R: Read>(source: R) -> Result<Vec<FeatureMatrix>> {
    let mut rdr = reader(source);
    let header = rdr.headers()?.clone();
    let [id_col, step_col] = column_positions(&header, &["series_id", "step"])?;
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&i| i != id_col && i != step_col)
        .collect();
    let names: Vec<String> = feature_cols
        .iter()
        .map(|&i| header[i].to_string())
        .collect();

    let mut out: Vec<FeatureMatrix> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Parse(format!("features row {}: bad {what}", line + 1));
        let id = field(&rec, id_col).ok_or_else(|| bad("series_id"))?;
        let step: u64 = field(&rec, step_col)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("step"))?;
        if out.last().map(|m| m.series_id.as_str()) != Some(id) {
            out.push(FeatureMatrix {
                series_id: id.to_string(),
                column_names: names.clone(),
                steps: Vec::new(),
                columns: vec![Vec::new(); names.len()],
            });
        }
        let m = out.last_mut().expect("just pushed");
        m.steps.push(step);
        for (col, &i) in m.columns.iter_mut().zip(&feature_cols) {
            let v = field(&rec, i)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(&header[i]))?;
            col.push(v);
        }
    }
    Ok(out)
}

/// Per-step sleep probabilities for one series.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbaTrack {
    pub series_id: String,
    pub steps: Vec<u64>,
    pub proba: Vec<f64>,
}

pub fn write_proba_csv<W: Write>(tracks: &[ProbaTrack], sink: W) -> Result<()> {
    let mut w = writer(sink);
    w.write_record(PROBA_HEADER)?;
    for t in tracks {
        for (step, p) in t.steps.iter().zip(&t.proba) {
            w.write_record([t.series_id.as_str(), &step.to_string(), &p.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_proba_csv<R: Read>(source: R) -> Result<Vec<ProbaTrack>> {
    let mut rdr = reader(source);
    let cols = column_positions(rdr.headers()?, &PROBA_HEADER)?;
    let mut out: Vec<ProbaTrack> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| field(&rec, cols[i]).unwrap_or("");
        let bad = || Error::Parse(format!("proba row {}", line + 1));
        let id = get(0);
        let step: u64 = get(1).parse().map_err(|_| bad())?;
        let p: f64 = get(2)
            .parse::<f64>()
            .ok()
            .filter(|p| (0.0..=1.0).contains(p))
            .ok_or_else(bad)?;
        if out.last().map(|t| t.series_id.as_str()) != Some(id) {
            out.push(ProbaTrack {
                series_id: id.to_string(),
                steps: Vec::new(),
                proba: Vec::new(),
            });
        }
        let t = out.last_mut().expect("just pushed");
        t.steps.push(step);
        t.proba.push(p);
    }
    Ok(out)
}
