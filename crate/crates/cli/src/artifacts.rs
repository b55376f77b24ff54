//! CSV artifacts. Every file starts with `#` comment lines: the provenance
//! line (code version and config hash) first, then file-specific keys.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use mixedlane::env::Recording;
use mixedlane::train::{EpisodeReport, MetricsRow, SignTest, METRICS_CSV_HEADER};
use serde::{Deserialize, Serialize};

use crate::CliError;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let f = File::create(path).map_err(|e| CliError::Run(format!("cannot create {}: {e}", path.display())))?;
    Ok(BufWriter::new(f))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

pub fn write_metrics(path: &Path, provenance: &str, rows: &[MetricsRow]) -> Result<(), CliError> {
    let mut w = create(path)?;
    writeln!(w, "# {provenance}")?;
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct MetricsRecord {
    pub frame: u64,
    pub reward: f64,
    pub collision: u8,
    pub window_cpm: f64,
    pub window_reward: f64,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, CliError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub episode: usize,
    pub tick: u64,
    pub time_s: f64,
    pub vehicle_id: usize,
    pub role: String,
    pub lane: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub arc_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub episode: usize,
    pub tick: u64,
    pub time_s: f64,
    pub vehicle_id: usize,
    pub event: String,
    pub x: f64,
    pub y: f64,
    pub other_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFile {
    pub provenance: Option<String>,
    /// Length of the lane `arc_m` is measured along.
    pub lap_length_m: f64,
    pub rows: Vec<TraceRecord>,
}

/// Splits a recording into episodes. Ticks restart at every reset, so a new
/// episode begins whenever the agent's tick fails to advance. Events are
/// assigned by counting reset events, offset by one if the recording began
/// before the first reset.
pub fn episodes(rec: &Recording) -> (Vec<usize>, Vec<usize>) {
    let mut trace_ep = Vec::with_capacity(rec.trace.len());
    let mut ep: Option<usize> = None;
    let mut last_tick = 0;
    for row in &rec.trace {
        if row.vehicle_id == 0 {
            ep = match ep {
                None => Some(0),
                Some(e) if row.tick <= last_tick => Some(e + 1),
                same => same,
            };
            last_tick = row.tick;
        }
        trace_ep.push(ep.unwrap_or(0));
    }
    let trace_episodes = ep.map_or(0, |e| e + 1);
    let resets = rec.events.iter().filter(|e| e.event.as_str() == "reset").count();
    let offset = trace_episodes.saturating_sub(resets);
    let mut seen = 0;
    let event_ep = rec
        .events
        .iter()
        .map(|e| {
            seen += usize::from(e.event.as_str() == "reset");
            (offset + seen).saturating_sub(1)
        })
        .collect();
    (trace_ep, event_ep)
}

pub fn write_recording(trace_path: &Path, events_path: &Path, provenance: &str, rec: &Recording, dt: f64, lap_length_m: f64) -> Result<(), CliError> {
    let (trace_ep, event_ep) = episodes(rec);

    let mut w = create(trace_path)?;
    writeln!(w, "# {provenance}")?;
    writeln!(w, "# lap_length_m {lap_length_m}")?;
    writeln!(w, "# dt_s {dt}")?;
    let mut c = csv::Writer::from_writer(w);
    for (row, &episode) in rec.trace.iter().zip(&trace_ep) {
        c.serialize(TraceRecord {
            episode,
            tick: row.tick,
            time_s: row.tick as f64 * dt,
            vehicle_id: row.vehicle_id,
            role: row.role.as_str().to_string(),
            lane: row.lane,
            x: row.x,
            y: row.y,
            heading: row.heading,
            speed: row.speed,
            arc_m: row.arc_m,
        })
        .map_err(csv_err(trace_path))?;
    }
    c.flush()?;

    let mut w = create(events_path)?;
    writeln!(w, "# {provenance}")?;
    let mut c = csv::Writer::from_writer(w);
    for (e, &episode) in rec.events.iter().zip(&event_ep) {
        c.serialize(EventRecord {
            episode,
            tick: e.tick,
            time_s: e.tick as f64 * dt,
            vehicle_id: e.vehicle_id,
            event: e.event.as_str().to_string(),
            x: e.x,
            y: e.y,
            other_id: e.other_id,
        })
        .map_err(csv_err(events_path))?;
    }
    c.flush()?;
    Ok(())
}

/// `# key value` comment lines at the top of a file.
fn header_comments(path: &Path) -> Result<Vec<String>, CliError> {
    let f = File::open(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        match line.strip_prefix('#') {
            Some(rest) => out.push(rest.trim().to_string()),
            None => break,
        }
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> Result<TraceFile, CliError> {
    let comments = header_comments(path)?;
    let provenance = comments.iter().find(|c| c.starts_with("mixedlane ")).cloned();
    let lap_length_m = comments
        .iter()
        .find_map(|c| c.strip_prefix("lap_length_m "))
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|l| *l > 0.0)
        .ok_or_else(|| CliError::Input(format!("{}: missing `# lap_length_m` header", path.display())))?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(csv_err(path))?;
    let rows = r.deserialize().collect::<Result<Vec<TraceRecord>, _>>().map_err(csv_err(path))?;
    Ok(TraceFile { provenance, lap_length_m, rows })
}

pub fn read_events(path: &Path) -> Result<Vec<EventRecord>, CliError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<Vec<EventRecord>, _>>().map_err(csv_err(path))
}

/// Per-scenario outcomes of two checkpoints on common seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub before: Vec<EpisodeReport>,
    pub after: Vec<EpisodeReport>,
    pub collisions: SignTest,
    pub reward: SignTest,
}

impl EvalReport {
    pub fn median_collisions(&self) -> (f64, f64) {
        (median(self.before.iter().map(|r| r.collisions as f64)), median(self.after.iter().map(|r| r.collisions as f64)))
    }

    pub fn median_reward(&self) -> (f64, f64) {
        (median(self.before.iter().map(|r| r.total_reward)), median(self.after.iter().map(|r| r.total_reward)))
    }
}

pub fn median(values: impl Iterator<Item = f64>) -> f64 {
    use statrs::statistics::{Data, Median};
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        f64::NAN
    } else {
        Data::new(v).median()
    }
}

pub const EVAL_CSV_HEADER: &str = "scenario,seed,collisions_before,reward_before,frames_before,collisions_after,reward_after,frames_after";

pub fn write_eval(path: &Path, summary_path: &Path, provenance: &str, report: &EvalReport) -> Result<(), CliError> {
    let mut w = create(path)?;
    writeln!(w, "# {provenance}")?;
    writeln!(w, "{EVAL_CSV_HEADER}")?;
    for (i, (b, a)) in report.before.iter().zip(&report.after).enumerate() {
        writeln!(w, "{i},{},{},{},{},{},{},{}", b.seed, b.collisions, b.total_reward, b.frames, a.collisions, a.total_reward, a.frames)?;
    }
    w.flush()?;

    let mut w = create(summary_path)?;
    writeln!(w, "# {provenance}")?;
    writeln!(w, "statistic,value")?;
    writeln!(w, "scenarios,{}", report.before.len())?;
    if !report.before.is_empty() {
        let (cb, ca) = report.median_collisions();
        let (rb, ra) = report.median_reward();
        for (k, v) in [("median_collisions_before", cb), ("median_collisions_after", ca), ("median_reward_before", rb), ("median_reward_after", ra)] {
            writeln!(w, "{k},{v}")?;
        }
        for (name, t) in [("collisions", &report.collisions), ("reward", &report.reward)] {
            writeln!(w, "{name}_improved,{}", t.improved)?;
            writeln!(w, "{name}_worsened,{}", t.worsened)?;
            writeln!(w, "{name}_ties,{}", t.ties)?;
            writeln!(w, "{name}_sign_test_p,{}", t.p_value)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct EvalRecord {
    pub scenario: usize,
    pub seed: u64,
    pub collisions_before: u32,
    pub reward_before: f64,
    pub frames_before: u64,
    pub collisions_after: u32,
    pub reward_after: f64,
    pub frames_after: u64,
}

pub fn read_eval(path: &Path) -> Result<Vec<EvalRecord>, CliError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err(path))
}
