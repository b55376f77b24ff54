//! Space-time diagrams: position along the track against time, one
//! worldline per vehicle coloured by speed, obstacles as horizontal lines
//! and collisions as dots.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::artifacts::{EventRecord, TraceFile};
use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Worldline {
    pub vehicle_id: usize,
    pub agent: bool,
    /// `(time s, unwrapped arc position m, speed m/s)`.
    pub points: Vec<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleLine {
    pub vehicle_id: usize,
    pub arc_m: f64,
    pub t0: f64,
    pub t1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub vehicle_id: usize,
    pub time_s: f64,
    pub arc_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTime {
    pub episode: usize,
    pub worldlines: Vec<Worldline>,
    pub obstacles: Vec<ObstacleLine>,
    pub collisions: Vec<Marker>,
}

/// The episode with the most trace rows (the first of equals).
pub fn longest_episode(trace: &TraceFile) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for r in &trace.rows {
        *counts.entry(r.episode).or_default() += 1;
    }
    counts.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&e, _)| e)
}

/// Arc positions made continuous across laps.
fn unwrap(arcs: impl Iterator<Item = f64>, lap: f64) -> Vec<f64> {
    let mut laps = 0.0;
    let mut prev: Option<f64> = None;
    arcs.map(|s| {
        if let Some(p) = prev {
            if p - s > 0.5 * lap {
                laps += 1.0;
            } else if s - p > 0.5 * lap {
                laps -= 1.0;
            }
        }
        prev = Some(s);
        s + laps * lap
    })
    .collect()
}

pub fn space_time(trace: &TraceFile, events: &[EventRecord], episode: Option<usize>) -> Result<SpaceTime, CliError> {
    let episode = match episode.or_else(|| longest_episode(trace)) {
        Some(e) => e,
        None => return Ok(SpaceTime { episode: 0, worldlines: Vec::new(), obstacles: Vec::new(), collisions: Vec::new() }),
    };
    let mut by_vehicle: BTreeMap<usize, Vec<&crate::artifacts::TraceRecord>> = BTreeMap::new();
    for r in trace.rows.iter().filter(|r| r.episode == episode) {
        by_vehicle.entry(r.vehicle_id).or_default().push(r);
    }
    if by_vehicle.is_empty() {
        return Err(CliError::Input(format!("trace has no rows for episode {episode}")));
    }
    let mut out = SpaceTime { episode, worldlines: Vec::new(), obstacles: Vec::new(), collisions: Vec::new() };
    // unwrapped position of every vehicle at every tick, for the markers
    let mut position: HashMap<usize, Vec<(u64, f64)>> = HashMap::new();
    for (&id, rows) in &mut by_vehicle {
        rows.sort_by_key(|r| r.tick);
        let s = unwrap(rows.iter().map(|r| r.arc_m), trace.lap_length_m);
        position.insert(id, rows.iter().map(|r| r.tick).zip(s.iter().copied()).collect());
        if rows[0].role == "obstacle" {
            out.obstacles.push(ObstacleLine { vehicle_id: id, arc_m: rows[0].arc_m, t0: rows[0].time_s, t1: rows[rows.len() - 1].time_s });
        } else {
            let agent = matches!(rows[0].role.as_str(), "agent" | "plant");
            let points = rows.iter().zip(&s).map(|(r, &s)| (r.time_s, s, r.speed)).collect();
            out.worldlines.push(Worldline { vehicle_id: id, agent, points });
        }
    }
    for e in events.iter().filter(|e| e.episode == episode && e.event == "collision") {
        let arc = position.get(&e.vehicle_id).and_then(|p| {
            // the row at the event's tick, or the latest before it
            let i = p.partition_point(|&(t, _)| t <= e.tick);
            p.get(i.saturating_sub(1)).map(|&(_, s)| s)
        });
        let arc_m = arc.ok_or_else(|| CliError::Input(format!("collision of vehicle {} has no trace rows", e.vehicle_id)))?;
        out.collisions.push(Marker { vehicle_id: e.vehicle_id, time_s: e.time_s, arc_m });
    }
    Ok(out)
}

const WIDTH: f64 = 1000.0;
const HEIGHT: f64 = 640.0;
const MARGIN: f64 = 60.0;
const SPEED_BINS: usize = 8;

/// Viridis-like colour for `u` in `[0, 1]`.
fn colour(u: f64) -> String {
    const STOPS: [(f64, f64, f64); 5] =
        [(68.0, 1.0, 84.0), (59.0, 82.0, 139.0), (33.0, 145.0, 140.0), (94.0, 201.0, 98.0), (253.0, 231.0, 37.0)];
    let x = u.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |p: f64, q: f64| (p + f * (q - p)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the diagram. Vehicles are `<g class="vehicle">` groups of
/// polylines (split where the speed colour changes), obstacles are
/// `<line class="obstacle">` and collisions `<circle class="collision">`.
pub fn render_svg(st: &SpaceTime, provenance: &str) -> String {
    let t_max = st
        .worldlines
        .iter()
        .flat_map(|w| w.points.iter().map(|p| p.0))
        .chain(st.obstacles.iter().map(|o| o.t1))
        .fold(0.0_f64, f64::max)
        .max(1e-9);
    let s_min = st
        .worldlines
        .iter()
        .flat_map(|w| w.points.iter().map(|p| p.1))
        .chain(st.obstacles.iter().map(|o| o.arc_m))
        .fold(0.0_f64, f64::min);
    let s_max = st
        .worldlines
        .iter()
        .flat_map(|w| w.points.iter().map(|p| p.1))
        .chain(st.obstacles.iter().map(|o| o.arc_m))
        .fold(0.0_f64, f64::max)
        .max(s_min + 1e-9);
    let v_max = st.worldlines.iter().flat_map(|w| w.points.iter().map(|p| p.2)).fold(0.0_f64, f64::max).max(1e-9);
    let px = |t: f64| MARGIN + t / t_max * (WIDTH - 2.0 * MARGIN);
    let py = |s: f64| HEIGHT - MARGIN - (s - s_min) / (s_max - s_min) * (HEIGHT - 2.0 * MARGIN);
    let bin = |v: f64| ((v / v_max * SPEED_BINS as f64) as usize).min(SPEED_BINS - 1);
    let bin_colour = |b: usize| colour((b as f64 + 0.5) / SPEED_BINS as f64);

    let mut svg = String::new();
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#).unwrap();
    writeln!(svg, "<metadata>{}</metadata>", escape(provenance)).unwrap();
    writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    // axes
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    writeln!(svg, r#"<path class="axes" d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#).unwrap();
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">time (s), 0 to {t_max:.1}</text>"#, WIDTH / 2.0, HEIGHT - 20.0).unwrap();
    writeln!(
        svg,
        r#"<text x="20" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 20 {})">track position (m), {s_min:.1} to {s_max:.1}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    )
    .unwrap();

    for o in &st.obstacles {
        writeln!(
            svg,
            r##"<line class="obstacle" data-id="{}" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#444" stroke-width="2"/>"##,
            o.vehicle_id,
            px(o.t0),
            py(o.arc_m),
            px(o.t1),
            py(o.arc_m)
        )
        .unwrap();
    }
    // background first so the agent is drawn on top
    let mut order: Vec<&Worldline> = st.worldlines.iter().collect();
    order.sort_by_key(|w| w.agent);
    for w in order {
        let width = if w.agent { 3.0 } else { 1.0 };
        writeln!(svg, r#"<g class="vehicle" data-id="{}" stroke-width="{width}" fill="none">"#, w.vehicle_id).unwrap();
        let mut start = 0;
        while start < w.points.len() {
            let b = bin(w.points[start].2);
            let mut end = start + 1;
            while end < w.points.len() && bin(w.points[end].2) == b {
                end += 1;
            }
            // include the next point so consecutive pieces join up
            let last = end.min(w.points.len() - 1);
            let pts: Vec<String> = w.points[start..=last].iter().map(|p| format!("{:.2},{:.2}", px(p.0), py(p.1))).collect();
            writeln!(svg, r#"<polyline points="{}" stroke="{}"/>"#, pts.join(" "), bin_colour(b)).unwrap();
            start = end;
        }
        writeln!(svg, "</g>").unwrap();
    }
    for m in &st.collisions {
        writeln!(svg, r#"<circle class="collision" data-id="{}" cx="{:.2}" cy="{:.2}" r="4" fill="red"/>"#, m.vehicle_id, px(m.time_s), py(m.arc_m))
            .unwrap();
    }
    // speed colour bar
    for b in 0..SPEED_BINS {
        let h = (HEIGHT - 2.0 * MARGIN) / SPEED_BINS as f64;
        writeln!(
            svg,
            r#"<rect class="colorbar" x="{}" y="{:.2}" width="12" height="{:.2}" fill="{}"/>"#,
            WIDTH - MARGIN + 15.0,
            HEIGHT - MARGIN - (b + 1) as f64 * h,
            h,
            bin_colour(b)
        )
        .unwrap();
    }
    writeln!(svg, r#"<text x="{}" y="{}" font-size="12">{v_max:.2} m/s</text>"#, WIDTH - MARGIN + 5.0, MARGIN - 8.0).unwrap();
    svg.push_str("</svg>\n");
    svg
}

/// Number of `class="{class}"` elements in an SVG document.
pub fn count_class(svg: &str, class: &str) -> usize {
    svg.matches(&format!(r#"class="{class}""#)).count()
}
