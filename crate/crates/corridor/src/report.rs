//! Run reports: a fixed-width table for people, JSON for tools, and the
//! event log as JSON lines.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use corridor_core::control_room::EventRecord;
use corridor_core::sim::{RunMetrics, RunOutput};

pub fn table(m: &RunMetrics) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "mode {}  seed {}  end {:.1} s  {}", m.mode, m.seed, m.end_s, if m.completed { "completed" } else { "HORIZON REACHED" });
    let _ = writeln!(s, "{:<10} {:>8} {:>12} {:>12} {:>6} {:>10}", "ambulance", "hospital", "travel_s", "free_flow_s", "stops", "wait_s");
    for a in &m.ambulances {
        let travel = a.travel_time_s.map_or_else(|| "-".to_string(), |t| format!("{t:.1}"));
        let wait = a.waits_s.values().sum::<f64>() + 0.0;
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>12} {:>12.1} {:>6} {:>10.1}",
            a.id.as_str(),
            a.hospital.to_string(),
            travel,
            a.free_flow_s,
            a.stops_count,
            wait
        );
    }
    let c = m.messages;
    let _ = writeln!(
        s,
        "messages sent {} delivered {} lost {} dropped {}  preempts {} releases {}",
        c.sent, c.delivered, c.lost, c.dropped_busy, m.preempt_commands, m.release_commands
    );
    s
}

/// One line per ambulance present in both runs.
pub fn comparison(base: &RunMetrics, other: &RunMetrics) -> String {
    let mut s = String::new();
    for a in &base.ambulances {
        let Some(b) = other.ambulance(a.id.as_str()) else { continue };
        match (a.travel_time_s, b.travel_time_s) {
            (Some(x), Some(y)) => {
                let _ = writeln!(
                    s,
                    "{}: {} {:.1} s -> {} {:.1} s (delta {:+.1} s)",
                    a.id.as_str(),
                    base.mode,
                    x,
                    other.mode,
                    y,
                    y - x
                );
            }
            _ => {
                let _ = writeln!(s, "{}: {} vs {}: not comparable, an ambulance did not arrive", a.id.as_str(), base.mode, other.mode);
            }
        }
    }
    s
}

pub fn metrics_json(m: &RunMetrics) -> String {
    serde_json::to_string_pretty(m).expect("metrics serialize") + "\n"
}

pub fn write_events<W: Write>(mut w: W, events: &[EventRecord]) -> io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn events_jsonl(events: &[EventRecord]) -> String {
    let mut buf = Vec::new();
    write_events(&mut buf, events).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

pub fn report_path(dir: &Path, m: &RunMetrics) -> PathBuf {
    dir.join(format!("report-{}.json", m.mode))
}

pub fn events_path(dir: &Path, m: &RunMetrics) -> PathBuf {
    dir.join(format!("events-{}.jsonl", m.mode))
}

/// Writes `report-<MODE>.json` and `events-<MODE>.jsonl` into `dir`.
pub fn write_run(dir: &Path, out: &RunOutput) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(report_path(dir, &out.metrics), metrics_json(&out.metrics))?;
    let f = std::fs::File::create(events_path(dir, &out.metrics))?;
    write_events(io::BufWriter::new(f), &out.events)
}
