//! Line-by-line decoding of NMEA captures, like a serial monitor.

use std::fmt::Write as _;

use corridor_core::nmea::{parse_line, Sentence};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseSummary {
    pub lines: Vec<String>,
    pub ok: usize,
    pub rejected: usize,
    pub skipped: usize,
}

impl ParseSummary {
    pub fn footer(&self) -> String {
        let mut s = format!("{} ok, {} rejected", self.ok, self.rejected);
        if self.skipped > 0 {
            let _ = write!(s, ", {} skipped", self.skipped);
        }
        s
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for l in &self.lines {
            s.push_str(l);
            s.push('\n');
        }
        s.push_str(&self.footer());
        s.push('\n');
        s
    }
}

fn hhmmss(t: f64) -> String {
    let whole = t.floor() as u64;
    let (h, m, sec) = (whole / 3600, whole / 60 % 60, whole % 60);
    format!("{h:02}:{m:02}:{sec:02}.{:02}", ((t - t.floor()) * 100.0).round() as u64)
}

/// Blank lines are ignored.
pub fn parse_text(text: &str) -> ParseSummary {
    let mut out = ParseSummary::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        match parse_line(line) {
            Ok(Sentence::Position(p)) => {
                out.ok += 1;
                let time = p.utc_time.map_or_else(|| "-".to_string(), hhmmss);
                let kind = format!("{:?}", p.source).to_uppercase();
                let l = match p.fix() {
                    Some(ll) => format!("{n}: {kind} lat {:.6} lon {:.6} time {time} quality {}", ll.lat, ll.lon, p.fix_quality),
                    None => format!("{n}: {kind} no fix time {time}"),
                };
                out.lines.push(l);
            }
            Ok(Sentence::Unsupported { sentence_type }) => {
                out.skipped += 1;
                out.lines.push(format!("{n}: skipped {sentence_type}"));
            }
            Err(e) => {
                out.rejected += 1;
                out.lines.push(format!("{n}: {}", e.kind()));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const GGA: &str = "$GPGGA,123519,4807.038,N,01131.000,E,1,08,0.9,545.4,M,46.9,M,,*47";

    #[test]
    fn three_valid_lines() {
        let text = format!("{GGA}\n{GGA}\r\n{GGA}\n");
        let s = parse_text(&text);
        assert_eq!(s.lines.len(), 3);
        assert!(s.lines[0].contains("lat 48.117300 lon 11.516667 time 12:35:19.00"), "{}", s.lines[0]);
        assert_eq!(s.footer(), "3 ok, 0 rejected");
    }

    #[test]
    fn corrupted_checksum_counted() {
        let bad = GGA.replace("*47", "*48");
        let s = parse_text(&format!("{GGA}\n{bad}\n"));
        assert_eq!(s.lines[1], "2: ChecksumMismatch");
        assert_eq!(s.footer(), "1 ok, 1 rejected");
    }

    #[test]
    fn empty_input() {
        assert_eq!(parse_text("").render(), "0 ok, 0 rejected\n");
    }
}
