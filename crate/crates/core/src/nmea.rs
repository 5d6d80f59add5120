//! NMEA 0183 framing, checksums and GGA/RMC decoding.
//!
//! Only the two sentences that carry position, time and validity are decoded.
//! The talker id (`GP`, `GN`, `GL`, ...) is ignored; dispatch is on the
//! three-letter sentence type. Anything else that frames and checksums
//! correctly comes back as [`Sentence::Unsupported`].

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geo::LatLon;

/// Conventional maximum sentence length, `$` and line terminator included.
pub const DEFAULT_MAX_LEN: usize = 82;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NmeaError {
    #[error("checksum mismatch: computed {computed:02X}, sentence says {stated:02X}")]
    ChecksumMismatch { computed: u8, stated: u8 },
    #[error("malformed field: {0}")]
    MalformedField(&'static str),
    #[error("malformed coordinate {0:?}")]
    MalformedCoordinate(String),
    #[error("not a sentence: {0}")]
    NotASentence(&'static str),
}

impl NmeaError {
    /// Short error name, as printed by the serial monitor.
    pub fn kind(&self) -> &'static str {
        match self {
            NmeaError::ChecksumMismatch { .. } => "ChecksumMismatch",
            NmeaError::MalformedField(_) => "MalformedField",
            NmeaError::MalformedCoordinate(_) => "MalformedCoordinate",
            NmeaError::NotASentence(_) => "NotASentence",
        }
    }
}

/// XOR of every byte between `$` and `*`.
pub fn checksum(payload: &[u8]) -> u8 {
    payload.iter().fold(0, |acc, b| acc ^ b)
}

/// One framed line, without its terminator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSentence {
    text: String,
    checksum_present: bool,
}

impl RawSentence {
    /// Accepts a whole line; a trailing CR/LF is stripped.
    pub fn new(line: &str) -> Result<Self, NmeaError> {
        let text = line.trim_end_matches(['\r', '\n']);
        if !text.starts_with('$') {
            return Err(NmeaError::NotASentence("missing '$'"));
        }
        if !text.bytes().all(|b| (0x20..=0x7e).contains(&b)) {
            return Err(NmeaError::NotASentence("non-printable byte"));
        }
        let stars = text.bytes().filter(|&b| b == b'*').count();
        if stars > 1 {
            return Err(NmeaError::NotASentence("more than one '*'"));
        }
        Ok(Self {
            text: text.to_string(),
            checksum_present: stars == 1,
        })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn checksum_present(&self) -> bool {
        self.checksum_present
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SourceSentence {
    Gga,
    Rmc,
}

/// A decoded fix. `position` is `None` exactly when `fix_quality` is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoPosition {
    pub position: Option<LatLon>,
    /// Seconds since midnight UTC.
    pub utc_time: Option<f64>,
    pub fix_quality: u8,
    pub satellites: Option<u8>,
    pub hdop: Option<f32>,
    pub altitude_m: Option<f32>,
    pub source: SourceSentence,
}

impl GeoPosition {
    /// A quality-1 fix at `pos`, as the simulator's receiver reports it.
    pub fn gps_fix(pos: LatLon, utc_time: f64) -> Self {
        Self {
            position: Some(pos),
            utc_time: Some(utc_time),
            fix_quality: 1,
            satellites: Some(8),
            hdop: Some(0.9),
            altitude_m: Some(0.0),
            source: SourceSentence::Gga,
        }
    }

    /// Usable coordinates, if this is a real fix.
    pub fn fix(&self) -> Option<LatLon> {
        if self.fix_quality >= 1 {
            self.position
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sentence {
    Position(GeoPosition),
    /// Well-formed but not GGA or RMC.
    Unsupported { sentence_type: String },
}

/// `ddmm.mmmm` (latitude) or `dddmm.mmmm` (longitude) to signed degrees.
pub fn to_decimal_degrees(field: &str, hemisphere: char) -> Result<f64, NmeaError> {
    let bad = || NmeaError::MalformedCoordinate(field.to_string());
    let (deg_digits, limit, negative) = match hemisphere {
        'N' => (2, 90.0, false),
        'S' => (2, 90.0, true),
        'E' => (3, 180.0, false),
        'W' => (3, 180.0, true),
        _ => return Err(bad()),
    };
    let (int_part, frac_part) = match field.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (field, None),
    };
    if int_part.len() != deg_digits + 2 || !int_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    if let Some(f) = frac_part {
        if f.is_empty() || !f.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
    }
    let degrees: f64 = int_part[..deg_digits].parse().map_err(|_| bad())?;
    let minutes: f64 = field[deg_digits..].parse().map_err(|_| bad())?;
    if minutes >= 60.0 {
        return Err(bad());
    }
    let value = degrees + minutes / 60.0;
    if value > limit {
        return Err(bad());
    }
    Ok(if negative { -value } else { value })
}

fn parse_time(field: &str) -> Result<Option<f64>, NmeaError> {
    if field.is_empty() {
        return Ok(None);
    }
    let err = NmeaError::MalformedField("utc time");
    if field.len() < 6 || !field.as_bytes()[..6].iter().all(u8::is_ascii_digit) {
        return Err(err);
    }
    let hh: u32 = field[0..2].parse().map_err(|_| err.clone())?;
    let mm: u32 = field[2..4].parse().map_err(|_| err.clone())?;
    let ss: f64 = field[4..].parse().map_err(|_| err.clone())?;
    if hh >= 24 || mm >= 60 || !(0.0..61.0).contains(&ss) {
        return Err(err);
    }
    Ok(Some((hh * 3600 + mm * 60) as f64 + ss))
}

fn parse_opt<T: core::str::FromStr>(
    field: &str,
    name: &'static str,
) -> Result<Option<T>, NmeaError> {
    if field.is_empty() {
        Ok(None)
    } else {
        field.parse().map(Some).map_err(|_| NmeaError::MalformedField(name))
    }
}

fn parse_position(fields: &[&str]) -> Result<LatLon, NmeaError> {
    let hemi = |s: &str, name| {
        let mut chars = s.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Ok(c),
            _ => Err(NmeaError::MalformedField(name)),
        }
    };
    let lat = to_decimal_degrees(fields[0], hemi(fields[1], "latitude hemisphere")?)?;
    let lon = to_decimal_degrees(fields[2], hemi(fields[3], "longitude hemisphere")?)?;
    if matches!(fields[1], "E" | "W") || matches!(fields[3], "N" | "S") {
        return Err(NmeaError::MalformedField("hemisphere"));
    }
    Ok(LatLon::new(lat, lon))
}

fn parse_gga(f: &[&str]) -> Result<GeoPosition, NmeaError> {
    if f.len() != 15 {
        return Err(NmeaError::MalformedField("GGA token count"));
    }
    let utc_time = parse_time(f[1])?;
    let fix_quality: u8 = parse_opt(f[6], "fix quality")?.unwrap_or(0);
    let position = if fix_quality >= 1 {
        Some(parse_position(&f[2..6])?)
    } else {
        None
    };
    let hdop: Option<f32> = parse_opt(f[8], "hdop")?;
    if hdop.is_some_and(|h| !(h >= 0.0) || !h.is_finite()) {
        return Err(NmeaError::MalformedField("hdop"));
    }
    let altitude_m: Option<f32> = parse_opt(f[9], "altitude")?;
    if altitude_m.is_some_and(|a| !a.is_finite()) {
        return Err(NmeaError::MalformedField("altitude"));
    }
    Ok(GeoPosition {
        position,
        utc_time,
        fix_quality,
        satellites: parse_opt(f[7], "satellites")?,
        hdop,
        altitude_m,
        source: SourceSentence::Gga,
    })
}

fn parse_rmc(f: &[&str]) -> Result<GeoPosition, NmeaError> {
    // NMEA 2.3 adds a mode indicator, 4.1 a navigational status.
    if !(12..=14).contains(&f.len()) {
        return Err(NmeaError::MalformedField("RMC token count"));
    }
    let utc_time = parse_time(f[1])?;
    let (fix_quality, position) = match f[2] {
        "A" => (1, Some(parse_position(&f[3..7])?)),
        "V" => (0, None),
        _ => return Err(NmeaError::MalformedField("RMC status")),
    };
    Ok(GeoPosition {
        position,
        utc_time,
        fix_quality,
        satellites: None,
        hdop: None,
        altitude_m: None,
        source: SourceSentence::Rmc,
    })
}

/// Verifies the checksum (when present) and decodes GGA or RMC.
pub fn parse_sentence(raw: &RawSentence) -> Result<Sentence, NmeaError> {
    let body = &raw.text[1..];
    let payload = match body.split_once('*') {
        Some((payload, stated)) => {
            let stated = (stated.len() == 2)
                .then(|| u8::from_str_radix(stated, 16).ok())
                .flatten()
                .ok_or(NmeaError::MalformedField("checksum digits"))?;
            let computed = checksum(payload.as_bytes());
            if computed != stated {
                return Err(NmeaError::ChecksumMismatch { computed, stated });
            }
            payload
        }
        None => body,
    };
    if payload.contains('$') {
        return Err(NmeaError::MalformedField("embedded '$'"));
    }
    let fields: Vec<&str> = payload.split(',').collect();
    let address = fields[0];
    if address.len() < 3 || !address.bytes().all(|b| b.is_ascii_alphanumeric()) {
        return Err(NmeaError::MalformedField("address"));
    }
    // Proprietary sentences ($P...) carry no talker/type split.
    if address.starts_with('P') || address.len() != 5 {
        return Ok(Sentence::Unsupported {
            sentence_type: address.to_string(),
        });
    }
    match &address[2..] {
        "GGA" => parse_gga(&fields).map(Sentence::Position),
        "RMC" => parse_rmc(&fields).map(Sentence::Position),
        other => Ok(Sentence::Unsupported {
            sentence_type: other.to_string(),
        }),
    }
}

/// Frames and parses one text line.
pub fn parse_line(line: &str) -> Result<Sentence, NmeaError> {
    parse_sentence(&RawSentence::new(line)?)
}

fn push_coordinate(out: &mut String, value: f64, deg_digits: usize, pos: char, neg: char) {
    // Work in integer micro-minutes so rounding can never print 60 minutes.
    let micro_min = libm::round(libm::fabs(value) * 60.0 * 1e6) as u64;
    let deg = micro_min / 60_000_000;
    let rem = micro_min % 60_000_000;
    let _ = write!(
        out,
        "{:0width$}{:02}.{:06},{}",
        deg,
        rem / 1_000_000,
        rem % 1_000_000,
        if value < 0.0 { neg } else { pos },
        width = deg_digits
    );
}

/// Builds a checksummed `$GPGGA` sentence (no line terminator) for a fix.
///
/// Positions are written with six decimals of minutes, well inside the
/// 1e-6 degree grid used downstream.
pub fn encode_gga(fix: &GeoPosition) -> String {
    let mut payload = String::from("GPGGA,");
    if let Some(t) = fix.utc_time {
        let cs = libm::round(t * 100.0) as u64 % 8_640_000;
        let s = cs / 100;
        let _ = write!(
            payload,
            "{:02}{:02}{:02}.{:02}",
            s / 3600,
            (s / 60) % 60,
            s % 60,
            cs % 100
        );
    }
    payload.push(',');
    match fix.fix() {
        Some(p) => {
            push_coordinate(&mut payload, p.lat, 2, 'N', 'S');
            payload.push(',');
            push_coordinate(&mut payload, p.lon, 3, 'E', 'W');
        }
        None => payload.push_str(",,,"),
    }
    let _ = write!(payload, ",{},", fix.fix_quality);
    if let Some(n) = fix.satellites {
        let _ = write!(payload, "{n:02}");
    }
    payload.push(',');
    if let Some(h) = fix.hdop {
        let _ = write!(payload, "{h:.1}");
    }
    payload.push(',');
    if let Some(a) = fix.altitude_m {
        let _ = write!(payload, "{a:.1}");
    }
    payload.push_str(",M,0.0,M,,");
    let mut out = String::with_capacity(payload.len() + 4);
    let _ = write!(out, "${}*{:02X}", payload, checksum(payload.as_bytes()));
    out
}

/// Incremental framer for a byte stream of sentences.
///
/// Bytes outside a frame are dropped; a frame runs from `$` to the first CR
/// or LF. Frames longer than `max_len` are dropped whole and counted.
#[derive(Debug, Clone)]
pub struct FrameBuffer {
    pending: Vec<u8>,
    max_len: usize,
    in_frame: bool,
    overflows: u64,
    rejected: u64,
}

impl Default for FrameBuffer {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_LEN)
    }
}

impl FrameBuffer {
    pub fn new(max_len: usize) -> Self {
        Self {
            pending: Vec::with_capacity(max_len),
            max_len: max_len.max(1),
            in_frame: false,
            overflows: 0,
            rejected: 0,
        }
    }

    /// Frames dropped for exceeding `max_len`.
    pub fn overflow_count(&self) -> u64 {
        self.overflows
    }

    /// Frames dropped because they were not valid sentence text.
    pub fn rejected_count(&self) -> u64 {
        self.rejected
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// Returns every frame completed by `chunk`, in arrival order.
    pub fn feed_bytes(&mut self, chunk: &[u8]) -> Vec<RawSentence> {
        let mut out = Vec::new();
        for &b in chunk {
            match b {
                b'$' => {
                    if self.in_frame {
                        self.rejected += 1;
                    }
                    self.pending.clear();
                    self.pending.push(b);
                    self.in_frame = true;
                }
                b'\r' | b'\n' => {
                    if self.in_frame {
                        self.in_frame = false;
                        let frame = core::str::from_utf8(&self.pending)
                            .ok()
                            .and_then(|s| RawSentence::new(s).ok());
                        match frame {
                            Some(s) => out.push(s),
                            None => self.rejected += 1,
                        }
                        self.pending.clear();
                    }
                }
                _ if self.in_frame => {
                    if self.pending.len() >= self.max_len {
                        self.overflows += 1;
                        self.pending.clear();
                        self.in_frame = false;
                    } else {
                        self.pending.push(b);
                    }
                }
                _ => {}
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CANONICAL: &str = "$GPGGA,123519,4807.038,N,01131.000,E,1,08,0.9,545.4,M,46.9,M,,*47";

    #[test]
    fn checksum_examples() {
        assert_eq!(checksum(b""), 0x00);
        // Frozen from a byte-wise XOR computed outside this crate.
        assert_eq!(
            checksum(b"GPGGA,123519,4807.038,N,01131.000,E,1,08,0.9,545.4,M,46.9,M,,"),
            0x47
        );
        let p = b"GPRMC,1";
        let doubled: Vec<u8> = p.iter().chain(p.iter()).copied().collect();
        assert_eq!(checksum(&doubled), 0);
    }

    #[test]
    fn decimal_degrees() {
        assert_eq!(to_decimal_degrees("0000.000", 'N').unwrap(), 0.0);
        assert!((to_decimal_degrees("4807.038", 'N').unwrap() - 48.1173).abs() < 1e-9);
        assert!((to_decimal_degrees("01131.000", 'E').unwrap() - 11.516_667).abs() < 1e-6);
        assert!((to_decimal_degrees("4807.038", 'S').unwrap() + 48.1173).abs() < 1e-9);
        assert!((to_decimal_degrees("01131.000", 'W').unwrap() + 11.516_667).abs() < 1e-6);
    }

    #[test]
    fn decimal_degrees_rejects() {
        for (f, h) in [
            ("4860.000", 'N'),
            ("48x7.038", 'N'),
            ("807.038", 'N'),
            ("1131.000", 'E'),
            ("4807.", 'N'),
            ("9100.000", 'N'),
            ("4807.038", 'Q'),
            ("", 'N'),
        ] {
            assert!(
                matches!(to_decimal_degrees(f, h), Err(NmeaError::MalformedCoordinate(_))),
                "{f} {h}"
            );
        }
    }

    #[test]
    fn canonical_gga() {
        let Sentence::Position(p) = parse_line(CANONICAL).unwrap() else {
            panic!("expected a position");
        };
        let ll = p.fix().unwrap();
        assert!((ll.lat - 48.1173).abs() < 1e-6);
        assert!((ll.lon - 11.516_667).abs() < 1e-6);
        assert_eq!(p.fix_quality, 1);
        assert_eq!(p.satellites, Some(8));
        assert_eq!(p.hdop, Some(0.9));
        assert_eq!(p.altitude_m, Some(545.4));
        assert_eq!(p.utc_time, Some(12.0 * 3600.0 + 35.0 * 60.0 + 19.0));
    }

    #[test]
    fn altered_checksum_digit() {
        let bad = CANONICAL.replace("*47", "*48");
        assert!(matches!(
            parse_line(&bad),
            Err(NmeaError::ChecksumMismatch { computed: 0x47, stated: 0x48 })
        ));
    }

    #[test]
    fn unsupported_types() {
        let payload = "GPGSV,3,1,11,03,03,111,00,04,15,270,00,06,01,010,00,13,06,292,00";
        let line = alloc::format!("${payload}*{:02X}", checksum(payload.as_bytes()));
        assert_eq!(
            parse_line(&line).unwrap(),
            Sentence::Unsupported { sentence_type: "GSV".into() }
        );
        assert!(matches!(parse_line("$PUBX,00"), Ok(Sentence::Unsupported { .. })));
    }

    #[test]
    fn checksum_is_optional() {
        let line = CANONICAL.trim_end_matches("*47");
        let raw = RawSentence::new(line).unwrap();
        assert!(!raw.checksum_present());
        assert!(matches!(parse_sentence(&raw), Ok(Sentence::Position(_))));
    }

    #[test]
    fn rmc_active_and_void() {
        let a = "$GPRMC,123519,A,4807.038,N,01131.000,E,022.4,084.4,230394,003.1,W*6A";
        let Sentence::Position(p) = parse_line(a).unwrap() else { panic!() };
        assert_eq!(p.fix_quality, 1);
        assert_eq!(p.source, SourceSentence::Rmc);
        assert!((p.fix().unwrap().lat - 48.1173).abs() < 1e-9);

        let payload = "GPRMC,123519,V,,,,,,,230394,,";
        let v = alloc::format!("${payload}*{:02X}", checksum(payload.as_bytes()));
        let Sentence::Position(p) = parse_line(&v).unwrap() else { panic!() };
        assert_eq!(p.fix_quality, 0);
        assert_eq!(p.fix(), None);
    }

    #[test]
    fn talker_is_ignored() {
        let payload = "GNGGA,123519,4807.038,N,01131.000,E,1,08,0.9,545.4,M,46.9,M,,";
        let line = alloc::format!("${payload}*{:02X}", checksum(payload.as_bytes()));
        assert!(matches!(parse_line(&line), Ok(Sentence::Position(_))));
    }

    #[test]
    fn malformed_fields() {
        assert!(matches!(
            parse_line("$GPGGA,123519,4807.038,N"),
            Err(NmeaError::MalformedField(_))
        ));
        assert!(matches!(
            parse_line("$GPGGA,123519,4807.038,N,01131.000,E,1,xx,0.9,545.4,M,46.9,M,,"),
            Err(NmeaError::MalformedField(_))
        ));
        assert!(matches!(parse_line("$GPGGA*4"), Err(NmeaError::MalformedField(_))));
        assert!(matches!(parse_line("GPGGA"), Err(NmeaError::NotASentence(_))));
        assert!(matches!(parse_line("$A*B*C"), Err(NmeaError::NotASentence(_))));
    }

    #[test]
    fn gga_without_fix_has_no_position() {
        let payload = "GPGGA,000001,,,,,0,00,,,M,,M,,";
        let line = alloc::format!("${payload}*{:02X}", checksum(payload.as_bytes()));
        let Sentence::Position(p) = parse_line(&line).unwrap() else { panic!() };
        assert_eq!(p.fix_quality, 0);
        assert!(p.position.is_none());
    }

    #[test]
    fn encode_then_parse() {
        let fix = GeoPosition::gps_fix(LatLon::new(-33.856_784, 151.215_297), 45_296.5);
        let line = encode_gga(&fix);
        let Sentence::Position(p) = parse_line(&line).unwrap() else { panic!() };
        let ll = p.fix().unwrap();
        assert!((ll.lat + 33.856_784).abs() < 1e-6);
        assert!((ll.lon - 151.215_297).abs() < 1e-6);
        assert_eq!(p.utc_time, Some(45_296.5));
    }

    #[test]
    fn framing_two_in_one_chunk() {
        let mut fb = FrameBuffer::default();
        let data = alloc::format!("junk{CANONICAL}\r\n{CANONICAL}\n");
        let out = fb.feed_bytes(data.as_bytes());
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].text(), CANONICAL);
        assert_eq!(fb.pending_len(), 0);
    }

    #[test]
    fn framing_split_across_three_chunks() {
        let mut fb = FrameBuffer::default();
        let line = alloc::format!("{CANONICAL}\r\n");
        let b = line.as_bytes();
        assert!(fb.feed_bytes(&b[..10]).is_empty());
        assert!(fb.feed_bytes(&b[10..40]).is_empty());
        let out = fb.feed_bytes(&b[40..]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].text(), CANONICAL);
    }

    #[test]
    fn framing_overflow() {
        let mut fb = FrameBuffer::default();
        let mut data = alloc::vec![b'$'];
        data.extend(core::iter::repeat(b'A').take(199));
        assert!(fb.feed_bytes(&data).is_empty());
        assert_eq!(fb.overflow_count(), 1);
        assert!(fb.pending_len() <= DEFAULT_MAX_LEN);
        // The tail of the oversized frame is not mistaken for a sentence.
        assert!(fb.feed_bytes(b"\r\n").is_empty());
        let ok = fb.feed_bytes(alloc::format!("{CANONICAL}\r\n").as_bytes());
        assert_eq!(ok.len(), 1);
    }
}
