//! Ambulance telemetry unit.
//!
//! One loop iteration per parse window:
//!
//! 1. clear `new_data`;
//! 2. read whatever the GPS link delivered during the window;
//! 3. if a valid fix was decoded, set `new_data`;
//! 4. if `new_data`, build the maps link and text it to the control room and
//!    the hospital.
//!
//! The latest fix in a window wins. Nothing is queued on the device: if the
//! modem is still transmitting the previous window's messages, this window's
//! messages are dropped and counted.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::geo::{round6, LatLon};
use crate::ids::{AmbulanceId, SmsAddress};
use crate::modem::{Modem, Transcript, CTRL_Z};
use crate::nmea::{self, FrameBuffer, GeoPosition, Sentence};
use crate::time::{SimTime, UtcSeconds};

pub const MAPS_PREFIX: &str = "https://maps.google.com/maps?q=";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DeviceError {
    #[error("no position fix")]
    NoFix,
    #[error("modem busy; {dropped} message(s) dropped")]
    ModemBusy { dropped: u32 },
    #[error("invalid device config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SendMode {
    /// One message per `send_interval` while fixes keep arriving.
    #[default]
    Continuous,
    /// Only the first fix is sent; the receiver treats it as a live link.
    SingleShot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub ambulance_id: AmbulanceId,
    pub parse_window: Duration,
    pub send_interval: Duration,
    pub send_mode: SendMode,
    pub control_room_number: SmsAddress,
    pub hospital_number: SmsAddress,
    pub serial_link_gps: String,
    pub serial_link_modem: String,
}

impl DeviceConfig {
    pub fn new(
        ambulance_id: AmbulanceId,
        control_room_number: SmsAddress,
        hospital_number: SmsAddress,
    ) -> Self {
        Self {
            ambulance_id,
            parse_window: Duration::from_secs(1),
            send_interval: Duration::from_secs(1),
            send_mode: SendMode::Continuous,
            control_room_number,
            hospital_number,
            // Named after the wiring: GPS TX on pin 0, modem on pins 7/8.
            serial_link_gps: "gps:d0".to_string(),
            serial_link_modem: "gsm:d7-d8".to_string(),
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.parse_window.is_zero() {
            return Err(DeviceError::InvalidConfig("parse_window must be positive"));
        }
        if self.send_interval < self.parse_window {
            return Err(DeviceError::InvalidConfig("send_interval shorter than parse_window"));
        }
        if self.serial_link_gps == self.serial_link_modem {
            return Err(DeviceError::InvalidConfig("serial links must differ"));
        }
        Ok(())
    }

    pub fn destinations(&self) -> [&SmsAddress; 2] {
        [&self.control_room_number, &self.hospital_number]
    }
}

/// A decoded fix and when its last byte arrived.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedFix {
    pub fix: GeoPosition,
    pub received_at: SimTime,
}

#[derive(Debug, Clone, Default)]
pub struct DeviceState {
    pub new_data: bool,
    pub last_fix: Option<TimedFix>,
    pub last_send_time: Option<SimTime>,
    pub messages_sent: u64,
    pub messages_dropped: u64,
    pub sentences_rejected: u64,
    framer: FrameBuffer,
}

/// Bytes read from a serial link, stamped with their arrival time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimedChunk {
    pub at: SimTime,
    pub bytes: Vec<u8>,
}

/// `https://maps.google.com/maps?q=<lat>,<lon>` at six decimals.
pub fn make_maps_link(fix: &GeoPosition) -> Result<String, DeviceError> {
    let p = fix.fix().ok_or(DeviceError::NoFix)?;
    Ok(maps_link(p))
}

pub fn maps_link(p: LatLon) -> String {
    let mut s = String::with_capacity(MAPS_PREFIX.len() + 24);
    let _ = write!(s, "{}{:.6},{:.6}", MAPS_PREFIX, round6(p.lat), round6(p.lon));
    s
}

fn parse_coord(s: &str) -> Option<f64> {
    let digits = s.strip_prefix('-').unwrap_or(s);
    let (int, frac) = digits.split_once('.')?;
    let ok = !int.is_empty()
        && frac.len() == 6
        && int.bytes().all(|b| b.is_ascii_digit())
        && frac.bytes().all(|b| b.is_ascii_digit());
    if !ok {
        return None;
    }
    s.parse().ok()
}

/// Inverse of [`maps_link`]. Only the exact six-decimal form is accepted.
pub fn parse_maps_link(link: &str) -> Option<LatLon> {
    let q = link.strip_prefix(MAPS_PREFIX)?;
    let (lat, lon) = q.split_once(',')?;
    let p = LatLon::new(parse_coord(lat)?, parse_coord(lon)?);
    p.is_valid().then_some(p)
}

/// The text message of one location report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationMessage {
    pub ambulance_id: AmbulanceId,
    pub timestamp: UtcSeconds,
    pub maps_link: String,
    pub destination: SmsAddress,
}

impl LocationMessage {
    /// `<id> <YYYY-MM-DDTHH:MM:SSZ> <maps link>`
    pub fn body(&self) -> String {
        alloc::format!(
            "{} {} {}",
            self.ambulance_id,
            self.timestamp.to_iso8601(),
            self.maps_link
        )
    }
}

/// A message body as received, before any tracking logic.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedBody {
    pub ambulance_id: AmbulanceId,
    pub timestamp: UtcSeconds,
    pub position: LatLon,
}

pub fn parse_body(body: &str) -> Option<ParsedBody> {
    let mut parts = body.split(' ');
    let id = AmbulanceId::new(parts.next()?).ok()?;
    let ts = UtcSeconds::parse_iso8601(parts.next()?)?;
    let position = parse_maps_link(parts.next()?)?;
    if parts.next().is_some() {
        return None;
    }
    Some(ParsedBody {
        ambulance_id: id,
        timestamp: ts,
        position,
    })
}

pub fn compose_message(
    fix: &GeoPosition,
    dest: &SmsAddress,
    cfg: &DeviceConfig,
    now: UtcSeconds,
) -> Result<LocationMessage, DeviceError> {
    Ok(LocationMessage {
        ambulance_id: cfg.ambulance_id.clone(),
        timestamp: now,
        maps_link: make_maps_link(fix)?,
        destination: dest.clone(),
    })
}

/// One message handed to the modem, with the bytes exchanged for it.
#[derive(Debug, Clone, PartialEq)]
pub struct SendAction {
    pub message: LocationMessage,
    pub transcript: Transcript,
}

/// Reads one window's worth of GPS bytes.
///
/// Chunks stamped outside `[window_start, window_start + parse_window)` are
/// ignored.
pub fn run_parse_window(
    state: &mut DeviceState,
    gps: &[TimedChunk],
    window_start: SimTime,
    cfg: &DeviceConfig,
) {
    state.new_data = false;
    let window_end = window_start + cfg.parse_window;
    for chunk in gps.iter().filter(|c| c.at >= window_start && c.at < window_end) {
        for raw in state.framer.feed_bytes(&chunk.bytes) {
            match nmea::parse_sentence(&raw) {
                Ok(Sentence::Position(p)) if p.fix().is_some() => {
                    state.last_fix = Some(TimedFix {
                        fix: p,
                        received_at: chunk.at,
                    });
                    state.new_data = true;
                }
                Ok(_) => {}
                Err(_) => state.sentences_rejected += 1,
            }
        }
    }
}

/// The telemetry unit: config, loop state and its message clock.
#[derive(Debug, Clone)]
pub struct Device {
    pub cfg: DeviceConfig,
    pub state: DeviceState,
}

impl Device {
    pub fn new(cfg: DeviceConfig) -> Result<Self, DeviceError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            state: DeviceState::default(),
        })
    }

    /// Runs the window that ends at `now` and sends if the loop says so.
    ///
    /// `utc` is the wall-clock time stamped into messages.
    pub fn tick(
        &mut self,
        now: SimTime,
        utc: UtcSeconds,
        gps: &[TimedChunk],
        modem: &mut Modem,
    ) -> Result<Vec<SendAction>, DeviceError> {
        let window_start = now.saturating_sub(self.cfg.parse_window);
        run_parse_window(&mut self.state, gps, window_start, &self.cfg);
        let due = match (self.cfg.send_mode, self.state.last_send_time) {
            (_, None) => true,
            (SendMode::SingleShot, Some(_)) => false,
            (SendMode::Continuous, Some(t)) => now.since(t) >= self.cfg.send_interval,
        };
        if !self.state.new_data || !due {
            self.state.new_data = false;
            return Ok(Vec::new());
        }
        self.state.new_data = false;
        let fix = match &self.state.last_fix {
            Some(f) => f.fix.clone(),
            None => return Ok(Vec::new()),
        };
        let n_dest = self.cfg.destinations().len() as u32;
        if modem.is_busy(now) {
            self.state.messages_dropped += n_dest as u64;
            return Err(DeviceError::ModemBusy { dropped: n_dest });
        }
        let mut sends = Vec::with_capacity(n_dest as usize);
        for dest in self.cfg.destinations() {
            let msg = compose_message(&fix, dest, &self.cfg, utc)?;
            let transcript = send_sms(modem, dest, &msg.body(), now);
            sends.push(SendAction {
                message: msg,
                transcript,
            });
        }
        self.state.messages_sent += sends.len() as u64;
        self.state.last_send_time = Some(now);
        Ok(sends)
    }
}

/// The text-mode command sequence for one message.
pub fn send_sms(modem: &mut Modem, dest: &SmsAddress, body: &str, now: SimTime) -> Transcript {
    let mut body_bytes = body.as_bytes().to_vec();
    body_bytes.push(CTRL_Z);
    let lines: [Vec<u8>; 4] = [
        b"AT\r".to_vec(),
        b"AT+CMGF=1\r".to_vec(),
        alloc::format!("AT+CMGS=\"{dest}\"\r").into_bytes(),
        body_bytes,
    ];
    let mut t = Transcript::default();
    for line in lines {
        let resp = modem.write_line(&line, now);
        t.exchanges.push((line, resp));
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modem::DEFAULT_TX_TIME;
    use crate::nmea::encode_gga;

    fn cfg() -> DeviceConfig {
        DeviceConfig::new(
            AmbulanceId::new("AMB1").unwrap(),
            SmsAddress::new("+15550001").unwrap(),
            SmsAddress::new("+15550002").unwrap(),
        )
    }

    fn fix_at(lat: f64, lon: f64) -> GeoPosition {
        GeoPosition::gps_fix(LatLon::new(lat, lon), 0.0)
    }

    fn chunk(ms: u64, lat: f64, lon: f64) -> TimedChunk {
        let mut bytes = encode_gga(&fix_at(lat, lon)).into_bytes();
        bytes.extend_from_slice(b"\r\n");
        TimedChunk { at: SimTime(ms), bytes }
    }

    fn modem() -> Modem {
        Modem::new(SmsAddress::new("+19990001").unwrap(), DEFAULT_TX_TIME)
    }

    #[test]
    fn maps_link_format() {
        assert_eq!(
            make_maps_link(&fix_at(0.0, 0.0)).unwrap(),
            "https://maps.google.com/maps?q=0.000000,0.000000"
        );
        assert_eq!(
            make_maps_link(&fix_at(48.1173, 11.516_667)).unwrap(),
            "https://maps.google.com/maps?q=48.117300,11.516667"
        );
        assert_eq!(
            make_maps_link(&fix_at(-1.5, -0.000_000_2)).unwrap(),
            "https://maps.google.com/maps?q=-1.500000,0.000000"
        );
        let mut nofix = fix_at(1.0, 1.0);
        nofix.fix_quality = 0;
        assert_eq!(make_maps_link(&nofix), Err(DeviceError::NoFix));
    }

    #[test]
    fn maps_link_parse_is_strict() {
        assert_eq!(
            parse_maps_link("https://maps.google.com/maps?q=-1.500000,2.250000"),
            Some(LatLon::new(-1.5, 2.25))
        );
        for bad in [
            "https://maps.google.com/maps?q=1.5,2.25",
            "https://maps.google.com/maps?q=1.500000, 2.250000",
            "https://maps.google.com/maps?q=91.000000,0.000000",
            "http://maps.google.com/maps?q=1.500000,2.250000",
            "https://maps.google.com/maps?q=+1.500000,2.250000",
        ] {
            assert_eq!(parse_maps_link(bad), None, "{bad}");
        }
    }

    #[test]
    fn message_bodies() {
        let c = cfg();
        let t = UtcSeconds(1_577_836_800);
        let m = compose_message(&fix_at(0.0, 0.0), &c.control_room_number, &c, t).unwrap();
        assert_eq!(
            m.body(),
            "AMB1 2020-01-01T00:00:00Z https://maps.google.com/maps?q=0.000000,0.000000"
        );
        let m = compose_message(&fix_at(-1.5, 3.0), &c.hospital_number, &c, t).unwrap();
        assert!(m.body().contains("q=-1.500000,3.000000"));
        let back = parse_body(&m.body()).unwrap();
        assert_eq!(back.position, LatLon::new(-1.5, 3.0));
        assert_eq!(back.timestamp, t);
        assert!(parse_body("hello").is_none());
        assert!(parse_body(&alloc::format!("{} extra", m.body())).is_none());
    }

    #[test]
    fn config_validation() {
        let mut c = cfg();
        assert!(c.validate().is_ok());
        c.send_interval = Duration::from_millis(500);
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.serial_link_modem = c.serial_link_gps.clone();
        assert!(c.validate().is_err());
        let mut c = cfg();
        c.parse_window = Duration::ZERO;
        assert!(c.validate().is_err());
    }

    #[test]
    fn window_with_one_fix() {
        let mut s = DeviceState::default();
        run_parse_window(&mut s, &[chunk(300, 10.0, 20.0)], SimTime::ZERO, &cfg());
        assert!(s.new_data);
        assert_eq!(s.last_fix.unwrap().fix.fix(), Some(LatLon::new(10.0, 20.0)));
    }

    #[test]
    fn window_without_frames() {
        let mut s = DeviceState::default();
        let noise = TimedChunk { at: SimTime(10), bytes: b"GPGGA,no dollar sign\r\n".to_vec() };
        run_parse_window(&mut s, &[noise], SimTime::ZERO, &cfg());
        assert!(!s.new_data);
        assert!(s.last_fix.is_none());
    }

    #[test]
    fn latest_fix_wins() {
        let mut s = DeviceState::default();
        let input = [chunk(200, 1.0, 1.0), chunk(800, 2.0, 2.0)];
        run_parse_window(&mut s, &input, SimTime::ZERO, &cfg());
        let last = s.last_fix.unwrap();
        assert_eq!(last.received_at, SimTime(800));
        assert_eq!(last.fix.fix(), Some(LatLon::new(2.0, 2.0)));
    }

    #[test]
    fn tick_sends_to_both_destinations() {
        let mut d = Device::new(cfg()).unwrap();
        let mut m = modem();
        let sends = d
            .tick(SimTime(1000), UtcSeconds(0), &[chunk(0, 1.0, 2.0)], &mut m)
            .unwrap();
        assert_eq!(sends.len(), 2);
        assert_eq!(sends[0].message.destination, d.cfg.control_room_number);
        assert_eq!(sends[1].message.destination, d.cfg.hospital_number);
        assert_eq!(sends[0].message.body(), sends[1].message.body());
        assert!(!d.state.new_data);
        let out = m.take_outbox();
        assert_eq!(out.len(), 2);
        assert_eq!(out[1].to, d.cfg.hospital_number);
    }

    #[test]
    fn tick_without_fix_sends_nothing() {
        let mut d = Device::new(cfg()).unwrap();
        let sends = d.tick(SimTime(1000), UtcSeconds(0), &[], &mut modem()).unwrap();
        assert!(sends.is_empty());
    }

    #[test]
    fn send_interval_schedule() {
        let mut c = cfg();
        c.send_interval = Duration::from_secs(5);
        let mut d = Device::new(c).unwrap();
        let mut m = modem();
        let mut send_times = Vec::new();
        for w in 0..16u64 {
            let input = [chunk(w * 1000 + 100, 1.0, 1.0)];
            let now = SimTime((w + 1) * 1000);
            if !d.tick(now, UtcSeconds(0), &input, &mut m).unwrap().is_empty() {
                send_times.push(now.0 / 1000);
            }
            assert!(!d.state.new_data);
        }
        // Oracle: first send at t=1, then every 5 s.
        assert_eq!(send_times, [1, 6, 11, 16]);
    }

    #[test]
    fn single_shot_sends_once() {
        let mut c = cfg();
        c.send_mode = SendMode::SingleShot;
        let mut d = Device::new(c).unwrap();
        let mut m = modem();
        let mut total = 0;
        for w in 0..5u64 {
            let input = [chunk(w * 1000, 1.0, 1.0)];
            total += d.tick(SimTime((w + 1) * 1000), UtcSeconds(0), &input, &mut m).unwrap().len();
        }
        assert_eq!(total, 2);
    }

    #[test]
    fn busy_modem_drops_window() {
        let mut d = Device::new(cfg()).unwrap();
        let mut m = Modem::new(SmsAddress::new("+19990001").unwrap(), Duration::from_millis(800));
        d.tick(SimTime(1000), UtcSeconds(0), &[chunk(0, 1.0, 1.0)], &mut m).unwrap();
        // Two messages at 800 ms each keep the radio busy until t=2.6 s.
        let r = d.tick(SimTime(2000), UtcSeconds(1), &[chunk(1000, 1.0, 1.0)], &mut m);
        assert_eq!(r, Err(DeviceError::ModemBusy { dropped: 2 }));
        assert_eq!(d.state.messages_dropped, 2);
        assert!(!d.state.new_data);
        let r = d.tick(SimTime(3000), UtcSeconds(2), &[chunk(2000, 1.0, 1.0)], &mut m);
        assert_eq!(r.unwrap().len(), 2);
    }
}
