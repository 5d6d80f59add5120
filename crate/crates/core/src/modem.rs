//! SIM900A-style text-mode modem and a seeded SMS network.
//!
//! The modem accepts the small AT subset a microcontroller uses to send a
//! text message:
//!
//! ```text
//! AT                 -> OK
//! AT+CMGF=1          -> OK                (enter text mode)
//! AT+CMGS="<dest>"   -> "> "              (prompt, no terminator)
//! <body> 0x1A        -> +CMGS: <n> / OK
//! ```
//!
//! Every response except the prompt ends in CRLF.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ids::SmsAddress;
use crate::time::SimTime;

pub const CTRL_Z: u8 = 0x1A;
pub const MAX_BODY_CHARS: usize = 160;

pub const OK: &str = "OK\r\n";
pub const ERROR: &str = "ERROR\r\n";
pub const PROMPT: &str = "> ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ModemMode {
    Idle,
    TextMode,
    AwaitingBody,
    Sending,
}

/// A message the modem accepted for transmission.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Submission {
    pub dest: SmsAddress,
    pub body: String,
    pub reference: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtReply {
    pub response: String,
    pub submitted: Option<Submission>,
}

impl AtReply {
    fn text(s: &str) -> Self {
        Self {
            response: s.to_string(),
            submitted: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModemState {
    mode: ModemMode,
    pending_dest: Option<SmsAddress>,
    message_counter: u32,
    body: Vec<u8>,
    transmitting: bool,
}

impl Default for ModemState {
    fn default() -> Self {
        Self {
            mode: ModemMode::Idle,
            pending_dest: None,
            message_counter: 0,
            body: Vec::new(),
            transmitting: false,
        }
    }
}

impl ModemState {
    pub fn mode(&self) -> ModemMode {
        self.mode
    }

    pub fn pending_dest(&self) -> Option<&SmsAddress> {
        self.pending_dest.as_ref()
    }

    pub fn message_counter(&self) -> u32 {
        self.message_counter
    }

    fn settled_mode(&self) -> ModemMode {
        if self.transmitting {
            ModemMode::Sending
        } else {
            ModemMode::TextMode
        }
    }

    /// The radio finished sending everything accepted so far.
    pub fn complete_transmission(&mut self) {
        self.transmitting = false;
        if self.mode == ModemMode::Sending {
            self.mode = ModemMode::TextMode;
        }
    }

    /// Handles one command line, or body bytes while the prompt is open.
    pub fn handle_at_line(&mut self, line: &[u8]) -> AtReply {
        if self.mode == ModemMode::AwaitingBody {
            return self.handle_body(line);
        }
        let mut cmd = line;
        while let [rest @ .., b'\r' | b'\n'] = cmd {
            cmd = rest;
        }
        match cmd {
            b"AT" => AtReply::text(OK),
            b"AT+CMGF=1" => {
                if self.mode == ModemMode::Idle {
                    self.mode = ModemMode::TextMode;
                }
                AtReply::text(OK)
            }
            _ => match parse_cmgs(cmd) {
                Some(dest) if matches!(self.mode, ModemMode::TextMode | ModemMode::Sending) => {
                    self.pending_dest = Some(dest);
                    self.body.clear();
                    self.mode = ModemMode::AwaitingBody;
                    AtReply::text(PROMPT)
                }
                _ => AtReply::text(ERROR),
            },
        }
    }

    fn handle_body(&mut self, bytes: &[u8]) -> AtReply {
        let Some(end) = bytes.iter().position(|&b| b == CTRL_Z) else {
            // Multi-line body: the modem re-prompts after each line.
            self.body.extend_from_slice(bytes);
            return AtReply::text(PROMPT);
        };
        self.body.extend_from_slice(&bytes[..end]);
        let body = core::mem::take(&mut self.body);
        let dest = self.pending_dest.take();
        self.mode = self.settled_mode();
        let text = match String::from_utf8(body) {
            Ok(t) if t.chars().count() <= MAX_BODY_CHARS => t,
            _ => return AtReply::text("+CMS ERROR: 500\r\n"),
        };
        let Some(dest) = dest else {
            return AtReply::text(ERROR);
        };
        self.message_counter += 1;
        self.transmitting = true;
        self.mode = ModemMode::Sending;
        AtReply {
            response: alloc::format!("+CMGS: {}\r\n{}", self.message_counter, OK),
            submitted: Some(Submission {
                dest,
                body: text,
                reference: self.message_counter,
            }),
        }
    }
}

fn parse_cmgs(cmd: &[u8]) -> Option<SmsAddress> {
    let rest = cmd.strip_prefix(b"AT+CMGS=\"")?;
    let inner = rest.strip_suffix(b"\"")?;
    SmsAddress::new(core::str::from_utf8(inner).ok()?).ok()
}

/// Byte log of one serial link: what was written and what came back.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub exchanges: Vec<(Vec<u8>, String)>,
}

impl Transcript {
    pub fn responses(&self) -> impl Iterator<Item = &str> {
        self.exchanges.iter().map(|(_, r)| r.as_str())
    }

    /// Interleaved bytes as they would appear on a shared monitor.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (sent, resp) in &self.exchanges {
            out.extend_from_slice(sent);
            out.extend_from_slice(resp.as_bytes());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DeliveryStatus {
    InFlight,
    Delivered,
    Lost,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmsEnvelope {
    /// Submission sequence number within one network.
    pub id: u64,
    pub from: SmsAddress,
    pub to: SmsAddress,
    pub body: String,
    pub submit_time: SimTime,
    pub deliver_time: Option<SimTime>,
    pub status: DeliveryStatus,
}

impl SmsEnvelope {
    pub fn new(from: SmsAddress, to: SmsAddress, body: String, submit_time: SimTime) -> Self {
        Self {
            id: 0,
            from,
            to,
            body,
            submit_time,
            deliver_time: None,
            status: DeliveryStatus::InFlight,
        }
    }
}

/// Behavior of the simulated carrier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub latency_min: Duration,
    pub latency_max: Duration,
    pub loss_probability: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            latency_min: Duration::from_millis(200),
            latency_max: Duration::from_millis(800),
            loss_probability: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub submitted: u64,
    pub delivered: u64,
    pub lost: u64,
}

/// Seeded SMS transport. Each envelope is lost or delivered independently.
#[derive(Debug, Clone)]
pub struct SmsNetwork {
    config: NetworkConfig,
    rng: ChaCha8Rng,
    in_flight: BTreeMap<(SimTime, u64), SmsEnvelope>,
    next_id: u64,
    stats: NetworkStats,
}

impl SmsNetwork {
    pub fn new(config: NetworkConfig) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            in_flight: BTreeMap::new(),
            next_id: 0,
            stats: NetworkStats::default(),
        }
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn stats(&self) -> NetworkStats {
        self.stats
    }

    pub fn in_flight_len(&self) -> usize {
        self.in_flight.len()
    }

    /// Accepts an envelope; returns it as marked lost or scheduled.
    pub fn submit(&mut self, mut env: SmsEnvelope, now: SimTime) -> SmsEnvelope {
        env.id = self.next_id;
        self.next_id += 1;
        env.submit_time = now;
        self.stats.submitted += 1;
        let lost = self.rng.gen::<f64>() < self.config.loss_probability;
        if lost {
            env.status = DeliveryStatus::Lost;
            env.deliver_time = None;
            self.stats.lost += 1;
            return env;
        }
        let lo = self.config.latency_min.as_millis() as u64;
        let hi = (self.config.latency_max.as_millis() as u64).max(lo);
        let latency = self.rng.gen_range(lo..=hi);
        let at = SimTime(now.0 + latency);
        env.status = DeliveryStatus::InFlight;
        env.deliver_time = Some(at);
        self.in_flight.insert((at, env.id), env.clone());
        env
    }

    /// Removes and returns every envelope due by `now`, earliest first,
    /// ties in submission order.
    pub fn deliver_due(&mut self, now: SimTime) -> Vec<SmsEnvelope> {
        let Some(next) = now.0.checked_add(1) else {
            return self.take_all();
        };
        let later = self.in_flight.split_off(&(SimTime(next), 0));
        let due = core::mem::replace(&mut self.in_flight, later);
        self.mark_delivered(due)
    }

    fn take_all(&mut self) -> Vec<SmsEnvelope> {
        let due = core::mem::take(&mut self.in_flight);
        self.mark_delivered(due)
    }

    fn mark_delivered(&mut self, due: BTreeMap<(SimTime, u64), SmsEnvelope>) -> Vec<SmsEnvelope> {
        let out: Vec<SmsEnvelope> = due
            .into_values()
            .map(|mut e| {
                e.status = DeliveryStatus::Delivered;
                e
            })
            .collect();
        self.stats.delivered += out.len() as u64;
        out
    }

    /// Earliest pending delivery time.
    pub fn next_due(&self) -> Option<SimTime> {
        self.in_flight.keys().next().map(|(t, _)| *t)
    }
}

/// The modem as seen by the device: AT state plus radio occupancy.
#[derive(Debug, Clone)]
pub struct Modem {
    state: ModemState,
    own_number: SmsAddress,
    tx_time: Duration,
    busy_until: SimTime,
    outbox: Vec<SmsEnvelope>,
}

/// Default radio time per message.
pub const DEFAULT_TX_TIME: Duration = Duration::from_millis(200);

impl Modem {
    pub fn new(own_number: SmsAddress, tx_time: Duration) -> Self {
        Self {
            state: ModemState::default(),
            own_number,
            tx_time,
            busy_until: SimTime::ZERO,
            outbox: Vec::new(),
        }
    }

    pub fn state(&self) -> &ModemState {
        &self.state
    }

    pub fn own_number(&self) -> &SmsAddress {
        &self.own_number
    }

    /// Advances the radio clock; finishes transmissions that are done.
    pub fn poll(&mut self, now: SimTime) {
        if self.state.transmitting && now >= self.busy_until {
            self.state.complete_transmission();
        }
    }

    pub fn is_busy(&mut self, now: SimTime) -> bool {
        self.poll(now);
        self.state.transmitting
    }

    pub fn write_line(&mut self, line: &[u8], now: SimTime) -> String {
        let reply = self.state.handle_at_line(line);
        if let Some(sub) = reply.submitted {
            self.busy_until = self.busy_until.max(now) + self.tx_time;
            self.outbox.push(SmsEnvelope::new(
                self.own_number.clone(),
                sub.dest,
                sub.body,
                now,
            ));
        }
        reply.response
    }

    /// Envelopes accepted since the last call, in acceptance order.
    pub fn take_outbox(&mut self) -> Vec<SmsEnvelope> {
        core::mem::take(&mut self.outbox)
    }
}
