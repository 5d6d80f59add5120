use core::time::Duration;

use corridor_core::modem::{
    DeliveryStatus, ModemMode, ModemState, NetworkConfig, SmsEnvelope, SmsNetwork, CTRL_Z,
};
use corridor_core::{SimTime, SmsAddress};
use proptest::prelude::*;

fn network(seed: u64, loss: f64, lo: u64, span: u64) -> SmsNetwork {
    SmsNetwork::new(NetworkConfig {
        latency_min: Duration::from_millis(lo),
        latency_max: Duration::from_millis(lo + span),
        loss_probability: loss,
        seed,
    })
}

fn envelope(i: usize) -> SmsEnvelope {
    let a = SmsAddress::new("+15550001").unwrap();
    let b = SmsAddress::new("+15550002").unwrap();
    SmsEnvelope::new(a, b, format!("m{i}"), SimTime::ZERO)
}

/// Submits at the given times, polling every 100 ms, and drains.
fn exercise(net: &mut SmsNetwork, submit_ms: &[u64]) -> (Vec<SmsEnvelope>, Vec<SmsEnvelope>) {
    let mut times = submit_ms.to_vec();
    times.sort_unstable();
    let mut submitted = Vec::new();
    let mut delivered = Vec::new();
    let end = times.last().copied().unwrap_or(0) + 10_000;
    let mut next = 0;
    let mut t = 0;
    while t <= end {
        delivered.extend(net.deliver_due(SimTime(t)));
        while next < times.len() && times[next] <= t {
            submitted.push(net.submit(envelope(next), SimTime(t)));
            next += 1;
        }
        t += 100;
    }
    (submitted, delivered)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn every_message_is_delivered_or_lost_once(
        seed in any::<u64>(),
        loss in 0.0f64..=1.0,
        lo in 0u64..2_000,
        span in 0u64..3_000,
        times in proptest::collection::vec(0u64..30_000, 0..60),
    ) {
        let mut net = network(seed, loss, lo, span);
        let (submitted, delivered) = exercise(&mut net, &times);
        let s = net.stats();
        prop_assert_eq!(s.submitted, times.len() as u64);
        prop_assert_eq!(s.submitted, s.delivered + s.lost);
        prop_assert_eq!(net.in_flight_len(), 0);
        prop_assert_eq!(delivered.len() as u64, s.delivered);
        let lost = submitted.iter().filter(|e| e.status == DeliveryStatus::Lost).count() as u64;
        prop_assert_eq!(lost, s.lost);
        let mut ids: Vec<u64> = delivered.iter().map(|e| e.id).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), delivered.len());
        for e in &delivered {
            let at = e.deliver_time.unwrap();
            prop_assert!(at.0 >= e.submit_time.0 + lo && at.0 <= e.submit_time.0 + lo + span);
            prop_assert_eq!(e.status, DeliveryStatus::Delivered);
        }
        for w in delivered.windows(2) {
            prop_assert!((w[0].deliver_time, w[0].id) < (w[1].deliver_time, w[1].id));
        }
    }

    #[test]
    fn same_seed_same_outcome(seed in any::<u64>(), loss in 0.0f64..=1.0, times in proptest::collection::vec(0u64..20_000, 0..40)) {
        let a = exercise(&mut network(seed, loss, 200, 600), &times);
        let b = exercise(&mut network(seed, loss, 200, 600), &times);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn at_parser_is_total(lines in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..40), 0..20)) {
        let mut m = ModemState::default();
        let mut accepted = 0;
        for l in &lines {
            let r = m.handle_at_line(l);
            prop_assert!(!r.response.is_empty());
            if r.submitted.is_some() {
                accepted += 1;
            }
            prop_assert_eq!(m.message_counter(), accepted);
            prop_assert_eq!(m.pending_dest().is_some(), m.mode() == ModemMode::AwaitingBody);
        }
    }

    #[test]
    fn any_body_up_to_limit_is_submitted(body in "[ -~]{1,160}") {
        let mut m = ModemState::default();
        m.handle_at_line(b"AT+CMGF=1\r");
        m.handle_at_line(b"AT+CMGS=\"+15550002\"\r");
        let mut line = body.clone().into_bytes();
        line.push(CTRL_Z);
        let r = m.handle_at_line(&line);
        let sub = r.submitted.expect("submitted");
        prop_assert_eq!(sub.body, body);
    }
}
