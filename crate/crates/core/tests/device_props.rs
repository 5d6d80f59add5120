use corridor_core::device::{maps_link, parse_body, Device, DeviceConfig, TimedChunk};
use corridor_core::modem::{Modem, DEFAULT_TX_TIME};
use corridor_core::nmea::{encode_gga, parse_line, GeoPosition, Sentence};
use corridor_core::time::{Epoch, UtcSeconds};
use corridor_core::{AmbulanceId, LatLon, SimTime, SmsAddress};
use proptest::prelude::*;

/// Fixes inside one one-second window: (ms into the window, lat, lon).
type Window = Vec<(u64, f64, f64)>;

fn windows() -> impl Strategy<Value = Vec<(Window, bool)>> {
    let fix = (0u64..1000, -80.0f64..80.0, -170.0f64..170.0);
    proptest::collection::vec((proptest::collection::vec(fix, 0..3), any::<bool>()), 1..60)
}

fn device() -> Device {
    Device::new(DeviceConfig::new(
        AmbulanceId::new("AMB1").unwrap(),
        SmsAddress::new("+15550001").unwrap(),
        SmsAddress::new("+15550002").unwrap(),
    ))
    .unwrap()
}

/// Position as the receiver would report it, after NMEA rounding.
fn reported(lat: f64, lon: f64) -> LatLon {
    match parse_line(&encode_gga(&GeoPosition::gps_fix(LatLon::new(lat, lon), 0.0))) {
        Ok(Sentence::Position(p)) => p.fix().unwrap(),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// One send to each destination per window with a fix, carrying the
    /// window's latest fix; nothing for windows without one.
    #[test]
    fn one_send_per_window_with_latest_fix(ws in windows()) {
        let mut chunks = Vec::new();
        for (k, (fixes, noise)) in ws.iter().enumerate() {
            let base = k as u64 * 1000;
            if *noise {
                chunks.push(TimedChunk { at: SimTime(base), bytes: b"$GPGGA,garbage*00\r\nxx\r\n".to_vec() });
            }
            for &(ms, lat, lon) in fixes {
                let mut bytes = encode_gga(&GeoPosition::gps_fix(LatLon::new(lat, lon), 0.0)).into_bytes();
                bytes.extend_from_slice(b"\r\n");
                chunks.push(TimedChunk { at: SimTime(base + ms), bytes });
            }
        }
        chunks.sort_by_key(|c| c.at);
        let mut dev = device();
        let mut modem = Modem::new(SmsAddress::new("+19990001").unwrap(), DEFAULT_TX_TIME);
        let epoch = Epoch::default();
        let mut total = 0;
        for (k, (fixes, _)) in ws.iter().enumerate() {
            let now = SimTime((k as u64 + 1) * 1000);
            let sends = dev.tick(now, epoch.utc(now), &chunks, &mut modem).unwrap();
            let latest = fixes.iter().max_by_key(|f| f.0);
            match latest {
                None => prop_assert!(sends.is_empty()),
                Some(&(_, lat, lon)) => {
                    prop_assert_eq!(sends.len(), 2);
                    let want = maps_link(reported(lat, lon));
                    for s in &sends {
                        prop_assert_eq!(&s.message.maps_link, &want);
                        let body = parse_body(&s.message.body()).unwrap();
                        prop_assert_eq!(body.timestamp, UtcSeconds(epoch.0 .0 + k as i64 + 1));
                    }
                    total += 2;
                }
            }
        }
        prop_assert_eq!(dev.state.messages_sent, total);
        prop_assert_eq!(modem.take_outbox().len() as u64, total);
    }
}
