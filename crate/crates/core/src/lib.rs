//! Engine for an emergency-vehicle green corridor.
//!
//! An ambulance telemetry unit reads NMEA fixes from a GPS receiver once per
//! parse window, turns the latest fix into a maps link and texts it through
//! a SIM900A-style modem to the traffic control room and the hospital. The
//! control room tracks each ambulance, routes it to the nearest hospital,
//! and preempts the traffic signals ahead of it. A deterministic discrete-time
//! simulator ties the pieces together and measures travel-time benefit.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the HTTP API
//! and the command line live in the `corridor` companion crate.
//!
//! * [`nmea`] frames and decodes GGA/RMC sentences.
//! * [`device`] is the telemetry loop: parse window, `new_data`, maps link, SMS.
//! * [`modem`] emulates the AT text-mode dialogue and a lossy SMS network.
//! * [`roadnet`] holds the road graph, hospitals and routing.
//! * [`signals`] is the per-intersection controller with preemption.
//! * [`control_room`] ingests messages, plans corridors and keeps the event log.
//! * [`sim`] advances everything in fixed order and reports metrics.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

pub mod control_room;
pub mod device;
pub mod geo;
pub mod ids;
pub mod modem;
pub mod nmea;
pub mod roadnet;
pub mod signals;
pub mod sim;
pub mod time;

pub use geo::LatLon;
pub use ids::{AmbulanceId, ControllerId, EdgeId, IdError, NodeId, SmsAddress};
pub use time::SimTime;
