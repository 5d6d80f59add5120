//! Great-circle geometry.

use serde::{Deserialize, Serialize};

/// Mean Earth radius used for all distances.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }

    /// Haversine distance in meters.
    pub fn distance_m(&self, other: &LatLon) -> f64 {
        let phi1 = self.lat.to_radians();
        let phi2 = other.lat.to_radians();
        let dphi = (other.lat - self.lat).to_radians();
        let dlambda = (other.lon - self.lon).to_radians();
        let s1 = libm::sin(dphi / 2.0);
        let s2 = libm::sin(dlambda / 2.0);
        let a = s1 * s1 + libm::cos(phi1) * libm::cos(phi2) * s2 * s2;
        2.0 * EARTH_RADIUS_M * libm::asin(libm::sqrt(a.clamp(0.0, 1.0)))
    }

    /// Linear interpolation in coordinate space; `frac` in [0, 1].
    pub fn lerp(&self, other: &LatLon, frac: f64) -> LatLon {
        LatLon {
            lat: self.lat + (other.lat - self.lat) * frac,
            lon: self.lon + (other.lon - self.lon) * frac,
        }
    }
}

/// Rounds to the 6-decimal grid used by every downstream consumer.
pub fn round6(x: f64) -> f64 {
    let r = libm::round(x * 1e6) / 1e6;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_distance() {
        let p = LatLon::new(28.6, 77.2);
        assert_eq!(p.distance_m(&p), 0.0);
    }

    #[test]
    fn one_degree_of_latitude() {
        // arc = R * pi / 180
        let d = LatLon::new(0.0, 0.0).distance_m(&LatLon::new(1.0, 0.0));
        assert!((d - 111_194.926_644_558_73).abs() < 1e-6, "{d}");
    }

    #[test]
    fn round6_normalizes_negative_zero() {
        assert_eq!(round6(-0.000_000_1).to_bits(), 0.0f64.to_bits());
        assert_eq!(round6(-1.5), -1.5);
    }
}
