//! Washington State Plane South (Lambert conformal conic, two standard
//! parallels, GRS80) to geographic coordinates, and static satellite-tile URLs.
//!
//! Formulas follow the standard ellipsoidal LCC: the conformal
//! "t" function, cone constant `n = ln(m1/m2) / ln(t1/t2)` and mapping radius
//! `rho = a F t^n`. The inverse recovers latitude by fixed-point iteration on
//! `phi = pi/2 - 2 atan(t (1 - e sin phi)/(1 + e sin phi))^(e/2)`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_INVERSE_ITERATIONS: usize = 25;
const LATITUDE_TOLERANCE: f64 = 1e-12;

pub const DEFAULT_TILE_SIZE: u32 = 512;
pub const DEFAULT_TILE_ZOOM: u32 = 19;
pub const MAX_TILE_ZOOM: u32 = 21;
pub const TILE_ENDPOINT: &str = "https://maps.googleapis.com/maps/api/staticmap";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("point ({x}, {y}) lies outside the projection cone")]
    OutOfDomain { x: f64, y: f64 },
    #[error("latitude iteration did not converge after {0} steps")]
    NonConvergence(usize),
    #[error("zoom {0} is outside 0..={MAX_TILE_ZOOM}")]
    InvalidZoom(u32),
    #[error("tile size must be positive")]
    InvalidSize,
    #[error("invalid angle {0:?}")]
    InvalidAngle(String),
    #[error("invalid projection parameters: {0}")]
    InvalidParams(&'static str),
}

/// Two-standard-parallel LCC definition. Angles are decimal degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LccParams {
    pub a: f64,
    pub f_inv: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub phi0: f64,
    pub lambda0: f64,
    pub false_easting: f64,
    pub false_northing: f64,
}

impl LccParams {
    /// NAD83 Washington South zone on GRS80, metres.
    pub fn washington_south() -> Self {
        LccParams {
            a: 6_378_137.0,
            f_inv: 298.257_222_101,
            phi1: dms(45.0, 50.0, 0.0),
            phi2: dms(47.0, 20.0, 0.0),
            phi0: dms(45.0, 20.0, 0.0),
            lambda0: -dms(120.0, 30.0, 0.0),
            false_easting: 500_000.0,
            false_northing: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !(self.a > 0.0) {
            return Err(GeoError::InvalidParams("semi-major axis must be positive"));
        }
        if !(self.f_inv > 1.0) {
            return Err(GeoError::InvalidParams("inverse flattening must exceed 1"));
        }
        for phi in [self.phi1, self.phi2, self.phi0] {
            if !(phi > -90.0 && phi < 90.0) {
                return Err(GeoError::InvalidParams("latitudes must lie in (-90, 90)"));
            }
        }
        if !(self.lambda0 > -180.0 && self.lambda0 <= 180.0) {
            return Err(GeoError::InvalidParams("central meridian must lie in (-180, 180]"));
        }
        if (self.phi1 + self.phi2).abs() < 1e-12 {
            return Err(GeoError::InvalidParams("standard parallels may not be symmetric about the equator"));
        }
        Ok(())
    }
}

impl Default for LccParams {
    fn default() -> Self {
        Self::washington_south()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

pub fn dms(deg: f64, min: f64, sec: f64) -> f64 {
    let sign = if deg < 0.0 { -1.0 } else { 1.0 };
    sign * (deg.abs() + min / 60.0 + sec / 3600.0)
}

/// Parse `"45 50"`, `"45 50 30"`, `"-120 30"` or a plain decimal `"45.8333"`.
pub fn parse_angle(s: &str) -> Result<f64, GeoError> {
    let bad = || GeoError::InvalidAngle(s.to_string());
    let parts: Vec<f64> = s
        .split_whitespace()
        .map(|p| p.parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let negative = s.trim_start().starts_with('-');
    let v = match parts.as_slice() {
        [d] => *d,
        [d, m] => dms(d.abs(), *m, 0.0),
        [d, m, sec] => dms(d.abs(), *m, *sec),
        _ => return Err(bad()),
    };
    Ok(if negative && parts.len() > 1 { -v } else { v })
}

/// Precomputed cone constants for one parameter set.
#[derive(Debug, Clone, Copy)]
pub struct Lcc {
    params: LccParams,
    e: f64,
    n: f64,
    /// a * F
    af: f64,
    rho0: f64,
    lambda0: f64,
}

impl Lcc {
    pub fn new(params: LccParams) -> Result<Self, GeoError> {
        params.validate()?;
        let f = 1.0 / params.f_inv;
        let e = (2.0 * f - f * f).sqrt();
        let (p1, p2, p0) = (
            params.phi1.to_radians(),
            params.phi2.to_radians(),
            params.phi0.to_radians(),
        );
        let m1 = m_fn(p1, e);
        let m2 = m_fn(p2, e);
        let t1 = t_fn(p1, e);
        let t2 = t_fn(p2, e);
        let n = if (params.phi1 - params.phi2).abs() < 1e-12 {
            p1.sin()
        } else {
            (m1.ln() - m2.ln()) / (t1.ln() - t2.ln())
        };
        let big_f = m1 / (n * t1.powf(n));
        let af = params.a * big_f;
        let rho0 = af * t_fn(p0, e).powf(n);
        Ok(Lcc {
            params,
            e,
            n,
            af,
            rho0,
            lambda0: params.lambda0.to_radians(),
        })
    }

    pub fn params(&self) -> &LccParams {
        &self.params
    }

    pub fn cone_constant(&self) -> f64 {
        self.n
    }

    pub fn forward(&self, p: GeoPoint) -> Result<(f64, f64), GeoError> {
        let phi = p.lat.to_radians();
        if !(phi.abs() < FRAC_PI_2) || !p.lon.is_finite() {
            return Err(GeoError::OutOfDomain { x: p.lon, y: p.lat });
        }
        let rho = self.af * t_fn(phi, self.e).powf(self.n);
        let theta = self.n * wrap_pi(p.lon.to_radians() - self.lambda0);
        let x = self.params.false_easting + rho * theta.sin();
        let y = self.params.false_northing + self.rho0 - rho * theta.cos();
        Ok((x, y))
    }

    pub fn inverse(&self, easting: f64, northing: f64) -> Result<GeoPoint, GeoError> {
        let out = || GeoError::OutOfDomain { x: easting, y: northing };
        if !easting.is_finite() || !northing.is_finite() {
            return Err(out());
        }
        let dx = easting - self.params.false_easting;
        let dy = self.rho0 - (northing - self.params.false_northing);
        let sign = self.n.signum();
        // The radius measured toward the cone apex must keep the sign of n.
        if sign * dy <= 0.0 {
            return Err(out());
        }
        let rho = sign * dx.hypot(dy);
        let theta = (sign * dx).atan2(sign * dy);
        let t = (rho / self.af).powf(1.0 / self.n);
        let half_e = self.e / 2.0;
        let mut phi = FRAC_PI_2 - 2.0 * t.atan();
        for _ in 0..MAX_INVERSE_ITERATIONS {
            let es = self.e * phi.sin();
            let next = FRAC_PI_2 - 2.0 * (t * ((1.0 - es) / (1.0 + es)).powf(half_e)).atan();
            let delta = (next - phi).abs();
            phi = next;
            if delta < LATITUDE_TOLERANCE {
                // Offset added in degrees so E = E0 yields lambda0 bit-exactly.
                let mut lon = (theta / self.n).to_degrees() + self.params.lambda0;
                if lon > 180.0 {
                    lon -= 360.0;
                } else if lon <= -180.0 {
                    lon += 360.0;
                }
                return Ok(GeoPoint {
                    lat: phi.to_degrees(),
                    lon,
                });
            }
        }
        Err(GeoError::NonConvergence(MAX_INVERSE_ITERATIONS))
    }
}

fn m_fn(phi: f64, e: f64) -> f64 {
    let s = phi.sin();
    phi.cos() / (1.0 - e * e * s * s).sqrt()
}

fn t_fn(phi: f64, e: f64) -> f64 {
    let es = e * phi.sin();
    (FRAC_PI_4 - phi / 2.0).tan() / ((1.0 - es) / (1.0 + es)).powf(e / 2.0)
}

fn wrap_pi(x: f64) -> f64 {
    use std::f64::consts::PI;
    if x > PI {
        x - 2.0 * PI
    } else if x <= -PI {
        x + 2.0 * PI
    } else {
        x
    }
}

pub fn lcc_inverse(easting: f64, northing: f64, params: &LccParams) -> Result<GeoPoint, GeoError> {
    Lcc::new(*params)?.inverse(easting, northing)
}

pub fn lcc_forward(point: GeoPoint, params: &LccParams) -> Result<(f64, f64), GeoError> {
    Lcc::new(*params)?.forward(point)
}

/// Static satellite map request for a point. No network I/O happens here.
pub fn tile_url(point: GeoPoint, size_px: u32, zoom: u32, key: &str) -> Result<String, GeoError> {
    if zoom > MAX_TILE_ZOOM {
        return Err(GeoError::InvalidZoom(zoom));
    }
    if size_px == 0 {
        return Err(GeoError::InvalidSize);
    }
    let key: String = url::form_urlencoded::byte_serialize(key.as_bytes()).collect();
    Ok(format!(
        "{TILE_ENDPOINT}?center={:.6},{:.6}&zoom={zoom}&size={size_px}x{size_px}&maptype=satellite&key={key}",
        point.lat, point.lon
    ))
}
