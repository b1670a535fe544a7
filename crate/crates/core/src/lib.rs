//! Analysis toolkit for flip-chip bonded superconducting resonator samples.
//!
//! The crate covers the measurement-to-model chain for such samples:
//!
//! - [`heightmap`]: profilometer line-scan processing — leveling to the
//!   bottom-chip plane, top-chip windowing, artifact-scan masking, and
//!   separation / tilt / bow statistics, plus the corner-pair tilt method
//!   used with edge-on SEM measurements.
//! - [`cpw`]: quasi-static conformal-mapping models for coplanar waveguides
//!   in planar, metal-facing, and dielectric-facing configurations,
//!   impedance-targeted gap solving, and separation-sweep shift curves.
//! - [`resonator`]: loaded quarter-wave resonator frequency models (exact
//!   transcendental condition and first-order form), phase-velocity fitting
//!   to measured (length, frequency) data, inverse length design, and
//!   copy-to-copy deviation statistics.
//! - [`vnafit`]: notch-type S21 fitting robust to impedance mismatches,
//!   applied-power conversion, and intra-resonator photon number.
//! - [`losses`]: interface participation-ratio post-processing into total
//!   participation and relative quality-factor curves.
//!
//! All heights and lateral dimensions are carried in micrometres,
//! frequencies in hertz (or gigahertz where a field name says so), and
//! angles in radians unless a name carries an explicit unit suffix.

pub mod cpw;
pub mod heightmap;
pub mod losses;
pub mod numeric;
pub mod resonator;
pub mod vnafit;

/// Speed of light in vacuum (m/s).
pub const C_LIGHT: f64 = 299_792_458.0;

/// Vacuum permittivity (F/m).
pub const EPS0: f64 = 8.854_187_812_8e-12;

/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;

/// What the opposite chip presents to a structure across the vacuum gap.
///
/// `Planar` means there is no opposite chip at all (single-chip layout).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Facing {
    Planar,
    Metal,
    Dielectric,
}

impl Facing {
    pub fn as_str(&self) -> &'static str {
        match self {
            Facing::Planar => "planar",
            Facing::Metal => "metal",
            Facing::Dielectric => "dielectric",
        }
    }
}

impl std::fmt::Display for Facing {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Facing {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "planar" => Ok(Facing::Planar),
            "metal" | "m" => Ok(Facing::Metal),
            "dielectric" | "d" => Ok(Facing::Dielectric),
            other => Err(format!(
                "unknown facing {other:?} (expected planar, metal, or dielectric)"
            )),
        }
    }
}
