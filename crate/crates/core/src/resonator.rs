//! Loaded quarter-wave resonator models.
//!
//! A quarter-wave line of physical length ℓ and phase velocity v_ph,
//! capacitively coupled to a feedline, resonates where
//!
//! ```text
//! tan(π/2 − ω ℓ / v_ph) − b ω = 0,        b = (C_c + C_cgr) Z_0r
//! ```
//!
//! Expanding the tangent around the bare quarter-wave point gives the
//! first-order form ω_r = (π/2) / (ℓ/v_ph + b), which is linear in 1/ω —
//! that linearity is what [`fit_vph`] exploits to extract the phase
//! velocity and loading constant from measured (length, frequency) pairs.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use thiserror::Error;

use crate::numeric::{bisect, linear_fit};
use crate::{Facing, C_LIGHT};

#[derive(Debug, Error)]
pub enum ResonatorError {
    #[error("non-positive loading denominator l/v_ph + b = {0:.3e} s")]
    NonPositiveDenominator(f64),
    #[error("no sign change bracketing the fundamental in [{lo_hz:.6e}, {hi_hz:.6e}] Hz")]
    RootNotBracketed { lo_hz: f64, hi_hz: f64 },
    #[error("need at least two records with distinct lengths, got {0}")]
    SingularFit(usize),
    #[error("fitted phase velocity {0:.3e} m/s is outside (0, c)")]
    UnphysicalFit(f64),
    #[error("target frequency unreachable: inverted length {length_um:.3} µm is not positive")]
    TargetUnreachable { length_um: f64 },
    #[error("no resonator index shared between at least two copies")]
    NoSharedIndices,
    #[error("copy {copy_id:?} lists index {index} more than once")]
    DuplicateIndex { copy_id: String, index: u32 },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

/// One resonator of a sample: design length, optional measured frequency,
/// and identification of the design copy it sits on.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonatorRecord {
    pub index: u32,
    /// Physical length measured from the center of the coupling pad (µm).
    pub length_um: f64,
    pub measured_f_ghz: Option<f64>,
    pub facing: Option<Facing>,
    pub copy_id: Option<String>,
}

impl ResonatorRecord {
    pub fn validate(&self) -> Result<(), ResonatorError> {
        if !(self.length_um > 0.0) {
            return Err(ResonatorError::InvalidRecord(format!(
                "index {}: length {} µm must be > 0",
                self.index, self.length_um
            )));
        }
        if let Some(f) = self.measured_f_ghz {
            if !(f > 0.0) {
                return Err(ResonatorError::InvalidRecord(format!(
                    "index {}: measured frequency {} GHz must be > 0",
                    self.index, f
                )));
            }
        }
        Ok(())
    }
}

/// Coupling-circuit capacitances and impedances feeding the loading
/// constant b = (C_c + C_cgr)·Z_0r.
///
/// `c_cgf_ff` (the feedline-side ground capacitance) only enters at higher
/// order and is carried for completeness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplerModel {
    pub c_c_ff: f64,
    pub c_cgr_ff: f64,
    pub c_cgf_ff: f64,
    pub z0_r_ohm: f64,
    pub z0_f_ohm: f64,
}

impl CouplerModel {
    /// Loading time constant b = (C_c + C_cgr)·Z_0r in seconds.
    pub fn loading_time_const_s(&self) -> f64 {
        (self.c_c_ff + self.c_cgr_ff) * 1e-15 * self.z0_r_ohm
    }

    pub fn validate(&self) -> Result<(), ResonatorError> {
        if self.c_c_ff < 0.0 || self.c_cgr_ff < 0.0 || self.c_cgf_ff < 0.0 {
            return Err(ResonatorError::InvalidRecord(
                "coupler capacitances must be >= 0".into(),
            ));
        }
        if !(self.z0_r_ohm > 0.0) || !(self.z0_f_ohm > 0.0) {
            return Err(ResonatorError::InvalidRecord(
                "coupler impedances must be > 0".into(),
            ));
        }
        Ok(())
    }
}

impl Default for CouplerModel {
    /// Electrostatic-simulation values for the bundled sample design:
    /// 0.44 fF pad-to-pad, 0.6 fF surplus to ground on each side, 50 Ω lines.
    fn default() -> Self {
        Self {
            c_c_ff: 0.44,
            c_cgr_ff: 0.6,
            c_cgf_ff: 0.6,
            z0_r_ohm: 50.0,
            z0_f_ohm: 50.0,
        }
    }
}

/// A resonance frequency in both angular and ordinary units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadedFrequency {
    pub omega_rad_per_s: f64,
    pub f_hz: f64,
}

impl LoadedFrequency {
    fn from_omega(omega: f64) -> Self {
        Self {
            omega_rad_per_s: omega,
            f_hz: omega / (2.0 * PI),
        }
    }
}

/// First-order loaded resonance: ω_r = (π/2)/(ℓ/v_ph + b).
///
/// At b = 0 this reduces to the bare quarter-wave value f = v_ph/(4ℓ);
/// a negative b (possible with the pad-center length convention) raises
/// the frequency.
pub fn loaded_frequency_approx(
    length_um: f64,
    v_ph_m_per_s: f64,
    b_s: f64,
) -> Result<LoadedFrequency, ResonatorError> {
    let tau = length_um * 1e-6 / v_ph_m_per_s + b_s;
    if !(tau > 0.0) {
        return Err(ResonatorError::NonPositiveDenominator(tau));
    }
    Ok(LoadedFrequency::from_omega(FRAC_PI_2 / tau))
}

/// Fundamental root of the full resonance condition
/// tan(π/2 − ωℓ/v_ph) = b·ω, found by bisection to 1 Hz inside
/// (0.5·ω_approx, 1.5·ω_approx).
pub fn loaded_frequency_exact(
    length_um: f64,
    v_ph_m_per_s: f64,
    b_s: f64,
) -> Result<LoadedFrequency, ResonatorError> {
    let approx = loaded_frequency_approx(length_um, v_ph_m_per_s, b_s)?;
    let l_over_v = length_um * 1e-6 / v_ph_m_per_s;
    // tan argument reaches −π/2 at ω = π·v_ph/ℓ; stay strictly below.
    let omega_pole = PI / l_over_v;
    let lo = 0.5 * approx.omega_rad_per_s;
    let hi = (1.5 * approx.omega_rad_per_s).min(omega_pole * (1.0 - 1e-12));
    let condition = |omega: f64| (FRAC_PI_2 - omega * l_over_v).tan() - b_s * omega;
    let omega = bisect(condition, lo, hi, 2.0 * PI, 200).map_err(|bracket| {
        ResonatorError::RootNotBracketed {
            lo_hz: bracket.lo / (2.0 * PI),
            hi_hz: bracket.hi / (2.0 * PI),
        }
    })?;
    Ok(LoadedFrequency::from_omega(omega))
}

/// Length that places the first-order resonance at a target frequency:
/// ℓ = v_ph·(π/(2ω) − b).
pub fn design_length(
    target_f_ghz: f64,
    v_ph_m_per_s: f64,
    b_s: f64,
) -> Result<f64, ResonatorError> {
    if !(target_f_ghz > 0.0) {
        return Err(ResonatorError::InvalidRecord(format!(
            "target frequency {target_f_ghz} GHz must be > 0"
        )));
    }
    let omega = 2.0 * PI * target_f_ghz * 1e9;
    let length_m = v_ph_m_per_s * (FRAC_PI_2 / omega - b_s);
    let length_um = length_m * 1e6;
    if !(length_um > 0.0) {
        return Err(ResonatorError::TargetUnreachable { length_um });
    }
    Ok(length_um)
}

/// Result of fitting the first-order model to measured frequencies.
#[derive(Debug, Clone)]
pub struct FrequencyFit {
    pub v_ph_m_per_s: f64,
    /// Loading time constant; sign unconstrained by the fit.
    pub b_s: f64,
    pub residual_rms_mhz: f64,
    /// (index, measured − model) per record, in MHz.
    pub residuals_mhz: Vec<(u32, f64)>,
}

impl FrequencyFit {
    /// Model frequency for a given length under this fit.
    pub fn model_f_ghz(&self, length_um: f64) -> Result<f64, ResonatorError> {
        Ok(loaded_frequency_approx(length_um, self.v_ph_m_per_s, self.b_s)?.f_hz / 1e9)
    }
}

/// Fit phase velocity and loading constant to measured resonators.
///
/// The first-order model is exactly linear in the inverse angular
/// frequency, 1/ω = (2/π)(ℓ/v_ph + b), so an ordinary least-squares line
/// of 1/ω against ℓ yields both parameters without iteration. Records are
/// weighted equally.
pub fn fit_vph(records: &[ResonatorRecord]) -> Result<FrequencyFit, ResonatorError> {
    let mut lengths_m = Vec::new();
    let mut inv_omega = Vec::new();
    let mut measured = Vec::new();
    for rec in records {
        rec.validate()?;
        if let Some(f_ghz) = rec.measured_f_ghz {
            lengths_m.push(rec.length_um * 1e-6);
            inv_omega.push(1.0 / (2.0 * PI * f_ghz * 1e9));
            measured.push((rec.index, f_ghz));
        }
    }
    let n = lengths_m.len();
    let spread = lengths_m.iter().cloned().fold(f64::NAN, f64::max)
        - lengths_m.iter().cloned().fold(f64::NAN, f64::min);
    if n < 2 || !(spread > 1e-12) {
        return Err(ResonatorError::SingularFit(n));
    }

    let (slope, intercept) =
        linear_fit(&lengths_m, &inv_omega).ok_or(ResonatorError::SingularFit(n))?;
    if !(slope > 0.0) {
        return Err(ResonatorError::UnphysicalFit(f64::INFINITY));
    }
    let v_ph = 2.0 / (PI * slope);
    if !(v_ph > 0.0 && v_ph < C_LIGHT) {
        return Err(ResonatorError::UnphysicalFit(v_ph));
    }
    let b_s = intercept * FRAC_PI_2;

    let mut residuals = Vec::with_capacity(n);
    let mut sum_sq = 0.0;
    for (i, &(index, f_ghz)) in measured.iter().enumerate() {
        let model = loaded_frequency_approx(lengths_m[i] * 1e6, v_ph, b_s)?;
        let res_mhz = (f_ghz * 1e9 - model.f_hz) / 1e6;
        sum_sq += res_mhz * res_mhz;
        residuals.push((index, res_mhz));
    }

    Ok(FrequencyFit {
        v_ph_m_per_s: v_ph,
        b_s,
        residual_rms_mhz: (sum_sq / n as f64).sqrt(),
        residuals_mhz: residuals,
    })
}

/// Measured frequencies of one copy of a design.
#[derive(Debug, Clone)]
pub struct FrequencyCopy {
    pub copy_id: String,
    /// (resonator index, measured frequency in GHz)
    pub points: Vec<(u32, f64)>,
}

/// Per-index deviations from the across-copy mean frequency.
#[derive(Debug, Clone)]
pub struct IndexDeviations {
    pub index: u32,
    pub mean_f_ghz: f64,
    /// (copy id, deviation in MHz)
    pub deviations_mhz: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct DeviationStats {
    pub per_index: Vec<IndexDeviations>,
    pub mean_abs_mhz: f64,
    pub max_abs_mhz: f64,
}

/// Copy-to-copy reproducibility: for every index measured on at least two
/// copies, the deviation of each copy from the per-index mean, plus the
/// mean absolute and maximum deviation over all such measurements.
pub fn deviation_stats(copies: &[FrequencyCopy]) -> Result<DeviationStats, ResonatorError> {
    let mut by_index: BTreeMap<u32, Vec<(String, f64)>> = BTreeMap::new();
    for copy in copies {
        let mut seen = std::collections::BTreeSet::new();
        for &(index, f_ghz) in &copy.points {
            if !seen.insert(index) {
                return Err(ResonatorError::DuplicateIndex {
                    copy_id: copy.copy_id.clone(),
                    index,
                });
            }
            by_index
                .entry(index)
                .or_default()
                .push((copy.copy_id.clone(), f_ghz));
        }
    }

    let mut per_index = Vec::new();
    let mut abs_sum = 0.0;
    let mut abs_count = 0usize;
    let mut max_abs = 0.0f64;
    for (index, values) in by_index {
        if values.len() < 2 {
            continue;
        }
        let mean = values.iter().map(|v| v.1).sum::<f64>() / values.len() as f64;
        let deviations: Vec<(String, f64)> = values
            .into_iter()
            .map(|(copy, f)| (copy, (f - mean) * 1e3))
            .collect();
        for &(_, d) in &deviations {
            abs_sum += d.abs();
            abs_count += 1;
            max_abs = max_abs.max(d.abs());
        }
        per_index.push(IndexDeviations {
            index,
            mean_f_ghz: mean,
            deviations_mhz: deviations,
        });
    }
    if per_index.is_empty() {
        return Err(ResonatorError::NoSharedIndices);
    }
    Ok(DeviationStats {
        per_index,
        mean_abs_mhz: abs_sum / abs_count as f64,
        max_abs_mhz: max_abs,
    })
}
