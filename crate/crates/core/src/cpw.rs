//! Quasi-static conformal-mapping models for coplanar waveguides.
//!
//! The per-length parameters follow the partial-capacitance method: the
//! line capacitance is assembled from the vacuum (magnetic) capacitance and
//! one term per dielectric layer, each expressed through a ratio of
//! complete elliptic integrals. The vacuum capacitance of a metal-facing
//! line includes the top-cover term, so the inductance automatically
//! reflects the shield across the gap.
//!
//! Moduli used:
//! - free half-space: k = a/b with a = w/2, b = w/2 + s;
//! - dielectric layer of thickness h touching the line plane:
//!   k = sinh(πa/2h)/sinh(πb/2h);
//! - metal cover at height d: k = tanh(πa/2d)/tanh(πb/2d);
//! - a dielectric slab separated from the plane by a vacuum gap d is the
//!   difference of two sinh-mapped layers, heights d+h and d.
//!
//! Ground planes are treated as laterally semi-infinite and the far side
//! of each substrate as vacuum-backed. Metal thickness, substrate
//! over-etch, and kinetic inductance are not modeled.

use std::f64::consts::PI;

use thiserror::Error;

use crate::numeric::{bisect, ellip_k_ratio};
use crate::{Facing, C_LIGHT, EPS0};

/// Gap bracket searched by [`solve_gap_for_impedance`] (µm).
pub const GAP_SEARCH_MIN_UM: f64 = 0.1;
pub const GAP_SEARCH_MAX_UM: f64 = 100.0;

#[derive(Debug, Error)]
pub enum CpwError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error(
        "impedance {target_ohm:.3} Ω unreachable for s in [{s_min_um}, {s_max_um}] µm \
         (achievable range [{z_at_min_gap:.3}, {z_at_max_gap:.3}] Ω)"
    )]
    UnreachableImpedance {
        target_ohm: f64,
        z_at_min_gap: f64,
        z_at_max_gap: f64,
        s_min_um: f64,
        s_max_um: f64,
    },
    #[error("impedance is not monotone in the gap over the search bracket")]
    NonMonotoneImpedance,
    #[error("elliptic-integral modulus {0} out of range")]
    BadModulus(f64),
}

/// Cross-sectional description of a CPW line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpwGeometry {
    /// Center conductor width (µm).
    pub w_um: f64,
    /// Gap between center conductor and ground on either side (µm).
    pub s_um: f64,
    /// Relative permittivity of the carrying substrate.
    pub eps_substrate: f64,
    /// Carrying substrate thickness (µm).
    pub h_substrate_um: f64,
    /// What the opposite chip presents across the vacuum gap.
    pub facing: Facing,
    /// Vacuum gap to the opposite chip (µm); required unless planar.
    pub d_um: Option<f64>,
    /// Relative permittivity of the opposite-chip dielectric
    /// (required for dielectric facing).
    pub eps_superstrate: Option<f64>,
    /// Opposite-chip dielectric thickness (µm); required for dielectric facing.
    pub h_superstrate_um: Option<f64>,
}

impl CpwGeometry {
    pub fn planar(w_um: f64, s_um: f64, eps_substrate: f64, h_substrate_um: f64) -> Self {
        Self {
            w_um,
            s_um,
            eps_substrate,
            h_substrate_um,
            facing: Facing::Planar,
            d_um: None,
            eps_superstrate: None,
            h_superstrate_um: None,
        }
    }

    pub fn metal_facing(
        w_um: f64,
        s_um: f64,
        eps_substrate: f64,
        h_substrate_um: f64,
        d_um: f64,
    ) -> Self {
        Self {
            w_um,
            s_um,
            eps_substrate,
            h_substrate_um,
            facing: Facing::Metal,
            d_um: Some(d_um),
            eps_superstrate: None,
            h_superstrate_um: None,
        }
    }

    pub fn dielectric_facing(
        w_um: f64,
        s_um: f64,
        eps_substrate: f64,
        h_substrate_um: f64,
        d_um: f64,
        eps_superstrate: f64,
        h_superstrate_um: f64,
    ) -> Self {
        Self {
            w_um,
            s_um,
            eps_substrate,
            h_substrate_um,
            facing: Facing::Dielectric,
            d_um: Some(d_um),
            eps_superstrate: Some(eps_superstrate),
            h_superstrate_um: Some(h_superstrate_um),
        }
    }

    /// Same cross section with a different gap width.
    pub fn with_gap(mut self, s_um: f64) -> Self {
        self.s_um = s_um;
        self
    }

    /// Same cross section with a different chip separation.
    pub fn with_separation(mut self, d_um: f64) -> Self {
        self.d_um = Some(d_um);
        self
    }

    pub fn validate(&self) -> Result<(), CpwError> {
        let bad = |msg: String| Err(CpwError::InvalidGeometry(msg));
        if !(self.w_um > 0.0) {
            return bad(format!("w = {} µm must be > 0", self.w_um));
        }
        if !(self.s_um > 0.0) {
            return bad(format!("s = {} µm must be > 0", self.s_um));
        }
        if !(self.h_substrate_um > 0.0) {
            return bad(format!("h = {} µm must be > 0", self.h_substrate_um));
        }
        if !(self.eps_substrate >= 1.0) {
            return bad(format!("eps = {} must be >= 1", self.eps_substrate));
        }
        if self.facing != Facing::Planar {
            match self.d_um {
                Some(d) if d > 0.0 => {}
                Some(d) => return bad(format!("d = {d} µm must be > 0")),
                None => return bad(format!("{} facing requires d", self.facing)),
            }
        }
        if self.facing == Facing::Dielectric {
            match self.eps_superstrate {
                Some(e) if e >= 1.0 => {}
                Some(e) => return bad(format!("opposite-chip eps = {e} must be >= 1")),
                None => return bad("dielectric facing requires eps_superstrate".into()),
            }
            match self.h_superstrate_um {
                Some(h) if h > 0.0 => {}
                Some(h) => return bad(format!("opposite-chip thickness {h} µm must be > 0")),
                None => return bad("dielectric facing requires h_superstrate".into()),
            }
        }
        Ok(())
    }
}

/// Per-length electrical parameters of a CPW line.
#[derive(Debug, Clone, Copy)]
pub struct LineParams {
    /// Capacitance per length (F/m).
    pub c_per_m: f64,
    /// Inductance per length (H/m).
    pub l_per_m: f64,
    /// Characteristic impedance (Ω).
    pub z0_ohm: f64,
    /// Effective permittivity.
    pub eps_eff: f64,
    /// Phase velocity (m/s).
    pub v_ph_m_per_s: f64,
}

/// sinh(xa)/sinh(xb) without overflow for large arguments.
fn sinh_ratio(xa: f64, xb: f64) -> f64 {
    if xa.min(xb) > 20.0 {
        (xa - xb).exp()
    } else {
        xa.sinh() / xb.sinh()
    }
}

/// Modulus of a dielectric layer of thickness h touching the line plane.
fn modulus_layer(a: f64, b: f64, h: f64) -> f64 {
    sinh_ratio(PI * a / (2.0 * h), PI * b / (2.0 * h))
}

/// Modulus of the vacuum region closed by a metal cover at height d.
fn modulus_cover(a: f64, b: f64, d: f64) -> f64 {
    (PI * a / (2.0 * d)).tanh() / (PI * b / (2.0 * d)).tanh()
}

fn kr(k: f64) -> Result<f64, CpwError> {
    if !(0.0..1.0).contains(&k) {
        return Err(CpwError::BadModulus(k));
    }
    Ok(ellip_k_ratio(k))
}

/// Per-length parameters of a CPW via partial-capacitance conformal mapping.
pub fn line_params(geom: &CpwGeometry) -> Result<LineParams, CpwError> {
    geom.validate()?;
    let a = 0.5 * geom.w_um;
    let b = a + geom.s_um;

    let r_free = kr(a / b)?;
    let r_top_vacuum = match geom.facing {
        Facing::Planar | Facing::Dielectric => r_free,
        Facing::Metal => kr(modulus_cover(a, b, geom.d_um.unwrap()))?,
    };
    // Vacuum (magnetic) capacitance: bottom half-space plus top half-space,
    // the latter shield-corrected for metal facing.
    let c_vacuum = 2.0 * EPS0 * (r_free + r_top_vacuum);

    let mut c_total = c_vacuum
        + 2.0
            * EPS0
            * (geom.eps_substrate - 1.0)
            * kr(modulus_layer(a, b, geom.h_substrate_um))?;

    if geom.facing == Facing::Dielectric {
        let d = geom.d_um.unwrap();
        let eps_top = geom.eps_superstrate.unwrap();
        let h_top = geom.h_superstrate_um.unwrap();
        let window = kr(modulus_layer(a, b, d + h_top))? - kr(modulus_layer(a, b, d))?;
        c_total += 2.0 * EPS0 * (eps_top - 1.0) * window.max(0.0);
    }

    let l_per_m = 1.0 / (C_LIGHT * C_LIGHT * c_vacuum);
    Ok(LineParams {
        c_per_m: c_total,
        l_per_m,
        z0_ohm: (l_per_m / c_total).sqrt(),
        eps_eff: c_total / c_vacuum,
        v_ph_m_per_s: 1.0 / (l_per_m * c_total).sqrt(),
    })
}

/// Find the gap width s that realizes a target impedance, holding the rest
/// of the geometry fixed. Bracketed bisection over
/// [[`GAP_SEARCH_MIN_UM`], [`GAP_SEARCH_MAX_UM`]] to |Z0 - target| < 0.01 Ω;
/// monotonicity of Z0(s) over the bracket is verified first.
pub fn solve_gap_for_impedance(template: &CpwGeometry, target_ohm: f64) -> Result<f64, CpwError> {
    template.with_gap(1.0).validate()?;
    let z_of = |s: f64| {
        line_params(&template.with_gap(s))
            .map(|p| p.z0_ohm)
            .expect("validated geometry stays valid for positive gaps")
    };

    let z_min = z_of(GAP_SEARCH_MIN_UM);
    let z_max = z_of(GAP_SEARCH_MAX_UM);
    if !(z_min..=z_max).contains(&target_ohm) {
        return Err(CpwError::UnreachableImpedance {
            target_ohm,
            z_at_min_gap: z_min,
            z_at_max_gap: z_max,
            s_min_um: GAP_SEARCH_MIN_UM,
            s_max_um: GAP_SEARCH_MAX_UM,
        });
    }

    // Z0 widens with the gap; verify over log-spaced samples.
    let mut prev = z_min;
    for i in 1..=16 {
        let s = GAP_SEARCH_MIN_UM * (GAP_SEARCH_MAX_UM / GAP_SEARCH_MIN_UM).powf(i as f64 / 16.0);
        let z = z_of(s);
        if z < prev - 1e-9 {
            return Err(CpwError::NonMonotoneImpedance);
        }
        prev = z;
    }

    let root = bisect(
        |s| z_of(s) - target_ohm,
        GAP_SEARCH_MIN_UM,
        GAP_SEARCH_MAX_UM,
        1e-12,
        200,
    )
    .map_err(|_| CpwError::NonMonotoneImpedance)?;

    debug_assert!((z_of(root) - target_ohm).abs() < 0.01);
    Ok(root)
}

/// Relative phase-velocity shift versus chip separation:
/// ratio(d) = v_ph(d) / v_ph(d_ref). The ratio at d = d_ref is exactly 1.
pub fn shift_curve(
    geom: &CpwGeometry,
    d_values_um: &[f64],
    d_ref_um: f64,
) -> Result<Vec<(f64, f64)>, CpwError> {
    if geom.facing == Facing::Planar {
        return Err(CpwError::InvalidGeometry(
            "shift curves require a facing chip (metal or dielectric)".into(),
        ));
    }
    if !(d_ref_um > 0.0) {
        return Err(CpwError::InvalidGeometry(format!(
            "reference separation {d_ref_um} µm must be > 0"
        )));
    }
    let v_ref = line_params(&geom.with_separation(d_ref_um))?.v_ph_m_per_s;
    let mut out = Vec::with_capacity(d_values_um.len());
    for &d in d_values_um {
        if !(d > 0.0) {
            return Err(CpwError::InvalidGeometry(format!(
                "separation {d} µm must be > 0"
            )));
        }
        let ratio = if d == d_ref_um {
            1.0
        } else {
            line_params(&geom.with_separation(d))?.v_ph_m_per_s / v_ref
        };
        out.push((d, ratio));
    }
    Ok(out)
}
