//! Surface-participation post-processing.
//!
//! Electric-field participation ratios of the three lossy interface
//! regions — metal–substrate (MS), metal–vacuum (MV), and
//! substrate–vacuum (SV) — arrive from an external field solver per CPW
//! geometry. This module reduces them to a total interface participation
//! p_Σ and converts a measured anchor quality factor into predicted
//! relative quality factors across conductor widths,
//! Q_pr(w) = Q_anchor · p_Σ(w_anchor) / p_Σ(w). All interfaces are
//! weighted equally.

use thiserror::Error;

use crate::Facing;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("invalid participation record: {0}")]
    InvalidRatio(String),
    #[error("no record at anchor width {w_um} µm for {facing} facing")]
    MissingAnchor { w_um: f64, facing: Facing },
    #[error("total participation at w = {w_um} µm is zero")]
    ZeroParticipation { w_um: f64 },
    #[error("width {w_query_um} µm outside the record range [{w_min_um}, {w_max_um}] µm")]
    Extrapolation {
        w_query_um: f64,
        w_min_um: f64,
        w_max_um: f64,
    },
    #[error("duplicate record at w = {w_um} µm")]
    DuplicateWidth { w_um: f64 },
    #[error("no records for {facing} facing")]
    EmptyInput { facing: Facing },
}

/// Interface participation ratios of one CPW geometry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticipationRecord {
    pub w_um: f64,
    pub facing: Facing,
    /// Metal–substrate interface participation.
    pub p_ms: f64,
    /// Metal–vacuum interface participation.
    pub p_mv: f64,
    /// Substrate–vacuum interface participation.
    pub p_sv: f64,
    pub p_bulk_substrate: Option<f64>,
    pub p_vacuum: Option<f64>,
}

impl ParticipationRecord {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.w_um > 0.0) {
            return Err(LossError::InvalidRatio(format!(
                "width {} µm must be > 0",
                self.w_um
            )));
        }
        if self.facing == Facing::Planar {
            return Err(LossError::InvalidRatio(
                "participation records are defined for metal or dielectric facing".into(),
            ));
        }
        let mut sum = 0.0;
        for (name, value) in [
            ("p_ms", Some(self.p_ms)),
            ("p_mv", Some(self.p_mv)),
            ("p_sv", Some(self.p_sv)),
            ("p_bulk_substrate", self.p_bulk_substrate),
            ("p_vacuum", self.p_vacuum),
        ] {
            if let Some(v) = value {
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(LossError::InvalidRatio(format!(
                        "{name} = {v} at w = {} µm must lie in [0, 1]",
                        self.w_um
                    )));
                }
                sum += v;
            }
        }
        if sum > 1.0 + 1e-6 {
            return Err(LossError::InvalidRatio(format!(
                "ratios at w = {} µm sum to {sum} > 1",
                self.w_um
            )));
        }
        Ok(())
    }
}

/// Total interface participation p_Σ = p_MS + p_MV + p_SV.
pub fn total_participation(rec: &ParticipationRecord) -> Result<f64, LossError> {
    rec.validate()?;
    Ok(rec.p_ms + rec.p_mv + rec.p_sv)
}

/// Relative quality-factor prediction versus conductor width, anchored to
/// one measured value.
#[derive(Debug, Clone)]
pub struct RelativeQCurve {
    pub anchor_w_um: f64,
    pub anchor_q: f64,
    pub facing: Facing,
    /// (w µm, predicted Q), ordered by increasing w.
    pub points: Vec<(f64, f64)>,
}

fn facing_records(
    records: &[ParticipationRecord],
    facing: Facing,
) -> Result<Vec<(f64, f64)>, LossError> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for rec in records.iter().filter(|r| r.facing == facing) {
        let p_sigma = total_participation(rec)?;
        if out.iter().any(|&(w, _)| (w - rec.w_um).abs() <= 1e-9) {
            return Err(LossError::DuplicateWidth { w_um: rec.w_um });
        }
        out.push((rec.w_um, p_sigma));
    }
    if out.is_empty() {
        return Err(LossError::EmptyInput { facing });
    }
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(out)
}

/// Scale the participation curve into predicted quality factors:
/// Q_pr(w) = anchor_q · p_Σ(anchor_w) / p_Σ(w). The anchor point
/// reproduces `anchor_q` exactly.
pub fn relative_q(
    records: &[ParticipationRecord],
    facing: Facing,
    anchor_w_um: f64,
    anchor_q: f64,
) -> Result<RelativeQCurve, LossError> {
    if !(anchor_q > 0.0) {
        return Err(LossError::InvalidRatio(format!(
            "anchor quality factor {anchor_q} must be > 0"
        )));
    }
    let curve = facing_records(records, facing)?;
    let p_anchor = curve
        .iter()
        .find(|&&(w, _)| (w - anchor_w_um).abs() <= 1e-9)
        .map(|&(_, p)| p)
        .ok_or(LossError::MissingAnchor {
            w_um: anchor_w_um,
            facing,
        })?;
    let mut points = Vec::with_capacity(curve.len());
    for &(w, p_sigma) in &curve {
        if !(p_sigma > 0.0) {
            return Err(LossError::ZeroParticipation { w_um: w });
        }
        points.push((w, anchor_q * (p_anchor / p_sigma)));
    }
    Ok(RelativeQCurve {
        anchor_w_um,
        anchor_q,
        facing,
        points,
    })
}

/// Log-log linear interpolation of p_Σ versus width. Queries at a stored
/// width return the stored value exactly; queries outside the record range
/// are an error.
pub fn interpolate_p_sigma(
    records: &[ParticipationRecord],
    facing: Facing,
    w_query_um: f64,
) -> Result<f64, LossError> {
    let curve = facing_records(records, facing)?;
    if let Some(&(_, p)) = curve.iter().find(|&&(w, _)| (w - w_query_um).abs() <= 1e-9) {
        return Ok(p);
    }
    let w_min = curve[0].0;
    let w_max = curve[curve.len() - 1].0;
    if w_query_um < w_min || w_query_um > w_max {
        return Err(LossError::Extrapolation {
            w_query_um,
            w_min_um: w_min,
            w_max_um: w_max,
        });
    }
    let hi = curve.iter().position(|&(w, _)| w > w_query_um).unwrap();
    let (w0, p0) = curve[hi - 1];
    let (w1, p1) = curve[hi];
    if !(p0 > 0.0) || !(p1 > 0.0) {
        return Err(LossError::ZeroParticipation {
            w_um: if p0 > 0.0 { w1 } else { w0 },
        });
    }
    let t = (w_query_um.ln() - w0.ln()) / (w1.ln() - w0.ln());
    Ok((p0.ln() + t * (p1.ln() - p0.ln())).exp())
}
