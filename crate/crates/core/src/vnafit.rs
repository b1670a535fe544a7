//! Notch-type S21 fitting and photon-number calibration.
//!
//! A resonator side-coupled to a feedline produces the transmission dip
//!
//! ```text
//! S21(f) = a·e^{iα}·e^{-2πi f τ} · [ 1 - (Q_l/|Q_c|)·e^{iφ} / (1 + 2i Q_l (f/f0 - 1)) ]
//! ```
//!
//! [`fit_notch`] inverts this model in stages: electrical-delay removal
//! anchored on the trace wings, an algebraic circle fit in the complex
//! plane with one geometric refinement step, a phase-versus-frequency
//! arctangent fit for f0 and Q_l, and finally the diameter correction with
//! the rotation φ, which makes the extracted Q_i insensitive to impedance
//! mismatch. [`photon_number`] converts an applied power into the mean
//! intra-resonator photon number.

use std::f64::consts::PI;

pub use num_complex::Complex64;
use thiserror::Error;

use crate::numeric::{
    circle_rms, fit_circle_taubin, golden_min, linear_fit, refine_circle_geometric, solve3,
    solve_dense, unwrap_phases,
};
use crate::HBAR;

/// Minimum number of points a fittable trace must hold.
pub const MIN_TRACE_POINTS: usize = 50;

/// Fraction of the trace, split over the two outer ends, used for the
/// electrical-delay estimate and the off-resonant noise floor.
pub const WING_FRACTION: f64 = 0.2;

/// A detected dip must exceed this multiple of the off-resonant scatter.
pub const DIP_SNR_THRESHOLD: f64 = 5.0;

#[derive(Debug, Error)]
pub enum NotchError {
    #[error("trace holds {0} points, need at least {MIN_TRACE_POINTS}")]
    TooShort(usize),
    #[error("trace lengths differ: {freqs} frequencies vs {samples} samples")]
    LengthMismatch { freqs: usize, samples: usize },
    #[error("frequencies must be strictly increasing and finite")]
    BadFrequencyAxis,
    #[error(
        "no resonance: circle diameter {diameter:.3e} is below {DIP_SNR_THRESHOLD}x \
         the off-resonant scatter {noise:.3e}"
    )]
    NoResonance { diameter: f64, noise: f64 },
    #[error("degenerate circle fit")]
    DegenerateCircle,
    #[error(
        "phase fit did not converge after {iterations} iterations \
         (f0 = {f0_hz:.6e} Hz, Q_l = {q_l:.3e})"
    )]
    PhaseFitNonConvergent {
        iterations: usize,
        f0_hz: f64,
        q_l: f64,
    },
    #[error("unphysical fit: {0}")]
    UnphysicalFit(String),
    #[error("zero total linewidth")]
    ZeroLinewidth,
}

/// Frequency-indexed complex S21 samples with the drive conditions.
#[derive(Debug, Clone)]
pub struct ComplexTrace {
    pub freqs_hz: Vec<f64>,
    pub s21: Vec<Complex64>,
    pub vna_power_dbm: Option<f64>,
    pub line_attenuation_db: Option<f64>,
}

impl ComplexTrace {
    pub fn new(freqs_hz: Vec<f64>, s21: Vec<Complex64>) -> Result<Self, NotchError> {
        if freqs_hz.len() != s21.len() {
            return Err(NotchError::LengthMismatch {
                freqs: freqs_hz.len(),
                samples: s21.len(),
            });
        }
        if freqs_hz.len() < MIN_TRACE_POINTS {
            return Err(NotchError::TooShort(freqs_hz.len()));
        }
        if freqs_hz.iter().any(|f| !f.is_finite())
            || freqs_hz.windows(2).any(|w| !(w[1] > w[0]))
        {
            return Err(NotchError::BadFrequencyAxis);
        }
        Ok(Self {
            freqs_hz,
            s21,
            vna_power_dbm: None,
            line_attenuation_db: None,
        })
    }

    pub fn with_drive(mut self, vna_power_dbm: f64, line_attenuation_db: f64) -> Self {
        self.vna_power_dbm = Some(vna_power_dbm);
        self.line_attenuation_db = Some(line_attenuation_db);
        self
    }
}

/// Background transmission of the line: amplitude, phase offset, and
/// electrical delay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Background {
    pub amplitude: f64,
    pub phase_rad: f64,
    pub delay_s: f64,
}

/// Extracted notch-resonator parameters.
#[derive(Debug, Clone)]
pub struct NotchFit {
    pub f0_hz: f64,
    pub q_l: f64,
    /// Magnitude of the coupling quality factor.
    pub q_c_mag: f64,
    /// Impedance-mismatch rotation of the resonance circle (rad).
    pub phi_rad: f64,
    pub q_i: f64,
    pub background: Background,
    /// RMS of |data − model| over the trace.
    pub rms_residual: f64,
}

/// Closed-form notch model parameters (forward direction).
#[derive(Debug, Clone, Copy)]
pub struct NotchParams {
    pub f0_hz: f64,
    pub q_l: f64,
    pub q_c_mag: f64,
    pub phi_rad: f64,
    pub amplitude: f64,
    pub phase_rad: f64,
    pub delay_s: f64,
}

impl NotchFit {
    pub fn params(&self) -> NotchParams {
        NotchParams {
            f0_hz: self.f0_hz,
            q_l: self.q_l,
            q_c_mag: self.q_c_mag,
            phi_rad: self.phi_rad,
            amplitude: self.background.amplitude,
            phase_rad: self.background.phase_rad,
            delay_s: self.background.delay_s,
        }
    }
}

/// Evaluate the notch model at one frequency.
pub fn notch_s21(p: &NotchParams, f_hz: f64) -> Complex64 {
    let env = Complex64::from_polar(p.amplitude, p.phase_rad - 2.0 * PI * f_hz * p.delay_s);
    let denom = Complex64::new(1.0, 2.0 * p.q_l * (f_hz / p.f0_hz - 1.0));
    let dip = Complex64::from_polar(p.q_l / p.q_c_mag, p.phi_rad) / denom;
    env * (Complex64::new(1.0, 0.0) - dip)
}

/// Generate a trace from the model over a frequency grid.
pub fn synth_trace(p: &NotchParams, freqs_hz: &[f64]) -> Vec<Complex64> {
    freqs_hz.iter().map(|&f| notch_s21(p, f)).collect()
}

fn wing_indices(n: usize) -> Vec<usize> {
    let per_side = ((WING_FRACTION * n as f64 / 2.0).round() as usize).max(5);
    let mut idx: Vec<usize> = (0..per_side.min(n)).collect();
    idx.extend(n.saturating_sub(per_side)..n);
    idx.dedup();
    idx
}

fn remove_delay(trace: &ComplexTrace, delay_s: f64) -> Vec<Complex64> {
    trace
        .freqs_hz
        .iter()
        .zip(&trace.s21)
        .map(|(&f, &z)| z * Complex64::from_polar(1.0, 2.0 * PI * f * delay_s))
        .collect()
}

fn as_points(zs: &[Complex64]) -> Vec<(f64, f64)> {
    zs.iter().map(|z| (z.re, z.im)).collect()
}

/// Phase model θ(f) = θ0 + 2·arctan(2 Q_l (1 − f/f0)), fitted by
/// Levenberg–Marquardt on (f0, Q_l, θ0).
fn fit_phase(
    freqs: &[f64],
    theta: &[f64],
    f0_init: f64,
    q_l_init: f64,
    theta0_init: f64,
) -> Result<(f64, f64, f64), NotchError> {
    let n = freqs.len();
    let cost = |f0: f64, ql: f64, th0: f64| -> f64 {
        freqs
            .iter()
            .zip(theta)
            .map(|(&f, &th)| {
                let r = th - (th0 + 2.0 * (2.0 * ql * (1.0 - f / f0)).atan());
                r * r
            })
            .sum()
    };

    let mut f0 = f0_init;
    let mut ql = q_l_init.max(1.0);
    let mut th0 = theta0_init;
    let mut lambda = 1e-3;
    let mut current = cost(f0, ql, th0);
    let mut iterations = 0usize;

    for _ in 0..100 {
        iterations += 1;
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for i in 0..n {
            let f = freqs[i];
            let u = 2.0 * ql * (1.0 - f / f0);
            let denom = 1.0 + u * u;
            let r = theta[i] - (th0 + 2.0 * u.atan());
            // derivatives of the model
            let d_f0 = 2.0 / denom * (2.0 * ql * f / (f0 * f0));
            let d_ql = 2.0 / denom * (2.0 * (1.0 - f / f0));
            let d_th0 = 1.0;
            let j = [d_f0, d_ql, d_th0];
            for a in 0..3 {
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
                jtr[a] += j[a] * r;
            }
        }

        let mut improved = false;
        for _ in 0..30 {
            let mut damped = jtj;
            for d in 0..3 {
                damped[d][d] *= 1.0 + lambda;
            }
            if let Some(step) = solve3(damped, jtr) {
                let f0_new = f0 + step[0];
                let ql_new = ql + step[1];
                let th0_new = th0 + step[2];
                if f0_new > 0.0 && ql_new > 0.0 {
                    let next = cost(f0_new, ql_new, th0_new);
                    if next < current {
                        let converged = (f0_new - f0).abs() <= 1e-12 * f0.abs()
                            && (ql_new - ql).abs() <= 1e-10 * ql.abs();
                        f0 = f0_new;
                        ql = ql_new;
                        th0 = th0_new;
                        current = next;
                        lambda = (lambda / 3.0).max(1e-12);
                        improved = true;
                        if converged {
                            return Ok((f0, ql, th0));
                        }
                        break;
                    }
                }
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
        if !improved {
            // stalled: either converged or stuck
            if current / (n as f64) < 1e-4 || lambda > 1e12 {
                return Ok((f0, ql, th0));
            }
            return Err(NotchError::PhaseFitNonConvergent {
                iterations,
                f0_hz: f0,
                q_l: ql,
            });
        }
    }
    Ok((f0, ql, th0))
}

/// Joint least-squares polish of all seven model parameters against the
/// complex data. The staged estimates are good initial values; the joint
/// fit removes their residual correlations (in particular between the
/// electrical delay and the quality factors, which the narrow span leaves
/// poorly separated in the staged pipeline).
fn refine_full(freqs: &[f64], data: &[Complex64], start: NotchParams) -> NotchParams {
    let n = freqs.len();
    let span = freqs[n - 1] - freqs[0];
    let f_mid = 0.5 * (freqs[0] + freqs[n - 1]);
    let linewidth = start.f0_hz / start.q_l;

    // Scaled parameters, all O(1). The phase is referenced to the span
    // center: x[5] holds the mid-span phase and moves independently of the
    // delay, which otherwise couples to the data mostly through a global
    // rotation degenerate with the phase offset.
    let to_params = |x: &[f64]| {
        let delay_s = start.delay_s + x[6] / (2.0 * PI * span);
        NotchParams {
            f0_hz: start.f0_hz + x[0] * linewidth,
            q_l: start.q_l * x[1].exp(),
            q_c_mag: start.q_c_mag * x[2].exp(),
            phi_rad: x[3],
            amplitude: start.amplitude * x[4].exp(),
            phase_rad: x[5] + 2.0 * PI * f_mid * (delay_s - start.delay_s),
            delay_s,
        }
    };
    let cost = |x: &[f64]| -> f64 {
        let p = to_params(x);
        freqs
            .iter()
            .zip(data)
            .map(|(&f, d)| (d - notch_s21(&p, f)).norm_sqr())
            .sum()
    };

    let mut x = [0.0f64; 7];
    x[3] = start.phi_rad;
    x[5] = start.phase_rad;
    let mut current = cost(&x);
    let mut lambda = 1e-3;
    let h = 1e-6;

    for _ in 0..60 {
        // residual vector and numerical Jacobian (central differences)
        let p0 = to_params(&x);
        let mut jtj = vec![vec![0.0f64; 7]; 7];
        let mut jtr = vec![0.0f64; 7];
        let mut columns: Vec<Vec<Complex64>> = Vec::with_capacity(7);
        for k in 0..7 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            let pp = to_params(&xp);
            let pm = to_params(&xm);
            columns.push(
                freqs
                    .iter()
                    .map(|&f| (notch_s21(&pp, f) - notch_s21(&pm, f)) / (2.0 * h))
                    .collect(),
            );
        }
        for (i, &f) in freqs.iter().enumerate() {
            let r = data[i] - notch_s21(&p0, f);
            for a in 0..7 {
                let ja = columns[a][i];
                jtr[a] += ja.re * r.re + ja.im * r.im;
                for b in a..7 {
                    let jb = columns[b][i];
                    jtj[a][b] += ja.re * jb.re + ja.im * jb.im;
                }
            }
        }
        for a in 0..7 {
            for b in 0..a {
                jtj[a][b] = jtj[b][a];
            }
        }

        let mut improved = false;
        for _ in 0..20 {
            let mut damped = jtj.clone();
            for d in 0..7 {
                damped[d][d] *= 1.0 + lambda;
            }
            if let Some(step) = solve_dense(damped, jtr.clone()) {
                let mut xn = x;
                for k in 0..7 {
                    xn[k] += step[k];
                }
                let next = cost(&xn);
                if next.is_finite() && next < current {
                    let tiny = step.iter().all(|s| s.abs() < 1e-11);
                    x = xn;
                    current = next;
                    lambda = (lambda / 3.0).max(1e-12);
                    improved = true;
                    if tiny {
                        return to_params(&x);
                    }
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                break;
            }
        }
        if !improved {
            break;
        }
    }
    to_params(&x)
}

/// Fit the notch model to a complex trace.
pub fn fit_notch(trace: &ComplexTrace) -> Result<NotchFit, NotchError> {
    let n = trace.freqs_hz.len();
    if trace.freqs_hz.len() != trace.s21.len() {
        return Err(NotchError::LengthMismatch {
            freqs: trace.freqs_hz.len(),
            samples: trace.s21.len(),
        });
    }
    if n < MIN_TRACE_POINTS {
        return Err(NotchError::TooShort(n));
    }
    if trace.freqs_hz.iter().any(|f| !f.is_finite())
        || trace.freqs_hz.windows(2).any(|w| !(w[1] > w[0]))
    {
        return Err(NotchError::BadFrequencyAxis);
    }

    let wings = wing_indices(n);

    // Electrical delay: linear phase fit on the wings, then a small
    // refinement that minimizes the circle-fit residual (the wing estimate
    // carries a bias from the resonance tails).
    let raw_phases: Vec<f64> = trace.s21.iter().map(|z| z.arg()).collect();
    let unwrapped = unwrap_phases(&raw_phases);
    let wing_f: Vec<f64> = wings.iter().map(|&i| trace.freqs_hz[i]).collect();
    let wing_phase: Vec<f64> = wings.iter().map(|&i| unwrapped[i]).collect();
    let (slope, _) = linear_fit(&wing_f, &wing_phase).ok_or(NotchError::BadFrequencyAxis)?;
    let tau_wing = -slope / (2.0 * PI);

    // Dip detection before any refinement, on the wing-estimate-corrected
    // data. Adjacent-sample differences on the wings cancel the smooth
    // resonance tail and leave the noise (median |Δz|/√2 estimates the
    // per-sample scatter).
    let probe = remove_delay(trace, tau_wing);
    let wing_z: Vec<Complex64> = wings.iter().map(|&i| probe[i]).collect();
    let per_side = wing_z.len() / 2;
    let mut deviations: Vec<f64> = Vec::with_capacity(wing_z.len());
    for segment in [&wing_z[..per_side], &wing_z[per_side..]] {
        for pair in segment.windows(2) {
            deviations.push((pair[1] - pair[0]).norm() / std::f64::consts::SQRT_2);
        }
    }
    deviations.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let scale = probe.iter().map(|z| z.norm()).sum::<f64>() / n as f64;
    let noise = deviations[deviations.len() / 2].max(1e-12 * scale.max(f64::MIN_POSITIVE));
    let probe_circle =
        fit_circle_taubin(&as_points(&probe)).ok_or(NotchError::DegenerateCircle)?;
    if 2.0 * probe_circle.r <= DIP_SNR_THRESHOLD * noise {
        return Err(NotchError::NoResonance {
            diameter: 2.0 * probe_circle.r,
            noise,
        });
    }

    // Refine the delay by minimizing the circle-fit residual; the wing
    // estimate carries a small bias from the resonance tails.
    let span = trace.freqs_hz[n - 1] - trace.freqs_hz[0];
    let window = 0.2 / span;
    let delay_s = golden_min(
        |tau| {
            let pts = as_points(&remove_delay(trace, tau));
            match fit_circle_taubin(&pts) {
                Some(c) => circle_rms(&pts, c),
                None => f64::INFINITY,
            }
        },
        tau_wing - window,
        tau_wing + window,
        80,
    );

    let corrected = remove_delay(trace, delay_s);
    let pts = as_points(&corrected);
    let circle = fit_circle_taubin(&pts).ok_or(NotchError::DegenerateCircle)?;
    let circle = refine_circle_geometric(&pts, circle);
    if !(circle.r > 0.0) || !circle.cx.is_finite() || !circle.cy.is_finite() {
        return Err(NotchError::DegenerateCircle);
    }

    // Phase of the centered data and the arctangent fit.
    let center = Complex64::new(circle.cx, circle.cy);
    let centered_phase: Vec<f64> = corrected.iter().map(|z| (z - center).arg()).collect();
    let theta = unwrap_phases(&centered_phase);

    let wing_corrected: Vec<Complex64> = wings.iter().map(|&i| corrected[i]).collect();
    let z_off_guess = 0.5
        * (wing_corrected[..per_side].iter().sum::<Complex64>() / per_side.max(1) as f64
            + wing_corrected[per_side..].iter().sum::<Complex64>()
                / (wing_corrected.len() - per_side).max(1) as f64);
    let i_res = corrected
        .iter()
        .enumerate()
        .max_by(|a, b| {
            (a.1 - z_off_guess)
                .norm()
                .partial_cmp(&(b.1 - z_off_guess).norm())
                .unwrap()
        })
        .map(|(i, _)| i)
        .unwrap();
    let f0_init = trace.freqs_hz[i_res];
    let m = (n / 50).max(1);
    let i_lo = i_res.saturating_sub(m);
    let i_hi = (i_res + m).min(n - 1);
    let slope_theta =
        (theta[i_hi] - theta[i_lo]) / (trace.freqs_hz[i_hi] - trace.freqs_hz[i_lo]);
    let q_l_init = (-slope_theta * f0_init / 4.0).abs().max(10.0);
    let theta0_init = theta[i_res];

    let (f0, q_l, theta0) = fit_phase(&trace.freqs_hz, &theta, f0_init, q_l_init, theta0_init)?;
    if !(f0 > 0.0) || !(q_l > 0.0) {
        return Err(NotchError::UnphysicalFit(format!(
            "f0 = {f0:.3e} Hz, Q_l = {q_l:.3e}"
        )));
    }

    // Off-resonant point on the fitted circle, diametrically opposite the
    // resonance point at theta0; it carries the background amplitude and
    // phase.
    let z_off = center - Complex64::from_polar(circle.r, theta0);
    let amplitude = z_off.norm();
    if !(amplitude > 0.0) {
        return Err(NotchError::DegenerateCircle);
    }
    let alpha = z_off.arg();

    // Diameter correction with the mismatch rotation φ.
    let phi = (Complex64::new(1.0, 0.0) - center / z_off).arg();
    let q_c_mag = q_l * amplitude / (2.0 * circle.r);

    // Joint polish of all parameters against the raw complex data.
    let staged = NotchParams {
        f0_hz: f0,
        q_l,
        q_c_mag,
        phi_rad: phi,
        amplitude,
        phase_rad: alpha,
        delay_s,
    };
    let refined = refine_full(&trace.freqs_hz, &trace.s21, staged);
    let phi = refined.phi_rad.sin().atan2(refined.phi_rad.cos());
    let q_l = refined.q_l;
    let q_c_mag = refined.q_c_mag;
    if !(q_l > 0.0) || !(q_c_mag > 0.0) || !(refined.f0_hz > 0.0) {
        return Err(NotchError::UnphysicalFit(format!(
            "f0 = {:.3e} Hz, Q_l = {q_l:.3e}, |Q_c| = {q_c_mag:.3e}",
            refined.f0_hz
        )));
    }
    let inv_qi = 1.0 / q_l - phi.cos() / q_c_mag;
    if !(inv_qi > 0.0) {
        return Err(NotchError::UnphysicalFit(format!(
            "1/Q_i = {inv_qi:.3e} (Q_l = {q_l:.3e}, |Q_c| = {q_c_mag:.3e}, phi = {phi:.3})"
        )));
    }
    let q_i = 1.0 / inv_qi;

    let background = Background {
        amplitude: refined.amplitude,
        phase_rad: refined.phase_rad.sin().atan2(refined.phase_rad.cos()),
        delay_s: refined.delay_s,
    };
    let fit = NotchFit {
        f0_hz: refined.f0_hz,
        q_l,
        q_c_mag,
        phi_rad: phi,
        q_i,
        background,
        rms_residual: 0.0,
    };
    let model = synth_trace(&fit.params(), &trace.freqs_hz);
    let rms = (trace
        .s21
        .iter()
        .zip(&model)
        .map(|(d, m)| (d - m).norm_sqr())
        .sum::<f64>()
        / n as f64)
        .sqrt();

    Ok(NotchFit {
        rms_residual: rms,
        ..fit
    })
}

/// Power delivered to the sample input: subtract the line attenuation from
/// the source power and convert dBm to watts.
pub fn applied_power_w(vna_power_dbm: f64, line_attenuation_db: f64) -> f64 {
    1e-3 * 10f64.powf((vna_power_dbm - line_attenuation_db) / 10.0)
}

/// Coupling/loss rates with the resulting mean intra-resonator photon
/// number.
#[derive(Debug, Clone, Copy)]
pub struct PhotonCalc {
    /// Coupling rate to the feedline, ω0/|Q_c| (rad/s).
    pub kappa_rad_per_s: f64,
    /// Internal loss rate, ω0/Q_i (rad/s).
    pub gamma_rad_per_s: f64,
    pub p_app_w: f64,
    pub n_int: f64,
}

/// Photon number from explicit rates:
/// n = 2 κ P_app / (ħ ω0 (κ + γ)²).
pub fn photon_number_from_rates(
    omega0_rad_per_s: f64,
    kappa_rad_per_s: f64,
    gamma_rad_per_s: f64,
    p_app_w: f64,
) -> Result<f64, NotchError> {
    let total = kappa_rad_per_s + gamma_rad_per_s;
    if !(total > 0.0) {
        return Err(NotchError::ZeroLinewidth);
    }
    Ok(2.0 * kappa_rad_per_s * p_app_w / (HBAR * omega0_rad_per_s * total * total))
}

/// Photon number for a fitted resonance at a given applied power.
pub fn photon_number(fit: &NotchFit, p_app_w: f64) -> Result<PhotonCalc, NotchError> {
    let omega0 = 2.0 * PI * fit.f0_hz;
    let kappa = omega0 / fit.q_c_mag;
    let gamma = omega0 / fit.q_i;
    let n_int = photon_number_from_rates(omega0, kappa, gamma, p_app_w)?;
    Ok(PhotonCalc {
        kappa_rad_per_s: kappa,
        gamma_rad_per_s: gamma,
        p_app_w,
        n_int,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn q_l_of(q_i: f64, q_c: f64, phi: f64) -> f64 {
        1.0 / (1.0 / q_i + phi.cos() / q_c)
    }

    fn default_params(phi: f64) -> NotchParams {
        let q_i = 5e5;
        let q_c = 2e6;
        NotchParams {
            f0_hz: 5e9,
            q_l: q_l_of(q_i, q_c, phi),
            q_c_mag: q_c,
            phi_rad: phi,
            amplitude: 0.82,
            phase_rad: 0.6,
            delay_s: 4.2e-8,
        }
    }

    fn grid(p: &NotchParams, n_linewidths: f64, n: usize) -> Vec<f64> {
        let half_span = 0.5 * n_linewidths * p.f0_hz / p.q_l;
        (0..n)
            .map(|i| p.f0_hz - half_span + 2.0 * half_span * i as f64 / (n - 1) as f64)
            .collect()
    }

    #[test]
    fn noise_free_recovery() {
        let p = default_params(0.0);
        let freqs = grid(&p, 5.0, 201);
        let trace = ComplexTrace::new(freqs.clone(), synth_trace(&p, &freqs)).unwrap();
        let fit = fit_notch(&trace).unwrap();
        assert_relative_eq!(fit.f0_hz, p.f0_hz, max_relative = 1e-6);
        assert_relative_eq!(fit.q_l, p.q_l, max_relative = 1e-3);
        assert_relative_eq!(fit.q_c_mag, p.q_c_mag, max_relative = 1e-3);
        assert_relative_eq!(fit.q_i, 5e5, max_relative = 1e-3);
        assert!(fit.phi_rad.abs() < 2e-3, "phi = {}", fit.phi_rad);
        assert_relative_eq!(fit.background.amplitude, p.amplitude, max_relative = 1e-3);
        assert_relative_eq!(fit.background.delay_s, p.delay_s, max_relative = 1e-3);
    }

    #[test]
    fn mismatch_rotation_recovered_without_biasing_qi() {
        let p = default_params(0.3);
        let freqs = grid(&p, 5.0, 201);
        let trace = ComplexTrace::new(freqs.clone(), synth_trace(&p, &freqs)).unwrap();
        let fit = fit_notch(&trace).unwrap();
        assert!((fit.phi_rad - 0.3).abs() < 0.02, "phi = {}", fit.phi_rad);
        assert_relative_eq!(fit.q_i, 5e5, max_relative = 5e-3);
    }

    #[test]
    fn fit_invariants_hold() {
        let p = default_params(0.2);
        let freqs = grid(&p, 5.0, 201);
        let trace = ComplexTrace::new(freqs.clone(), synth_trace(&p, &freqs)).unwrap();
        let fit = fit_notch(&trace).unwrap();
        let lhs = 1.0 / fit.q_l;
        let rhs = 1.0 / fit.q_i + fit.phi_rad.cos() / fit.q_c_mag;
        assert_relative_eq!(lhs, rhs, max_relative = 1e-9);
        assert!(fit.q_l <= fit.q_i);
        assert!(fit.q_l > 0.0 && fit.q_i > 0.0 && fit.q_c_mag > 0.0);
    }

    #[test]
    fn round_trip_residual_below_noise_floor() {
        let p = default_params(0.15);
        let freqs = grid(&p, 5.0, 201);
        let trace = ComplexTrace::new(freqs.clone(), synth_trace(&p, &freqs)).unwrap();
        let fit = fit_notch(&trace).unwrap();
        assert!(
            fit.rms_residual < 1e-4 * p.amplitude,
            "rms = {}",
            fit.rms_residual
        );
    }

    #[test]
    fn global_scale_and_rotation_invariance() {
        let p = default_params(0.1);
        let freqs = grid(&p, 5.0, 201);
        let base = fit_notch(&ComplexTrace::new(freqs.clone(), synth_trace(&p, &freqs)).unwrap())
            .unwrap();
        let mut scaled = p;
        scaled.amplitude *= 3.7;
        scaled.phase_rad += 1.9;
        let other =
            fit_notch(&ComplexTrace::new(freqs.clone(), synth_trace(&scaled, &freqs)).unwrap())
                .unwrap();
        assert_relative_eq!(base.f0_hz, other.f0_hz, max_relative = 1e-9);
        assert_relative_eq!(base.q_l, other.q_l, max_relative = 1e-3);
        assert_relative_eq!(base.q_c_mag, other.q_c_mag, max_relative = 1e-3);
        assert_relative_eq!(base.q_i, other.q_i, max_relative = 1e-3);
    }

    #[test]
    fn pure_noise_has_no_resonance() {
        // deterministic pseudo-noise around a constant background
        let n = 201;
        let freqs: Vec<f64> = (0..n).map(|i| 5e9 + 1e3 * i as f64).collect();
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 1e-4
        };
        let s21: Vec<Complex64> = (0..n)
            .map(|_| Complex64::new(0.8 + next(), next()))
            .collect();
        let trace = ComplexTrace::new(freqs, s21).unwrap();
        assert!(matches!(
            fit_notch(&trace),
            Err(NotchError::NoResonance { .. }) | Err(NotchError::DegenerateCircle)
        ));
    }

    #[test]
    fn short_trace_rejected() {
        let freqs: Vec<f64> = (0..10).map(|i| 1e9 + i as f64).collect();
        let s21 = vec![Complex64::new(1.0, 0.0); 10];
        assert!(matches!(
            ComplexTrace::new(freqs, s21),
            Err(NotchError::TooShort(10))
        ));
    }

    #[test]
    fn applied_power_examples() {
        assert_relative_eq!(applied_power_w(0.0, 0.0), 1e-3, max_relative = 1e-12);
        assert_relative_eq!(applied_power_w(-30.0, 90.0), 1e-15, max_relative = 1e-12);
        assert_relative_eq!(applied_power_w(10.0, 10.0), 1e-3, max_relative = 1e-12);
    }

    #[test]
    fn photon_number_zero_power() {
        let n = photon_number_from_rates(2.0 * PI * 5e9, 1e4, 3e4, 0.0).unwrap();
        assert_eq!(n, 0.0);
    }

    #[test]
    fn photon_number_linear_in_power() {
        let omega = 2.0 * PI * 5e9;
        let n1 = photon_number_from_rates(omega, 1.5e4, 6e4, 1e-15).unwrap();
        let n2 = photon_number_from_rates(omega, 1.5e4, 6e4, 2e-15).unwrap();
        assert_eq!(n2, 2.0 * n1);
    }

    #[test]
    fn photon_number_proportional_to_kappa_at_fixed_total() {
        let omega = 2.0 * PI * 5e9;
        // both pairs sum to exactly 4e4
        let n1 = photon_number_from_rates(omega, 1e4, 3e4, 1e-15).unwrap();
        let n2 = photon_number_from_rates(omega, 2e4, 2e4, 1e-15).unwrap();
        assert_eq!(n2, 2.0 * n1);
    }

    #[test]
    fn photon_number_scales_inversely_with_rates() {
        let omega = 2.0 * PI * 5e9;
        let n1 = photon_number_from_rates(omega, 1e4, 3e4, 1e-15).unwrap();
        let n2 = photon_number_from_rates(omega, 2e4, 6e4, 1e-15).unwrap();
        assert_relative_eq!(n1, 2.0 * n2, max_relative = 1e-12);
    }

    #[test]
    fn zero_linewidth_rejected() {
        assert!(matches!(
            photon_number_from_rates(2.0 * PI * 5e9, 0.0, 0.0, 1e-15),
            Err(NotchError::ZeroLinewidth)
        ));
    }
}
