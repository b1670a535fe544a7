//! Shared numerical kernels: elliptic integrals, bracketed root finding,
//! golden-section minimization, straight-line regression, phase unwrapping,
//! and circle fitting.

use std::f64::consts::PI;

/// Arithmetic-geometric mean of two non-negative numbers.
fn agm(a0: f64, b0: f64) -> f64 {
    let mut a = a0;
    let mut b = b0;
    for _ in 0..200 {
        if (a - b).abs() <= 1e-15 * a.abs() {
            break;
        }
        let an = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = an;
    }
    0.5 * (a + b)
}

/// Complete elliptic integral of the first kind K(k), modulus convention.
///
/// Computed by AGM iteration; accurate to machine precision for 0 <= k < 1.
pub fn ellip_k(k: f64) -> f64 {
    assert!(
        (0.0..1.0).contains(&k),
        "modulus must satisfy 0 <= k < 1, got {k}"
    );
    let kp = ((1.0 - k) * (1.0 + k)).sqrt();
    PI / (2.0 * agm(1.0, kp))
}

/// Ratio K(k)/K(k') with k' = sqrt(1 - k²), the quantity entering
/// partial-capacitance conformal mapping. Returns 0 at k = 0.
pub fn ellip_k_ratio(k: f64) -> f64 {
    assert!(
        (0.0..1.0).contains(&k),
        "modulus must satisfy 0 <= k < 1, got {k}"
    );
    if k == 0.0 {
        return 0.0;
    }
    let kp = ((1.0 - k) * (1.0 + k)).sqrt();
    // K(k)/K(k') = agm(1, k) / agm(1, k')
    agm(1.0, k) / agm(1.0, kp)
}

/// A bracket that failed to contain a sign change.
#[derive(Debug, Clone, Copy)]
pub struct NoSignChange {
    pub lo: f64,
    pub hi: f64,
    pub f_lo: f64,
    pub f_hi: f64,
}

/// Bisection on [lo, hi]. Requires f(lo) and f(hi) to differ in sign;
/// returns the bracket midpoint once the bracket is narrower than `x_tol`.
pub fn bisect<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    x_tol: f64,
    max_iter: usize,
) -> Result<f64, NoSignChange> {
    let mut lo = lo;
    let mut hi = hi;
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if !f_lo.is_finite() || !f_hi.is_finite() || f_lo.signum() == f_hi.signum() {
        return Err(NoSignChange { lo, hi, f_lo, f_hi });
    }
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= x_tol || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Golden-section minimization of a unimodal function on [lo, hi].
pub fn golden_min<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, iters: usize) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut a = lo;
    let mut b = hi;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Least-squares straight line y = slope·x + intercept.
///
/// Returns `None` when fewer than two points are given or all abscissae
/// coincide.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    assert_eq!(xs.len(), ys.len(), "abscissae/ordinate length mismatch");
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let xm = xs.iter().sum::<f64>() / nf;
    let ym = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..n {
        let dx = xs[i] - xm;
        sxx += dx * dx;
        sxy += dx * (ys[i] - ym);
    }
    if sxx <= 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    Some((slope, ym - slope * xm))
}

/// Unwrap a phase sequence by removing 2π jumps between neighbours.
pub fn unwrap_phases(phases: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(phases.len());
    let mut offset = 0.0;
    for (i, &p) in phases.iter().enumerate() {
        if i > 0 {
            let d = p + offset - out[i - 1];
            offset -= 2.0 * PI * (d / (2.0 * PI)).round();
        }
        out.push(p + offset);
    }
    out
}

/// Solve a 3×3 linear system by Gaussian elimination with partial pivoting.
pub fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [
        [a[0][0], a[0][1], a[0][2], b[0]],
        [a[1][0], a[1][1], a[1][2], b[1]],
        [a[2][0], a[2][1], a[2][2], b[2]],
    ];
    for col in 0..3 {
        let mut pivot = col;
        for row in col + 1..3 {
            if m[row][col].abs() > m[pivot][col].abs() {
                pivot = row;
            }
        }
        if m[pivot][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, pivot);
        for row in col + 1..3 {
            let factor = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    let mut x = [0.0; 3];
    for col in (0..3).rev() {
        let mut acc = m[col][3];
        for k in col + 1..3 {
            acc -= m[col][k] * x[k];
        }
        x[col] = acc / m[col][col];
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Solve a small dense linear system by Gaussian elimination with partial
/// pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert!(a.len() == n && a.iter().all(|row| row.len() == n));
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row][col].abs() > a[pivot][col].abs() {
                pivot = row;
            }
        }
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in col + 1..n {
            acc -= a[col][k] * x[k];
        }
        x[col] = acc / a[col][col];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// A circle in the plane.
#[derive(Debug, Clone, Copy)]
pub struct Circle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

/// Algebraic circle fit (Taubin), solved as a Newton iteration on the
/// characteristic polynomial of the constrained eigenproblem.
///
/// Returns `None` for degenerate inputs (fewer than three points, or
/// collinear data).
pub fn fit_circle_taubin(pts: &[(f64, f64)]) -> Option<Circle> {
    let n = pts.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / nf;

    let mut mxx = 0.0;
    let mut myy = 0.0;
    let mut mxy = 0.0;
    let mut mxz = 0.0;
    let mut myz = 0.0;
    let mut mzz = 0.0;
    for &(x, y) in pts {
        let u = x - xm;
        let v = y - ym;
        let z = u * u + v * v;
        mxx += u * u;
        myy += v * v;
        mxy += u * v;
        mxz += u * z;
        myz += v * z;
        mzz += z * z;
    }
    mxx /= nf;
    myy /= nf;
    mxy /= nf;
    mxz /= nf;
    myz /= nf;
    mzz /= nf;

    let mz = mxx + myy;
    let cov_xy = mxx * myy - mxy * mxy;
    let var_z = mzz - mz * mz;
    let a3 = 4.0 * mz;
    let a2 = -3.0 * mz * mz - mzz;
    let a1 = var_z * mz + 4.0 * cov_xy * mz - mxz * mxz - myz * myz;
    let a0 = mxz * (mxz * myy - myz * mxy) + myz * (myz * mxx - mxz * mxy) - var_z * cov_xy;
    let a22 = a2 + a2;
    let a33 = a3 + a3 + a3;

    let mut x = 0.0;
    let mut y = a0;
    for _ in 0..99 {
        let dy = a1 + x * (a22 + a33 * x);
        if dy == 0.0 {
            break;
        }
        let xnew = x - y / dy;
        if !xnew.is_finite() || xnew == x {
            break;
        }
        let ynew = a0 + xnew * (a1 + xnew * (a2 + xnew * a3));
        if ynew.abs() >= y.abs() {
            break;
        }
        x = xnew;
        y = ynew;
    }

    let det = x * x - x * mz + cov_xy;
    if det.abs() <= 1e-15 * mz * mz {
        return None;
    }
    let uc = (mxz * (myy - x) - myz * mxy) / det / 2.0;
    let vc = (myz * (mxx - x) - mxz * mxy) / det / 2.0;
    let r2 = uc * uc + vc * vc + mz + x;
    if !(r2 > 0.0) {
        return None;
    }
    Some(Circle {
        cx: uc + xm,
        cy: vc + ym,
        r: r2.sqrt(),
    })
}

/// One Gauss–Newton refinement step on geometric point-to-circle distances.
pub fn refine_circle_geometric(pts: &[(f64, f64)], c: Circle) -> Circle {
    let mut ata = [[0.0f64; 3]; 3];
    let mut atb = [0.0f64; 3];
    for &(x, y) in pts {
        let dx = x - c.cx;
        let dy = y - c.cy;
        let dist = (dx * dx + dy * dy).sqrt();
        if dist < 1e-300 {
            continue;
        }
        let res = dist - c.r;
        let j = [-dx / dist, -dy / dist, -1.0];
        for a in 0..3 {
            for b in 0..3 {
                ata[a][b] += j[a] * j[b];
            }
            atb[a] -= j[a] * res;
        }
    }
    match solve3(ata, atb) {
        Some(delta) => {
            let refined = Circle {
                cx: c.cx + delta[0],
                cy: c.cy + delta[1],
                r: c.r + delta[2],
            };
            if refined.r > 0.0 {
                refined
            } else {
                c
            }
        }
        None => c,
    }
}

/// RMS geometric distance of points from a circle.
pub fn circle_rms(pts: &[(f64, f64)], c: Circle) -> f64 {
    if pts.is_empty() {
        return 0.0;
    }
    let sum: f64 = pts
        .iter()
        .map(|&(x, y)| {
            let d = ((x - c.cx).powi(2) + (y - c.cy).powi(2)).sqrt() - c.r;
            d * d
        })
        .sum();
    (sum / pts.len() as f64).sqrt()
}
