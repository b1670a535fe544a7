//! Profilometer height-map processing.
//!
//! A measurement is a series of vertical line scans (fixed x, sweeping y).
//! Processing runs level → crop → mask → summarize:
//!
//! 1. [`level_to_bottom_plane`] fits a least-squares plane to the
//!    bottom-chip region and subtracts it from every sample;
//! 2. [`crop_top_chip`] windows out the top-chip plateau by a height
//!    threshold;
//! 3. [`mask_artifact_scans`] invalidates line scans whose column median
//!    jumps away from both neighbouring columns;
//! 4. [`summarize_chip`] reduces the surviving cells to mean separation,
//!    plane-fit tilt, and bow.
//!
//! [`corner_tilt_worst_case`] implements the companion corner-pair method
//! used with edge-on SEM images of the chip corners.
//!
//! Heights are stored as µm in 64-bit floats; invalid cells are NaN.

use std::io::{BufRead, Write};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HeightMapError {
    #[error("no scans supplied")]
    EmptyInput,
    #[error("all scans are masked")]
    AllMasked,
    #[error("irregular grid: {0}")]
    IrregularGrid(String),
    #[error("unlevelable: {0}")]
    Unlevelable(String),
    #[error("empty selection: no cell above {threshold_um} µm")]
    EmptySelection { threshold_um: f64 },
    #[error("need at least 3 non-collinear valid cells, found {found}")]
    TooFewCells { found: usize },
    #[error("fitted slope {slope:.3e} leaves the small-angle regime (|slope| < 0.01)")]
    TiltOutOfRange { slope: f64 },
    #[error("corners must have distinct lateral positions")]
    CoincidentCorners,
    #[error("corner set must contain exactly four corners")]
    NotFourCorners,
    #[error("csv parse error at line {line}: {msg}")]
    CsvParse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// One profilometer trace: heights sampled along y at a fixed x position.
#[derive(Debug, Clone, PartialEq)]
pub struct LineScan {
    pub scan_index: usize,
    pub x_position_um: f64,
    /// (y position µm, height µm), y strictly increasing. NaN heights mark
    /// invalid samples.
    pub samples: Vec<(f64, f64)>,
    /// Whole-scan mask flag (e.g. known-bad trace).
    pub masked: bool,
}

impl LineScan {
    pub fn new(
        scan_index: usize,
        x_position_um: f64,
        samples: Vec<(f64, f64)>,
        masked: bool,
    ) -> Result<Self, HeightMapError> {
        if samples.is_empty() {
            return Err(HeightMapError::IrregularGrid(format!(
                "scan {scan_index} has no samples"
            )));
        }
        for pair in samples.windows(2) {
            if !(pair[1].0 > pair[0].0) {
                return Err(HeightMapError::IrregularGrid(format!(
                    "scan {scan_index}: y positions must be strictly increasing"
                )));
            }
        }
        Ok(Self {
            scan_index,
            x_position_um,
            samples,
            masked,
        })
    }
}

/// Masked rectangular grid of heights with uniform lateral pitch.
#[derive(Debug, Clone, PartialEq)]
pub struct HeightMap {
    nx: usize,
    ny: usize,
    x0_um: f64,
    y0_um: f64,
    x_pitch_um: f64,
    y_pitch_um: f64,
    /// Row-major: z[iy * nx + ix]; NaN marks an invalid cell.
    z_um: Vec<f64>,
    masked_columns: Vec<usize>,
}

impl HeightMap {
    /// Assemble a grid from line scans. Scans must share one y sampling and
    /// sit on a uniform x pitch; scans flagged `masked` become all-NaN
    /// columns counted in the mask metadata.
    pub fn from_scans(scans: &[LineScan]) -> Result<Self, HeightMapError> {
        if scans.is_empty() {
            return Err(HeightMapError::EmptyInput);
        }
        if scans.iter().all(|s| s.masked) {
            return Err(HeightMapError::AllMasked);
        }
        let mut order: Vec<usize> = (0..scans.len()).collect();
        order.sort_by(|&a, &b| {
            scans[a]
                .x_position_um
                .partial_cmp(&scans[b].x_position_um)
                .expect("x positions must not be NaN")
        });

        let nx = scans.len();
        let reference = order
            .iter()
            .map(|&i| &scans[i])
            .find(|s| !s.masked)
            .expect("checked above");
        let ny = reference.samples.len();
        let y_grid: Vec<f64> = reference.samples.iter().map(|s| s.0).collect();

        // uniform pitches
        let x_positions: Vec<f64> = order.iter().map(|&i| scans[i].x_position_um).collect();
        let x_pitch = if nx > 1 {
            let pitch = (x_positions[nx - 1] - x_positions[0]) / (nx - 1) as f64;
            if !(pitch > 0.0) {
                return Err(HeightMapError::IrregularGrid(
                    "duplicate scan x positions".into(),
                ));
            }
            for (i, w) in x_positions.windows(2).enumerate() {
                if ((w[1] - w[0]) - pitch).abs() > 1e-6 * pitch.abs() + 1e-9 {
                    return Err(HeightMapError::IrregularGrid(format!(
                        "non-uniform x pitch near scan {i}"
                    )));
                }
            }
            pitch
        } else {
            1.0
        };
        let y_pitch = if ny > 1 {
            let pitch = (y_grid[ny - 1] - y_grid[0]) / (ny - 1) as f64;
            for (i, w) in y_grid.windows(2).enumerate() {
                if ((w[1] - w[0]) - pitch).abs() > 1e-6 * pitch.abs() + 1e-9 {
                    return Err(HeightMapError::IrregularGrid(format!(
                        "non-uniform y pitch near sample {i}"
                    )));
                }
            }
            pitch
        } else {
            1.0
        };

        let mut z = vec![f64::NAN; nx * ny];
        let mut masked_columns = Vec::new();
        for (ix, &scan_idx) in order.iter().enumerate() {
            let scan = &scans[scan_idx];
            if scan.masked {
                masked_columns.push(ix);
                continue;
            }
            if scan.samples.len() != ny {
                return Err(HeightMapError::IrregularGrid(format!(
                    "scan at x = {} µm has {} samples, expected {}",
                    scan.x_position_um,
                    scan.samples.len(),
                    ny
                )));
            }
            for (iy, &(y, height)) in scan.samples.iter().enumerate() {
                if (y - y_grid[iy]).abs() > 1e-9 {
                    return Err(HeightMapError::IrregularGrid(format!(
                        "scan at x = {} µm: y grid mismatch at sample {iy}",
                        scan.x_position_um
                    )));
                }
                z[iy * nx + ix] = height;
            }
        }

        Ok(Self {
            nx,
            ny,
            x0_um: x_positions[0],
            y0_um: y_grid[0],
            x_pitch_um: x_pitch,
            y_pitch_um: y_pitch,
            z_um: z,
            masked_columns,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn x_pitch_um(&self) -> f64 {
        self.x_pitch_um
    }

    pub fn y_pitch_um(&self) -> f64 {
        self.y_pitch_um
    }

    pub fn origin_um(&self) -> (f64, f64) {
        (self.x0_um, self.y0_um)
    }

    pub fn x_at(&self, ix: usize) -> f64 {
        self.x0_um + ix as f64 * self.x_pitch_um
    }

    pub fn y_at(&self, iy: usize) -> f64 {
        self.y0_um + iy as f64 * self.y_pitch_um
    }

    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.z_um[iy * self.nx + ix]
    }

    fn set(&mut self, ix: usize, iy: usize, value: f64) {
        self.z_um[iy * self.nx + ix] = value;
    }

    pub fn is_valid(&self, ix: usize, iy: usize) -> bool {
        self.get(ix, iy).is_finite()
    }

    /// Indices of columns masked so far (input masks plus artifact masks).
    pub fn masked_columns(&self) -> &[usize] {
        &self.masked_columns
    }

    pub fn n_masked_scans(&self) -> usize {
        self.masked_columns.len()
    }

    pub fn valid_count(&self) -> usize {
        self.z_um.iter().filter(|z| z.is_finite()).count()
    }

    /// Iterate valid cells as (x µm, y µm, z µm).
    pub fn iter_valid(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.ny).flat_map(move |iy| {
            (0..self.nx).filter_map(move |ix| {
                let z = self.get(ix, iy);
                z.is_finite().then(|| (self.x_at(ix), self.y_at(iy), z))
            })
        })
    }

    /// Write as `x_um,y_um,z_um` rows in scan order (x-major, then y).
    pub fn to_csv<W: Write>(&self, mut out: W) -> Result<(), HeightMapError> {
        writeln!(out, "x_um,y_um,z_um")?;
        for ix in 0..self.nx {
            for iy in 0..self.ny {
                writeln!(out, "{},{},{}", self.x_at(ix), self.y_at(iy), self.get(ix, iy))?;
            }
        }
        Ok(())
    }
}

/// An axis-aligned lateral rectangle (µm), inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x_min_um: f64,
    pub x_max_um: f64,
    pub y_min_um: f64,
    pub y_max_um: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x_min_um && x <= self.x_max_um && y >= self.y_min_um && y <= self.y_max_um
    }
}

/// How the bottom-chip region used for leveling is chosen.
#[derive(Debug, Clone)]
pub enum BottomSelect {
    /// Explicit lateral rectangles.
    Rects(Vec<Rect>),
    /// Cells within step_threshold/2 of the lower of two height clusters.
    AutoCluster { step_threshold_um: f64 },
}

/// Least-squares plane z = a·x + b·y + c over a set of cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneModel {
    /// Slope along x (µm/µm).
    pub a: f64,
    /// Slope along y (µm/µm).
    pub b: f64,
    /// Offset (µm).
    pub c: f64,
}

impl PlaneModel {
    pub fn evaluate(&self, x_um: f64, y_um: f64) -> f64 {
        self.a * x_um + self.b * y_um + self.c
    }

    /// Tilt angle in µrad: 10⁶·arctan(√(a² + b²)).
    pub fn tilt_urad(&self) -> f64 {
        self.a.hypot(self.b).atan() * 1e6
    }
}

/// Fit a plane to (x, y, z) points by centered normal equations.
pub fn fit_plane<I>(points: I) -> Result<PlaneModel, HeightMapError>
where
    I: IntoIterator<Item = (f64, f64, f64)>,
{
    let pts: Vec<(f64, f64, f64)> = points.into_iter().collect();
    let n = pts.len();
    if n < 3 {
        return Err(HeightMapError::TooFewCells { found: n });
    }
    let nf = n as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let zm = pts.iter().map(|p| p.2).sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    let mut sxz = 0.0;
    let mut syz = 0.0;
    for &(x, y, z) in &pts {
        let dx = x - xm;
        let dy = y - ym;
        let dz = z - zm;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
        sxz += dx * dz;
        syz += dy * dz;
    }
    let det = sxx * syy - sxy * sxy;
    if det <= 1e-12 * sxx.max(syy).powi(2) || sxx == 0.0 || syy == 0.0 {
        return Err(HeightMapError::Unlevelable(
            "selected cells are collinear or too few".into(),
        ));
    }
    let a = (sxz * syy - syz * sxy) / det;
    let b = (syz * sxx - sxz * sxy) / det;
    let slope = a.hypot(b);
    if slope >= 0.01 {
        return Err(HeightMapError::TiltOutOfRange { slope });
    }
    Ok(PlaneModel {
        a,
        b,
        c: zm - a * xm - b * ym,
    })
}

/// A leveled map together with the plane that was removed.
#[derive(Debug, Clone)]
pub struct Leveled {
    pub map: HeightMap,
    pub plane: PlaneModel,
}

/// Deterministic 1-D two-means split; returns the lower cluster center.
fn lower_cluster_center(values: &[f64]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !(hi - lo > 0.0) {
        return lo;
    }
    let mut c_lo = lo;
    let mut c_hi = hi;
    for _ in 0..64 {
        let mid = 0.5 * (c_lo + c_hi);
        let mut sum_lo = 0.0;
        let mut n_lo = 0usize;
        let mut sum_hi = 0.0;
        let mut n_hi = 0usize;
        for &v in values {
            if v <= mid {
                sum_lo += v;
                n_lo += 1;
            } else {
                sum_hi += v;
                n_hi += 1;
            }
        }
        if n_lo == 0 || n_hi == 0 {
            break;
        }
        let new_lo = sum_lo / n_lo as f64;
        let new_hi = sum_hi / n_hi as f64;
        if (new_lo - c_lo).abs() < 1e-12 && (new_hi - c_hi).abs() < 1e-12 {
            break;
        }
        c_lo = new_lo;
        c_hi = new_hi;
    }
    c_lo
}

/// Level scans to the bottom-chip plane: fit a least-squares plane over the
/// selected bottom region and subtract it from every sample.
pub fn level_to_bottom_plane(
    scans: &[LineScan],
    select: &BottomSelect,
) -> Result<Leveled, HeightMapError> {
    let map = HeightMap::from_scans(scans)?;
    let region: Vec<(f64, f64, f64)> = match select {
        BottomSelect::Rects(rects) => map
            .iter_valid()
            .filter(|&(x, y, _)| rects.iter().any(|r| r.contains(x, y)))
            .collect(),
        BottomSelect::AutoCluster { step_threshold_um } => {
            let heights: Vec<f64> = map.iter_valid().map(|(_, _, z)| z).collect();
            if heights.is_empty() {
                return Err(HeightMapError::TooFewCells { found: 0 });
            }
            let floor = lower_cluster_center(&heights);
            let cutoff = floor + 0.5 * step_threshold_um;
            map.iter_valid().filter(|&(_, _, z)| z < cutoff).collect()
        }
    };
    if region.len() < 3 {
        return Err(HeightMapError::Unlevelable(format!(
            "bottom region holds {} valid samples, need >= 3 non-collinear",
            region.len()
        )));
    }
    let plane = fit_plane(region)?;

    let mut leveled = map;
    for iy in 0..leveled.ny {
        for ix in 0..leveled.nx {
            let z = leveled.get(ix, iy);
            if z.is_finite() {
                let removed = plane.evaluate(leveled.x_at(ix), leveled.y_at(iy));
                leveled.set(ix, iy, z - removed);
            }
        }
    }
    Ok(Leveled {
        map: leveled,
        plane,
    })
}

/// Window out the top chip: keep cells above the step threshold and crop to
/// their bounding box; everything else becomes invalid.
pub fn crop_top_chip(map: &HeightMap, step_threshold_um: f64) -> Result<HeightMap, HeightMapError> {
    let mut ix_min = usize::MAX;
    let mut ix_max = 0usize;
    let mut iy_min = usize::MAX;
    let mut iy_max = 0usize;
    let mut any = false;
    for iy in 0..map.ny {
        for ix in 0..map.nx {
            let z = map.get(ix, iy);
            if z.is_finite() && z > step_threshold_um {
                any = true;
                ix_min = ix_min.min(ix);
                ix_max = ix_max.max(ix);
                iy_min = iy_min.min(iy);
                iy_max = iy_max.max(iy);
            }
        }
    }
    if !any {
        return Err(HeightMapError::EmptySelection {
            threshold_um: step_threshold_um,
        });
    }

    let nx = ix_max - ix_min + 1;
    let ny = iy_max - iy_min + 1;
    let mut z = vec![f64::NAN; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            let v = map.get(ix + ix_min, iy + iy_min);
            if v.is_finite() && v > step_threshold_um {
                z[iy * nx + ix] = v;
            }
        }
    }
    let masked_columns = map
        .masked_columns
        .iter()
        .filter_map(|&c| (c >= ix_min && c <= ix_max).then(|| c - ix_min))
        .collect();
    Ok(HeightMap {
        nx,
        ny,
        x0_um: map.x_at(ix_min),
        y0_um: map.y_at(iy_min),
        x_pitch_um: map.x_pitch_um,
        y_pitch_um: map.y_pitch_um,
        z_um: z,
        masked_columns,
    })
}

/// Invalidate line scans whose column median is offset from the
/// neighbouring columns on both sides by more than the threshold.
///
/// Adjacent offset columns are treated as a group: consecutive columns with
/// mutually consistent medians form a run, and a run is masked when its
/// median differs from the nearest live column on each side by more than
/// the threshold. Offset scans are a minority by assumption, so a run is
/// only masked when it is no longer than either neighbouring run; runs
/// touching the map edge are kept. Surviving cells are never altered.
pub fn mask_artifact_scans(map: &HeightMap, median_jump_threshold_um: f64) -> HeightMap {
    // (column index, median of valid cells)
    let mut live: Vec<(usize, f64)> = Vec::new();
    for ix in 0..map.nx {
        let mut column: Vec<f64> = (0..map.ny)
            .map(|iy| map.get(ix, iy))
            .filter(|z| z.is_finite())
            .collect();
        if column.is_empty() {
            continue;
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if column.len() % 2 == 1 {
            column[column.len() / 2]
        } else {
            0.5 * (column[column.len() / 2 - 1] + column[column.len() / 2])
        };
        live.push((ix, median));
    }

    let mut to_mask: Vec<usize> = Vec::new();
    if live.len() >= 3 {
        // split live columns into runs of mutually consistent medians
        let mut runs: Vec<(usize, usize)> = Vec::new(); // [start, end] into `live`
        let mut start = 0usize;
        for i in 1..live.len() {
            if (live[i].1 - live[i - 1].1).abs() > median_jump_threshold_um {
                runs.push((start, i - 1));
                start = i;
            }
        }
        runs.push((start, live.len() - 1));

        for r in 1..runs.len().saturating_sub(1) {
            let (lo, hi) = runs[r];
            let run_len = hi - lo + 1;
            let left_len = runs[r - 1].1 - runs[r - 1].0 + 1;
            let right_len = runs[r + 1].1 - runs[r + 1].0 + 1;
            if run_len > left_len.min(right_len) {
                continue;
            }
            let mut medians: Vec<f64> = live[lo..=hi].iter().map(|c| c.1).collect();
            medians.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let run_median = medians[medians.len() / 2];
            let left = live[runs[r - 1].1].1;
            let right = live[runs[r + 1].0].1;
            if (run_median - left).abs() > median_jump_threshold_um
                && (run_median - right).abs() > median_jump_threshold_um
            {
                to_mask.extend(live[lo..=hi].iter().map(|c| c.0));
            }
        }
    }

    let mut out = map.clone();
    for &ix in &to_mask {
        for iy in 0..out.ny {
            out.set(ix, iy, f64::NAN);
        }
        out.masked_columns.push(ix);
    }
    out.masked_columns.sort_unstable();
    out.masked_columns.dedup();
    out
}

/// Chip-level statistics extracted from a leveled, cropped, masked map.
#[derive(Debug, Clone)]
pub struct ChipSummary {
    /// Mean of valid heights minus the substrate thickness (µm).
    pub mean_separation_um: f64,
    /// Plane-fit tilt over the valid cells (µrad).
    pub tilt_urad: f64,
    /// Mean corner residual minus center residual after plane removal (µm);
    /// positive when the corners are raised.
    pub bow_um: f64,
    pub substrate_thickness_um: f64,
    pub n_masked_scans: usize,
    /// The plane fitted to the top-chip cells (absolute coordinates).
    pub plane: PlaneModel,
}

/// Reduce a top-chip map to separation, tilt, and bow.
pub fn summarize_chip(
    map: &HeightMap,
    substrate_thickness_um: f64,
) -> Result<ChipSummary, HeightMapError> {
    let cells: Vec<(f64, f64, f64)> = map.iter_valid().collect();
    if cells.len() < 3 {
        return Err(HeightMapError::TooFewCells { found: cells.len() });
    }
    let mean_z = cells.iter().map(|c| c.2).sum::<f64>() / cells.len() as f64;
    let plane = fit_plane(cells.iter().copied())?;

    // residual extremes: valid cells nearest the bounding-box corners and center
    let (xs, ys): (Vec<f64>, Vec<f64>) = cells.iter().map(|c| (c.0, c.1)).unzip();
    let x_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let y_min = ys.iter().cloned().fold(f64::INFINITY, f64::min);
    let y_max = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let targets = [
        (x_min, y_min),
        (x_max, y_min),
        (x_min, y_max),
        (x_max, y_max),
        (0.5 * (x_min + x_max), 0.5 * (y_min + y_max)),
    ];
    let mut nearest = [(f64::INFINITY, 0.0f64); 5];
    for &(x, y, z) in &cells {
        let residual = z - plane.evaluate(x, y);
        for (slot, &(tx, ty)) in targets.iter().enumerate() {
            let dist2 = (x - tx).powi(2) + (y - ty).powi(2);
            if dist2 < nearest[slot].0 {
                nearest[slot] = (dist2, residual);
            }
        }
    }
    let corner_mean = nearest[..4].iter().map(|n| n.1).sum::<f64>() / 4.0;
    let bow_um = corner_mean - nearest[4].1;

    Ok(ChipSummary {
        mean_separation_um: mean_z - substrate_thickness_um,
        tilt_urad: plane.tilt_urad(),
        bow_um,
        substrate_thickness_um,
        n_masked_scans: map.n_masked_scans(),
        plane,
    })
}

/// A labelled chip-corner separation measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Corner {
    pub label: String,
    pub x_um: f64,
    pub y_um: f64,
    pub separation_um: f64,
}

/// Exactly four corner measurements of one bonded module.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerSet {
    corners: [Corner; 4],
}

impl CornerSet {
    pub fn new(corners: [Corner; 4]) -> Result<Self, HeightMapError> {
        for i in 0..4 {
            for j in i + 1..4 {
                let d = (corners[i].x_um - corners[j].x_um)
                    .hypot(corners[i].y_um - corners[j].y_um);
                if !(d > 1e-9) {
                    return Err(HeightMapError::CoincidentCorners);
                }
            }
        }
        Ok(Self { corners })
    }

    pub fn corners(&self) -> &[Corner; 4] {
        &self.corners
    }
}

/// Corner-pair tilt statistics of one module.
#[derive(Debug, Clone, Copy)]
pub struct CornerTilt {
    /// Largest arctan(|Δz| / lateral distance) over the six corner pairs (µrad).
    pub worst_tilt_urad: f64,
    /// Mean of the four corner separations (µm).
    pub mean_separation_um: f64,
}

/// Worst-case local tilt over the six corner pairs, plus the mean corner
/// separation.
pub fn corner_tilt_worst_case(set: &CornerSet) -> Result<CornerTilt, HeightMapError> {
    let corners = set.corners();
    let mut worst = 0.0f64;
    for i in 0..4 {
        for j in i + 1..4 {
            let lateral = (corners[i].x_um - corners[j].x_um)
                .hypot(corners[i].y_um - corners[j].y_um);
            let dz = (corners[i].separation_um - corners[j].separation_um).abs();
            worst = worst.max((dz / lateral).atan());
        }
    }
    let mean = corners.iter().map(|c| c.separation_um).sum::<f64>() / 4.0;
    Ok(CornerTilt {
        worst_tilt_urad: worst * 1e6,
        mean_separation_um: mean,
    })
}

fn parse_field(raw: &str, line: usize) -> Result<f64, HeightMapError> {
    let token = raw.trim();
    if token.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    token.parse::<f64>().map_err(|e| HeightMapError::CsvParse {
        line,
        msg: format!("{e}: {token:?}"),
    })
}

/// Read `x_um,y_um,z_um` sample rows into line scans (one scan per distinct
/// x position, samples sorted by y). `NaN` heights are allowed.
pub fn scans_from_csv<R: BufRead>(reader: R) -> Result<Vec<LineScan>, HeightMapError> {
    let mut columns: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if idx == 0 && trimmed.starts_with("x_um") {
            continue;
        }
        let mut fields = trimmed.split(',');
        let mut next = |name: &str| {
            fields
                .next()
                .ok_or_else(|| HeightMapError::CsvParse {
                    line: idx + 1,
                    msg: format!("missing column {name}"),
                })
                .and_then(|raw| parse_field(raw, idx + 1))
        };
        let x = next("x_um")?;
        let y = next("y_um")?;
        let z = next("z_um")?;
        if x.is_nan() || y.is_nan() {
            return Err(HeightMapError::CsvParse {
                line: idx + 1,
                msg: "lateral coordinates must be finite".into(),
            });
        }
        match columns.iter_mut().find(|(cx, _)| (*cx - x).abs() <= 1e-9) {
            Some((_, samples)) => samples.push((y, z)),
            None => columns.push((x, vec![(y, z)])),
        }
    }
    if columns.is_empty() {
        return Err(HeightMapError::EmptyInput);
    }
    columns.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    columns
        .into_iter()
        .enumerate()
        .map(|(i, (x, mut samples))| {
            samples.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            LineScan::new(i, x, samples, false)
        })
        .collect()
}

/// Read corner rows `label,x_um,y_um,z_um` (optionally with a leading
/// `module` column, returning one set per module in file order).
pub fn corners_from_csv<R: BufRead>(
    reader: R,
) -> Result<Vec<(String, CornerSet)>, HeightMapError> {
    let mut grouped: Vec<(String, Vec<Corner>)> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if idx == 0 && fields.iter().any(|f| f.trim() == "x_um") {
            continue;
        }
        let (module, label, rest) = match fields.len() {
            4 => ("module".to_string(), fields[0].trim().to_string(), &fields[1..]),
            5 => (
                fields[0].trim().to_string(),
                fields[1].trim().to_string(),
                &fields[2..],
            ),
            n => {
                return Err(HeightMapError::CsvParse {
                    line: idx + 1,
                    msg: format!("expected 4 or 5 columns, found {n}"),
                })
            }
        };
        let x = parse_field(rest[0], idx + 1)?;
        let y = parse_field(rest[1], idx + 1)?;
        let z = parse_field(rest[2], idx + 1)?;
        let corner = Corner {
            label,
            x_um: x,
            y_um: y,
            separation_um: z,
        };
        match grouped.iter_mut().find(|(m, _)| *m == module) {
            Some((_, list)) => list.push(corner),
            None => grouped.push((module, vec![corner])),
        }
    }
    grouped
        .into_iter()
        .map(|(module, corners)| {
            let four: [Corner; 4] = corners
                .try_into()
                .map_err(|_| HeightMapError::NotFourCorners)?;
            Ok((module, CornerSet::new(four)?))
        })
        .collect()
}
