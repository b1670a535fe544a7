//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line with the measured values.
//!
//! Run with `cargo test -p flipchip --test acceptance -- --nocapture`
//! to see the per-criterion lines.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flipchip_core::cpw::{line_params, shift_curve, solve_gap_for_impedance, CpwGeometry};
use flipchip_core::heightmap::{
    corner_tilt_worst_case, corners_from_csv, crop_top_chip, level_to_bottom_plane,
    mask_artifact_scans, scans_from_csv, summarize_chip, BottomSelect, Corner, CornerSet,
    LineScan,
};
use flipchip_core::losses::{relative_q, ParticipationRecord};
use flipchip_core::resonator::{
    fit_vph, loaded_frequency_approx, loaded_frequency_exact, ResonatorRecord,
};
use flipchip_core::vnafit::{
    fit_notch, photon_number_from_rates, synth_trace, Complex64, ComplexTrace, NotchParams,
};
use flipchip_core::{Facing, C_LIGHT, HBAR};

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

// designed 50 Ω gap widths of the reference sample (µm, not π)
#[allow(clippy::approx_constant)]
const GAP_DIEL_UM: f64 = 3.14;
const GAP_METAL_UM: f64 = 3.24;

fn finish(criterion: &str, failures: Vec<String>) {
    if failures.is_empty() {
        println!("[PASS] {criterion}");
    } else {
        println!("[FAIL] {criterion}");
        for failure in &failures {
            println!("       - {failure}");
        }
        panic!("{criterion}: {} check(s) failed: {failures:?}", failures.len());
    }
}

fn check(failures: &mut Vec<String>, ok: bool, message: String) {
    if ok {
        println!("       ok: {message}");
    } else {
        failures.push(message);
    }
}

fn table_records(facing: Facing) -> Vec<ResonatorRecord> {
    let text = std::fs::read_to_string(data_dir().join("table_a_resonators.csv")).unwrap();
    let mut records = Vec::new();
    for line in text.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 6 {
            continue;
        }
        let record_facing: Facing = fields[5].parse().unwrap();
        if record_facing != facing {
            continue;
        }
        records.push(ResonatorRecord {
            index: fields[0].parse().unwrap(),
            length_um: fields[3].parse().unwrap(),
            measured_f_ghz: Some(fields[4].parse().unwrap()),
            facing: Some(record_facing),
            copy_id: None,
        });
    }
    records
}

#[test]
fn criterion_01_phase_velocity_fit() {
    let mut failures = Vec::new();
    let start = Instant::now();

    let metal = table_records(Facing::Metal);
    let dielectric = table_records(Facing::Dielectric);
    assert_eq!(metal.len(), 8);
    assert_eq!(dielectric.len(), 8);

    let fit_m = fit_vph(&metal).unwrap();
    let fit_d = fit_vph(&dielectric).unwrap();
    let elapsed = start.elapsed();

    let rel_m = (fit_m.v_ph_m_per_s - 1.182e8).abs() / 1.182e8;
    let rel_d = (fit_d.v_ph_m_per_s - 1.175e8).abs() / 1.175e8;
    check(
        &mut failures,
        rel_m < 0.01,
        format!(
            "metal rows: v_ph = {:.4e} m/s vs 1.182e8 ({:+.3}%)",
            fit_m.v_ph_m_per_s,
            rel_m * 100.0
        ),
    );
    check(
        &mut failures,
        rel_d < 0.01,
        format!(
            "dielectric rows: v_ph = {:.4e} m/s vs 1.175e8 ({:+.3}%)",
            fit_d.v_ph_m_per_s,
            rel_d * 100.0
        ),
    );

    // two-point hand check, rows 0 and 7: slope arithmetic on 1/omega vs length
    let two_point: Vec<ResonatorRecord> = metal
        .iter()
        .filter(|r| r.index == 0 || r.index == 7)
        .cloned()
        .collect();
    let fit_2pt = fit_vph(&two_point).unwrap();
    let y0 = 1.0 / (2.0 * PI * 4.9729e9);
    let y7 = 1.0 / (2.0 * PI * 6.3988e9);
    let slope = (y0 - y7) / ((6049.8 - 4720.5) * 1e-6);
    let v_oracle = 2.0 / (PI * slope);
    check(
        &mut failures,
        (fit_2pt.v_ph_m_per_s - v_oracle).abs() / v_oracle < 1e-9,
        format!(
            "two-point fit {:.6e} matches slope arithmetic {:.6e}",
            fit_2pt.v_ph_m_per_s, v_oracle
        ),
    );
    check(
        &mut failures,
        (v_oracle - 1.187e8).abs() / 1.187e8 < 1e-3,
        format!("two-point value {v_oracle:.4e} is about 1.187e8 m/s"),
    );
    check(
        &mut failures,
        elapsed.as_secs_f64() < 1.0,
        format!("runtime {:.3} s < 1 s", elapsed.as_secs_f64()),
    );

    finish("criterion 1: phase-velocity fit on bundled length/frequency table", failures);
}

#[test]
fn criterion_02_conformal_mapping() {
    let mut failures = Vec::new();
    let start = Instant::now();
    let eps = 11.45;

    let metal = line_params(&CpwGeometry::metal_facing(5.0, GAP_METAL_UM, eps, 525.0, 10.0)).unwrap();
    let rel_m = (metal.v_ph_m_per_s - 1.215e8).abs() / 1.215e8;
    check(
        &mut failures,
        rel_m < 0.02,
        format!(
            "metal facing w=5 s=3.24 d=10: v_ph = {:.4e} vs 1.215e8 ({:+.3}%)",
            metal.v_ph_m_per_s,
            rel_m * 100.0
        ),
    );

    let diel =
        line_params(&CpwGeometry::dielectric_facing(5.0, GAP_DIEL_UM, eps, 525.0, 10.0, eps, 525.0))
            .unwrap();
    let rel_d = (diel.v_ph_m_per_s - 1.185e8).abs() / 1.185e8;
    check(
        &mut failures,
        rel_d < 0.02,
        format!(
            "dielectric facing w=5 s=3.14 d=10: v_ph = {:.4e} vs 1.185e8 ({:+.3}%)",
            diel.v_ph_m_per_s,
            rel_d * 100.0
        ),
    );

    // thick-substrate planar limit: eps_eff -> (1+eps)/2
    let planar = line_params(&CpwGeometry::planar(10.0, 5.5, eps, 525.0)).unwrap();
    let v_limit = C_LIGHT / ((1.0 + eps) / 2.0f64).sqrt();
    let rel_p = (planar.v_ph_m_per_s - v_limit).abs() / v_limit;
    check(
        &mut failures,
        rel_p < 0.005,
        format!(
            "planar limit: v_ph = {:.5e} vs c/sqrt((1+eps)/2) = {:.5e} ({:+.4}%)",
            planar.v_ph_m_per_s,
            v_limit,
            rel_p * 100.0
        ),
    );

    // the designed 50 Ω gaps are recovered near the tabulated values
    let s_m = solve_gap_for_impedance(&CpwGeometry::metal_facing(5.0, 1.0, eps, 525.0, 10.0), 50.0)
        .unwrap();
    check(
        &mut failures,
        (s_m - GAP_METAL_UM).abs() / GAP_METAL_UM < 0.25,
        format!("metal 50 Ω gap {s_m:.3} µm within 25% of 3.24 µm"),
    );
    let s_d = solve_gap_for_impedance(
        &CpwGeometry::dielectric_facing(5.0, 1.0, eps, 525.0, 10.0, eps, 525.0),
        50.0,
    )
    .unwrap();
    check(
        &mut failures,
        (s_d - GAP_DIEL_UM).abs() / GAP_DIEL_UM < 0.25,
        format!("dielectric 50 Ω gap {s_d:.3} µm within 25% of 3.14 µm"),
    );

    let elapsed = start.elapsed();
    check(
        &mut failures,
        elapsed.as_secs_f64() < 1.0,
        format!("runtime {:.3} s < 1 s", elapsed.as_secs_f64()),
    );

    finish("criterion 2: conformal-mapping phase velocities", failures);
}

#[test]
fn criterion_03_shift_curves() {
    let mut failures = Vec::new();
    let eps = 11.45;
    let metal10 = CpwGeometry::metal_facing(10.0, 5.5, eps, 525.0, 10.0);
    let diel10 = CpwGeometry::dielectric_facing(10.0, 5.5, eps, 525.0, 10.0, eps, 525.0);

    // sign of the shift below the reference separation
    for d in [5.0, 7.0, 9.0, 9.9] {
        let rm = shift_curve(&metal10, &[d], 10.0).unwrap()[0].1;
        let rd = shift_curve(&diel10, &[d], 10.0).unwrap()[0].1;
        check(
            &mut failures,
            rm > 1.0,
            format!("metal ratio {rm:.5} > 1 at d = {d} µm"),
        );
        check(
            &mut failures,
            rd < 1.0,
            format!("dielectric ratio {rd:.5} < 1 at d = {d} µm"),
        );
    }

    // |ratio - 1| < 1% over the closed interval [9, 11] µm
    let grid: Vec<f64> = (0..=8).map(|i| 9.0 + 0.25 * i as f64).collect();
    for &d in &grid {
        let rm = shift_curve(&metal10, &[d], 10.0).unwrap()[0].1;
        let rd = shift_curve(&diel10, &[d], 10.0).unwrap()[0].1;
        check(
            &mut failures,
            (rm - 1.0).abs() < 0.01,
            format!("metal |ratio-1| = {:.4}% < 1% at d = {d} µm", (rm - 1.0).abs() * 100.0),
        );
        check(
            &mut failures,
            (rd - 1.0).abs() < 0.01,
            format!(
                "dielectric |ratio-1| = {:.4}% < 1% at d = {d} µm",
                (rd - 1.0).abs() * 100.0
            ),
        );
    }

    // metal magnitude exceeds dielectric magnitude at d = 5 µm
    let rm5 = shift_curve(&metal10, &[5.0], 10.0).unwrap()[0].1;
    let rd5 = shift_curve(&diel10, &[5.0], 10.0).unwrap()[0].1;
    check(
        &mut failures,
        (rm5 - 1.0).abs() > (rd5 - 1.0).abs(),
        format!(
            "metal magnitude {:.3}% exceeds dielectric {:.3}% at d = 5 µm",
            (rm5 - 1.0).abs() * 100.0,
            (rd5 - 1.0).abs() * 100.0
        ),
    );

    // w = 5 µm curves are flatter than w = 10 µm at d = 5 µm
    let metal5 = CpwGeometry::metal_facing(5.0, GAP_METAL_UM, eps, 525.0, 10.0);
    let diel5 = CpwGeometry::dielectric_facing(5.0, GAP_DIEL_UM, eps, 525.0, 10.0, eps, 525.0);
    let rm5_narrow = shift_curve(&metal5, &[5.0], 10.0).unwrap()[0].1;
    let rd5_narrow = shift_curve(&diel5, &[5.0], 10.0).unwrap()[0].1;
    check(
        &mut failures,
        (rm5_narrow - 1.0).abs() < (rm5 - 1.0).abs(),
        format!(
            "metal w=5 shift {:.3}% flatter than w=10 {:.3}% at d = 5 µm",
            (rm5_narrow - 1.0).abs() * 100.0,
            (rm5 - 1.0).abs() * 100.0
        ),
    );
    check(
        &mut failures,
        (rd5_narrow - 1.0).abs() < (rd5 - 1.0).abs(),
        format!(
            "dielectric w=5 shift {:.3}% flatter than w=10 {:.3}% at d = 5 µm",
            (rd5_narrow - 1.0).abs() * 100.0,
            (rd5 - 1.0).abs() * 100.0
        ),
    );

    finish("criterion 3: separation shift curves", failures);
}

#[test]
fn criterion_04_exact_vs_approximate_resonance() {
    let mut failures = Vec::new();

    // 100-point sweep over lengths and loading constants with |b*omega| < 0.02
    let v_ph = 1.2e8;
    let mut worst_rel: f64 = 0.0;
    let mut points = 0;
    for i in 0..10 {
        let length_um = 3000.0 + 700.0 * i as f64;
        for j in 0..10 {
            // signed loading sweep, |b·omega| up to ~0.019
            let omega_bare = PI * v_ph / (2.0 * length_um * 1e-6);
            let b = (j as f64 - 4.5) / 4.5 * 0.019 / omega_bare;
            let exact = loaded_frequency_exact(length_um, v_ph, b).unwrap();
            let approx = loaded_frequency_approx(length_um, v_ph, b).unwrap();
            assert!((b * exact.omega_rad_per_s).abs() < 0.02);
            let rel = ((exact.f_hz - approx.f_hz) / exact.f_hz).abs();
            worst_rel = worst_rel.max(rel);
            points += 1;
        }
    }
    assert_eq!(points, 100);
    check(
        &mut failures,
        worst_rel < 1e-3,
        format!("worst exact/approx discrepancy {:.3e} < 1e-3 over 100 points", worst_rel),
    );

    // b = 0 reduces to the bare quarter-wave frequency
    let mut worst_bare: f64 = 0.0;
    for length_um in [3000.0, 4500.0, 6000.0, 9000.0] {
        let exact = loaded_frequency_exact(length_um, v_ph, 0.0).unwrap();
        let bare = v_ph / (4.0 * length_um * 1e-6);
        worst_bare = worst_bare.max(((exact.f_hz - bare) / bare).abs());
    }
    check(
        &mut failures,
        worst_bare < 1e-9,
        format!("b = 0 reduction to v_ph/4l within {worst_bare:.2e} relative"),
    );

    finish("criterion 4: exact vs first-order resonance condition", failures);
}

/// Build a full-device scan set: bottom-chip frame at 0 with a stage tilt,
/// 11 mm plateau at substrate + separation with its own tilt plus noise.
#[allow(clippy::too_many_arguments)]
fn synth_device_scans(
    rng: &mut ChaCha8Rng,
    n: usize,
    pitch_um: f64,
    top_lo: usize,
    top_hi: usize,
    plateau_um: f64,
    tilt_a: f64,
    tilt_b: f64,
    stage_a: f64,
    stage_b: f64,
    noise_um: f64,
) -> Vec<LineScan> {
    let cx = 0.5 * (top_lo + top_hi) as f64 * pitch_um;
    let cy = cx;
    let gauss = |rng: &mut ChaCha8Rng| {
        let u1: f64 = rng.gen::<f64>().max(1e-300);
        let u2: f64 = rng.gen();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    };
    (0..n)
        .map(|ix| {
            let x = ix as f64 * pitch_um;
            let samples = (0..n)
                .map(|iy| {
                    let y = iy as f64 * pitch_um;
                    let stage = stage_a * x + stage_b * y;
                    let on_top = (top_lo..=top_hi).contains(&ix) && (top_lo..=top_hi).contains(&iy);
                    let z = if on_top {
                        stage + plateau_um + tilt_a * (x - cx) + tilt_b * (y - cy)
                            + noise_um * gauss(rng)
                    } else {
                        stage + noise_um * gauss(rng)
                    };
                    (y, z)
                })
                .collect();
            LineScan::new(ix, x, samples, false).unwrap()
        })
        .collect()
}

#[test]
fn criterion_05_profilometry_oracle() {
    let mut failures = Vec::new();

    // 100 seeded trials: 11x11 mm plateau at 50 µm pitch, tilt 100 µrad,
    // noise sigma = 50 nm; recover tilt within 2 µrad and separation
    // within 20 nm.
    let substrate = 525.2;
    let separation = 10.0;
    let tilt = 100e-6;
    let mut hits = 0;
    let mut worst_map_time = 0.0f64;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let direction = 2.0 * PI * (seed as f64) / 100.0;
        let (ta, tb) = (tilt * direction.cos(), tilt * direction.sin());
        let scans = synth_device_scans(
            &mut rng, 261, 50.0, 20, 240, substrate + separation, ta, tb, 8e-5, -5e-5, 0.05,
        );
        let start = Instant::now();
        let leveled = level_to_bottom_plane(
            &scans,
            &BottomSelect::AutoCluster {
                step_threshold_um: 400.0,
            },
        )
        .unwrap();
        let top = crop_top_chip(&leveled.map, 400.0).unwrap();
        let masked = mask_artifact_scans(&top, 2.0);
        let summary = summarize_chip(&masked, substrate).unwrap();
        worst_map_time = worst_map_time.max(start.elapsed().as_secs_f64());

        let tilt_ok = (summary.tilt_urad - 100.0).abs() < 2.0;
        let sep_ok = (summary.mean_separation_um - separation).abs() < 0.020;
        if tilt_ok && sep_ok {
            hits += 1;
        }
    }
    check(
        &mut failures,
        hits >= 99,
        format!("synthetic trials: {hits}/100 within 2 µrad and 20 nm (need >= 99)"),
    );
    check(
        &mut failures,
        worst_map_time < 5.0,
        format!("slowest map processed in {worst_map_time:.2} s < 5 s"),
    );

    // bundled spacer-device sample data lands inside the published bands
    let substrate_bundled = 505.9;
    let mut seps = Vec::new();
    let mut tilts = Vec::new();
    for name in ["spacer_a1", "spacer_a2", "spacer_a3"] {
        let path = data_dir().join(format!("report_dataset/heightmaps/{name}.csv"));
        let file = std::fs::File::open(&path).unwrap();
        let scans = scans_from_csv(std::io::BufReader::new(file)).unwrap();
        let leveled = level_to_bottom_plane(
            &scans,
            &BottomSelect::AutoCluster {
                step_threshold_um: 400.0,
            },
        )
        .unwrap();
        let top = crop_top_chip(&leveled.map, 400.0).unwrap();
        let masked = mask_artifact_scans(&top, 2.0);
        let summary = summarize_chip(&masked, substrate_bundled).unwrap();
        seps.push(summary.mean_separation_um);
        tilts.push(summary.tilt_urad);
        check(
            &mut failures,
            (summary.mean_separation_um - 9.6).abs() < 0.8,
            format!("{name}: separation {:.3} µm in 9.6 ± 0.8", summary.mean_separation_um),
        );
        check(
            &mut failures,
            (summary.tilt_urad - 76.0).abs() < 35.0,
            format!("{name}: tilt {:.1} µrad in 76 ± 35", summary.tilt_urad),
        );
    }
    let mean_sep = seps.iter().sum::<f64>() / seps.len() as f64;
    let mean_tilt = tilts.iter().sum::<f64>() / tilts.len() as f64;
    check(
        &mut failures,
        (mean_sep - 9.6).abs() < 0.8 && (mean_tilt - 76.0).abs() < 35.0,
        format!("bundled means: separation {mean_sep:.3} µm, tilt {mean_tilt:.1} µrad"),
    );

    finish("criterion 5: profilometry oracle and bundled sample bands", failures);
}

#[test]
fn criterion_06_corner_method() {
    let mut failures = Vec::new();

    let corner = |label: &str, x: f64, y: f64, z: f64| Corner {
        label: label.into(),
        x_um: x,
        y_um: y,
        separation_um: z,
    };

    // analytic four-corner cases vs hand-computed arctangent values
    let flat = CornerSet::new([
        corner("bl", 0.0, 0.0, 10.0),
        corner("br", 11000.0, 0.0, 10.0),
        corner("tl", 0.0, 11000.0, 10.0),
        corner("tr", 11000.0, 11000.0, 10.0),
    ])
    .unwrap();
    let flat_stats = corner_tilt_worst_case(&flat).unwrap();
    check(
        &mut failures,
        flat_stats.worst_tilt_urad.abs() < 0.01,
        format!("equal corners: {:.4} µrad ~ 0", flat_stats.worst_tilt_urad),
    );

    let stepped = CornerSet::new([
        corner("bl", 0.0, 0.0, 10.0),
        corner("br", 11000.0, 0.0, 10.5),
        corner("tl", 0.0, 11000.0, 10.0),
        corner("tr", 11000.0, 11000.0, 10.5),
    ])
    .unwrap();
    let stepped_stats = corner_tilt_worst_case(&stepped).unwrap();
    let oracle_edge = (0.5f64 / 11000.0).atan() * 1e6;
    let oracle_diag = (0.5f64 / (11000.0 * 2.0f64.sqrt())).atan() * 1e6;
    check(
        &mut failures,
        (stepped_stats.worst_tilt_urad - oracle_edge).abs() < 0.01,
        format!(
            "edge-dominated case: {:.4} µrad vs arctan oracle {:.4} µrad",
            stepped_stats.worst_tilt_urad, oracle_edge
        ),
    );
    check(
        &mut failures,
        oracle_diag < oracle_edge,
        format!("diagonal pair {oracle_diag:.4} µrad stays below edge pair"),
    );
    check(
        &mut failures,
        (stepped_stats.mean_separation_um - 10.25).abs() < 1e-9,
        format!("mean corner separation {:.4} µm = 10.25", stepped_stats.mean_separation_um),
    );

    // bundled edge-on corner table reproduces the published aggregate
    let file = std::fs::File::open(data_dir().join("sem_corners.csv")).unwrap();
    let sets = corners_from_csv(std::io::BufReader::new(file)).unwrap();
    assert_eq!(sets.len(), 9);
    let mut sep_sum = 0.0;
    let mut tilt_sum = 0.0;
    for (_, set) in &sets {
        let stats = corner_tilt_worst_case(set).unwrap();
        sep_sum += stats.mean_separation_um;
        tilt_sum += stats.worst_tilt_urad;
    }
    let mean_sep = sep_sum / 9.0;
    let mean_tilt = tilt_sum / 9.0;
    check(
        &mut failures,
        (mean_sep * 10.0).round() / 10.0 == 11.0,
        format!("bundled corner table: mean separation {mean_sep:.3} µm rounds to 11.0"),
    );
    check(
        &mut failures,
        mean_tilt.round() == 62.0,
        format!("bundled corner table: mean worst-case tilt {mean_tilt:.2} µrad rounds to 62"),
    );

    finish("criterion 6: corner-pair tilt method", failures);
}

#[test]
fn criterion_07_notch_fitting() {
    let mut failures = Vec::new();
    let start = Instant::now();

    let q_i_true = 5e5;
    let q_c_true = 2e6;
    let phi_true: f64 = 0.3;
    let q_l_true = 1.0 / (1.0 / q_i_true + phi_true.cos() / q_c_true);
    let f0_true = 5e9;
    let params = NotchParams {
        f0_hz: f0_true,
        q_l: q_l_true,
        q_c_mag: q_c_true,
        phi_rad: phi_true,
        amplitude: 0.82,
        phase_rad: 0.6,
        delay_s: 4.2e-8,
    };
    let linewidth = f0_true / q_l_true;
    let half_span = 2.5 * linewidth;
    let freqs: Vec<f64> = (0..201)
        .map(|i| f0_true - half_span + 2.0 * half_span * i as f64 / 200.0)
        .collect();

    // noise-free recovery within 0.1%
    let clean = ComplexTrace::new(freqs.clone(), synth_trace(&params, &freqs)).unwrap();
    let fit = fit_notch(&clean).unwrap();
    for (name, got, want) in [
        ("f0", fit.f0_hz, f0_true),
        ("Q_l", fit.q_l, q_l_true),
        ("|Q_c|", fit.q_c_mag, q_c_true),
        ("Q_i", fit.q_i, q_i_true),
    ] {
        let rel = ((got - want) / want).abs();
        check(
            &mut failures,
            rel < 1e-3,
            format!("noise-free {name}: {got:.6e} vs {want:.6e} ({:.4}%)", rel * 100.0),
        );
    }

    // Monte Carlo at 40 dB SNR
    let sigma = params.amplitude * 10f64.powf(-40.0 / 20.0);
    let mut hits = 0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut gauss = |rng: &mut ChaCha8Rng| {
            let u1: f64 = rng.gen::<f64>().max(1e-300);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
        };
        let noisy: Vec<Complex64> = synth_trace(&params, &freqs)
            .into_iter()
            .map(|z| {
                z + Complex64::new(
                    sigma / 2.0f64.sqrt() * gauss(&mut rng),
                    sigma / 2.0f64.sqrt() * gauss(&mut rng),
                )
            })
            .collect();
        let trace = ComplexTrace::new(freqs.clone(), noisy).unwrap();
        match fit_notch(&trace) {
            Ok(fit) => {
                let qi_ok = ((fit.q_i - q_i_true) / q_i_true).abs() < 0.05;
                let f0_ok = (fit.f0_hz - f0_true).abs() < 0.1 * linewidth;
                if qi_ok && f0_ok {
                    hits += 1;
                }
            }
            Err(_) => {}
        }
    }
    check(
        &mut failures,
        hits >= 95,
        format!("Monte Carlo at 40 dB SNR, phi = 0.3: {hits}/100 seeds within bounds (need >= 95)"),
    );

    let elapsed = start.elapsed();
    check(
        &mut failures,
        elapsed.as_secs_f64() < 10.0,
        format!("runtime {:.2} s < 10 s", elapsed.as_secs_f64()),
    );

    finish("criterion 7: notch fitting noise-free and Monte Carlo", failures);
}

/// Minimal double-double arithmetic for the extended-precision oracle.
mod dd {
    #[derive(Clone, Copy)]
    pub struct Dd {
        pub hi: f64,
        pub lo: f64,
    }

    pub fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let v = s - a;
        let e = (a - (s - v)) + (b - v);
        Dd { hi: s, lo: e }
    }

    fn two_prod(a: f64, b: f64) -> Dd {
        let p = a * b;
        let e = a.mul_add(b, -p);
        Dd { hi: p, lo: e }
    }

    pub fn add(a: Dd, b: Dd) -> Dd {
        let s = two_sum(a.hi, b.hi);
        let lo = s.lo + a.lo + b.lo;
        let t = two_sum(s.hi, lo);
        Dd { hi: t.hi, lo: t.lo }
    }

    pub fn mul(a: Dd, b: Dd) -> Dd {
        let p = two_prod(a.hi, b.hi);
        let lo = p.lo + a.hi * b.lo + a.lo * b.hi;
        let t = two_sum(p.hi, lo);
        Dd { hi: t.hi, lo: t.lo }
    }

    pub fn div(a: Dd, b: Dd) -> Dd {
        let q0 = a.hi / b.hi;
        let r = add(a, neg(mul(from(q0), b)));
        let q1 = r.hi / b.hi;
        let r2 = add(r, neg(mul(from(q1), b)));
        let q2 = r2.hi / b.hi;
        add(add(from(q0), from(q1)), from(q2))
    }

    fn neg(a: Dd) -> Dd {
        Dd { hi: -a.hi, lo: -a.lo }
    }
}

#[test]
fn criterion_08_photon_number() {
    let mut failures = Vec::new();

    // formula vs extended-precision oracle
    let f0 = 5e9;
    let omega0 = 2.0 * PI * f0;
    let q_i = 5e5;
    let q_c = 2e6;
    let kappa = omega0 / q_c;
    let gamma = omega0 / q_i;
    let p_app = 1e-15;
    let n_impl = photon_number_from_rates(omega0, kappa, gamma, p_app).unwrap();

    let total = dd::add(dd::from(kappa), dd::from(gamma));
    let numerator = dd::mul(dd::mul(dd::from(2.0), dd::from(kappa)), dd::from(p_app));
    let denominator = dd::mul(
        dd::mul(dd::from(HBAR), dd::from(omega0)),
        dd::mul(total, total),
    );
    let n_oracle = dd::div(numerator, denominator).hi;
    let rel = ((n_impl - n_oracle) / n_oracle).abs();
    check(
        &mut failures,
        rel < 1e-9,
        format!("n_int = {n_impl:.9e} vs extended-precision {n_oracle:.9e} ({rel:.2e} rel)"),
    );
    check(
        &mut failures,
        (n_oracle - 1.537e3).abs() / 1.537e3 < 0.01,
        format!("oracle value {n_oracle:.4e} is about 1.54e3 photons"),
    );

    // exact linearity in applied power
    let n1 = photon_number_from_rates(omega0, kappa, gamma, 1e-15).unwrap();
    let n2 = photon_number_from_rates(omega0, kappa, gamma, 2e-15).unwrap();
    check(
        &mut failures,
        n2 == 2.0 * n1,
        format!("doubling power doubles photons exactly ({n1:.6e} -> {n2:.6e})"),
    );

    // exact proportionality to kappa at fixed kappa + gamma
    let na = photon_number_from_rates(omega0, 1e4, 3e4, 1e-15).unwrap();
    let nb = photon_number_from_rates(omega0, 2e4, 2e4, 1e-15).unwrap();
    check(
        &mut failures,
        nb == 2.0 * na,
        format!("kappa proportionality at fixed total ({na:.6e} -> {nb:.6e})"),
    );

    // zero power gives exactly zero photons
    let n0 = photon_number_from_rates(omega0, kappa, gamma, 0.0).unwrap();
    check(&mut failures, n0 == 0.0, format!("zero power gives {n0} photons"));

    finish("criterion 8: photon-number formula", failures);
}

#[test]
fn criterion_09_relative_q() {
    let mut failures = Vec::new();

    let rec = |w: f64, p: f64| ParticipationRecord {
        w_um: w,
        facing: Facing::Metal,
        p_ms: 0.5 * p,
        p_mv: 0.2 * p,
        p_sv: 0.3 * p,
        p_bulk_substrate: None,
        p_vacuum: None,
    };
    // p_sigma spans 5x from w = 2.5 to w = 20 µm
    let records = vec![rec(2.5, 0.025), rec(5.0, 0.010), rec(20.0, 0.005)];
    let curve = relative_q(&records, Facing::Metal, 5.0, 5e5).unwrap();

    let q_anchor = curve.points.iter().find(|p| p.0 == 5.0).unwrap().1;
    check(
        &mut failures,
        q_anchor == 5e5,
        format!("anchor reproduced exactly: {q_anchor}"),
    );

    let q_lo = curve.points.iter().find(|p| p.0 == 2.5).unwrap().1;
    let q_hi = curve.points.iter().find(|p| p.0 == 20.0).unwrap().1;
    let span = q_hi / q_lo;
    check(
        &mut failures,
        (span - 5.0).abs() < 1e-12,
        format!("5x participation span gives {span:.12}x quality-factor span"),
    );

    // monotone increasing when participation decreases with width
    check(
        &mut failures,
        curve.points.windows(2).all(|p| p[1].1 > p[0].1),
        "predicted quality factors increase with width".into(),
    );

    finish("criterion 9: relative quality factors", failures);
}

#[test]
fn criterion_10_report_determinism() {
    let mut failures = Vec::new();

    let dataset = data_dir().join("report_dataset");
    let config = dataset.join("config.json");
    let out_a = std::env::temp_dir().join("flipchip_acceptance_report_a");
    let out_b = std::env::temp_dir().join("flipchip_acceptance_report_b");
    for dir in [&out_a, &out_b] {
        let _ = std::fs::remove_dir_all(dir);
    }

    for out in [&out_a, &out_b] {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_flipchip"))
            .args([
                "--config",
                config.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "report",
                "--dataset",
                dataset.to_str().unwrap(),
            ])
            .status()
            .expect("running the report pipeline");
        check(
            &mut failures,
            status.success(),
            format!("report run into {} exits 0", out.display()),
        );
    }

    let mut names: Vec<String> = std::fs::read_dir(&out_a)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    check(
        &mut failures,
        names.iter().any(|n| n == "report.json"),
        "report.json produced".into(),
    );
    for name in &names {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        check(
            &mut failures,
            a == b,
            format!("{name}: {} bytes, byte-identical across runs", a.len()),
        );
    }

    finish("criterion 10: report determinism", failures);
}
