//! The `report` pipeline: run every analysis stage over a dataset
//! directory and emit one deterministic JSON report plus per-stage CSV
//! artifacts.
//!
//! Dataset layout:
//!
//! ```text
//! dataset/
//!   heightmaps/*.csv     profilometer samples, x_um,y_um,z_um
//!   resonators.csv       index,length_um,f_ghz[,facing][,copy_id]
//!   corners.csv          optional: module,corner,x_um,y_um,z_um
//! ```
//!
//! Stage failures do not abort the run: partial artifacts are kept and the
//! failures are listed in `error_manifest.json`, with a nonzero exit left
//! to the caller.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use flipchip_core::heightmap::{
    corner_tilt_worst_case, crop_top_chip, level_to_bottom_plane, mask_artifact_scans,
    scans_from_csv, summarize_chip, BottomSelect, ChipSummary,
};
use flipchip_core::resonator::{deviation_stats, fit_vph, FrequencyCopy, FrequencyFit};
use flipchip_core::Facing;

use crate::config::PipelineConfig;
use crate::io::read_resonators;
use crate::jsonout::Json;

/// 64-bit FNV-1a, used to fingerprint input files inside reports.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

#[derive(Debug, Clone)]
pub struct StageError {
    pub stage: String,
    pub input: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ReportOutcome {
    pub report_path: PathBuf,
    pub errors: Vec<StageError>,
}

fn rel_name(path: &Path, base: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn heightmap_summary_json(file: &str, summary: &ChipSummary) -> Json {
    Json::obj(vec![
        ("file", Json::str(file)),
        ("mean_separation_um", Json::Num(summary.mean_separation_um)),
        ("tilt_urad", Json::Num(summary.tilt_urad)),
        ("bow_um", Json::Num(summary.bow_um)),
        ("masked_columns", Json::Int(summary.n_masked_scans as i64)),
        (
            "plane",
            Json::obj(vec![
                ("a", Json::Num(summary.plane.a)),
                ("b", Json::Num(summary.plane.b)),
                ("c", Json::Num(summary.plane.c)),
            ]),
        ),
    ])
}

fn fit_json(facing: &str, n: usize, fit: &FrequencyFit) -> Json {
    Json::obj(vec![
        ("facing", Json::str(facing)),
        ("n_resonators", Json::Int(n as i64)),
        ("v_ph_m_per_s", Json::Num(fit.v_ph_m_per_s)),
        ("b_s", Json::Num(fit.b_s)),
        ("residual_rms_mhz", Json::Num(fit.residual_rms_mhz)),
        (
            "residuals_mhz",
            Json::Arr(
                fit.residuals_mhz
                    .iter()
                    .map(|&(index, res)| {
                        Json::obj(vec![
                            ("index", Json::Int(index as i64)),
                            ("residual_mhz", Json::Num(res)),
                        ])
                    })
                    .collect(),
            ),
        ),
    ])
}

/// Execute the full pipeline over a dataset directory.
pub fn run_report(
    config: &PipelineConfig,
    dataset_dir: &Path,
    out_dir: &Path,
) -> Result<ReportOutcome> {
    config.validate()?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;

    let mut errors: Vec<StageError> = Vec::new();
    let mut inputs: Vec<(String, String)> = Vec::new(); // (relative path, checksum)

    // discover inputs in deterministic order
    let heightmap_dir = dataset_dir.join("heightmaps");
    let mut heightmap_files: Vec<PathBuf> = match fs::read_dir(&heightmap_dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
            .collect(),
        Err(_) => Vec::new(),
    };
    heightmap_files.sort();
    let resonators_file = dataset_dir.join("resonators.csv");
    let corners_file = dataset_dir.join("corners.csv");

    let have_resonators = resonators_file.is_file();
    let have_corners = corners_file.is_file();
    if heightmap_files.is_empty() && !have_resonators && !have_corners {
        let manifest = Json::obj(vec![
            ("status", Json::str("error")),
            (
                "errors",
                Json::Arr(vec![Json::obj(vec![
                    ("stage", Json::str("discover")),
                    ("input", Json::str(dataset_dir.display().to_string())),
                    ("message", Json::str("no inputs")),
                ])]),
            ),
        ]);
        fs::write(out_dir.join("error_manifest.json"), manifest.render())?;
        return Ok(ReportOutcome {
            report_path: out_dir.join("report.json"),
            errors: vec![StageError {
                stage: "discover".into(),
                input: dataset_dir.display().to_string(),
                message: "no inputs".into(),
            }],
        });
    }

    for path in heightmap_files
        .iter()
        .chain(have_resonators.then_some(&resonators_file))
        .chain(have_corners.then_some(&corners_file))
    {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        inputs.push((rel_name(path, dataset_dir), format!("{:016x}", fnv1a64(&bytes))));
    }

    // height maps: level -> crop -> mask -> summarize
    let mut map_sections: Vec<Json> = Vec::new();
    for path in &heightmap_files {
        let rel = rel_name(path, dataset_dir);
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "map".into());
        let result = (|| -> Result<(ChipSummary, String)> {
            let file = fs::File::open(path)?;
            let scans = scans_from_csv(BufReader::new(file))?;
            let leveled = level_to_bottom_plane(
                &scans,
                &BottomSelect::AutoCluster {
                    step_threshold_um: config.step_threshold_um,
                },
            )?;
            let top = crop_top_chip(&leveled.map, config.step_threshold_um)?;
            let masked = mask_artifact_scans(&top, config.mask_threshold_um);
            let summary = summarize_chip(&masked, config.substrate_thickness_um)?;

            let artifact = out_dir.join(format!("{stem}.leveled.csv"));
            let mut buffer = Vec::new();
            masked.to_csv(&mut buffer)?;
            fs::write(&artifact, buffer)?;
            Ok((summary, rel.clone()))
        })();
        match result {
            Ok((summary, file)) => map_sections.push(heightmap_summary_json(&file, &summary)),
            Err(err) => errors.push(StageError {
                stage: "heightmap".into(),
                input: rel,
                message: format!("{err:#}"),
            }),
        }
    }

    // resonator frequency fits per facing group
    let mut fit_sections: Vec<Json> = Vec::new();
    let mut deviation_section: Option<Json> = None;
    if have_resonators {
        match read_resonators(&resonators_file) {
            Ok(records) => {
                let mut groups: Vec<(String, Vec<_>)> = Vec::new();
                if config.fit.per_facing {
                    for facing in [Facing::Metal, Facing::Dielectric] {
                        let members: Vec<_> = records
                            .iter()
                            .filter(|r| r.facing == Some(facing))
                            .cloned()
                            .collect();
                        if !members.is_empty() {
                            groups.push((facing.to_string(), members));
                        }
                    }
                    let unlabeled: Vec<_> =
                        records.iter().filter(|r| r.facing.is_none()).cloned().collect();
                    if !unlabeled.is_empty() {
                        groups.push(("unspecified".into(), unlabeled));
                    }
                } else {
                    groups.push(("all".into(), records.clone()));
                }

                let mut residual_rows = String::from("facing,index,residual_mhz\n");
                for (label, members) in &groups {
                    match fit_vph(members) {
                        Ok(fit) => {
                            for &(index, res) in &fit.residuals_mhz {
                                residual_rows
                                    .push_str(&format!("{label},{index},{res}\n"));
                            }
                            fit_sections.push(fit_json(label, members.len(), &fit));
                        }
                        Err(err) => errors.push(StageError {
                            stage: "fit-vph".into(),
                            input: format!("resonators.csv[{label}]"),
                            message: format!("{err:#}"),
                        }),
                    }
                }
                fs::write(out_dir.join("fit_residuals.csv"), residual_rows)?;

                // copy-to-copy reproducibility when copies are labelled
                let mut copies: BTreeMap<String, Vec<(u32, f64)>> = BTreeMap::new();
                for record in &records {
                    if let (Some(copy), Some(f)) = (&record.copy_id, record.measured_f_ghz) {
                        copies.entry(copy.clone()).or_default().push((record.index, f));
                    }
                }
                if copies.len() >= 2 {
                    let copy_list: Vec<FrequencyCopy> = copies
                        .into_iter()
                        .map(|(copy_id, points)| FrequencyCopy { copy_id, points })
                        .collect();
                    match deviation_stats(&copy_list) {
                        Ok(stats) => {
                            deviation_section = Some(Json::obj(vec![
                                ("n_copies", Json::Int(copy_list.len() as i64)),
                                (
                                    "n_shared_indices",
                                    Json::Int(stats.per_index.len() as i64),
                                ),
                                ("mean_abs_mhz", Json::Num(stats.mean_abs_mhz)),
                                ("max_abs_mhz", Json::Num(stats.max_abs_mhz)),
                            ]));
                        }
                        Err(err) => errors.push(StageError {
                            stage: "deviation-stats".into(),
                            input: "resonators.csv".into(),
                            message: format!("{err:#}"),
                        }),
                    }
                }
            }
            Err(err) => errors.push(StageError {
                stage: "fit-vph".into(),
                input: "resonators.csv".into(),
                message: format!("{err:#}"),
            }),
        }
    }

    // corner-pair tilt statistics
    let mut corner_section: Option<Json> = None;
    if have_corners {
        let result = (|| -> Result<Json> {
            let file = fs::File::open(&corners_file)?;
            let sets = flipchip_core::heightmap::corners_from_csv(BufReader::new(file))?;
            let mut modules = Vec::new();
            let mut sep_sum = 0.0;
            let mut tilt_sum = 0.0;
            for (module, set) in &sets {
                let stats = corner_tilt_worst_case(set)?;
                sep_sum += stats.mean_separation_um;
                tilt_sum += stats.worst_tilt_urad;
                modules.push(Json::obj(vec![
                    ("module", Json::str(module.clone())),
                    ("mean_separation_um", Json::Num(stats.mean_separation_um)),
                    ("worst_tilt_urad", Json::Num(stats.worst_tilt_urad)),
                ]));
            }
            let n = sets.len().max(1) as f64;
            Ok(Json::obj(vec![
                ("n_modules", Json::Int(sets.len() as i64)),
                ("mean_separation_um", Json::Num(sep_sum / n)),
                ("mean_worst_tilt_urad", Json::Num(tilt_sum / n)),
                ("modules", Json::Arr(modules)),
            ]))
        })();
        match result {
            Ok(section) => corner_section = Some(section),
            Err(err) => errors.push(StageError {
                stage: "corner-tilt".into(),
                input: "corners.csv".into(),
                message: format!("{err:#}"),
            }),
        }
    }

    // assemble the report
    let mut fields: Vec<(&str, Json)> = vec![
        ("schema", Json::str("flipchip-report/1")),
        ("config", config.to_json()),
        (
            "inputs",
            Json::Arr(
                inputs
                    .iter()
                    .map(|(path, checksum)| {
                        Json::obj(vec![
                            ("path", Json::str(path.clone())),
                            ("fnv1a64", Json::str(checksum.clone())),
                        ])
                    })
                    .collect(),
            ),
        ),
        ("heightmaps", Json::Arr(map_sections)),
        ("frequency_fits", Json::Arr(fit_sections)),
    ];
    if let Some(section) = deviation_section {
        fields.push(("frequency_deviation", section));
    }
    if let Some(section) = corner_section {
        fields.push(("corners", section));
    }
    fields.push((
        "n_stage_errors",
        Json::Int(errors.len() as i64),
    ));

    let report_path = out_dir.join("report.json");
    fs::write(&report_path, Json::obj(fields).render())
        .with_context(|| format!("writing {}", report_path.display()))?;

    if !errors.is_empty() {
        let manifest = Json::obj(vec![
            ("status", Json::str("error")),
            (
                "errors",
                Json::Arr(
                    errors
                        .iter()
                        .map(|e| {
                            Json::obj(vec![
                                ("stage", Json::str(e.stage.clone())),
                                ("input", Json::str(e.input.clone())),
                                ("message", Json::str(e.message.clone())),
                            ])
                        })
                        .collect(),
                ),
            ),
        ]);
        fs::write(out_dir.join("error_manifest.json"), manifest.render())?;
    }

    Ok(ReportOutcome {
        report_path,
        errors,
    })
}
