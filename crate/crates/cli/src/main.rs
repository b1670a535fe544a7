use std::io::BufReader;
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use flipchip::config::PipelineConfig;
use flipchip::io::{read_participation, read_resonators, read_trace};
use flipchip::jsonout::Json;
use flipchip::report::run_report;

use flipchip_core::cpw::{line_params, shift_curve, solve_gap_for_impedance, CpwGeometry};
use flipchip_core::heightmap::{
    corner_tilt_worst_case, corners_from_csv, crop_top_chip, level_to_bottom_plane,
    mask_artifact_scans, scans_from_csv, summarize_chip, BottomSelect, ChipSummary, Rect,
};
use flipchip_core::losses::{interpolate_p_sigma, relative_q};
use flipchip_core::resonator::{design_length, fit_vph};
use flipchip_core::vnafit::{applied_power_w, fit_notch, photon_number, NotchFit};
use flipchip_core::Facing;

#[derive(Parser)]
#[command(
    name = "flipchip",
    version,
    about = "Analysis pipelines for flip-chip bonded resonator samples"
)]
struct Cli {
    /// Configuration file (JSON); falls back to $FLIPCHIP_CONFIG, then defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Stdout rendering of the summary.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Json,
    Csv,
}

#[derive(Args)]
struct CpwArgs {
    /// Center conductor width (µm).
    #[arg(long)]
    w: f64,
    /// Gap width (µm); omit together with --target-z0 to solve for it.
    #[arg(long)]
    s: Option<f64>,
    /// Chip separation (µm); defaults to the configured value.
    #[arg(long)]
    d: Option<f64>,
    /// planar, metal, or dielectric.
    #[arg(long)]
    facing: String,
    /// Substrate relative permittivity.
    #[arg(long)]
    eps: Option<f64>,
    /// Substrate thickness (µm).
    #[arg(long)]
    h: Option<f64>,
    /// Opposite-chip relative permittivity (dielectric facing).
    #[arg(long = "eps-top")]
    eps_top: Option<f64>,
    /// Opposite-chip thickness (µm, dielectric facing).
    #[arg(long = "h-top")]
    h_top: Option<f64>,
}

impl CpwArgs {
    fn geometry(&self, config: &PipelineConfig, s_um: f64) -> Result<CpwGeometry> {
        let facing = Facing::from_str(&self.facing).map_err(|e| anyhow!(e))?;
        let eps = self.eps.unwrap_or(config.cpw.eps_substrate);
        let h = self.h.unwrap_or(config.cpw.h_substrate_um);
        let d = self.d.unwrap_or(config.cpw.d_um);
        Ok(match facing {
            Facing::Planar => CpwGeometry::planar(self.w, s_um, eps, h),
            Facing::Metal => CpwGeometry::metal_facing(self.w, s_um, eps, h, d),
            Facing::Dielectric => CpwGeometry::dielectric_facing(
                self.w,
                s_um,
                eps,
                h,
                d,
                self.eps_top.unwrap_or(config.cpw.eps_superstrate),
                self.h_top.unwrap_or(config.cpw.h_superstrate_um),
            ),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Level profilometer scans to the bottom-chip plane and re-emit them.
    Level {
        /// Scan samples, x_um,y_um,z_um.
        #[arg(long)]
        input: PathBuf,
        /// Bottom-chip rectangle x_min,x_max,y_min,y_max (µm); repeatable.
        /// Without it, the bottom region is picked by a two-cluster split.
        #[arg(long = "rect")]
        rects: Vec<String>,
        /// Cluster-split threshold (µm) for the automatic bottom region.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Full profilometry pipeline: level, crop, mask, summarize.
    Tilt {
        #[arg(long)]
        input: PathBuf,
        /// Top-chip substrate thickness to subtract (µm).
        #[arg(long)]
        substrate: Option<f64>,
        #[arg(long)]
        step: Option<f64>,
        /// Artifact-scan median jump threshold (µm).
        #[arg(long)]
        mask: Option<f64>,
    },
    /// Worst-case corner-pair tilt from corner separation measurements.
    CornerTilt {
        /// Corner rows: [module,]corner,x_um,y_um,z_um.
        #[arg(long)]
        input: PathBuf,
    },
    /// Per-length CPW parameters from quasi-static conformal mapping.
    Cpw {
        #[command(flatten)]
        args: CpwArgs,
        /// Solve for the gap that hits this impedance (Ω) instead of using --s.
        #[arg(long = "target-z0")]
        target_z0: Option<f64>,
    },
    /// Phase-velocity ratio versus chip separation.
    ShiftCurve {
        #[command(flatten)]
        args: CpwArgs,
        #[arg(long = "d-min")]
        d_min: f64,
        #[arg(long = "d-max")]
        d_max: f64,
        #[arg(long = "d-step")]
        d_step: f64,
        /// Reference separation (µm); defaults to the configured value.
        #[arg(long = "d-ref")]
        d_ref: Option<f64>,
    },
    /// Fit phase velocity and loading constant to measured resonators.
    FitVph {
        /// Rows: index,length_um,f_ghz[,facing][,copy_id].
        #[arg(long)]
        input: PathBuf,
        /// Restrict to one facing group.
        #[arg(long)]
        facing: Option<String>,
    },
    /// Resonator length hitting a target frequency.
    DesignLength {
        #[arg(long = "f-ghz")]
        f_ghz: f64,
        #[arg(long = "v-ph")]
        v_ph: f64,
        /// Loading time constant b (s).
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        b: f64,
    },
    /// Fit a notch resonance in a complex S21 trace.
    FitNotch {
        /// Rows: f_hz,re_s21,im_s21.
        #[arg(long)]
        input: PathBuf,
        /// Source power (dBm); with --attenuation-db, appends a photon number.
        #[arg(long = "power-dbm", allow_hyphen_values = true)]
        power_dbm: Option<f64>,
        #[arg(long = "attenuation-db")]
        attenuation_db: Option<f64>,
        /// Attenuation uncertainty band (dB) propagated onto the photon number.
        #[arg(long = "attenuation-band-db")]
        attenuation_band_db: Option<f64>,
    },
    /// Photon number from resonance parameters and applied power.
    Photons {
        #[arg(long = "f0-hz")]
        f0_hz: f64,
        #[arg(long)]
        qi: f64,
        #[arg(long)]
        qc: f64,
        #[arg(long = "power-dbm", allow_hyphen_values = true)]
        power_dbm: f64,
        #[arg(long = "attenuation-db")]
        attenuation_db: f64,
        #[arg(long = "attenuation-band-db")]
        attenuation_band_db: Option<f64>,
    },
    /// Relative quality factors from interface participation ratios.
    Relq {
        /// Rows: w_um,facing,p_ms,p_mv,p_sv.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        facing: String,
        #[arg(long = "anchor-w")]
        anchor_w: f64,
        #[arg(long = "anchor-q")]
        anchor_q: f64,
        /// Also interpolate p_sigma at this width (µm).
        #[arg(long = "query-w")]
        query_w: Option<f64>,
    },
    /// Run every stage over a dataset directory and emit a report bundle.
    Report {
        #[arg(long)]
        dataset: PathBuf,
    },
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            std::process::exit(1);
        }
    }
}

fn emit(format: OutputFormat, doc: &Json) {
    match format {
        OutputFormat::Json => print!("{}", doc.render()),
        OutputFormat::Csv => print!("{}", doc.to_flat_csv()),
    }
}

fn summary_json(summary: &ChipSummary) -> Json {
    Json::obj(vec![
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
        (
            "substrate_thickness_um",
            Json::Num(summary.substrate_thickness_um),
        ),
    ])
}

fn notch_json(fit: &NotchFit) -> Vec<(&'static str, Json)> {
    vec![
        ("f0_hz", Json::Num(fit.f0_hz)),
        ("q_l", Json::Num(fit.q_l)),
        ("q_c_mag", Json::Num(fit.q_c_mag)),
        ("phi_rad", Json::Num(fit.phi_rad)),
        ("q_i", Json::Num(fit.q_i)),
        (
            "background",
            Json::obj(vec![
                ("amplitude", Json::Num(fit.background.amplitude)),
                ("phase_rad", Json::Num(fit.background.phase_rad)),
                ("delay_s", Json::Num(fit.background.delay_s)),
            ]),
        ),
        ("rms_residual", Json::Num(fit.rms_residual)),
    ]
}

fn parse_rect(raw: &str) -> Result<Rect> {
    let parts: Vec<f64> = raw
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad rectangle {raw:?}"))?;
    if parts.len() != 4 {
        bail!("rectangle {raw:?} must be x_min,x_max,y_min,y_max");
    }
    Ok(Rect {
        x_min_um: parts[0],
        x_max_um: parts[1],
        y_min_um: parts[2],
        y_max_um: parts[3],
    })
}

fn run(cli: Cli) -> Result<i32> {
    let config = PipelineConfig::resolve(cli.config.as_deref())?;
    config.validate()?;
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.out_dir.as_ref().map(PathBuf::from));
    if let Some(dir) = &out_dir {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
    }

    match cli.command {
        Command::Level { input, rects, step } => {
            let scans = scans_from_csv(BufReader::new(
                std::fs::File::open(&input)
                    .with_context(|| format!("opening {}", input.display()))?,
            ))?;
            let select = if rects.is_empty() {
                BottomSelect::AutoCluster {
                    step_threshold_um: step.unwrap_or(config.step_threshold_um),
                }
            } else {
                BottomSelect::Rects(rects.iter().map(|r| parse_rect(r)).collect::<Result<_>>()?)
            };
            let leveled = level_to_bottom_plane(&scans, &select)?;
            let doc = Json::obj(vec![(
                "plane",
                Json::obj(vec![
                    ("a", Json::Num(leveled.plane.a)),
                    ("b", Json::Num(leveled.plane.b)),
                    ("c", Json::Num(leveled.plane.c)),
                ]),
            )]);
            if let Some(dir) = &out_dir {
                let path = dir.join("leveled.csv");
                let mut buffer = Vec::new();
                leveled.map.to_csv(&mut buffer)?;
                std::fs::write(&path, buffer)?;
            }
            emit(cli.format, &doc);
        }
        Command::Tilt {
            input,
            substrate,
            step,
            mask,
        } => {
            let scans = scans_from_csv(BufReader::new(
                std::fs::File::open(&input)
                    .with_context(|| format!("opening {}", input.display()))?,
            ))?;
            let step_um = step.unwrap_or(config.step_threshold_um);
            let leveled = level_to_bottom_plane(
                &scans,
                &BottomSelect::AutoCluster {
                    step_threshold_um: step_um,
                },
            )?;
            let top = crop_top_chip(&leveled.map, step_um)?;
            let masked = mask_artifact_scans(&top, mask.unwrap_or(config.mask_threshold_um));
            let summary =
                summarize_chip(&masked, substrate.unwrap_or(config.substrate_thickness_um))?;
            if let Some(dir) = &out_dir {
                let mut buffer = Vec::new();
                masked.to_csv(&mut buffer)?;
                std::fs::write(dir.join("top_chip.leveled.csv"), buffer)?;
            }
            emit(cli.format, &summary_json(&summary));
        }
        Command::CornerTilt { input } => {
            let sets = corners_from_csv(BufReader::new(
                std::fs::File::open(&input)
                    .with_context(|| format!("opening {}", input.display()))?,
            ))?;
            if sets.is_empty() {
                bail!("{}: no corner rows", input.display());
            }
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
            let n = sets.len() as f64;
            let doc = Json::obj(vec![
                ("n_modules", Json::Int(sets.len() as i64)),
                ("mean_separation_um", Json::Num(sep_sum / n)),
                ("mean_worst_tilt_urad", Json::Num(tilt_sum / n)),
                ("modules", Json::Arr(modules)),
            ]);
            emit(cli.format, &doc);
        }
        Command::Cpw { args, target_z0 } => {
            let (geometry, solved_gap) = match (args.s, target_z0) {
                (Some(s), None) => (args.geometry(&config, s)?, None),
                (None, Some(target)) => {
                    let template = args.geometry(&config, 1.0)?;
                    let s = solve_gap_for_impedance(&template, target)?;
                    (template.with_gap(s), Some(s))
                }
                (Some(s), Some(target)) => {
                    let template = args.geometry(&config, s)?;
                    let solved = solve_gap_for_impedance(&template, target)?;
                    (template.with_gap(solved), Some(solved))
                }
                (None, None) => bail!("provide --s or --target-z0"),
            };
            let params = line_params(&geometry)?;
            let mut fields = vec![
                ("eps_eff", Json::Num(params.eps_eff)),
                ("z0_ohm", Json::Num(params.z0_ohm)),
                ("v_ph_m_per_s", Json::Num(params.v_ph_m_per_s)),
                ("c_per_m", Json::Num(params.c_per_m)),
                ("l_per_m", Json::Num(params.l_per_m)),
            ];
            if let Some(s) = solved_gap {
                fields.push(("s_um", Json::Num(s)));
            }
            emit(cli.format, &Json::obj(fields));
        }
        Command::ShiftCurve {
            args,
            d_min,
            d_max,
            d_step,
            d_ref,
        } => {
            if !(d_step > 0.0) || d_max < d_min {
                bail!("need d_min <= d_max and d_step > 0");
            }
            let geometry = args.geometry(&config, args.s.context("--s is required")?)?;
            let d_ref = d_ref.unwrap_or(config.cpw.d_um);
            let mut ds = Vec::new();
            let mut d = d_min;
            while d <= d_max + 1e-12 {
                ds.push(d);
                d += d_step;
            }
            let curve = shift_curve(&geometry, &ds, d_ref)?;
            let mut csv = String::from("d_um,ratio\n");
            for &(d, ratio) in &curve {
                csv.push_str(&format!("{d},{ratio}\n"));
            }
            if let Some(dir) = &out_dir {
                std::fs::write(dir.join("shift_curve.csv"), &csv)?;
            }
            match cli.format {
                OutputFormat::Csv => print!("{csv}"),
                OutputFormat::Json => {
                    let doc = Json::obj(vec![
                        ("d_ref_um", Json::Num(d_ref)),
                        (
                            "points",
                            Json::Arr(
                                curve
                                    .iter()
                                    .map(|&(d, r)| {
                                        Json::obj(vec![
                                            ("d_um", Json::Num(d)),
                                            ("ratio", Json::Num(r)),
                                        ])
                                    })
                                    .collect(),
                            ),
                        ),
                    ]);
                    emit(OutputFormat::Json, &doc);
                }
            }
        }
        Command::FitVph { input, facing } => {
            let mut records = read_resonators(&input)?;
            if let Some(raw) = facing {
                let wanted = Facing::from_str(&raw).map_err(|e| anyhow!(e))?;
                records.retain(|r| r.facing == Some(wanted));
                if records.is_empty() {
                    bail!("no records with facing {wanted}");
                }
            }
            let fit = fit_vph(&records)?;
            let doc = Json::obj(vec![
                ("v_ph", Json::Num(fit.v_ph_m_per_s)),
                ("b_s", Json::Num(fit.b_s)),
                ("residual_rms_mhz", Json::Num(fit.residual_rms_mhz)),
                (
                    "residuals_mhz",
                    Json::Arr(fit.residuals_mhz.iter().map(|&(_, r)| Json::Num(r)).collect()),
                ),
            ]);
            emit(cli.format, &doc);
        }
        Command::DesignLength { f_ghz, v_ph, b } => {
            let length_um = design_length(f_ghz, v_ph, b)?;
            emit(
                cli.format,
                &Json::obj(vec![("length_um", Json::Num(length_um))]),
            );
        }
        Command::FitNotch {
            input,
            power_dbm,
            attenuation_db,
            attenuation_band_db,
        } => {
            let mut trace = read_trace(&input)?;
            if let (Some(power), Some(attenuation)) = (power_dbm, attenuation_db) {
                trace = trace.with_drive(power, attenuation);
            }
            let fit = fit_notch(&trace)?;
            let mut fields = notch_json(&fit);
            if let (Some(power), Some(attenuation)) =
                (trace.vna_power_dbm, trace.line_attenuation_db)
            {
                let p_app = applied_power_w(power, attenuation);
                let photons = photon_number(&fit, p_app)?;
                fields.push(("p_app_w", Json::Num(p_app)));
                fields.push(("n_int", Json::Num(photons.n_int)));
                if let Some(band) = attenuation_band_db {
                    let lo = photon_number(&fit, applied_power_w(power, attenuation + band))?;
                    let hi = photon_number(&fit, applied_power_w(power, attenuation - band))?;
                    fields.push(("n_int_lo", Json::Num(lo.n_int)));
                    fields.push(("n_int_hi", Json::Num(hi.n_int)));
                }
            }
            emit(cli.format, &Json::obj(fields));
        }
        Command::Photons {
            f0_hz,
            qi,
            qc,
            power_dbm,
            attenuation_db,
            attenuation_band_db,
        } => {
            let omega0 = 2.0 * std::f64::consts::PI * f0_hz;
            let kappa = omega0 / qc;
            let gamma = omega0 / qi;
            let p_app = applied_power_w(power_dbm, attenuation_db);
            let n_int =
                flipchip_core::vnafit::photon_number_from_rates(omega0, kappa, gamma, p_app)?;
            let mut fields = vec![
                ("kappa_rad_per_s", Json::Num(kappa)),
                ("gamma_rad_per_s", Json::Num(gamma)),
                ("p_app_w", Json::Num(p_app)),
                ("n_int", Json::Num(n_int)),
            ];
            if let Some(band) = attenuation_band_db {
                let lo = flipchip_core::vnafit::photon_number_from_rates(
                    omega0,
                    kappa,
                    gamma,
                    applied_power_w(power_dbm, attenuation_db + band),
                )?;
                let hi = flipchip_core::vnafit::photon_number_from_rates(
                    omega0,
                    kappa,
                    gamma,
                    applied_power_w(power_dbm, attenuation_db - band),
                )?;
                fields.push(("n_int_lo", Json::Num(lo)));
                fields.push(("n_int_hi", Json::Num(hi)));
            }
            emit(cli.format, &Json::obj(fields));
        }
        Command::Relq {
            input,
            facing,
            anchor_w,
            anchor_q,
            query_w,
        } => {
            let records = read_participation(&input)?;
            let facing = Facing::from_str(&facing).map_err(|e| anyhow!(e))?;
            let curve = relative_q(&records, facing, anchor_w, anchor_q)?;
            let mut csv = String::from("w_um,q_pr\n");
            for &(w, q) in &curve.points {
                csv.push_str(&format!("{w},{q}\n"));
            }
            if let Some(dir) = &out_dir {
                std::fs::write(dir.join("relq.csv"), &csv)?;
            }
            match cli.format {
                OutputFormat::Csv => print!("{csv}"),
                OutputFormat::Json => {
                    let mut fields = vec![
                        ("facing", Json::str(facing.to_string())),
                        ("anchor_w_um", Json::Num(curve.anchor_w_um)),
                        ("anchor_q", Json::Num(curve.anchor_q)),
                        (
                            "points",
                            Json::Arr(
                                curve
                                    .points
                                    .iter()
                                    .map(|&(w, q)| {
                                        Json::obj(vec![
                                            ("w_um", Json::Num(w)),
                                            ("q_pr", Json::Num(q)),
                                        ])
                                    })
                                    .collect(),
                            ),
                        ),
                    ];
                    if let Some(w) = query_w {
                        fields.push((
                            "p_sigma_at_query",
                            Json::Num(interpolate_p_sigma(&records, facing, w)?),
                        ));
                        fields.push(("query_w_um", Json::Num(w)));
                    }
                    emit(OutputFormat::Json, &Json::obj(fields));
                }
            }
        }
        Command::Report { dataset } => {
            let out = out_dir.unwrap_or_else(|| PathBuf::from("out"));
            let outcome = run_report(&config, &dataset, &out)?;
            let doc = Json::obj(vec![
                ("report", Json::str(outcome.report_path.display().to_string())),
                ("n_errors", Json::Int(outcome.errors.len() as i64)),
            ]);
            emit(cli.format, &doc);
            if !outcome.errors.is_empty() {
                for err in &outcome.errors {
                    eprintln!("stage {} [{}]: {}", err.stage, err.input, err.message);
                }
                return Ok(1);
            }
        }
    }
    Ok(0)
}
