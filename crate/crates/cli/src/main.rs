//! Command-line pipeline: simulate scans, reconstruct and correct cubes,
//! train and run the classifier, plan pick trajectories, and execute full
//! sorting campaigns.
//!
//! Every subcommand is deterministic under a fixed `--seed`. Errors print
//! as a single `error: ...` line on stderr with a non-zero exit status.

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use hypersort_core::classifier::train_pixel_classifier;
use hypersort_core::config::{PipelineConfig, CONFIG_ENV_VAR};
use hypersort_core::cube::{build_correction_map, correct_distortion, pseudo_rgb, reconstruct};
use hypersort_core::detect::{aggregate_objects, segment_objects};
use hypersort_core::draw::{detection_overlay, success_bar_chart};
use hypersort_core::geometry::{
    fov_degrees, gamma_of_theta, scaling_factor_k, scan_duration_seconds, theta_of_row,
};
use hypersort_core::harness::{
    run_campaign, synthesize_training_cube, SortingContext, Termination,
};
use hypersort_core::io;
use hypersort_core::mnf::mnf_fit;
use hypersort_core::resolution::resolution_table;
use hypersort_core::scene::{generate_scene, SceneKind};
use hypersort_core::sim::render_scan;
use hypersort_core::spectra::default_band_centers;
use hypersort_core::trajectory::{build_sparse_path, lqt_refine, pixel_to_workspace};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "hypersort",
    about = "Rotational-scan hyperspectral imaging and sorting pipeline",
    version
)]
struct Cli {
    /// Config file (TOML); defaults to $HYPERSORT_CONFIG when set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed overriding the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scene into a frame-stream file.
    Simulate {
        /// Scene description file; omit to generate a scene instead.
        #[arg(long)]
        scene: Option<PathBuf>,
        /// Generated scene condition: discrete or cluttered.
        #[arg(long, conflicts_with = "scene")]
        generate: Option<String>,
        /// Object count for generated scenes.
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Reflectance noise sigma for generated scenes.
        #[arg(long, default_value_t = 0.02)]
        noise: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble a frame stream into an uncorrected cube.
    Reconstruct {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Payload interleave: bsq or bil.
        #[arg(long, default_value = "bsq")]
        interleave: String,
    },
    /// Resample an uncorrected cube onto the uniform metric grid.
    Correct {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Target pixel pitch in mm; defaults to the line resolution.
        #[arg(long)]
        pitch: Option<f64>,
        #[arg(long, default_value = "bsq")]
        interleave: String,
    },
    /// Train the pixel classifier on synthesized class signatures.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Training pixels per class.
        #[arg(long)]
        samples_per_class: Option<usize>,
        /// Reflectance noise sigma for synthesized pixels.
        #[arg(long)]
        sigma: Option<f64>,
    },
    /// Detect, classify, and report objects in a corrected cube.
    Classify {
        #[arg(long)]
        cube: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Annotated pseudo-RGB overlay image.
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Backdrop signature file; defaults to the builtin backdrop.
        #[arg(long)]
        background: Option<PathBuf>,
    },
    /// Plan a pick trajectory for one detected object.
    Plan {
        #[arg(long)]
        report: PathBuf,
        /// Instance id from the report.
        #[arg(long)]
        object: usize,
        #[arg(long)]
        out: PathBuf,
        /// Override bin position "x,y,z" (defaults to the class bin).
        #[arg(long)]
        bin: Option<String>,
    },
    /// Run sorting campaigns and write CSV + chart.
    Sort {
        #[arg(long)]
        out_dir: PathBuf,
        /// discrete, cluttered, or both.
        #[arg(long, default_value = "both")]
        condition: String,
        #[arg(long)]
        objects: Option<usize>,
        /// Comma-separated trial seeds.
        #[arg(long)]
        trial_seeds: Option<String>,
    },
    /// Print geometry tables: FOV, angles, scaling, scan duration.
    Geomtest {
        /// Prism side count for the FOV line.
        #[arg(long, default_value_t = 10)]
        n: u32,
        /// Motor speed in rpm for the duration line.
        #[arg(long)]
        rpm: Option<f64>,
        /// Rows sampled for the angle/scaling table.
        #[arg(long, default_value_t = 9)]
        samples: usize,
    },
    /// Bar-target resolution sweep per working height.
    ResolutionChart {
        /// Single working height, mm.
        #[arg(long)]
        height: Option<f64>,
        /// Comma-separated heights, mm.
        #[arg(long)]
        heights: Option<String>,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<(PipelineConfig, PathBuf)> {
    let path = cli
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV_VAR).map(PathBuf::from));
    match path {
        Some(p) => {
            let cfg = PipelineConfig::from_file(&p)?;
            let base = p.parent().unwrap_or(Path::new(".")).to_path_buf();
            Ok((cfg, base))
        }
        None => Ok((PipelineConfig::default(), PathBuf::from("."))),
    }
}

fn parse_vec3(s: &str) -> anyhow::Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad vector '{s}', expected x,y,z"))?;
    if parts.len() != 3 {
        bail!("bad vector '{s}', expected exactly three components");
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn parse_seed_list(s: &str) -> anyhow::Result<Vec<u64>> {
    s.split(',')
        .map(|p| p.trim().parse::<u64>().map_err(|e| anyhow!("bad seed '{p}': {e}")))
        .collect()
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        // single machine-parsable line, whatever the source formatting
        let flat = format!("{e:#}")
            .split_whitespace()
            .collect::<Vec<_>>()
            .join(" ");
        eprintln!("error: {flat}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (mut config, base_dir) = load_config(&cli)?;
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    let seed = config.seed.unwrap_or(1);

    match cli.command {
        Command::Simulate { scene, generate, count, noise, out } => {
            let geom = config.geometry_context()?;
            let prism = config.prism_config()?;
            let scene = match (scene, generate) {
                (Some(_), Some(_)) => bail!("use either --scene or --generate"),
                (Some(path), None) => io::read_scene_file(&path)?,
                (None, kind) => {
                    let kind: SceneKind = kind.as_deref().unwrap_or("discrete").parse()?;
                    let sc = config.scenario(&base_dir, Some(kind))?;
                    generate_scene(
                        kind,
                        sc.background,
                        sc.classes,
                        count,
                        sc.plane_size,
                        noise,
                        seed,
                        &sc.placement,
                    )?
                }
            };
            let frames = render_scan(&scene, &prism, &geom)?;
            io::write_frames(&frames, &out)?;
            println!(
                "wrote {} frames ({}x{} samples each) to {}",
                frames.len(),
                frames[0].cols,
                frames[0].bands,
                out.display()
            );
        }

        Command::Reconstruct { frames, out, interleave } => {
            let geom = config.geometry_context()?;
            let packets = io::read_frames(&frames)?;
            let bands = packets.first().map(|p| p.bands).unwrap_or(0);
            let cube = reconstruct(&packets, &geom, default_band_centers(bands.max(2))[..bands].to_vec())?;
            io::write_cube(&cube, &out, interleave.parse()?)?;
            println!(
                "reconstructed {}x{}x{} cube ({} interpolated rows) to {}",
                cube.rows,
                cube.cols,
                cube.bands,
                cube.interpolated_rows.len(),
                out.display()
            );
        }

        Command::Correct { cube, out, pitch, interleave } => {
            let raw = io::read_cube(&cube)?;
            let pitch = pitch.unwrap_or(raw.geom.line_resolution_dx);
            let map = build_correction_map(&raw.geom, pitch)?;
            let corrected = correct_distortion(&raw, &map)?;
            io::write_cube(&corrected, &out, interleave.parse()?)?;
            println!(
                "corrected cube {}x{}x{} at {} mm/px to {}",
                corrected.rows,
                corrected.cols,
                corrected.bands,
                pitch,
                out.display()
            );
        }

        Command::Train { out, samples_per_class, sigma } => {
            let classes = config.class_signatures(&base_dir)?;
            let per_class = samples_per_class.unwrap_or(config.training.samples_per_class);
            let sigma = sigma.unwrap_or(config.training.noise_sigma);
            let (cube, labels) =
                synthesize_training_cube(&classes, per_class, sigma, config.training.seed ^ seed)?;
            let mut mnf = mnf_fit(&cube, None)?;
            mnf.retained_k = config.mnf.retained_k_for(mnf.bands)?;
            let k = mnf.retained_k;
            let mut data = Vec::with_capacity(labels.len());
            for v in 0..cube.rows {
                for u in 0..cube.cols {
                    data.push((mnf.project_f32(cube.spectrum(v, u), k)?, labels[v * cube.cols + u]));
                }
            }
            let mut spec = config.classifier_spec(classes.len());
            spec.seed ^= seed;
            let classifier = train_pixel_classifier(&spec, &data)?;
            println!(
                "trained on {} pixels/class at sigma {}: accuracy {:.4} after {} epochs ({} -> {} bands)",
                per_class, sigma, classifier.final_train_accuracy, classifier.epochs_run, mnf.bands, k
            );
            let bundle = io::ModelBundle {
                classifier,
                mnf,
                class_names: classes.iter().map(|c| c.class_name.clone()).collect(),
                band_centers: classes[0].band_centers.clone(),
            };
            io::write_model(&bundle, &out)?;
            println!("wrote model to {}", out.display());
        }

        Command::Classify { cube, model, report, overlay, background } => {
            let cube = io::read_cube(&cube)?;
            if !cube.corrected {
                bail!("classify expects a corrected cube; run `correct` first");
            }
            let bundle = io::read_model(&model)?;
            let backdrop = match background {
                Some(p) => io::read_signature_file(&p, "backdrop")?,
                None => config.background_signature(&base_dir)?,
            };
            let params = config.detection_params();
            let masks = segment_objects(&cube, &backdrop, &params)?;
            let labels = hypersort_core::classifier::predict_pixel_labels(
                &cube,
                &masks,
                &bundle.classifier,
                &bundle.mnf,
            )?;
            let grid = cube.grid.clone().ok_or_else(|| anyhow!("corrected cube carries no grid"))?;
            let objects = aggregate_objects(
                &labels,
                &masks,
                &cube,
                &bundle.mnf,
                bundle.classifier.input_len,
                grid.pitch,
                &params,
            )?;
            for obj in &objects {
                let name = obj
                    .class_index
                    .and_then(|c| bundle.class_names.get(c).cloned())
                    .unwrap_or_else(|| "unknown".into());
                println!(
                    "object {}: {} (purity {:.3}, {} suction points)",
                    obj.instance_id,
                    name,
                    obj.purity,
                    obj.suction_points.len()
                );
            }
            let det = io::DetectionReport {
                grid,
                class_names: bundle.class_names.clone(),
                objects: objects.clone(),
            };
            io::write_report(&det, &report)?;
            println!("wrote report for {} objects to {}", objects.len(), report.display());
            if let Some(overlay_path) = overlay {
                let rgb = pseudo_rgb(&cube, None)?;
                let canvas = detection_overlay(&rgb, &objects);
                canvas.write_png(&overlay_path)?;
                println!("wrote overlay to {}", overlay_path.display());
            }
        }

        Command::Plan { report, object, out, bin } => {
            let det = io::read_report(&report)?;
            let obj = det
                .objects
                .iter()
                .find(|o| o.instance_id == object)
                .ok_or_else(|| anyhow!("object {object} not in report"))?;
            let point = obj
                .suction_points
                .first()
                .ok_or_else(|| anyhow!("object {object} has no suction points"))?;
            let class = obj
                .class_index
                .ok_or_else(|| anyhow!("object {object} is unclassified; no target bin"))?;
            let scenario = config.scenario(&base_dir, None)?;
            let bin = match bin {
                Some(s) => parse_vec3(&s)?,
                None => *scenario
                    .bins
                    .get(class)
                    .ok_or_else(|| anyhow!("no bin configured for class {class}"))?,
            };
            let grasp = pixel_to_workspace(
                point.col as f64,
                point.row as f64,
                &det.grid,
                scenario.plane_origin,
            );
            let path = build_sparse_path(grasp, bin, &[], &scenario.path)?;
            let traj = lqt_refine(&path, &scenario.lqt)?;
            let worst = traj
                .waypoint_errors(&path)
                .into_iter()
                .fold(0.0f64, f64::max);
            io::write_trajectory(&traj, &out)?;
            println!(
                "planned {} samples over {:.2} s (worst waypoint error {:.3} mm) to {}",
                traj.samples.len(),
                traj.duration(),
                worst,
                out.display()
            );
        }

        Command::Sort { out_dir, condition, objects, trial_seeds } => {
            std::fs::create_dir_all(&out_dir)?;
            if let Some(n) = objects {
                config.scenario.object_count = n;
            }
            if let Some(seeds) = trial_seeds {
                config.scenario.trial_seeds = parse_seed_list(&seeds)?;
            }
            let kinds: Vec<SceneKind> = match condition.as_str() {
                "both" => vec![SceneKind::Discrete, SceneKind::Cluttered],
                other => vec![other.parse()?],
            };
            let scenario0 = config.scenario(&base_dir, Some(kinds[0]))?;
            println!(
                "training classifier ({} classes, {} px/class)...",
                scenario0.classes.len(),
                config.training.samples_per_class
            );
            let context = SortingContext::train(&scenario0, &config.training_params(scenario0.classes.len()))?;
            let mut reports = Vec::new();
            for kind in kinds {
                let scenario = config.scenario(&base_dir, Some(kind))?;
                let report = run_campaign(&scenario, &context)?;
                println!("condition {}:", report.condition);
                for (c, name) in report.class_names.iter().enumerate() {
                    println!(
                        "  {:<10} success {:.3} +/- {:.3}",
                        name, report.mean[c], report.std[c]
                    );
                }
                for t in &report.trials {
                    let term = match t.termination {
                        Termination::Clean => "clean",
                        Termination::ScanBound => "scan-bound",
                        Termination::Stalled => "stalled",
                    };
                    println!(
                        "  trial seed {}: {} scans, {} missed attempts, {}",
                        t.seed, t.scans, t.missed_attempts, term
                    );
                }
                reports.push(report);
            }
            let refs: Vec<&_> = reports.iter().collect();
            let csv = hypersort_core::harness::campaigns_csv(&refs);
            let csv_path = out_dir.join("campaign.csv");
            std::fs::write(&csv_path, &csv)?;
            let chart = success_bar_chart(
                &reports[0].class_names,
                &reports.iter().map(|r| r.condition.clone()).collect::<Vec<_>>(),
                &reports.iter().map(|r| r.mean.clone()).collect::<Vec<_>>(),
                &reports.iter().map(|r| r.std.clone()).collect::<Vec<_>>(),
            );
            let chart_path = out_dir.join("campaign.png");
            chart.write_png(&chart_path)?;
            println!("wrote {} and {}", csv_path.display(), chart_path.display());
        }

        Command::Geomtest { n, rpm, samples } => {
            let mut prism = config.prism_config()?;
            if let Some(rpm) = rpm {
                prism.motor_speed_rpm = rpm;
            }
            println!("fov_degrees = {}", fov_degrees(n)?);
            println!("scan_duration_s = {}", scan_duration_seconds(&prism));
            let geom = config.geometry_context()?;
            println!("row theta_rad gamma_rad k");
            let step = ((geom.rows_h - 1) / samples.max(1).min(geom.rows_h - 1)).max(1);
            let mut row = 0;
            while row < geom.rows_h {
                let theta = theta_of_row(row, &geom)?;
                let gamma = gamma_of_theta(theta)?;
                let k = scaling_factor_k(theta)?;
                println!("{} {} {} {}", row, theta.radians(), gamma.radians(), k);
                if row == geom.rows_h - 1 {
                    break;
                }
                row = (row + step).min(geom.rows_h - 1);
            }
        }

        Command::ResolutionChart { height, heights } => {
            let geom = config.geometry_context()?;
            let prism = config.prism_config()?;
            let heights: Vec<f64> = match (height, heights) {
                (Some(h), None) => vec![h],
                (None, Some(list)) => list
                    .split(',')
                    .map(|p| p.trim().parse::<f64>().map_err(|e| anyhow!("bad height '{p}': {e}")))
                    .collect::<anyhow::Result<_>>()?,
                (None, None) => vec![330.0, 380.0, 450.0, 550.0, 600.0],
                (Some(_), Some(_)) => bail!("use either --height or --heights"),
            };
            println!("working_height_mm line_pitch_mm min_resolvable_mm line_pairs_per_mm");
            for entry in resolution_table(&geom, &prism, &heights)? {
                match (entry.min_resolvable_mm, entry.line_pairs_per_mm) {
                    (Some(w), Some(lp)) => println!(
                        "{} {:.4} {} {:.3}",
                        entry.working_height_mm, entry.line_pitch_mm, w, lp
                    ),
                    _ => println!(
                        "{} {:.4} unresolved -",
                        entry.working_height_mm, entry.line_pitch_mm
                    ),
                }
            }
        }
    }
    Ok(())
}
