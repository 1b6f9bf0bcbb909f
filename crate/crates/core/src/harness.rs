//! End-to-end sorting loop against the simulator and a point-contact
//! suction gripper model.
//!
//! One trial repeatedly scans the scene, detects and classifies objects,
//! plans a pick trajectory per detection, and executes it on the simulated
//! gripper; picked objects leave the scene, so occluded items surface on
//! later scans. Campaigns run seeded trials and aggregate per-class
//! success statistics.

use crate::classifier::{predict_pixel_labels, train_pixel_classifier, ClassifierSpec, TrainedClassifier};
use crate::cube::{build_correction_map, correct_distortion, reconstruct, CorrectionMap};
use crate::detect::{aggregate_objects, segment_objects, DetectionParams};
use crate::error::{Error, Result};
use crate::geometry::{GeometryContext, PrismConfig};
use crate::mnf::{mnf_fit, MnfModel};
use crate::scene::{generate_scene, PlacementParams, SceneDescription, SceneKind};
use crate::sim::{derive_seed, render_scan};
use crate::spectra::SpectralSignature;
use crate::trajectory::{build_sparse_path, lqt_refine, pixel_to_workspace, GripperAction, LqtConfig, PathConfig};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use std::time::Instant;

/// Suction success rule.
#[derive(Debug, Clone)]
pub struct SuctionRule {
    /// Minimum detected clearance to attempt a pick, mm.
    pub min_clearance_mm: f64,
}

impl Default for SuctionRule {
    fn default() -> Self {
        Self { min_clearance_mm: 3.0 }
    }
}

/// Everything one sorting experiment needs.
#[derive(Debug, Clone)]
pub struct SortingScenario {
    pub kind: SceneKind,
    pub classes: Vec<SpectralSignature>,
    pub background: SpectralSignature,
    pub object_count: usize,
    pub trial_seeds: Vec<u64>,
    /// One bin per class, workspace mm.
    pub bins: Vec<[f64; 3]>,
    pub plane_size: (f64, f64),
    pub noise_sigma: f64,
    pub placement: PlacementParams,
    pub geom: GeometryContext,
    pub prism: PrismConfig,
    /// Corrected-grid pitch used by the perception stage, mm.
    pub target_pitch: f64,
    /// Workspace position of the optical axis on the plane.
    pub plane_origin: [f64; 3],
    pub detection: DetectionParams,
    pub suction: SuctionRule,
    pub path: PathConfig,
    pub lqt: LqtConfig,
    /// Scan budget; `None` means 4x object count.
    pub max_scans: Option<usize>,
    /// Consecutive pick-free scans before giving up on a static scene.
    pub stall_scans: usize,
}

impl SortingScenario {
    /// Discrete default: builtin classes and backdrop, default geometry at
    /// 1 mm corrected pitch, bins on both sides of the plane.
    pub fn default_with(
        kind: SceneKind,
        classes: Vec<SpectralSignature>,
        background: SpectralSignature,
        object_count: usize,
        trial_seeds: Vec<u64>,
        noise_sigma: f64,
    ) -> Result<Self> {
        let n_classes = classes.len();
        let bins = (0..n_classes)
            .map(|i| {
                let side = if i % 2 == 0 { -380.0 } else { 380.0 };
                let x = if i < 2 { 120.0 } else { 480.0 };
                [x, side, 40.0]
            })
            .collect();
        let s = Self {
            kind,
            classes,
            background,
            object_count,
            trial_seeds,
            bins,
            plane_size: (250.0, 840.0),
            noise_sigma,
            placement: PlacementParams::default(),
            geom: GeometryContext::default_profile(),
            prism: PrismConfig::default_decagon(),
            target_pitch: 1.0,
            plane_origin: [300.0, 0.0, 0.0],
            detection: DetectionParams::default(),
            suction: SuctionRule::default(),
            path: PathConfig::default(),
            lqt: LqtConfig::default(),
            max_scans: None,
            stall_scans: 3,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bins.len() != self.classes.len() {
            return Err(Error::Harness(format!(
                "{} bins configured for {} classes; need exactly one per class",
                self.bins.len(),
                self.classes.len()
            )));
        }
        if self.trial_seeds.is_empty() {
            return Err(Error::Harness("at least one trial seed required".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &s in &self.trial_seeds {
            if !seen.insert(s) {
                return Err(Error::Harness(format!("trial seed {s} repeats; seeds must be distinct")));
            }
        }
        if self.object_count == 0 {
            return Err(Error::Harness("object count must be >= 1".into()));
        }
        for (i, b) in self.bins.iter().enumerate() {
            if !self.path.contains(*b) {
                return Err(Error::Harness(format!("bin {i} at {b:?} outside the workspace")));
            }
        }
        Ok(())
    }

    pub fn scan_bound(&self) -> usize {
        self.max_scans.unwrap_or(4 * self.object_count)
    }
}

/// Trained perception models shared across a campaign.
#[derive(Debug, Clone)]
pub struct SortingContext {
    pub classifier: TrainedClassifier,
    pub mnf: MnfModel,
}

/// Training-set synthesis settings for [`SortingContext::train`].
#[derive(Debug, Clone)]
pub struct TrainingParams {
    pub samples_per_class: usize,
    pub spec: ClassifierSpec,
    pub seed: u64,
}

impl Default for TrainingParams {
    fn default() -> Self {
        Self { samples_per_class: 2000, spec: ClassifierSpec::default(), seed: 17 }
    }
}

/// Noisy signature pixels arranged one row per class, so horizontal
/// neighbors share a class and the MNF noise estimator sees pure noise.
pub fn synthesize_training_cube(
    classes: &[SpectralSignature],
    per_class: usize,
    sigma: f64,
    seed: u64,
) -> Result<(crate::cube::HyperspectralCube, Vec<usize>)> {
    use rand_chacha::rand_core::SeedableRng;
    if classes.is_empty() {
        return Err(Error::Spectral("class set is empty".into()));
    }
    let bands = classes[0].bands();
    let geom = GeometryContext::new(600.0, 0.5, classes.len().max(2), per_class.max(2))?;
    let mut cube =
        crate::cube::HyperspectralCube::constant(classes.len(), per_class, bands, 0.0, geom);
    cube.band_centers = classes[0].band_centers.clone();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, sigma.max(1e-12)).map_err(|e| Error::Spectral(e.to_string()))?;
    let mut labels = Vec::with_capacity(classes.len() * per_class);
    for (r, sig) in classes.iter().enumerate() {
        if sig.bands() != bands {
            return Err(Error::Spectral("class signatures disagree on band count".into()));
        }
        for c in 0..per_class {
            for (b, &refl) in sig.reflectance.iter().enumerate() {
                cube.data[(r * per_class + c) * bands + b] =
                    (refl + dist.sample(&mut rng)).clamp(0.0, 1.0) as f32;
            }
            labels.push(r);
        }
    }
    Ok((cube, labels))
}

impl SortingContext {
    /// Fit the MNF basis and train the pixel classifier on synthesized
    /// noisy pixels of the scenario's class set.
    pub fn train(scenario: &SortingScenario, params: &TrainingParams) -> Result<Self> {
        let (cube, labels) = synthesize_training_cube(
            &scenario.classes,
            params.samples_per_class,
            scenario.noise_sigma.max(0.005),
            params.seed,
        )?;
        let mnf = mnf_fit(&cube, None)?;
        let k = mnf.retained_k;
        let mut data = Vec::with_capacity(labels.len());
        for v in 0..cube.rows {
            for u in 0..cube.cols {
                data.push((mnf.project_f32(cube.spectrum(v, u), k)?, labels[v * cube.cols + u]));
            }
        }
        let mut spec = params.spec.clone();
        spec.class_count = scenario.classes.len();
        let classifier = train_pixel_classifier(&spec, &data)?;
        Ok(Self { classifier, mnf })
    }
}

/// Where a ground-truth object ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectOutcome {
    /// Picked and dropped in its own class bin.
    Sorted,
    /// Picked but routed to another class's bin.
    WrongBin { sorted_as: usize },
    /// Still on the plane when the trial ended.
    Unpicked,
}

/// Pick attempt result against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PickOutcome {
    /// Grabbed the intended class.
    CorrectSort { object_index: usize },
    /// Grabbed an overlapping object of another class.
    WrongObject { object_index: usize, true_class: usize },
    /// Suction point landed on the backdrop.
    MissedBackground,
    /// Detected clearance below the suction rule minimum.
    InsufficientClearance,
}

/// Point-contact gripper model: the pick grabs the true top-most object at
/// the suction point; sorting is correct when that object's class matches
/// the commanded bin.
pub fn simulated_pick(
    scene: &SceneDescription,
    point_xy: (f64, f64),
    commanded_class: usize,
    clearance_mm: f64,
    rule: &SuctionRule,
) -> PickOutcome {
    if clearance_mm < rule.min_clearance_mm {
        return PickOutcome::InsufficientClearance;
    }
    match scene.top_object_at(point_xy.0, point_xy.1) {
        None => PickOutcome::MissedBackground,
        Some(idx) => {
            let true_class = scene.objects[idx].class_index;
            if true_class == commanded_class {
                PickOutcome::CorrectSort { object_index: idx }
            } else {
                PickOutcome::WrongObject { object_index: idx, true_class }
            }
        }
    }
}

/// Per-object trial record; `object_id` is the generated z-order, stable
/// across in-scene removals.
#[derive(Debug, Clone)]
pub struct ObjectReport {
    pub object_id: u32,
    pub true_class: usize,
    pub outcome: ObjectOutcome,
}

/// Wall-clock seconds spent per pipeline stage.
#[derive(Debug, Clone, Default)]
pub struct StageTimings {
    pub render: f64,
    pub reconstruct: f64,
    pub correct: f64,
    pub segment: f64,
    pub classify: f64,
    pub aggregate: f64,
    pub plan: f64,
    pub execute: f64,
}

/// Why the scan loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Segmentation found nothing; the plane is clear.
    Clean,
    /// Scan budget exhausted.
    ScanBound,
    /// No pick succeeded for several consecutive scans.
    Stalled,
}

/// Outcome of one seeded trial.
#[derive(Debug, Clone)]
pub struct TrialReport {
    pub seed: u64,
    pub objects: Vec<ObjectReport>,
    /// Correct-bin picks / ground-truth objects, per class.
    pub per_class_success: Vec<f64>,
    pub scans: usize,
    pub termination: Termination,
    pub timings: StageTimings,
    /// Failed pick attempts that grabbed nothing (backdrop or clearance).
    pub missed_attempts: usize,
}

/// Run one full sorting trial.
///
/// Loops scan -> reconstruct -> correct -> segment -> classify ->
/// aggregate -> plan -> execute until segmentation comes back empty, the
/// scan budget runs out, or several scans in a row pick nothing. Each scan
/// re-renders the live scene with fresh seeded noise, so objects revealed
/// by earlier picks are found later.
pub fn run_trial(
    scenario: &SortingScenario,
    context: &SortingContext,
    seed: u64,
) -> Result<TrialReport> {
    scenario.validate()?;
    let scene = generate_scene(
        scenario.kind,
        scenario.background.clone(),
        scenario.classes.clone(),
        scenario.object_count,
        scenario.plane_size,
        scenario.noise_sigma,
        seed,
        &scenario.placement,
    )?;
    run_trial_on_scene(scenario, context, scene, seed)
}

/// [`run_trial`] on a caller-provided scene (the scene's `seed` field is
/// overridden per scan; object placement stays as given).
pub fn run_trial_on_scene(
    scenario: &SortingScenario,
    context: &SortingContext,
    mut scene: SceneDescription,
    seed: u64,
) -> Result<TrialReport> {
    let true_class_by_id: std::collections::HashMap<u32, usize> =
        scene.objects.iter().map(|o| (o.z_order, o.class_index)).collect();
    let mut outcome_by_id: std::collections::HashMap<u32, ObjectOutcome> = std::collections::HashMap::new();

    let map: CorrectionMap = build_correction_map(&scenario.geom, scenario.target_pitch)?;
    let mut timings = StageTimings::default();
    let mut scans = 0usize;
    let mut stall = 0usize;
    let mut missed_attempts = 0usize;
    let bound = scenario.scan_bound();
    let mut termination = Termination::ScanBound;

    while scans < bound {
        scans += 1;
        // fresh per-scan noise stream
        scene.seed = derive_seed(seed, 0x5ca0_0000 + scans as u64);

        let t0 = Instant::now();
        let frames = render_scan(&scene, &scenario.prism, &scenario.geom)?;
        timings.render += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let raw = reconstruct(&frames, &scenario.geom, scenario.background.band_centers.clone())?;
        timings.reconstruct += t0.elapsed().as_secs_f64();
        drop(frames);

        let t0 = Instant::now();
        let cube = correct_distortion(&raw, &map)?;
        timings.correct += t0.elapsed().as_secs_f64();
        drop(raw);

        let t0 = Instant::now();
        let masks = segment_objects(&cube, &scenario.background, &scenario.detection)?;
        timings.segment += t0.elapsed().as_secs_f64();
        if masks.is_empty() {
            termination = Termination::Clean;
            break;
        }

        let t0 = Instant::now();
        let labels = predict_pixel_labels(&cube, &masks, &context.classifier, &context.mnf)?;
        timings.classify += t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let detections = aggregate_objects(
            &labels,
            &masks,
            &cube,
            &context.mnf,
            context.classifier.input_len,
            scenario.target_pitch,
            &scenario.detection,
        )?;
        timings.aggregate += t0.elapsed().as_secs_f64();

        let grid = cube.grid.as_ref().expect("corrected cube carries its grid");
        let mut picked_this_scan = 0usize;
        for det in &detections {
            let Some(class) = det.class_index else { continue };
            let Some(point) = det.suction_points.first() else { continue };

            let t0 = Instant::now();
            let grasp = pixel_to_workspace(
                point.col as f64,
                point.row as f64,
                grid,
                scenario.plane_origin,
            );
            let plan = build_sparse_path(grasp, scenario.bins[class], &[], &scenario.path)
                .and_then(|path| lqt_refine(&path, &scenario.lqt).map(|t| (path, t)));
            timings.plan += t0.elapsed().as_secs_f64();
            let Ok((_, traj)) = plan else {
                missed_attempts += 1;
                continue;
            };

            let t0 = Instant::now();
            // the gripper closes where the executed trajectory actually is
            // when suction engages, not where the plan asked it to be
            let contact = traj
                .actions
                .iter()
                .find(|a| a.action == GripperAction::SuctionOn)
                .map(|a| traj.samples[a.sample_index].position)
                .unwrap_or(grasp);
            let metric_xy =
                (contact[0] - scenario.plane_origin[0], contact[1] - scenario.plane_origin[1]);
            let result =
                simulated_pick(&scene, metric_xy, class, point.clearance_mm, &scenario.suction);
            timings.execute += t0.elapsed().as_secs_f64();

            match result {
                PickOutcome::CorrectSort { object_index } => {
                    let obj = scene.remove_object(object_index);
                    outcome_by_id.insert(obj.z_order, ObjectOutcome::Sorted);
                    picked_this_scan += 1;
                }
                PickOutcome::WrongObject { object_index, .. } => {
                    let obj = scene.remove_object(object_index);
                    outcome_by_id.insert(obj.z_order, ObjectOutcome::WrongBin { sorted_as: class });
                    picked_this_scan += 1;
                }
                PickOutcome::MissedBackground | PickOutcome::InsufficientClearance => {
                    missed_attempts += 1;
                }
            }
        }

        // termination is decided by perception (an empty segmentation on a
        // later scan), never by peeking at the ground-truth object list
        if picked_this_scan == 0 {
            stall += 1;
            if stall >= scenario.stall_scans {
                termination = Termination::Stalled;
                break;
            }
        } else {
            stall = 0;
        }
    }

    let mut objects: Vec<ObjectReport> = true_class_by_id
        .iter()
        .map(|(&id, &true_class)| ObjectReport {
            object_id: id,
            true_class,
            outcome: outcome_by_id.get(&id).copied().unwrap_or(ObjectOutcome::Unpicked),
        })
        .collect();
    objects.sort_by_key(|o| o.object_id);

    let n_classes = scenario.classes.len();
    let mut totals = vec![0usize; n_classes];
    let mut sorted = vec![0usize; n_classes];
    for o in &objects {
        totals[o.true_class] += 1;
        if o.outcome == ObjectOutcome::Sorted {
            sorted[o.true_class] += 1;
        }
    }
    let per_class_success = totals
        .iter()
        .zip(&sorted)
        .map(|(&t, &s)| if t == 0 { 1.0 } else { s as f64 / t as f64 })
        .collect();

    Ok(TrialReport {
        seed,
        objects,
        per_class_success,
        scans,
        termination,
        timings,
        missed_attempts,
    })
}

/// Aggregate statistics over a campaign's trials.
#[derive(Debug, Clone)]
pub struct CampaignReport {
    pub condition: String,
    pub class_names: Vec<String>,
    pub trials: Vec<TrialReport>,
    /// Per-class mean success over trials.
    pub mean: Vec<f64>,
    /// Per-class population standard deviation over trials.
    pub std: Vec<f64>,
}

/// Run every seeded trial of the scenario (in parallel; results are in
/// seed order and bit-reproducible from the seed list).
pub fn run_campaign(scenario: &SortingScenario, context: &SortingContext) -> Result<CampaignReport> {
    scenario.validate()?;
    let trials: Vec<TrialReport> = scenario
        .trial_seeds
        .par_iter()
        .map(|&seed| run_trial(scenario, context, seed))
        .collect::<Result<_>>()?;
    let n_classes = scenario.classes.len();
    let n = trials.len() as f64;
    let mut mean = vec![0.0; n_classes];
    for t in &trials {
        for c in 0..n_classes {
            mean[c] += t.per_class_success[c];
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    let mut std = vec![0.0; n_classes];
    for t in &trials {
        for c in 0..n_classes {
            std[c] += (t.per_class_success[c] - mean[c]).powi(2);
        }
    }
    for s in std.iter_mut() {
        *s = (*s / n).sqrt();
    }
    Ok(CampaignReport {
        condition: match scenario.kind {
            SceneKind::Discrete => "discrete".into(),
            SceneKind::Cluttered => "cluttered".into(),
        },
        class_names: scenario.classes.iter().map(|c| c.class_name.clone()).collect(),
        trials,
        mean,
        std,
    })
}

/// CSV rows for one or more campaign reports:
/// `condition,class,mean,std,trials`.
pub fn campaigns_csv(reports: &[&CampaignReport]) -> String {
    let mut out = String::from("condition,class,mean,std,trials\n");
    for r in reports {
        for (c, name) in r.class_names.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.condition,
                name,
                r.mean[c],
                r.std[c],
                r.trials.len()
            ));
        }
    }
    out
}
