//! Pipeline configuration files: strict TOML with every section optional
//! and defaulted. Unknown keys abort before any work starts.

use crate::classifier::ClassifierSpec;
use crate::detect::DetectionParams;
use crate::error::{Error, Result};
use crate::geometry::{GeometryContext, PrismConfig};
use crate::harness::{SortingScenario, SuctionRule, TrainingParams};
use crate::scene::{PlacementParams, SceneKind};
use crate::spectra::{builtin_background, builtin_class_set, SpectralSignature, DEFAULT_BANDS};
use crate::trajectory::{LqtConfig, PathConfig};
use serde::Deserialize;
use std::path::Path;

/// Environment variable naming the default config file.
pub const CONFIG_ENV_VAR: &str = "HYPERSORT_CONFIG";

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Global seed; the CLI `--seed` flag overrides it.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output_dir: Option<String>,
    /// Spectral bands when synthesizing signatures.
    #[serde(default)]
    pub bands: Option<usize>,
    #[serde(default)]
    pub geometry: GeometrySection,
    #[serde(default)]
    pub prism: PrismSection,
    #[serde(default)]
    pub mnf: MnfSection,
    #[serde(default)]
    pub classifier: Option<ClassifierSpec>,
    #[serde(default)]
    pub detection: DetectionSection,
    #[serde(default)]
    pub lqt: LqtSection,
    #[serde(default)]
    pub path: PathSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub scenario: ScenarioSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    pub working_height_mm: f64,
    pub line_resolution_mm: f64,
    pub rows: usize,
    pub cols: usize,
}

impl Default for GeometrySection {
    fn default() -> Self {
        let g = GeometryContext::default_profile();
        Self {
            working_height_mm: g.working_height,
            line_resolution_mm: g.line_resolution_dx,
            rows: g.rows_h,
            cols: g.cols_w,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrismSection {
    pub n_sides: u32,
    pub circumradius_mm: f64,
    pub sensor_x_mm: f64,
    pub reflectivity: f64,
    pub motor_speed_rpm: f64,
    pub gear_ratio: f64,
    pub encoder_resolution_deg: f64,
}

impl Default for PrismSection {
    fn default() -> Self {
        let p = PrismConfig::default_decagon();
        Self {
            n_sides: p.n_sides,
            circumradius_mm: p.circumradius_r,
            sensor_x_mm: p.sensor_x,
            reflectivity: p.reflectivity,
            motor_speed_rpm: p.motor_speed_rpm,
            gear_ratio: p.gear_ratio,
            encoder_resolution_deg: p.encoder_resolution_deg,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MnfSection {
    /// Fraction of bands kept by default ("drop ~30%" reading). Set to
    /// 0.3 for the alternative "keep ~30%" reading.
    pub retained_fraction: f64,
    /// Explicit component count; overrides the fraction when present.
    pub retained_k: Option<usize>,
}

impl Default for MnfSection {
    fn default() -> Self {
        Self { retained_fraction: 0.7, retained_k: None }
    }
}

impl MnfSection {
    pub fn retained_k_for(&self, bands: usize) -> Result<usize> {
        let k = match self.retained_k {
            Some(k) => k,
            None => ((self.retained_fraction * bands as f64).round() as usize).clamp(1, bands),
        };
        if k == 0 || k > bands {
            return Err(Error::Config(format!("retained_k {k} outside [1, {bands}]")));
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionSection {
    pub background_angle_threshold: f64,
    pub min_component_area: usize,
    pub pca_components: usize,
    pub outlier_percentile: f64,
    pub min_votable_area: usize,
    pub suction_count: usize,
    pub suction_cup_radius_mm: f64,
    pub min_clearance_mm: f64,
}

impl Default for DetectionSection {
    fn default() -> Self {
        let d = DetectionParams::default();
        Self {
            background_angle_threshold: d.background_angle_threshold,
            min_component_area: d.min_component_area,
            pca_components: d.pca_components,
            outlier_percentile: d.outlier_percentile,
            min_votable_area: d.min_votable_area,
            suction_count: d.suction_count,
            suction_cup_radius_mm: d.suction_cup_radius_mm,
            min_clearance_mm: SuctionRule::default().min_clearance_mm,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqtSection {
    pub sample_period: f64,
    pub q_position: f64,
    pub q_velocity: f64,
    pub r_input: f64,
    pub terminal_boost: f64,
    pub cruise_speed: f64,
    pub max_velocity: f64,
    pub max_acceleration: f64,
}

impl Default for LqtSection {
    fn default() -> Self {
        let l = LqtConfig::default();
        Self {
            sample_period: l.sample_period,
            q_position: l.q_position,
            q_velocity: l.q_velocity,
            r_input: l.r_input,
            terminal_boost: l.terminal_boost,
            cruise_speed: l.cruise_speed,
            max_velocity: l.max_velocity,
            max_acceleration: l.max_acceleration,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathSection {
    pub workspace_min: [f64; 3],
    pub workspace_max: [f64; 3],
    pub approach_height: f64,
    pub action_dwell: f64,
    pub transit_dwell: f64,
    pub plane_origin: [f64; 3],
}

impl Default for PathSection {
    fn default() -> Self {
        let p = PathConfig::default();
        Self {
            workspace_min: p.workspace_min,
            workspace_max: p.workspace_max,
            approach_height: p.approach_height,
            action_dwell: p.action_dwell,
            transit_dwell: p.transit_dwell,
            plane_origin: [300.0, 0.0, 0.0],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub samples_per_class: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainingParams::default();
        Self { samples_per_class: t.samples_per_class, noise_sigma: 0.02, seed: t.seed }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub kind: String,
    pub object_count: usize,
    pub trial_seeds: Vec<u64>,
    pub noise_sigma: f64,
    pub plane_width_mm: f64,
    pub plane_height_mm: f64,
    pub target_pitch_mm: f64,
    pub object_size_min_mm: f64,
    pub object_size_max_mm: f64,
    pub min_gap_mm: f64,
    pub max_scans: Option<usize>,
    pub stall_scans: usize,
    /// Signature files for the classes; builtin set when empty.
    pub class_files: Vec<String>,
    pub background_file: Option<String>,
    /// One `[x, y, z]` bin per class; defaults around the plane.
    pub bins: Vec<[f64; 3]>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            kind: "discrete".into(),
            object_count: 8,
            trial_seeds: vec![101, 102, 103, 104, 105],
            noise_sigma: 0.02,
            plane_width_mm: 250.0,
            plane_height_mm: 840.0,
            target_pitch_mm: 1.0,
            object_size_min_mm: 22.0,
            object_size_max_mm: 30.0,
            min_gap_mm: 8.0,
            max_scans: None,
            stall_scans: 3,
            class_files: vec![],
            background_file: None,
            bins: vec![],
        }
    }
}

impl PipelineConfig {
    /// Read and strictly parse a config file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn geometry_context(&self) -> Result<GeometryContext> {
        GeometryContext::new(
            self.geometry.working_height_mm,
            self.geometry.line_resolution_mm,
            self.geometry.rows,
            self.geometry.cols,
        )
    }

    pub fn prism_config(&self) -> Result<PrismConfig> {
        PrismConfig::new(
            self.prism.n_sides,
            self.prism.circumradius_mm,
            self.prism.sensor_x_mm,
            self.prism.reflectivity,
            self.prism.motor_speed_rpm,
            self.prism.gear_ratio,
            self.prism.encoder_resolution_deg,
        )
    }

    pub fn detection_params(&self) -> DetectionParams {
        DetectionParams {
            background_angle_threshold: self.detection.background_angle_threshold,
            min_component_area: self.detection.min_component_area,
            pca_components: self.detection.pca_components,
            outlier_percentile: self.detection.outlier_percentile,
            min_votable_area: self.detection.min_votable_area,
            suction_count: self.detection.suction_count,
            suction_cup_radius_mm: self.detection.suction_cup_radius_mm,
        }
    }

    pub fn lqt_config(&self) -> LqtConfig {
        LqtConfig {
            sample_period: self.lqt.sample_period,
            q_position: self.lqt.q_position,
            q_velocity: self.lqt.q_velocity,
            r_input: self.lqt.r_input,
            terminal_boost: self.lqt.terminal_boost,
            cruise_speed: self.lqt.cruise_speed,
            max_velocity: self.lqt.max_velocity,
            max_acceleration: self.lqt.max_acceleration,
        }
    }

    pub fn path_config(&self) -> PathConfig {
        PathConfig {
            workspace_min: self.path.workspace_min,
            workspace_max: self.path.workspace_max,
            approach_height: self.path.approach_height,
            action_dwell: self.path.action_dwell,
            transit_dwell: self.path.transit_dwell,
        }
    }

    pub fn classifier_spec(&self, class_count: usize) -> ClassifierSpec {
        let mut spec = self.classifier.clone().unwrap_or_default();
        spec.class_count = class_count;
        spec
    }

    pub fn training_params(&self, class_count: usize) -> TrainingParams {
        TrainingParams {
            samples_per_class: self.training.samples_per_class,
            spec: self.classifier_spec(class_count),
            seed: self.training.seed,
        }
    }

    /// Class signatures: configured files, or the builtin set.
    pub fn class_signatures(&self, base_dir: &Path) -> Result<Vec<SpectralSignature>> {
        if self.scenario.class_files.is_empty() {
            return Ok(builtin_class_set(self.bands.unwrap_or(DEFAULT_BANDS)));
        }
        self.scenario
            .class_files
            .iter()
            .map(|f| {
                let path = base_dir.join(f);
                if !path.exists() {
                    return Err(Error::Config(format!("class file '{}' missing", path.display())));
                }
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().to_string())
                    .unwrap_or_else(|| "class".into());
                crate::io::read_signature_file(&path, &name)
            })
            .collect()
    }

    pub fn background_signature(&self, base_dir: &Path) -> Result<SpectralSignature> {
        match &self.scenario.background_file {
            Some(f) => {
                let path = base_dir.join(f);
                if !path.exists() {
                    return Err(Error::Config(format!("background file '{}' missing", path.display())));
                }
                crate::io::read_signature_file(&path, "backdrop")
            }
            None => Ok(builtin_background(self.bands.unwrap_or(DEFAULT_BANDS))),
        }
    }

    /// Assemble the sorting scenario for `sort`, with `kind` optionally
    /// overriding the configured condition.
    pub fn scenario(&self, base_dir: &Path, kind_override: Option<SceneKind>) -> Result<SortingScenario> {
        let classes = self.class_signatures(base_dir)?;
        let background = self.background_signature(base_dir)?;
        let kind = match kind_override {
            Some(k) => k,
            None => self.scenario.kind.parse()?,
        };
        let mut scenario = SortingScenario::default_with(
            kind,
            classes,
            background,
            self.scenario.object_count,
            self.scenario.trial_seeds.clone(),
            self.scenario.noise_sigma,
        )?;
        scenario.plane_size = (self.scenario.plane_width_mm, self.scenario.plane_height_mm);
        scenario.placement = PlacementParams {
            size_range: (self.scenario.object_size_min_mm, self.scenario.object_size_max_mm),
            min_gap: self.scenario.min_gap_mm,
            ..Default::default()
        };
        scenario.geom = self.geometry_context()?;
        scenario.prism = self.prism_config()?;
        scenario.target_pitch = self.scenario.target_pitch_mm;
        scenario.plane_origin = self.path.plane_origin;
        scenario.detection = self.detection_params();
        scenario.suction = SuctionRule { min_clearance_mm: self.detection.min_clearance_mm };
        scenario.path = self.path_config();
        scenario.lqt = self.lqt_config();
        scenario.max_scans = self.scenario.max_scans;
        scenario.stall_scans = self.scenario.stall_scans;
        if !self.scenario.bins.is_empty() {
            scenario.bins = self.scenario.bins.clone();
        }
        scenario.validate()?;
        Ok(scenario)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let cfg: PipelineConfig = toml::from_str("").unwrap();
        assert!(cfg.geometry_context().is_ok());
        assert!(cfg.prism_config().is_ok());
        assert_eq!(cfg.mnf.retained_k_for(96).unwrap(), 67);
        let scenario = cfg.scenario(Path::new("."), None).unwrap();
        assert_eq!(scenario.classes.len(), 4);
        assert_eq!(scenario.bins.len(), 4);
    }

    #[test]
    fn unknown_keys_rejected_everywhere() {
        assert!(toml::from_str::<PipelineConfig>("zzz = 1").is_err());
        assert!(toml::from_str::<PipelineConfig>("[geometry]\nbogus = 1").is_err());
        assert!(toml::from_str::<PipelineConfig>("[scenario]\nbogus = 1").is_err());
    }

    #[test]
    fn keep_thirty_percent_reading_available() {
        let cfg: PipelineConfig = toml::from_str("[mnf]\nretained_fraction = 0.3").unwrap();
        assert_eq!(cfg.mnf.retained_k_for(96).unwrap(), 29);
        let cfg: PipelineConfig = toml::from_str("[mnf]\nretained_k = 12").unwrap();
        assert_eq!(cfg.mnf.retained_k_for(96).unwrap(), 12);
        assert!(cfg.mnf.retained_k_for(10).is_err());
    }

    #[test]
    fn scenario_kind_parses_and_validates() {
        let cfg: PipelineConfig =
            toml::from_str("[scenario]\nkind = \"cluttered\"\nobject_count = 6").unwrap();
        let sc = cfg.scenario(Path::new("."), None).unwrap();
        assert_eq!(sc.kind, SceneKind::Cluttered);
        assert_eq!(sc.object_count, 6);
        let cfg: PipelineConfig = toml::from_str("[scenario]\nkind = \"weird\"").unwrap();
        assert!(cfg.scenario(Path::new("."), None).is_err());
    }
}
