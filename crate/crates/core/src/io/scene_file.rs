//! Scene description files (TOML, strict keys) and two-column signature
//! files.
//!
//! A scene file names its signatures (inline samples or a file reference),
//! picks one as the backdrop, and lists polygon objects referencing the
//! remaining classes. Unknown keys abort the parse.

use crate::error::{Error, Result};
use crate::scene::{Polygon, SceneDescription, SceneObject};
use crate::spectra::SpectralSignature;
use serde::Deserialize;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SceneFile {
    seed: u64,
    #[serde(default)]
    noise_sigma: f64,
    plane: PlaneSection,
    /// Name of the backdrop signature.
    background: String,
    #[serde(default)]
    signatures: Vec<SignatureSection>,
    #[serde(default)]
    objects: Vec<ObjectSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlaneSection {
    width_mm: f64,
    height_mm: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SignatureSection {
    name: String,
    #[serde(default)]
    file: Option<String>,
    #[serde(default)]
    band_centers_nm: Option<Vec<f64>>,
    #[serde(default)]
    reflectance: Option<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObjectSection {
    class: String,
    #[serde(default)]
    z: Option<u32>,
    polygon: Vec<[f64; 2]>,
}

/// Parse a two-column signature file: `wavelength_nm reflectance` per
/// line, `#` comments allowed.
pub fn read_signature_file(path: &Path, name: &str) -> Result<SpectralSignature> {
    let text = std::fs::read_to_string(path)?;
    let mut centers = Vec::new();
    let mut refl = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Format(format!(
                "{}:{}: expected 'wavelength reflectance'",
                path.display(),
                ln + 1
            )));
        };
        centers.push(a.parse::<f64>().map_err(|_| {
            Error::Format(format!("{}:{}: bad wavelength '{a}'", path.display(), ln + 1))
        })?);
        refl.push(b.parse::<f64>().map_err(|_| {
            Error::Format(format!("{}:{}: bad reflectance '{b}'", path.display(), ln + 1))
        })?);
    }
    SpectralSignature::new(name, refl, centers)
}

/// Write a signature in the two-column format.
pub fn write_signature_file(sig: &SpectralSignature, path: &Path) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# wavelength_nm reflectance ({})", sig.class_name);
    for (c, r) in sig.band_centers.iter().zip(&sig.reflectance) {
        let _ = writeln!(out, "{c} {r}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn resolve_signature(section: &SignatureSection, base_dir: &Path) -> Result<SpectralSignature> {
    match (&section.file, &section.band_centers_nm, &section.reflectance) {
        (Some(file), None, None) => {
            let path = base_dir.join(file);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "signature file '{}' does not exist",
                    path.display()
                )));
            }
            read_signature_file(&path, &section.name)
        }
        (None, Some(centers), Some(refl)) => {
            SpectralSignature::new(&section.name, refl.clone(), centers.clone())
        }
        _ => Err(Error::Config(format!(
            "signature '{}' needs either 'file' or both 'band_centers_nm' and 'reflectance'",
            section.name
        ))),
    }
}

/// Load a scene description; relative signature paths resolve against the
/// scene file's directory.
pub fn read_scene_file(path: &Path) -> Result<SceneDescription> {
    let text = std::fs::read_to_string(path)?;
    let file: SceneFile =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));

    let mut background = None;
    let mut classes = Vec::new();
    let mut class_names = Vec::new();
    for section in &file.signatures {
        let sig = resolve_signature(section, base)?;
        if section.name == file.background {
            background = Some(sig);
        } else {
            class_names.push(section.name.clone());
            classes.push(sig);
        }
    }
    let background = background.ok_or_else(|| {
        Error::Config(format!("background signature '{}' is not declared", file.background))
    })?;

    let mut objects = Vec::new();
    for (i, obj) in file.objects.iter().enumerate() {
        let class_index = class_names
            .iter()
            .position(|n| *n == obj.class)
            .ok_or_else(|| Error::Config(format!("object {i} references unknown class '{}'", obj.class)))?;
        let polygon = Polygon::new(obj.polygon.iter().map(|p| (p[0], p[1])).collect())?;
        objects.push(SceneObject {
            polygon,
            class_index,
            z_order: obj.z.unwrap_or(i as u32 + 1),
        });
    }

    let scene = SceneDescription {
        plane_size: (file.plane.width_mm, file.plane.height_mm),
        background,
        classes,
        objects,
        noise_sigma: file.noise_sigma,
        seed: file.seed,
    };
    scene.validate()?;
    Ok(scene)
}
