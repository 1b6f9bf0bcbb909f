//! Spectral signatures and spectral-angle similarity.

use crate::error::{Error, Result};

/// Per-class reflectance curve sampled at fixed band centers.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSignature {
    pub class_name: String,
    /// Reflectance per band, each in [0, 1].
    pub reflectance: Vec<f64>,
    /// Band center wavelengths, nm, strictly increasing.
    pub band_centers: Vec<f64>,
}

impl SpectralSignature {
    pub fn new(class_name: impl Into<String>, reflectance: Vec<f64>, band_centers: Vec<f64>) -> Result<Self> {
        if reflectance.len() != band_centers.len() {
            return Err(Error::Spectral(format!(
                "reflectance has {} bands but {} centers given",
                reflectance.len(),
                band_centers.len()
            )));
        }
        if reflectance.len() < 2 {
            return Err(Error::Spectral("signature needs at least 2 bands".into()));
        }
        if reflectance.iter().any(|&r| !(0.0..=1.0).contains(&r)) {
            return Err(Error::Spectral("reflectance values must lie in [0, 1]".into()));
        }
        if band_centers.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Spectral("band centers must be strictly increasing".into()));
        }
        Ok(Self { class_name: class_name.into(), reflectance, band_centers })
    }

    pub fn bands(&self) -> usize {
        self.reflectance.len()
    }
}

/// Default spectral axis: `n` bands spanning 400-1000 nm inclusive.
pub fn default_band_centers(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 400.0 + 600.0 * i as f64 / (n - 1) as f64)
        .collect()
}

/// Number of bands in the default profile.
pub const DEFAULT_BANDS: usize = 96;

fn bump(lambda: f64, center: f64, width: f64) -> f64 {
    let t = (lambda - center) / width;
    (-t * t).exp()
}

/// Four smooth, well-separated synthetic fabric curves plus a near-flat
/// bright backdrop, sampled on `n` default bands. The fabric curves are
/// Gaussian-mixture bumps at distinct centers; the neutral backdrop keeps
/// spectral angles of noisy background pixels small.
pub fn builtin_class_set(n: usize) -> Vec<SpectralSignature> {
    let centers = default_band_centers(n);
    let classes: [(&str, &dyn Fn(f64) -> f64); 4] = [
        ("fabric_a", &|l| 0.30 + 0.45 * bump(l, 620.0, 60.0)),
        ("fabric_b", &|l| 0.25 + 0.50 * bump(l, 520.0, 45.0) + 0.20 * bump(l, 850.0, 80.0)),
        ("fabric_c", &|l| 0.35 + 0.40 * bump(l, 750.0, 70.0)),
        ("fabric_d", &|l| 0.20 + 0.55 * bump(l, 450.0, 40.0) + 0.22 * bump(l, 950.0, 60.0)),
    ];
    classes
        .iter()
        .map(|(name, f)| {
            let refl: Vec<f64> = centers.iter().map(|&l| f(l).clamp(0.0, 1.0)).collect();
            SpectralSignature::new(*name, refl, centers.clone()).expect("builtin curve is valid")
        })
        .collect()
}

/// Near-flat bright backdrop signature on `n` default bands.
pub fn builtin_background(n: usize) -> SpectralSignature {
    let centers = default_band_centers(n);
    let refl: Vec<f64> = centers
        .iter()
        .map(|&l| (0.50 + 0.05 * (l - 700.0) / 300.0).clamp(0.0, 1.0))
        .collect();
    SpectralSignature::new("backdrop", refl, centers).expect("builtin curve is valid")
}

/// Spectral angle between two spectra in radians: the angle between the
/// vectors, invariant to illumination scale. Degenerate (near-zero)
/// spectra are treated as background and map to angle 0.
pub fn spectral_angle(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na < 1e-24 || nb < 1e-24 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0).acos()
}

/// `spectral_angle` on f32 spectra, accumulating in f64.
pub fn spectral_angle_f32(a: &[f32], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let x = x as f64;
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na < 1e-24 || nb < 1e-24 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0).acos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signature_validation() {
        assert!(SpectralSignature::new("x", vec![0.5, 0.6], vec![400.0, 500.0]).is_ok());
        assert!(SpectralSignature::new("x", vec![0.5], vec![400.0]).is_err());
        assert!(SpectralSignature::new("x", vec![0.5, 1.2], vec![400.0, 500.0]).is_err());
        assert!(SpectralSignature::new("x", vec![0.5, 0.6], vec![500.0, 400.0]).is_err());
        assert!(SpectralSignature::new("x", vec![0.5, 0.6, 0.7], vec![400.0, 500.0]).is_err());
    }

    #[test]
    fn spectral_angle_basics() {
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 1.0, 0.0];
        assert!((spectral_angle(&a, &b) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        // scale invariance
        let c = [0.2, 0.4, 0.1];
        let d = [0.4, 0.8, 0.2];
        assert!(spectral_angle(&c, &d).abs() < 1e-7);
        // degenerate input treated as background
        assert_eq!(spectral_angle(&[0.0, 0.0], &[0.5, 0.5]), 0.0);
    }

    #[test]
    fn builtin_classes_are_distinct() {
        let set = builtin_class_set(DEFAULT_BANDS);
        let bg = builtin_background(DEFAULT_BANDS);
        assert_eq!(set.len(), 4);
        for i in 0..set.len() {
            // well separated from the backdrop
            assert!(spectral_angle(&set[i].reflectance, &bg.reflectance) > 0.15);
            for j in (i + 1)..set.len() {
                let ang = spectral_angle(&set[i].reflectance, &set[j].reflectance);
                assert!(ang > 0.12, "classes {i} and {j} too close: {ang}");
            }
        }
    }

    #[test]
    fn default_bands_span_and_order() {
        let c = default_band_centers(96);
        assert_eq!(c.len(), 96);
        assert_eq!(c[0], 400.0);
        assert_eq!(*c.last().unwrap(), 1000.0);
        assert!(c.windows(2).all(|w| w[1] > w[0]));
    }
}
