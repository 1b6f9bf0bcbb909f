//! Minimum noise fraction transform.
//!
//! Orders linear spectral components by signal-to-noise ratio: estimate a
//! noise covariance from horizontal shift differences, whiten against it,
//! and take the principal components of the whitened signal covariance.
//! Projections onto the leading components keep the informative structure
//! while the trailing ones carry mostly noise.

use crate::cube::HyperspectralCube;
use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

/// Fitted MNF basis for a fixed band count.
#[derive(Debug, Clone)]
pub struct MnfModel {
    pub bands: usize,
    /// Per-band mean of the fit pixels.
    pub mean: Vec<f64>,
    /// Noise covariance estimate (shift-difference, halved), row-major N x N.
    pub noise_covariance: Vec<f64>,
    /// Signal covariance of the raw pixels, row-major N x N.
    pub signal_covariance: Vec<f64>,
    /// Projection rows ordered by decreasing SNR; `components[k]` is the
    /// k-th component's band weights (unit noise variance normalization).
    pub components: Vec<Vec<f64>>,
    /// SNR eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// Default number of retained components.
    pub retained_k: usize,
    /// True when the noise covariance needed ridge regularization.
    pub regularized: bool,
}

/// Default retained component count: keep ~70% of bands (drop ~30%).
pub fn default_retained_k(bands: usize) -> usize {
    ((0.7 * bands as f64).round() as usize).clamp(1, bands)
}

fn flat_index(n: usize, r: usize, c: usize) -> usize {
    r * n + c
}

/// Accumulate the covariance of `samples` (rows are observations) about
/// their mean; returns (mean, covariance row-major).
fn covariance(samples: &[Vec<f64>], n: usize) -> (Vec<f64>, Vec<f64>) {
    let m = samples.len() as f64;
    let mut mean = vec![0.0; n];
    for s in samples {
        for (acc, &x) in mean.iter_mut().zip(s) {
            *acc += x;
        }
    }
    for acc in mean.iter_mut() {
        *acc /= m;
    }
    let mut cov = vec![0.0; n * n];
    for s in samples {
        for i in 0..n {
            let di = s[i] - mean[i];
            for j in i..n {
                cov[flat_index(n, i, j)] += di * (s[j] - mean[j]);
            }
        }
    }
    for i in 0..n {
        for j in i..n {
            let v = cov[flat_index(n, i, j)] / m;
            cov[flat_index(n, i, j)] = v;
            cov[flat_index(n, j, i)] = v;
        }
    }
    (mean, cov)
}

/// Fit an MNF basis on a cube, optionally restricted to masked pixels.
///
/// Noise is estimated from first differences of horizontally adjacent
/// pixels (both inside the region), halved; signal covariance comes from
/// the raw pixels. Solves the generalized symmetric problem
/// `signal * w = lambda * noise * w` via Cholesky whitening; a singular
/// noise estimate is ridge-regularized with `1e-8 * trace / N` and the
/// model is flagged `regularized`.
pub fn mnf_fit(cube: &HyperspectralCube, region: Option<&[bool]>) -> Result<MnfModel> {
    let n = cube.bands;
    if let Some(mask) = region {
        if mask.len() != cube.rows * cube.cols {
            return Err(Error::Spectral("region mask does not match cube shape".into()));
        }
    }
    let in_region = |v: usize, u: usize| -> bool {
        region.is_none_or(|m| m[v * cube.cols + u]) && cube.is_valid(v, u)
    };

    let mut pixels: Vec<Vec<f64>> = Vec::new();
    let mut diffs: Vec<Vec<f64>> = Vec::new();
    for v in 0..cube.rows {
        for u in 0..cube.cols {
            if !in_region(v, u) {
                continue;
            }
            let s = cube.spectrum_f64(v, u);
            if u + 1 < cube.cols && in_region(v, u + 1) {
                let t = cube.spectrum(v, u + 1);
                diffs.push(s.iter().zip(t).map(|(&a, &b)| a - b as f64).collect());
            }
            pixels.push(s);
        }
    }
    if pixels.len() < n + 1 {
        return Err(Error::Spectral(format!(
            "need at least {} pixels to fit {} bands, region has {}",
            n + 1,
            n,
            pixels.len()
        )));
    }
    if diffs.is_empty() {
        return Err(Error::Spectral("region has no horizontally adjacent pixel pairs".into()));
    }

    let (mean, signal_cov) = covariance(&pixels, n);
    let (_, diff_cov) = covariance(&diffs, n);
    // difference of two iid noise draws doubles the covariance
    let noise_cov: Vec<f64> = diff_cov.iter().map(|&x| x / 2.0).collect();

    let (components, eigenvalues, regularized) =
        solve_generalized(&signal_cov, &noise_cov, n)?;

    Ok(MnfModel {
        bands: n,
        mean,
        noise_covariance: noise_cov,
        signal_covariance: signal_cov,
        components,
        eigenvalues,
        retained_k: default_retained_k(n),
        regularized,
    })
}

/// Solve `signal * w = lambda * noise * w` by Cholesky whitening; returns
/// (rows of W ordered by descending lambda, lambdas, regularized flag).
/// Each row w satisfies `w' * noise * w = 1`.
fn solve_generalized(
    signal: &[f64],
    noise: &[f64],
    n: usize,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, bool)> {
    let sig = DMatrix::from_row_slice(n, n, signal);
    let mut noi = DMatrix::from_row_slice(n, n, noise);
    let mut regularized = false;
    let chol = match Cholesky::new(noi.clone()) {
        Some(c) => c,
        None => {
            let eps = 1e-8 * noi.trace() / n as f64;
            for i in 0..n {
                noi[(i, i)] += eps.max(1e-300);
            }
            regularized = true;
            Cholesky::new(noi.clone()).ok_or_else(|| {
                Error::Spectral("noise covariance not positive definite even after ridge".into())
            })?
        }
    };
    // whitened = L^-1 * signal * L^-T
    let l = chol.l();
    let li_sig = l.clone().solve_lower_triangular(&sig).ok_or_else(|| {
        Error::Spectral("noise Cholesky factor is singular".into())
    })?;
    let whitened = l
        .solve_lower_triangular(&li_sig.transpose())
        .ok_or_else(|| Error::Spectral("noise Cholesky factor is singular".into()))?;
    // enforce symmetry lost to round-off
    let whitened = (&whitened + whitened.transpose()) * 0.5;
    let eig = SymmetricEigen::new(whitened);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    // back-transform eigenvectors: w = L^-T q
    let lt = l.transpose();
    let mut components = Vec::with_capacity(n);
    let mut eigenvalues = Vec::with_capacity(n);
    for &i in &order {
        let q: DVector<f64> = eig.eigenvectors.column(i).into();
        let w = lt
            .solve_upper_triangular(&q)
            .ok_or_else(|| Error::Spectral("noise Cholesky factor is singular".into()))?;
        components.push(w.iter().copied().collect());
        eigenvalues.push(eig.eigenvalues[i]);
    }
    Ok((components, eigenvalues, regularized))
}

impl MnfModel {
    /// Project a spectrum onto the top `retained_k` components.
    pub fn project(&self, spectrum: &[f64], retained_k: usize) -> Result<Vec<f64>> {
        if spectrum.len() != self.bands {
            return Err(Error::Spectral(format!(
                "spectrum has {} bands, model expects {}",
                spectrum.len(),
                self.bands
            )));
        }
        if retained_k == 0 || retained_k > self.bands {
            return Err(Error::Spectral(format!(
                "retained_k {retained_k} outside [1, {}]",
                self.bands
            )));
        }
        let centered: Vec<f64> =
            spectrum.iter().zip(&self.mean).map(|(&x, &m)| x - m).collect();
        Ok(self.components[..retained_k]
            .iter()
            .map(|w| w.iter().zip(&centered).map(|(&a, &b)| a * b).sum())
            .collect())
    }

    /// `project` for an f32 spectrum.
    pub fn project_f32(&self, spectrum: &[f32], retained_k: usize) -> Result<Vec<f64>> {
        let s: Vec<f64> = spectrum.iter().map(|&x| x as f64).collect();
        self.project(&s, retained_k)
    }

    /// Reconstruct a spectrum from `retained_k` projection coefficients.
    /// Exact inverse when `retained_k == bands`; least-squares otherwise.
    pub fn reconstruct(&self, reduced: &[f64]) -> Result<Vec<f64>> {
        let k = reduced.len();
        if k == 0 || k > self.bands {
            return Err(Error::Spectral("reduced vector length out of range".into()));
        }
        // solve W_k * x = y for x in the least-squares sense; W_k is k x N
        let n = self.bands;
        let mut w = DMatrix::zeros(k, n);
        for (i, row) in self.components[..k].iter().enumerate() {
            for (j, &val) in row.iter().enumerate() {
                w[(i, j)] = val;
            }
        }
        let y = DVector::from_row_slice(reduced);
        let svd = w.svd(true, true);
        let x = svd
            .solve(&y, 1e-12)
            .map_err(|e| Error::Spectral(format!("reconstruction solve failed: {e}")))?;
        Ok(x.iter().zip(&self.mean).map(|(&d, &m)| d + m).collect())
    }
}

/// Project every masked pixel of a cube; returns (pixel linear indices,
/// reduced spectra) in row-major order.
pub fn mnf_transform_cube(
    cube: &HyperspectralCube,
    model: &MnfModel,
    retained_k: usize,
    region: Option<&[bool]>,
) -> Result<(Vec<usize>, Vec<Vec<f64>>)> {
    if cube.bands != model.bands {
        return Err(Error::Spectral(format!(
            "cube has {} bands, model expects {}",
            cube.bands, model.bands
        )));
    }
    let mut idx = Vec::new();
    let mut out = Vec::new();
    for v in 0..cube.rows {
        for u in 0..cube.cols {
            let i = v * cube.cols + u;
            if region.is_none_or(|m| m[i]) && cube.is_valid(v, u) {
                idx.push(i);
                out.push(model.project_f32(cube.spectrum(v, u), retained_k)?);
            }
        }
    }
    Ok((idx, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GeometryContext;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn noise_cube(rows: usize, cols: usize, bands: usize, sigma: f64, seed: u64) -> HyperspectralCube {
        let geom = GeometryContext::new(600.0, 0.5, rows.max(2), cols.max(2)).unwrap();
        let mut cube = HyperspectralCube::constant(rows, cols, bands, 0.0, geom);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.5, sigma).unwrap();
        for x in cube.data.iter_mut() {
            *x = dist.sample(&mut rng) as f32;
        }
        cube
    }

    /// Brute-force oracle: explicit noise^(-1/2) via Jacobi eigensolver,
    /// then Jacobi again on the whitened signal matrix. Fully independent
    /// of the Cholesky + nalgebra route used by the implementation.
    pub(crate) fn generalized_eig_oracle(
        signal: &[f64],
        noise: &[f64],
        n: usize,
    ) -> (Vec<Vec<f64>>, Vec<f64>) {
        let (vals_n, vecs_n) = jacobi_eigen(noise, n);
        // noise^(-1/2) = V diag(1/sqrt(l)) V'; eigenvector k is column k
        let mut inv_sqrt = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += vecs_n[i * n + k] * vecs_n[j * n + k] / vals_n[k].sqrt();
                }
                inv_sqrt[i * n + j] = acc;
            }
        }
        // m = noise^(-1/2) signal noise^(-1/2)
        let mut tmp = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += inv_sqrt[i * n + k] * signal[k * n + j];
                }
                tmp[i * n + j] = acc;
            }
        }
        let mut m = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += tmp[i * n + k] * inv_sqrt[k * n + j];
                }
                m[i * n + j] = acc;
            }
        }
        let (vals, vecs) = jacobi_eigen(&m, n);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| vals[b].partial_cmp(&vals[a]).unwrap());
        let mut comps = Vec::new();
        let mut lams = Vec::new();
        for &c in &order {
            // w = noise^(-1/2) q
            let mut w = vec![0.0; n];
            for i in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += inv_sqrt[i * n + k] * vecs[k * n + c];
                }
                w[i] = acc;
            }
            comps.push(w);
            lams.push(vals[c]);
        }
        (comps, lams)
    }

    /// Classic cyclic Jacobi rotations for a symmetric matrix; returns
    /// (eigenvalues, eigenvectors as columns of a row-major matrix).
    fn jacobi_eigen(mat: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut a = mat.to_vec();
        let mut v = vec![0.0; n * n];
        for i in 0..n {
            v[i * n + i] = 1.0;
        }
        for _sweep in 0..100 {
            let mut off = 0.0;
            for i in 0..n {
                for j in (i + 1)..n {
                    off += a[i * n + j] * a[i * n + j];
                }
            }
            if off < 1e-24 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[p * n + q];
                    if apq.abs() < 1e-300 {
                        continue;
                    }
                    let app = a[p * n + p];
                    let aqq = a[q * n + q];
                    let tau = (aqq - app) / (2.0 * apq);
                    let t = if tau >= 0.0 {
                        1.0 / (tau + (1.0 + tau * tau).sqrt())
                    } else {
                        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                    };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[k * n + p];
                        let akq = a[k * n + q];
                        a[k * n + p] = c * akp - s * akq;
                        a[k * n + q] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[p * n + k];
                        let aqk = a[q * n + k];
                        a[p * n + k] = c * apk - s * aqk;
                        a[q * n + k] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[k * n + p];
                        let vkq = v[k * n + q];
                        v[k * n + p] = c * vkp - s * vkq;
                        v[k * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let vals: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
        (vals, v)
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
        let na: f64 = a.iter().map(|&x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|&x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    }


    #[test]
    fn probe_rank_one_diag() {
        let mut cube = noise_cube(100, 100, 8, 0.02, 15);
        let direction: Vec<f64> = (0..8).map(|b| ((b as f64) * 0.7).sin() + 1.5).collect();
        for v in 0..cube.rows {
            for u in 0..cube.cols {
                let a = 0.3 * ((v as f64 / 25.0).sin() + (u as f64 / 31.0).cos());
                for b in 0..8 {
                    cube.data[(v * cube.cols + u) * 8 + b] += (a * direction[b]) as f32;
                }
            }
        }
        let model = mnf_fit(&cube, None).unwrap();
        let (oc, ov) = generalized_eig_oracle(&model.signal_covariance, &model.noise_covariance, 8);
        eprintln!("PROBE impl eig = {:?}", model.eigenvalues);
        eprintln!("PROBE orac eig = {:?}", ov);
        eprintln!("PROBE impl c0 = {:?}", model.components[0]);
        eprintln!("PROBE orac c0 = {:?}", oc[0]);
        // residual check: ||S w - l N w|| for both
        let n = 8;
        let resid = |w: &Vec<f64>, l: f64| -> f64 {
            let mut r = 0.0;
            for i in 0..n {
                let mut sw = 0.0; let mut nw = 0.0;
                for j in 0..n {
                    sw += model.signal_covariance[i*n+j] * w[j];
                    nw += model.noise_covariance[i*n+j] * w[j];
                }
                r += (sw - l*nw).powi(2);
            }
            r.sqrt()
        };
        eprintln!("PROBE impl resid0 = {:e}", resid(&model.components[0], model.eigenvalues[0]));
        eprintln!("PROBE orac resid0 = {:e}", resid(&oc[0], ov[0]));
    }
    #[test]
    fn white_noise_eigenvalues_near_one() {
        let cube = noise_cube(100, 100, 8, 0.05, 9);
        let model = mnf_fit(&cube, None).unwrap();
        for (i, &l) in model.eigenvalues.iter().enumerate() {
            assert!((l - 1.0).abs() < 0.10, "eigenvalue {i} = {l}");
        }
    }

    #[test]
    fn rank_one_signal_gives_one_dominant_eigenvalue() {
        let mut cube = noise_cube(100, 100, 8, 0.02, 15);
        // inject a strong rank-1 pattern varying smoothly across the image
        let direction: Vec<f64> = (0..8).map(|b| ((b as f64) * 0.7).sin() + 1.5).collect();
        for v in 0..cube.rows {
            for u in 0..cube.cols {
                let a = 0.3 * ((v as f64 / 25.0).sin() + (u as f64 / 31.0).cos());
                for b in 0..8 {
                    cube.data[(v * cube.cols + u) * 8 + b] += (a * direction[b]) as f32;
                }
            }
        }
        let model = mnf_fit(&cube, None).unwrap();
        assert!(model.eigenvalues[0] > 20.0, "dominant {}", model.eigenvalues[0]);
        assert!(model.eigenvalues[1] < 5.0, "second {}", model.eigenvalues[1]);
        // matches the brute-force oracle on the same covariances
        let (oracle_comps, oracle_vals) =
            generalized_eig_oracle(&model.signal_covariance, &model.noise_covariance, 8);
        for i in 0..8 {
            let cs = cosine(&model.components[i], &oracle_comps[i]).abs();
            assert!(cs >= 0.999, "component {i} cosine {cs}");
            assert!((model.eigenvalues[i] - oracle_vals[i]).abs() < 1e-6 * (1.0 + oracle_vals[i]));
        }
        // top-1 projection captures nearly all signal variance
        let (_, reduced_full) = mnf_transform_cube(&cube, &model, 8, None).unwrap();
        let var = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
        };
        let total: f64 = (0..8)
            .map(|k| var(&reduced_full.iter().map(|r| r[k]).collect::<Vec<_>>()))
            .sum();
        let top = var(&reduced_full.iter().map(|r| r[0]).collect::<Vec<_>>());
        // subtract the unit noise floor each whitened component carries
        let signal_total = total - 8.0;
        let signal_top = top - 1.0;
        assert!(signal_top / signal_total > 0.999, "top-1 ratio {}", signal_top / signal_total);
    }

    #[test]
    fn fit_is_deterministic() {
        let cube = noise_cube(60, 60, 6, 0.05, 21);
        let a = mnf_fit(&cube, None).unwrap();
        let b = mnf_fit(&cube, None).unwrap();
        assert_eq!(a.eigenvalues, b.eigenvalues);
        assert_eq!(a.components, b.components);
    }

    #[test]
    fn eigenvalues_monotone_nonincreasing() {
        for seed in 0..5 {
            let cube = noise_cube(80, 80, 8, 0.03, 100 + seed);
            let model = mnf_fit(&cube, None).unwrap();
            for w in model.eigenvalues.windows(2) {
                assert!(w[0] >= w[1] - 1e-12);
            }
        }
    }

    #[test]
    fn full_rank_projection_invertible() {
        let cube = noise_cube(50, 50, 8, 0.05, 33);
        let model = mnf_fit(&cube, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let s: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
            let reduced = model.project(&s, 8).unwrap();
            let back = model.reconstruct(&reduced).unwrap();
            for (a, b) in s.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn default_k_drops_thirty_percent() {
        assert_eq!(default_retained_k(96), 67);
        assert_eq!(default_retained_k(10), 7);
        assert_eq!(default_retained_k(1), 1);
    }

    #[test]
    fn rejects_bad_inputs() {
        let cube = noise_cube(3, 2, 8, 0.05, 2); // 6 pixels < 9 needed
        assert!(mnf_fit(&cube, None).is_err());
        let cube = noise_cube(50, 50, 8, 0.05, 2);
        let model = mnf_fit(&cube, None).unwrap();
        assert!(model.project(&[0.0; 8], 0).is_err());
        assert!(model.project(&[0.0; 8], 9).is_err());
        assert!(model.project(&[0.0; 7], 4).is_err());
    }

    #[test]
    fn singular_noise_gets_ridge() {
        // constant cube: all differences are zero -> singular noise estimate
        let geom = GeometryContext::new(600.0, 0.5, 10, 10).unwrap();
        let cube = HyperspectralCube::constant(10, 10, 4, 0.5, geom);
        let model = mnf_fit(&cube, None).unwrap();
        assert!(model.regularized);
    }
}
