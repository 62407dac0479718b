//! Evaluation metrics: L1, AED, AKD, MKR and FID, plus the default
//! embedding and keypoint estimator.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::iuv::puppet::MARKER_COLORS;
use crate::types::{Image, Keypoint, KeypointSet};

/// Regulariser added to both covariances before the matrix square root.
pub const FID_EPS: f64 = 1e-6;

/// Deterministic map from an image to a fixed-length vector.
pub trait Embedding {
    fn dim(&self) -> usize;
    fn embed(&self, img: &Image) -> Vec<f64>;
}

/// Seeded Gaussian random projection of the image box-averaged onto a
/// `side x side` grid.
#[derive(Debug, Clone)]
pub struct RandomProjection {
    side: usize,
    dim: usize,
    /// Row-major `dim x (3 * side * side)`.
    weights: Vec<f64>,
}

impl RandomProjection {
    pub const DEFAULT_SEED: u64 = 0xAED_F1D;

    pub fn new(side: usize, dim: usize, seed: u64) -> Self {
        let n = 3 * side * side;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (n as f64).sqrt();
        let weights = (0..dim * n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Self { side, dim, weights }
    }

    /// Box-averaged pixels; pixel `(y, x)` falls in bin `(y * side / h, x * side / w)`.
    pub fn pooled(&self, img: &Image) -> Vec<f64> {
        let (h, w, s) = (img.height(), img.width(), self.side);
        let mut sums = vec![0.0; 3 * s * s];
        let mut counts = vec![0usize; s * s];
        let data = img.tensor().data();
        for y in 0..h {
            for x in 0..w {
                let b = (y * s / h) * s + x * s / w;
                counts[b] += 1;
                for c in 0..3 {
                    sums[c * s * s + b] += data[(c * h + y) * w + x] as f64;
                }
            }
        }
        for c in 0..3 {
            for b in 0..s * s {
                sums[c * s * s + b] /= counts[b].max(1) as f64;
            }
        }
        sums
    }
}

impl Default for RandomProjection {
    fn default() -> Self {
        Self::new(8, 16, Self::DEFAULT_SEED)
    }
}

impl Embedding for RandomProjection {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, img: &Image) -> Vec<f64> {
        let p = self.pooled(img);
        self.weights.chunks_exact(p.len()).map(|row| row.iter().zip(&p).map(|(a, b)| a * b).sum()).collect()
    }
}

fn same_size(a: &Image, b: &Image, what: &'static str) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::shape(what, format!("{}x{} vs {}x{}", a.height(), a.width(), b.height(), b.width())));
    }
    Ok(())
}

/// Mean absolute difference over all pixels and channels.
pub fn l1_metric(pred: &Image, gt: &Image) -> Result<f64> {
    same_size(pred, gt, "l1_metric")?;
    let (p, g) = (pred.tensor().data(), gt.tensor().data());
    Ok(p.iter().zip(g).map(|(&a, &b)| (a as f64 - b as f64).abs()).sum::<f64>() / p.len() as f64)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mean over frames of `|emb(pred) - reference|`.
pub fn aed_embeddings(pred: &[Vec<f64>], reference: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::Validation("aed needs at least one frame".into()));
    }
    if pred.iter().any(|p| p.len() != reference.len()) {
        return Err(Error::Validation("aed embeddings differ in length".into()));
    }
    Ok(pred.iter().map(|p| euclid(p, reference)).sum::<f64>() / pred.len() as f64)
}

/// Average identity-embedding distance of the predicted frames to the
/// reference (source) frame.
pub fn aed<E: Embedding>(pred: &[Image], reference: &Image, emb: &E) -> Result<f64> {
    let e: Vec<Vec<f64>> = pred.iter().map(|p| emb.embed(p)).collect();
    aed_embeddings(&e, &emb.embed(reference))
}

fn check_keypoints(pred: &[KeypointSet], gt: &[KeypointSet]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Validation(format!("{} predicted vs {} ground-truth frames", pred.len(), gt.len())));
    }
    if let Some(i) = pred.iter().zip(gt).position(|(p, g)| p.len() != g.len()) {
        return Err(Error::Validation(format!("joint counts differ at frame {i}")));
    }
    Ok(())
}

/// Mean Euclidean distance over joints present in both sets; 0 when no
/// joint pair is present.
pub fn akd(pred: &[KeypointSet], gt: &[KeypointSet]) -> Result<f64> {
    check_keypoints(pred, gt)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, g) in pred.iter().flatten().zip(gt.iter().flatten()) {
        if p.present && g.present {
            sum += ((p.x as f64 - g.x as f64).powi(2) + (p.y as f64 - g.y as f64).powi(2)).sqrt();
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Fraction of ground-truth-present joints missing from the prediction,
/// computed per frame and averaged over frames with at least one present
/// ground-truth joint.
pub fn mkr(pred: &[KeypointSet], gt: &[KeypointSet]) -> Result<f64> {
    check_keypoints(pred, gt)?;
    let rates: Vec<f64> = pred
        .iter()
        .zip(gt)
        .filter_map(|(p, g)| {
            let present = g.iter().filter(|k| k.present).count();
            let missing = p.iter().zip(g).filter(|(pk, gk)| gk.present && !pk.present).count();
            (present > 0).then(|| missing as f64 / present as f64)
        })
        .collect();
    Ok(if rates.is_empty() { 0.0 } else { rates.iter().sum::<f64>() / rates.len() as f64 })
}

fn moments(set: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = set.len();
    let d = set.first().map_or(0, Vec::len);
    if n < 2 || d == 0 || set.iter().any(|v| v.len() != d) {
        return Err(Error::Validation(format!("fid needs >= 2 equal-length embeddings, got {n}")));
    }
    let x = DMatrix::from_fn(n, d, |i, j| set[i][j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let centred = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centred.transpose() * &centred / (n - 1) as f64;
    Ok((mean, cov))
}

fn sym_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, &b| a.max(b.abs()));
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -1e-9 * scale {
            return Err(Error::Numeric(format!("{what} is not positive semi-definite (eigenvalue {v:e})")));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// Fréchet distance between Gaussians fitted to two embedding sets.
///
/// `Tr((S_a S_b)^{1/2})` is computed as `Tr((A S_b A)^{1/2})` with
/// `A = S_a^{1/2}`, which is symmetric and shares the eigenvalues.
pub fn fid_embeddings(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let (mu_a, cov_a) = moments(a)?;
    let (mu_b, cov_b) = moments(b)?;
    if mu_a.len() != mu_b.len() {
        return Err(Error::Validation("fid embedding dimensions differ".into()));
    }
    let d = mu_a.len();
    if a.len() <= d || b.len() <= d {
        log::warn!("fid: set sizes {} / {} do not exceed embedding dimension {d}", a.len(), b.len());
    }
    let eps = DMatrix::identity(d, d) * FID_EPS;
    let (cov_a, cov_b) = (cov_a + &eps, cov_b + &eps);
    let root_a = sym_sqrt(&cov_a, "covariance")?;
    let cross = sym_sqrt(&(&root_a * &cov_b * &root_a), "covariance product")?;
    let diff = mu_a - mu_b;
    let value = diff.dot(&diff) + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace();
    if !value.is_finite() {
        return Err(Error::Numeric("fid is not finite".into()));
    }
    Ok(value.max(0.0))
}

pub fn fid<E: Embedding>(set_a: &[Image], set_b: &[Image], emb: &E) -> Result<f64> {
    let ea: Vec<Vec<f64>> = set_a.iter().map(|i| emb.embed(i)).collect();
    let eb: Vec<Vec<f64>> = set_b.iter().map(|i| emb.embed(i)).collect();
    fid_embeddings(&ea, &eb)
}

/// Locates joint markers by colour: a joint is the centroid of the pixels
/// within `tolerance` of its marker colour in every channel, and missing
/// when fewer than `min_pixels` match.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerEstimator {
    pub joints: usize,
    pub tolerance: f32,
    pub min_pixels: usize,
}

impl Default for MarkerEstimator {
    fn default() -> Self {
        Self { joints: MARKER_COLORS.len(), tolerance: 0.15, min_pixels: 1 }
    }
}

impl MarkerEstimator {
    pub fn estimate(&self, img: &Image) -> KeypointSet {
        let (h, w) = (img.height(), img.width());
        let data = img.tensor().data();
        let mut acc = vec![(0.0f64, 0.0f64, 0usize); self.joints];
        for y in 0..h {
            for x in 0..w {
                let px = [0, 1, 2].map(|c| data[(c * h + y) * w + x]);
                for (j, a) in acc.iter_mut().enumerate() {
                    let col = MARKER_COLORS[j % MARKER_COLORS.len()];
                    if px.iter().zip(col).all(|(&p, c)| (p - c).abs() <= self.tolerance) {
                        a.0 += x as f64;
                        a.1 += y as f64;
                        a.2 += 1;
                    }
                }
            }
        }
        acc.into_iter()
            .map(|(sx, sy, n)| {
                if n >= self.min_pixels.max(1) {
                    Keypoint { x: (sx / n as f64) as f32, y: (sy / n as f64) as f32, present: true }
                } else {
                    Keypoint::MISSING
                }
            })
            .collect()
    }
}
