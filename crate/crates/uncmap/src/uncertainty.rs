//! Per-pixel Gaussian logit distributions and the drivable score map.
//!
//! A [`LogitField`] holds a mean and a standard deviation per pixel and
//! class. Monte-Carlo sampling with reparameterized noise turns it into
//! expected class probabilities, a grouped drivable probability, a binary
//! group entropy, and an entropy-blended safety score, all consolidated in a
//! [`DrivableScoreMap`]. The same sampled noise stream drives the perception
//! loss and its analytic gradients.
//!
//! All operations are pure functions of their inputs. Pixel noise is
//! addressed by `(pixel, class, sample)`, so per-pixel work can be
//! partitioned across threads without changing any result.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, Array4, ArrayView2, ArrayView3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ClassTaxonomy, GridSpec, SemanticGrid};
use crate::noise::{standard_normal, Stream};

/// Clamp bounds for log-sigma. Positive sigmas are kept inside
/// `[exp(-7), exp(3)]`; an exact zero is preserved so the deterministic
/// limit reduces Monte-Carlo averages to plain softmax exactly.
pub const LOG_SIGMA_MIN: f64 = -7.0;
pub const LOG_SIGMA_MAX: f64 = 3.0;

/// Monte-Carlo sampling configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    /// Number of reparameterized samples (T).
    pub num_samples: usize,
    pub seed: u64,
}

impl McConfig {
    /// Default sample count for loss evaluation.
    pub const LOSS_SAMPLES: usize = 32;
    /// Default sample count for score-map construction.
    pub const MAP_SAMPLES: usize = 128;

    pub fn new(num_samples: usize, seed: u64) -> Result<Self> {
        if num_samples < 1 {
            return Err(Error::config("num_samples must be >= 1"));
        }
        Ok(McConfig { num_samples, seed })
    }
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig {
            num_samples: McConfig::MAP_SAMPLES,
            seed: 0,
        }
    }
}

/// Per-pixel Gaussian logit distribution over K classes.
///
/// `sigma` is stored directly. Construction clamps positive values into
/// `[exp(LOG_SIGMA_MIN), exp(LOG_SIGMA_MAX)]` and keeps exact zeros, which
/// represent a fully deterministic pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitField {
    spec: GridSpec,
    mu: Array3<f64>,
    sigma: Array3<f64>,
}

impl LogitField {
    pub fn new(spec: GridSpec, mu: Array3<f64>, sigma: Array3<f64>) -> Result<Self> {
        spec.validate()?;
        let shape = mu.dim();
        if shape.0 != spec.height || shape.1 != spec.width {
            return Err(Error::data(format!(
                "mu shape {:?} does not match grid {}x{}",
                shape, spec.height, spec.width
            )));
        }
        if sigma.dim() != shape {
            return Err(Error::data("mu and sigma shapes differ"));
        }
        if shape.2 < 2 {
            return Err(Error::data("logit field needs at least 2 classes"));
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("non-finite value in mu"));
        }
        if sigma.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::data("sigma must be finite and non-negative"));
        }
        let sigma = sigma.mapv(|s| {
            if s == 0.0 {
                0.0
            } else {
                s.clamp(LOG_SIGMA_MIN.exp(), LOG_SIGMA_MAX.exp())
            }
        });
        Ok(LogitField { spec, mu, sigma })
    }

    /// Build from a log-sigma parameterization; values are clamped to
    /// `[LOG_SIGMA_MIN, LOG_SIGMA_MAX]`.
    pub fn from_log_sigma(spec: GridSpec, mu: Array3<f64>, log_sigma: Array3<f64>) -> Result<Self> {
        if log_sigma.iter().any(|v| v.is_nan()) {
            return Err(Error::data("NaN in log_sigma"));
        }
        let sigma = log_sigma.mapv(|ls| ls.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp());
        LogitField::new(spec, mu, sigma)
    }

    /// Deterministic field (sigma = 0 everywhere).
    pub fn deterministic(spec: GridSpec, mu: Array3<f64>) -> Result<Self> {
        let sigma = Array3::zeros(mu.dim());
        LogitField::new(spec, mu, sigma)
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.mu.dim().2
    }

    pub fn mu(&self) -> ArrayView3<'_, f64> {
        self.mu.view()
    }

    pub fn sigma(&self) -> ArrayView3<'_, f64> {
        self.sigma.view()
    }

    /// Serialize as binary planes: header (magic "LGTF", u32 H, u32 W,
    /// u32 K little-endian), then per class a mu plane followed by a sigma
    /// plane, each row-major f32 little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (h, w, k) = self.mu.dim();
        let mut out = Vec::with_capacity(16 + 2 * h * w * k * 4);
        out.extend_from_slice(b"LGTF");
        out.extend_from_slice(&(h as u32).to_le_bytes());
        out.extend_from_slice(&(w as u32).to_le_bytes());
        out.extend_from_slice(&(k as u32).to_le_bytes());
        for c in 0..k {
            for i in 0..h {
                for j in 0..w {
                    out.extend_from_slice(&(self.mu[[i, j, c]] as f32).to_le_bytes());
                }
            }
            for i in 0..h {
                for j in 0..w {
                    out.extend_from_slice(&(self.sigma[[i, j, c]] as f32).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], resolution: f64, origin: (f64, f64)) -> Result<Self> {
        if bytes.len() < 16 || &bytes[0..4] != b"LGTF" {
            return Err(Error::data("not a LGTF file"));
        }
        let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let k = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expected = 16 + 2 * h * w * k * 4;
        if bytes.len() != expected {
            return Err(Error::data(format!(
                "LGTF payload size mismatch: expected {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let mut mu = Array3::zeros((h, w, k));
        let mut sigma = Array3::zeros((h, w, k));
        let mut off = 16;
        let read_f32 = |bytes: &[u8], off: &mut usize| {
            let v = f32::from_le_bytes(bytes[*off..*off + 4].try_into().unwrap()) as f64;
            *off += 4;
            v
        };
        for c in 0..k {
            for i in 0..h {
                for j in 0..w {
                    mu[[i, j, c]] = read_f32(bytes, &mut off);
                }
            }
            for i in 0..h {
                for j in 0..w {
                    sigma[[i, j, c]] = read_f32(bytes, &mut off);
                }
            }
        }
        let spec = GridSpec::new(h, w, resolution, origin)?;
        LogitField::new(spec, mu, sigma)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

/// Numerically stable softmax into a caller-provided buffer.
fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &z) in out.iter_mut().zip(logits) {
        let e = (z - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Stable softmax of a logit slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

/// Draw T reparameterized logit samples `mu + sigma * eps` with
/// `eps ~ N(0, I)` addressed by `(pixel, class, sample)`. Identical
/// `(field, cfg)` produce bit-identical output regardless of thread count.
pub fn sample_logits(field: &LogitField, cfg: &McConfig) -> Array4<f64> {
    let (h, w, k) = field.mu().dim();
    let t = cfg.num_samples;
    let mut out = Array4::zeros((t, h, w, k));
    for ti in 0..t {
        for i in 0..h {
            for j in 0..w {
                let pix = (i * w + j) as u64;
                for c in 0..k {
                    let sigma = field.sigma[[i, j, c]];
                    let eps = if sigma == 0.0 {
                        0.0
                    } else {
                        standard_normal(cfg.seed, Stream::McSample, pix, c as u64, ti as u64)
                    };
                    out[[ti, i, j, c]] = field.mu[[i, j, c]] + sigma * eps;
                }
            }
        }
    }
    out
}

/// Per-pixel worker: average softmax over T reparameterized samples.
fn expected_probs_pixel(
    mu: &[f64],
    sigma: &[f64],
    seed: u64,
    pix: u64,
    t: usize,
    out: &mut [f64],
) {
    let k = mu.len();
    let deterministic = sigma.iter().all(|&s| s == 0.0);
    let mut z = vec![0.0; k];
    let mut s = vec![0.0; k];
    if deterministic {
        softmax_into(mu, out);
        return;
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    for ti in 0..t {
        for c in 0..k {
            let eps = if sigma[c] == 0.0 {
                0.0
            } else {
                standard_normal(seed, Stream::McSample, pix, c as u64, ti as u64)
            };
            z[c] = mu[c] + sigma[c] * eps;
        }
        softmax_into(&z, &mut s);
        for c in 0..k {
            out[c] += s[c];
        }
    }
    for o in out.iter_mut() {
        *o /= t as f64;
    }
}

/// Expected class probabilities: the Monte-Carlo average of softmax over the
/// sampled logits. Each pixel's K values sum to 1. With sigma = 0 everywhere
/// the result is exactly `softmax(mu)`, independent of T and seed.
pub fn expected_probabilities(field: &LogitField, cfg: &McConfig) -> Array3<f64> {
    let (h, w, k) = field.mu().dim();
    let mu = field.mu.as_slice().unwrap();
    let sigma = field.sigma.as_slice().unwrap();
    let mut out = vec![0.0; h * w * k];
    out.par_chunks_mut(w * k).enumerate().for_each(|(i, row)| {
        for j in 0..w {
            let base = (i * w + j) * k;
            expected_probs_pixel(
                &mu[base..base + k],
                &sigma[base..base + k],
                cfg.seed,
                (i * w + j) as u64,
                cfg.num_samples,
                &mut row[j * k..(j + 1) * k],
            );
        }
    });
    Array3::from_shape_vec((h, w, k), out).unwrap()
}

/// Sum the expected probabilities over the drivable classes.
pub fn group_probability(pbar: ArrayView3<'_, f64>, taxonomy: &ClassTaxonomy) -> Result<Array2<f64>> {
    let (h, w, k) = pbar.dim();
    if k != taxonomy.num_classes {
        return Err(Error::config(format!(
            "taxonomy has {} classes but probabilities have {k}",
            taxonomy.num_classes
        )));
    }
    let mut out = Array2::zeros((h, w));
    for i in 0..h {
        for j in 0..w {
            let mut p = 0.0;
            for &c in &taxonomy.drivable {
                p += pbar[[i, j, c]];
            }
            out[[i, j]] = p.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Binary entropy of a probability, in bits, with the 0 log 0 = 0 convention
/// at the endpoints. Interior values are clamped away from 0 and 1 before
/// taking logs.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    let q = 1.0 - p;
    -(p * p.log2()) - (q * q.log2())
}

/// Group entropy plane: decision ambiguity of the drivable-vs-not split,
/// 0 at full confidence and 1 at p = 0.5.
pub fn group_entropy(p_pos: ArrayView2<'_, f64>) -> Array2<f64> {
    p_pos.mapv(binary_entropy)
}

/// Entropy-blended safety score for one pixel: equals the drivable
/// probability at full confidence and moves to the neutral 0.5 as ambiguity
/// rises.
pub fn safety_score_value(p_pos: f64, h_group: f64) -> f64 {
    p_pos * (1.0 - h_group) + 0.5 * h_group
}

/// Safety plane from drivable-probability and ambiguity planes.
pub fn safety_score(p_pos: ArrayView2<'_, f64>, h_group: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(p_pos.dim());
    for ((i, j), v) in p_pos.indexed_iter() {
        out[[i, j]] = safety_score_value(*v, h_group[[i, j]]);
    }
    out
}

/// Uncertainty-aware drivable score map: per-pixel drivable probability,
/// group entropy, blended safety score, and the hard non-drivable mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DrivableScoreMap {
    pub spec: GridSpec,
    /// Grouped drivable probability (p_pos).
    pub drivable: Array2<f64>,
    /// Binary group entropy (h_group), in [0, 1].
    pub ambiguity: Array2<f64>,
    /// Entropy-blended safety score (s_safe).
    pub safety: Array2<f64>,
    /// Hard mask: drivable probability below `tau_drive`.
    pub nondrivable: Array2<bool>,
    pub tau_drive: f64,
}

const DSMP_MAGIC: &[u8; 4] = b"DSMP";

impl DrivableScoreMap {
    /// Assemble a map from a drivable-probability plane and an ambiguity
    /// plane; the safety plane and mask are derived, which keeps the
    /// blend identity exact by construction.
    pub fn from_planes(
        spec: GridSpec,
        drivable: Array2<f64>,
        ambiguity: Array2<f64>,
        tau_drive: f64,
    ) -> Result<Self> {
        spec.validate()?;
        let dim = (spec.height, spec.width);
        if drivable.dim() != dim || ambiguity.dim() != dim {
            return Err(Error::data("score-map plane shape mismatch"));
        }
        if !(0.0..=1.0).contains(&tau_drive) {
            return Err(Error::config("tau_drive must be in [0, 1]"));
        }
        if drivable.iter().any(|p| !(0.0..=1.0).contains(p))
            || ambiguity.iter().any(|h| !(0.0..=1.0).contains(h))
        {
            return Err(Error::data("score-map planes must lie in [0, 1]"));
        }
        let safety = safety_score(drivable.view(), ambiguity.view());
        let nondrivable = drivable.mapv(|p| p < tau_drive);
        Ok(DrivableScoreMap {
            spec,
            drivable,
            ambiguity,
            safety,
            nondrivable,
            tau_drive,
        })
    }

    /// Row-major binary format: header (magic "DSMP", u32 H, u32 W
    /// little-endian) followed by three f32 little-endian planes in the
    /// order drivable probability, group entropy, safety score.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (h, w) = self.drivable.dim();
        let mut out = Vec::with_capacity(12 + 3 * h * w * 4);
        out.extend_from_slice(DSMP_MAGIC);
        out.extend_from_slice(&(h as u32).to_le_bytes());
        out.extend_from_slice(&(w as u32).to_le_bytes());
        for plane in [&self.drivable, &self.ambiguity, &self.safety] {
            for v in plane.iter() {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    /// Parse the binary format. The safety plane is re-derived from the
    /// stored probability and entropy planes (and checked against the
    /// stored one at f32 precision); the mask is rebuilt from `tau_drive`.
    pub fn from_bytes(
        bytes: &[u8],
        resolution: f64,
        origin: (f64, f64),
        tau_drive: f64,
    ) -> Result<Self> {
        if bytes.len() < 12 || &bytes[0..4] != DSMP_MAGIC {
            return Err(Error::data("not a DSMP file"));
        }
        let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let expected = 12 + 3 * h * w * 4;
        if bytes.len() != expected {
            return Err(Error::data(format!(
                "DSMP payload size mismatch: expected {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let mut planes = vec![Array2::zeros((h, w)), Array2::zeros((h, w)), Array2::zeros((h, w))];
        let mut off = 12;
        for plane in planes.iter_mut() {
            for i in 0..h {
                for j in 0..w {
                    plane[[i, j]] =
                        f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64;
                    off += 4;
                }
            }
        }
        let stored_safety = planes.pop().unwrap();
        let ambiguity = planes.pop().unwrap();
        let drivable = planes.pop().unwrap();
        let spec = GridSpec::new(h, w, resolution, origin)?;
        let map = DrivableScoreMap::from_planes(spec, drivable, ambiguity, tau_drive)?;
        for (a, b) in map.safety.iter().zip(stored_safety.iter()) {
            if (a - b).abs() > 1e-6 {
                return Err(Error::data("DSMP safety plane inconsistent with p/h planes"));
            }
        }
        Ok(map)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// 8-bit binary PGM of the safety plane (value * 255, rounded), for
    /// quick visual inspection.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (h, w) = self.safety.dim();
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        for v in self.safety.iter() {
            out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
        }
        out
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

/// Build the full uncertainty-aware score map from a logit field.
pub fn build_score_map(
    field: &LogitField,
    taxonomy: &ClassTaxonomy,
    cfg: &McConfig,
    tau_drive: f64,
) -> Result<DrivableScoreMap> {
    let pbar = expected_probabilities(field, cfg);
    let drivable = group_probability(pbar.view(), taxonomy)?;
    let ambiguity = group_entropy(drivable.view());
    DrivableScoreMap::from_planes(field.spec, drivable, ambiguity, tau_drive)
}

/// Uncertainty-blind baseline map: class probabilities are the plain
/// softmax of the means (sigma ignored entirely) and the ambiguity plane is
/// forced to zero, so the safety score degenerates to the raw drivable
/// probability.
pub fn build_score_map_no_uncertainty(
    field: &LogitField,
    taxonomy: &ClassTaxonomy,
    tau_drive: f64,
) -> Result<DrivableScoreMap> {
    let (h, w, k) = field.mu().dim();
    let mut drivable = Array2::zeros((h, w));
    let mut probs = vec![0.0; k];
    let mu = field.mu.as_slice().unwrap();
    for i in 0..h {
        for j in 0..w {
            let base = (i * w + j) * k;
            softmax_into(&mu[base..base + k], &mut probs);
            let mut p = 0.0;
            for &c in &taxonomy.drivable {
                p += probs[c];
            }
            drivable[[i, j]] = p.clamp(0.0, 1.0);
        }
    }
    if k != taxonomy.num_classes {
        return Err(Error::config(format!(
            "taxonomy has {} classes but field has {k}",
            taxonomy.num_classes
        )));
    }
    let ambiguity = Array2::zeros((h, w));
    DrivableScoreMap::from_planes(field.spec, drivable, ambiguity, tau_drive)
}

/// Perception loss value plus analytic gradients through the
/// reparameterization, reported against mu and log-sigma.
#[derive(Debug, Clone)]
pub struct PerceptionLoss {
    pub value: f64,
    pub grad_mu: Array3<f64>,
    pub grad_log_sigma: Array3<f64>,
}

/// Negative log of the Monte-Carlo-averaged target-class probability, mean
/// over pixels (natural log). The gradient reuses the exact noise draws of
/// the forward pass, so it is the true derivative of the computed value.
pub fn perception_loss(
    field: &LogitField,
    target: &SemanticGrid,
    cfg: &McConfig,
) -> Result<PerceptionLoss> {
    let (h, w, k) = field.mu().dim();
    if target.spec().height != h || target.spec().width != w {
        return Err(Error::data("target grid shape does not match logit field"));
    }
    if target.num_classes() != k {
        return Err(Error::data(format!(
            "target has {} classes but field has {k}",
            target.num_classes()
        )));
    }
    let t = cfg.num_samples;
    let mu = field.mu.as_slice().unwrap();
    let sigma = field.sigma.as_slice().unwrap();
    let labels = target.labels();

    let mut loss = vec![0.0; h * w];
    let mut grad_mu = vec![0.0; h * w * k];
    let mut grad_ls = vec![0.0; h * w * k];

    type RowSlices<'a> = (usize, &'a mut [f64], &'a mut [f64], &'a mut [f64]);
    let rows: Vec<RowSlices<'_>> = {
        let mut v = Vec::with_capacity(h);
        let mut loss_rest = loss.as_mut_slice();
        let mut gm_rest = grad_mu.as_mut_slice();
        let mut gl_rest = grad_ls.as_mut_slice();
        for i in 0..h {
            let (l, lr) = loss_rest.split_at_mut(w);
            let (gm, gmr) = gm_rest.split_at_mut(w * k);
            let (gl, glr) = gl_rest.split_at_mut(w * k);
            loss_rest = lr;
            gm_rest = gmr;
            gl_rest = glr;
            v.push((i, l, gm, gl));
        }
        v
    };

    let scale = 1.0 / (h * w) as f64;
    rows.into_par_iter().for_each(|(i, loss_row, gm_row, gl_row)| {
        let mut z = vec![0.0; k];
        let mut s = vec![0.0; k];
        for j in 0..w {
            let pix = i * w + j;
            let base = pix * k;
            let y = labels[pix] as usize;
            let mu_px = &mu[base..base + k];
            let sigma_px = &sigma[base..base + k];

            // Forward: averaged target-class probability.
            let mut avg = 0.0;
            for ti in 0..t {
                for c in 0..k {
                    let eps = if sigma_px[c] == 0.0 {
                        0.0
                    } else {
                        standard_normal(cfg.seed, Stream::McSample, pix as u64, c as u64, ti as u64)
                    };
                    z[c] = mu_px[c] + sigma_px[c] * eps;
                }
                softmax_into(&z, &mut s);
                avg += s[y];
            }
            avg /= t as f64;
            loss_row[j] = -avg.max(1e-300).ln();

            // Backward through the same draws:
            // d loss / d z_t[c] = -(s_t[y] * (1[c=y] - s_t[c])) / (avg * T).
            let coef = -scale / (avg.max(1e-300) * t as f64);
            for ti in 0..t {
                for c in 0..k {
                    let eps = if sigma_px[c] == 0.0 {
                        0.0
                    } else {
                        standard_normal(cfg.seed, Stream::McSample, pix as u64, c as u64, ti as u64)
                    };
                    z[c] = mu_px[c] + sigma_px[c] * eps;
                }
                softmax_into(&z, &mut s);
                for c in 0..k {
                    let indicator = if c == y { 1.0 } else { 0.0 };
                    let dz = coef * s[y] * (indicator - s[c]);
                    gm_row[j * k + c] += dz;
                    if sigma_px[c] != 0.0 {
                        let eps = standard_normal(
                            cfg.seed,
                            Stream::McSample,
                            pix as u64,
                            c as u64,
                            ti as u64,
                        );
                        // d/d(log sigma) = d/d(sigma) * sigma.
                        gl_row[j * k + c] += dz * eps * sigma_px[c];
                    }
                }
            }
        }
    });

    let value = loss.iter().sum::<f64>() * scale;
    Ok(PerceptionLoss {
        value,
        grad_mu: Array3::from_shape_vec((h, w, k), grad_mu).unwrap(),
        grad_log_sigma: Array3::from_shape_vec((h, w, k), grad_ls).unwrap(),
    })
}
