//! Segmentation loss terms and objective aggregation.
//!
//! Focal and dice losses operate on the expected class probabilities; the
//! BEV objective combines them with the perception loss (and a detection
//! term that is accepted for interface fidelity but fixed to zero here).
//! [`LossReport`] carries named raw values, weights, and weighted values so
//! the full breakdown survives aggregation.

use ndarray::{Array3, ArrayView3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::SemanticGrid;

/// Weights of every objective term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub perc: f64,
    pub focal: f64,
    pub dice: f64,
    pub det: f64,
    pub cls: f64,
    pub traj: f64,
    pub rank: f64,
    pub intent: f64,
    pub center: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            perc: 1.0,
            focal: 1.0,
            dice: 1.0,
            det: 1.0,
            cls: 1.0,
            traj: 1.0,
            rank: 1.0,
            intent: 1.0,
            center: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.perc, self.focal, self.dice, self.det, self.cls, self.traj, self.rank,
            self.intent, self.center,
        ];
        if all.iter().any(|l| l.is_nan() || *l < 0.0 || !l.is_finite()) {
            return Err(Error::config("loss weights must be finite and >= 0"));
        }
        Ok(())
    }
}

/// One named term of an objective.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossTerm {
    pub name: String,
    pub raw: f64,
    pub weight: f64,
    pub weighted: f64,
}

impl LossTerm {
    pub fn new(name: &str, raw: f64, weight: f64) -> Self {
        LossTerm {
            name: name.to_string(),
            raw,
            weight,
            weighted: weight * raw,
        }
    }
}

/// Named scalar loss values with their weights and the weighted total.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub total: f64,
    pub terms: Vec<LossTerm>,
}

impl LossReport {
    pub fn from_terms(terms: Vec<LossTerm>) -> Self {
        let total = terms.iter().map(|t| t.weighted).sum();
        LossReport { total, terms }
    }

    pub fn term(&self, name: &str) -> Option<&LossTerm> {
        self.terms.iter().find(|t| t.name == name)
    }

    /// Merge several reports into one, prefixing term names with the part
    /// they came from and summing totals.
    pub fn combined(parts: Vec<(&str, LossReport)>) -> LossReport {
        let mut terms = Vec::new();
        let mut total = 0.0;
        for (prefix, report) in parts {
            total += report.total;
            for t in report.terms {
                terms.push(LossTerm {
                    name: format!("{prefix}.{}", t.name),
                    ..t
                });
            }
        }
        LossReport { total, terms }
    }
}

/// Focal loss with its gradient w.r.t. the probability array.
#[derive(Debug, Clone)]
pub struct FocalLoss {
    pub value: f64,
    pub grad: Array3<f64>,
}

/// Mean over pixels of `-alpha * (1 - p_y)^gamma * ln(p_y)`. With gamma = 0
/// and alpha = 1 this is plain cross-entropy on the expected probabilities.
pub fn focal_loss(
    pbar: ArrayView3<'_, f64>,
    target: &SemanticGrid,
    gamma: f64,
    alpha: f64,
) -> Result<FocalLoss> {
    let (h, w, k) = pbar.dim();
    check_target(h, w, k, target)?;
    if gamma < 0.0 || alpha < 0.0 {
        return Err(Error::config("focal gamma and alpha must be >= 0"));
    }
    let n = (h * w) as f64;
    let mut value = 0.0;
    let mut grad = Array3::zeros((h, w, k));
    for i in 0..h {
        for j in 0..w {
            let y = target.label(i, j) as usize;
            let p = pbar[[i, j, y]].clamp(1e-12, 1.0);
            let q = 1.0 - p;
            let focus = q.powf(gamma);
            value += -alpha * focus * p.ln();
            // d/dp of -a (1-p)^g ln p = a g (1-p)^(g-1) ln p - a (1-p)^g / p
            let dfocus = if gamma == 0.0 { 0.0 } else { gamma * q.powf(gamma - 1.0) };
            grad[[i, j, y]] = (alpha * dfocus * p.ln() - alpha * focus / p) / n;
        }
    }
    Ok(FocalLoss {
        value: value / n,
        grad,
    })
}

/// Dice loss with its gradient w.r.t. the probability array.
#[derive(Debug, Clone)]
pub struct DiceLoss {
    pub value: f64,
    pub grad: Array3<f64>,
}

/// `1 - mean_c (2 * sum(p_c * [y = c]) + eps) / (sum(p_c) + sum([y = c]) + eps)`.
pub fn dice_loss(pbar: ArrayView3<'_, f64>, target: &SemanticGrid, eps: f64) -> Result<DiceLoss> {
    let (h, w, k) = pbar.dim();
    check_target(h, w, k, target)?;
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::config("dice smoothing must be positive"));
    }
    let mut inter = vec![0.0; k];
    let mut pred_sum = vec![0.0; k];
    let mut truth_sum = vec![0.0; k];
    for i in 0..h {
        for j in 0..w {
            let y = target.label(i, j) as usize;
            truth_sum[y] += 1.0;
            for c in 0..k {
                pred_sum[c] += pbar[[i, j, c]];
                if c == y {
                    inter[c] += pbar[[i, j, c]];
                }
            }
        }
    }
    let mut value = 0.0;
    let mut numer = vec![0.0; k];
    let mut denom = vec![0.0; k];
    for c in 0..k {
        numer[c] = 2.0 * inter[c] + eps;
        denom[c] = pred_sum[c] + truth_sum[c] + eps;
        value += numer[c] / denom[c];
    }
    let value = 1.0 - value / k as f64;
    let mut grad = Array3::zeros((h, w, k));
    for i in 0..h {
        for j in 0..w {
            let y = target.label(i, j) as usize;
            for c in 0..k {
                let indicator = if c == y { 1.0 } else { 0.0 };
                // d(dice_c)/dp = (2 * 1[y=c] * denom - numer) / denom^2
                let d = (2.0 * indicator * denom[c] - numer[c]) / (denom[c] * denom[c]);
                grad[[i, j, c]] = -d / k as f64;
            }
        }
    }
    Ok(DiceLoss { value, grad })
}

fn check_target(h: usize, w: usize, k: usize, target: &SemanticGrid) -> Result<()> {
    if target.spec().height != h || target.spec().width != w {
        return Err(Error::data("target grid shape does not match probabilities"));
    }
    if target.num_classes() != k {
        return Err(Error::data(format!(
            "target has {} classes but probabilities have {k}",
            target.num_classes()
        )));
    }
    Ok(())
}

/// BEV objective: perception, focal, and dice terms plus the detection term
/// accepted in the weights but fixed to zero (detection is out of scope).
pub fn bev_loss(perc: f64, focal: f64, dice: f64, weights: &LossWeights) -> Result<LossReport> {
    weights.validate()?;
    Ok(LossReport::from_terms(vec![
        LossTerm::new("perc", perc, weights.perc),
        LossTerm::new("focal", focal, weights.focal),
        LossTerm::new("dice", dice, weights.dice),
        LossTerm::new("det", 0.0, weights.det),
    ]))
}

/// Overall objective: the sum of the BEV, lane, and planning aggregates
/// with the full component breakdown retained.
pub fn total_loss(bev: LossReport, lane: LossReport, planning: LossReport) -> LossReport {
    LossReport::combined(vec![("bev", bev), ("lane", lane), ("planning", planning)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use ndarray::Array3;

    fn uniform_target(h: usize, w: usize, k: usize, label: u8) -> SemanticGrid {
        let spec = GridSpec::new(h, w, 1.0, (0.0, 0.0)).unwrap();
        SemanticGrid::new(spec, k, vec![label; h * w]).unwrap()
    }

    fn random_probs(h: usize, w: usize, k: usize, seed: u64) -> Array3<f64> {
        let mut pbar = Array3::zeros((h, w, k));
        for i in 0..h {
            for j in 0..w {
                let mut row: Vec<f64> = (0..k)
                    .map(|c| {
                        crate::noise::standard_normal(
                            seed,
                            crate::noise::Stream::MuNoise,
                            (i * w + j) as u64,
                            c as u64,
                            0,
                        )
                    })
                    .collect();
                let sm = crate::uncertainty::softmax(&row);
                row.copy_from_slice(&sm);
                for c in 0..k {
                    pbar[[i, j, c]] = row[c];
                }
            }
        }
        pbar
    }

    #[test]
    fn focal_reduces_to_cross_entropy() {
        let pbar = random_probs(3, 3, 4, 5);
        let target = uniform_target(3, 3, 4, 2);
        let focal = focal_loss(pbar.view(), &target, 0.0, 1.0).unwrap();
        let mut ce = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                ce += -pbar[[i, j, 2]].ln();
            }
        }
        ce /= 9.0;
        assert!((focal.value - ce).abs() < 1e-12);
    }

    #[test]
    fn focal_perfect_prediction_is_zero() {
        let mut pbar = Array3::zeros((2, 2, 3));
        for i in 0..2 {
            for j in 0..2 {
                pbar[[i, j, 1]] = 1.0;
            }
        }
        let target = uniform_target(2, 2, 3, 1);
        let out = focal_loss(pbar.view(), &target, 2.0, 0.25).unwrap();
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn dice_perfect_one_hot_is_near_zero() {
        let h = 16;
        let mut pbar = Array3::zeros((h, h, 2));
        let spec = GridSpec::new(h, h, 1.0, (0.0, 0.0)).unwrap();
        let mut labels = vec![0u8; h * h];
        for (idx, l) in labels.iter_mut().enumerate() {
            *l = (idx % 2) as u8;
        }
        let target = SemanticGrid::new(spec, 2, labels.clone()).unwrap();
        for i in 0..h {
            for j in 0..h {
                pbar[[i, j, labels[i * h + j] as usize]] = 1.0;
            }
        }
        let out = dice_loss(pbar.view(), &target, 1.0).unwrap();
        assert!(out.value.abs() < 1e-2, "dice = {}", out.value);
    }

    #[test]
    fn dice_absent_class_prediction_approaches_one() {
        let h = 16;
        let mut pbar = Array3::zeros((h, h, 2));
        for i in 0..h {
            for j in 0..h {
                pbar[[i, j, 1]] = 1.0; // predict only the absent class
            }
        }
        let target = uniform_target(h, h, 2, 0);
        let out = dice_loss(pbar.view(), &target, 1.0).unwrap();
        assert!(out.value > 0.98, "dice = {}", out.value);
    }

    #[test]
    fn dice_matches_direct_evaluation() {
        let pbar = random_probs(4, 4, 3, 17);
        let spec = GridSpec::new(4, 4, 1.0, (0.0, 0.0)).unwrap();
        let labels: Vec<u8> = (0..16).map(|i| (i % 3) as u8).collect();
        let target = SemanticGrid::new(spec, 3, labels.clone()).unwrap();
        let eps = 1.0;
        let out = dice_loss(pbar.view(), &target, eps).unwrap();

        // Scripted re-evaluation of the formula.
        let mut mean = 0.0;
        for c in 0..3 {
            let mut inter = 0.0;
            let mut ps = 0.0;
            let mut ts = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    let p = pbar[[i, j, c]];
                    ps += p;
                    if labels[i * 4 + j] as usize == c {
                        inter += p;
                        ts += 1.0;
                    }
                }
            }
            mean += (2.0 * inter + eps) / (ps + ts + eps);
        }
        let expect = 1.0 - mean / 3.0;
        assert!((out.value - expect).abs() < 1e-12);
    }

    #[test]
    fn bev_loss_stubs_detection() {
        let w = LossWeights {
            det: 123.0,
            ..LossWeights::default()
        };
        let r = bev_loss(0.5, 0.25, 0.125, &w).unwrap();
        assert_eq!(r.term("det").unwrap().weighted, 0.0);
        assert!((r.total - (0.5 + 0.25 + 0.125)).abs() < 1e-12);

        let zero = LossWeights {
            perc: 0.0,
            focal: 0.0,
            dice: 0.0,
            det: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(bev_loss(0.5, 0.25, 0.125, &zero).unwrap().total, 0.0);
    }

    #[test]
    fn totals_are_additive() {
        let w = LossWeights::default();
        let bev = bev_loss(0.5, 0.25, 0.125, &w).unwrap();
        let lane = crate::lane::lane_loss(0.1, 0.2, 1.0, 1.0).unwrap();
        let planning = LossReport::from_terms(vec![LossTerm::new("cls", 0.3, 1.0)]);
        let sum = bev.total + lane.total + planning.total;
        let total = total_loss(bev, lane, planning);
        assert!((total.total - sum).abs() < 1e-12);
        assert!(total.term("bev.perc").is_some());
        assert!(total.term("lane.center").is_some());
        assert!(total.term("planning.cls").is_some());
    }

    #[test]
    fn linear_in_weights() {
        let base = bev_loss(0.5, 0.25, 0.125, &LossWeights::default()).unwrap();
        let scaled = bev_loss(
            0.5,
            0.25,
            0.125,
            &LossWeights {
                perc: 2.0,
                ..LossWeights::default()
            },
        )
        .unwrap();
        let delta = scaled.total - base.total;
        assert!((delta - 0.5).abs() < 1e-12);
    }
}
