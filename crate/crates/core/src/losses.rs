//! Training objective: masked LM cross-entropy plus a weighted segmentation
//! term (soft Dice + pixel cross-entropy), with analytic gradients.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::BinaryMask;

/// Probability clamp.
pub const PROB_EPS: f64 = 1e-7;
/// Dice smoothing constant.
pub const DICE_SMOOTH: f64 = 1.0;
pub const DEFAULT_LAMBDA_SEG: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("prediction is {pw}x{ph} but target is {gw}x{gh}")]
    DimensionMismatch { pw: usize, ph: usize, gw: usize, gh: usize },
    #[error("{0} probabilities for a {1}x{2} mask")]
    LengthMismatch(usize, usize, usize),
    #[error("mask dimensions must be nonzero")]
    ZeroDimension,
    #[error("every position is excluded")]
    AllExcluded,
    #[error("position {0} is outside the sequence")]
    PositionOutOfRange(usize),
    #[error("{0} logit rows but {1} targets")]
    TargetCountMismatch(usize, usize),
    #[error("target {target} at position {position} is outside a vocabulary of {vocab}")]
    TargetOutOfRange {
        position: usize,
        target: usize,
        vocab: usize,
    },
    #[error("loss component {name} is negative or not finite: {value}")]
    InvalidComponent { name: &'static str, value: f64 },
    #[error("no masks to average")]
    NoMasks,
}

/// Soft foreground probabilities, clamped to `[eps, 1 - eps]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProbMaskRepr")]
pub struct ProbMask {
    width: usize,
    height: usize,
    probs: Vec<f64>,
}

#[derive(Deserialize)]
struct ProbMaskRepr {
    width: usize,
    height: usize,
    probs: Vec<f64>,
}

impl TryFrom<ProbMaskRepr> for ProbMask {
    type Error = LossError;

    fn try_from(r: ProbMaskRepr) -> Result<Self, LossError> {
        ProbMask::new(r.width, r.height, r.probs)
    }
}

impl ProbMask {
    pub fn new(width: usize, height: usize, probs: Vec<f64>) -> Result<Self, LossError> {
        if width == 0 || height == 0 {
            return Err(LossError::ZeroDimension);
        }
        if probs.len() != width * height {
            return Err(LossError::LengthMismatch(probs.len(), width, height));
        }
        let probs = probs.into_iter().map(|p| p.clamp(PROB_EPS, 1.0 - PROB_EPS)).collect();
        Ok(Self { width, height, probs })
    }

    pub fn uniform(width: usize, height: usize, p: f64) -> Result<Self, LossError> {
        Self::new(width, height, vec![p; width * height])
    }

    /// Hard mask as probabilities (then clamped).
    pub fn from_mask(mask: &BinaryMask) -> Self {
        let probs = mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Self::new(mask.width(), mask.height(), probs).expect("mask dimensions are valid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    fn check(&self, gt: &BinaryMask) -> Result<(), LossError> {
        if (self.width, self.height) != (gt.width(), gt.height()) {
            return Err(LossError::DimensionMismatch {
                pw: self.width,
                ph: self.height,
                gw: gt.width(),
                gh: gt.height(),
            });
        }
        Ok(())
    }
}

/// A loss value with its gradient with respect to each probability.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// `1 - (2 Σpg + s) / (Σp + Σg + s)`.
pub fn dice_loss(pred: &ProbMask, gt: &BinaryMask) -> Result<LossGrad, LossError> {
    pred.check(gt)?;
    let g: Vec<f64> = gt.bits().iter().map(|&b| f64::from(u8::from(b))).collect();
    let sp: f64 = pred.probs.iter().sum();
    let sg: f64 = g.iter().sum();
    let spg: f64 = pred.probs.iter().zip(&g).map(|(p, g)| p * g).sum();
    let num = 2.0 * spg + DICE_SMOOTH;
    let den = sp + sg + DICE_SMOOTH;
    let grad = g.iter().map(|gi| -(2.0 * gi * den - num) / (den * den)).collect();
    Ok(LossGrad {
        loss: 1.0 - num / den,
        grad,
    })
}

/// Mean binary cross-entropy over pixels.
pub fn pixel_ce(pred: &ProbMask, gt: &BinaryMask) -> Result<LossGrad, LossError> {
    pred.check(gt)?;
    let n = pred.probs.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(pred.probs.len());
    for (&p, &b) in pred.probs.iter().zip(gt.bits()) {
        if b {
            loss -= p.ln();
            grad.push(-1.0 / (p * n));
        } else {
            loss -= (1.0 - p).ln();
            grad.push(1.0 / ((1.0 - p) * n));
        }
    }
    Ok(LossGrad { loss: loss / n, grad })
}

/// Mean token cross-entropy over positions not in `exclude`.
pub fn lm_loss(logits: &[Vec<f64>], targets: &[usize], exclude: &BTreeSet<usize>) -> Result<f64, LossError> {
    if logits.len() != targets.len() {
        return Err(LossError::TargetCountMismatch(logits.len(), targets.len()));
    }
    if let Some(&p) = exclude.iter().find(|&&p| p >= logits.len()) {
        return Err(LossError::PositionOutOfRange(p));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, (row, &t)) in logits.iter().zip(targets).enumerate() {
        if exclude.contains(&i) {
            continue;
        }
        if t >= row.len() {
            return Err(LossError::TargetOutOfRange {
                position: i,
                target: t,
                vocab: row.len(),
            });
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        total += lse - row[t];
        count += 1;
    }
    if count == 0 {
        return Err(LossError::AllExcluded);
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub lm: f64,
    pub dice: f64,
    pub ce: f64,
    pub total: f64,
    pub lambda_seg: f64,
}

/// `lm + lambda_seg * (dice + ce)`; `None` uses the default weight.
pub fn total_loss(lm: f64, dice: f64, ce: f64, lambda_seg: Option<f64>) -> Result<LossBreakdown, LossError> {
    let lambda_seg = lambda_seg.unwrap_or(DEFAULT_LAMBDA_SEG);
    for (name, value) in [("lm", lm), ("dice", dice), ("ce", ce), ("lambda_seg", lambda_seg)] {
        if !(value.is_finite() && value >= 0.0) {
            return Err(LossError::InvalidComponent { name, value });
        }
    }
    Ok(LossBreakdown {
        lm,
        dice,
        ce,
        total: lm + lambda_seg * (dice + ce),
        lambda_seg,
    })
}

/// Dice and CE averaged over the masks of one trace (one per segmentation step).
pub fn segmentation_loss(pairs: &[(ProbMask, BinaryMask)]) -> Result<(f64, f64), LossError> {
    if pairs.is_empty() {
        return Err(LossError::NoMasks);
    }
    let (mut dice, mut ce) = (0.0, 0.0);
    for (p, g) in pairs {
        dice += dice_loss(p, g)?.loss;
        ce += pixel_ce(p, g)?.loss;
    }
    let n = pairs.len() as f64;
    Ok((dice / n, ce / n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, w: usize, h: usize) -> (ProbMask, BinaryMask) {
        let probs = (0..w * h).map(|_| rng.gen_range(0.05..0.95)).collect();
        let gt = BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(0.4)).unwrap();
        (ProbMask::new(w, h, probs).unwrap(), gt)
    }

    /// Largest relative error between analytic and central-difference gradients.
    fn fd_check(
        f: impl Fn(&ProbMask, &BinaryMask) -> Result<LossGrad, LossError>,
        p: &ProbMask,
        g: &BinaryMask,
    ) -> f64 {
        let h = 1e-5;
        let analytic = f(p, g).unwrap().grad;
        let mut worst: f64 = 0.0;
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = p.clone();
            plus.probs[i] += h;
            let mut minus = p.clone();
            minus.probs[i] -= h;
            let numeric = (f(&plus, g).unwrap().loss - f(&minus, g).unwrap().loss) / (2.0 * h);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
        worst
    }

    #[test]
    fn dice_cases() {
        let gt = BinaryMask::from_fn(8, 8, |x, _| x < 4).unwrap();
        assert!(dice_loss(&ProbMask::from_mask(&gt), &gt).unwrap().loss < 1e-5);
        let n = 10_000;
        let full = BinaryMask::filled(100, 100, true).unwrap();
        let half = dice_loss(&ProbMask::uniform(100, 100, 0.5).unwrap(), &full)
            .unwrap()
            .loss;
        let analytic = 1.0 - (n as f64 + 1.0) / (1.5 * n as f64 + 1.0);
        assert!((half - 1.0 / 3.0).abs() < 1e-3);
        assert!((half - analytic).abs() < 1e-12);
        let small = BinaryMask::new(3, 3).unwrap();
        assert!(dice_loss(&ProbMask::uniform(2, 2, 0.5).unwrap(), &small).is_err());
    }

    #[test]
    fn ce_cases() {
        let gt = BinaryMask::from_fn(8, 8, |x, y| x > y).unwrap();
        assert!(pixel_ce(&ProbMask::from_mask(&gt), &gt).unwrap().loss < 1e-6);
        let half = pixel_ce(&ProbMask::uniform(8, 8, 0.5).unwrap(), &gt).unwrap().loss;
        assert!((half - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..10 {
            let (p, g) = random_instance(&mut rng, 16, 16);
            assert!(fd_check(dice_loss, &p, &g) <= 1e-4);
            assert!(fd_check(pixel_ce, &p, &g) <= 1e-4);
        }
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, g) = random_instance(&mut rng, 6, 5);
        let perm: Vec<usize> = (0..30).rev().collect();
        let pp = ProbMask::new(6, 5, perm.iter().map(|&i| p.probs[i]).collect()).unwrap();
        let gp = BinaryMask::from_bits(6, 5, perm.iter().map(|&i| g.bits()[i]).collect()).unwrap();
        assert!((dice_loss(&p, &g).unwrap().loss - dice_loss(&pp, &gp).unwrap().loss).abs() < 1e-12);
        assert!((pixel_ce(&p, &g).unwrap().loss - pixel_ce(&pp, &gp).unwrap().loss).abs() < 1e-12);
    }

    #[test]
    fn lm_cases() {
        let v = 7;
        let uniform = vec![vec![0.3; v]; 4];
        let none = BTreeSet::new();
        assert!((lm_loss(&uniform, &[0, 1, 2, 3], &none).unwrap() - (v as f64).ln()).abs() < 1e-12);

        let logits = vec![vec![1.0, 2.0, 3.0], vec![0.0, 5.0, -1.0], vec![9.0, 9.0, 9.0]];
        let targets = [2, 0, 1];
        let ce1 = {
            let row = &logits[1];
            let lse = row.iter().map(|z: &f64| z.exp()).sum::<f64>().ln();
            lse - row[0]
        };
        let exclude: BTreeSet<usize> = [0, 2].into_iter().collect();
        assert!((lm_loss(&logits, &targets, &exclude).unwrap() - ce1).abs() < 1e-12);
        // excluded rows do not matter
        let mut changed = logits.clone();
        changed[0] = vec![100.0, -100.0, 0.0];
        assert_eq!(
            lm_loss(&changed, &targets, &exclude),
            lm_loss(&logits, &targets, &exclude)
        );
        let all: BTreeSet<usize> = [0, 1, 2].into_iter().collect();
        assert_eq!(lm_loss(&logits, &targets, &all), Err(LossError::AllExcluded));
    }

    #[test]
    fn lm_matches_masked_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let (len, vocab) = (rng.gen_range(2..30), rng.gen_range(2..12));
            let logits: Vec<Vec<f64>> = (0..len)
                .map(|_| (0..vocab).map(|_| rng.gen_range(-4.0..4.0)).collect())
                .collect();
            let targets: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
            let exclude: BTreeSet<usize> = (1..len).filter(|_| rng.gen_bool(0.3)).collect();
            let mut sum = 0.0;
            let mut n = 0.0;
            for i in (0..len).filter(|i| !exclude.contains(i)) {
                let z: f64 = logits[i].iter().map(|v| v.exp()).sum();
                sum += -(logits[i][targets[i]].exp() / z).ln();
                n += 1.0;
            }
            assert!((lm_loss(&logits, &targets, &exclude).unwrap() - sum / n).abs() < 1e-9);
        }
    }

    #[test]
    fn total_weights() {
        let b = total_loss(1.0, 0.2, 0.4, None).unwrap();
        assert!((b.total - 1.3).abs() < 1e-12);
        assert_eq!(b.lambda_seg, 0.5);
        assert_eq!(total_loss(1.0, 0.2, 0.4, Some(0.0)).unwrap().total, 1.0);
        assert!(total_loss(-0.1, 0.2, 0.4, None).is_err());
    }

    #[test]
    fn per_mask_mean() {
        let g = BinaryMask::from_fn(4, 4, |x, _| x < 2).unwrap();
        let p1 = ProbMask::from_mask(&g);
        let p2 = ProbMask::uniform(4, 4, 0.5).unwrap();
        let (d, c) = segmentation_loss(&[(p1.clone(), g.clone()), (p2.clone(), g.clone())]).unwrap();
        let d_want = (dice_loss(&p1, &g).unwrap().loss + dice_loss(&p2, &g).unwrap().loss) / 2.0;
        let c_want = (pixel_ce(&p1, &g).unwrap().loss + pixel_ce(&p2, &g).unwrap().loss) / 2.0;
        assert!((d - d_want).abs() < 1e-15 && (c - c_want).abs() < 1e-15);
        assert_eq!(segmentation_loss(&[]), Err(LossError::NoMasks));
    }
}
