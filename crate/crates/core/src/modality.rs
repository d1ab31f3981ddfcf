//! Text-guided optical/SAR relevance and per-token modality fusion.
//!
//! For each text token the scaled dot-product logits over visual tokens are
//! softmax-normalised along the visual axis; averaging these columns over
//! the text tokens gives a relevance distribution `beta` over visual tokens
//! that sums to 1. A selected token takes its optical feature only when its
//! optical relevance is strictly higher, otherwise SAR.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{FeatureSequence, TokenFeatures, TokenSelection};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModalityError {
    #[error("visual dim {visual} does not match text dim {text}")]
    DimMismatch { visual: usize, text: usize },
    #[error("text embeddings must have at least one row of a common dimension >= 1")]
    InvalidText,
    #[error("relevance fields cover {optical} and {sar} tokens")]
    TokenCountMismatch { optical: usize, sar: usize },
    #[error("token {index} outside a field of {count} tokens")]
    IndexOutOfRange { index: usize, count: usize },
    #[error("assignment does not match the selection it is fused with")]
    AssignmentMismatch,
    #[error("optical features are {opt_n}x{opt_d}, SAR features are {sar_n}x{sar_d}")]
    ShapeMismatch {
        opt_n: usize,
        opt_d: usize,
        sar_n: usize,
        sar_d: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Optical,
    Sar,
}

/// Question token embeddings, `L x D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbeddings {
    rows: Vec<Vec<f64>>,
}

impl TextEmbeddings {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, ModalityError> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(ModalityError::InvalidText);
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceField {
    pub modality: Modality,
    pub beta: Vec<f64>,
}

/// `beta_j = mean_l softmax_j(<v_j, q_l> / sqrt(D))`.
pub fn relevance_scores(
    v: &TokenFeatures,
    q: &TextEmbeddings,
    modality: Modality,
) -> Result<RelevanceField, ModalityError> {
    if v.dim() != q.dim() {
        return Err(ModalityError::DimMismatch {
            visual: v.dim(),
            text: q.dim(),
        });
    }
    let scale = (v.dim() as f64).sqrt();
    let logits: Vec<Vec<f64>> = v
        .rows()
        .iter()
        .map(|vj| q.rows().iter().map(|ql| dot(vj, ql) / scale).collect())
        .collect();
    Ok(relevance_from_logits(&logits, modality))
}

/// Relevance from precomputed `N x L` logits.
pub fn relevance_from_logits(logits: &[Vec<f64>], modality: Modality) -> RelevanceField {
    let n = logits.len();
    let l = logits.first().map_or(0, Vec::len);
    let mut beta = vec![0.0; n];
    if n == 0 || l == 0 {
        return RelevanceField { modality, beta };
    }
    let mut column = vec![0.0; n];
    for ell in 0..l {
        let max = logits.iter().map(|row| row[ell]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (slot, row) in column.iter_mut().zip(logits) {
            *slot = (row[ell] - max).exp();
            total += *slot;
        }
        for (b, c) in beta.iter_mut().zip(&column) {
            *b += c / total;
        }
    }
    for b in &mut beta {
        *b /= l as f64;
    }
    RelevanceField { modality, beta }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-token modality choice over one selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModalityAssignment {
    pub indices: Vec<usize>,
    pub choice: Vec<Modality>,
}

impl ModalityAssignment {
    pub fn uniform(sel: &TokenSelection, modality: Modality) -> Self {
        Self {
            indices: sel.indices().to_vec(),
            choice: vec![modality; sel.len()],
        }
    }
}

pub fn select_modality(
    beta_opt: &RelevanceField,
    beta_sar: &RelevanceField,
    sel: &TokenSelection,
) -> Result<ModalityAssignment, ModalityError> {
    if beta_opt.beta.len() != beta_sar.beta.len() {
        return Err(ModalityError::TokenCountMismatch {
            optical: beta_opt.beta.len(),
            sar: beta_sar.beta.len(),
        });
    }
    let count = beta_opt.beta.len();
    let choice = sel
        .indices()
        .iter()
        .map(|&j| {
            if j >= count {
                return Err(ModalityError::IndexOutOfRange { index: j, count });
            }
            Ok(if beta_opt.beta[j] > beta_sar.beta[j] {
                Modality::Optical
            } else {
                Modality::Sar
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(ModalityAssignment {
        indices: sel.indices().to_vec(),
        choice,
    })
}

pub fn fuse_features(
    assign: &ModalityAssignment,
    v_opt: &TokenFeatures,
    v_sar: &TokenFeatures,
    sel: &TokenSelection,
) -> Result<FeatureSequence, ModalityError> {
    if v_opt.count() != v_sar.count() || v_opt.dim() != v_sar.dim() {
        return Err(ModalityError::ShapeMismatch {
            opt_n: v_opt.count(),
            opt_d: v_opt.dim(),
            sar_n: v_sar.count(),
            sar_d: v_sar.dim(),
        });
    }
    if assign.indices != sel.indices() || assign.choice.len() != sel.len() {
        return Err(ModalityError::AssignmentMismatch);
    }
    let rows = sel
        .indices()
        .iter()
        .zip(&assign.choice)
        .map(|(&j, m)| {
            let source = match m {
                Modality::Optical => v_opt,
                Modality::Sar => v_sar,
            };
            if j >= source.count() {
                return Err(ModalityError::IndexOutOfRange {
                    index: j,
                    count: source.count(),
                });
            }
            Ok(source.row(j).to_vec())
        })
        .collect::<Result<_, _>>()?;
    Ok(FeatureSequence { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::extract_features;

    fn features(rows: &[&[f64]]) -> TokenFeatures {
        TokenFeatures::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn single_text_token_is_a_softmax() {
        let v = features(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let q = TextEmbeddings::new(vec![vec![0.3, -0.7]]).unwrap();
        let f = relevance_scores(&v, &q, Modality::Optical).unwrap();
        assert!((f.beta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let s = 2f64.sqrt();
        let e: Vec<f64> = [0.3 / s, -0.7 / s, -0.4 / s].iter().map(|x: &f64| x.exp()).collect();
        let z: f64 = e.iter().sum();
        for (b, ei) in f.beta.iter().zip(&e) {
            assert!((b - ei / z).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_logits_are_uniform() {
        let v = features(&[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]]);
        let q = TextEmbeddings::new(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let f = relevance_scores(&v, &q, Modality::Sar).unwrap();
        assert!(f.beta.iter().all(|b| (b - 0.25).abs() < 1e-15));
    }

    #[test]
    fn dimension_mismatch() {
        let v = features(&[&[0.0, 0.0]]);
        let q = TextEmbeddings::new(vec![vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(
            relevance_scores(&v, &q, Modality::Optical).unwrap_err(),
            ModalityError::DimMismatch { visual: 2, text: 3 }
        );
    }

    #[test]
    fn shifting_one_column_changes_nothing() {
        let logits = vec![vec![0.1, 2.0], vec![-1.0, 0.5], vec![0.7, 0.7]];
        let base = relevance_from_logits(&logits, Modality::Optical);
        let shifted: Vec<Vec<f64>> = logits.iter().map(|r| vec![r[0] + 37.5, r[1]]).collect();
        let moved = relevance_from_logits(&shifted, Modality::Optical);
        for (a, b) in base.beta.iter().zip(&moved.beta) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ties_go_to_sar() {
        let sel = TokenSelection::new(vec![0, 2]).unwrap();
        let a = RelevanceField {
            modality: Modality::Optical,
            beta: vec![0.2, 0.3, 0.5],
        };
        let b = RelevanceField {
            modality: Modality::Sar,
            beta: vec![0.2, 0.3, 0.5],
        };
        let assign = select_modality(&a, &b, &sel).unwrap();
        assert_eq!(assign.choice, vec![Modality::Sar, Modality::Sar]);

        let dominant = RelevanceField {
            modality: Modality::Optical,
            beta: vec![0.3, 0.4, 0.6],
        };
        let assign = select_modality(&dominant, &b, &sel).unwrap();
        assert_eq!(assign.choice, vec![Modality::Optical, Modality::Optical]);

        let short = RelevanceField {
            modality: Modality::Sar,
            beta: vec![1.0],
        };
        assert!(matches!(
            select_modality(&a, &short, &sel),
            Err(ModalityError::TokenCountMismatch { .. })
        ));
    }

    #[test]
    fn fusion_draws_from_assigned_modality() {
        let opt = features(&[&[1.0], &[2.0], &[3.0]]);
        let sar = features(&[&[-1.0], &[-2.0], &[-3.0]]);
        let sel = TokenSelection::new(vec![0, 1, 2]).unwrap();

        let all_opt = ModalityAssignment::uniform(&sel, Modality::Optical);
        assert_eq!(
            fuse_features(&all_opt, &opt, &sar, &sel).unwrap(),
            extract_features(&opt, &sel).unwrap()
        );
        let all_sar = ModalityAssignment::uniform(&sel, Modality::Sar);
        assert_eq!(
            fuse_features(&all_sar, &opt, &sar, &sel).unwrap(),
            extract_features(&sar, &sel).unwrap()
        );

        let mixed = ModalityAssignment {
            indices: vec![0, 1, 2],
            choice: vec![Modality::Sar, Modality::Optical, Modality::Sar],
        };
        let fused = fuse_features(&mixed, &opt, &sar, &sel).unwrap();
        assert_eq!(fused.rows, vec![vec![-1.0], vec![2.0], vec![-3.0]]);

        let wide = features(&[&[1.0, 0.0], &[2.0, 0.0], &[3.0, 0.0]]);
        assert!(matches!(
            fuse_features(&mixed, &wide, &sar, &sel),
            Err(ModalityError::ShapeMismatch { .. })
        ));
    }
}
