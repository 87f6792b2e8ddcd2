//! Alignment, translation and total losses.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::tensor::{log_softmax, softmax_in_place, Matrix};
use crate::Error;

/// Added to both row norms in the cosine loss so zero rows stay finite.
pub const COSINE_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AlignLossKind {
    /// Mean over positions of `1 - cos(teacher_row, student_row)`.
    #[default]
    Cosine,
    /// `1 - cos` of the two matrices flattened into single vectors.
    CosineFlat,
    Mse,
    CrossEntropy,
}

impl AlignLossKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cosine => "cosine",
            Self::CosineFlat => "cosine_flat",
            Self::Mse => "mse",
            Self::CrossEntropy => "cross_entropy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub align: f64,
    pub trans: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(align: f64, trans: f64, alpha: f64) -> Self {
        Self { align, trans, total: total_loss(align, trans, alpha) }
    }
}

/// `alpha * align + trans`.
#[inline]
pub fn total_loss(align: f64, trans: f64, alpha: f64) -> f64 {
    alpha * align + trans
}

fn check_shapes(teacher: &Matrix, student: &Matrix) -> Result<(), Error> {
    if teacher.shape() != student.shape() {
        return Err(Error::ShapeMismatch {
            what: "alignment loss operands",
            expected: teacher.shape(),
            found: student.shape(),
        });
    }
    Ok(())
}

pub fn alignment_loss(teacher: &Matrix, student: &Matrix, kind: AlignLossKind) -> Result<f64, Error> {
    alignment_loss_with_grad(teacher, student, kind).map(|(l, _)| l)
}

/// Loss value and its gradient with respect to `student`. The teacher is
/// treated as a constant target.
pub fn alignment_loss_with_grad(
    teacher: &Matrix,
    student: &Matrix,
    kind: AlignLossKind,
) -> Result<(f64, Matrix), Error> {
    check_shapes(teacher, student)?;
    let (rows, cols) = student.shape();
    let mut grad = Matrix::zeros(rows, cols);
    let loss = match kind {
        AlignLossKind::Cosine => {
            let mut total = 0.0;
            for r in 0..rows {
                let (cos, g) = cosine_with_grad(teacher.row(r), student.row(r));
                total += 1.0 - cos;
                for (o, gv) in grad.row_mut(r).iter_mut().zip(g) {
                    *o = -gv / rows as f64;
                }
            }
            total / rows as f64
        }
        AlignLossKind::CosineFlat => {
            let (cos, g) = cosine_with_grad(teacher.as_slice(), student.as_slice());
            for (o, gv) in grad.as_mut_slice().iter_mut().zip(g) {
                *o = -gv;
            }
            1.0 - cos
        }
        AlignLossKind::Mse => {
            let n = (rows * cols) as f64;
            let mut total = 0.0;
            for ((o, s), t) in grad.as_mut_slice().iter_mut().zip(student.as_slice()).zip(teacher.as_slice()) {
                let d = s - t;
                total += d * d;
                *o = 2.0 * d / n;
            }
            total / n
        }
        AlignLossKind::CrossEntropy => {
            let mut total = 0.0;
            for r in 0..rows {
                let mut target = teacher.row(r).to_vec();
                softmax_in_place(&mut target);
                let logp = log_softmax(student.row(r));
                let mut ce = 0.0;
                for (t, lp) in target.iter().zip(&logp) {
                    ce -= t * lp;
                }
                total += ce;
                for ((o, t), lp) in grad.row_mut(r).iter_mut().zip(&target).zip(&logp) {
                    *o = (libm::exp(*lp) - t) / rows as f64;
                }
            }
            total / rows as f64
        }
    };
    Ok((loss, grad))
}

/// Cosine similarity with [`COSINE_EPS`] added to both norms, and its
/// gradient with respect to `b`.
fn cosine_with_grad(a: &[f64], b: &[f64]) -> (f64, Vec<f64>) {
    let na = libm::sqrt(a.iter().map(|v| v * v).sum());
    let nb = libm::sqrt(b.iter().map(|v| v * v).sum());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let da = na + COSINE_EPS;
    let db = nb + COSINE_EPS;
    let cos = dot / (da * db);
    let grad = if nb > 0.0 {
        a.iter().zip(b).map(|(x, y)| x / (da * db) - cos * y / (nb * db)).collect()
    } else {
        a.iter().map(|x| x / (da * db)).collect()
    };
    (cos, grad)
}

/// Mean per-row cosine similarity (the quantity tracked during training).
pub fn mean_row_cosine(teacher: &Matrix, student: &Matrix) -> Result<f64, Error> {
    Ok(1.0 - alignment_loss(teacher, student, AlignLossKind::Cosine)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TransReduction {
    /// Mean negative log-likelihood per target token.
    #[default]
    TokenMean,
    /// Summed negative log-likelihood over the sequence.
    Sum,
}

/// Negative log-likelihood of `targets` under per-position probability
/// vectors. Positions whose target equals `pad` are skipped.
pub fn translation_loss(
    distributions: &[Vec<f64>],
    targets: &[u32],
    pad: Option<u32>,
    reduction: TransReduction,
) -> Result<f64, Error> {
    if distributions.len() != targets.len() {
        return Err(Error::LengthMismatch { expected: targets.len(), found: distributions.len() });
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (dist, &t) in distributions.iter().zip(targets) {
        if Some(t) == pad {
            continue;
        }
        let p = *dist.get(t as usize).ok_or(Error::TokenOutOfRange(t))?;
        total -= libm::log(p);
        count += 1;
    }
    Ok(match reduction {
        TransReduction::Sum => total,
        TransReduction::TokenMean if count == 0 => 0.0,
        TransReduction::TokenMean => total / count as f64,
    })
}
