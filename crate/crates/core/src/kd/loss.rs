//! Cross-entropy, temperature-softened distillation and feature-matching
//! losses, each returning its exact gradient. All losses are batch means.

use serde::{Deserialize, Serialize};

use super::net::Projector;
use super::tensor::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LossSpec<T> {
    HardOnly,
    Kd { temperature: T },
    Simkd,
}

impl<T: Scalar> LossSpec<T> {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::Kd { temperature } if !(*temperature > T::zero() && temperature.is_finite()) => Err(
                Error::Invariant(format!("temperature must be positive (got {temperature})")),
            ),
            _ => Ok(()),
        }
    }
}

/// Row-wise `softmax(logits / T)`, stabilised by subtracting the row max.
pub fn softened_probs<T: Scalar>(logits: &Matrix<T>, temperature: T) -> Matrix<T> {
    let mut out = logits.clone();
    for i in 0..out.rows() {
        softmax_in_place(out.row_mut(i), temperature);
    }
    out
}

fn softmax_in_place<T: Scalar>(row: &mut [T], temperature: T) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = ((*v - max) / temperature).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Row-wise `log softmax(logits / T)`.
fn log_softened<T: Scalar>(row: &[T], temperature: T) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let scaled: Vec<T> = row.iter().map(|&v| (v - max) / temperature).collect();
    let lse = scaled.iter().map(|&v| v.exp()).sum::<T>().ln();
    scaled.into_iter().map(|v| v - lse).collect()
}

/// `KL(p || q) = sum p ln(p / q)`, with `0 ln 0 = 0`.
pub fn kl_divergence<T: Scalar>(p: &[T], q: &[T]) -> T {
    p.iter()
        .zip(q)
        .filter(|(&pi, _)| pi > T::zero())
        .map(|(&pi, &qi)| pi * (pi.ln() - qi.ln()))
        .sum()
}

fn check_labels<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Result<()> {
    if logits.rows() != labels.len() || logits.rows() == 0 {
        return Err(Error::Contract(format!(
            "{} logit rows for {} labels",
            logits.rows(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l >= logits.cols()) {
        return Err(Error::Contract("label exceeds the number of classes".into()));
    }
    Ok(())
}

/// Mean cross-entropy of `softmax(logits)` against hard labels.
pub fn cross_entropy<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Result<(T, Matrix<T>)> {
    check_labels(logits, labels)?;
    let n = T::from_usize_lossy(labels.len());
    let mut grad = softened_probs(logits, T::one());
    let mut loss = T::zero();
    for (i, &y) in labels.iter().enumerate() {
        loss -= log_softened(logits.row(i), T::one())[y];
        grad[(i, y)] -= T::one();
    }
    grad.scale(T::one() / n);
    Ok((loss / n, grad))
}

/// `CE(p_s, y) + T^2 KL(q_t || q_s)` with `q = softmax(z / T)`.
///
/// The divergence runs from the softened teacher to the softened student,
/// the usual distillation direction. The gradient of the soft term with
/// respect to the student logits is `T (q_s - q_t)`.
pub fn kd_loss<T: Scalar>(
    student_logits: &Matrix<T>,
    teacher_logits: &Matrix<T>,
    labels: &[usize],
    temperature: T,
) -> Result<(T, Matrix<T>)> {
    if student_logits.shape() != teacher_logits.shape() {
        return Err(Error::Contract("student and teacher logits differ in shape".into()));
    }
    LossSpec::Kd { temperature }.validate()?;
    let (hard, mut grad) = cross_entropy(student_logits, labels)?;
    let n = T::from_usize_lossy(labels.len());
    let mut soft = T::zero();
    for i in 0..student_logits.rows() {
        let ls = log_softened(student_logits.row(i), temperature);
        let lt = log_softened(teacher_logits.row(i), temperature);
        for j in 0..ls.len() {
            let (qs, qt) = (ls[j].exp(), lt[j].exp());
            if qt > T::zero() {
                soft += qt * (lt[j] - ls[j]);
            }
            grad[(i, j)] += temperature * (qs - qt) / n;
        }
    }
    Ok((hard + temperature * temperature * soft / n, grad))
}

/// Feature-matching loss and its gradients.
#[derive(Debug, Clone)]
pub struct SimKdOutput<T> {
    pub loss: T,
    pub d_student_features: Matrix<T>,
    pub d_projector: Matrix<T>,
}

/// Batch mean of `||f_t - P f_s||^2`.
pub fn simkd_loss<T: Scalar>(
    teacher_features: &Matrix<T>,
    student_features: &Matrix<T>,
    proj: &Projector<T>,
) -> Result<SimKdOutput<T>> {
    let mut resid = proj.apply(student_features)?;
    if resid.shape() != teacher_features.shape() || resid.rows() == 0 {
        return Err(Error::Contract(format!(
            "projected student features {:?} vs teacher features {:?}",
            resid.shape(),
            teacher_features.shape()
        )));
    }
    resid.axpy(-T::one(), teacher_features)?;
    let n = T::from_usize_lossy(resid.rows());
    let loss = resid.sum_sq() / n;
    resid.scale(T::lit(2.0) / n);
    Ok(SimKdOutput {
        loss,
        d_student_features: resid.matmul_t(&proj.w)?,
        d_projector: student_features.t_matmul(&resid)?,
    })
}
