//! Feedforward tanh encoder followed by a linear classifier, with exact
//! reverse-mode gradients.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Affine layer `y = x W + b`, with `W` stored as `inputs x outputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense<T> {
    pub w: Matrix<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Matrix::zeros(inputs, outputs),
            b: vec![T::zero(); outputs],
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let a = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            w: Matrix::from_fn(inputs, outputs, |_, _| T::lit(rng.random_range(-a..a))),
            b: vec![T::zero(); outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.rows()
    }

    pub fn outputs(&self) -> usize {
        self.w.cols()
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        let mut y = x.matmul(&self.w)?;
        y.add_row(&self.b)?;
        Ok(y)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.w.as_mut_slice().iter_mut().chain(self.b.iter_mut())
    }

    fn params(&self) -> impl Iterator<Item = &T> {
        self.w.as_slice().iter().chain(self.b.iter())
    }
}

/// Layer widths: `inputs -> hidden[0] -> ... -> hidden[last] -> classes`.
/// The last hidden width is the feature dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub inputs: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl Arch {
    pub fn new(inputs: usize, hidden: Vec<usize>, classes: usize) -> Self {
        Self { inputs, hidden, classes }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.hidden.len()) {
            return Err(Error::Contract(format!(
                "encoder needs 1 or 2 hidden layers, got {}",
                self.hidden.len()
            )));
        }
        if self.inputs == 0 || self.classes == 0 || self.hidden.contains(&0) {
            return Err(Error::Contract("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        *self.hidden.last().expect("validated arch has a hidden layer")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetParams<T> {
    pub encoder: Vec<Dense<T>>,
    pub classifier: Dense<T>,
}

/// Post-activation outputs of every encoder layer.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    pub hidden: Vec<Matrix<T>>,
    pub logits: Matrix<T>,
}

impl<T> Forward<T> {
    pub fn features(&self) -> &Matrix<T> {
        self.hidden.last().expect("encoder has at least one layer")
    }
}

impl<T: Scalar> NetParams<T> {
    pub fn init<R: Rng + ?Sized>(arch: &Arch, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut widths = vec![arch.inputs];
        widths.extend(&arch.hidden);
        let encoder = widths.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect();
        let classifier = Dense::glorot(arch.feature_dim(), arch.classes, rng);
        Ok(Self { encoder, classifier })
    }

    pub fn zeros(arch: &Arch) -> Result<Self> {
        arch.validate()?;
        let mut widths = vec![arch.inputs];
        widths.extend(&arch.hidden);
        Ok(Self {
            encoder: widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
            classifier: Dense::zeros(arch.feature_dim(), arch.classes),
        })
    }

    pub fn arch(&self) -> Arch {
        Arch {
            inputs: self.encoder[0].inputs(),
            hidden: self.encoder.iter().map(Dense::outputs).collect(),
            classes: self.classifier.outputs(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.classifier.inputs()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            encoder: self.encoder.iter().map(|l| Dense::zeros(l.inputs(), l.outputs())).collect(),
            classifier: Dense::zeros(self.classifier.inputs(), self.classifier.outputs()),
        }
    }

    pub fn forward(&self, x: &Matrix<T>) -> Result<Forward<T>> {
        let mut hidden: Vec<Matrix<T>> = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let input = hidden.last().unwrap_or(x);
            hidden.push(layer.forward(input)?.map(T::tanh));
        }
        let logits = self.classifier.forward(hidden.last().expect("non-empty encoder"))?;
        Ok(Forward { hidden, logits })
    }

    /// Gradient of a loss given its derivatives with respect to the logits
    /// and, optionally, directly with respect to the features.
    pub fn backward(
        &self,
        x: &Matrix<T>,
        fwd: &Forward<T>,
        d_logits: Option<&Matrix<T>>,
        d_features: Option<&Matrix<T>>,
    ) -> Result<Self> {
        let mut grad = self.zeros_like();
        let feats = fwd.features();
        let mut d_h = Matrix::zeros(feats.rows(), feats.cols());
        if let Some(dl) = d_logits {
            grad.classifier.w = feats.t_matmul(dl)?;
            grad.classifier.b = dl.col_sums();
            d_h = dl.matmul_t(&self.classifier.w)?;
        }
        if let Some(df) = d_features {
            d_h.axpy(T::one(), df)?;
        }
        for k in (0..self.encoder.len()).rev() {
            // tanh' = 1 - tanh^2
            let mut d_z = d_h;
            d_z.zip_apply(&fwd.hidden[k], |g, h| g * (T::one() - h * h))?;
            let input = if k == 0 { x } else { &fwd.hidden[k - 1] };
            grad.encoder[k].w = input.t_matmul(&d_z)?;
            grad.encoder[k].b = d_z.col_sums();
            d_h = if k > 0 {
                d_z.matmul_t(&self.encoder[k].w)?
            } else {
                Matrix::zeros(0, 0)
            };
        }
        Ok(grad)
    }

    fn layers(&self) -> impl Iterator<Item = &Dense<T>> {
        self.encoder.iter().chain(std::iter::once(&self.classifier))
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Dense<T>> {
        self.encoder.iter_mut().chain(std::iter::once(&mut self.classifier))
    }

    pub fn num_params(&self) -> usize {
        self.layers().map(|l| l.w.as_slice().len() + l.b.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<T> {
        self.layers().flat_map(Dense::params).copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Contract(format!(
                "{} values for {} parameters",
                flat.len(),
                self.num_params()
            )));
        }
        let mut it = flat.iter();
        for layer in self.layers_mut() {
            for p in layer.params_mut() {
                *p = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    /// `self += s * other`; shapes must match.
    pub fn axpy(&mut self, s: T, other: &Self) -> Result<()> {
        if self.arch() != other.arch() {
            return Err(Error::Contract("parameter sets have different architectures".into()));
        }
        for (a, b) in self.layers_mut().zip(other.layers()) {
            a.w.axpy(s, &b.w)?;
            for (x, &y) in a.b.iter_mut().zip(&b.b) {
                *x += s * y;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layers().flat_map(Dense::params).all(|x| x.is_finite())
    }
}

/// Bias-free linear map from student features to teacher features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projector<T> {
    /// `student_dim x teacher_dim`.
    pub w: Matrix<T>,
}

impl<T: Scalar> Projector<T> {
    pub fn identity(dim: usize) -> Self {
        Self { w: Matrix::identity(dim) }
    }

    pub fn glorot<R: Rng + ?Sized>(student_dim: usize, teacher_dim: usize, rng: &mut R) -> Self {
        Self {
            w: Dense::glorot(student_dim, teacher_dim, rng).w,
        }
    }

    pub fn student_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn teacher_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn apply(&self, f_s: &Matrix<T>) -> Result<Matrix<T>> {
        f_s.matmul(&self.w)
    }
}
