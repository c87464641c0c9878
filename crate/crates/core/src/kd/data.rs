//! Synthetic Gaussian class blobs and their federated partitions.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use super::tensor::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDataset<T> {
    pub inputs: Matrix<T>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl<T: Scalar> ToyDataset<T> {
    pub fn new(inputs: Matrix<T>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Contract(format!(
                "{} input rows but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Invariant(format!("label {bad} >= num_classes {num_classes}")));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.inputs.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Samples whose label is in `classes`.
    pub fn restrict_classes(&self, classes: &[usize]) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| classes.contains(&self.labels[i])).collect();
        self.subset(&idx)
    }

    pub fn concat(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("nothing to concatenate".into()))?;
        if parts.iter().any(|p| p.num_classes != first.num_classes) {
            return Err(Error::Contract("datasets disagree on num_classes".into()));
        }
        let inputs = Matrix::vstack(&parts.iter().map(|p| &p.inputs).collect::<Vec<_>>())?;
        let labels = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
        Self::new(inputs, labels, first.num_classes)
    }

    /// Flat file: `label,x0,x1,...` per sample.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["label".to_string()];
        header.extend((0..self.features()).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![self.labels[i].to_string()];
            rec.extend(self.inputs.row(i).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Isotropic Gaussian blobs around per-class centers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub classes: usize,
    pub features: usize,
    /// Standard deviation of the center coordinates.
    pub center_scale: f64,
    /// Within-class standard deviation.
    pub spread: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            features: 8,
            center_scale: 1.0,
            spread: 0.6,
        }
    }
}

/// Fixed class centers from which train and test samples are drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct Blobs<T> {
    pub centers: Matrix<T>,
    pub spread: T,
}

impl<T: Scalar> Blobs<T> {
    pub fn new<R: Rng + ?Sized>(spec: &BlobSpec, rng: &mut R) -> Result<Self> {
        if spec.classes < 2 || spec.features == 0 {
            return Err(Error::Invariant("blobs need >= 2 classes and >= 1 feature".into()));
        }
        let centers = gaussian(spec.center_scale)?;
        gaussian(spec.spread)?;
        Ok(Self {
            centers: Matrix::from_fn(spec.classes, spec.features, |_, _| T::lit(centers.sample(rng))),
            spread: T::lit(spec.spread),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.centers.rows()
    }

    /// `per_class` samples of every class, grouped by class.
    pub fn sample<R: Rng + ?Sized>(&self, per_class: usize, rng: &mut R) -> Result<ToyDataset<T>> {
        let noise = gaussian(self.spread.as_f64())?;
        let k = self.num_classes();
        let d = self.centers.cols();
        let mut data = Vec::with_capacity(k * per_class * d);
        let mut labels = Vec::with_capacity(k * per_class);
        for c in 0..k {
            for _ in 0..per_class {
                data.extend(self.centers.row(c).iter().map(|&mu| mu + T::lit(noise.sample(rng))));
                labels.push(c);
            }
        }
        ToyDataset::new(Matrix::from_vec(k * per_class, d, data)?, labels, k)
    }
}

fn gaussian(sd: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sd).map_err(|e| Error::Invariant(format!("standard deviation {sd}: {e}")))
}

/// Shuffles and deals samples round-robin into `parts` partitions.
pub fn iid_split<T: Scalar, R: Rng + ?Sized>(ds: &ToyDataset<T>, parts: usize, rng: &mut R) -> Vec<ToyDataset<T>> {
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(rng);
    (0..parts)
        .map(|p| {
            let mine: Vec<usize> = idx.iter().skip(p).step_by(parts.max(1)).copied().collect();
            ds.subset(&mine)
        })
        .collect()
}

/// One partition per class group; each client only sees its own labels.
pub fn label_split<T: Scalar>(ds: &ToyDataset<T>, groups: &[Vec<usize>]) -> Vec<ToyDataset<T>> {
    groups.iter().map(|g| ds.restrict_classes(g)).collect()
}

/// Consecutive groups of `per_group` classes: `{0,1}, {2,3}, ...`.
pub fn contiguous_groups(classes: usize, per_group: usize) -> Vec<Vec<usize>> {
    (0..classes)
        .collect::<Vec<_>>()
        .chunks(per_group.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn blobs_are_seeded_and_balanced() {
        let spec = BlobSpec::default();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Blobs::<f64>::new(&spec, &mut rng).unwrap().sample(25, &mut rng).unwrap()
        };
        let a = draw(3);
        assert_eq!(a, draw(3));
        assert_ne!(a, draw(4));
        assert_eq!(a.len(), 100);
        assert_eq!(a.labels.iter().filter(|&&l| l == 2).count(), 25);
    }

    #[test]
    fn splits_cover_the_dataset() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ds = Blobs::<f64>::new(&BlobSpec::default(), &mut rng).unwrap().sample(10, &mut rng).unwrap();
        let parts = iid_split(&ds, 3, &mut rng);
        assert_eq!(parts.iter().map(ToyDataset::len).sum::<usize>(), 40);

        let groups = contiguous_groups(4, 2);
        assert_eq!(groups, vec![vec![0, 1], vec![2, 3]]);
        let parts = label_split(&ds, &groups);
        assert!(parts[1].labels.iter().all(|&l| l >= 2));
        assert_eq!(ToyDataset::concat(&[&parts[0], &parts[1]]).unwrap().len(), 40);
    }

    #[test]
    fn rejects_bad_labels() {
        let x = Matrix::<f64>::zeros(2, 1);
        assert!(ToyDataset::new(x.clone(), vec![0, 3], 3).is_err());
        assert!(ToyDataset::new(x, vec![0], 3).is_err());
    }
}
