//! Full-batch gradient descent: FedSGD for the teacher, distillation for
//! students, and top-1 accuracy.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::ToyDataset;
use super::loss::{cross_entropy, kd_loss, simkd_loss, LossSpec};
use super::net::{Arch, Dense, NetParams, Projector};
use super::tensor::Matrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// What the student is fitted to.
#[derive(Debug, Clone)]
pub enum Targets<T> {
    /// Hard labels only.
    Hard,
    /// Teacher logits softened at the given temperature, plus hard labels.
    Logits { teacher: Matrix<T>, temperature: T },
    /// Teacher features, matched through the projector.
    Features(Matrix<T>),
}

/// Loss and gradients of a student on one batch.
#[derive(Debug, Clone)]
pub struct StudentGrad<T> {
    pub loss: T,
    pub params: NetParams<T>,
    pub projector: Option<Matrix<T>>,
}

pub fn student_objective<T: Scalar>(
    student: &NetParams<T>,
    proj: Option<&Projector<T>>,
    data: &ToyDataset<T>,
    targets: &Targets<T>,
) -> Result<StudentGrad<T>> {
    let x = &data.inputs;
    let fwd = student.forward(x)?;
    match targets {
        Targets::Hard => {
            let (loss, dl) = cross_entropy(&fwd.logits, &data.labels)?;
            let params = student.backward(x, &fwd, Some(&dl), None)?;
            Ok(StudentGrad { loss, params, projector: None })
        }
        Targets::Logits { teacher, temperature } => {
            let (loss, dl) = kd_loss(&fwd.logits, teacher, &data.labels, *temperature)?;
            let params = student.backward(x, &fwd, Some(&dl), None)?;
            Ok(StudentGrad { loss, params, projector: None })
        }
        Targets::Features(f_t) => {
            let proj = proj.ok_or_else(|| Error::Contract("feature matching needs a projector".into()))?;
            let out = simkd_loss(f_t, fwd.features(), proj)?;
            let params = student.backward(x, &fwd, None, Some(&out.d_student_features))?;
            Ok(StudentGrad {
                loss: out.loss,
                params,
                projector: Some(out.d_projector),
            })
        }
    }
}

/// Size-weighted average of per-client full-batch cross-entropy gradients,
/// which equals the gradient on the union of the partitions. Empty
/// partitions are skipped.
pub fn fedsgd_gradient<T: Scalar>(global: &NetParams<T>, parts: &[ToyDataset<T>]) -> Result<(T, NetParams<T>)> {
    let live: Vec<&ToyDataset<T>> = parts
        .iter()
        .enumerate()
        .filter_map(|(i, p)| {
            if p.is_empty() {
                log::warn!("partition {i} is empty; excluded from aggregation");
                None
            } else {
                Some(p)
            }
        })
        .collect();
    if live.is_empty() {
        return Err(Error::Contract("every partition is empty".into()));
    }
    let (features, classes) = (live[0].features(), live[0].num_classes);
    if live.iter().any(|p| p.features() != features || p.num_classes != classes) {
        return Err(Error::Contract("partitions disagree on feature or class counts".into()));
    }
    let grads: Vec<StudentGrad<T>> = live
        .par_iter()
        .map(|p| student_objective(global, None, p, &Targets::Hard))
        .collect::<Result<_>>()?;

    let total = T::from_usize_lossy(live.iter().map(|p| p.len()).sum());
    let mut agg = global.zeros_like();
    let mut loss = T::zero();
    for (p, g) in live.iter().zip(&grads) {
        let w = T::from_usize_lossy(p.len()) / total;
        agg.axpy(w, &g.params)?;
        loss += w * g.loss;
    }
    Ok((loss, agg))
}

/// One FedSGD step. Clients train with hard labels only.
pub fn fedsgd_round<T: Scalar>(
    global: &NetParams<T>,
    parts: &[ToyDataset<T>],
    loss: &LossSpec<T>,
    lr: T,
) -> Result<NetParams<T>> {
    if !matches!(loss, LossSpec::HardOnly) {
        return Err(Error::Contract("FedSGD clients train on hard labels".into()));
    }
    let (_, grad) = fedsgd_gradient(global, parts)?;
    let mut next = global.clone();
    next.axpy(-lr, &grad)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trained<T> {
    pub params: NetParams<T>,
    /// Loss before each epoch's step, then the final loss.
    pub losses: Vec<T>,
    /// Accuracy on the union of the training partitions.
    pub train_accuracy: T,
}

fn check_loss<T: Scalar>(epoch: usize, loss: T) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            epoch,
            loss: loss.as_f64(),
        })
    }
}

/// Teacher training by repeated FedSGD rounds from a seeded initialisation.
pub fn train_teacher<T: Scalar, R: Rng + ?Sized>(
    arch: &Arch,
    parts: &[ToyDataset<T>],
    epochs: usize,
    lr: T,
    rng: &mut R,
) -> Result<Trained<T>> {
    if epochs == 0 {
        return Err(Error::Contract("teacher training needs at least one epoch".into()));
    }
    let mut params = NetParams::init(arch, rng)?;
    let mut losses = Vec::with_capacity(epochs + 1);
    for epoch in 0..epochs {
        let (loss, grad) = fedsgd_gradient(&params, parts)?;
        check_loss(epoch, loss)?;
        losses.push(loss);
        params.axpy(-lr, &grad)?;
    }
    let (loss, _) = fedsgd_gradient(&params, parts)?;
    check_loss(epochs, loss)?;
    losses.push(loss);

    let live: Vec<&ToyDataset<T>> = parts.iter().filter(|p| !p.is_empty()).collect();
    let union = ToyDataset::concat(&live)?;
    let train_accuracy = measure_accuracy(&params, &union, None)?;
    Ok(Trained {
        params,
        losses,
        train_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distilled<T> {
    pub student: NetParams<T>,
    /// Present for feature matching; the student then predicts through the
    /// teacher's classifier.
    pub projector: Option<Projector<T>>,
    pub losses: Vec<T>,
}

impl<T: Scalar> Distilled<T> {
    pub fn final_loss(&self) -> T {
        *self.losses.last().expect("losses include the initial value")
    }

    /// Accuracy using the inference path that matches the training loss.
    pub fn accuracy(&self, teacher: &NetParams<T>, data: &ToyDataset<T>) -> Result<T> {
        match &self.projector {
            Some(p) => measure_accuracy(&self.student, data, Some((&teacher.classifier, p))),
            None => measure_accuracy(&self.student, data, None),
        }
    }
}

/// Trains a fresh student on its private data only.
///
/// `HardOnly` ignores the teacher and gives the standalone baseline.
pub fn distill_student<T: Scalar, R: Rng + ?Sized>(
    teacher: &NetParams<T>,
    student_arch: &Arch,
    data: &ToyDataset<T>,
    loss: &LossSpec<T>,
    epochs: usize,
    lr: T,
    rng: &mut R,
) -> Result<Distilled<T>> {
    loss.validate()?;
    if student_arch.inputs != teacher.arch().inputs || student_arch.classes != teacher.arch().classes {
        return Err(Error::Contract("student and teacher disagree on inputs or classes".into()));
    }
    let mut student = NetParams::init(student_arch, rng)?;
    let (targets, mut projector) = match loss {
        LossSpec::HardOnly => (Targets::Hard, None),
        LossSpec::Kd { temperature } => (
            Targets::Logits {
                teacher: teacher.forward(&data.inputs)?.logits,
                temperature: *temperature,
            },
            None,
        ),
        LossSpec::Simkd => (
            Targets::Features(teacher.forward(&data.inputs)?.features().clone()),
            Some(if student_arch.feature_dim() == teacher.feature_dim() {
                Projector::identity(student_arch.feature_dim())
            } else {
                Projector::glorot(student_arch.feature_dim(), teacher.feature_dim(), rng)
            }),
        ),
    };
    let mut losses = Vec::with_capacity(epochs + 1);
    for epoch in 0..=epochs {
        let g = student_objective(&student, projector.as_ref(), data, &targets)?;
        check_loss(epoch, g.loss)?;
        losses.push(g.loss);
        if epoch == epochs {
            break;
        }
        student.axpy(-lr, &g.params)?;
        if let (Some(p), Some(dp)) = (projector.as_mut(), g.projector.as_ref()) {
            p.w.axpy(-lr, dp)?;
        }
    }
    Ok(Distilled {
        student,
        projector,
        losses,
    })
}

/// Fraction of samples whose argmax prediction equals the label. With
/// `reuse`, logits come from the given classifier applied to the projected
/// features instead of the network's own classifier.
pub fn measure_accuracy<T: Scalar>(
    p: &NetParams<T>,
    data: &ToyDataset<T>,
    reuse: Option<(&Dense<T>, &Projector<T>)>,
) -> Result<T> {
    if data.is_empty() {
        return Err(Error::Contract("accuracy of an empty dataset".into()));
    }
    let fwd = p.forward(&data.inputs)?;
    let logits = match reuse {
        Some((classifier, proj)) => classifier.forward(&proj.apply(fwd.features())?)?,
        None => fwd.logits,
    };
    let correct = (0..data.len())
        .filter(|&i| argmax(logits.row(i)) == data.labels[i])
        .count();
    Ok(T::from_usize_lossy(correct) / T::from_usize_lossy(data.len()))
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::super::data::{contiguous_groups, iid_split, label_split, BlobSpec, Blobs};
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                probe[i] = x[i] + h;
                let up = f(&probe);
                probe[i] = x[i] - h;
                let down = f(&probe);
                probe[i] = x[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(analytic: &[f64], numeric: &[f64]) {
        for (a, n) in analytic.iter().zip(numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
            assert!(rel < 1e-4, "analytic {a} vs numeric {n}");
        }
    }

    fn toy(seed: u64) -> (ToyDataset<f64>, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blobs = Blobs::new(&BlobSpec { classes: 3, features: 4, ..BlobSpec::default() }, &mut rng).unwrap();
        (blobs.sample(4, &mut rng).unwrap(), rng)
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..10 {
            let (data, mut rng) = toy(seed);
            let student = NetParams::init(&Arch::new(4, vec![5, 3], 3), &mut rng).unwrap();
            let teacher = NetParams::init(&Arch::new(4, vec![6], 3), &mut rng).unwrap();
            let tf = teacher.forward(&data.inputs).unwrap();
            let proj = Projector::glorot(3, 6, &mut rng);
            let cases = [
                Targets::Hard,
                Targets::Logits { teacher: tf.logits.clone(), temperature: 3.0 },
                Targets::Features(tf.features().clone()),
            ];
            for targets in &cases {
                let g = student_objective(&student, Some(&proj), &data, targets).unwrap();
                let f = |flat: &[f64]| {
                    let mut s = student.clone();
                    s.set_flat(flat).unwrap();
                    student_objective(&s, Some(&proj), &data, targets).unwrap().loss
                };
                assert_close(&g.params.to_flat(), &central_difference(f, &student.to_flat(), 1e-6));
                if let Some(dp) = g.projector {
                    let f = |flat: &[f64]| {
                        let p = Projector { w: Matrix::from_vec(3, 6, flat.to_vec()).unwrap() };
                        student_objective(&student, Some(&p), &data, targets).unwrap().loss
                    };
                    assert_close(dp.as_slice(), &central_difference(f, proj.w.as_slice(), 1e-6));
                }
            }
        }
    }

    #[test]
    fn fedsgd_matches_centralised_gradient() {
        let (data, mut rng) = toy(5);
        let params = NetParams::init(&Arch::new(4, vec![5], 3), &mut rng).unwrap();
        let parts = vec![data.subset(&[0, 1, 2]), data.subset(&[3, 4, 5, 6, 7, 8, 9]), data.subset(&[10, 11])];
        let (_, agg) = fedsgd_gradient(&params, &parts).unwrap();
        let central = student_objective(&params, None, &data, &Targets::Hard).unwrap().params;
        for (a, b) in agg.to_flat().iter().zip(central.to_flat()) {
            assert!((a - b).abs() < 1e-10);
        }
        // identical partitions are a single-client step
        let one = fedsgd_round(&params, std::slice::from_ref(&data), &LossSpec::HardOnly, 0.3).unwrap();
        let two = fedsgd_round(&params, &[data.clone(), data.clone()], &LossSpec::HardOnly, 0.3).unwrap();
        assert!(one.to_flat().iter().zip(two.to_flat()).all(|(a, b)| (a - b).abs() < 1e-14));
        // empty partitions are dropped
        let with_empty = [data.subset(&[]), data.clone()];
        assert_eq!(fedsgd_round(&params, &with_empty, &LossSpec::HardOnly, 0.3).unwrap(), one);
    }

    #[test]
    fn teacher_separates_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = BlobSpec { classes: 2, features: 4, center_scale: 2.0, spread: 0.3 };
        let data = Blobs::<f64>::new(&spec, &mut rng).unwrap().sample(50, &mut rng).unwrap();
        let parts = iid_split(&data, 3, &mut rng);
        let arch = Arch::new(4, vec![8], 2);
        let run = |seed| train_teacher(&arch, &parts, 200, 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let t = run(1);
        assert!(t.train_accuracy >= 0.95, "{}", t.train_accuracy);
        assert!(t.losses.last().unwrap() < &t.losses[0]);
        assert_eq!(measure_accuracy(&t.params, &data, None).unwrap(), t.train_accuracy);
        assert_eq!(t, run(1));
        assert!(train_teacher(&arch, &parts, 0, 0.5, &mut rng).is_err());
    }

    #[test]
    fn simkd_fits_a_capacity_matched_teacher() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let blobs = Blobs::<f64>::new(&BlobSpec::default(), &mut rng).unwrap();
        let data = blobs.sample(30, &mut rng).unwrap();
        let arch = Arch::new(8, vec![16], 4);
        let teacher = train_teacher(&arch, std::slice::from_ref(&data), 100, 0.5, &mut rng).unwrap().params;
        let d = distill_student(&teacher, &arch, &data, &LossSpec::Simkd, 8000, 0.1, &mut rng).unwrap();
        assert!(d.final_loss() < 1e-3, "{}", d.final_loss());
    }

    #[test]
    fn zero_epochs_return_the_initialisation() {
        let (data, mut rng) = toy(3);
        let arch = Arch::new(4, vec![5], 3);
        let teacher = NetParams::init(&arch, &mut rng).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let d = distill_student(&teacher, &arch, &data, &LossSpec::Kd { temperature: 2.0 }, 0, 0.5, &mut a).unwrap();
        let init = NetParams::init(&arch, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(d.student, init);
        assert_eq!(d.losses.len(), 1);
    }

    #[test]
    fn accuracy_examples() {
        let (data, mut rng) = toy(1);
        // a classifier that reads the label from a one-hot input is always right
        let onehot = Matrix::from_fn(data.len(), 3, |i, j| if data.labels[i] == j { 1.0 } else { 0.0 });
        let ds = ToyDataset::new(onehot, data.labels.clone(), 3).unwrap();
        let mut p = NetParams::zeros(&Arch::new(3, vec![3], 3)).unwrap();
        p.encoder[0].w = Matrix::identity(3);
        p.classifier.w = Matrix::identity(3);
        assert_eq!(measure_accuracy(&p, &ds, None).unwrap(), 1.0);
        assert!(measure_accuracy(&p, &ds.subset(&[]), None).is_err());

        // a random 2-class labelling is guessed at chance
        let n = 10_000;
        let x = Matrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let ds = ToyDataset::new(x, labels, 2).unwrap();
        let mut p = NetParams::zeros(&Arch::new(1, vec![1], 2)).unwrap();
        p.encoder[0].w[(0, 0)] = 1.0;
        p.classifier.w[(0, 1)] = 1.0;
        let acc: f64 = measure_accuracy(&p, &ds, None).unwrap();
        assert!((acc - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt(), "{acc}");
    }

    #[test]
    fn label_split_models_only_know_their_classes() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let blobs = Blobs::<f64>::new(&BlobSpec::default(), &mut rng).unwrap();
        let train = blobs.sample(40, &mut rng).unwrap();
        let test = blobs.sample(100, &mut rng).unwrap();
        let groups = contiguous_groups(4, 2);
        let parts = label_split(&train, &groups);
        let arch = Arch::new(8, vec![16], 4);
        let local = train_teacher(&arch, &parts[..1], 300, 0.5, &mut rng).unwrap().params;
        let own = measure_accuracy(&local, &test.restrict_classes(&groups[0]), None).unwrap();
        let full = measure_accuracy(&local, &test, None).unwrap();
        assert!(own >= 0.9 && full <= 0.55, "own {own} full {full}");
    }
}
