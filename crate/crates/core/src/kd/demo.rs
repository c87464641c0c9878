//! Teacher/student comparison on Non-IID class blobs: a FedSGD teacher over
//! label-split clients, then students trained on one client's data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{contiguous_groups, label_split, BlobSpec, Blobs, ToyDataset};
use super::loss::LossSpec;
use super::net::{Arch, NetParams};
use super::train::{distill_student, measure_accuracy, train_teacher, Distilled};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KdDemoConfig {
    pub blobs: BlobSpec,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Classes held by each client.
    pub classes_per_client: usize,
    pub teacher_hidden: Vec<usize>,
    pub student_hidden: Vec<usize>,
    pub teacher_epochs: usize,
    pub teacher_lr: f64,
    pub student_epochs: usize,
    pub student_lr: f64,
    pub simkd_epochs: usize,
    pub simkd_lr: f64,
    pub temperature: f64,
}

impl Default for KdDemoConfig {
    fn default() -> Self {
        Self {
            blobs: BlobSpec::default(),
            train_per_class: 50,
            test_per_class: 200,
            classes_per_client: 2,
            teacher_hidden: vec![16],
            student_hidden: vec![8],
            teacher_epochs: 300,
            teacher_lr: 0.5,
            student_epochs: 500,
            student_lr: 0.5,
            simkd_epochs: 1500,
            simkd_lr: 0.1,
            temperature: 4.0,
        }
    }
}

/// Accuracies of one seeded run. "Own" is the first client's classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdDemoOutcome {
    pub seed: u64,
    pub teacher_full: f64,
    pub hard_full: f64,
    pub hard_own: f64,
    pub kd_full: f64,
    pub kd_own: f64,
    pub simkd_full: f64,
    pub simkd_own: f64,
    pub simkd_final_loss: f64,
}

/// Trained artefacts of a run, for snapshots.
#[derive(Debug, Clone)]
pub struct KdDemoRun {
    pub outcome: KdDemoOutcome,
    pub train: ToyDataset<f64>,
    pub test: ToyDataset<f64>,
    pub teacher: NetParams<f64>,
    pub hard: Distilled<f64>,
    pub kd: Distilled<f64>,
    pub simkd: Distilled<f64>,
}

pub fn run_demo(cfg: &KdDemoConfig, seed: u64) -> Result<KdDemoRun> {
    if cfg.classes_per_client == 0 || cfg.classes_per_client >= cfg.blobs.classes {
        return Err(Error::config(
            "classes_per_client",
            "must be at least 1 and fewer than the number of classes",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs = Blobs::<f64>::new(&cfg.blobs, &mut rng)?;
    let train = blobs.sample(cfg.train_per_class, &mut rng)?;
    let test = blobs.sample(cfg.test_per_class, &mut rng)?;
    let groups = contiguous_groups(cfg.blobs.classes, cfg.classes_per_client);
    let parts = label_split(&train, &groups);

    let inputs = cfg.blobs.features;
    let classes = cfg.blobs.classes;
    let teacher = train_teacher(
        &Arch::new(inputs, cfg.teacher_hidden.clone(), classes),
        &parts,
        cfg.teacher_epochs,
        cfg.teacher_lr,
        &mut rng,
    )?
    .params;
    let student_arch = Arch::new(inputs, cfg.student_hidden.clone(), classes);
    let private = &parts[0];
    let hard = distill_student(&teacher, &student_arch, private, &LossSpec::HardOnly, cfg.student_epochs, cfg.student_lr, &mut rng)?;
    let kd = distill_student(
        &teacher,
        &student_arch,
        private,
        &LossSpec::Kd { temperature: cfg.temperature },
        cfg.student_epochs,
        cfg.student_lr,
        &mut rng,
    )?;
    let simkd = distill_student(&teacher, &student_arch, private, &LossSpec::Simkd, cfg.simkd_epochs, cfg.simkd_lr, &mut rng)?;

    let own = test.restrict_classes(&groups[0]);
    let outcome = KdDemoOutcome {
        seed,
        teacher_full: measure_accuracy(&teacher, &test, None)?,
        hard_full: hard.accuracy(&teacher, &test)?,
        hard_own: hard.accuracy(&teacher, &own)?,
        kd_full: kd.accuracy(&teacher, &test)?,
        kd_own: kd.accuracy(&teacher, &own)?,
        simkd_full: simkd.accuracy(&teacher, &test)?,
        simkd_own: simkd.accuracy(&teacher, &own)?,
        simkd_final_loss: simkd.final_loss(),
    };
    Ok(KdDemoRun {
        outcome,
        train,
        test,
        teacher,
        hard,
        kd,
        simkd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_is_deterministic_and_ordered() {
        let cfg = KdDemoConfig {
            simkd_epochs: 600,
            ..KdDemoConfig::default()
        };
        let a = run_demo(&cfg, 3).unwrap().outcome;
        assert_eq!(a, run_demo(&cfg, 3).unwrap().outcome);
        assert!(a.hard_own >= 0.9 && a.hard_full <= 0.55, "{a:?}");
        assert!(a.simkd_full > a.hard_full, "{a:?}");
    }

    #[test]
    fn rejects_degenerate_client_split() {
        let cfg = KdDemoConfig {
            classes_per_client: 4,
            ..KdDemoConfig::default()
        };
        assert!(run_demo(&cfg, 0).is_err());
    }
}
