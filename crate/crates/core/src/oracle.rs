//! Accuracy lookup keyed by (model, training method, data distribution, test
//! set, top-k). The built-in table holds the measured CIFAR-100 accuracies of
//! the four default student models; replacement tables can be loaded from a
//! delimited file with the columns `model,method,distribution,testset,topk,percent`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    /// Distilled from the server-side teacher.
    #[serde(rename = "KD")]
    Kd,
    /// Conventional federated averaging with one shared model.
    #[serde(rename = "FL")]
    Fl,
    /// Student trained alone on the user's data.
    #[serde(rename = "STU")]
    Stu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Distribution {
    #[serde(rename = "IID")]
    Iid,
    #[serde(rename = "NonIID")]
    NonIid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TestSet {
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "private")]
    Private,
}

macro_rules! text_enum {
    ($ty:ident { $($variant:ident => $text:literal $(| $alias:literal)*),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $text),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($text $(| $alias)* => Ok($ty::$variant),)+
                    other => Err(Error::config(stringify!($ty), format!("unrecognised value `{other}`"))),
                }
            }
        }
    };
}

text_enum!(Method { Kd => "KD" | "kd", Fl => "FL" | "fl", Stu => "STU" | "stu" });
text_enum!(Distribution { Iid => "IID" | "iid", NonIid => "NonIID" | "Non-IID" | "noniid" | "non-iid" });
text_enum!(TestSet { Full => "full", Private => "private" });

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AccuracyKey {
    pub model: String,
    pub method: Method,
    pub distribution: Distribution,
    pub testset: TestSet,
    pub topk: u8,
}

/// One row of the delimited table format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRecord {
    pub model: String,
    pub method: Method,
    pub distribution: Distribution,
    pub testset: TestSet,
    pub topk: u8,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccuracyTable {
    entries: BTreeMap<AccuracyKey, f64>,
}

const MODELS: [&str; 4] = ["VGG-8", "ResNet-8x4", "ResNet-14x4", "ResNet-26x4"];

// Full test set; per model: KD (IID top1, top5, NonIID top1, top5), FL (...), STU (...).
const FULL_TEST: [[f64; 12]; 4] = [
    [62.71, 86.61, 23.60, 63.51, 59.90, 84.49, 1.12, 5.01, 43.23, 73.83, 18.16, 23.62],
    [68.13, 90.85, 25.81, 67.88, 62.13, 87.00, 1.47, 5.40, 45.26, 76.53, 18.50, 24.00],
    [71.84, 92.40, 28.48, 73.43, 65.64, 88.50, 1.43, 5.11, 49.97, 79.29, 19.35, 24.08],
    [72.55, 92.59, 28.73, 73.51, 66.10, 89.22, 1.23, 5.04, 49.32, 78.66, 19.53, 24.20],
];

// Private test slices under the label-split partition; per model: KD (top1, top5), FL, STU.
const PRIVATE_TEST: [[f64; 6]; 4] = [
    [86.53, 96.75, 4.47, 20.04, 72.59, 94.47],
    [89.46, 98.11, 5.88, 21.60, 73.95, 95.99],
    [90.98, 98.11, 5.72, 20.44, 77.36, 96.31],
    [90.14, 97.75, 4.92, 20.16, 78.08, 96.79],
];

const METHODS: [Method; 3] = [Method::Kd, Method::Fl, Method::Stu];

/// Shifts the decimal point of the shortest round-trip representation, so
/// `62.71` becomes exactly the literal `0.6271` rather than `62.71 / 100`.
fn percent_to_fraction(percent: f64) -> f64 {
    format!("{percent}e-2").parse().unwrap_or(percent / 100.0)
}

impl AccuracyTable {
    /// The built-in table for the default catalog.
    pub fn builtin() -> Self {
        let mut records = Vec::with_capacity(72);
        for (model, row) in MODELS.iter().zip(FULL_TEST) {
            for (mi, method) in METHODS.iter().enumerate() {
                for (di, distribution) in [Distribution::Iid, Distribution::NonIid].iter().enumerate() {
                    for (ki, topk) in [1u8, 5].iter().enumerate() {
                        records.push(AccuracyRecord {
                            model: model.to_string(),
                            method: *method,
                            distribution: *distribution,
                            testset: TestSet::Full,
                            topk: *topk,
                            percent: row[mi * 4 + di * 2 + ki],
                        });
                    }
                }
            }
        }
        for (model, row) in MODELS.iter().zip(PRIVATE_TEST) {
            for (mi, method) in METHODS.iter().enumerate() {
                for (ki, topk) in [1u8, 5].iter().enumerate() {
                    records.push(AccuracyRecord {
                        model: model.to_string(),
                        method: *method,
                        distribution: Distribution::NonIid,
                        testset: TestSet::Private,
                        topk: *topk,
                        percent: row[mi * 2 + ki],
                    });
                }
            }
        }
        Self::from_records(records).expect("built-in accuracy table is valid")
    }

    /// Builds a table, rejecting out-of-range values, duplicate keys and
    /// top-5 entries below their top-1 counterpart.
    pub fn from_records(records: impl IntoIterator<Item = AccuracyRecord>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for r in records {
            if !(0.0..=100.0).contains(&r.percent) {
                return Err(Error::Invariant(format!(
                    "accuracy {}% for {} is outside [0, 100]",
                    r.percent, r.model
                )));
            }
            if r.topk != 1 && r.topk != 5 {
                return Err(Error::Invariant(format!("top-k must be 1 or 5 (got {})", r.topk)));
            }
            let key = AccuracyKey {
                model: r.model,
                method: r.method,
                distribution: r.distribution,
                testset: r.testset,
                topk: r.topk,
            };
            if entries.contains_key(&key) {
                return Err(Error::Invariant(format!("duplicate accuracy record {key:?}")));
            }
            entries.insert(key, r.percent);
        }
        let table = Self { entries };
        for (key, top1) in table.entries.iter().filter(|(k, _)| k.topk == 1) {
            let top5 = AccuracyKey { topk: 5, ..key.clone() };
            if let Some(v) = table.entries.get(&top5) {
                if v < top1 {
                    return Err(Error::Invariant(format!("top-5 below top-1 for {key:?}")));
                }
            }
        }
        Ok(table)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let records = reader.deserialize().collect::<std::result::Result<Vec<AccuracyRecord>, _>>()?;
        Self::from_records(records)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text)
    }

    pub fn records(&self) -> impl Iterator<Item = AccuracyRecord> + '_ {
        self.entries.iter().map(|(k, v)| AccuracyRecord {
            model: k.model.clone(),
            method: k.method,
            distribution: k.distribution,
            testset: k.testset,
            topk: k.topk,
            percent: *v,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        for r in self.records() {
            writer.serialize(r)?;
        }
        let bytes = writer.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Accuracy as a fraction in `[0, 1]`.
    pub fn lookup(
        &self,
        model: &str,
        method: Method,
        distribution: Distribution,
        testset: TestSet,
        topk: u8,
    ) -> Result<f64> {
        let key = AccuracyKey {
            model: model.to_string(),
            method,
            distribution,
            testset,
            topk,
        };
        self.entries.get(&key).map(|p| percent_to_fraction(*p)).ok_or_else(|| {
            Error::UnknownConfiguration(format!(
                "{model} / {method} / {distribution} / {testset} / top-{topk}"
            ))
        })
    }

    /// `(own, average)` top-1 accuracy of a model. Under IID partitions a
    /// user's private test data has the full-set distribution, so both
    /// values come from the full test set.
    pub fn acc_pair(&self, model: &str, method: Method, distribution: Distribution) -> Result<(f64, f64)> {
        let avg = self.lookup(model, method, distribution, TestSet::Full, 1)?;
        let own = match distribution {
            Distribution::Iid => avg,
            Distribution::NonIid => self.lookup(model, method, distribution, TestSet::Private, 1)?,
        };
        Ok((own, avg))
    }

    /// Fails unless every model has an accuracy pair for every method and
    /// distribution listed.
    pub fn ensure_complete<'a>(
        &self,
        models: impl IntoIterator<Item = &'a str>,
        methods: &[Method],
        distributions: &[Distribution],
    ) -> Result<()> {
        for model in models {
            for method in methods {
                for distribution in distributions {
                    self.acc_pair(model, *method, *distribution)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_examples() {
        let t = AccuracyTable::builtin();
        assert_eq!(t.lookup("VGG-8", Method::Kd, Distribution::Iid, TestSet::Full, 1).unwrap(), 0.6271);
        assert_eq!(
            t.lookup("ResNet-14x4", Method::Kd, Distribution::NonIid, TestSet::Private, 1).unwrap(),
            0.9098
        );
        assert_eq!(t.lookup("VGG-8", Method::Fl, Distribution::NonIid, TestSet::Full, 1).unwrap(), 0.0112);
        assert_eq!(t.len(), 72);
    }

    #[test]
    fn fractions_are_exact_decimal_shifts() {
        assert_eq!(percent_to_fraction(1.12), 0.0112);
        assert_eq!(percent_to_fraction(23.6), 0.236);
        assert_eq!(percent_to_fraction(100.0), 1.0);
        assert_eq!(percent_to_fraction(0.0), 0.0);
    }

    #[test]
    fn pairs() {
        let t = AccuracyTable::builtin();
        assert_eq!(t.acc_pair("ResNet-14x4", Method::Kd, Distribution::NonIid).unwrap(), (0.9098, 0.2848));
        assert_eq!(t.acc_pair("VGG-8", Method::Fl, Distribution::NonIid).unwrap(), (0.0447, 0.0112));
        for m in MODELS {
            let (own, avg) = t.acc_pair(m, Method::Stu, Distribution::Iid).unwrap();
            assert_eq!(own, avg);
        }
        assert!(matches!(
            t.acc_pair("ResNet-110", Method::Kd, Distribution::Iid),
            Err(Error::UnknownConfiguration(_))
        ));
    }

    #[test]
    fn builtin_is_total_and_ordered() {
        let t = AccuracyTable::builtin();
        t.ensure_complete(MODELS, &METHODS, &[Distribution::Iid, Distribution::NonIid]).unwrap();
        for r in t.records().filter(|r| r.topk == 1) {
            let top5 = t.lookup(&r.model, r.method, r.distribution, r.testset, 5).unwrap();
            assert!(top5 * 100.0 >= r.percent);
        }
    }

    #[test]
    fn csv_round_trip_and_validation() {
        let t = AccuracyTable::builtin();
        let text = t.to_csv().unwrap();
        assert!(text.starts_with("model,method,distribution,testset,topk,percent\n"));
        assert_eq!(AccuracyTable::from_csv(&text).unwrap(), t);

        let bad = "model,method,distribution,testset,topk,percent\nA,KD,IID,full,1,120\n";
        assert!(AccuracyTable::from_csv(bad).is_err());
        let inverted = "model,method,distribution,testset,topk,percent\n\
                        A,KD,IID,full,1,50\nA,KD,IID,full,5,40\n";
        assert!(AccuracyTable::from_csv(inverted).is_err());
        let dup = "model,method,distribution,testset,topk,percent\nA,KD,IID,full,1,50\nA,KD,IID,full,1,51\n";
        assert!(AccuracyTable::from_csv(dup).is_err());
    }

    #[test]
    fn parses_spelling_variants() {
        assert_eq!("Non-IID".parse::<Distribution>().unwrap(), Distribution::NonIid);
        assert_eq!("stu".parse::<Method>().unwrap(), Method::Stu);
        assert!("median".parse::<TestSet>().is_err());
    }
}
