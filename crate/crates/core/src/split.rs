//! Train/test split strategies over a patient -> files catalog.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::rng_from;

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("need at least {needed} patients, got {got}")]
    TooFewPatients { needed: usize, got: usize },
    #[error("patient `{0}` has fewer than 2 files")]
    TooFewFiles(String),
    #[error("unknown split strategy `{0}`")]
    UnknownStrategy(String),
    #[error("run {run}: file {file} is in both train and test")]
    Overlap { run: usize, file: String },
}

/// Held-out patients per fold in the cross-patient strategy.
pub const FOLD_PATIENTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Folds of four held-out patients; trains on all other patients.
    SixFold,
    /// One randomly chosen file per patient is held out; a single run.
    AllPatient,
    /// One run per patient: its longest file is held out.
    PerPatient,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::SixFold => "six-fold",
            Strategy::AllPatient => "all-patient",
            Strategy::PerPatient => "per-patient",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = SplitError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "six-fold" => Ok(Strategy::SixFold),
            "all-patient" => Ok(Strategy::AllPatient),
            "per-patient" => Ok(Strategy::PerPatient),
            _ => Err(SplitError::UnknownStrategy(s.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct FileRef {
    pub patient: String,
    pub file: String,
}

impl fmt::Display for FileRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.patient, self.file)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogFile {
    pub name: String,
    /// Seconds.
    pub duration: f64,
}

pub type Catalog = BTreeMap<String, Vec<CatalogFile>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub strategy: Strategy,
    pub run: usize,
    pub seed: u64,
    pub train: Vec<FileRef>,
    pub test: Vec<FileRef>,
}

impl SplitPlan {
    pub fn check_disjoint(&self) -> Result<(), SplitError> {
        let train: BTreeSet<&FileRef> = self.train.iter().collect();
        match self.test.iter().find(|f| train.contains(f)) {
            Some(f) => Err(SplitError::Overlap { run: self.run, file: f.to_string() }),
            None => Ok(()),
        }
    }

    pub fn test_patients(&self) -> BTreeSet<&str> {
        self.test.iter().map(|f| f.patient.as_str()).collect()
    }

    pub fn train_patients(&self) -> BTreeSet<&str> {
        self.train.iter().map(|f| f.patient.as_str()).collect()
    }
}

fn refs(catalog: &Catalog, patient: &str) -> Vec<FileRef> {
    catalog[patient]
        .iter()
        .map(|f| FileRef { patient: patient.into(), file: f.name.clone() })
        .collect()
}

pub fn make_split(catalog: &Catalog, strategy: Strategy, seed: u64) -> Result<Vec<SplitPlan>, SplitError> {
    let patients: Vec<&String> = catalog.keys().collect();
    if patients.len() < 2 {
        return Err(SplitError::TooFewPatients { needed: 2, got: patients.len() });
    }
    let plan = |run, train, test| SplitPlan { strategy, run, seed, train, test };
    let plans = match strategy {
        Strategy::SixFold => {
            if patients.len() <= FOLD_PATIENTS {
                return Err(SplitError::TooFewPatients { needed: FOLD_PATIENTS + 1, got: patients.len() });
            }
            let mut order = patients.clone();
            order.shuffle(&mut rng_from(seed, &[1]));
            order
                .chunks(FOLD_PATIENTS)
                .enumerate()
                .map(|(run, held)| {
                    let held: BTreeSet<&String> = held.iter().copied().collect();
                    let (mut train, mut test) = (Vec::new(), Vec::new());
                    for p in &patients {
                        if held.contains(p) {
                            test.extend(refs(catalog, p));
                        } else {
                            train.extend(refs(catalog, p));
                        }
                    }
                    plan(run, train, test)
                })
                .collect()
        }
        Strategy::AllPatient => {
            let mut rng = rng_from(seed, &[2]);
            let (mut train, mut test) = (Vec::new(), Vec::new());
            for p in &patients {
                let files = refs(catalog, p);
                if files.len() < 2 {
                    return Err(SplitError::TooFewFiles((*p).clone()));
                }
                let pick = rng.random_range(0..files.len());
                for (k, f) in files.into_iter().enumerate() {
                    if k == pick {
                        test.push(f);
                    } else {
                        train.push(f);
                    }
                }
            }
            vec![plan(0, train, test)]
        }
        Strategy::PerPatient => patients
            .iter()
            .enumerate()
            .map(|(run, p)| {
                let files = &catalog[*p];
                if files.len() < 2 {
                    return Err(SplitError::TooFewFiles((*p).clone()));
                }
                let longest = files
                    .iter()
                    .enumerate()
                    .fold(0, |best, (k, f)| if f.duration > files[best].duration { k } else { best });
                let (mut train, mut test) = (Vec::new(), Vec::new());
                for (k, f) in refs(catalog, p).into_iter().enumerate() {
                    if k == longest {
                        test.push(f);
                    } else {
                        train.push(f);
                    }
                }
                Ok(plan(run, train, test))
            })
            .collect::<Result<_, _>>()?,
    };
    for p in &plans {
        p.check_disjoint()?;
    }
    Ok(plans)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog(patients: usize, durations: &[f64]) -> Catalog {
        (0..patients)
            .map(|p| {
                let files = durations
                    .iter()
                    .enumerate()
                    .map(|(k, &d)| CatalogFile { name: format!("p{p:02}_{k}"), duration: d })
                    .collect();
                (format!("p{p:02}"), files)
            })
            .collect()
    }

    #[test]
    fn six_fold_partitions_patients() {
        let cat = catalog(24, &[100.0, 200.0]);
        let runs = make_split(&cat, Strategy::SixFold, 3).unwrap();
        assert_eq!(runs.len(), 6);
        let mut seen = BTreeSet::new();
        for r in &runs {
            assert_eq!(r.test_patients().len(), 4);
            assert_eq!(r.train_patients().len(), 20);
            assert!(r.test_patients().is_disjoint(&r.train_patients()));
            seen.extend(r.test_patients().into_iter().map(String::from));
        }
        assert_eq!(seen.len(), 24);
        assert_eq!(make_split(&catalog(9, &[1.0]), Strategy::SixFold, 0).unwrap().len(), 3);
    }

    #[test]
    fn per_patient_holds_out_longest() {
        let cat = catalog(3, &[300.0, 900.0]);
        for r in make_split(&cat, Strategy::PerPatient, 0).unwrap() {
            assert_eq!(r.test.len(), 1);
            assert!(r.test[0].file.ends_with("_1"));
        }
    }

    #[test]
    fn all_patient_is_deterministic() {
        let cat = catalog(5, &[10.0, 20.0, 30.0]);
        let a = make_split(&cat, Strategy::AllPatient, 11).unwrap();
        assert_eq!(a, make_split(&cat, Strategy::AllPatient, 11).unwrap());
        assert_eq!(a[0].test.len(), 5);
        assert_eq!(a[0].train.len(), 10);
        assert_eq!(
            make_split(&catalog(3, &[10.0]), Strategy::AllPatient, 0),
            Err(SplitError::TooFewFiles("p00".into()))
        );
    }
}
