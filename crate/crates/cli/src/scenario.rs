//! Scenario files: a system (finite or torus), named observables and the
//! parameters shared by all subcommands.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ergolab_core::averages::FolnerBox;
use ergolab_core::system::{validate_system, SystemDescription};
use ergolab_core::torus::{TorusDescription, TorusSystem, TrigObservable};
use ergolab_core::{FiniteSystem, Observable};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Finite,
    Torus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSource {
    Inline(SystemDescription),
    Path(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub freq: Vec<i64>,
    pub re: f64,
    #[serde(default)]
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub edges: Vec<u64>,
    #[serde(default)]
    pub base: Option<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Trials {
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Options {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    /// Box edges swept by `torus-demo`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo_edges: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<SystemSource>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub torus: Option<TorusDescription>,
    #[serde(default)]
    pub observables: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub trig_observables: BTreeMap<String, Vec<TrigTerm>>,
    #[serde(default)]
    pub tuples: Vec<Vec<String>>,
    #[serde(default)]
    pub boxes: Vec<BoxSpec>,
    #[serde(default)]
    pub base_point_trials: Trials,
    #[serde(default)]
    pub samples: Vec<Vec<f64>>,
    #[serde(default)]
    pub options: Options,
}

pub enum Model {
    Finite {
        system: FiniteSystem,
        observables: BTreeMap<String, Observable>,
    },
    Torus {
        system: TorusSystem,
        observables: BTreeMap<String, TrigObservable>,
    },
}

/// Observable tuples with the names they were given in the scenario.
pub type NamedTuples<F> = Vec<(Vec<String>, Vec<F>)>;

pub struct Loaded {
    pub scenario: Scenario,
    pub hash: String,
    pub model: Model,
}

impl Loaded {
    pub fn finite(&self) -> Result<(&FiniteSystem, &BTreeMap<String, Observable>), CliError> {
        match &self.model {
            Model::Finite { system, observables } => Ok((system, observables)),
            Model::Torus { .. } => Err(CliError::Validation(format!(
                "scenario {:?} uses the torus engine; this command needs a finite system",
                self.scenario.name
            ))),
        }
    }

    pub fn torus(&self) -> Result<(&TorusSystem, &BTreeMap<String, TrigObservable>), CliError> {
        match &self.model {
            Model::Torus { system, observables } => Ok((system, observables)),
            Model::Finite { .. } => Err(CliError::Validation(format!(
                "scenario {:?} uses the finite engine; this command needs a torus",
                self.scenario.name
            ))),
        }
    }

    /// Finite tuples, by name.
    pub fn finite_tuples(&self) -> Result<NamedTuples<Observable>, CliError> {
        let (_, obs) = self.finite()?;
        Ok(self
            .scenario
            .tuples
            .iter()
            .map(|t| (t.clone(), t.iter().map(|n| obs[n].clone()).collect()))
            .collect())
    }

    pub fn torus_tuples(&self) -> Result<NamedTuples<TrigObservable>, CliError> {
        let (_, obs) = self.torus()?;
        Ok(self
            .scenario
            .tuples
            .iter()
            .map(|t| (t.clone(), t.iter().map(|n| obs[n].clone()).collect()))
            .collect())
    }

    /// Scenario boxes, with missing bases at the origin.
    pub fn boxes(&self, r: usize) -> Result<Vec<FolnerBox>, CliError> {
        self.scenario
            .boxes
            .iter()
            .map(|b| {
                let base = b.base.clone().unwrap_or_else(|| vec![0; r]);
                if b.edges.len() != r || base.len() != r {
                    return Err(CliError::Validation(format!(
                        "box {:?} does not have rank {r}",
                        b.edges
                    )));
                }
                FolnerBox::new(b.edges.clone(), base).map_err(CliError::from)
            })
            .collect()
    }
}

pub fn load(path: &Path) -> Result<Loaded, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut scenario: Scenario =
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if let Some(SystemSource::Path(p)) = &scenario.system {
        let full = path.parent().unwrap_or(Path::new(".")).join(p);
        let sys_text = fs::read_to_string(&full)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", full.display())))?;
        let desc: SystemDescription = serde_json::from_str(&sys_text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", full.display())))?;
        scenario.system = Some(SystemSource::Inline(desc));
    }
    resolve(scenario)
}

/// Validates a scenario whose system is inline.
pub fn resolve(scenario: Scenario) -> Result<Loaded, CliError> {
    let canonical = serde_json::to_vec(&scenario).expect("scenarios serialize");
    let hash = hex::encode(Sha256::digest(&canonical));
    let model = match scenario.engine {
        Engine::Finite => {
            let desc = match &scenario.system {
                Some(SystemSource::Inline(d)) => d,
                Some(SystemSource::Path(p)) => {
                    return Err(CliError::Validation(format!("unresolved system path {p:?}")))
                }
                None => return Err(CliError::Validation("finite scenario without a system".into())),
            };
            let system = validate_system(desc)?;
            let mut observables = BTreeMap::new();
            for (name, values) in &scenario.observables {
                let f = Observable::parse(values)?;
                if f.len() != system.n() {
                    return Err(CliError::Validation(format!(
                        "observable {name:?} has {} values, system has {} states",
                        f.len(),
                        system.n()
                    )));
                }
                observables.insert(name.clone(), f);
            }
            check_tuples(&scenario.tuples, system.d(), |n| observables.contains_key(n))?;
            Model::Finite { system, observables }
        }
        Engine::Torus => {
            let desc = scenario
                .torus
                .as_ref()
                .ok_or_else(|| CliError::Validation("torus scenario without a torus".into()))?;
            let system = TorusSystem::from_description(desc)?;
            let mut observables = BTreeMap::new();
            for (name, terms) in &scenario.trig_observables {
                let terms = terms
                    .iter()
                    .map(|t| (t.freq.clone(), Complex64::new(t.re, t.im)))
                    .collect();
                observables.insert(name.clone(), TrigObservable::new(system.m(), terms)?);
            }
            check_tuples(&scenario.tuples, system.d(), |n| observables.contains_key(n))?;
            for s in &scenario.samples {
                if s.len() != system.m() || s.iter().any(|v| !(0.0..1.0).contains(v)) {
                    return Err(CliError::Validation(format!(
                        "sample {s:?} is not a point of [0,1)^m"
                    )));
                }
            }
            Model::Torus { system, observables }
        }
    };
    Ok(Loaded {
        scenario,
        hash,
        model,
    })
}

fn check_tuples(tuples: &[Vec<String>], d: usize, known: impl Fn(&str) -> bool) -> Result<(), CliError> {
    for t in tuples {
        if t.len() != d {
            return Err(CliError::Validation(format!(
                "tuple {t:?} has {} entries, system has {d} actions",
                t.len()
            )));
        }
        if let Some(n) = t.iter().find(|n| !known(n)) {
            return Err(CliError::Validation(format!(
                "tuple {t:?} names unknown observable {n:?}"
            )));
        }
    }
    Ok(())
}
