//! Everything a run evaluated, plus the final re-trained front.

use serde::{Deserialize, Serialize};

use crate::cgpnet::Genotype;

use super::{Fitness, MoeaError, Objective};

/// JSON has no infinities; non-finite values travel as strings.
mod lossless_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Num(*v).serialize(s)
        } else {
            Repr::Text(v.to_string()).serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// One candidate evaluation. Rank and crowding are taken from the
/// selection step that first considered the candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: u64,
    pub generation: usize,
    #[serde(default)]
    pub parent: Option<u64>,
    pub f1: f64,
    #[serde(with = "lossless_f64")]
    pub f2: f64,
    #[serde(with = "lossless_f64")]
    pub f3: f64,
    pub mult_id: String,
    pub rank: usize,
    #[serde(with = "lossless_f64")]
    pub crowding: f64,
    pub n_mult: u64,
    pub mult_energy_pj: f64,
    #[serde(default)]
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn fitness(&self) -> Fitness {
        Fitness { f1: self.f1, f2: self.f2, f3: self.f3 }
    }
}

/// Survivor of a generation's selection, for accuracy/energy plots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationPoint {
    pub generation: usize,
    pub id: u64,
    pub f1: f64,
    #[serde(with = "lossless_f64")]
    pub f2: f64,
    #[serde(with = "lossless_f64")]
    pub f3: f64,
    pub rank: usize,
    pub mult_id: String,
}

/// A member of the final non-dominated set after re-training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalEntry {
    pub id: u64,
    pub generation: usize,
    /// f1 measured during the search.
    pub estimated_accuracy: f64,
    /// f1 after re-training; equals the estimate when re-training is off.
    pub final_accuracy: f64,
    pub params: u64,
    pub n_mult: u64,
    pub mult_id: String,
    pub mult_energy_pj: f64,
    pub energy_uj: f64,
    pub genotype: Genotype,
    /// Layer-graph pretty-print.
    pub network: String,
    #[serde(default)]
    pub retrain_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoArchive {
    pub objectives: Vec<Objective>,
    pub records: Vec<EvalRecord>,
    pub population: Vec<PopulationPoint>,
    pub final_front: Vec<FinalEntry>,
}

impl ParetoArchive {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("archive serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MoeaError> {
        serde_json::from_str(text).map_err(|e| MoeaError::Data(format!("archive: {e}")))
    }

    /// Records whose search fitness places them in the final front.
    pub fn final_records(&self) -> Vec<&EvalRecord> {
        self.final_front.iter().filter_map(|f| self.records.iter().find(|r| r.id == f.id)).collect()
    }

    /// No two members of the final front dominate each other under the
    /// search fitness.
    pub fn final_front_is_sound(&self) -> bool {
        let recs = self.final_records();
        recs.iter().all(|a| recs.iter().all(|b| !a.fitness().dominates(&b.fitness(), &self.objectives)))
    }

    /// Number of candidate evaluations.
    pub fn evaluations(&self) -> usize {
        self.records.len()
    }
}
