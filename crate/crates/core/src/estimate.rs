//! Values of norm-type functionals together with how they were obtained.

use crate::grid::CubeId;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateKind {
    ExactSup,
    LowerBound,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Witness {
    None,
    Cubes { cubes: Vec<CubeId> },
    Sequence { cubes: Vec<CubeId>, coeffs: Vec<f64> },
    Pairs { pairs: Vec<(CubeId, CubeId)>, a: Vec<f64>, b: Vec<f64> },
    /// Function values at the atoms of the relevant measure, in storage order.
    Function { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub name: String,
    pub value: f64,
    pub kind: EstimateKind,
    pub witness: Witness,
    pub family: String,
    pub seed: Option<u64>,
}

impl ConstantEstimate {
    pub fn exact(name: &str, value: f64, witness: Witness, family: impl Into<String>) -> Self {
        ConstantEstimate { name: name.into(), value, kind: EstimateKind::ExactSup, witness, family: family.into(), seed: None }
    }

    pub fn lower(name: &str, value: f64, witness: Witness, family: impl Into<String>, seed: u64) -> Self {
        ConstantEstimate {
            name: name.into(),
            value,
            kind: EstimateKind::LowerBound,
            witness,
            family: family.into(),
            seed: Some(seed),
        }
    }

    pub fn csv_header() -> &'static str {
        "name,value,kind,family,witness,seed"
    }

    pub fn csv_row(&self) -> String {
        let kind = match self.kind {
            EstimateKind::ExactSup => "exact-sup",
            EstimateKind::LowerBound => "lower-bound",
        };
        let wit = match &self.witness {
            Witness::None => String::new(),
            Witness::Cubes { cubes } => cubes.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" "),
            Witness::Sequence { cubes, .. } => format!("{} cubes", cubes.len()),
            Witness::Pairs { pairs, .. } => {
                if pairs.len() == 1 {
                    format!("{}|{}", pairs[0].0, pairs[0].1)
                } else {
                    format!("{} pairs", pairs.len())
                }
            }
            Witness::Function { values } => format!("function on {} atoms", values.len()),
        };
        let seed = self.seed.map(|s| s.to_string()).unwrap_or_default();
        format!("{},{:.17e},{},\"{}\",\"{}\",{}", self.name, self.value, kind, self.family, wit, seed)
    }
}
