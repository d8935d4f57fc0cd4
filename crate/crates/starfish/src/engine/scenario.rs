use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::core::{Amount, Round};

use super::behavior::Behavior;
use super::party::Command;

/// Scenario script: the environment's schedule of commands plus the
/// adversary assignment. This is the JSON format consumed by `trace`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub delta: u64,
    pub parties: Vec<String>,
    #[serde(default)]
    pub funding: BTreeMap<String, Amount>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: Vec<ScheduleEntry>,
    #[serde(default)]
    pub adversary: BTreeMap<String, Behavior>,
    #[serde(default)]
    pub max_rounds: Option<Round>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub round: Round,
    pub party: String,
    #[serde(flatten)]
    pub op: Command,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("delta must be at least 1")]
    BadDelta,
    #[error("schedule entry {index}: unknown party {party}")]
    UnknownParty { index: usize, party: String },
    #[error("adversary assignment references unknown party {party}")]
    UnknownAdversary { party: String },
    #[error("funding references unknown party {party}")]
    UnknownFunding { party: String },
    #[error("duplicate party {party}")]
    DuplicateParty { party: String },
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.delta == 0 {
            return Err(ScenarioError::BadDelta);
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.parties {
            if !seen.insert(p) {
                return Err(ScenarioError::DuplicateParty { party: p.clone() });
            }
        }
        for (index, entry) in self.schedule.iter().enumerate() {
            if !self.parties.contains(&entry.party) {
                return Err(ScenarioError::UnknownParty {
                    index,
                    party: entry.party.clone(),
                });
            }
        }
        for p in self.adversary.keys() {
            if !self.parties.contains(p) {
                return Err(ScenarioError::UnknownAdversary { party: p.clone() });
            }
        }
        for p in self.funding.keys() {
            if !self.parties.contains(p) {
                return Err(ScenarioError::UnknownFunding { party: p.clone() });
            }
        }
        Ok(())
    }
}
