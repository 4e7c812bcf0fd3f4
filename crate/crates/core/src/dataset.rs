use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Source corpus of a trial; selects label thresholds and preprocessing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetTag {
    Amigos,
    Deap,
    Synthetic,
}

impl DatasetTag {
    /// Binarization threshold shared by valence and arousal.
    pub fn label_threshold(self) -> f64 {
        match self {
            DatasetTag::Amigos | DatasetTag::Synthetic => 4.5,
            DatasetTag::Deap => 5.0,
        }
    }

    /// Whether the first second of every physiological recording is dropped.
    pub fn trims_head(self) -> bool {
        self == DatasetTag::Amigos
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetTag::Amigos => "amigos",
            DatasetTag::Deap => "deap",
            DatasetTag::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "amigos" => Ok(DatasetTag::Amigos),
            "deap" => Ok(DatasetTag::Deap),
            "synthetic" => Ok(DatasetTag::Synthetic),
            other => Err(Error::Config(format!("unknown dataset tag '{other}' (amigos|deap|synthetic)"))),
        }
    }
}
