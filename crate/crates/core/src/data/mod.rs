//! Mortality data: age grids, population labels, HMD and canonical CSV ingestion,
//! population hierarchies and the validated [`MortalityDataset`].

mod canonical;
mod dataset;
mod hierarchy;
mod hmd;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use canonical::{read_canonical_csv, write_canonical_csv};
pub use dataset::{load_dataset, HmdSource, MortalityDataset, Population};
pub use hierarchy::{Hierarchy, HierarchyNode};
pub use hmd::{aggregate_open_age, parse_hmd_table, HmdTable, TableKind};

/// Ordered age grid. Each entry is the (integer) label of a single-year age group,
/// and when `open_ended_last` is set the final entry stands for every age at or
/// above it ("95+").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeGrid {
    ages: Vec<f64>,
    open_ended_last: bool,
}

impl AgeGrid {
    pub fn new(ages: Vec<f64>, open_ended_last: bool) -> Result<Self> {
        if ages.len() < 2 {
            return Err(Error::Structure(format!("age grid needs at least 2 ages, got {}", ages.len())));
        }
        if ages.iter().any(|a| !a.is_finite()) {
            return Err(Error::Structure("age grid contains non-finite ages".into()));
        }
        if ages.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Structure("age grid must be strictly increasing".into()));
        }
        Ok(Self { ages, open_ended_last })
    }

    /// Single years `first..=last`, with `last` treated as an open-ended group.
    pub fn single_years(first: u32, last: u32, open_ended_last: bool) -> Result<Self> {
        Self::new((first..=last).map(f64::from).collect(), open_ended_last)
    }

    pub fn ages(&self) -> &[f64] {
        &self.ages
    }

    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    pub fn open_ended_last(&self) -> bool {
        self.open_ended_last
    }

    /// Width of each closed age group (distance to the next grid point). The
    /// last group takes the width of the previous one.
    pub fn widths(&self) -> Vec<f64> {
        let p = self.ages.len();
        (0..p)
            .map(|i| if i + 1 < p { self.ages[i + 1] - self.ages[i] } else { self.ages[p - 1] - self.ages[p - 2] })
            .collect()
    }

    /// Text label for age index `i` as used in files ("95+" for the open group).
    pub fn label(&self, i: usize) -> String {
        let a = self.ages[i];
        let base = if a.fract() == 0.0 { format!("{}", a as i64) } else { format!("{a}") };
        if self.open_ended_last && i + 1 == self.ages.len() {
            format!("{base}+")
        } else {
            base
        }
    }

    /// Index of the first grid point at or above `age`, if any.
    pub fn index_at_or_above(&self, age: f64) -> Option<usize> {
        self.ages.iter().position(|&a| a >= age)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
    Total,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Female => "female",
            Sex::Male => "male",
            Sex::Total => "total",
        })
    }
}

impl FromStr for Sex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "female" | "f" => Ok(Sex::Female),
            "male" | "m" => Ok(Sex::Male),
            "total" | "t" => Ok(Sex::Total),
            other => Err(Error::Argument(format!("unknown sex '{other}'"))),
        }
    }
}

/// Identifies one population series. Written as `name:sex` or `name:sex:region`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PopulationLabel {
    pub name: String,
    pub sex: Sex,
    pub region: Option<String>,
}

impl PopulationLabel {
    pub fn new(name: impl Into<String>, sex: Sex, region: Option<String>) -> Self {
        Self { name: name.into(), sex, region }
    }
}

impl fmt::Display for PopulationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.region {
            Some(r) => write!(f, "{}:{}:{}", self.name, self.sex, r),
            None => write!(f, "{}:{}", self.name, self.sex),
        }
    }
}

impl FromStr for PopulationLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [name, sex] => Ok(Self::new(*name, sex.parse()?, None)),
            [name, sex, region] => Ok(Self::new(*name, sex.parse()?, Some((*region).to_string()))),
            _ => Err(Error::Argument(format!("population label '{s}' is not name:sex[:region]"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagReason {
    ZeroRate,
    Missing,
    Imputed,
}

/// Marks a cell that was missing, zero, or replaced during ingestion.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellFlag {
    pub year: i32,
    pub age_index: usize,
    pub reason: FlagReason,
}
