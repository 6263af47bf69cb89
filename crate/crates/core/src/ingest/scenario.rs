use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::RasterChip;

/// One input product in the ingestion layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    S1,
    S2,
    Cp,
    Fnf,
}

impl Source {
    pub const ALL: [Source; 4] = [Source::S1, Source::S2, Source::Cp, Source::Fnf];

    pub fn dir_name(self) -> &'static str {
        match self {
            Source::S1 => "s1",
            Source::S2 => "s2",
            Source::Cp => "cp",
            Source::Fnf => "fnf",
        }
    }

    /// Band names carried by a feature source.
    pub fn bands(self) -> &'static [&'static str] {
        match self {
            Source::S1 => &["VV", "VH"],
            Source::S2 => &["B2", "B3", "B4", "B8"],
            Source::Cp => &["CP"],
            Source::Fnf => &["FNF"],
        }
    }

    pub fn from_dir_name(name: &str) -> Option<Source> {
        Source::ALL.into_iter().find(|s| s.dir_name() == name)
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

/// Named band-composition recipe fixing the model's input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScenarioSpec {
    #[serde(rename = "S1")]
    S1,
    #[serde(rename = "S2")]
    S2,
    #[serde(rename = "S1-2")]
    S12,
    #[serde(rename = "S1-2-CP")]
    S12Cp,
}

impl ScenarioSpec {
    pub const ALL: [ScenarioSpec; 4] = [
        ScenarioSpec::S1,
        ScenarioSpec::S2,
        ScenarioSpec::S12,
        ScenarioSpec::S12Cp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioSpec::S1 => "S1",
            ScenarioSpec::S2 => "S2",
            ScenarioSpec::S12 => "S1-2",
            ScenarioSpec::S12Cp => "S1-2-CP",
        }
    }

    pub fn sources(self) -> &'static [Source] {
        match self {
            ScenarioSpec::S1 => &[Source::S1],
            ScenarioSpec::S2 => &[Source::S2],
            ScenarioSpec::S12 => &[Source::S1, Source::S2],
            ScenarioSpec::S12Cp => &[Source::S1, Source::S2, Source::Cp],
        }
    }

    pub fn bands(self) -> Vec<&'static str> {
        self.sources()
            .iter()
            .flat_map(|s| s.bands().iter().copied())
            .collect()
    }

    /// Input channel count: 2, 4, 6 or 7.
    pub fn arity(self) -> usize {
        self.sources().iter().map(|s| s.bands().len()).sum()
    }

    pub fn from_arity(channels: usize) -> Option<ScenarioSpec> {
        ScenarioSpec::ALL.into_iter().find(|s| s.arity() == channels)
    }
}

impl fmt::Display for ScenarioSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioSpec::ALL
            .into_iter()
            .find(|sc| sc.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!("unknown scenario `{s}` (expected S1, S2, S1-2, S1-2-CP)"))
            })
    }
}

/// Concatenate the scenario's sources along the channel axis, in scenario band order.
pub fn assemble_scenario(
    sources: &BTreeMap<Source, RasterChip>,
    spec: ScenarioSpec,
) -> Result<RasterChip> {
    let mut parts = Vec::with_capacity(spec.sources().len());
    for &source in spec.sources() {
        let chip = sources
            .get(&source)
            .ok_or_else(|| Error::MissingSource(source.to_string()))?;
        if let Some(first) = parts.first() {
            let first: &RasterChip = first;
            first
                .grid()
                .ensure_aligned(chip.grid(), &format!("source `{source}`"))?;
        }
        parts.push(chip.select(source.bands())?);
    }
    let grid = parts[0].grid().clone();
    let views: Vec<_> = parts.iter().map(|p| p.bands().view()).collect();
    let bands = concatenate(Axis(2), &views).expect("aligned grids concatenate");
    RasterChip::new(
        grid,
        bands,
        spec.bands().into_iter().map(String::from).collect(),
    )
}
