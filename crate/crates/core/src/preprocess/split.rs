use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{DatasetManifest, Split};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitRatios {
    /// Partition sizes by largest remainder: every part is floored, then the
    /// leftover tiles go to the parts with the largest fractional share
    /// (ties favour test, then validation). Each part stays within one tile
    /// of its exact share.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let exact = [self.train, self.val, self.test].map(|r| r * n as f64);
        // nudge so that e.g. 0.7 * 4000 = 2799.999… floors to 2800
        let mut parts = exact.map(|e| (e + 1e-9).floor() as usize);
        let mut left = n.saturating_sub(parts.iter().sum());
        let mut order = [2usize, 1, 0];
        order.sort_by(|&a, &b| {
            let fa = exact[a] - parts[a] as f64;
            let fb = exact[b] - parts[b] as f64;
            fb.partial_cmp(&fa).unwrap_or(std::cmp::Ordering::Equal)
        });
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            parts[i] += 1;
            left -= 1;
        }
        (parts[0], parts[1], parts[2])
    }

    fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must be non-negative and sum to 1, got {parts:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub assignment: BTreeMap<String, Split>,
    pub ratios: SplitRatios,
    pub seed: u64,
}

impl SplitAssignment {
    pub fn count(&self, split: Split) -> usize {
        self.assignment.values().filter(|&&s| s == split).count()
    }

    /// Stamp the assignment onto every manifest entry (all periods of a tile
    /// share its split).
    pub fn apply(&self, manifest: &mut DatasetManifest) {
        for e in &mut manifest.entries {
            e.split = self.assignment.get(&e.tile_id).copied();
        }
    }
}

/// Seeded shuffle of the sorted tile ids, then a contiguous partition.
pub fn split_tiles(tile_ids: &[String], ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    ratios.validate()?;
    let mut ids = tile_ids.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() < 3 {
        return Err(Error::Data(format!(
            "need at least 3 tiles to split, got {}",
            ids.len()
        )));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train, val, _) = ratios.counts(ids.len());
    let assignment = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            (id, split)
        })
        .collect();
    Ok(SplitAssignment {
        assignment,
        ratios,
        seed,
    })
}

pub fn split_dataset(
    manifest: &DatasetManifest,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitAssignment> {
    split_tiles(&manifest.tile_ids(), ratios, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("t{i:05}")).collect()
    }

    #[test]
    fn four_thousand_tiles() {
        let s = split_tiles(&ids(4000), SplitRatios::default(), 1).unwrap();
        assert_eq!(
            (s.count(Split::Train), s.count(Split::Val), s.count(Split::Test)),
            (2800, 600, 600)
        );
    }

    #[test]
    fn ten_tiles_floor_rule() {
        let s = split_tiles(&ids(10), SplitRatios::default(), 1).unwrap();
        assert_eq!(
            (s.count(Split::Train), s.count(Split::Val), s.count(Split::Test)),
            (7, 1, 2)
        );
    }

    #[test]
    fn deterministic_per_seed() {
        let a = split_tiles(&ids(50), SplitRatios::default(), 9).unwrap();
        let b = split_tiles(&ids(50), SplitRatios::default(), 9).unwrap();
        assert_eq!(a, b);
        let c = split_tiles(&ids(50), SplitRatios::default(), 10).unwrap();
        assert_ne!(a.assignment, c.assignment);
    }

    #[test]
    fn exhaustive_and_disjoint() {
        for n in 3..60 {
            let s = split_tiles(&ids(n), SplitRatios::default(), n as u64).unwrap();
            assert_eq!(s.assignment.len(), n);
            assert!((s.count(Split::Train) as f64 - 0.7 * n as f64).abs() < 1.0);
            assert!((s.count(Split::Val) as f64 - 0.15 * n as f64).abs() < 1.0);
            assert!((s.count(Split::Test) as f64 - 0.15 * n as f64).abs() < 1.0);
        }
    }

    #[test]
    fn rejects_tiny_and_bad_ratios() {
        assert!(split_tiles(&ids(2), SplitRatios::default(), 0).is_err());
        let bad = SplitRatios {
            train: 0.8,
            val: 0.15,
            test: 0.15,
        };
        assert!(split_tiles(&ids(10), bad, 0).is_err());
    }
}
