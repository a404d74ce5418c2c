use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

pub const PATCH_SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Excluded,
}

/// One square window of the domain grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchIndex {
    pub id: usize,
    pub grid_row: usize,
    pub grid_col: usize,
    /// First pixel row of the window.
    pub row0: usize,
    /// First pixel column of the window.
    pub col0: usize,
    pub size: usize,
    pub split: Split,
}

impl PatchIndex {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..self.row0 + self.size).contains(&row)
            && (self.col0..self.col0 + self.size).contains(&col)
    }
}

/// Tiles a `width x height` domain into row-major `size x size` patches,
/// all labelled [`Split::Excluded`] until a split is applied.
pub fn make_patches(width: usize, height: usize, size: usize) -> Result<Vec<PatchIndex>> {
    if size == 0 || width == 0 || height == 0 || width % size != 0 || height % size != 0 {
        bail!(
            Config,
            "domain {width}x{height} is not divisible into {size}x{size} patches"
        );
    }
    let cols = width / size;
    let rows = height / size;
    Ok((0..rows * cols)
        .map(|id| PatchIndex {
            id,
            grid_row: id / cols,
            grid_col: id % cols,
            row0: (id / cols) * size,
            col0: (id % cols) * size,
            size,
            split: Split::Excluded,
        })
        .collect())
}

/// How patches are assigned to splits. Ids not listed are excluded.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum SplitSpec {
    Explicit {
        train: Vec<usize>,
        val: Vec<usize>,
        test: Vec<usize>,
    },
    Random {
        train: usize,
        val: usize,
        test: usize,
        seed: u64,
    },
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec::Random {
            train: 48,
            val: 5,
            test: 6,
            seed: 0,
        }
    }
}

pub fn split_patches(patches: &[PatchIndex], spec: &SplitSpec) -> Result<Vec<PatchIndex>> {
    let n = patches.len();
    let (train, val, test) = match spec {
        SplitSpec::Explicit { train, val, test } => (train.clone(), val.clone(), test.clone()),
        SplitSpec::Random {
            train,
            val,
            test,
            seed,
        } => {
            if train + val + test > n {
                bail!(
                    Config,
                    "split counts {train}+{val}+{test} exceed {n} patches"
                );
            }
            let mut ids: Vec<usize> = patches.iter().map(|p| p.id).collect();
            ids.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            let test_ids = ids[..*test].to_vec();
            let val_ids = ids[*test..test + val].to_vec();
            let train_ids = ids[test + val..test + val + train].to_vec();
            (train_ids, val_ids, test_ids)
        }
    };
    let known: BTreeSet<usize> = patches.iter().map(|p| p.id).collect();
    let mut seen = BTreeSet::new();
    for id in train.iter().chain(&val).chain(&test) {
        if !known.contains(id) {
            bail!(Config, "split references unknown patch id {id}");
        }
        if !seen.insert(*id) {
            bail!(Config, "patch id {id} appears in more than one split slot");
        }
    }
    Ok(patches
        .iter()
        .map(|p| {
            let split = if train.contains(&p.id) {
                Split::Train
            } else if val.contains(&p.id) {
                Split::Val
            } else if test.contains(&p.id) {
                Split::Test
            } else {
                Split::Excluded
            };
            PatchIndex { split, ..p.clone() }
        })
        .collect())
}

pub fn patches_in(patches: &[PatchIndex], split: Split) -> Vec<PatchIndex> {
    patches.iter().filter(|p| p.split == split).cloned().collect()
}
