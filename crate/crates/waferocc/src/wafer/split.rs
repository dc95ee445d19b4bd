//! Table-3-style dataset splitting.
//!
//! Train takes floor(80%) of the None maps and nothing else. Valid takes
//! floor(10%) of None plus floor(50%) of each defect class. Whatever
//! remains goes to test, so the three splits partition the input exactly.

use super::{WaferLabel, WaferMap};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train_none: f64,
    pub valid_none: f64,
    pub valid_defect: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train_none: 0.8,
            valid_none: 0.1,
            valid_defect: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<WaferMap>,
    pub valid: Vec<WaferMap>,
    pub test: Vec<WaferMap>,
    pub seed: u64,
    pub ratios: SplitRatios,
}

pub fn split_dataset(maps: Vec<WaferMap>, seed: u64) -> Result<DatasetSplit> {
    let ratios = SplitRatios::default();
    if maps.iter().any(|m| m.label == WaferLabel::Unlabeled) {
        return Err(Error::Data(
            "dataset contains Unlabeled maps; label them before splitting".into(),
        ));
    }

    // stable per-class index lists, shuffled with a per-class stream
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 9];
    for (i, m) in maps.iter().enumerate() {
        by_class[m.label.code() as usize].push(i);
    }
    if by_class[0].is_empty() {
        return Err(Error::Data("empty None class; nothing to train on".into()));
    }

    let mut train_idx = Vec::new();
    let mut valid_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (code, idxs) in by_class.iter_mut().enumerate() {
        if idxs.is_empty() {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(code as u64);
        idxs.shuffle(&mut rng);
        let n = idxs.len();
        if code == 0 {
            let n_train = (ratios.train_none * n as f64).floor() as usize;
            let n_valid = (ratios.valid_none * n as f64).floor() as usize;
            train_idx.extend(&idxs[..n_train]);
            valid_idx.extend(&idxs[n_train..n_train + n_valid]);
            test_idx.extend(&idxs[n_train + n_valid..]);
        } else {
            let n_valid = (ratios.valid_defect * n as f64).floor() as usize;
            valid_idx.extend(&idxs[..n_valid]);
            test_idx.extend(&idxs[n_valid..]);
        }
    }

    // pull maps out by index without cloning; order within each split is
    // class-major then shuffled order, itself seed-determined
    let mut slots: Vec<Option<WaferMap>> = maps.into_iter().map(Some).collect();
    let grab = |idxs: &[usize], slots: &mut Vec<Option<WaferMap>>| {
        idxs.iter()
            .map(|&i| slots[i].take().expect("each index used once"))
            .collect::<Vec<_>>()
    };
    let train = grab(&train_idx, &mut slots);
    let valid = grab(&valid_idx, &mut slots);
    let test = grab(&test_idx, &mut slots);

    Ok(DatasetSplit {
        train,
        valid,
        test,
        seed,
        ratios,
    })
}
