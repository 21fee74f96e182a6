use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Category, RoadFrame};
use crate::error::{Error, Result};
use crate::kv::KvMap;

/// Number of training frames drawn from the 289 labelled KITTI ROAD frames.
pub const DEFAULT_TRAIN_FRAMES: usize = 240;

/// Disjoint train/validation frame ids covering every available frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub seed: u64,
}

/// Splits `total` into integer parts proportional to `weights`; leftover
/// units go to the largest fractional remainders (earlier entry on ties).
pub(crate) fn largest_remainder(total: usize, weights: &[usize]) -> Vec<usize> {
    let sum: usize = weights.iter().sum();
    if sum == 0 {
        return vec![0; weights.len()];
    }
    let mut parts: Vec<usize> = weights.iter().map(|&w| total * w / sum).collect();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    // remainder numerators compare exactly without floating point
    order.sort_by_key(|&i| std::cmp::Reverse(total * weights[i] % sum));
    let assigned: usize = parts.iter().sum();
    for &i in order.iter().take(total - assigned) {
        parts[i] += 1;
    }
    parts
}

impl SplitSpec {
    /// Seeded split stratified by category: each category contributes its
    /// proportional share of `n_train` (largest-remainder rounding), chosen
    /// by a seeded shuffle of its sorted ids. Everything else is validation.
    pub fn stratified(frames: &[RoadFrame], n_train: usize, seed: u64) -> Result<Self> {
        let entries: Vec<(String, Category)> =
            frames.iter().map(|f| (f.frame_id.clone(), f.category)).collect();
        Self::stratified_ids(&entries, n_train, seed)
    }

    pub fn stratified_ids(entries: &[(String, Category)], n_train: usize, seed: u64) -> Result<Self> {
        if n_train > entries.len() {
            return Err(Error::Dataset(format!(
                "cannot draw {n_train} training frames from {}",
                entries.len()
            )));
        }
        let mut by_cat: BTreeMap<Category, Vec<String>> = BTreeMap::new();
        for (id, cat) in entries {
            by_cat.entry(*cat).or_default().push(id.clone());
        }
        let sizes: Vec<usize> = by_cat.values().map(Vec::len).collect();
        let quotas = largest_remainder(n_train, &sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut train_ids, mut val_ids) = (Vec::new(), Vec::new());
        for (mut ids, quota) in by_cat.into_values().zip(quotas) {
            ids.sort();
            ids.shuffle(&mut rng);
            val_ids.extend(ids.split_off(quota));
            train_ids.extend(ids);
        }
        train_ids.sort();
        val_ids.sort();
        Ok(Self { train_ids, val_ids, seed })
    }

    /// `seed`, `train` and `val` entries; id lists are comma separated.
    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::new();
        kv.set("seed", self.seed)
            .set("train", self.train_ids.join(","))
            .set("val", self.val_ids.join(","));
        kv
    }

    pub fn from_kv(kv: &KvMap) -> Result<Self> {
        let ids = |key: &str| -> Result<Vec<String>> {
            let list = kv
                .get_str(key)
                .ok_or_else(|| Error::Config(format!("split file has no {key} entry")))?;
            Ok(list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect())
        };
        Ok(Self {
            train_ids: ids("train")?,
            val_ids: ids("val")?,
            seed: kv.get("seed")?.unwrap_or(0),
        })
    }
}

/// Partitions `frames` according to `spec`, checking that the spec's ids are
/// disjoint and cover exactly the given frames.
pub fn split_train_val(
    frames: Vec<RoadFrame>,
    spec: &SplitSpec,
) -> Result<(Vec<RoadFrame>, Vec<RoadFrame>)> {
    let train: BTreeSet<&str> = spec.train_ids.iter().map(String::as_str).collect();
    let val: BTreeSet<&str> = spec.val_ids.iter().map(String::as_str).collect();
    if let Some(id) = train.intersection(&val).next() {
        return Err(Error::Dataset(format!("frame {id} is in both train and validation")));
    }
    let available: BTreeSet<&str> = frames.iter().map(|f| f.frame_id.as_str()).collect();
    let listed: BTreeSet<&str> = train.union(&val).copied().collect();
    if available != listed {
        let missing = listed.difference(&available).next();
        let unlisted = available.difference(&listed).next();
        return Err(Error::Dataset(format!(
            "split does not match the frames (listed but absent: {missing:?}, present but unlisted: {unlisted:?})"
        )));
    }
    let (tr, va): (Vec<_>, Vec<_>) = frames
        .into_iter()
        .partition(|f| train.contains(f.frame_id.as_str()));
    Ok((tr, va))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn largest_remainder_hands_out_leftovers() {
        assert_eq!(largest_remainder(240, &[95, 96, 98]), vec![79, 80, 81]);
        assert_eq!(largest_remainder(2, &[95, 96, 98]), vec![0, 1, 1]);
        assert_eq!(largest_remainder(289, &[95, 96, 98]), vec![95, 96, 98]);
        assert_eq!(largest_remainder(5, &[0, 0]), vec![0, 0]);
    }
}
