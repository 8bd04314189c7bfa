//! Class subsets: a fixed list of classes, or a seeded super-class/sub-class draw.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use super::{DatasetSplit, LabeledImage};
use crate::error::{invalid, Result};
use crate::rng::rng_for;

/// Keeps images of the listed classes and relabels them `0..classes.len()` in list order.
pub fn select_classes(split: &DatasetSplit, classes: &[usize]) -> Result<DatasetSplit> {
    let mut index = BTreeMap::new();
    for (new, &old) in classes.iter().enumerate() {
        if old >= split.num_classes() {
            return Err(invalid!("class {old} out of range for {} classes", split.num_classes()));
        }
        if index.insert(old, new).is_some() {
            return Err(invalid!("class {old} listed twice"));
        }
    }
    let images = split
        .images
        .iter()
        .filter_map(|im| index.get(&im.fine_label).map(|&new| LabeledImage { fine_label: new, ..im.clone() }))
        .collect();
    let names = classes.iter().map(|&c| split.class_names[c].clone()).collect();
    Ok(DatasetSplit::with_stats(images, names, split.stats.clone()))
}

/// One selected fine class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubclassEntry {
    pub sub_id: usize,
    pub super_id: usize,
    pub original_fine: usize,
    pub original_coarse: usize,
}

/// A seeded choice of super-classes and of sub-classes within each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SuperclassSubset {
    /// Ordered by `sub_id`; sub-classes of one super-class are contiguous.
    pub entries: Vec<SubclassEntry>,
    pub n_super: usize,
}

impl SuperclassSubset {
    /// Draws `n_super` coarse classes and `n_sub` fine classes inside each.
    pub fn choose(split: &DatasetSplit, n_super: usize, n_sub: usize, seed: u64) -> Result<Self> {
        if n_super == 0 || n_sub == 0 {
            return Err(invalid!("subset needs at least one super-class and one sub-class"));
        }
        let mut hierarchy: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for im in &split.images {
            let coarse = im.coarse_label.ok_or_else(|| invalid!("super-class subset needs coarse labels"))?;
            let subs = hierarchy.entry(coarse).or_default();
            if !subs.contains(&im.fine_label) {
                subs.push(im.fine_label);
            }
        }
        let mut eligible: Vec<usize> = hierarchy.iter().filter(|(_, subs)| subs.len() >= n_sub).map(|(&c, _)| c).collect();
        if eligible.len() < n_super {
            return Err(invalid!("only {} super-classes have {n_sub} sub-classes, {n_super} requested", eligible.len()));
        }
        let mut rng = rng_for(seed, "superclass-subset");
        eligible.shuffle(&mut rng);
        let mut supers = eligible[..n_super].to_vec();
        supers.sort_unstable();
        let mut entries = Vec::with_capacity(n_super * n_sub);
        for (super_id, &coarse) in supers.iter().enumerate() {
            let mut subs = hierarchy[&coarse].clone();
            subs.sort_unstable();
            subs.shuffle(&mut rng);
            let mut chosen = subs[..n_sub].to_vec();
            chosen.sort_unstable();
            for fine in chosen {
                entries.push(SubclassEntry { sub_id: entries.len(), super_id, original_fine: fine, original_coarse: coarse });
            }
        }
        Ok(Self { entries, n_super })
    }

    pub fn num_classes(&self) -> usize {
        self.entries.len()
    }

    /// Super-class of each sub-class id.
    pub fn super_of(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.super_id).collect()
    }

    /// Restricts a split to the chosen classes, with re-indexed fine and coarse labels.
    pub fn apply(&self, split: &DatasetSplit) -> DatasetSplit {
        let by_fine: BTreeMap<usize, &SubclassEntry> = self.entries.iter().map(|e| (e.original_fine, e)).collect();
        let images = split
            .images
            .iter()
            .filter_map(|im| {
                by_fine.get(&im.fine_label).map(|e| LabeledImage {
                    pixels: im.pixels.clone(),
                    fine_label: e.sub_id,
                    coarse_label: Some(e.super_id),
                })
            })
            .collect();
        let names = self
            .entries
            .iter()
            .map(|e| split.class_names.get(e.original_fine).cloned().unwrap_or_else(|| format!("class_{}", e.original_fine)))
            .collect();
        DatasetSplit::with_stats(images, names, split.stats.clone())
    }

    /// One line per sub-class: `<sub_id> <super_id> <original_fine> <original_coarse>`.
    pub fn mapping_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let _ = writeln!(out, "{} {} {} {}", e.sub_id, e.super_id, e.original_fine, e.original_coarse);
        }
        out
    }

    pub fn parse_mapping(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<usize> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| invalid!("mapping line {}: {e}", n + 1))?;
            let [sub_id, super_id, original_fine, original_coarse] = f[..] else {
                return Err(invalid!("mapping line {} needs four fields", n + 1));
            };
            if sub_id != entries.len() {
                return Err(invalid!("mapping line {} has sub_id {sub_id}, expected {}", n + 1, entries.len()));
            }
            entries.push(SubclassEntry { sub_id, super_id, original_fine, original_coarse });
        }
        let n_super = entries.iter().map(|e| e.super_id + 1).max().unwrap_or(0);
        Ok(Self { entries, n_super })
    }
}

/// Draws a subset and applies it to `split`.
pub fn sample_superclass_subset(
    split: &DatasetSplit,
    n_super: usize,
    n_sub_per_super: usize,
    seed: u64,
) -> Result<(DatasetSplit, SuperclassSubset)> {
    let subset = SuperclassSubset::choose(split, n_super, n_sub_per_super, seed)?;
    Ok((subset.apply(split), subset))
}
