//! Month x country split structure.
//!
//! Every (month, country) cell is split three times: a global-test holdout,
//! a global-train shard taken from the remainder, and a local train/test
//! split of what is left. Global test sets accumulate across all cells,
//! local test sets per country.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encode::SequenceRecord;
use crate::error::{Error, Result};
use crate::seeds::derived_rng;

pub const SEEDING_SCHEME: &str =
    "each (month, country, stage) cell shuffles with ChaCha8 seeded by SHA-256(seed, \"split\", month, country, stage); \
     stages are gt, gtr, lt; stratified by lineage when every lineage in the cell has >= 2 members";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub global_test_fraction: f64,
    /// Fraction of the post-holdout remainder.
    pub global_train_fraction: f64,
    /// Fraction of what remains after the global-train shard.
    pub local_test_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { global_test_fraction: 0.30, global_train_fraction: 0.20, local_test_fraction: 0.20, seed: 0 }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [
            ("global_test_fraction", self.global_test_fraction),
            ("global_train_fraction", self.global_train_fraction),
            ("local_test_fraction", self.local_test_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} = {f} must lie strictly between 0 and 1")));
            }
        }
        Ok(())
    }
}

/// Index sets of one (month, country) cell, into the master record list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub month: u32,
    pub country: String,
    pub global_test: Vec<usize>,
    pub global_train: Vec<usize>,
    pub local_train: Vec<usize>,
    pub local_test: Vec<usize>,
}

impl Cell {
    pub fn len(&self) -> usize {
        self.global_test.len() + self.global_train.len() + self.local_train.len() + self.local_test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub config: SplitConfig,
    pub seeding: String,
    pub months: Vec<u32>,
    pub countries: Vec<String>,
    /// Months-outer, countries-inner.
    pub cells: Vec<Cell>,
    /// Concatenated global-test sets in cell order.
    pub global_test: Vec<usize>,
    /// Per country, its monthly local-test sets concatenated in month order.
    pub local_test: BTreeMap<String, Vec<usize>>,
}

impl PartitionPlan {
    pub fn cell(&self, month: u32, country: &str) -> Option<&Cell> {
        self.cells.iter().find(|c| c.month == month && c.country == country)
    }

    pub fn cells_for_month(&self, month: u32) -> impl Iterator<Item = &Cell> {
        self.cells.iter().filter(move |c| c.month == month)
    }

    /// Global-test indices accumulated up to and including `month`.
    pub fn global_test_through(&self, month: u32) -> Vec<usize> {
        self.cells.iter().filter(|c| c.month <= month).flat_map(|c| c.global_test.iter().copied()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(format!("plan export: {e}")))
    }
}

pub fn filter_month(records: &[SequenceRecord], month: u32) -> Vec<usize> {
    records.iter().enumerate().filter(|(_, r)| r.month == month).map(|(i, _)| i).collect()
}

pub fn filter_country(records: &[SequenceRecord], indices: &[usize], country: &str) -> Vec<usize> {
    indices.iter().copied().filter(|&i| records[i].country == country).collect()
}

/// `round(fraction * n)` with halves rounded up, except that a single
/// index always stays in the remainder.
pub fn held_out_size(n: usize, fraction: f64) -> usize {
    if n <= 1 {
        return 0;
    }
    ((fraction * n as f64 + 0.5).floor() as usize).min(n)
}

/// Shuffle `indices` and hold out `held_out_size(n, fraction)` of them.
///
/// `labels[i]` is the stratum of record `i`. When every stratum present has
/// at least two members, each stratum contributes its largest-remainder
/// share of the held-out set; otherwise the first indices of the shuffle
/// are held out.
pub fn split<R: Rng + ?Sized>(
    indices: &[usize],
    labels: &[usize],
    fraction: f64,
    rng: &mut R,
) -> (Vec<usize>, Vec<usize>) {
    let n = indices.len();
    let k = held_out_size(n, fraction);
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(rng);

    let mut strata: BTreeMap<usize, usize> = BTreeMap::new();
    for &i in indices {
        *strata.entry(labels[i]).or_default() += 1;
    }
    let stratified = !strata.is_empty() && strata.values().all(|&c| c >= 2);
    if !stratified {
        let remainder = shuffled.split_off(k);
        return (shuffled, remainder);
    }

    // Largest-remainder apportionment of k across strata.
    let mut quota: BTreeMap<usize, usize> = BTreeMap::new();
    let mut fractional: Vec<(f64, usize)> = Vec::new();
    let mut assigned = 0;
    for (&label, &count) in &strata {
        let exact = k as f64 * count as f64 / n as f64;
        let q = exact.floor() as usize;
        quota.insert(label, q);
        assigned += q;
        fractional.push((exact - q as f64, label));
    }
    fractional.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, label) in fractional.iter().cycle().take(fractional.len() * 2) {
        if assigned >= k {
            break;
        }
        if quota[&label] < strata[&label] {
            *quota.get_mut(&label).expect("present") += 1;
            assigned += 1;
        }
    }

    let mut held = Vec::with_capacity(k);
    let mut rest = Vec::with_capacity(n - k);
    for i in shuffled {
        let q = quota.get_mut(&labels[i]).expect("stratum");
        if *q > 0 {
            *q -= 1;
            held.push(i);
        } else {
            rest.push(i);
        }
    }
    (held, rest)
}

fn label_ids(records: &[SequenceRecord]) -> Vec<usize> {
    let names: BTreeSet<&str> = records.iter().map(|r| r.lineage.as_str()).collect();
    let ids: BTreeMap<&str, usize> = names.into_iter().enumerate().map(|(i, n)| (n, i)).collect();
    records.iter().map(|r| ids[r.lineage.as_str()]).collect()
}

fn build_cell(
    records: &[SequenceRecord],
    labels: &[usize],
    month_indices: &[usize],
    month: u32,
    country: &str,
    cfg: &SplitConfig,
) -> Cell {
    let rng = |stage: &str| derived_rng(cfg.seed, &["split", &month.to_string(), country, stage]);
    let total = filter_country(records, month_indices, country);
    let (global_test, rest) = split(&total, labels, cfg.global_test_fraction, &mut rng("gt"));
    let (global_train, rest) = split(&rest, labels, cfg.global_train_fraction, &mut rng("gtr"));
    let (local_test, local_train) = split(&rest, labels, cfg.local_test_fraction, &mut rng("lt"));
    Cell { month, country: country.to_string(), global_test, global_train, local_train, local_test }
}

/// Split every (month, country) cell. Cells are independent and built in
/// parallel; the accumulated test lists are assembled afterwards in
/// months-outer, countries-inner order.
pub fn build_plan(
    records: &[SequenceRecord],
    countries: &[String],
    months: &[u32],
    cfg: &SplitConfig,
) -> Result<PartitionPlan> {
    cfg.validate()?;
    if countries.is_empty() || months.is_empty() {
        return Err(Error::InvalidConfig("country list and months must be nonempty".into()));
    }
    let labels = label_ids(records);
    let by_month: Vec<Vec<usize>> = months.iter().map(|&m| filter_month(records, m)).collect();
    let jobs: Vec<(usize, &String)> = (0..months.len()).flat_map(|mi| countries.iter().map(move |c| (mi, c))).collect();
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(mi, country)| build_cell(records, &labels, &by_month[mi], months[mi], country, cfg))
        .collect();

    let global_test = cells.iter().flat_map(|c| c.global_test.iter().copied()).collect();
    let mut local_test: BTreeMap<String, Vec<usize>> = countries.iter().map(|c| (c.clone(), Vec::new())).collect();
    for cell in &cells {
        local_test.get_mut(&cell.country).expect("configured country").extend(&cell.local_test);
    }
    Ok(PartitionPlan {
        config: cfg.clone(),
        seeding: SEEDING_SCHEME.to_string(),
        months: months.to_vec(),
        countries: countries.to_vec(),
        cells,
        global_test,
        local_test,
    })
}
