//! Synthetic spike-like corpora.
//!
//! A random ancestral protein is shared by all lineages. Each lineage owns a
//! disjoint set of signature substitutions; every sample carries its
//! lineage's signatures plus a few random substitutions elsewhere.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encode::{SequenceRecord, CANONICAL_AMINO_ACIDS};
use crate::error::{Error, Result};
use crate::seeds::derived_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineageSpec {
    pub name: String,
    pub signature_mutations: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountrySpec {
    pub name: String,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub ancestral_length: usize,
    pub lineages: Vec<LineageSpec>,
    pub countries: Vec<CountrySpec>,
    pub months: u32,
    pub total_samples: usize,
    pub noise_mutations_per_sample: usize,
    /// Lineage `i` of `L` first appears in month `i * months / L`.
    pub month_ramp: bool,
    pub seed: u64,
}

/// Lineages with their spike signature-mutation counts and sequence counts.
pub const SURVEILLANCE_LINEAGES: [(&str, usize, f64); 5] = [
    ("Alpha", 8, 593236.0),
    ("Beta", 9, 7746.0),
    ("Delta", 8, 69886.0),
    ("Gamma", 10, 16471.0),
    ("Epsilon", 3, 11993.0),
];

/// Countries with their sequence counts.
pub const SURVEILLANCE_COUNTRIES: [(&str, f64); 8] = [
    ("England", 245695.0),
    ("USA", 190851.0),
    ("Germany", 72149.0),
    ("Denmark", 59353.0),
    ("Sweden", 39536.0),
    ("Scotland", 38054.0),
    ("Netherlands", 27504.0),
    ("France", 26185.0),
];

impl SyntheticSpec {
    /// Five lineages and eight countries with the real corpus' proportions,
    /// 6 months, 8000 samples of length 1274.
    pub fn surveillance_shaped(seed: u64) -> Self {
        Self {
            ancestral_length: 1274,
            lineages: SURVEILLANCE_LINEAGES
                .iter()
                .map(|&(name, sig, freq)| LineageSpec { name: name.into(), signature_mutations: sig, frequency: freq })
                .collect(),
            countries: SURVEILLANCE_COUNTRIES
                .iter()
                .map(|&(name, freq)| CountrySpec { name: name.into(), frequency: freq })
                .collect(),
            months: 6,
            total_samples: 8000,
            noise_mutations_per_sample: 2,
            month_ramp: false,
            seed,
        }
    }

    pub fn label_set(&self) -> Vec<String> {
        self.lineages.iter().map(|l| l.name.clone()).collect()
    }

    pub fn country_list(&self) -> Vec<String> {
        self.countries.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::SpecInfeasible(m));
        if self.ancestral_length == 0 || self.months == 0 || self.total_samples == 0 {
            return bad("ancestral_length, months and total_samples must be positive".into());
        }
        if self.lineages.is_empty() || self.countries.is_empty() {
            return bad("need at least one lineage and one country".into());
        }
        if let Some(l) = self.lineages.iter().find(|l| !(l.frequency > 0.0 && l.frequency.is_finite())) {
            return bad(format!("lineage `{}` has non-positive frequency", l.name));
        }
        if let Some(c) = self.countries.iter().find(|c| !(c.frequency > 0.0 && c.frequency.is_finite())) {
            return bad(format!("country `{}` has non-positive frequency", c.name));
        }
        let signatures: usize = self.lineages.iter().map(|l| l.signature_mutations).sum();
        if signatures > self.ancestral_length {
            return bad(format!("{signatures} signature positions do not fit in length {}", self.ancestral_length));
        }
        if self.noise_mutations_per_sample > self.ancestral_length - signatures {
            return bad(format!(
                "{} noise mutations exceed the {} non-signature positions",
                self.noise_mutations_per_sample,
                self.ancestral_length - signatures
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub ancestral: Vec<char>,
    /// Per lineage, its `(position, residue)` substitutions.
    pub signatures: Vec<Vec<(usize, char)>>,
    pub records: Vec<SequenceRecord>,
}

fn substitute<R: Rng + ?Sized>(original: char, rng: &mut R) -> char {
    let alphabet: Vec<char> = CANONICAL_AMINO_ACIDS.chars().filter(|&c| c != original).collect();
    *alphabet.choose(rng).expect("19 alternatives")
}

pub fn generate(spec: &SyntheticSpec) -> Result<Vec<SequenceRecord>> {
    Ok(generate_corpus(spec)?.records)
}

pub fn generate_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let residues: Vec<char> = CANONICAL_AMINO_ACIDS.chars().collect();
    let mut rng = derived_rng(spec.seed, &["ancestral"]);
    let ancestral: Vec<char> =
        (0..spec.ancestral_length).map(|_| *residues.choose(&mut rng).expect("nonempty")).collect();

    let mut rng = derived_rng(spec.seed, &["signatures"]);
    let mut positions: Vec<usize> = (0..spec.ancestral_length).collect();
    positions.shuffle(&mut rng);
    let mut signatures = Vec::with_capacity(spec.lineages.len());
    let mut cursor = 0;
    for lineage in &spec.lineages {
        let mut sig: Vec<(usize, char)> = positions[cursor..cursor + lineage.signature_mutations]
            .iter()
            .map(|&p| (p, substitute(ancestral[p], &mut rng)))
            .collect();
        sig.sort_unstable();
        cursor += lineage.signature_mutations;
        signatures.push(sig);
    }
    let mut free: Vec<usize> = positions[cursor..].to_vec();
    free.sort_unstable();

    let lineage_dist = WeightedIndex::new(spec.lineages.iter().map(|l| l.frequency))
        .map_err(|e| Error::SpecInfeasible(e.to_string()))?;
    let country_dist = WeightedIndex::new(spec.countries.iter().map(|c| c.frequency))
        .map_err(|e| Error::SpecInfeasible(e.to_string()))?;
    let n_lineages = spec.lineages.len();

    let records = (0..spec.total_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = derived_rng(spec.seed, &["sample", &i.to_string()]);
            let lineage = lineage_dist.sample(&mut rng);
            let country = country_dist.sample(&mut rng);
            let first_month = if spec.month_ramp { lineage * spec.months as usize / n_lineages } else { 0 };
            let month = rng.gen_range(first_month as u32..spec.months);
            let mut seq = ancestral.clone();
            for &(p, c) in &signatures[lineage] {
                seq[p] = c;
            }
            for k in index::sample(&mut rng, free.len(), spec.noise_mutations_per_sample) {
                let p = free[k];
                seq[p] = substitute(seq[p], &mut rng);
            }
            SequenceRecord {
                id: format!("syn{i:06}"),
                sequence: seq.into_iter().collect(),
                country: spec.countries[country].name.clone(),
                month,
                lineage: spec.lineages[lineage].name.clone(),
            }
        })
        .collect();
    Ok(SyntheticCorpus { ancestral, signatures, records })
}
