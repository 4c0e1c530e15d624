//! One-hot encoding of amino-acid sequences and lineage labels.

use std::collections::HashMap;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 20 canonical amino acids, in alphabetical one-letter order.
pub const CANONICAL_AMINO_ACIDS: &str = "ACDEFGHIKLMNPQRSTVWY";

/// Symbol that absorbs every character outside the canonical set.
pub const UNKNOWN_SYMBOL: char = 'X';

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
    index_of: HashMap<char, usize>,
}

impl Alphabet {
    /// Canonical amino acids followed by `X`.
    pub fn amino_acids() -> Self {
        let mut symbols: Vec<char> = CANONICAL_AMINO_ACIDS.chars().collect();
        symbols.push(UNKNOWN_SYMBOL);
        Self::new(symbols).expect("canonical alphabet is valid")
    }

    /// Build an alphabet from explicit symbols. The last symbol is the
    /// fallback for characters outside the alphabet.
    pub fn new(symbols: Vec<char>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::InvalidSpec("alphabet must not be empty".into()));
        }
        let mut index_of = HashMap::with_capacity(symbols.len());
        for (i, &c) in symbols.iter().enumerate() {
            if index_of.insert(c, i).is_some() {
                return Err(Error::InvalidSpec(format!("duplicate alphabet symbol `{c}`")));
            }
        }
        Ok(Self { symbols, index_of })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    /// Position of `c`, with unknown characters mapped to the fallback slot.
    pub fn index_of(&self, c: char) -> usize {
        self.index_of.get(&c).copied().unwrap_or(self.symbols.len() - 1)
    }
}

/// One labeled, geolocated, month-stamped sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub sequence: String,
    pub country: String,
    /// Months since the start of the study window.
    pub month: u32,
    pub lineage: String,
}

/// Encoding parameters shared by every client and the server.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodingContext {
    pub alphabet: Alphabet,
    pub max_len: usize,
    pub label_set: Vec<String>,
}

impl EncodingContext {
    pub fn new(alphabet: Alphabet, max_len: usize, label_set: Vec<String>) -> Result<Self> {
        if max_len == 0 {
            return Err(Error::InvalidSpec("max_len must be positive".into()));
        }
        if label_set.is_empty() {
            return Err(Error::InvalidSpec("label set must not be empty".into()));
        }
        for (i, label) in label_set.iter().enumerate() {
            if label_set[..i].contains(label) {
                return Err(Error::InvalidSpec(format!("duplicate label `{label}`")));
            }
        }
        Ok(Self { alphabet, max_len, label_set })
    }

    /// Amino-acid context with `max_len` taken from the longest sequence.
    pub fn from_records(records: &[SequenceRecord], label_set: Vec<String>) -> Result<Self> {
        let max_len = records.iter().map(|r| r.sequence.chars().count()).max().unwrap_or(0);
        Self::new(Alphabet::amino_acids(), max_len, label_set)
    }

    pub fn feature_width(&self) -> usize {
        self.max_len * self.alphabet.len()
    }

    pub fn num_classes(&self) -> usize {
        self.label_set.len()
    }

    pub fn label_index(&self, lineage: &str) -> Option<usize> {
        self.label_set.iter().position(|l| l == lineage)
    }
}

/// Encoded feature and label matrices with per-row provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedDataset {
    pub features: Array2<f32>,
    pub labels: Array2<f32>,
    pub meta: Vec<RowMeta>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowMeta {
    pub country: String,
    pub month: u32,
}

impl EncodedDataset {
    pub fn empty(feature_width: usize, num_classes: usize) -> Self {
        Self { features: Array2::zeros((0, feature_width)), labels: Array2::zeros((0, num_classes)), meta: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_width(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.ncols()
    }

    /// Rows `indices`, in the order given.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            features: self.features.select(Axis(0), indices),
            labels: self.labels.select(Axis(0), indices),
            meta: indices.iter().map(|&i| self.meta[i].clone()).collect(),
        }
    }

    /// Class index of every row (position of the one in its label row).
    pub fn class_indices(&self) -> Vec<usize> {
        self.labels.rows().into_iter().map(|row| row.iter().position(|&v| v == 1.0).unwrap_or(0)).collect()
    }
}

/// One-hot encode `seq` with trailing zero padding up to `ctx.max_len`.
pub fn encode_sequence(seq: &str, ctx: &EncodingContext) -> Result<Vec<f32>> {
    let mut out = vec![0.0f32; ctx.feature_width()];
    write_sequence(seq, ctx, &mut out).map_err(|len| Error::SequenceTooLong {
        id: String::new(),
        len,
        max_len: ctx.max_len,
    })?;
    Ok(out)
}

// On overflow returns the offending length.
fn write_sequence(seq: &str, ctx: &EncodingContext, out: &mut [f32]) -> Result<(), usize> {
    let width = ctx.alphabet.len();
    let mut len = 0;
    for (i, c) in seq.chars().enumerate() {
        len = i + 1;
        if i >= ctx.max_len {
            continue;
        }
        out[i * width + ctx.alphabet.index_of(c)] = 1.0;
    }
    if len > ctx.max_len {
        return Err(len);
    }
    Ok(())
}

pub fn encode_label(lineage: &str, ctx: &EncodingContext) -> Result<Vec<f32>> {
    let idx = ctx.label_index(lineage).ok_or_else(|| Error::UnknownLabel { label: lineage.to_string(), id: None })?;
    let mut out = vec![0.0f32; ctx.num_classes()];
    out[idx] = 1.0;
    Ok(out)
}

pub fn encode_dataset(records: &[SequenceRecord], ctx: &EncodingContext) -> Result<EncodedDataset> {
    let mut features = Array2::<f32>::zeros((records.len(), ctx.feature_width()));
    let mut labels = Array2::<f32>::zeros((records.len(), ctx.num_classes()));
    let mut meta = Vec::with_capacity(records.len());
    for (i, record) in records.iter().enumerate() {
        let row = features.row_mut(i).into_slice().expect("standard layout");
        write_sequence(&record.sequence, ctx, row).map_err(|len| Error::SequenceTooLong {
            id: record.id.clone(),
            len,
            max_len: ctx.max_len,
        })?;
        let class = ctx
            .label_index(&record.lineage)
            .ok_or_else(|| Error::UnknownLabel { label: record.lineage.clone(), id: Some(record.id.clone()) })?;
        labels[[i, class]] = 1.0;
        meta.push(RowMeta { country: record.country.clone(), month: record.month });
    }
    Ok(EncodedDataset { features, labels, meta })
}

/// Inverse of [`encode_sequence`] over the non-padded prefix.
pub fn decode_sequence(features: &[f32], ctx: &EncodingContext) -> String {
    let width = ctx.alphabet.len();
    features
        .chunks(width)
        .take_while(|block| block.iter().any(|&v| v != 0.0))
        .map(|block| {
            let (idx, _) =
                block.iter().enumerate().fold((0, f32::MIN), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
            ctx.alphabet.symbols()[idx]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn ac_ctx(max_len: usize) -> EncodingContext {
        EncodingContext::new(Alphabet::new(vec!['A', 'C']).unwrap(), max_len, vec!["k".into()]).unwrap()
    }

    fn lineage_ctx() -> EncodingContext {
        let labels = ["Alpha", "Beta", "Delta", "Gamma", "Epsilon"].map(String::from).to_vec();
        EncodingContext::new(Alphabet::amino_acids(), 4, labels).unwrap()
    }

    #[test]
    fn alphabet_layout() {
        let a = Alphabet::amino_acids();
        assert_eq!(a.len(), 21);
        assert_eq!(*a.symbols().last().unwrap(), 'X');
        for (i, &c) in a.symbols().iter().enumerate() {
            assert_eq!(a.index_of(c), i);
        }
        assert!(Alphabet::new(vec!['A', 'A']).is_err());
    }

    #[test]
    fn pads_trailing_positions() {
        assert_eq!(encode_sequence("AC", &ac_ctx(3)).unwrap(), vec![1., 0., 0., 1., 0., 0.]);
        assert_eq!(encode_sequence("", &ac_ctx(2)).unwrap(), vec![0.; 4]);
    }

    #[test]
    fn ambiguity_codes_collapse_to_unknown() {
        let ctx = EncodingContext::new(Alphabet::amino_acids(), 1, vec!["k".into()]).unwrap();
        for code in ['B', 'Z', 'J', '*', '-'] {
            let v = encode_sequence(&code.to_string(), &ctx).unwrap();
            assert_eq!(v.iter().sum::<f32>(), 1.0);
            assert_eq!(v[20], 1.0, "{code} should land in the X slot");
        }
    }

    #[test]
    fn rejects_long_sequences() {
        let err = encode_sequence("ACA", &ac_ctx(2)).unwrap_err();
        assert!(matches!(err, Error::SequenceTooLong { len: 3, max_len: 2, .. }));
    }

    #[test]
    fn label_one_hot() {
        let ctx = lineage_ctx();
        assert_eq!(encode_label("Alpha", &ctx).unwrap(), vec![1., 0., 0., 0., 0.]);
        assert_eq!(encode_label("Epsilon", &ctx).unwrap(), vec![0., 0., 0., 0., 1.]);
        assert!(matches!(encode_label("Omicron", &ctx), Err(Error::UnknownLabel { .. })));
    }

    fn rec(id: &str, seq: &str, lineage: &str) -> SequenceRecord {
        SequenceRecord { id: id.into(), sequence: seq.into(), country: "USA".into(), month: 0, lineage: lineage.into() }
    }

    #[test]
    fn dataset_shapes() {
        let ctx =
            EncodingContext::new(Alphabet::new(vec!['A', 'C']).unwrap(), 2, vec!["p".into(), "q".into(), "r".into()])
                .unwrap();
        let ds = encode_dataset(&[rec("a", "AC", "p"), rec("b", "C", "r")], &ctx).unwrap();
        assert_eq!(ds.features.dim(), (2, 4));
        assert_eq!(ds.labels.dim(), (2, 3));
        assert_eq!(ds.features.row(1).to_vec(), vec![0., 1., 0., 0.]);
        assert_eq!(ds.class_indices(), vec![0, 2]);

        let empty = encode_dataset(&[], &ctx).unwrap();
        assert_eq!(empty.len(), 0);
        assert_eq!(empty.feature_width(), 4);
    }

    #[test]
    fn dataset_errors_name_the_record() {
        let ctx = lineage_ctx();
        match encode_dataset(&[rec("ok", "AC", "Beta"), rec("bad", "AC", "Omicron")], &ctx) {
            Err(Error::UnknownLabel { label, id }) => {
                assert_eq!(label, "Omicron");
                assert_eq!(id.as_deref(), Some("bad"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match encode_dataset(&[rec("long", "ACDEF", "Beta")], &ctx) {
            Err(Error::SequenceTooLong { id, .. }) => assert_eq!(id, "long"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn spike_length_feature_width() {
        let records = vec![rec("s", &"A".repeat(1274), "Alpha")];
        let ctx = EncodingContext::from_records(&records, vec!["Alpha".into()]).unwrap();
        assert_eq!(ctx.feature_width(), 1274 * 21);
        assert_eq!(ctx.feature_width(), 26754);
    }

    proptest! {
        #[test]
        fn round_trip_and_sparsity(seq in "[ACDEFGHIKLMNPQRSTVWY]{0,30}", pad in 0usize..5) {
            let ctx = EncodingContext::new(Alphabet::amino_acids(), seq.len() + pad + 1, vec!["k".into()]).unwrap();
            let v = encode_sequence(&seq, &ctx).unwrap();
            prop_assert_eq!(v.iter().filter(|&&x| x == 1.0).count(), seq.len());
            prop_assert!(v[seq.len() * 21..].iter().all(|&x| x == 0.0));
            prop_assert_eq!(decode_sequence(&v, &ctx), seq.clone());
            prop_assert_eq!(encode_sequence(&seq, &ctx).unwrap(), v);
        }
    }
}
