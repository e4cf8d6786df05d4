//! Raw multi-field click logs to encoded instances.
//!
//! Numeric fields are bucketized into tokens by [`normalize_numeric`] so that
//! every field ends up categorical. Each field owns a contiguous block of the
//! global feature index space; the first index of every block is the
//! field's `<unknown>` feature.

mod split;
mod tsv;
mod vocab;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use split::{split_dataset, DatasetSplit};
pub use tsv::{parse_tsv_line, read_tsv, read_tsv_lenient};
pub use vocab::{build_vocabulary, FieldVocab, TokenCounts, Vocabulary};

pub const UNKNOWN_TOKEN: &str = "<unknown>";
pub const MISSING_TOKEN: &str = "<missing>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Categorical,
    Numeric,
}

/// One entry of the schema file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
}

/// Ordered field list; a field's index is its position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FieldSchema {
    fields: Vec<FieldSpec>,
}

impl FieldSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self> {
        if fields.len() < 2 {
            return Err(Error::config(format!(
                "a schema needs at least 2 fields, got {}",
                fields.len()
            )));
        }
        let mut seen = HashSet::new();
        for f in &fields {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::config(format!("duplicate field name {:?}", f.name)));
            }
        }
        Ok(FieldSchema { fields })
    }

    /// All-categorical schema with generated names `f0..f{m-1}`.
    pub fn categorical(m: usize) -> Result<Self> {
        Self::new(
            (0..m)
                .map(|i| FieldSpec {
                    name: format!("f{i}"),
                    kind: FieldKind::Categorical,
                })
                .collect(),
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let fields: Vec<FieldSpec> =
            serde_json::from_str(text).map_err(|e| Error::config(format!("schema: {e}")))?;
        Self::new(fields)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.fields).expect("schema serializes") + "\n"
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn names(&self) -> Vec<String> {
        self.fields.iter().map(|f| f.name.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub label: u8,
    /// One raw value per field; numeric values are decimal strings and an
    /// empty string marks a missing value.
    pub values: Vec<String>,
}

impl RawRecord {
    pub fn new(label: u8, values: Vec<impl Into<String>>) -> Self {
        RawRecord {
            label,
            values: values.into_iter().map(Into::into).collect(),
        }
    }
}

/// A labelled instance with exactly one active feature per field.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncodedInstance {
    pub label: u8,
    pub features: Vec<usize>,
}

/// Bucketizes a non-negative numeric value into a categorical token.
///
/// Values up to 2 keep their integer part; larger values map to
/// `⌊(ln z)²⌋`.
pub fn normalize_numeric(z: f64) -> Result<String> {
    if !z.is_finite() || z < 0.0 {
        return Err(Error::input(format!("numeric value {z} must be finite and non-negative")));
    }
    let bucket = if z > 2.0 {
        let l = z.ln();
        (l * l).floor()
    } else {
        z.floor()
    };
    Ok(format!("{}", bucket as u64))
}

/// Token for one raw value of a field.
pub(crate) fn tokenize(kind: FieldKind, raw: &str) -> Result<String> {
    if raw.is_empty() {
        return Ok(MISSING_TOKEN.to_string());
    }
    match kind {
        FieldKind::Categorical => Ok(raw.to_string()),
        FieldKind::Numeric => {
            let z: f64 = raw
                .trim()
                .parse()
                .map_err(|_| Error::input(format!("{raw:?} is not a number")))?;
            normalize_numeric(z)
        }
    }
}

/// Maps a raw record through the vocabulary. Unseen and filtered tokens
/// land on their field's unknown index.
pub fn encode(record: &RawRecord, vocab: &Vocabulary) -> Result<EncodedInstance> {
    let fields = vocab.fields();
    if record.values.len() != fields.len() {
        return Err(Error::input(format!(
            "record has {} fields, expected {}",
            record.values.len(),
            fields.len()
        )));
    }
    if record.label > 1 {
        return Err(Error::input(format!("label {} is not 0 or 1", record.label)));
    }
    let features = fields
        .iter()
        .zip(&record.values)
        .map(|(field, raw)| {
            let token = tokenize(field.kind, raw)
                .map_err(|e| Error::input(format!("field {:?}: {e}", field.name)))?;
            Ok(field.lookup(&token))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedInstance {
        label: record.label,
        features,
    })
}

/// Encodes a batch, prefixing errors with the 1-based record number.
pub fn encode_all(records: &[RawRecord], vocab: &Vocabulary) -> Result<Vec<EncodedInstance>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| encode(r, vocab).map_err(|e| Error::input(format!("record {}: {e}", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn numeric_buckets() {
        assert_eq!(normalize_numeric(2.0).unwrap(), "2");
        assert_eq!(normalize_numeric(0.0).unwrap(), "0");
        assert_eq!(normalize_numeric(1.7).unwrap(), "1");
        assert_eq!(normalize_numeric(std::f64::consts::E.powi(2)).unwrap(), "4");
        assert_eq!(normalize_numeric(100.0).unwrap(), "21");
        assert!(normalize_numeric(-1.0).is_err());
        assert!(normalize_numeric(f64::NAN).is_err());
        assert!(normalize_numeric(f64::INFINITY).is_err());
    }

    #[test]
    fn missing_values_get_their_own_token() {
        assert_eq!(tokenize(FieldKind::Numeric, "").unwrap(), MISSING_TOKEN);
        assert_eq!(tokenize(FieldKind::Categorical, "").unwrap(), MISSING_TOKEN);
        assert!(tokenize(FieldKind::Numeric, "abc").is_err());
    }

    #[test]
    fn schema_validation() {
        assert!(FieldSchema::categorical(1).is_err());
        let dup = vec![
            FieldSpec { name: "a".into(), kind: FieldKind::Numeric },
            FieldSpec { name: "a".into(), kind: FieldKind::Categorical },
        ];
        assert!(FieldSchema::new(dup).is_err());
        let s = FieldSchema::from_json(r#"[{"name":"i1","kind":"numeric"},{"name":"c1","kind":"categorical"}]"#)
            .unwrap();
        assert_eq!(s.fields()[0].kind, FieldKind::Numeric);
        assert_eq!(FieldSchema::from_json(&s.to_json()).unwrap(), s);
    }

    proptest! {
        #[test]
        fn numeric_buckets_are_monotone_above_two(a in 2.0001f64..1e12, b in 2.0001f64..1e12) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            let tl: u64 = normalize_numeric(lo).unwrap().parse().unwrap();
            let th: u64 = normalize_numeric(hi).unwrap().parse().unwrap();
            prop_assert!(tl <= th);
        }
    }
}
