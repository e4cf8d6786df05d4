use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{tokenize, FieldKind, FieldSchema, RawRecord, MISSING_TOKEN, UNKNOWN_TOKEN};
use crate::error::{Error, Result};

/// Token → global feature index for one field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldVocab {
    pub name: String,
    pub kind: FieldKind,
    /// First global index owned by this field.
    pub offset: usize,
    pub unknown_index: usize,
    /// Present only when `<missing>` survived the frequency threshold.
    pub missing_index: Option<usize>,
    pub tokens: BTreeMap<String, usize>,
}

impl FieldVocab {
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.size()
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.tokens.get(token).copied().unwrap_or(self.unknown_index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub min_count: u64,
    pub total_feature_count: usize,
    fields: Vec<FieldVocab>,
}

/// Per-field token frequencies. Counts from independent readers can be
/// merged before the threshold is applied.
#[derive(Debug, Clone)]
pub struct TokenCounts {
    schema: FieldSchema,
    counts: Vec<HashMap<String, u64>>,
    records: u64,
}

impl TokenCounts {
    pub fn new(schema: &FieldSchema) -> Self {
        TokenCounts {
            schema: schema.clone(),
            counts: vec![HashMap::new(); schema.len()],
            records: 0,
        }
    }

    pub fn observe(&mut self, record: &RawRecord) -> Result<()> {
        let m = self.schema.len();
        let n = self.records + 1;
        if record.values.len() != m {
            return Err(Error::input(format!(
                "record {n} has {} fields, expected {m}",
                record.values.len()
            )));
        }
        for (i, (field, raw)) in self.schema.fields().iter().zip(&record.values).enumerate() {
            let token = tokenize(field.kind, raw)
                .map_err(|e| Error::input(format!("record {n}, field {:?}: {e}", field.name)))?;
            *self.counts[i].entry(token).or_insert(0) += 1;
        }
        self.records = n;
        Ok(())
    }

    pub fn merge(&mut self, other: TokenCounts) -> Result<()> {
        if other.schema != self.schema {
            return Err(Error::config("cannot merge counts over different schemas"));
        }
        for (mine, theirs) in self.counts.iter_mut().zip(other.counts) {
            for (token, c) in theirs {
                *mine.entry(token).or_insert(0) += c;
            }
        }
        self.records += other.records;
        Ok(())
    }

    pub fn into_vocabulary(self, min_count: u64) -> Result<Vocabulary> {
        if min_count < 1 {
            return Err(Error::config("min_count must be at least 1"));
        }
        if self.records == 0 {
            return Err(Error::input("cannot build a vocabulary from zero records"));
        }
        let mut offset = 0;
        let mut fields = Vec::with_capacity(self.schema.len());
        for (spec, counts) in self.schema.fields().iter().zip(self.counts) {
            let mut kept: Vec<String> = counts
                .into_iter()
                .filter(|(t, c)| *c >= min_count && t != UNKNOWN_TOKEN)
                .map(|(t, _)| t)
                .collect();
            kept.sort();
            let mut tokens = BTreeMap::new();
            tokens.insert(UNKNOWN_TOKEN.to_string(), offset);
            for (k, t) in kept.into_iter().enumerate() {
                tokens.insert(t, offset + 1 + k);
            }
            let field = FieldVocab {
                name: spec.name.clone(),
                kind: spec.kind,
                offset,
                unknown_index: offset,
                missing_index: tokens.get(MISSING_TOKEN).copied(),
                tokens,
            };
            offset += field.size();
            fields.push(field);
        }
        Ok(Vocabulary {
            min_count,
            total_feature_count: offset,
            fields,
        })
    }
}

/// Counts every token in `records` and keeps those seen at least
/// `min_count` times.
pub fn build_vocabulary<'a>(
    records: impl IntoIterator<Item = &'a RawRecord>,
    schema: &FieldSchema,
    min_count: u64,
) -> Result<Vocabulary> {
    if min_count < 1 {
        return Err(Error::config("min_count must be at least 1"));
    }
    let mut counts = TokenCounts::new(schema);
    for r in records {
        counts.observe(r)?;
    }
    counts.into_vocabulary(min_count)
}

impl Vocabulary {
    pub fn fields(&self) -> &[FieldVocab] {
        &self.fields
    }

    pub fn field_count(&self) -> usize {
        self.fields.len()
    }

    pub fn field_names(&self) -> Vec<String> {
        self.fields.iter().map(|f| f.name.clone()).collect()
    }

    pub fn schema(&self) -> FieldSchema {
        FieldSchema::new(
            self.fields
                .iter()
                .map(|f| super::FieldSpec {
                    name: f.name.clone(),
                    kind: f.kind,
                })
                .collect(),
        )
        .expect("vocabulary fields form a valid schema")
    }

    /// Canonical JSON form; identical vocabularies serialize to identical bytes.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Vocabulary =
            serde_json::from_str(text).map_err(|e| Error::config(format!("vocabulary: {e}")))?;
        v.validate()?;
        Ok(v)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.fields.len() < 2 {
            return Err(Error::config("vocabulary needs at least 2 fields"));
        }
        let mut expected_offset = 0;
        for f in &self.fields {
            let bad = |msg: &str| Error::config(format!("vocabulary field {:?}: {msg}", f.name));
            if f.offset != expected_offset {
                return Err(bad("index ranges are not contiguous"));
            }
            if f.tokens.get(UNKNOWN_TOKEN) != Some(&f.unknown_index) {
                return Err(bad("missing <unknown> entry"));
            }
            if f.missing_index != f.tokens.get(MISSING_TOKEN).copied() {
                return Err(bad("missing index disagrees with token map"));
            }
            let mut idx: Vec<usize> = f.tokens.values().copied().collect();
            idx.sort_unstable();
            if idx != f.range().collect::<Vec<_>>() {
                return Err(bad("indices do not cover the field's range"));
            }
            expected_offset += f.size();
        }
        if expected_offset != self.total_feature_count {
            return Err(Error::config("total_feature_count disagrees with field sizes"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurestore::encode;

    fn records() -> Vec<RawRecord> {
        vec![
            RawRecord::new(1, vec!["x", "u"]),
            RawRecord::new(0, vec!["y", "u"]),
            RawRecord::new(1, vec!["y", "u"]),
        ]
    }

    #[test]
    fn nothing_filtered_at_min_count_one() {
        let v = build_vocabulary(&records(), &FieldSchema::categorical(2).unwrap(), 1).unwrap();
        assert_eq!(v.total_feature_count, 5);
        assert_eq!(v.fields()[0].size(), 3);
        assert_eq!(v.fields()[1].range(), 3..5);
        v.validate().unwrap();
    }

    #[test]
    fn rare_tokens_fall_back_to_unknown() {
        let v = build_vocabulary(&records(), &FieldSchema::categorical(2).unwrap(), 2).unwrap();
        let a = &v.fields()[0];
        assert_eq!(a.lookup("x"), a.unknown_index);
        assert_ne!(a.lookup("y"), a.unknown_index);
        let inst = encode(&RawRecord::new(0, vec!["x", "never-seen"]), &v).unwrap();
        assert_eq!(inst.features, vec![0, v.fields()[1].unknown_index]);
    }

    #[test]
    fn empty_stream_and_ragged_records_are_errors() {
        let schema = FieldSchema::categorical(2).unwrap();
        assert!(build_vocabulary(&[], &schema, 1).is_err());
        let bad = vec![RawRecord::new(0, vec!["a", "b"]), RawRecord::new(0, vec!["a"])];
        let err = build_vocabulary(&bad, &schema, 1).unwrap_err().to_string();
        assert!(err.contains("record 2"), "{err}");
    }

    #[test]
    fn merged_counts_match_single_pass() {
        let schema = FieldSchema::categorical(2).unwrap();
        let all = records();
        let mut left = TokenCounts::new(&schema);
        left.observe(&all[0]).unwrap();
        let mut right = TokenCounts::new(&schema);
        right.observe(&all[1]).unwrap();
        right.observe(&all[2]).unwrap();
        left.merge(right).unwrap();
        assert_eq!(
            left.into_vocabulary(2).unwrap(),
            build_vocabulary(&all, &schema, 2).unwrap()
        );
    }

    #[test]
    fn json_is_byte_stable_and_validated() {
        let schema = FieldSchema::categorical(2).unwrap();
        let a = build_vocabulary(&records(), &schema, 1).unwrap();
        let b = build_vocabulary(&records(), &schema, 1).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(a.fingerprint(), b.fingerprint());
        let back = Vocabulary::from_json(&a.to_json()).unwrap();
        assert_eq!(back, a);

        let broken = a.to_json().replace("\"total_feature_count\": 5", "\"total_feature_count\": 6");
        assert!(Vocabulary::from_json(&broken).is_err());
    }

    #[test]
    fn missing_values_are_counted_like_tokens() {
        let schema = FieldSchema::categorical(2).unwrap();
        let recs = vec![RawRecord::new(0, vec!["", "a"]), RawRecord::new(1, vec!["", "a"])];
        let v = build_vocabulary(&recs, &schema, 2).unwrap();
        assert!(v.fields()[0].missing_index.is_some());
        assert_eq!(v.fields()[1].missing_index, None);
    }
}
