//! TF-IDF vectorization over contiguous token n-grams.
//!
//! A [`Vocabulary`] is fitted on training token sequences only and is
//! immutable afterwards. Selection keeps the `max_features` n-grams with the
//! highest document frequency (ties broken by the n-gram string), and
//! `idf(t) = ln((1 + N) / (1 + df(t))) + 1`. Feature indices follow the
//! lexicographic order of the selected n-grams.

use std::collections::HashMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::textprep::TokenSequence;

/// Sparse vector of `(feature index, weight)` pairs with strictly increasing
/// indices and no stored zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SparseVector {
    pairs: Vec<(u32, f64)>,
}

impl SparseVector {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a vector from pairs in any order. Duplicate indices are summed,
    /// zero weights dropped; non-finite weights are rejected.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut pairs: Vec<(u32, f64)> = pairs
            .into_iter()
            .map(|(i, w)| {
                let index = u32::try_from(i)
                    .map_err(|_| Error::InvalidInput(format!("feature index {i} too large")))?;
                if !w.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite weight {w} at feature {i}"
                    )));
                }
                Ok((index, w))
            })
            .collect::<Result<_>>()?;
        pairs.sort_by_key(|p| p.0);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(pairs.len());
        for (i, w) in pairs {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += w,
                _ => merged.push((i, w)),
            }
        }
        merged.retain(|p| p.1 != 0.0);
        Ok(Self { pairs: merged })
    }

    /// Dense slice to sparse, keeping nonzero entries.
    pub fn from_dense(values: &[f64]) -> Result<Self> {
        Self::from_pairs(values.iter().copied().enumerate())
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of stored entries.
    pub fn nnz(&self) -> usize {
        self.pairs.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.pairs.iter().map(|&(i, w)| (i as usize, w))
    }

    pub fn get(&self, index: usize) -> f64 {
        self.pairs
            .binary_search_by_key(&index, |p| p.0 as usize)
            .map(|pos| self.pairs[pos].1)
            .unwrap_or(0.0)
    }

    /// One past the largest stored index (0 when empty).
    pub fn dimension_bound(&self) -> usize {
        self.pairs.last().map_or(0, |p| p.0 as usize + 1)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.pairs.iter().map(|&(i, w)| dense[i as usize] * w).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.pairs.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt()
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut dense = vec![0.0; len];
        for &(i, w) in &self.pairs {
            dense[i as usize] = w;
        }
        dense
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VectorizerConfig {
    pub max_features: usize,
    pub ngram_min: usize,
    pub ngram_max: usize,
    pub sublinear_tf: bool,
}

impl Default for VectorizerConfig {
    fn default() -> Self {
        Self {
            max_features: 10_000,
            ngram_min: 1,
            ngram_max: 3,
            sublinear_tf: false,
        }
    }
}

impl VectorizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ngram_min < 1 || self.ngram_min > self.ngram_max {
            return Err(Error::Config(format!(
                "vectorizer n-gram range must satisfy 1 <= ngram_min <= ngram_max, got {}..{}",
                self.ngram_min, self.ngram_max
            )));
        }
        if self.max_features == 0 {
            return Err(Error::Config("vectorizer.max_features must be at least 1".into()));
        }
        Ok(())
    }
}

const VOCABULARY_FORMAT: &str = "sentivote.vocabulary";
const VOCABULARY_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct VocabularyFile {
    format: String,
    version: u32,
    config: VectorizerConfig,
    doc_count: usize,
    entries: Vec<String>,
    document_frequency: Vec<u32>,
    idf: Vec<f64>,
}

/// Fitted n-gram vocabulary with idf weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    config: VectorizerConfig,
    doc_count: usize,
    entries: Vec<String>,
    document_frequency: Vec<u32>,
    idf: Vec<f64>,
    lookup: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn config(&self) -> &VectorizerConfig {
        &self.config
    }

    pub fn doc_count(&self) -> usize {
        self.doc_count
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    pub fn document_frequency(&self) -> &[u32] {
        &self.document_frequency
    }

    pub fn index_of(&self, ngram: &str) -> Option<usize> {
        self.lookup.get(ngram).map(|&i| i as usize)
    }

    pub fn term(&self, index: usize) -> Option<&str> {
        self.entries.get(index).map(String::as_str)
    }

    fn to_file(&self) -> VocabularyFile {
        VocabularyFile {
            format: VOCABULARY_FORMAT.into(),
            version: VOCABULARY_VERSION,
            config: self.config,
            doc_count: self.doc_count,
            entries: self.entries.clone(),
            document_frequency: self.document_frequency.clone(),
            idf: self.idf.clone(),
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        serde_json::to_vec(&self.to_file()).map_err(|e| Error::json("vocabulary", e))
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let file: VocabularyFile =
            serde_json::from_slice(bytes).map_err(|e| Error::json("vocabulary", e))?;
        if file.format != VOCABULARY_FORMAT || file.version != VOCABULARY_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported vocabulary artifact {} v{}",
                file.format, file.version
            )));
        }
        let n = file.entries.len();
        if file.idf.len() != n || file.document_frequency.len() != n {
            return Err(Error::InvalidInput(
                "vocabulary artifact arrays have inconsistent lengths".into(),
            ));
        }
        Ok(Self::assemble(
            file.config,
            file.doc_count,
            file.entries,
            file.document_frequency,
            file.idf,
        ))
    }

    /// SHA-256 over the canonical serialization; identifies the vocabulary in
    /// model artifacts.
    pub fn content_hash(&self) -> String {
        let bytes = self.to_json().expect("vocabulary serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }

    fn assemble(
        config: VectorizerConfig,
        doc_count: usize,
        entries: Vec<String>,
        document_frequency: Vec<u32>,
        idf: Vec<f64>,
    ) -> Self {
        let lookup = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i as u32))
            .collect();
        Self {
            config,
            doc_count,
            entries,
            document_frequency,
            idf,
            lookup,
        }
    }
}

pub fn smooth_idf(doc_count: usize, document_frequency: usize) -> f64 {
    ((1.0 + doc_count as f64) / (1.0 + document_frequency as f64)).ln() + 1.0
}

/// Interned n-grams of one length: n-gram id -> (prefix id, last token id).
struct GramLevel {
    parents: Vec<(u32, u32)>,
    ids: HashMap<(u32, u32), u32>,
    df: Vec<u32>,
}

pub fn fit(train_tokens: &[TokenSequence], cfg: &VectorizerConfig) -> Result<Vocabulary> {
    cfg.validate()?;
    if train_tokens.iter().all(|t| t.is_empty()) {
        return Err(Error::EmptyDataset(
            "vectorizer needs at least one non-empty training document".into(),
        ));
    }

    let mut token_ids: HashMap<&str, u32> = HashMap::new();
    let mut tokens: Vec<&str> = Vec::new();
    let docs: Vec<Vec<u32>> = train_tokens
        .iter()
        .map(|doc| {
            doc.iter()
                .map(|t| {
                    *token_ids.entry(t.as_str()).or_insert_with(|| {
                        tokens.push(t.as_str());
                        (tokens.len() - 1) as u32
                    })
                })
                .collect()
        })
        .collect();

    // level 0 holds unigrams; its ids are the token ids
    let mut levels: Vec<GramLevel> = Vec::with_capacity(cfg.ngram_max);
    levels.push(GramLevel {
        parents: (0..tokens.len() as u32).map(|t| (u32::MAX, t)).collect(),
        ids: HashMap::new(),
        df: vec![0; tokens.len()],
    });
    for _ in 1..cfg.ngram_max {
        levels.push(GramLevel {
            parents: Vec::new(),
            ids: HashMap::new(),
            df: Vec::new(),
        });
    }

    let mut current: Vec<u32> = Vec::new();
    let mut seen: Vec<u32> = Vec::new();
    for doc in &docs {
        // `current[p]` is the id of the n-gram of the current level starting at p
        current.clear();
        current.extend_from_slice(doc);
        for (n, level) in levels.iter_mut().enumerate() {
            if n > 0 {
                let next: Vec<u32> = (0..current.len().saturating_sub(1))
                    .map(|p| {
                        let key = (current[p], doc[p + n]);
                        *level.ids.entry(key).or_insert_with(|| {
                            level.parents.push(key);
                            level.df.push(0);
                            (level.parents.len() - 1) as u32
                        })
                    })
                    .collect();
                current = next;
            }
            if current.is_empty() {
                break;
            }
            seen.clear();
            seen.extend_from_slice(&current);
            seen.sort_unstable();
            seen.dedup();
            for &id in &seen {
                level.df[id as usize] += 1;
            }
        }
    }

    let render = |n: usize, id: u32| -> String {
        let mut parts = Vec::with_capacity(n + 1);
        let mut id = id;
        for level in levels[..=n].iter().rev() {
            let (prefix, last) = level.parents[id as usize];
            parts.push(tokens[last as usize]);
            id = prefix;
        }
        parts.reverse();
        parts.join(" ")
    };

    let mut candidates: Vec<(u32, usize, u32)> = levels
        .iter()
        .enumerate()
        .skip(cfg.ngram_min - 1)
        .flat_map(|(n, level)| {
            level
                .df
                .iter()
                .enumerate()
                .map(move |(id, &df)| (df, n, id as u32))
        })
        .collect();

    let mut selected: Vec<(String, u32)> = if candidates.len() <= cfg.max_features {
        candidates
            .iter()
            .map(|&(df, n, id)| (render(n, id), df))
            .collect()
    } else {
        let cut = cfg.max_features - 1;
        candidates.select_nth_unstable_by(cut, |a, b| b.0.cmp(&a.0));
        let threshold = candidates[cut].0;
        let mut kept: Vec<(String, u32)> = candidates
            .iter()
            .filter(|c| c.0 > threshold)
            .map(|&(df, n, id)| (render(n, id), df))
            .collect();
        let mut boundary: Vec<String> = candidates
            .iter()
            .filter(|c| c.0 == threshold)
            .map(|&(_, n, id)| render(n, id))
            .collect();
        boundary.sort_unstable();
        let room = cfg.max_features - kept.len();
        kept.extend(boundary.into_iter().take(room).map(|s| (s, threshold)));
        kept
    };
    selected.sort_unstable_by(|a, b| a.0.cmp(&b.0));

    let doc_count = train_tokens.len();
    let (entries, document_frequency): (Vec<String>, Vec<u32>) = selected.into_iter().unzip();
    let idf = document_frequency
        .iter()
        .map(|&df| smooth_idf(doc_count, df as usize))
        .collect();
    Ok(Vocabulary::assemble(
        *cfg,
        doc_count,
        entries,
        document_frequency,
        idf,
    ))
}

/// Term counts of in-vocabulary n-grams, without weighting.
pub fn count_terms(tokens: &TokenSequence, vocab: &Vocabulary) -> Vec<(u32, f64)> {
    let cfg = vocab.config;
    let mut counts: HashMap<u32, f64> = HashMap::new();
    let mut key = String::new();
    for n in cfg.ngram_min..=cfg.ngram_max {
        if tokens.len() < n {
            break;
        }
        for window in tokens.windows(n) {
            key.clear();
            for (k, token) in window.iter().enumerate() {
                if k > 0 {
                    key.push(' ');
                }
                key.push_str(token);
            }
            if let Some(&index) = vocab.lookup.get(key.as_str()) {
                *counts.entry(index).or_insert(0.0) += 1.0;
            }
        }
    }
    let mut pairs: Vec<(u32, f64)> = counts.into_iter().collect();
    pairs.sort_unstable_by_key(|p| p.0);
    pairs
}

/// Raw counts times idf, L2-normalized. Out-of-vocabulary n-grams are ignored.
pub fn transform(tokens: &TokenSequence, vocab: &Vocabulary) -> SparseVector {
    let mut pairs = count_terms(tokens, vocab);
    for (index, weight) in pairs.iter_mut() {
        let tf = if vocab.config.sublinear_tf {
            1.0 + weight.ln()
        } else {
            *weight
        };
        *weight = tf * vocab.idf[*index as usize];
    }
    let norm = pairs.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
    if norm > 0.0 {
        for pair in pairs.iter_mut() {
            pair.1 /= norm;
        }
    }
    pairs.retain(|p| p.1 != 0.0);
    SparseVector { pairs }
}

/// Transforms a batch in parallel; output order matches input order.
pub fn transform_all(docs: &[TokenSequence], vocab: &Vocabulary) -> Vec<SparseVector> {
    use rayon::prelude::*;
    docs.par_iter().map(|d| transform(d, vocab)).collect()
}

/// Writes rows as `row col value` triplets (row = document id) after a header
/// line `%sentivote-sparse rows=<n> cols=<vocabulary size> nnz=<k> vocabulary=<hash>`.
pub fn write_feature_matrix(
    path: impl AsRef<Path>,
    rows: &[(u64, &SparseVector)],
    vocab: &Vocabulary,
) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let file = std::fs::File::create(path).map_err(io)?;
    let mut out = BufWriter::new(file);
    let nnz: usize = rows.iter().map(|r| r.1.nnz()).sum();
    writeln!(
        out,
        "%sentivote-sparse rows={} cols={} nnz={} vocabulary={}",
        rows.len(),
        vocab.len(),
        nnz,
        vocab.content_hash()
    )
    .map_err(io)?;
    for (id, vector) in rows {
        for (col, value) in vector.iter() {
            writeln!(out, "{id} {col} {value}").map_err(io)?;
        }
    }
    out.flush().map_err(io)
}

/// Header fields of a feature-matrix file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureMatrixHeader {
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
    pub vocabulary: String,
}

/// Reads a file produced by [`write_feature_matrix`], grouping triplets by row.
pub fn read_feature_matrix(
    path: impl AsRef<Path>,
) -> Result<(FeatureMatrixHeader, Vec<(u64, SparseVector)>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, message: String| Error::InvalidInput(format!(
        "{}: line {line}: {message}",
        path.display()
    ));
    let mut lines = std::io::BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| bad(1, "missing header".into()))?
        .map_err(|e| Error::io(path, e))?;
    let mut fields: HashMap<&str, &str> = HashMap::new();
    let mut parts = header_line.split_whitespace();
    if parts.next() != Some("%sentivote-sparse") {
        return Err(bad(1, "not a sentivote sparse matrix".into()));
    }
    for part in parts {
        if let Some((k, v)) = part.split_once('=') {
            fields.insert(k, v);
        }
    }
    let number = |key: &str| -> Result<usize> {
        fields
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(1, format!("header lacks numeric `{key}`")))
    };
    let header = FeatureMatrixHeader {
        rows: number("rows")?,
        cols: number("cols")?,
        nnz: number("nnz")?,
        vocabulary: fields.get("vocabulary").unwrap_or(&"").to_string(),
    };

    let mut grouped: Vec<(u64, Vec<(usize, f64)>)> = Vec::new();
    for (offset, line) in lines.enumerate() {
        let line_no = offset + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut it = line.split_whitespace();
        let (Some(r), Some(c), Some(v), None) = (it.next(), it.next(), it.next(), it.next()) else {
            return Err(bad(line_no, "expected `row col value`".into()));
        };
        let (Ok(row), Ok(col), Ok(value)) = (r.parse::<u64>(), c.parse::<usize>(), v.parse::<f64>())
        else {
            return Err(bad(line_no, "unparseable triplet".into()));
        };
        if col >= header.cols {
            return Err(bad(line_no, format!("column {col} exceeds cols={}", header.cols)));
        }
        match grouped.last_mut() {
            Some(last) if last.0 == row => last.1.push((col, value)),
            _ => grouped.push((row, vec![(col, value)])),
        }
    }
    let rows = grouped
        .into_iter()
        .map(|(id, pairs)| SparseVector::from_pairs(pairs).map(|v| (id, v)))
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}
