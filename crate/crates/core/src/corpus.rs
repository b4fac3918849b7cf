//! Labeled review corpus: CSV loading, summary statistics and seeded splits.
//!
//! Document ids are the zero-based data-row position in the source file. They
//! are the join key used by externally produced probability files, so they
//! never change once a file is loaded. A rejected row keeps its position, which
//! leaves a gap in the id sequence.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary sentiment class. The discriminant is the class slot used in every
/// probability vector: `[negative, positive]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative = 0,
    Positive = 1,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Negative, Label::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Label> {
        match index {
            0 => Some(Label::Negative),
            1 => Some(Label::Positive),
            _ => None,
        }
    }

    /// Parses a sentiment token, case-insensitively.
    pub fn parse(token: &str) -> Option<Label> {
        let token = token.trim();
        if token.eq_ignore_ascii_case("positive") {
            Some(Label::Positive)
        } else if token.eq_ignore_ascii_case("negative") {
            Some(Label::Negative)
        } else {
            None
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Negative => Label::Positive,
            Label::Positive => Label::Negative,
        }
    }

    /// `+1.0` for positive, `-1.0` for negative.
    pub fn sign(self) -> f64 {
        match self {
            Label::Negative => -1.0,
            Label::Positive => 1.0,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Negative => "negative",
            Label::Positive => "positive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDocument {
    pub id: u64,
    pub text: String,
    pub label: Label,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub total: usize,
    pub positive: usize,
    pub negative: usize,
    pub unique_texts: usize,
    /// Rows with an empty review or sentiment field.
    pub missing: usize,
    /// Rows whose sentiment token is neither `positive` nor `negative`.
    pub mismatched: usize,
    pub most_common_text: Option<String>,
}

impl DatasetSummary {
    pub fn count(&self, label: Label) -> usize {
        match label {
            Label::Negative => self.negative,
            Label::Positive => self.positive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.5,
            seed: 42,
            stratified: true,
        }
    }
}

/// Reads a `review,sentiment` CSV. Column lookup is by header name, so extra
/// columns and either column order are accepted.
pub fn load_csv(path: impl AsRef<Path>) -> Result<(Vec<LabeledDocument>, DatasetSummary)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, path)
}

pub(crate) fn read_csv<R: std::io::Read>(
    reader: R,
    path: &Path,
) -> Result<(Vec<LabeledDocument>, DatasetSummary)> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
        return Err(Error::EmptyDataset(format!("{} has no header row", path.display())));
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim().trim_start_matches('\u{feff}').eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                Error::InvalidInput(format!(
                    "{}: header has no `{name}` column (found {:?})",
                    path.display(),
                    headers.iter().collect::<Vec<_>>()
                ))
            })
    };
    let review_col = column("review")?;
    let sentiment_col = column("sentiment")?;

    let mut docs = Vec::new();
    let mut missing = 0;
    let mut mismatched = 0;
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let text = record.get(review_col).unwrap_or("");
        let sentiment = record.get(sentiment_col).unwrap_or("");
        if text.trim().is_empty() || sentiment.trim().is_empty() {
            missing += 1;
            continue;
        }
        match Label::parse(sentiment) {
            Some(label) => docs.push(LabeledDocument {
                id: row as u64,
                text: text.to_string(),
                label,
            }),
            None => mismatched += 1,
        }
    }
    if docs.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} contains no valid rows",
            path.display()
        )));
    }
    let mut summary = summarize(&docs);
    summary.missing = missing;
    summary.mismatched = mismatched;
    Ok((docs, summary))
}

pub fn summarize(docs: &[LabeledDocument]) -> DatasetSummary {
    let mut counts: HashMap<&str, (usize, usize)> = HashMap::with_capacity(docs.len());
    let mut positive = 0;
    for (position, doc) in docs.iter().enumerate() {
        counts.entry(doc.text.as_str()).or_insert((0, position)).0 += 1;
        if doc.label == Label::Positive {
            positive += 1;
        }
    }
    // highest count wins, ties go to the earliest first occurrence
    let most_common_text = counts
        .iter()
        .max_by(|a, b| a.1 .0.cmp(&b.1 .0).then(b.1 .1.cmp(&a.1 .1)))
        .map(|(text, _)| text.to_string());
    DatasetSummary {
        total: docs.len(),
        positive,
        negative: docs.len() - positive,
        unique_texts: counts.len(),
        missing: 0,
        mismatched: 0,
        most_common_text,
    }
}

/// Partitions documents into `(train, test)`, both sorted by id.
///
/// The train side receives `round(train_fraction * n)` documents, clamped so
/// neither side is empty. A stratified split hands out per-class quotas by the
/// largest-remainder rule (ties to the lower class index), then shuffles each
/// class with the seed and takes its quota.
pub fn split(
    docs: &[LabeledDocument],
    spec: &SplitSpec,
) -> Result<(Vec<LabeledDocument>, Vec<LabeledDocument>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "split.train_fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    if docs.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "split needs at least 2 documents, got {}",
            docs.len()
        )));
    }
    let mut seen = std::collections::HashSet::with_capacity(docs.len());
    if let Some(dup) = docs.iter().find(|d| !seen.insert(d.id)) {
        return Err(Error::InvalidInput(format!("duplicate document id {}", dup.id)));
    }

    let n = docs.len();
    let train_total = ((spec.train_fraction * n as f64).round() as usize).clamp(1, n - 1);

    let mut by_id: Vec<&LabeledDocument> = docs.iter().collect();
    by_id.sort_by_key(|d| d.id);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut train_ids = Vec::with_capacity(train_total);
    if spec.stratified {
        let groups: Vec<Vec<u64>> = Label::ALL
            .iter()
            .map(|&label| {
                by_id
                    .iter()
                    .filter(|d| d.label == label)
                    .map(|d| d.id)
                    .collect()
            })
            .collect();
        if let Some(label) = Label::ALL.iter().find(|l| groups[l.index()].is_empty()) {
            return Err(Error::InvalidInput(format!(
                "stratified split needs at least one {label} document"
            )));
        }
        let quotas = largest_remainder_quotas(
            &groups.iter().map(Vec::len).collect::<Vec<_>>(),
            train_total,
        );
        for (mut ids, quota) in groups.into_iter().zip(quotas) {
            ids.shuffle(&mut rng);
            train_ids.extend_from_slice(&ids[..quota]);
        }
    } else {
        let mut ids: Vec<u64> = by_id.iter().map(|d| d.id).collect();
        ids.shuffle(&mut rng);
        train_ids.extend_from_slice(&ids[..train_total]);
    }

    let train_set: std::collections::HashSet<u64> = train_ids.into_iter().collect();
    let (train, test): (Vec<_>, Vec<_>) = by_id
        .into_iter()
        .cloned()
        .partition(|d| train_set.contains(&d.id));
    Ok((train, test))
}

/// Splits `total` across groups proportionally to `sizes`.
fn largest_remainder_quotas(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    let exact: Vec<f64> = sizes
        .iter()
        .map(|&s| total as f64 * s as f64 / n as f64)
        .collect();
    let mut quotas: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    let mut remaining = total - quotas.iter().sum::<usize>();
    for &group in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if quotas[group] < sizes[group] {
            quotas[group] += 1;
            remaining -= 1;
        }
    }
    quotas
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: u64, text: &str, label: Label) -> LabeledDocument {
        LabeledDocument {
            id,
            text: text.into(),
            label,
        }
    }

    fn load_str(s: &str) -> Result<(Vec<LabeledDocument>, DatasetSummary)> {
        read_csv(s.as_bytes(), Path::new("inline.csv"))
    }

    #[test]
    fn four_row_fixture() {
        let (docs, summary) = load_str(
            "review,sentiment\n\"Great, fun\",positive\nAwful,NEGATIVE\nLoved it,Positive\n\"Bad\nreally\",negative\n",
        )
        .unwrap();
        assert_eq!(docs.len(), 4);
        assert_eq!(summary.positive, 2);
        assert_eq!(summary.negative, 2);
        assert_eq!(docs[0].text, "Great, fun");
        assert_eq!(docs[3].text, "Bad\nreally");
        assert_eq!(docs.iter().map(|d| d.id).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn header_only_is_empty_dataset() {
        let err = load_str("review,sentiment\n").unwrap_err();
        assert!(err.to_string().contains("empty dataset"), "{err}");
        assert!(matches!(load_str(""), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn mismatched_and_missing_rows_are_counted() {
        let (docs, summary) =
            load_str("review,sentiment\ngood,positive\nmeh,neutral\n,negative\nbad,\nok,negative\n")
                .unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(summary.mismatched, 1);
        assert_eq!(summary.missing, 2);
        assert_eq!(summary.total, 2);
        // rejected rows keep their positions
        assert_eq!(docs[1].id, 4);
    }

    #[test]
    fn missing_column_is_reported() {
        let err = load_str("text,label\na,positive\n").unwrap_err();
        assert!(err.to_string().contains("review"));
    }

    #[test]
    fn summarize_counts_duplicates() {
        let docs = vec![
            doc(0, "a", Label::Positive),
            doc(1, "b", Label::Negative),
            doc(2, "b", Label::Negative),
            doc(3, "c", Label::Positive),
        ];
        let s = summarize(&docs);
        assert_eq!(s.unique_texts, s.total - 1);
        assert_eq!(s.most_common_text.as_deref(), Some("b"));
    }

    #[test]
    fn summarize_tie_goes_to_first_occurrence() {
        let docs = vec![
            doc(0, "x", Label::Positive),
            doc(1, "y", Label::Negative),
            doc(2, "y", Label::Positive),
            doc(3, "x", Label::Negative),
        ];
        assert_eq!(summarize(&docs).most_common_text.as_deref(), Some("x"));
    }

    #[test]
    fn summarize_empty() {
        let s = summarize(&[]);
        assert_eq!(s, DatasetSummary::default());
        assert!(s.most_common_text.is_none());
    }

    #[test]
    fn smallest_stratified_split() {
        let docs = vec![doc(0, "a", Label::Positive), doc(1, "b", Label::Negative)];
        let (train, test) = split(&docs, &SplitSpec::default()).unwrap();
        assert_eq!(train.len(), 1);
        assert_eq!(test.len(), 1);
        assert_ne!(train[0].label, test[0].label);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let docs = vec![doc(0, "a", Label::Positive), doc(1, "b", Label::Negative)];
        for fraction in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            let spec = SplitSpec {
                train_fraction: fraction,
                ..SplitSpec::default()
            };
            assert!(matches!(split(&docs, &spec), Err(Error::Config(_))));
        }
    }

    #[test]
    fn stratified_split_needs_both_classes() {
        let docs = vec![doc(0, "a", Label::Positive), doc(1, "b", Label::Positive)];
        assert!(split(&docs, &SplitSpec::default()).is_err());
        let loose = SplitSpec {
            stratified: false,
            ..SplitSpec::default()
        };
        assert!(split(&docs, &loose).is_ok());
    }

    #[test]
    fn balanced_half_split_is_balanced() {
        let docs: Vec<_> = (0..1000)
            .map(|i| {
                let label = if i % 2 == 0 { Label::Positive } else { Label::Negative };
                doc(i, "t", label)
            })
            .collect();
        let (train, test) = split(&docs, &SplitSpec::default()).unwrap();
        assert_eq!(train.len(), 500);
        assert_eq!(test.len(), 500);
        assert_eq!(train.iter().filter(|d| d.label == Label::Positive).count(), 250);
        assert_eq!(test.iter().filter(|d| d.label == Label::Positive).count(), 250);
    }

    #[test]
    fn quotas_sum_to_total() {
        assert_eq!(largest_remainder_quotas(&[1, 1], 1), vec![1, 0]);
        assert_eq!(largest_remainder_quotas(&[3, 7], 5), vec![2, 3]);
        assert_eq!(largest_remainder_quotas(&[25_000, 25_000], 25_000), vec![12_500, 12_500]);
    }
}
