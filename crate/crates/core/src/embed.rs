//! Vector embeddings: a tf-idf vectorizer and the external-embedding CSV contract.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;

pub const DEFAULT_MIN_DF: usize = 2;
pub const DEFAULT_MAX_FEATURES: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EmbeddingSource {
    Tfidf,
    External,
}

/// `n_samples × d` real matrix with one row per test.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub values: Array2<f64>,
    pub row_ids: Vec<String>,
    pub source: EmbeddingSource,
}

impl EmbeddingMatrix {
    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn with_row_ids(mut self, row_ids: Vec<String>) -> Self {
        assert_eq!(row_ids.len(), self.values.nrows());
        self.row_ids = row_ids;
        self
    }
}

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("cannot fit a vocabulary on an empty corpus")]
    EmptyCorpus,
    #[error("min_df must be at least 1")]
    InvalidMinDf,
    #[error("no embedding row for test `{0}`")]
    MissingRow(String),
    #[error("dimension mismatch at line {0}")]
    DimensionMismatch(u64),
    #[error("non-finite or unparsable value at line {0}")]
    BadValue(u64),
    #[error("embedding file lacks a `test_id` column")]
    MissingIdColumn,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Fitted tf-idf vocabulary. Term indices are assigned in lexicographic order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub terms: Vec<String>,
    pub document_frequency: Vec<usize>,
    pub n_docs: usize,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn build(mut entries: Vec<(String, usize)>, n_docs: usize) -> Self {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i))
            .collect();
        let (terms, document_frequency) = entries.into_iter().unzip();
        Vocabulary {
            terms,
            document_frequency,
            n_docs,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        if self.index.is_empty() && !self.terms.is_empty() {
            return self.terms.iter().position(|t| t == term);
        }
        self.index.get(term).copied()
    }

    pub fn df(&self, term: &str) -> Option<usize> {
        self.index_of(term).map(|i| self.document_frequency[i])
    }

    /// Smoothed inverse document frequency `ln((1 + n) / (1 + df)) + 1`.
    pub fn idf_of_df(&self, df: usize) -> f64 {
        ((1.0 + self.n_docs as f64) / (1.0 + df as f64)).ln() + 1.0
    }

    pub fn idf(&self) -> Vec<f64> {
        self.document_frequency.iter().map(|&df| self.idf_of_df(df)).collect()
    }

    /// Rebuilds the term index after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }
}

/// Splits a flattened test (space-joined tokens) back into terms.
pub fn split_terms(flattened: &str) -> Vec<String> {
    flattened.split_whitespace().map(str::to_string).collect()
}

/// Counts document frequencies and keeps terms with `df ≥ min_df`. When more
/// than `max_features` survive, the highest-df terms are kept with ties going
/// to the lexicographically smaller term.
pub fn fit_tfidf<D: AsRef<[String]>>(
    docs: &[D],
    min_df: usize,
    max_features: usize,
) -> Result<Vocabulary, EmbedError> {
    if docs.is_empty() {
        return Err(EmbedError::EmptyCorpus);
    }
    if min_df == 0 {
        return Err(EmbedError::InvalidMinDf);
    }
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for doc in docs {
        let mut uniq: Vec<&str> = doc.as_ref().iter().map(String::as_str).collect();
        uniq.sort_unstable();
        uniq.dedup();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut kept: Vec<(String, usize)> = df
        .into_iter()
        .filter(|&(_, c)| c >= min_df)
        .map(|(t, c)| (t.to_string(), c))
        .collect();
    if kept.len() > max_features {
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        kept.truncate(max_features);
    }
    Ok(Vocabulary::build(kept, docs.len()))
}

/// Raw term counts times idf, each row scaled to unit L2 norm. Rows with no
/// in-vocabulary terms stay zero.
pub fn transform_tfidf<D: AsRef<[String]> + Sync>(vocab: &Vocabulary, docs: &[D]) -> EmbeddingMatrix {
    let idf = vocab.idf();
    let rows: Vec<Vec<(usize, f64)>> = docs
        .par_iter()
        .map(|doc| {
            let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
            for term in doc.as_ref() {
                if let Some(i) = vocab.index_of(term) {
                    *counts.entry(i).or_default() += 1.0;
                }
            }
            let mut row: Vec<(usize, f64)> = counts.into_iter().map(|(i, c)| (i, c * idf[i])).collect();
            let norm = row.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            if norm > 0.0 {
                for (_, w) in &mut row {
                    *w /= norm;
                }
            }
            row
        })
        .collect();
    let mut values = Array2::zeros((docs.len(), vocab.len()));
    for (r, row) in rows.into_iter().enumerate() {
        for (c, w) in row {
            values[[r, c]] = w;
        }
    }
    EmbeddingMatrix {
        values,
        row_ids: (0..docs.len()).map(|i| i.to_string()).collect(),
        source: EmbeddingSource::Tfidf,
    }
}

/// Rows read from a `test_id[,label],<prefix>0..` CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRows {
    pub row_ids: Vec<String>,
    pub labels: Option<Vec<String>>,
    pub values: Array2<f64>,
}

/// Reads `test_id,[label,]x0..x{d-1}`. The label column is recognised by its
/// header name; every other column after `test_id` is numeric.
pub fn read_labeled_csv<R: Read>(reader: R) -> Result<LabeledRows, EmbedError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h.eq_ignore_ascii_case("test_id"))
        .ok_or(EmbedError::MissingIdColumn)?;
    let label_col = headers.iter().position(|h| h.eq_ignore_ascii_case("label"));
    let value_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| i != id_col && Some(i) != label_col)
        .collect();
    let d = value_cols.len();
    let mut row_ids = Vec::new();
    let mut labels = Vec::new();
    let mut flat = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != headers.len() {
            return Err(EmbedError::DimensionMismatch(line));
        }
        row_ids.push(rec[id_col].to_string());
        if let Some(lc) = label_col {
            labels.push(rec[lc].to_string());
        }
        for &c in &value_cols {
            let v: f64 = rec[c].parse().map_err(|_| EmbedError::BadValue(line))?;
            if !v.is_finite() {
                return Err(EmbedError::BadValue(line));
            }
            flat.push(v);
        }
    }
    let values = Array2::from_shape_vec((row_ids.len(), d), flat).expect("row-major shape");
    Ok(LabeledRows {
        row_ids,
        labels: label_col.map(|_| labels),
        values,
    })
}

/// Writes `test_id,label,<prefix>0..` with shortest round-trip float formatting.
pub fn write_labeled_csv<W: Write>(
    writer: W,
    row_ids: &[String],
    labels: &[String],
    values: &Array2<f64>,
    prefix: &str,
) -> Result<(), EmbedError> {
    assert_eq!(row_ids.len(), values.nrows());
    assert_eq!(labels.len(), values.nrows());
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["test_id".to_string(), "label".to_string()];
    header.extend((0..values.ncols()).map(|j| format!("{prefix}{j}")));
    w.write_record(&header)?;
    for (i, row) in values.outer_iter().enumerate() {
        let mut rec = vec![row_ids[i].clone(), labels[i].clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Exports an embedding as `test_id,label,v0..v{d-1}`.
pub fn write_embedding_csv<W: Write>(
    writer: W,
    matrix: &EmbeddingMatrix,
    labels: &[String],
) -> Result<(), EmbedError> {
    write_labeled_csv(writer, &matrix.row_ids, labels, &matrix.values, "v")
}

/// Imports externally produced vectors (e.g. code2vec exports) and reorders
/// them to manifest order. Extra rows not in the manifest are ignored.
pub fn load_external_embeddings(path: impl AsRef<Path>, manifest: &Corpus) -> Result<EmbeddingMatrix, EmbedError> {
    let file = std::fs::File::open(path.as_ref())?;
    let rows = read_labeled_csv(file)?;
    align_to_manifest(rows, manifest)
}

pub fn align_to_manifest(rows: LabeledRows, manifest: &Corpus) -> Result<EmbeddingMatrix, EmbedError> {
    let by_id: HashMap<&str, usize> = rows
        .row_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let d = rows.values.ncols();
    let mut values = Array2::zeros((manifest.len(), d));
    for (r, rec) in manifest.records.iter().enumerate() {
        let src = *by_id
            .get(rec.test_id.as_str())
            .ok_or_else(|| EmbedError::MissingRow(rec.test_id.clone()))?;
        values.row_mut(r).assign(&rows.values.row(src));
    }
    Ok(EmbeddingMatrix {
        values,
        row_ids: manifest.test_ids(),
        source: EmbeddingSource::External,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CategoryLabel, TestRecord};

    fn docs(texts: &[&str]) -> Vec<Vec<String>> {
        texts.iter().map(|t| split_terms(t)).collect()
    }

    #[test]
    fn fit_counts_df() {
        let v = fit_tfidf(&docs(&["a b", "b c"]), 1, 100).unwrap();
        assert_eq!(v.terms, ["a", "b", "c"]);
        assert_eq!(v.document_frequency, [1, 2, 1]);
        let v2 = fit_tfidf(&docs(&["a b", "b c"]), 2, 100).unwrap();
        assert_eq!(v2.terms, ["b"]);
    }

    #[test]
    fn max_features_keeps_highest_df() {
        // df by hand: a:3 b:3 c:2 d:2 e:2 f..j:1
        let d = docs(&["a b c d e f g", "a b c d h", "a b e i j"]);
        let v = fit_tfidf(&d, 1, 4).unwrap();
        assert_eq!(v.terms, ["a", "b", "c", "d"]);
        assert_eq!(v.document_frequency, [3, 3, 2, 2]);
    }

    #[test]
    fn empty_corpus_and_min_df() {
        let none: Vec<Vec<String>> = vec![];
        assert!(matches!(fit_tfidf(&none, 1, 10), Err(EmbedError::EmptyCorpus)));
        assert!(matches!(fit_tfidf(&docs(&["a"]), 0, 10), Err(EmbedError::InvalidMinDf)));
    }

    #[test]
    fn transform_single_doc() {
        let d = docs(&["a a b"]);
        let v = fit_tfidf(&d, 1, 10).unwrap();
        let m = transform_tfidf(&v, &d);
        let s5 = 5f64.sqrt();
        assert!((m.values[[0, 0]] - 2.0 / s5).abs() < 1e-12);
        assert!((m.values[[0, 1]] - 1.0 / s5).abs() < 1e-12);
    }

    #[test]
    fn transform_two_docs_against_hand_values() {
        let d = docs(&["a b", "b c"]);
        let v = fit_tfidf(&d, 1, 10).unwrap();
        let m = transform_tfidf(&v, &d);
        // idf(a) = ln(3/2) + 1 = 1.4054651081081644, idf(b) = 1
        let wa = 1.405_465_108_108_164_4_f64;
        let norm = (wa * wa + 1.0).sqrt();
        assert!((m.values[[0, 0]] - wa / norm).abs() < 1e-12);
        assert!((m.values[[0, 1]] - 1.0 / norm).abs() < 1e-12);
        assert_eq!(m.values[[0, 2]], 0.0);
        assert!((m.values[[0, 0]] - 0.815).abs() < 1e-3);
        assert!((m.values[[0, 1]] - 0.580).abs() < 1e-3);
    }

    #[test]
    fn oov_row_is_zero() {
        let v = fit_tfidf(&docs(&["a b"]), 1, 10).unwrap();
        let m = transform_tfidf(&v, &docs(&["zzz yyy"]));
        assert!(m.values.iter().all(|&x| x == 0.0));
    }

    fn corpus(ids: &[&str]) -> Corpus {
        let sha = "0123456789abcdef0123456789abcdef01234567";
        Corpus::new(
            ids.iter()
                .map(|id| TestRecord::new("u", sha, *id, CategoryLabel::Id).unwrap())
                .collect(),
            "cache",
        )
    }

    #[test]
    fn external_import_reorders_and_checks() {
        let text = "test_id,v0,v1\np.C.b,3,4\np.C.a,1,2\n";
        let rows = read_labeled_csv(text.as_bytes()).unwrap();
        let m = align_to_manifest(rows, &corpus(&["p.C.a", "p.C.b"])).unwrap();
        assert_eq!(m.values, ndarray::array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(m.source, EmbeddingSource::External);

        let rows = read_labeled_csv(text.as_bytes()).unwrap();
        let err = align_to_manifest(rows, &corpus(&["p.C.a", "p.C.z"])).unwrap_err();
        assert!(matches!(err, EmbedError::MissingRow(ref id) if id == "p.C.z"));

        let short = "test_id,v0,v1\np.C.a,1,2\np.C.b,3\n";
        assert!(matches!(read_labeled_csv(short.as_bytes()), Err(EmbedError::DimensionMismatch(3))));
    }

    #[test]
    fn export_format_is_import_contract() {
        let m = EmbeddingMatrix {
            values: ndarray::array![[0.1, 1.0 / 3.0]],
            row_ids: vec!["p.C.a".into()],
            source: EmbeddingSource::Tfidf,
        };
        let mut buf = Vec::new();
        write_embedding_csv(&mut buf, &m, &["ID".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("test_id,label,v0,v1\n"));
        let back = read_labeled_csv(buf.as_slice()).unwrap();
        assert_eq!(back.values, m.values);
        assert_eq!(back.labels.unwrap(), ["ID"]);
    }
}
