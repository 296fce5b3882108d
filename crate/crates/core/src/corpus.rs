//! Labeled-text ingestion, tokenization, vocabulary and fold planning.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// One `label<TAB>text` line as read from disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawRecord {
    pub label: String,
    pub text: String,
}

/// Reads a UTF-8 TSV corpus, one `label<TAB>text` record per line, in file
/// order. Blank lines are skipped.
pub fn ingest(path: impl AsRef<Path>) -> Result<Vec<RawRecord>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = parse_tsv(&content, path)?;
    if records.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "{} has no records",
            path.display()
        )));
    }
    Ok(records)
}

pub fn parse_tsv(content: &str, origin: &Path) -> Result<Vec<RawRecord>> {
    let mut records = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((label, text)) = line.split_once('\t') else {
            return Err(Error::parse(origin, i + 1, "expected `label<TAB>text`"));
        };
        let label = label.trim();
        if label.is_empty() {
            return Err(Error::parse(origin, i + 1, "empty label"));
        }
        records.push(RawRecord {
            label: label.to_string(),
            text: text.to_string(),
        });
    }
    Ok(records)
}

/// Lowercases, splits off every punctuation or symbol character as its own
/// token and splits the rest on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_lowercase().collect());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// A tokenized document with its class index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Document {
    pub tokens: Vec<String>,
    pub label: usize,
}

/// Tokenized corpus with a fixed label ordering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    /// Class names; position is the class index.
    pub labels: Vec<String>,
    pub docs: Vec<Document>,
}

impl Corpus {
    /// Assigns class indices in lexicographic label order.
    pub fn from_records(records: &[RawRecord]) -> Self {
        let mut labels: Vec<String> = records.iter().map(|r| r.label.clone()).collect();
        labels.sort();
        labels.dedup();
        Self::with_labels(records, labels).expect("labels collected from the records")
    }

    /// Tokenizes `records` against a fixed label list, e.g. the one a model
    /// was trained with.
    pub fn with_labels(records: &[RawRecord], labels: Vec<String>) -> Result<Self> {
        let lookup: HashMap<&str, usize> = labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.as_str(), i))
            .collect();
        let docs = records
            .iter()
            .map(|r| {
                let label = *lookup.get(r.label.as_str()).ok_or_else(|| {
                    Error::Index(format!("label `{}` is not one of {labels:?}", r.label))
                })?;
                Ok(Document {
                    tokens: tokenize(&r.text),
                    label,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Corpus { labels, docs })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::from_records(&ingest(path)?))
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Sub-corpus of the given document indices, sharing the label list.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            labels: self.labels.clone(),
            docs: indices.iter().map(|&i| self.docs[i].clone()).collect(),
        }
    }
}

/// Token ↔ index map. Index 0 is padding and index 1 the unknown token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from training documents: frequency-descending,
    /// ties broken lexicographically, after the two reserved entries.
    pub fn build(docs: &[Document]) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::EmptyCorpus(
                "cannot build a vocabulary from no documents".into(),
            ));
        }
        let mut freq: HashMap<&str, usize> = HashMap::new();
        for doc in docs {
            for tok in &doc.tokens {
                *freq.entry(tok.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = freq
            .into_iter()
            .filter(|(t, _)| *t != PAD_TOKEN && *t != UNK_TOKEN)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let tokens = [PAD_TOKEN, UNK_TOKEN]
            .into_iter()
            .chain(ranked.into_iter().map(|(t, _)| t))
            .map(str::to_string)
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { index, tokens }
    }

    /// Vocabulary size including the reserved entries.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps indices back to tokens, dropping padding.
    pub fn decode(&self, indices: &[usize]) -> Vec<String> {
        indices
            .iter()
            .filter(|&&i| i != PAD)
            .filter_map(|&i| self.token(i).map(str::to_string))
            .collect()
    }

    /// `token<TAB>index` lines in index order.
    pub fn to_text(&self) -> String {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| format!("{t}\t{i}\n"))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&content, path)
    }

    /// Parses the `to_text` format; `path` is only used in errors.
    pub fn parse(content: &str, path: &Path) -> Result<Self> {
        let mut tokens = Vec::new();
        for (i, line) in content.lines().enumerate() {
            let (tok, idx) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::parse(path, i + 1, "expected `token<TAB>index`"))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::parse(path, i + 1, format!("bad index `{idx}`")))?;
            if idx != tokens.len() {
                return Err(Error::parse(
                    path,
                    i + 1,
                    format!("index {idx} out of order"),
                ));
            }
            tokens.push(tok.to_string());
        }
        if tokens.len() < 2 || tokens[PAD] != PAD_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::parse(
                path,
                1,
                "missing reserved <pad>/<unk> entries",
            ));
        }
        Ok(Self::from_tokens(tokens))
    }
}

/// Encodes `tokens` to exactly `m` indices: unknown tokens map to the
/// unknown index, short inputs are right-padded, long ones truncated.
pub fn pad_encode(tokens: &[String], vocab: &Vocab, m: usize) -> Vec<usize> {
    let mut out: Vec<usize> = tokens.iter().take(m).map(|t| vocab.index_of(t)).collect();
    out.resize(m, PAD);
    out
}

/// A padded, index-encoded instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<usize>,
    /// Token count before padding or truncation.
    pub length: usize,
    pub label: usize,
}

impl Example {
    pub fn encode(doc: &Document, vocab: &Vocab, m: usize) -> Self {
        Example {
            tokens: pad_encode(&doc.tokens, vocab, m),
            length: doc.tokens.len(),
            label: doc.label,
        }
    }
}

/// Nearest-rank percentile of document lengths, at least 1.
pub fn length_percentile(docs: &[Document], pct: f64) -> usize {
    let mut lengths: Vec<usize> = docs.iter().map(|d| d.tokens.len()).collect();
    if lengths.is_empty() {
        return 1;
    }
    lengths.sort_unstable();
    let rank = ((pct / 100.0) * lengths.len() as f64).ceil() as usize;
    lengths[rank.clamp(1, lengths.len()) - 1].max(1)
}

/// Assignment of dataset positions to cross-validation folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    /// `assignments[i]` is the fold holding example `i`.
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    /// Seeded shuffle followed by round-robin assignment, so fold sizes
    /// differ by at most one.
    pub fn new(n: usize, k: usize, seed: u64) -> Result<Self> {
        if k < 2 {
            return Err(Error::Contract(format!("need at least 2 folds, got {k}")));
        }
        if n < k {
            return Err(Error::Contract(format!(
                "{n} examples cannot fill {k} folds"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut assignments = vec![0; n];
        for (pos, &i) in order.iter().enumerate() {
            assignments[i] = pos % k;
        }
        Ok(FoldPlan {
            k,
            seed,
            assignments,
        })
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Reads word vectors in the `word v₁ … v_k` text convention. A leading
/// `count dim` header line is skipped.
pub fn read_word_vectors(path: impl AsRef<Path>, dim: usize) -> Result<HashMap<String, Vec<f32>>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut found = HashMap::new();
    for (i, line) in content.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if i == 0 && values.len() == 1 && word.parse::<usize>().is_ok() {
            continue;
        }
        if values.len() != dim {
            return Err(Error::parse(
                path,
                i + 1,
                format!(
                    "vector for `{word}` has {} values, expected {dim}",
                    values.len()
                ),
            ));
        }
        let vec = values
            .iter()
            .map(|v| v.parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        found.insert(word.to_string(), vec);
    }
    Ok(found)
}

/// Word vectors keyed by index in `vocab`; words outside it are dropped.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    vocab: &Vocab,
    dim: usize,
) -> Result<HashMap<usize, Vec<f32>>> {
    Ok(read_word_vectors(path, dim)?
        .into_iter()
        .filter_map(|(w, v)| vocab.get(&w).map(|i| (i, v)))
        .collect())
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use proptest::prelude::*;

    use super::*;

    fn docs(texts: &[&str]) -> Vec<Document> {
        texts
            .iter()
            .map(|t| Document {
                tokens: tokenize(t),
                label: 0,
            })
            .collect()
    }

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_reads_valid_lines_in_order() {
        let f = write_tmp("pos\tgood movie\nneg\tbad film\npos\tgreat\n");
        let recs = ingest(f.path()).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[1].label, "neg");
        assert_eq!(recs[1].text, "bad film");
    }

    #[test]
    fn ingest_reports_line_of_missing_tab() {
        let f = write_tmp("pos\tok\nno tab here\n");
        match ingest(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ingest_empty_file_is_empty_corpus() {
        let f = write_tmp("");
        assert!(matches!(ingest(f.path()), Err(Error::EmptyCorpus(_))));
    }

    #[test]
    fn labels_are_indexed_lexicographically() {
        let recs = parse_tsv("pos\ta\nneg\tb\n", Path::new("x")).unwrap();
        let c = Corpus::from_records(&recs);
        assert_eq!(c.labels, vec!["neg", "pos"]);
        assert_eq!(c.docs[0].label, 1);
        assert_eq!(c.docs[1].label, 0);
    }

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("Good movie!"), vec!["good", "movie", "!"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("A  b"), vec!["a", "b"]);
    }

    #[test]
    fn vocab_orders_by_frequency_then_token() {
        let v = Vocab::build(&docs(&["a b", "b c"])).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "b", "a", "c"]);
        assert_eq!(Vocab::build(&docs(&["x"])).unwrap().len(), 3);
        assert_eq!(v.index_of("zebra"), UNK);
        assert!(matches!(Vocab::build(&[]), Err(Error::EmptyCorpus(_))));
    }

    #[test]
    fn vocab_file_round_trip() {
        let v = Vocab::build(&docs(&["the cat sat", "the dog"])).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        v.save(f.path()).unwrap();
        assert_eq!(Vocab::load(f.path()).unwrap(), v);
    }

    #[test]
    fn padding_and_truncation() {
        let v = Vocab::build(&docs(&["a b c d e"])).unwrap();
        let toks = |s: &str| tokenize(s);
        assert_eq!(
            pad_encode(&toks("a"), &v, 3),
            vec![v.index_of("a"), PAD, PAD]
        );
        assert_eq!(
            pad_encode(&toks("a b c d e"), &v, 3),
            vec![v.index_of("a"), v.index_of("b"), v.index_of("c")]
        );
        assert_eq!(pad_encode(&[], &v, 2), vec![PAD, PAD]);
    }

    #[test]
    fn fold_sizes() {
        let p = FoldPlan::new(10, 10, 3).unwrap();
        assert_eq!(p.fold_sizes(), vec![1; 10]);
        let p = FoldPlan::new(11, 10, 3).unwrap();
        let mut sizes = p.fold_sizes();
        sizes.sort();
        assert_eq!(sizes, [vec![1; 9], vec![2]].concat());
        assert_eq!(FoldPlan::new(11, 10, 3).unwrap(), p);
        assert!(matches!(FoldPlan::new(3, 5, 0), Err(Error::Contract(_))));
    }

    #[test]
    fn percentile_length_nearest_rank() {
        let d = docs(&["a", "a b", "a b c", "a b c d"]);
        assert_eq!(length_percentile(&d, 95.0), 4);
        assert_eq!(length_percentile(&d, 50.0), 2);
        assert_eq!(length_percentile(&docs(&[""]), 95.0), 1);
    }

    #[test]
    fn embedding_file_matches_vocab_words() {
        let v = Vocab::build(&docs(&["good bad"])).unwrap();
        let f = write_tmp("3 2\ngood 0.5 1.5\nother 1 1\nbad -1 0\n");
        let e = load_embeddings(f.path(), &v, 2).unwrap();
        assert_eq!(e[&v.index_of("good")], vec![0.5, 1.5]);
        assert_eq!(e.len(), 2);
        let f = write_tmp("good 0.5\n");
        assert!(matches!(
            load_embeddings(f.path(), &v, 2),
            Err(Error::Parse { .. })
        ));
    }

    proptest! {
        #[test]
        fn decode_restores_in_vocab_tokens(words in proptest::collection::vec("[a-e]{1,3}", 0..12), m in 1usize..10) {
            let doc = Document { tokens: words.clone(), label: 0 };
            let v = Vocab::build(std::slice::from_ref(&doc)).unwrap();
            let enc = pad_encode(&words, &v, m);
            prop_assert_eq!(enc.len(), m);
            let expected: Vec<String> = words.iter().take(m).cloned().collect();
            prop_assert_eq!(v.decode(&enc), expected);
        }

        #[test]
        fn folds_partition_dataset(n in 2usize..80, k in 2usize..10, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let p = FoldPlan::new(n, k, seed).unwrap();
            let sizes = p.fold_sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut all: Vec<usize> = (0..k).flat_map(|f| p.test_indices(f)).collect();
            all.sort();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            for f in 0..k {
                prop_assert_eq!(p.test_indices(f).len() + p.train_indices(f).len(), n);
            }
        }
    }
}
