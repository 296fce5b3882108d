//! Term-count-of-labels (TCoL) tables: for every training word, how often
//! it occurs under each class label.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::{Document, Vocab, PAD, PAD_TOKEN, UNK};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TcolTable {
    counts: BTreeMap<String, Vec<u64>>,
    num_classes: usize,
    vocab_size: usize,
}

impl TcolTable {
    /// Counts every token occurrence under its document's label. Padding is
    /// never counted.
    pub fn build(docs: &[Document], num_classes: usize, vocab_size: usize) -> Result<Self> {
        let mut counts: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        for doc in docs {
            if doc.label >= num_classes {
                return Err(Error::Contract(format!(
                    "label {} outside {num_classes} classes",
                    doc.label
                )));
            }
            for tok in doc.tokens.iter().filter(|t| t.as_str() != PAD_TOKEN) {
                counts
                    .entry(tok.clone())
                    .or_insert_with(|| vec![0; num_classes])[doc.label] += 1;
            }
        }
        Ok(TcolTable {
            counts,
            num_classes,
            vocab_size,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Vocabulary size used as the normalizer.
    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Count vector of `word`; the zero vector for words never seen.
    pub fn lookup(&self, word: &str) -> Vec<u64> {
        self.counts
            .get(word)
            .cloned()
            .unwrap_or_else(|| vec![0; self.num_classes])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[u64])> {
        self.counts.iter().map(|(w, c)| (w.as_str(), c.as_slice()))
    }

    /// Per-class totals over all words.
    pub fn class_totals(&self) -> Vec<u64> {
        let mut totals = vec![0; self.num_classes];
        for c in self.counts.values() {
            for (t, v) in totals.iter_mut().zip(c) {
                *t += v;
            }
        }
        totals
    }

    /// Count vectors aligned with vocabulary indices. Padding and unknown
    /// entries are zero.
    pub fn by_index(&self, vocab: &Vocab) -> TcolIndex {
        let rows = vocab
            .tokens()
            .iter()
            .enumerate()
            .map(|(i, tok)| {
                if i == PAD || i == UNK {
                    vec![0; self.num_classes]
                } else {
                    self.lookup(tok)
                }
            })
            .collect();
        TcolIndex {
            rows,
            num_classes: self.num_classes,
            vocab_size: self.vocab_size,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#classes={} vocab={}\n", self.num_classes, self.vocab_size);
        for (word, counts) in &self.counts {
            out.push_str(word);
            for c in counts {
                write!(out, "\t{c}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
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

    pub fn parse(content: &str, origin: &Path) -> Result<Self> {
        let mut lines = content.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "missing `#classes=c vocab=V` header"))?;
        let (num_classes, vocab_size) = parse_header(header)
            .ok_or_else(|| Error::parse(origin, 1, format!("bad header `{header}`")))?;
        let mut counts = BTreeMap::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let mut fields = line.split('\t');
            let word = fields.next().unwrap_or_default();
            if word.is_empty() {
                return Err(Error::parse(origin, lineno, "empty word"));
            }
            let vec = fields
                .map(|f| f.parse::<u64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(origin, lineno, e.to_string()))?;
            if vec.len() != num_classes {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("{} counts for `{word}`, expected {num_classes}", vec.len()),
                ));
            }
            if counts.insert(word.to_string(), vec).is_some() {
                return Err(Error::parse(
                    origin,
                    lineno,
                    format!("duplicate word `{word}`"),
                ));
            }
        }
        Ok(TcolTable {
            counts,
            num_classes,
            vocab_size,
        })
    }
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let rest = line.strip_prefix('#')?;
    let mut classes = None;
    let mut vocab = None;
    for part in rest.split_whitespace() {
        match part.split_once('=')? {
            ("classes", v) => classes = v.parse().ok(),
            ("vocab", v) => vocab = v.parse().ok(),
            _ => return None,
        }
    }
    Some((classes?, vocab?))
}

/// TCoL vectors addressed by vocabulary index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TcolIndex {
    rows: Vec<Vec<u64>>,
    num_classes: usize,
    vocab_size: usize,
}

impl TcolIndex {
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Raw count matrix `[c×m]` of an encoded sentence; column `j` is the
    /// count vector of token `j`.
    pub fn sentence<T: Scalar>(&self, tokens: &[usize]) -> Tensor<T> {
        let m = tokens.len();
        let mut data = vec![T::zero(); self.num_classes * m];
        for (j, &tok) in tokens.iter().enumerate() {
            if let Some(row) = self.rows.get(tok) {
                for (i, &c) in row.iter().enumerate() {
                    data[i * m + j] = T::from_f64(c as f64);
                }
            }
        }
        Tensor::new(vec![self.num_classes, m], data).expect("non-empty sentence and classes")
    }

    /// Count matrix divided by the vocabulary size.
    pub fn sentence_normalized<T: Scalar>(&self, tokens: &[usize]) -> Result<Tensor<T>> {
        normalize(&self.sentence(tokens), self.vocab_size)
    }
}

/// Elementwise division by the vocabulary size.
pub fn normalize<T: Scalar>(counts: &Tensor<T>, vocab_size: usize) -> Result<Tensor<T>> {
    if vocab_size == 0 {
        return Err(Error::Contract("vocabulary size must be positive".into()));
    }
    let v = T::from_f64(vocab_size as f64);
    Ok(counts.map(|c| c / v))
}
