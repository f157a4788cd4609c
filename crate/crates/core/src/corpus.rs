//! Corpus ingestion, validation, deduplication, and per-document splitting.
//!
//! A corpus is stored as distinct `(doc, word)` tuples with multiplicities,
//! which is the representation the fixed-point backend solves directly and
//! the samplers expand back into token instances. Links (for relational
//! models) and per-document labels (for supervised models) ride along and
//! are ignored by models that do not use them.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A distinct document-word pair and how many times it occurs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tuple {
    pub doc: u32,
    pub word: u32,
    pub count: u32,
}

/// Input file layouts understood by [`load_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One document per line, whitespace-separated word strings.
    BowText,
    /// One `doc_id,word_id,count` triple per line, 0-based ids.
    TupleCsv,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bow-text" => Ok(CorpusFormat::BowText),
            "tuple-csv" => Ok(CorpusFormat::TupleCsv),
            other => Err(Error::InvalidConfig(format!(
                "unknown corpus format `{other}` (expected bow-text or tuple-csv)"
            ))),
        }
    }
}

/// Deduplicated bag-of-words corpus with optional link graph and labels.
#[derive(Debug, Clone)]
pub struct Corpus {
    vocab: Vec<String>,
    /// Sorted by `(doc, word)`; each pair appears exactly once.
    tuples: Vec<Tuple>,
    /// Span of `tuples` belonging to each document.
    doc_ranges: Vec<Range<usize>>,
    /// N_d: token count per document.
    doc_lengths: Vec<u32>,
    links: Vec<(u32, u32)>,
    neighbors: Vec<Vec<u32>>,
    labels: Option<Vec<f64>>,
}

impl Corpus {
    /// Build a corpus from per-document token id lists. Multiplicities are
    /// aggregated; the vocabulary is taken as given.
    pub fn from_documents(docs: Vec<Vec<u32>>, vocab: Vec<String>) -> Result<Self> {
        let mut raw = Vec::new();
        for (d, words) in docs.iter().enumerate() {
            let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
            for &w in words {
                *counts.entry(w).or_insert(0) += 1;
            }
            for (w, c) in counts {
                raw.push((d as u32, w, c));
            }
        }
        Self::from_tuples(docs.len(), vocab, raw)
    }

    /// Build a corpus from raw `(doc, word, count)` triples. Triples sharing
    /// a `(doc, word)` pair are merged by summing counts.
    pub fn from_tuples(
        num_docs: usize,
        vocab: Vec<String>,
        raw: Vec<(u32, u32, u32)>,
    ) -> Result<Self> {
        let vocab_size = vocab.len();
        let mut merged: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        for (d, w, c) in raw {
            if d as usize >= num_docs {
                return Err(Error::IdOutOfRange(format!(
                    "doc id {d} >= num_docs {num_docs}"
                )));
            }
            if w as usize >= vocab_size {
                return Err(Error::IdOutOfRange(format!(
                    "word id {w} >= vocab size {vocab_size}"
                )));
            }
            if c == 0 {
                return Err(Error::InvalidCorpus(format!(
                    "tuple ({d},{w}) has zero count"
                )));
            }
            *merged.entry((d, w)).or_insert(0) += c;
        }
        let tuples: Vec<Tuple> = merged
            .into_iter()
            .map(|((doc, word), count)| Tuple { doc, word, count })
            .collect();

        let mut doc_lengths = vec![0u32; num_docs];
        for t in &tuples {
            doc_lengths[t.doc as usize] += t.count;
        }
        for (d, &n) in doc_lengths.iter().enumerate() {
            if n == 0 {
                return Err(Error::EmptyDocument(d));
            }
        }
        let doc_ranges = compute_doc_ranges(num_docs, &tuples);
        Ok(Corpus {
            vocab,
            tuples,
            doc_ranges,
            doc_lengths,
            links: Vec::new(),
            neighbors: Vec::new(),
            labels: None,
        })
    }

    /// Attach an undirected link graph over documents.
    pub fn with_links(mut self, links: Vec<(u32, u32)>) -> Result<Self> {
        let n = self.num_docs() as u32;
        for &(a, b) in &links {
            if a >= n || b >= n {
                return Err(Error::IdOutOfRange(format!(
                    "link ({a},{b}) references a document >= {n}"
                )));
            }
        }
        let mut neighbors = vec![Vec::new(); n as usize];
        for &(a, b) in &links {
            neighbors[a as usize].push(b);
            if a != b {
                neighbors[b as usize].push(a);
            }
        }
        self.links = links;
        self.neighbors = neighbors;
        Ok(self)
    }

    /// Attach one real-valued label per document.
    pub fn with_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.num_docs() {
            return Err(Error::InvalidCorpus(format!(
                "{} labels for {} documents",
                labels.len(),
                self.num_docs()
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn num_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    /// Total token count (sum of multiplicities).
    pub fn total_tokens(&self) -> u64 {
        self.doc_lengths.iter().map(|&n| n as u64).sum()
    }

    /// Number of distinct `(doc, word)` tuples.
    pub fn num_tuples(&self) -> usize {
        self.tuples.len()
    }

    pub fn tuples(&self) -> &[Tuple] {
        &self.tuples
    }

    /// Distinct tuples of one document.
    pub fn doc_tuples(&self, doc: usize) -> &[Tuple] {
        &self.tuples[self.doc_ranges[doc].clone()]
    }

    /// N_d: token count of document `doc`.
    pub fn doc_len(&self, doc: usize) -> u32 {
        self.doc_lengths[doc]
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn links(&self) -> &[(u32, u32)] {
        &self.links
    }

    /// Documents linked to `doc` (empty when the corpus has no link graph).
    pub fn neighbors(&self, doc: usize) -> &[u32] {
        if self.neighbors.is_empty() {
            &[]
        } else {
            &self.neighbors[doc]
        }
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    /// Expand tuples into individual token instances, in `(doc, word)` order.
    /// This is the canonical token indexing shared by the samplers.
    pub fn expand_tokens(&self) -> Vec<(u32, u32)> {
        let mut out = Vec::with_capacity(self.total_tokens() as usize);
        for t in &self.tuples {
            for _ in 0..t.count {
                out.push((t.doc, t.word));
            }
        }
        out
    }

    /// Fraction of token instances that repeat an already-seen tuple:
    /// `1 - distinct_tuples / total_tokens`.
    pub fn dedup_ratio(&self) -> f64 {
        let total = self.total_tokens();
        if total == 0 {
            return 0.0;
        }
        1.0 - self.num_tuples() as f64 / total as f64
    }

    /// Partition token instances per document according to `spec`.
    ///
    /// Every document keeps at least one training token
    /// (`max(1, floor(fraction * N_d))`); the remainder goes to the test
    /// side, which may therefore be empty for single-token documents (a
    /// warning, not an error). The same seed always produces the same split.
    pub fn train_test_split(&self, spec: &SplitSpec) -> Result<(Corpus, Corpus)> {
        if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train fraction {} outside the open interval (0,1)",
                spec.train_fraction
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
        let mut train_raw = Vec::new();
        let mut test_raw = Vec::new();
        for d in 0..self.num_docs() {
            let mut toks: Vec<u32> = Vec::with_capacity(self.doc_len(d) as usize);
            for t in self.doc_tuples(d) {
                for _ in 0..t.count {
                    toks.push(t.word);
                }
            }
            let n = toks.len();
            let n_train = ((spec.train_fraction * n as f64).floor() as usize).max(1);
            if n == 1 {
                log::warn!("document {d} has a single token; assigning it entirely to train");
            }
            toks.shuffle(&mut rng);
            let push = |raw: &mut Vec<(u32, u32, u32)>, words: &[u32]| {
                let mut counts: BTreeMap<u32, u32> = BTreeMap::new();
                for &w in words {
                    *counts.entry(w).or_insert(0) += 1;
                }
                for (w, c) in counts {
                    raw.push((d as u32, w, c));
                }
            };
            push(&mut train_raw, &toks[..n_train]);
            push(&mut test_raw, &toks[n_train..]);
        }
        let train = self.rebuild_side(train_raw)?;
        let test = self.rebuild_side(test_raw)?;
        Ok((train, test))
    }

    /// Write the tuples in `tuple-csv` format (`doc,word,count` per line),
    /// plus `.links` / `.labels` sidecar files when present.
    pub fn write_tuple_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        use std::io::Write;
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        (|| -> std::io::Result<()> {
            for t in &self.tuples {
                writeln!(w, "{},{},{}", t.doc, t.word, t.count)?;
            }
            w.flush()
        })()
        .map_err(|e| Error::io(path, e))?;
        if !self.links.is_empty() {
            let lp = sidecar(path, "links");
            let mut text = String::new();
            for (a, b) in &self.links {
                text.push_str(&format!("{a} {b}\n"));
            }
            std::fs::write(&lp, text).map_err(|e| Error::io(&lp, e))?;
        }
        if let Some(labels) = &self.labels {
            let lp = sidecar(path, "labels");
            let mut text = String::new();
            for y in labels {
                text.push_str(&format!("{y}\n"));
            }
            std::fs::write(&lp, text).map_err(|e| Error::io(&lp, e))?;
        }
        Ok(())
    }

    /// Build a split side sharing this corpus's vocabulary, links, and
    /// labels. Unlike loaded corpora, a side may contain empty documents.
    fn rebuild_side(&self, raw: Vec<(u32, u32, u32)>) -> Result<Corpus> {
        let num_docs = self.num_docs();
        let mut merged: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        for (d, w, c) in raw {
            *merged.entry((d, w)).or_insert(0) += c;
        }
        let tuples: Vec<Tuple> = merged
            .into_iter()
            .map(|((doc, word), count)| Tuple { doc, word, count })
            .collect();
        let mut doc_lengths = vec![0u32; num_docs];
        for t in &tuples {
            doc_lengths[t.doc as usize] += t.count;
        }
        let doc_ranges = compute_doc_ranges(num_docs, &tuples);
        Ok(Corpus {
            vocab: self.vocab.clone(),
            tuples,
            doc_ranges,
            doc_lengths,
            links: self.links.clone(),
            neighbors: self.neighbors.clone(),
            labels: self.labels.clone(),
        })
    }
}

fn compute_doc_ranges(num_docs: usize, tuples: &[Tuple]) -> Vec<Range<usize>> {
    let mut ranges = Vec::with_capacity(num_docs);
    let mut start = 0usize;
    for d in 0..num_docs as u32 {
        let mut end = start;
        while end < tuples.len() && tuples[end].doc == d {
            end += 1;
        }
        ranges.push(start..end);
        start = end;
    }
    ranges
}

/// Deterministic per-document train/test partition parameters.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub rng_seed: u64,
}

/// Load a corpus file, plus optional `<path>.links` and `<path>.labels`
/// sidecar files when they exist next to it.
pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Corpus> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let corpus = match format {
        CorpusFormat::BowText => parse_bow_text(reader)?,
        CorpusFormat::TupleCsv => parse_tuple_csv(reader)?,
    };

    let links_path = sidecar(path, "links");
    let corpus = if links_path.exists() {
        corpus.with_links(parse_links(&links_path)?)?
    } else {
        corpus
    };
    let labels_path = sidecar(path, "labels");
    let corpus = if labels_path.exists() {
        corpus.with_labels(parse_labels(&labels_path)?)?
    } else {
        corpus
    };
    Ok(corpus)
}

fn sidecar(path: &Path, ext: &str) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    std::path::PathBuf::from(s)
}

fn parse_bow_text(reader: impl BufRead) -> Result<Corpus> {
    let mut vocab: Vec<String> = Vec::new();
    let mut index: BTreeMap<String, u32> = BTreeMap::new();
    let mut docs: Vec<Vec<u32>> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            return Err(Error::EmptyDocument(lineno));
        }
        let mut ids = Vec::with_capacity(words.len());
        for w in words {
            let id = *index.entry(w.to_string()).or_insert_with(|| {
                vocab.push(w.to_string());
                (vocab.len() - 1) as u32
            });
            ids.push(id);
        }
        docs.push(ids);
    }
    if docs.is_empty() {
        return Err(Error::InvalidCorpus("corpus file has no documents".into()));
    }
    Corpus::from_documents(docs, vocab)
}

fn parse_tuple_csv(reader: impl BufRead) -> Result<Corpus> {
    let mut raw: Vec<(u32, u32, u32)> = Vec::new();
    let mut max_doc = 0u32;
    let mut max_word = 0u32;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = trimmed.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected `doc,word,count`, got `{trimmed}`"),
            });
        }
        let parse = |s: &str, what: &str| -> Result<u32> {
            s.parse::<u32>().map_err(|e| Error::Parse {
                line: lineno + 1,
                message: format!("bad {what} `{s}`: {e}"),
            })
        };
        let d = parse(parts[0], "doc id")?;
        let w = parse(parts[1], "word id")?;
        let c = parse(parts[2], "count")?;
        if c == 0 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: "count must be >= 1".into(),
            });
        }
        max_doc = max_doc.max(d);
        max_word = max_word.max(w);
        raw.push((d, w, c));
    }
    if raw.is_empty() {
        return Err(Error::InvalidCorpus("corpus file has no tuples".into()));
    }
    let vocab = (0..=max_word).map(|w| format!("w{w}")).collect();
    Corpus::from_tuples(max_doc as usize + 1, vocab, raw)
}

fn parse_links(path: &Path) -> Result<Vec<(u32, u32)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut links = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = trimmed.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(Error::Parse {
                line: lineno + 1,
                message: format!("expected `doc doc`, got `{trimmed}`"),
            });
        }
        let a = parts[0].parse::<u32>().map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let b = parts[1].parse::<u32>().map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        links.push((a, b));
    }
    Ok(links)
}

fn parse_labels(path: &Path) -> Result<Vec<f64>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut labels = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        labels.push(trimmed.parse::<f64>().map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?);
    }
    Ok(labels)
}

/// Affinely map `[min(labels), max(labels)]` onto `[lo, hi]`. A constant
/// label vector maps to the midpoint.
pub fn normalize_labels(labels: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::InvalidConfig("label list is empty".into()));
    }
    if hi.is_nan() || lo.is_nan() || hi <= lo {
        return Err(Error::InvalidConfig(format!(
            "normalize_labels requires hi > lo, got [{lo}, {hi}]"
        )));
    }
    let min = labels.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = labels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Ok(vec![(lo + hi) / 2.0; labels.len()]);
    }
    let scale = (hi - lo) / (max - min);
    Ok(labels.iter().map(|&y| lo + (y - min) * scale).collect())
}
