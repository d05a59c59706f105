//! Longitudinal bag-of-words corpus: documents indexed by (subject, stage),
//! per-stage covariates and one group label per subject.
//!
//! On disk a corpus is a directory with four files:
//!
//! * `vocab.txt`: one word per line, line index = word index.
//! * `docs.jsonl`: `{"subject": i, "stage": t, "counts": {"<word>": n, ...}}` per line.
//! * `meta.csv`: header `subject,stage,x0,...,x{P-1}`, one row per (subject, stage).
//! * `groups.csv`: header `subject,group`, one row per subject.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const DOCS_FILE: &str = "docs.jsonl";
pub const META_FILE: &str = "meta.csv";
pub const GROUPS_FILE: &str = "groups.csv";

/// Sparse word counts of one document, sorted by word index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Document {
    entries: Vec<(usize, u32)>,
    total: u64,
}

impl Document {
    /// Builds a document from (word, count) pairs. Zero counts are dropped and
    /// repeated words are merged.
    pub fn from_counts(pairs: impl IntoIterator<Item = (usize, u32)>) -> Self {
        let mut map = BTreeMap::new();
        for (w, c) in pairs {
            if c > 0 {
                *map.entry(w).or_insert(0u32) += c;
            }
        }
        let entries: Vec<_> = map.into_iter().collect();
        let total = entries.iter().map(|&(_, c)| c as u64).sum();
        Document { entries, total }
    }

    /// Builds a document from a dense count vector.
    pub fn from_dense(counts: &[u32]) -> Self {
        Self::from_counts(counts.iter().copied().enumerate())
    }

    pub fn entries(&self) -> &[(usize, u32)] {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn contains(&self, word: usize) -> bool {
        self.entries.binary_search_by_key(&word, |&(w, _)| w).is_ok()
    }

    pub fn to_dense(&self, vocab_size: usize) -> Vec<u32> {
        let mut out = vec![0; vocab_size];
        for &(w, c) in &self.entries {
            out[w] = c;
        }
        out
    }

    /// Relative word frequencies as sparse (word, share) pairs.
    pub fn frequencies(&self) -> Vec<(usize, f64)> {
        let n = self.total as f64;
        self.entries.iter().map(|&(w, c)| (w, c as f64 / n)).collect()
    }
}

/// Per-feature affine transform applied to covariates at load time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// Tolerate (subject, stage) cells without a document.
    pub allow_missing: bool,
    /// Standardize each covariate to zero mean and unit variance.
    pub standardize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            allow_missing: false,
            standardize: true,
        }
    }
}

/// A validated longitudinal corpus. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    n_subjects: usize,
    n_stages: usize,
    n_features: usize,
    n_groups: usize,
    vocab: Vec<String>,
    docs: Vec<Option<Document>>,
    covariates: Vec<f64>,
    groups: Vec<usize>,
    standardization: Option<Standardization>,
}

impl Corpus {
    /// Validates and assembles a corpus.
    ///
    /// `docs` is indexed `subject * n_stages + stage`, `covariates` is indexed
    /// `(subject * n_stages + stage) * n_features + feature`. A `None` or
    /// empty document is only accepted when `allow_missing` is set.
    pub fn new(
        vocab: Vec<String>,
        n_stages: usize,
        docs: Vec<Option<Document>>,
        n_features: usize,
        covariates: Vec<f64>,
        groups: Vec<usize>,
        n_groups: usize,
        allow_missing: bool,
    ) -> Result<Self> {
        let n_subjects = groups.len();
        if n_subjects == 0 {
            return Err(Error::InvalidCorpus("a corpus must contain at least one subject".into()));
        }
        if n_stages == 0 {
            return Err(Error::InvalidCorpus("a corpus must contain at least one stage".into()));
        }
        if vocab.is_empty() {
            return Err(Error::InvalidCorpus("empty vocabulary".into()));
        }
        if n_groups < 2 {
            return Err(Error::InvalidCorpus(format!("need at least 2 groups, got {n_groups}")));
        }
        let mut seen = HashSet::with_capacity(vocab.len());
        for w in &vocab {
            if !seen.insert(w.as_str()) {
                return Err(Error::InvalidCorpus(format!("duplicate vocabulary entry `{w}`")));
            }
        }
        if docs.len() != n_subjects * n_stages {
            return Err(Error::ShapeError(format!(
                "{} documents for {n_subjects} subjects x {n_stages} stages",
                docs.len()
            )));
        }
        if covariates.len() != n_subjects * n_stages * n_features {
            return Err(Error::ShapeError(format!(
                "{} covariate values for {n_subjects}x{n_stages}x{n_features}",
                covariates.len()
            )));
        }
        if let Some(x) = covariates.iter().find(|x| !x.is_finite()) {
            return Err(Error::NumericError(format!("non-finite covariate {x}")));
        }
        for (i, &g) in groups.iter().enumerate() {
            if g >= n_groups {
                return Err(Error::InvalidCorpus(format!(
                    "subject {i} has group {g}, but there are {n_groups} groups"
                )));
            }
        }
        let v = vocab.len();
        let mut docs = docs;
        for (idx, d) in docs.iter_mut().enumerate() {
            let (subject, stage) = (idx / n_stages, idx % n_stages);
            if let Some(doc) = d {
                if let Some(&(w, _)) = doc.entries.last() {
                    if w >= v {
                        return Err(Error::VocabMismatch {
                            index: w,
                            vocab_size: v,
                        });
                    }
                }
                if doc.is_empty() {
                    *d = None;
                }
            }
            if d.is_none() && !allow_missing {
                return Err(Error::MissingDocument { subject, stage });
            }
        }
        Ok(Corpus {
            n_subjects,
            n_stages,
            n_features,
            n_groups,
            vocab,
            docs,
            covariates,
            groups,
            standardization: None,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_stages(&self) -> usize {
        self.n_stages
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn doc(&self, subject: usize, stage: usize) -> Option<&Document> {
        self.docs[subject * self.n_stages + stage].as_ref()
    }

    pub fn covariates(&self, subject: usize, stage: usize) -> &[f64] {
        let start = (subject * self.n_stages + stage) * self.n_features;
        &self.covariates[start..start + self.n_features]
    }

    pub fn covariate_values(&self) -> &[f64] {
        &self.covariates
    }

    pub fn group(&self, subject: usize) -> usize {
        self.groups[subject]
    }

    pub fn groups(&self) -> &[usize] {
        &self.groups
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn n_missing(&self) -> usize {
        self.docs.iter().filter(|d| d.is_none()).count()
    }

    pub fn total_count(&self) -> u64 {
        self.docs.iter().flatten().map(Document::total).sum()
    }

    /// Standardizes each covariate over all (subject, stage) cells and records
    /// the transform. Constant features are only centered.
    pub fn standardized(mut self) -> Self {
        let p = self.n_features;
        let cells = self.n_subjects * self.n_stages;
        if p == 0 {
            self.standardization = Some(Standardization {
                mean: vec![],
                scale: vec![],
            });
            return self;
        }
        let mut mean = vec![0.0; p];
        for row in self.covariates.chunks(p) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= cells as f64);
        let mut var = vec![0.0; p];
        for row in self.covariates.chunks(p) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|v| {
                let sd = (v / cells as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        for row in self.covariates.chunks_mut(p) {
            for ((x, m), s) in row.iter_mut().zip(&mean).zip(&scale) {
                *x = (*x - m) / s;
            }
        }
        self.standardization = Some(Standardization { mean, scale });
        self
    }

    /// Same corpus with `docs` dropped for the listed (subject, stage) cells.
    pub fn with_missing(mut self, cells: &[(usize, usize)]) -> Self {
        for &(i, t) in cells {
            self.docs[i * self.n_stages + t] = None;
        }
        self
    }
}

#[derive(Deserialize)]
struct DocLine {
    subject: usize,
    stage: usize,
    counts: BTreeMap<String, u64>,
}

/// Reads and validates a corpus directory.
pub fn load_corpus(dir: impl AsRef<Path>, opts: LoadOptions) -> Result<Corpus> {
    let dir = dir.as_ref();
    let read = |name: &str| fs::read_to_string(dir.join(name)).map_err(|e| Error::io(dir.join(name), e));

    let vocab_text = read(VOCAB_FILE)?;
    let mut vocab = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in vocab_text.lines().enumerate() {
        let word = line.trim_end_matches('\r');
        if !seen.insert(word.to_string()) {
            return Err(Error::format(VOCAB_FILE, lineno + 1, format!("duplicate word `{word}`")));
        }
        vocab.push(word.to_string());
    }
    let v = vocab.len();

    let groups_text = read(GROUPS_FILE)?;
    let mut labels: BTreeMap<usize, usize> = BTreeMap::new();
    for (lineno, line) in csv_rows(&groups_text, GROUPS_FILE, &["subject", "group"])? {
        let fields = parse_fields::<usize>(line, GROUPS_FILE, lineno)?;
        if fields.len() != 2 {
            return Err(Error::format(GROUPS_FILE, lineno, "expected `subject,group`"));
        }
        if labels.insert(fields[0], fields[1]).is_some() {
            return Err(Error::format(GROUPS_FILE, lineno, format!("subject {} listed twice", fields[0])));
        }
    }

    let docs_text = read(DOCS_FILE)?;
    let mut raw_docs: BTreeMap<(usize, usize), Document> = BTreeMap::new();
    for (lineno, line) in docs_text.lines().enumerate() {
        let lineno = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocLine =
            serde_json::from_str(line).map_err(|e| Error::format(DOCS_FILE, lineno, e.to_string()))?;
        let mut pairs = Vec::with_capacity(rec.counts.len());
        for (key, count) in rec.counts {
            let w: usize = key
                .parse()
                .map_err(|_| Error::format(DOCS_FILE, lineno, format!("word index `{key}` is not an integer")))?;
            if w >= v {
                return Err(Error::VocabMismatch {
                    index: w,
                    vocab_size: v,
                });
            }
            let count = u32::try_from(count)
                .map_err(|_| Error::format(DOCS_FILE, lineno, format!("count {count} too large")))?;
            pairs.push((w, count));
        }
        if !labels.contains_key(&rec.subject) {
            return Err(Error::MissingLabel { subject: rec.subject });
        }
        let key = (rec.subject, rec.stage);
        if raw_docs.insert(key, Document::from_counts(pairs)).is_some() {
            return Err(Error::DuplicateDocument {
                subject: rec.subject,
                stage: rec.stage,
            });
        }
    }

    let meta_text = read(META_FILE)?;
    let mut meta_lines = meta_text.lines().enumerate();
    let header = loop {
        match meta_lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l,
            None => return Err(Error::format(META_FILE, 1, "missing header")),
        }
    };
    let header: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if header.len() < 2 || header[0] != "subject" || header[1] != "stage" {
        return Err(Error::format(META_FILE, 1, "header must start with `subject,stage`"));
    }
    for (p, name) in header[2..].iter().enumerate() {
        if *name != format!("x{p}") {
            return Err(Error::format(META_FILE, 1, format!("expected column `x{p}`, found `{name}`")));
        }
    }
    let n_features = header.len() - 2;
    let mut meta_rows: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for (lineno, line) in meta_lines {
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n_features + 2 {
            return Err(Error::format(
                META_FILE,
                lineno,
                format!("expected {} fields, found {}", n_features + 2, fields.len()),
            ));
        }
        let parse_idx = |s: &str| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::format(META_FILE, lineno, format!("bad index `{s}`")))
        };
        let key = (parse_idx(fields[0])?, parse_idx(fields[1])?);
        let mut values = Vec::with_capacity(n_features);
        for s in &fields[2..] {
            let x: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::format(META_FILE, lineno, format!("bad number `{s}`")))?;
            if !x.is_finite() {
                return Err(Error::format(META_FILE, lineno, format!("non-finite covariate `{s}`")));
            }
            values.push(x);
        }
        if meta_rows.insert(key, values).is_some() {
            return Err(Error::format(
                META_FILE,
                lineno,
                format!("duplicate row for subject {}, stage {}", key.0, key.1),
            ));
        }
    }

    let n_subjects = labels
        .keys()
        .chain(raw_docs.keys().map(|(i, _)| i))
        .chain(meta_rows.keys().map(|(i, _)| i))
        .max()
        .map_or(0, |m| m + 1);
    let n_stages = raw_docs
        .keys()
        .chain(meta_rows.keys())
        .map(|&(_, t)| t)
        .max()
        .map_or(0, |m| m + 1);
    if n_subjects == 0 || n_stages == 0 {
        return Err(Error::InvalidCorpus("a corpus must contain at least one subject".into()));
    }

    let mut groups = Vec::with_capacity(n_subjects);
    for i in 0..n_subjects {
        groups.push(*labels.get(&i).ok_or(Error::MissingLabel { subject: i })?);
    }
    let n_groups = groups.iter().max().map_or(2, |&g| (g + 1).max(2));

    let mut docs = Vec::with_capacity(n_subjects * n_stages);
    let mut covariates = Vec::with_capacity(n_subjects * n_stages * n_features);
    for i in 0..n_subjects {
        for t in 0..n_stages {
            docs.push(raw_docs.remove(&(i, t)));
            let row = meta_rows
                .get(&(i, t))
                .ok_or(Error::MissingMetadata { subject: i, stage: t })?;
            covariates.extend_from_slice(row);
        }
    }

    let corpus = Corpus::new(
        vocab,
        n_stages,
        docs,
        n_features,
        covariates,
        groups,
        n_groups,
        opts.allow_missing,
    )?;
    Ok(if opts.standardize {
        corpus.standardized()
    } else {
        corpus
    })
}

/// Writes the four corpus files into `dir`, creating it if needed.
pub fn save_corpus(corpus: &Corpus, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if corpus.n_subjects == 0 {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::InvalidInput, "refusing to write an empty corpus"),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| fs::write(dir.join(name), text).map_err(|e| Error::io(dir.join(name), e));

    let mut vocab = String::new();
    for w in &corpus.vocab {
        vocab.push_str(w);
        vocab.push('\n');
    }
    write(VOCAB_FILE, vocab)?;

    let mut docs = String::new();
    for i in 0..corpus.n_subjects {
        for t in 0..corpus.n_stages {
            if let Some(doc) = corpus.doc(i, t) {
                let _ = write!(docs, "{{\"subject\":{i},\"stage\":{t},\"counts\":{{");
                for (n, &(w, c)) in doc.entries().iter().enumerate() {
                    if n > 0 {
                        docs.push(',');
                    }
                    let _ = write!(docs, "\"{w}\":{c}");
                }
                docs.push_str("}}\n");
            }
        }
    }
    write(DOCS_FILE, docs)?;

    let mut meta = String::from("subject,stage");
    for p in 0..corpus.n_features {
        let _ = write!(meta, ",x{p}");
    }
    meta.push('\n');
    for i in 0..corpus.n_subjects {
        for t in 0..corpus.n_stages {
            let _ = write!(meta, "{i},{t}");
            for x in corpus.covariates(i, t) {
                // `{:?}` prints the shortest representation that parses back bit-exactly.
                let _ = write!(meta, ",{x:?}");
            }
            meta.push('\n');
        }
    }
    write(META_FILE, meta)?;

    let mut groups = String::from("subject,group\n");
    for (i, g) in corpus.groups.iter().enumerate() {
        let _ = writeln!(groups, "{i},{g}");
    }
    write(GROUPS_FILE, groups)
}

fn csv_rows<'a>(
    text: &'a str,
    file: &'static str,
    expected_header: &[&str],
) -> Result<impl Iterator<Item = (usize, &'a str)>> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.split(',').map(str::trim).eq(expected_header.iter().copied()) => Ok(lines),
        Some((n, _)) => Err(Error::format(file, n, format!("header must be `{}`", expected_header.join(",")))),
        None => Err(Error::format(file, 1, "missing header")),
    }
}

fn parse_fields<T: std::str::FromStr>(line: &str, file: &'static str, lineno: usize) -> Result<Vec<T>> {
    line.split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::format(file, lineno, format!("cannot parse `{s}`")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_files(dir: &Path, vocab: &str, docs: &str, meta: &str, groups: &str) {
        fs::write(dir.join(VOCAB_FILE), vocab).unwrap();
        fs::write(dir.join(DOCS_FILE), docs).unwrap();
        fs::write(dir.join(META_FILE), meta).unwrap();
        fs::write(dir.join(GROUPS_FILE), groups).unwrap();
    }

    const DOC: &str = r#"{"subject": 0, "stage": 0, "counts": {"0": 2, "1": 1}}"#;

    fn minimal(dir: &Path, docs: &str) {
        write_files(dir, "alpha\nbeta\n", docs, "subject,stage\n0,0\n", "subject,group\n0,0\n");
    }

    #[test]
    fn loads_minimal_corpus() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path(), &format!("{DOC}\n"));
        let c = load_corpus(dir.path(), LoadOptions::default()).unwrap();
        assert_eq!((c.n_subjects(), c.n_stages(), c.vocab_size()), (1, 1, 2));
        assert_eq!(c.total_count(), 3);
        assert_eq!(c.doc(0, 0).unwrap().to_dense(2), vec![2, 1]);
    }

    #[test]
    fn duplicate_document_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path(), &format!("{DOC}\n{DOC}\n"));
        let err = load_corpus(dir.path(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DuplicateDocument { subject: 0, stage: 0 }), "{err}");
    }

    #[test]
    fn out_of_vocabulary_index_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path(), r#"{"subject": 0, "stage": 0, "counts": {"5": 1}}"#);
        let err = load_corpus(dir.path(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::VocabMismatch { index: 5, vocab_size: 2 }), "{err}");
    }

    #[test]
    fn unlabeled_subject_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_files(
            dir.path(),
            "a\nb\n",
            r#"{"subject": 1, "stage": 0, "counts": {"0": 1}}"#,
            "subject,stage\n0,0\n1,0\n",
            "subject,group\n0,1\n",
        );
        let err = load_corpus(dir.path(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MissingLabel { subject: 1 }), "{err}");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path(), &format!("{DOC}\n{{not json\n"));
        match load_corpus(dir.path(), LoadOptions::default()).unwrap_err() {
            Error::FormatError { file, line, .. } => {
                assert_eq!(file, DOCS_FILE);
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_cells_need_the_flag() {
        let dir = tempfile::tempdir().unwrap();
        write_files(
            dir.path(),
            "a\nb\n",
            r#"{"subject": 0, "stage": 1, "counts": {"0": 1}}"#,
            "subject,stage\n0,0\n0,1\n",
            "subject,group\n0,0\n",
        );
        let err = load_corpus(dir.path(), LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MissingDocument { subject: 0, stage: 0 }));
        let c = load_corpus(
            dir.path(),
            LoadOptions {
                allow_missing: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(c.doc(0, 0).is_none());
        assert_eq!(c.n_missing(), 1);
    }

    #[test]
    fn bad_covariate_and_missing_meta_row() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), "a\n", &format!("{}\n", r#"{"subject":0,"stage":0,"counts":{"0":1}}"#), "subject,stage,x0\n0,0,nan\n", "subject,group\n0,0\n");
        assert!(matches!(
            load_corpus(dir.path(), LoadOptions::default()),
            Err(Error::FormatError { line: 2, .. })
        ));
        fs::write(dir.path().join(META_FILE), "subject,stage,x0\n").unwrap();
        assert!(matches!(
            load_corpus(dir.path(), LoadOptions::default()),
            Err(Error::MissingMetadata { subject: 0, stage: 0 })
        ));
    }

    #[test]
    fn empty_corpus_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        write_files(dir.path(), "a\n", "", "subject,stage\n", "subject,group\n");
        assert!(matches!(
            load_corpus(dir.path(), LoadOptions::default()),
            Err(Error::InvalidCorpus(_))
        ));
        let built = Corpus::new(vec!["a".into()], 1, vec![], 0, vec![], vec![], 2, false);
        assert!(matches!(built, Err(Error::InvalidCorpus(_))));
    }

    #[test]
    fn minimal_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path(), DOC);
        let opts = LoadOptions::default();
        let c = load_corpus(dir.path(), opts).unwrap();
        let out = tempfile::tempdir().unwrap();
        save_corpus(&c, out.path()).unwrap();
        assert_eq!(load_corpus(out.path(), opts).unwrap(), c);
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        minimal(dir.path(), DOC);
        let c = load_corpus(dir.path(), LoadOptions::default()).unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        assert!(matches!(save_corpus(&c, blocker.join("sub")), Err(Error::Io { .. })));
    }

    #[test]
    fn standardization_is_recorded() {
        let docs = (0..4).map(|_| Some(Document::from_counts([(0, 1)]))).collect();
        let c = Corpus::new(vec!["a".into()], 2, docs, 2, vec![1.0, 5.0, 3.0, 5.0, 5.0, 5.0, 7.0, 5.0], vec![0, 1], 2, false)
            .unwrap()
            .standardized();
        let s = c.standardization().unwrap();
        assert_eq!(s.mean, vec![4.0, 5.0]);
        assert!((s.scale[0] - 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(s.scale[1], 1.0);
        let col: Vec<f64> = (0..2).flat_map(|i| (0..2).map(move |t| (i, t))).map(|(i, t)| c.covariates(i, t)[0]).collect();
        assert!(col.iter().sum::<f64>().abs() < 1e-12);
    }
}
