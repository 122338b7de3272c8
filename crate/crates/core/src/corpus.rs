//! Sparse patient corpora: TSV ingest, validation and patient-level splits.
//!
//! Events are `patient_id<TAB>code<TAB>specialist`, one diagnosis event per
//! row. Labels are `patient_id<TAB>0|1`. Both files may start with a header
//! row.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One diagnosis event: a code issued by a specialist.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Token {
    pub code: usize,
    pub specialist: usize,
}

impl Token {
    pub fn new(code: usize, specialist: usize) -> Self {
        Token { code, specialist }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub tokens: Vec<Token>,
    pub label: Option<bool>,
}

impl PatientRecord {
    pub fn new(id: impl Into<String>, tokens: Vec<Token>, label: Option<bool>) -> Self {
        PatientRecord {
            id: id.into(),
            tokens,
            label,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A string <-> index bijection in first-appearance order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary::new();
        for name in names {
            let name = name.into();
            if vocab.index.contains_key(&name) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate vocabulary entry `{name}`"
                )));
            }
            vocab.intern(&name);
        }
        Ok(vocab)
    }

    /// Returns the index of `name`, adding it if unseen.
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&idx) = self.index.get(name) {
            return idx;
        }
        let idx = self.names.len();
        self.names.push(name.to_owned());
        self.index.insert(name.to_owned(), idx);
        idx
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> Option<&str> {
        self.names.get(idx).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl Serialize for Vocabulary {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.names.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(deserializer)?;
        Vocabulary::from_names(names).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub patients: Vec<PatientRecord>,
    pub codes: Vocabulary,
    pub specialists: Vocabulary,
}

impl Corpus {
    pub fn new(patients: Vec<PatientRecord>, codes: Vocabulary, specialists: Vocabulary) -> Self {
        Corpus {
            patients,
            codes,
            specialists,
        }
    }

    /// Number of patients (D).
    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    /// Vocabulary size (V).
    pub fn num_codes(&self) -> usize {
        self.codes.len()
    }

    /// Number of specialists (T).
    pub fn num_specialists(&self) -> usize {
        self.specialists.len()
    }

    pub fn num_tokens(&self) -> usize {
        self.patients.iter().map(PatientRecord::len).sum()
    }

    pub fn num_labeled(&self) -> usize {
        self.patients.iter().filter(|p| p.label.is_some()).count()
    }

    /// A copy of the corpus containing the given patients (by position), with
    /// vocabularies shared unchanged.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        Corpus {
            patients: indices.iter().map(|&i| self.patients[i].clone()).collect(),
            codes: self.codes.clone(),
            specialists: self.specialists.clone(),
        }
    }

    /// Maps every specialist onto a single one, turning the model into plain
    /// LDA over codes.
    pub fn collapse_specialists(&self) -> Corpus {
        let mut specialists = Vocabulary::new();
        specialists.intern("all");
        let patients = self
            .patients
            .iter()
            .map(|p| PatientRecord {
                id: p.id.clone(),
                tokens: p.tokens.iter().map(|t| Token::new(t.code, 0)).collect(),
                label: p.label,
            })
            .collect();
        Corpus {
            patients,
            codes: self.codes.clone(),
            specialists,
        }
    }

    /// Re-expresses the corpus in another pair of vocabularies, dropping
    /// tokens whose code or specialist is unknown there. Returns the number of
    /// dropped tokens per patient.
    pub fn reindex(&self, codes: &Vocabulary, specialists: &Vocabulary) -> (Corpus, Vec<usize>) {
        let mut dropped = Vec::with_capacity(self.len());
        let patients = self
            .patients
            .iter()
            .map(|p| {
                let mut lost = 0;
                let tokens = p
                    .tokens
                    .iter()
                    .filter_map(|t| {
                        let code = self.codes.name(t.code).and_then(|n| codes.get(n));
                        let spec = self
                            .specialists
                            .name(t.specialist)
                            .and_then(|n| specialists.get(n));
                        match (code, spec) {
                            (Some(c), Some(s)) => Some(Token::new(c, s)),
                            _ => {
                                lost += 1;
                                None
                            }
                        }
                    })
                    .collect();
                dropped.push(lost);
                PatientRecord::new(p.id.clone(), tokens, p.label)
            })
            .collect();
        (
            Corpus::new(patients, codes.clone(), specialists.clone()),
            dropped,
        )
    }

    /// Writes the events TSV (with header).
    pub fn write_events(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            writeln!(out, "patient_id\tcode\tspecialist")?;
            for p in &self.patients {
                for t in &p.tokens {
                    writeln!(
                        out,
                        "{}\t{}\t{}",
                        p.id,
                        self.codes.names()[t.code],
                        self.specialists.names()[t.specialist]
                    )?;
                }
            }
            out.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }

    /// Writes the labels TSV (with header) for every labeled patient.
    pub fn write_labels(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut emit = || -> std::io::Result<()> {
            writeln!(out, "patient_id\tlabel")?;
            for p in &self.patients {
                if let Some(y) = p.label {
                    writeln!(out, "{}\t{}", p.id, u8::from(y))?;
                }
            }
            out.flush()
        };
        emit().map_err(|e| Error::io(path, e))
    }
}

fn data_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            None
        } else {
            Some((i + 1, line.split('\t').collect()))
        }
    })
}

fn is_events_header(fields: &[&str]) -> bool {
    fields.len() == 3
        && fields[0].eq_ignore_ascii_case("patient_id")
        && fields[1].eq_ignore_ascii_case("code")
        && fields[2].eq_ignore_ascii_case("specialist")
}

/// Reads a labels TSV (`patient_id<TAB>0|1`, optional header) in file order.
pub fn read_labels(path: &Path) -> Result<Vec<(String, bool)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen: HashMap<String, ()> = HashMap::new();
    let mut out = Vec::new();
    for (n, (line, fields)) in data_rows(&text).enumerate() {
        let malformed = |message: String| Error::MalformedRow {
            path: path.to_path_buf(),
            line,
            message,
        };
        if fields.len() != 2 {
            return Err(malformed(format!(
                "expected 2 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let (pid, raw) = (fields[0].trim(), fields[1].trim());
        let label = match raw.parse::<f64>() {
            Ok(0.0) => false,
            Ok(1.0) => true,
            Ok(_) => return Err(malformed(format!("label `{raw}` is not 0 or 1"))),
            // a non-numeric label column marks a header, only on the first row
            Err(_) if n == 0 => continue,
            Err(_) => return Err(malformed(format!("label `{raw}` is not 0 or 1"))),
        };
        if pid.is_empty() {
            return Err(malformed("empty patient id".into()));
        }
        if seen.insert(pid.to_owned(), ()).is_some() {
            return Err(Error::DuplicatePatient(pid.to_owned()));
        }
        out.push((pid.to_owned(), label));
    }
    Ok(out)
}

/// Loads events and optional labels.
///
/// Vocabularies and patient order follow first appearance in the events file;
/// patients only present in the labels file are appended with no tokens.
pub fn load_corpus(events_path: &Path, labels_path: Option<&Path>) -> Result<Corpus> {
    let text = fs::read_to_string(events_path).map_err(|e| Error::io(events_path, e))?;
    let mut codes = Vocabulary::new();
    let mut specialists = Vocabulary::new();
    let mut patients: Vec<PatientRecord> = Vec::new();
    let mut patient_index: HashMap<String, usize> = HashMap::new();

    for (n, (line, fields)) in data_rows(&text).enumerate() {
        if n == 0 && is_events_header(&fields) {
            continue;
        }
        let malformed = |message: String| Error::MalformedRow {
            path: events_path.to_path_buf(),
            line,
            message,
        };
        if fields.len() != 3 {
            return Err(malformed(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        }
        if fields.iter().any(|f| f.trim().is_empty()) {
            return Err(malformed("empty field".into()));
        }
        let (pid, code, spec) = (fields[0].trim(), fields[1].trim(), fields[2].trim());
        let j = *patient_index.entry(pid.to_owned()).or_insert_with(|| {
            patients.push(PatientRecord::new(pid, Vec::new(), None));
            patients.len() - 1
        });
        let token = Token::new(codes.intern(code), specialists.intern(spec));
        patients[j].tokens.push(token);
    }

    if let Some(labels_path) = labels_path {
        for (pid, label) in read_labels(labels_path)? {
            let j = *patient_index.entry(pid.clone()).or_insert_with(|| {
                patients.push(PatientRecord::new(pid, Vec::new(), None));
                patients.len() - 1
            });
            patients[j].label = Some(label);
        }
    }

    Ok(Corpus::new(patients, codes, specialists))
}

/// Patient-level seeded split into (train, validation, test).
///
/// Sizes are `floor(D * train_frac)`, `floor(D * valid_frac)` and the
/// remainder. Patients keep their original relative order inside each split.
pub fn split_corpus(
    corpus: &Corpus,
    train_frac: f64,
    valid_frac: f64,
    seed: u64,
) -> Result<(Corpus, Corpus, Corpus)> {
    let ok = train_frac.is_finite()
        && valid_frac.is_finite()
        && train_frac > 0.0
        && valid_frac >= 0.0
        && train_frac + valid_frac < 1.0;
    if !ok {
        return Err(Error::InvalidArgument(format!(
            "split fractions must satisfy train > 0, valid >= 0, train + valid < 1 (got {train_frac}, {valid_frac})"
        )));
    }
    let d = corpus.len();
    // the epsilon keeps products such as 10 * 0.7 from landing just below an integer
    let n_train = ((d as f64) * train_frac + 1e-9).floor() as usize;
    let n_valid = ((d as f64) * valid_frac + 1e-9).floor() as usize;

    let mut order: Vec<usize> = (0..d).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let take = |range: std::ops::Range<usize>| {
        let mut idx = order[range].to_vec();
        idx.sort_unstable();
        corpus.subset(&idx)
    };
    let train = take(0..n_train);
    let valid = take(n_train..n_train + n_valid);
    let test = take(n_train + n_valid..d);
    Ok((train, valid, test))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub patients: usize,
    pub tokens: usize,
    pub labeled: usize,
    pub positives: usize,
    /// Fraction of positives among labeled patients; `None` when nobody is labeled.
    pub base_rate: Option<f64>,
    pub empty_patients: usize,
}

/// Checks index bounds and summarizes the corpus.
pub fn validate_corpus(corpus: &Corpus) -> Result<ValidationReport> {
    let v = corpus.num_codes();
    let t = corpus.num_specialists();
    let mut ids: HashMap<&str, ()> = HashMap::with_capacity(corpus.len());
    for (j, p) in corpus.patients.iter().enumerate() {
        if ids.insert(p.id.as_str(), ()).is_some() {
            return Err(Error::DuplicatePatient(p.id.clone()));
        }
        for (i, tok) in p.tokens.iter().enumerate() {
            if tok.code >= v {
                return Err(Error::IndexOutOfRange {
                    patient: j,
                    token: i,
                    field: "code",
                    index: tok.code,
                    bound: v,
                });
            }
            if tok.specialist >= t {
                return Err(Error::IndexOutOfRange {
                    patient: j,
                    token: i,
                    field: "specialist",
                    index: tok.specialist,
                    bound: t,
                });
            }
        }
    }
    let labeled = corpus.num_labeled();
    let positives = corpus
        .patients
        .iter()
        .filter(|p| p.label == Some(true))
        .count();
    Ok(ValidationReport {
        patients: corpus.len(),
        tokens: corpus.num_tokens(),
        labeled,
        positives,
        base_rate: (labeled > 0).then(|| positives as f64 / labeled as f64),
        empty_patients: corpus.patients.iter().filter(|p| p.is_empty()).count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let path = dir.path().join(name);
        fs::write(&path, body).unwrap();
        path
    }

    #[test]
    fn loads_minimal_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let ev = write(&dir, "ev.tsv", "p1\tc1\ts1\np1\tc2\ts1\n");
        let lb = write(&dir, "lb.tsv", "p1\t1\n");
        let c = load_corpus(&ev, Some(&lb)).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.num_codes(), 2);
        assert_eq!(c.num_specialists(), 1);
        assert_eq!(c.patients[0].len(), 2);
        assert_eq!(c.patients[0].label, Some(true));
    }

    #[test]
    fn duplicate_rows_are_separate_tokens() {
        let dir = tempfile::tempdir().unwrap();
        let ev = write(&dir, "ev.tsv", "p1\tc1\ts1\np1\tc1\ts1\n");
        let c = load_corpus(&ev, None).unwrap();
        assert_eq!(c.patients[0].len(), 2);
        assert_eq!(c.patients[0].tokens[0], c.patients[0].tokens[1]);
        assert_eq!(c.patients[0].label, None);
    }

    #[test]
    fn headers_are_detected() {
        let dir = tempfile::tempdir().unwrap();
        let ev = write(&dir, "ev.tsv", "patient_id\tcode\tspecialist\np1\tc1\ts1\n");
        let lb = write(&dir, "lb.tsv", "patient_id\tlabel\np1\t0\n");
        let c = load_corpus(&ev, Some(&lb)).unwrap();
        assert_eq!(c.num_tokens(), 1);
        assert_eq!(c.patients[0].label, Some(false));
    }

    #[test]
    fn non_binary_label_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        let ev = write(&dir, "ev.tsv", "p1\tc1\ts1\n");
        let lb = write(&dir, "lb.tsv", "p1\t2\n");
        let err = load_corpus(&ev, Some(&lb)).unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 1, .. }), "{err}");
    }

    #[test]
    fn malformed_event_and_label_rows() {
        let dir = tempfile::tempdir().unwrap();
        let ev = write(&dir, "ev.tsv", "p1\tc1\n");
        assert!(matches!(
            load_corpus(&ev, None),
            Err(Error::MalformedRow { .. })
        ));
        let ev = write(&dir, "ev2.tsv", "p1\tc1\ts1\n");
        let lb = write(&dir, "lb.tsv", "p1\t1\np2\tyes\n");
        assert!(matches!(
            load_corpus(&ev, Some(&lb)),
            Err(Error::MalformedRow { line: 2, .. })
        ));
        let missing = dir.path().join("nope.tsv");
        assert!(matches!(load_corpus(&missing, None), Err(Error::Io { .. })));
    }

    #[test]
    fn duplicate_label_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ev = write(&dir, "ev.tsv", "p1\tc1\ts1\n");
        let lb = write(&dir, "lb.tsv", "p1\t1\np1\t0\n");
        assert!(matches!(
            load_corpus(&ev, Some(&lb)),
            Err(Error::DuplicatePatient(_))
        ));
    }

    #[test]
    fn label_only_patients_are_empty() {
        let dir = tempfile::tempdir().unwrap();
        let ev = write(&dir, "ev.tsv", "p1\tc1\ts1\n");
        let lb = write(&dir, "lb.tsv", "p2\t1\n");
        let c = load_corpus(&ev, Some(&lb)).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.patients[1].id, "p2");
        assert!(c.patients[1].is_empty());
        assert_eq!(c.patients[0].label, None);
        let report = validate_corpus(&c).unwrap();
        assert_eq!(report.empty_patients, 1);
    }

    fn toy(d: usize) -> Corpus {
        let mut codes = Vocabulary::new();
        codes.intern("c");
        let mut specs = Vocabulary::new();
        specs.intern("s");
        let patients = (0..d)
            .map(|j| PatientRecord::new(format!("p{j}"), vec![Token::new(0, 0)], Some(j % 2 == 0)))
            .collect();
        Corpus::new(patients, codes, specs)
    }

    #[test]
    fn split_sizes_follow_floor_rule() {
        let (a, b, c) = split_corpus(&toy(10), 0.7, 0.1, 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (7, 1, 2));
    }

    #[test]
    fn split_is_deterministic() {
        let corpus = toy(50);
        let first = split_corpus(&corpus, 0.7, 0.1, 11).unwrap();
        let second = split_corpus(&corpus, 0.7, 0.1, 11).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn split_rejects_bad_fractions() {
        let corpus = toy(10);
        assert!(split_corpus(&corpus, 0.9, 0.2, 0).is_err());
        assert!(split_corpus(&corpus, 0.0, 0.2, 0).is_err());
        assert!(split_corpus(&corpus, 0.5, -0.1, 0).is_err());
        assert!(split_corpus(&corpus, f64::NAN, 0.1, 0).is_err());
    }

    #[test]
    fn validation_counts() {
        let dir = tempfile::tempdir().unwrap();
        let ev = write(&dir, "ev.tsv", "p1\tc1\ts1\np1\tc2\ts1\n");
        let lb = write(&dir, "lb.tsv", "p1\t1\n");
        let c = load_corpus(&ev, Some(&lb)).unwrap();
        let r = validate_corpus(&c).unwrap();
        assert_eq!(r.tokens, 2);
        assert_eq!(r.base_rate, Some(1.0));
        assert_eq!(r.empty_patients, 0);
    }

    #[test]
    fn base_rate_over_labeled_only() {
        let mut c = toy(4);
        c.patients[0].label = None; // p0 was positive
        let r = validate_corpus(&c).unwrap();
        assert_eq!(r.labeled, 3);
        assert!((r.base_rate.unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_token_is_fatal() {
        let mut c = toy(2);
        c.patients[1].tokens[0].code = c.num_codes();
        assert!(matches!(
            validate_corpus(&c),
            Err(Error::IndexOutOfRange { field: "code", .. })
        ));
    }

    #[test]
    fn reindex_drops_unknown_vocabulary() {
        let mut codes = Vocabulary::new();
        codes.intern("a");
        codes.intern("b");
        let mut specs = Vocabulary::new();
        specs.intern("s");
        let corpus = Corpus::new(
            vec![PatientRecord::new(
                "p",
                vec![Token::new(0, 0), Token::new(1, 0)],
                None,
            )],
            codes,
            specs.clone(),
        );
        let target = Vocabulary::from_names(["z", "b"]).unwrap();
        let (mapped, dropped) = corpus.reindex(&target, &specs);
        assert_eq!(dropped, vec![1]);
        assert_eq!(mapped.patients[0].tokens, vec![Token::new(1, 0)]);
    }
}
