//! Corpus, gold alignment, embedding and candidate-pair files.
//!
//! Text formats are tab-separated UTF-8 with LF line endings:
//!
//! - corpus: `id<TAB>text`
//! - gold alignment: `src_id<TAB>tgt_id`
//! - candidate pairs: `distance<TAB>src_id<TAB>tgt_id`, ascending by distance
//!
//! Sentence text is escaped on write (`\\`, `\t`, `\n`, `\r`) so a record
//! always occupies exactly one line.
//!
//! Embeddings use a little-endian binary layout: the magic `BMEM`, a `u32`
//! version (1), `u32` row count, `u32` dimension, then row-major `f32` values.
//! Row identifiers live in a sidecar file `<path>.ids`, one per line.

use std::collections::{BTreeSet, HashSet};
use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::mine::CandidatePair;
use crate::vector;
use crate::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"BMEM";
pub const EMBEDDING_VERSION: u32 = 1;
pub const EMBEDDING_HEADER_LEN: u64 = 16;

/// Rows whose norm is further than this from 1 are re-normalized on load.
pub const NORM_TOLERANCE: f64 = 1e-4;

/// One line of a corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceRecord {
    pub id: String,
    pub lang: String,
    pub text: String,
}

impl SentenceRecord {
    pub fn new(id: impl Into<String>, lang: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            lang: lang.into(),
            text: text.into(),
        }
    }
}

/// An ordered, single-language collection of sentences with unique ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    lang: String,
    records: Vec<SentenceRecord>,
}

impl Corpus {
    /// Builds a corpus, checking that ids are non-empty and unique and that
    /// every record carries the corpus language.
    pub fn new(lang: impl Into<String>, records: Vec<SentenceRecord>) -> Result<Self> {
        let lang = lang.into();
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.id.is_empty() {
                return Err(Error::validation("empty sentence id"));
            }
            if r.lang != lang {
                return Err(Error::validation(format!(
                    "record {} has language {:?}, corpus is {:?}",
                    r.id, r.lang, lang
                )));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::validation(format!("duplicate sentence id {:?}", r.id)));
            }
        }
        Ok(Self { lang, records })
    }

    /// Convenience constructor assigning ids `<lang>-<n>` (1-based, 6 digits).
    pub fn from_texts<S: AsRef<str>>(lang: &str, texts: &[S]) -> Self {
        let records = texts
            .iter()
            .enumerate()
            .map(|(i, t)| SentenceRecord::new(format!("{lang}-{:06}", i + 1), lang, t.as_ref()))
            .collect();
        Self {
            lang: lang.to_string(),
            records,
        }
    }

    pub fn lang(&self) -> &str {
        &self.lang
    }

    pub fn records(&self) -> &[SentenceRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<SentenceRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, SentenceRecord> {
        self.records.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a SentenceRecord;
    type IntoIter = std::slice::Iter<'a, SentenceRecord>;

    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

/// Escapes backslash, tab, LF and CR so the text fits on one TSV line.
pub fn escape_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

/// Inverse of [`escape_text`]. Unknown escape sequences are kept verbatim.
pub fn unescape_text(text: &str) -> String {
    if !text.contains('\\') {
        return text.to_string();
    }
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Reads lines with their 1-based numbers, stripping `\n` and a trailing `\r`.
struct Lines<R> {
    reader: R,
    path: PathBuf,
    line_no: usize,
    buf: String,
}

impl<R: BufRead> Lines<R> {
    fn new(reader: R, path: PathBuf) -> Self {
        Self {
            reader,
            path,
            line_no: 0,
            buf: String::new(),
        }
    }

    fn next_line(&mut self) -> Option<Result<(usize, &str)>> {
        self.buf.clear();
        match self.reader.read_line(&mut self.buf) {
            Ok(0) => None,
            Ok(_) => {
                self.line_no += 1;
                let line = self.buf.strip_suffix('\n').unwrap_or(&self.buf);
                let line = line.strip_suffix('\r').unwrap_or(line);
                Some(Ok((self.line_no, line)))
            }
            Err(e) => Some(Err(Error::io(&self.path, e))),
        }
    }

    fn parse_error(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }
}

/// Streaming corpus reader: yields one [`SentenceRecord`] per non-empty line
/// while holding only the current line in memory. Duplicate ids are not
/// detected here; [`read_bucc_corpus`] does that.
pub struct CorpusReader<R> {
    lines: Lines<R>,
    lang: String,
}

impl CorpusReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>, lang: &str) -> Result<Self> {
        let path = path.as_ref();
        Ok(Self::new(open(path)?, path, lang))
    }
}

impl<R: BufRead> CorpusReader<R> {
    /// `path` is only used in error messages.
    pub fn new(reader: R, path: impl Into<PathBuf>, lang: &str) -> Self {
        Self {
            lines: Lines::new(reader, path.into()),
            lang: lang.to_string(),
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<SentenceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let (line_no, line) = match self.lines.next_line()? {
                Ok(v) => v,
                Err(e) => return Some(Err(e)),
            };
            if line.is_empty() {
                continue;
            }
            let Some((id, text)) = line.split_once('\t') else {
                return Some(Err(self.lines.parse_error(line_no, "expected id<TAB>text")));
            };
            if id.is_empty() {
                return Some(Err(self.lines.parse_error(line_no, "empty sentence id")));
            }
            if text.contains('\t') {
                return Some(Err(self.lines.parse_error(line_no, "unescaped tab in sentence text")));
            }
            let record = SentenceRecord::new(id, self.lang.as_str(), unescape_text(text));
            return Some(Ok(record));
        }
    }
}

/// Reads a whole `id<TAB>text` corpus, rejecting duplicate ids.
pub fn read_bucc_corpus(path: impl AsRef<Path>, lang: &str) -> Result<Corpus> {
    let path = path.as_ref();
    let mut reader = CorpusReader::open(path, lang)?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    while let Some(record) = reader.next() {
        let record = record?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::validation(format!(
                "{}:{}: duplicate sentence id {:?}",
                path.display(),
                reader.lines.line_no,
                record.id
            )));
        }
        records.push(record);
    }
    Ok(Corpus {
        lang: lang.to_string(),
        records,
    })
}

pub fn write_corpus_to<W: Write>(corpus: &Corpus, mut w: W) -> io::Result<()> {
    for r in corpus {
        writeln!(w, "{}\t{}", r.id, escape_text(&r.text))?;
    }
    w.flush()
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_corpus_to(corpus, create(path)?).map_err(|e| Error::io(path, e))
}

/// Reference alignment between a source and a target corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldAlignment {
    pub pairs: BTreeSet<(String, String)>,
    /// Number of repeated lines collapsed while reading.
    pub duplicates: usize,
}

impl GoldAlignment {
    pub fn from_pairs<I, S, T>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut gold = Self::default();
        for (s, t) in pairs {
            if !gold.pairs.insert((s.into(), t.into())) {
                gold.duplicates += 1;
            }
        }
        gold
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, src: &str, tgt: &str) -> bool {
        // BTreeSet<(String, String)> cannot be probed with borrowed tuples.
        self.pairs.contains(&(src.to_string(), tgt.to_string()))
    }

    /// Checks that every gold id occurs in the corresponding corpus.
    pub fn validate_against(&self, src: &Corpus, tgt: &Corpus) -> Result<()> {
        let src_ids: HashSet<&str> = src.ids().collect();
        let tgt_ids: HashSet<&str> = tgt.ids().collect();
        for (s, t) in &self.pairs {
            if !src_ids.contains(s.as_str()) {
                return Err(Error::validation(format!("gold source id {s:?} not in corpus")));
            }
            if !tgt_ids.contains(t.as_str()) {
                return Err(Error::validation(format!("gold target id {t:?} not in corpus")));
            }
        }
        Ok(())
    }
}

/// Reads `src_id<TAB>tgt_id` lines; repeated pairs are collapsed and counted.
pub fn read_gold(path: impl AsRef<Path>) -> Result<GoldAlignment> {
    let path = path.as_ref();
    let mut lines = Lines::new(open(path)?, path.to_path_buf());
    let mut gold = GoldAlignment::default();
    while let Some(item) = lines.next_line() {
        let (line_no, line) = item?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(s), Some(t), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(lines.parse_error(line_no, "expected src_id<TAB>tgt_id"));
        };
        if s.is_empty() || t.is_empty() {
            return Err(lines.parse_error(line_no, "empty id"));
        }
        if !gold.pairs.insert((s.to_string(), t.to_string())) {
            gold.duplicates += 1;
        }
    }
    if gold.duplicates > 0 {
        log::warn!(
            "{}: collapsed {} duplicate gold pairs",
            path.display(),
            gold.duplicates
        );
    }
    Ok(gold)
}

pub fn write_gold(gold: &GoldAlignment, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let res: io::Result<()> = (|| {
        for (s, t) in &gold.pairs {
            writeln!(w, "{s}\t{t}")?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// An `n x d` matrix of unit-length f32 rows, each tagged with a sentence id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    ids: Vec<String>,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    /// Builds a matrix from row-major data. Rows whose norm deviates from 1 by
    /// more than [`NORM_TOLERANCE`] are re-normalized; all others are kept
    /// bit-for-bit. Zero or non-finite rows are rejected.
    pub fn new(ids: Vec<String>, dim: usize, mut data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("embedding dimension must be positive"));
        }
        if data.len() != ids.len() * dim {
            return Err(Error::LengthMismatch {
                what: "embedding values vs ids x dim",
                left: data.len(),
                right: ids.len() * dim,
            });
        }
        for (i, row) in data.chunks_exact_mut(dim).enumerate() {
            let n = vector::norm(row);
            if !n.is_finite() || n == 0.0 {
                return Err(Error::validation(format!(
                    "row {i} ({:?}) is zero or non-finite",
                    ids[i]
                )));
            }
            if (n - 1.0).abs() > NORM_TOLERANCE {
                vector::normalize(row);
            }
        }
        Ok(Self { ids, dim, data })
    }

    /// An empty matrix of the given dimension.
    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(Vec::new(), dim, Vec::new())
    }

    pub fn from_rows(ids: Vec<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::validation("rows have different lengths"));
        }
        Self::new(ids, dim, rows.concat())
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim)
    }

    /// A new matrix containing the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(self.row(i));
            ids.push(self.ids[i].clone());
        }
        Self {
            ids,
            dim: self.dim,
            data,
        }
    }

    /// Checks that row ids match the corpus ids position by position.
    pub fn check_aligned(&self, corpus: &Corpus) -> Result<()> {
        if self.len() != corpus.len() {
            return Err(Error::LengthMismatch {
                what: "embedding rows vs corpus records",
                left: self.len(),
                right: corpus.len(),
            });
        }
        for (i, (a, b)) in self.ids.iter().zip(corpus.ids()).enumerate() {
            if a != b {
                return Err(Error::validation(format!(
                    "row {i}: embedding id {a:?} does not match corpus id {b:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Path of the id sidecar for an embedding or index file: `<path>.ids`.
pub fn ids_path(path: &Path) -> PathBuf {
    let mut s: OsString = path.as_os_str().to_owned();
    s.push(".ids");
    PathBuf::from(s)
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, out: &mut [f32]) -> io::Result<()> {
    let mut buf = vec![0u8; out.len() * 4];
    r.read_exact(&mut buf)?;
    for (v, b) in out.iter_mut().zip(buf.chunks_exact(4)) {
        *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    }
    Ok(())
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn to_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value).map_err(|_| Error::validation(format!("{what} {value} exceeds u32")))
}

pub(crate) fn write_ids(ids: &[String], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let res: io::Result<()> = (|| {
        for id in ids {
            writeln!(w, "{id}")?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

pub(crate) fn read_ids(path: &Path) -> Result<Vec<String>> {
    let mut lines = Lines::new(open(path)?, path.to_path_buf());
    let mut ids = Vec::new();
    while let Some(item) = lines.next_line() {
        let (line_no, line) = item?;
        if line.is_empty() || line.contains('\t') {
            return Err(lines.parse_error(line_no, "invalid id"));
        }
        ids.push(line.to_string());
    }
    Ok(ids)
}

pub fn write_embeddings(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = to_u32(m.len(), "row count")?;
    let d = to_u32(m.dim(), "dimension")?;
    let mut w = create(path)?;
    let res: io::Result<()> = (|| {
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_all(&EMBEDDING_VERSION.to_le_bytes())?;
        w.write_all(&n.to_le_bytes())?;
        w.write_all(&d.to_le_bytes())?;
        write_f32s(&mut w, m.as_slice())?;
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))?;
    write_ids(m.ids(), &ids_path(path))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let format_err = |message: String| Error::Format {
        path: path.to_path_buf(),
        message,
    };
    let actual_len = std::fs::metadata(path)
        .map_err(|e| Error::io(path, e))?
        .len();
    if actual_len < EMBEDDING_HEADER_LEN {
        return Err(format_err(format!(
            "file is {actual_len} bytes, shorter than the {EMBEDDING_HEADER_LEN}-byte header"
        )));
    }
    let mut r = open(path)?;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != EMBEDDING_MAGIC {
        return Err(format_err(format!("bad magic {magic:?}, expected \"BMEM\"")));
    }
    let header: io::Result<(u32, u32, u32)> = (|| Ok((read_u32(&mut r)?, read_u32(&mut r)?, read_u32(&mut r)?)))();
    let (version, n, d) = header.map_err(|e| Error::io(path, e))?;
    if version != EMBEDDING_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let (n, d) = (n as usize, d as usize);
    if d == 0 {
        return Err(format_err("dimension is 0".into()));
    }
    let expected_len = EMBEDDING_HEADER_LEN + 4 * (n as u64) * (d as u64);
    if actual_len != expected_len {
        return Err(format_err(format!(
            "expected {expected_len} bytes for {n} x {d} floats, found {actual_len}"
        )));
    }
    let mut data = vec![0f32; n * d];
    for row in data.chunks_exact_mut(d) {
        read_f32s(&mut r, row).map_err(|e| Error::io(path, e))?;
    }
    let ids = read_ids(&ids_path(path))?;
    if ids.len() != n {
        return Err(format_err(format!(
            "id sidecar has {} ids, matrix has {n} rows",
            ids.len()
        )));
    }
    EmbeddingMatrix::new(ids, d, data)
}

/// Writes pairs sorted ascending by distance (ties by source then target id),
/// distances with 6 decimals. Sorting uses the printed value so that
/// re-reading and re-writing a pair file reproduces it byte for byte.
pub fn write_pairs_to<W: Write>(pairs: &[CandidatePair], mut w: W) -> io::Result<()> {
    // Distances lie in [0, 2], so "d.dddddd" strings order like the numbers.
    let mut rows: Vec<(String, &str, &str)> = pairs
        .iter()
        .map(|p| (format!("{:.6}", p.distance), p.src_id.as_str(), p.tgt_id.as_str()))
        .collect();
    rows.sort_unstable();
    for (d, s, t) in rows {
        writeln!(w, "{d}\t{s}\t{t}")?;
    }
    w.flush()
}

pub fn write_pairs(pairs: &[CandidatePair], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_pairs_to(pairs, create(path)?).map_err(|e| Error::io(path, e))
}

/// Reads a pair file, preserving line order.
pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<CandidatePair>> {
    let path = path.as_ref();
    let mut lines = Lines::new(open(path)?, path.to_path_buf());
    let mut pairs = Vec::new();
    while let Some(item) = lines.next_line() {
        let (line_no, line) = item?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(d), Some(s), Some(t), None) =
            (fields.next(), fields.next(), fields.next(), fields.next())
        else {
            return Err(lines.parse_error(line_no, "expected distance<TAB>src_id<TAB>tgt_id"));
        };
        let Ok(distance) = d.parse::<f32>() else {
            let msg = format!("invalid distance {d:?}");
            return Err(lines.parse_error(line_no, msg));
        };
        if !(0.0..=2.0).contains(&distance) {
            return Err(lines.parse_error(line_no, format!("distance {distance} outside [0, 2]")));
        }
        pairs.push(CandidatePair::new(s, t, distance));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::fs;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn single_line_corpus() {
        let dir = tmp();
        let p = dir.path().join("en.tsv");
        fs::write(&p, "en-000001\tHello world.\n").unwrap();
        let c = read_bucc_corpus(&p, "en").unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.records()[0].id, "en-000001");
        assert_eq!(c.records()[0].text, "Hello world.");
        assert_eq!(c.lang(), "en");
    }

    #[test]
    fn empty_corpus() {
        let dir = tmp();
        let p = dir.path().join("e.tsv");
        fs::write(&p, "").unwrap();
        assert_eq!(read_bucc_corpus(&p, "en").unwrap().len(), 0);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tmp();
        let p = dir.path().join("bad.tsv");
        fs::write(&p, "a\tok\n\nno tab here\n").unwrap();
        match read_bucc_corpus(&p, "en") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dir = tmp();
        let p = dir.path().join("dup.tsv");
        fs::write(&p, "a\tx\na\ty\n").unwrap();
        assert!(matches!(read_bucc_corpus(&p, "en"), Err(Error::Validation(_))));
    }

    #[test]
    fn streaming_reader_matches_bulk_reader() {
        let data = "a\tone\nb\ttwo\\tthree\n\nc\tfour\r\n";
        let streamed: Vec<_> = CorpusReader::new(data.as_bytes(), "mem", "de")
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(streamed.len(), 3);
        assert_eq!(streamed[1].text, "two\tthree");
        assert_eq!(streamed[2].text, "four");
    }

    #[test]
    fn escaped_text_round_trips() {
        let dir = tmp();
        let p = dir.path().join("c.tsv");
        let c = Corpus::new(
            "en",
            vec![
                SentenceRecord::new("x1", "en", "tab\there"),
                SentenceRecord::new("x2", "en", "line\nbreak and back\\slash \\t"),
            ],
        )
        .unwrap();
        write_corpus(&c, &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap().lines().count(), 2);
        assert_eq!(read_bucc_corpus(&p, "en").unwrap(), c);
    }

    #[test]
    fn corpus_rejects_mixed_languages() {
        let r = Corpus::new("en", vec![SentenceRecord::new("a", "de", "x")]);
        assert!(r.is_err());
    }

    #[test]
    fn gold_single_pair_and_duplicates() {
        let dir = tmp();
        let p = dir.path().join("gold.tsv");
        fs::write(&p, "a\tb\n").unwrap();
        let g = read_gold(&p).unwrap();
        assert_eq!(g.pairs.len(), 1);
        assert!(g.contains("a", "b"));

        fs::write(&p, "a\tb\na\tb\n").unwrap();
        let g = read_gold(&p).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.duplicates, 1);

        fs::write(&p, "a\tb\nbroken\n").unwrap();
        assert!(matches!(read_gold(&p), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn gold_validation_against_corpora() {
        let src = Corpus::from_texts("en", &["x", "y"]);
        let tgt = Corpus::from_texts("fr", &["x"]);
        let ok = GoldAlignment::from_pairs([("en-000002", "fr-000001")]);
        assert!(ok.validate_against(&src, &tgt).is_ok());
        let bad = GoldAlignment::from_pairs([("en-000003", "fr-000001")]);
        assert!(bad.validate_against(&src, &tgt).is_err());
    }

    #[test]
    fn equal_vectors_normalize() {
        let m = EmbeddingMatrix::new(vec!["a".into(), "b".into()], 4, vec![1.0; 8]).unwrap();
        assert_eq!(m.row(0), m.row(1));
        for row in m.rows() {
            assert!((vector::norm(row) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn embedding_round_trip_is_bit_identical() {
        let dir = tmp();
        let p = dir.path().join("m.bmem");
        let m = EmbeddingMatrix::new(
            vec!["s1".into(), "s2".into(), "s3".into()],
            3,
            vec![0.6, 0.8, 0.0, 1.0, 2.0, 2.0, -0.1, 0.0, 0.3],
        )
        .unwrap();
        write_embeddings(&m, &p).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 16 + 4 * 9);
        let back = read_embeddings(&p).unwrap();
        assert_eq!(back.ids(), m.ids());
        let bits = |m: &EmbeddingMatrix| m.as_slice().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&m));
    }

    #[test]
    fn empty_embedding_file_is_header_only() {
        let dir = tmp();
        let p = dir.path().join("empty.bmem");
        write_embeddings(&EmbeddingMatrix::empty(1024).unwrap(), &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[..4], b"BMEM");
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1024);
        assert_eq!(fs::read(ids_path(&p)).unwrap().len(), 0);
        let back = read_embeddings(&p).unwrap();
        assert_eq!((back.len(), back.dim()), (0, 1024));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(EmbeddingMatrix::empty(0), Err(Error::Validation(_))));
    }

    #[test]
    fn truncated_file_names_byte_counts() {
        let dir = tmp();
        let p = dir.path().join("t.bmem");
        let m = EmbeddingMatrix::new(vec!["a".into(), "b".into()], 4, vec![0.5; 8]).unwrap();
        write_embeddings(&m, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 6]).unwrap();
        let err = read_embeddings(&p).unwrap_err().to_string();
        assert!(err.contains("expected 48 bytes"), "{err}");
        assert!(err.contains("found 42"), "{err}");
    }

    #[test]
    fn bad_magic_and_id_count() {
        let dir = tmp();
        let p = dir.path().join("x.bmem");
        let m = EmbeddingMatrix::new(vec!["a".into()], 2, vec![1.0, 0.0]).unwrap();
        write_embeddings(&m, &p).unwrap();
        fs::write(ids_path(&p), "a\nb\n").unwrap();
        assert!(matches!(read_embeddings(&p), Err(Error::Format { .. })));
        let mut bytes = fs::read(&p).unwrap();
        bytes[0] = b'X';
        fs::write(&p, bytes).unwrap();
        assert!(read_embeddings(&p).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn rows_off_unit_norm_are_renormalized_on_load() {
        let dir = tmp();
        let p = dir.path().join("raw.bmem");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"BMEM");
        for v in [1u32, 1, 2] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for v in [3.0f32, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&p, bytes).unwrap();
        fs::write(ids_path(&p), "r\n").unwrap();
        let m = read_embeddings(&p).unwrap();
        assert!((m.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((m.row(0)[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn pair_file_format_and_order() {
        let dir = tmp();
        let p = dir.path().join("pairs.tsv");
        write_pairs(&[CandidatePair::new("a", "b", 0.5)], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "0.500000\ta\tb\n");

        write_pairs(
            &[CandidatePair::new("c", "d", 0.3), CandidatePair::new("a", "b", 0.1)],
            &p,
        )
        .unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "0.100000\ta\tb\n0.300000\tc\td\n");

        write_pairs(&[], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "");
    }

    #[test]
    fn pair_file_rejects_out_of_range_distance() {
        let dir = tmp();
        let p = dir.path().join("pairs.tsv");
        fs::write(&p, "2.5\ta\tb\n").unwrap();
        assert!(matches!(read_pairs(&p), Err(Error::Parse { line: 1, .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn escape_round_trips(s in "\\PC*|[\\t\\n\\r\\\\a-z]*") {
            let escaped = escape_text(&s);
            prop_assert!(!escaped.contains('\t') && !escaped.contains('\n'));
            prop_assert_eq!(unescape_text(&escaped), s);
        }

        #[test]
        fn pair_file_rewrite_is_stable(
            raw in proptest::collection::vec((0.0f32..=2.0, 0u8..20, 0u8..20), 0..40)
        ) {
            let dir = tmp();
            let p1 = dir.path().join("a.tsv");
            let p2 = dir.path().join("b.tsv");
            let pairs: Vec<_> = raw
                .iter()
                .map(|(d, s, t)| CandidatePair::new(format!("s{s}"), format!("t{t}"), *d))
                .collect();
            write_pairs(&pairs, &p1).unwrap();
            write_pairs(&read_pairs(&p1).unwrap(), &p2).unwrap();
            prop_assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
        }
    }
}
