//! Pre-filtering applied before any distance computation: drop sentences with
//! too many commas (mostly enumerations of names), sentences that are too
//! long, and sentences whose detected language is not the expected one.
//!
//! Stages always run in the order commas, length, language identification,
//! and [`StageReport`] records the survivors after each one.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::corpus_io::{Corpus, SentenceRecord};
use crate::{Error, Result};

/// ASCII comma, full-width comma and ideographic comma.
pub const COMMA_CHARS: [char; 3] = [',', '\u{FF0C}', '\u{3001}'];

/// Tag returned by [`LidModel::classify`] for text with nothing to classify.
pub const UNDETERMINED: &str = "und";

/// Additive smoothing applied to every n-gram count.
pub const LID_SMOOTHING: f64 = 0.1;

/// Character n-grams of length 1 through this value are used as features.
pub const MAX_NGRAM: usize = 4;

pub fn count_commas(text: &str) -> usize {
    text.chars().filter(|c| COMMA_CHARS.contains(c)).count()
}

/// Number of maximal non-whitespace runs.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreprocessConfig {
    /// Sentences with more commas than this are dropped.
    pub max_commas: usize,
    /// Sentences must have strictly fewer words than this.
    pub max_words: usize,
    pub lid_enabled: bool,
    pub lid_min_confidence: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            max_commas: 3,
            max_words: 50,
            lid_enabled: true,
            lid_min_confidence: 0.5,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_words < 1 {
            return Err(Error::validation("max_words must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.lid_min_confidence) {
            return Err(Error::validation("lid_min_confidence must lie in [0, 1]"));
        }
        Ok(())
    }

    fn passes_commas(&self, text: &str) -> bool {
        count_commas(text) <= self.max_commas
    }

    fn passes_length(&self, text: &str) -> bool {
        count_words(text) < self.max_words
    }
}

/// Survivor counts after each stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageReport {
    pub input_count: usize,
    pub after_commas: usize,
    pub after_length: usize,
    pub after_lid: usize,
}

impl StageReport {
    pub fn to_tsv(&self) -> String {
        format!(
            "stage\tcount\ninput\t{}\ncommas\t{}\nlength\t{}\nlid\t{}\n",
            self.input_count, self.after_commas, self.after_length, self.after_lid
        )
    }
}

/// Character n-gram multinomial naive Bayes language identifier.
///
/// Each language gets a smoothed log-probability for every n-gram seen in
/// training (in any language); n-grams never seen in training are ignored at
/// classification time. Class priors are uniform.
#[derive(Debug, Clone)]
pub struct LidModel {
    languages: Vec<String>,
    /// n-gram -> per-language log-probability, indexed like `languages`.
    profiles: HashMap<String, Vec<f64>>,
    smoothing: f64,
}

/// Lowercased text with whitespace runs collapsed and a space on each side.
fn lid_normalize(text: &str) -> Vec<char> {
    let mut out = vec![' '];
    for word in text.split_whitespace() {
        out.extend(word.chars().flat_map(char::to_lowercase));
        out.push(' ');
    }
    out
}

fn for_each_ngram(text: &str, mut f: impl FnMut(&str)) {
    let chars = lid_normalize(text);
    let mut buf = String::new();
    for start in 0..chars.len() {
        buf.clear();
        for &c in chars[start..].iter().take(MAX_NGRAM) {
            buf.push(c);
            if buf != " " {
                f(&buf);
            }
        }
    }
}

/// Trains a model from `(language, text)` samples.
pub fn train_lid<I, L, T>(samples: I) -> Result<LidModel>
where
    I: IntoIterator<Item = (L, T)>,
    L: AsRef<str>,
    T: AsRef<str>,
{
    let samples: Vec<(L, T)> = samples.into_iter().collect();
    let languages: Vec<String> = samples
        .iter()
        .map(|(l, _)| l.as_ref().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if languages.len() < 2 {
        return Err(Error::validation(format!(
            "language identification needs at least 2 languages, got {}",
            languages.len()
        )));
    }
    let index: HashMap<&str, usize> = languages
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let mut counts: HashMap<String, Vec<u64>> = HashMap::new();
    let mut totals = vec![0u64; languages.len()];
    for (lang, text) in &samples {
        let li = index[lang.as_ref()];
        for_each_ngram(text.as_ref(), |g| {
            if let Some(c) = counts.get_mut(g) {
                c[li] += 1;
            } else {
                let mut c = vec![0u64; languages.len()];
                c[li] = 1;
                counts.insert(g.to_string(), c);
            }
            totals[li] += 1;
        });
    }
    if let Some(li) = totals.iter().position(|&t| t == 0) {
        return Err(Error::validation(format!(
            "language {:?} has no usable training text",
            languages[li]
        )));
    }

    let smoothing = LID_SMOOTHING;
    let vocab = counts.len() as f64;
    let denominators: Vec<f64> = totals
        .iter()
        .map(|&t| (t as f64 + smoothing * vocab).ln())
        .collect();
    let profiles = counts
        .into_iter()
        .map(|(g, c)| {
            let logp = c
                .iter()
                .zip(&denominators)
                .map(|(&n, &den)| (n as f64 + smoothing).ln() - den)
                .collect();
            (g, logp)
        })
        .collect();
    Ok(LidModel {
        languages,
        profiles,
        smoothing,
    })
}

/// Trains from one plain-text file per language, one sentence per line.
pub fn train_lid_from_files<P: AsRef<Path>>(files: &[(String, P)]) -> Result<LidModel> {
    let mut samples = Vec::new();
    for (lang, path) in files {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        samples.extend(
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| (lang.clone(), l.to_string())),
        );
    }
    train_lid(samples)
}

const SEED_EN: &str = include_str!("../data/lid/en.txt");
const SEED_DE: &str = include_str!("../data/lid/de.txt");
const SEED_FR: &str = include_str!("../data/lid/fr.txt");

/// Seed sentences shipped with the crate (English, German, French).
pub fn bundled_seed_samples() -> Vec<(&'static str, &'static str)> {
    [("en", SEED_EN), ("de", SEED_DE), ("fr", SEED_FR)]
        .into_iter()
        .flat_map(|(lang, text)| text.lines().filter(|l| !l.is_empty()).map(move |l| (lang, l)))
        .collect()
}

impl LidModel {
    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn vocabulary_size(&self) -> usize {
        self.profiles.len()
    }

    /// Per-language log-likelihood of `text`, in the order of [`Self::languages`].
    pub fn log_likelihoods(&self, text: &str) -> Vec<f64> {
        let mut scores = vec![0.0; self.languages.len()];
        for_each_ngram(text, |g| {
            if let Some(logp) = self.profiles.get(g) {
                for (s, l) in scores.iter_mut().zip(logp) {
                    *s += l;
                }
            }
        });
        scores
    }

    /// Most probable language and its posterior probability. Exact ties go
    /// to the lexicographically smallest tag; blank text yields
    /// ([`UNDETERMINED`], 0).
    pub fn classify(&self, text: &str) -> (String, f64) {
        if text.trim().is_empty() {
            return (UNDETERMINED.to_string(), 0.0);
        }
        let scores = self.log_likelihoods(text);
        // languages are sorted, so the first maximum is the smallest tag
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        let top = scores[best];
        let total: f64 = scores.iter().map(|s| (s - top).exp()).sum();
        (self.languages[best].clone(), 1.0 / total)
    }

    /// True when `text` is classified as `lang` with at least `min_confidence`.
    pub fn accepts(&self, text: &str, lang: &str, min_confidence: f64) -> bool {
        let (predicted, confidence) = self.classify(text);
        predicted == lang && confidence >= min_confidence
    }
}

fn lid_stage<'a>(cfg: &PreprocessConfig, model: Option<&'a LidModel>) -> Result<Option<&'a LidModel>> {
    cfg.validate()?;
    match (cfg.lid_enabled, model) {
        (false, _) => Ok(None),
        (true, Some(m)) => Ok(Some(m)),
        (true, None) => Err(Error::validation(
            "language identification enabled but no model supplied",
        )),
    }
}

/// Filters `items` with `keep`, evaluating the predicate in parallel while
/// preserving order.
fn retain_par<T: Sync>(items: Vec<T>, keep: impl Fn(&T) -> bool + Sync) -> Vec<T> {
    let mask: Vec<bool> = items.par_iter().map(&keep).collect();
    items
        .into_iter()
        .zip(mask)
        .filter_map(|(item, k)| k.then_some(item))
        .collect()
}

/// Applies commas, length and LID filtering to a monolingual corpus. A record
/// survives LID when it is classified as the corpus language with confidence
/// at least `cfg.lid_min_confidence`.
pub fn preprocess_corpus(
    corpus: &Corpus,
    cfg: &PreprocessConfig,
    model: Option<&LidModel>,
) -> Result<(Corpus, StageReport)> {
    let lid = lid_stage(cfg, model)?;
    let lang = corpus.lang();
    let mut report = StageReport {
        input_count: corpus.len(),
        ..Default::default()
    };

    let records: Vec<&SentenceRecord> = corpus.iter().collect();
    let records = retain_par(records, |r| cfg.passes_commas(&r.text));
    report.after_commas = records.len();
    let records = retain_par(records, |r| cfg.passes_length(&r.text));
    report.after_length = records.len();
    let records = match lid {
        Some(m) => retain_par(records, |r| m.accepts(&r.text, lang, cfg.lid_min_confidence)),
        None => records,
    };
    report.after_lid = records.len();

    let survivors = Corpus::new(lang, records.into_iter().cloned().collect())?;
    Ok((survivors, report))
}

/// Line-aligned variant of [`preprocess_corpus`]: a pair survives a stage only
/// if both sides do, so alignment is preserved. Counts are pair counts.
pub fn preprocess_bitext(
    src: &Corpus,
    tgt: &Corpus,
    cfg: &PreprocessConfig,
    model: Option<&LidModel>,
) -> Result<(Corpus, Corpus, StageReport)> {
    if src.len() != tgt.len() {
        return Err(Error::LengthMismatch {
            what: "source vs target bitext lines",
            left: src.len(),
            right: tgt.len(),
        });
    }
    let lid = lid_stage(cfg, model)?;
    let (sl, tl) = (src.lang(), tgt.lang());
    let mut report = StageReport {
        input_count: src.len(),
        ..Default::default()
    };

    let pairs: Vec<(&SentenceRecord, &SentenceRecord)> = src.iter().zip(tgt.iter()).collect();
    let pairs = retain_par(pairs, |(s, t)| {
        cfg.passes_commas(&s.text) && cfg.passes_commas(&t.text)
    });
    report.after_commas = pairs.len();
    let pairs = retain_par(pairs, |(s, t)| {
        cfg.passes_length(&s.text) && cfg.passes_length(&t.text)
    });
    report.after_length = pairs.len();
    let pairs = match lid {
        Some(m) => retain_par(pairs, |(s, t)| {
            m.accepts(&s.text, sl, cfg.lid_min_confidence)
                && m.accepts(&t.text, tl, cfg.lid_min_confidence)
        }),
        None => pairs,
    };
    report.after_lid = pairs.len();

    let (s, t): (Vec<_>, Vec<_>) = pairs.into_iter().map(|(s, t)| (s.clone(), t.clone())).unzip();
    Ok((Corpus::new(sl, s)?, Corpus::new(tl, t)?, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bundled() -> LidModel {
        train_lid(bundled_seed_samples()).unwrap()
    }

    #[test]
    fn comma_counts() {
        assert_eq!(count_commas("a, b, c, d"), 3);
        assert_eq!(count_commas(""), 0);
        assert_eq!(count_commas("一，二，三，四，五"), 4);
        assert_eq!(count_commas("甲、乙, 丙"), 2);
    }

    #[test]
    fn word_counts() {
        assert_eq!(count_words("Hello world"), 2);
        assert_eq!(count_words("  a   b  "), 2);
        assert_eq!(count_words(""), 0);
    }

    #[test]
    fn config_validation() {
        assert!(PreprocessConfig::default().validate().is_ok());
        let bad = PreprocessConfig {
            max_words: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_language_rejected() {
        let err = train_lid([("en", "hello there"), ("en", "good morning")]).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn empty_text_is_undetermined() {
        assert_eq!(bundled().classify(""), (UNDETERMINED.to_string(), 0.0));
        assert_eq!(bundled().classify("   ").0, UNDETERMINED);
    }

    #[test]
    fn identical_profiles_tie_to_smallest_tag() {
        let m = train_lid([("zz", "same text here"), ("aa", "same text here")]).unwrap();
        let (lang, conf) = m.classify("same text");
        assert_eq!(lang, "aa");
        assert!((conf - 0.5).abs() < 1e-12);
    }

    #[test]
    fn classification_is_deterministic() {
        let m = bundled();
        let text = "Die Regierung hat heute neue Pläne vorgestellt.";
        assert_eq!(m.classify(text), m.classify(text));
        assert_eq!(m.classify(text).0, "de");
    }

    #[test]
    fn constructed_corpus_report() {
        let m = bundled();
        let long = vec!["word"; 60].join(" ");
        let corpus = Corpus::from_texts(
            "en",
            &[
                "The weather is nice today and we are going outside.",
                "One, two, three, four, five, and six are numbers.",
                long.as_str(),
                "Das ist ein ganz normaler deutscher Satz über das Wetter.",
            ],
        );
        let (out, report) = preprocess_corpus(&corpus, &PreprocessConfig::default(), Some(&m)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out.records()[0].id, "en-000001");
        assert_eq!(
            (report.input_count, report.after_commas, report.after_length, report.after_lid),
            (4, 3, 2, 1)
        );
    }

    #[test]
    fn empty_corpus_report() {
        let corpus = Corpus::from_texts::<&str>("en", &[]);
        let (out, report) =
            preprocess_corpus(&corpus, &PreprocessConfig::default(), Some(&bundled())).unwrap();
        assert!(out.is_empty());
        assert_eq!(report, StageReport::default());
    }

    #[test]
    fn lid_enabled_without_model_is_an_error() {
        let corpus = Corpus::from_texts("en", &["hello"]);
        assert!(preprocess_corpus(&corpus, &PreprocessConfig::default(), None).is_err());
    }

    #[test]
    fn bitext_pair_dropped_when_one_side_fails() {
        let cfg = PreprocessConfig {
            lid_enabled: false,
            ..Default::default()
        };
        let src = Corpus::from_texts("en", &["a b c", "clean line"]);
        let tgt = Corpus::from_texts("de", &["a, b, c, d, e", "saubere Zeile"]);
        let (s, t, report) = preprocess_bitext(&src, &tgt, &cfg, None).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.records()[0].text, "clean line");
        assert_eq!(t.records()[0].text, "saubere Zeile");
        assert_eq!(report.after_commas, 1);
    }

    #[test]
    fn clean_bitext_is_identity() {
        let m = bundled();
        let src = Corpus::from_texts("en", &["The children are playing in the garden.", "We bought fresh bread this morning."]);
        let tgt = Corpus::from_texts("de", &["Die Kinder spielen im Garten.", "Wir haben heute Morgen frisches Brot gekauft."]);
        let (s, t, _) = preprocess_bitext(&src, &tgt, &PreprocessConfig::default(), Some(&m)).unwrap();
        assert_eq!(s, src);
        assert_eq!(t, tgt);
    }

    #[test]
    fn bitext_length_mismatch() {
        let src = Corpus::from_texts("en", &["a", "b", "c"]);
        let tgt = Corpus::from_texts("de", &["a", "b"]);
        let cfg = PreprocessConfig::default();
        assert!(matches!(
            preprocess_bitext(&src, &tgt, &cfg, None),
            Err(Error::LengthMismatch { .. })
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn preprocess_is_idempotent_subsequence(
            texts in proptest::collection::vec("[a-z ,]{0,40}", 0..30),
            max_commas in 0usize..4,
            max_words in 1usize..8,
        ) {
            let m = bundled();
            let cfg = PreprocessConfig { max_commas, max_words, lid_enabled: true, lid_min_confidence: 0.3 };
            let corpus = Corpus::from_texts("en", &texts);
            let (once, r1) = preprocess_corpus(&corpus, &cfg, Some(&m)).unwrap();
            let (twice, r2) = preprocess_corpus(&once, &cfg, Some(&m)).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(r2.after_lid, r2.input_count);
            prop_assert!(r1.input_count >= r1.after_commas);
            prop_assert!(r1.after_commas >= r1.after_length);
            prop_assert!(r1.after_length >= r1.after_lid);
            // subsequence: ids appear in the original order
            let mut it = corpus.ids();
            for id in once.ids() {
                prop_assert!(it.any(|x| x == id));
            }
        }
    }
}
