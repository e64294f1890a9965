//! Joint byte-pair-encoding vocabulary learned over several languages at once.
//!
//! Words are whitespace tokens, split into characters with an end-of-word
//! marker glued to the last one. Training repeatedly merges the most frequent
//! adjacent symbol pair (ties broken by the lexicographically smallest
//! `(left, right)`), stopping after the requested number of merges or when no
//! pair occurs at least twice.
//!
//! Model files start with `#bpe v1 <num_merges>` followed by one
//! `left right` merge per line in merge order.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::rc::Rc;

use crate::corpus_io::Corpus;
use crate::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
pub const DEFAULT_NUM_MERGES: usize = 20_000;
/// Training stops once the most frequent pair occurs fewer times than this.
pub const MIN_PAIR_FREQUENCY: u64 = 2;

const HEADER_PREFIX: &str = "#bpe v1 ";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
    num_merges: usize,
}

/// Splits a word into characters, marking the last one as word-final.
pub fn word_symbols(word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = symbols.last_mut() {
        last.push_str(END_OF_WORD);
    }
    symbols
}

/// Counts whitespace-separated words across all corpora.
pub fn word_frequencies<'a, I>(corpora: I) -> BTreeMap<String, u64>
where
    I: IntoIterator<Item = &'a Corpus>,
{
    let mut freqs = BTreeMap::new();
    for corpus in corpora {
        for record in corpus {
            for word in record.text.split_whitespace() {
                *freqs.entry(word.to_string()).or_insert(0) += 1;
            }
        }
    }
    freqs
}

/// Learns one merge list over the pooled words of every corpus.
pub fn learn_bpe<'a, I>(corpora: I, num_merges: usize) -> Result<BpeModel>
where
    I: IntoIterator<Item = &'a Corpus>,
{
    learn_bpe_from_counts(&word_frequencies(corpora), num_merges)
}

#[derive(PartialEq, Eq)]
struct HeapEntry {
    count: u64,
    strings: Reverse<(Rc<str>, Rc<str>)>,
    pair: (u32, u32),
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count
            .cmp(&other.count)
            .then_with(|| self.strings.cmp(&other.strings))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Default)]
struct Interner {
    strings: Vec<Rc<str>>,
    ids: HashMap<Rc<str>, u32>,
}

impl Interner {
    fn intern(&mut self, s: &str) -> u32 {
        if let Some(&id) = self.ids.get(s) {
            return id;
        }
        let id = self.strings.len() as u32;
        let rc: Rc<str> = Rc::from(s);
        self.strings.push(rc.clone());
        self.ids.insert(rc, id);
        id
    }
}

struct PairStats {
    counts: HashMap<(u32, u32), u64>,
    words: HashMap<(u32, u32), HashSet<usize>>,
    heap: BinaryHeap<HeapEntry>,
}

impl PairStats {
    fn push(&mut self, interner: &Interner, pair: (u32, u32)) {
        let count = self.counts.get(&pair).copied().unwrap_or(0);
        if count > 0 {
            let strings = (
                interner.strings[pair.0 as usize].clone(),
                interner.strings[pair.1 as usize].clone(),
            );
            self.heap.push(HeapEntry {
                count,
                strings: Reverse(strings),
                pair,
            });
        }
    }
}

/// Merges every non-overlapping occurrence of `pair`, scanning left to right.
fn merge_word<T: Clone + PartialEq>(symbols: &[T], pair: (&T, &T), merged: &T) -> Vec<T> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && &symbols[i] == pair.0 && &symbols[i + 1] == pair.1 {
            out.push(merged.clone());
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learns merges from explicit word counts.
pub fn learn_bpe_from_counts(word_counts: &BTreeMap<String, u64>, num_merges: usize) -> Result<BpeModel> {
    if num_merges == 0 {
        return Err(Error::validation("num_merges must be at least 1"));
    }
    if word_counts.values().all(|&c| c == 0) {
        return Err(Error::validation("cannot learn BPE from an empty corpus"));
    }

    let mut interner = Interner::default();
    let mut words: Vec<(Vec<u32>, u64)> = word_counts
        .iter()
        .filter(|(_, &c)| c > 0)
        .map(|(w, &c)| {
            let syms = word_symbols(w).iter().map(|s| interner.intern(s)).collect();
            (syms, c)
        })
        .collect();

    let mut stats = PairStats {
        counts: HashMap::new(),
        words: HashMap::new(),
        heap: BinaryHeap::new(),
    };
    for (wi, (syms, freq)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            let pair = (p[0], p[1]);
            *stats.counts.entry(pair).or_insert(0) += freq;
            stats.words.entry(pair).or_default().insert(wi);
        }
    }
    let initial: Vec<(u32, u32)> = stats.counts.keys().copied().collect();
    for pair in initial {
        stats.push(&interner, pair);
    }

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let Some(top) = stats.heap.pop() else { break };
        let current = stats.counts.get(&top.pair).copied().unwrap_or(0);
        if current != top.count {
            continue; // stale entry
        }
        if current < MIN_PAIR_FREQUENCY {
            break;
        }
        let (left, right) = top.pair;
        let merged_str = format!(
            "{}{}",
            interner.strings[left as usize],
            interner.strings[right as usize]
        );
        let merged = interner.intern(&merged_str);
        merges.push((
            interner.strings[left as usize].to_string(),
            interner.strings[right as usize].to_string(),
        ));

        let affected = stats.words.remove(&top.pair).unwrap_or_default();
        let mut changed = HashSet::new();
        for wi in affected {
            let (syms, freq) = &words[wi];
            let freq = *freq;
            if !syms.windows(2).any(|p| p[0] == left && p[1] == right) {
                continue;
            }
            for p in syms.windows(2) {
                let pair = (p[0], p[1]);
                if let Some(c) = stats.counts.get_mut(&pair) {
                    *c -= freq;
                }
                changed.insert(pair);
            }
            let new_syms = merge_word(syms, (&left, &right), &merged);
            for p in new_syms.windows(2) {
                let pair = (p[0], p[1]);
                *stats.counts.entry(pair).or_insert(0) += freq;
                stats.words.entry(pair).or_default().insert(wi);
                changed.insert(pair);
            }
            words[wi].0 = new_syms;
        }
        stats.counts.retain(|_, c| *c > 0);
        for pair in changed {
            stats.push(&interner, pair);
        }
    }

    Ok(BpeModel::from_merges(merges, num_merges))
}

impl BpeModel {
    /// Builds a model from an ordered merge list; `num_merges` is the target
    /// the model was trained for.
    pub fn from_merges(merges: Vec<(String, String)>, num_merges: usize) -> Self {
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        Self {
            merges,
            ranks,
            num_merges,
        }
    }

    /// A model with no merges: every character is its own token.
    pub fn empty() -> Self {
        Self::from_merges(Vec::new(), 0)
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn num_merges(&self) -> usize {
        self.num_merges
    }

    /// The model restricted to its first `k` merges.
    pub fn truncated(&self, k: usize) -> Self {
        Self::from_merges(self.merges[..k.min(self.merges.len())].to_vec(), k)
    }

    /// Segments one whitespace-free word.
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        let mut symbols = word_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())))
                .min();
            let Some(&rank) = best else { break };
            let (l, r) = &self.merges[rank];
            let merged = format!("{l}{r}");
            symbols = merge_word(&symbols, (l, r), &merged);
        }
        symbols
    }

    /// Segments whitespace-tokenized text into subword tokens.
    pub fn apply(&self, text: &str) -> Vec<String> {
        text.split_whitespace()
            .flat_map(|w| self.apply_word(w))
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{HEADER_PREFIX}{}", self.num_merges)?;
        for (l, r) in &self.merges {
            writeln!(w, "{l} {r}")?;
        }
        w.flush()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, message: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| parse_err(1, "missing header"))?;
        let num_merges: usize = header
            .strip_prefix(HEADER_PREFIX)
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| parse_err(1, "expected `#bpe v1 <num_merges>`"))?;
        let mut merges = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let mut parts = line.split(' ');
            let (Some(l), Some(r), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(parse_err(line_no, "expected `left right`"));
            };
            if l.is_empty() || r.is_empty() {
                return Err(parse_err(line_no, "empty merge symbol"));
            }
            let merge = (l.to_string(), r.to_string());
            if !seen.insert(merge.clone()) {
                return Err(parse_err(line_no, "duplicate merge"));
            }
            merges.push(merge);
        }
        Ok(Self::from_merges(merges, num_merges))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Joins subword tokens back into space-separated words.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for t in tokens {
        let t = t.as_ref();
        match t.strip_suffix(END_OF_WORD) {
            Some(stem) => {
                out.push_str(stem);
                out.push(' ');
            }
            None => out.push_str(t),
        }
    }
    if out.ends_with(' ') {
        out.pop();
    }
    out
}
