//! Corpus data model: vocabulary, documents, context windows and
//! bag-of-words vectors.
//!
//! Text layout is one pre-tokenized sentence per line with a blank line
//! between documents.

use std::collections::HashMap;
use std::io::Read;

use crate::error::{Error, Result};

pub const UNK: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "</s>";

/// Raw tokenized text: documents of sentences of tokens.
pub type RawDocument = Vec<Vec<String>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Vocabulary with only the reserved tokens.
    pub fn reserved() -> Self {
        Self::from_tokens(std::iter::empty::<String>())
    }

    /// Reserved tokens followed by `tokens` in order. Duplicates and
    /// reserved spellings are skipped.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            tokens: vec![UNK_TOKEN.to_string(), EOS_TOKEN.to_string()],
            index: HashMap::new(),
        };
        v.index.insert(UNK_TOKEN.to_string(), UNK);
        v.index.insert(EOS_TOKEN.to_string(), EOS);
        for t in tokens {
            let t = t.into();
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len() as u32);
                v.tokens.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Unknown surface tokens map to [`UNK`].
    pub fn encode(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn decode(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, reserved tokens first.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_file_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(UNK_TOKEN) || lines.next() != Some(EOS_TOKEN) {
            return Err(Error::Data(format!(
                "vocabulary must start with `{UNK_TOKEN}` and `{EOS_TOKEN}`"
            )));
        }
        let rest: Vec<&str> = lines.collect();
        let v = Self::from_tokens(rest.iter().copied());
        if v.len() != rest.len() + 2 {
            return Err(Error::Data("vocabulary contains duplicate tokens".into()));
        }
        Ok(v)
    }

    pub fn encode_sentence(&self, tokens: &[String]) -> Sentence {
        Sentence::new(tokens.iter().map(|t| self.encode(t)).collect())
    }

    pub fn encode_documents(&self, raw: &[RawDocument]) -> Vec<Document> {
        raw.iter()
            .map(|doc| Document {
                sentences: doc.iter().map(|s| self.encode_sentence(s)).collect(),
            })
            .collect()
    }
}

/// Content token ids of one sentence. The end-of-sentence event is implied
/// and appended by [`Sentence::targets`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    tokens: Vec<u32>,
    /// `false` when the sentence is only usable as context.
    pub is_target: bool,
}

impl Sentence {
    pub fn new(tokens: Vec<u32>) -> Self {
        Self {
            tokens,
            is_target: true,
        }
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// Number of content tokens, excluding EOS.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Predicted events: content tokens followed by EOS.
    pub fn targets(&self) -> impl Iterator<Item = u32> + '_ {
        self.tokens.iter().copied().chain(std::iter::once(EOS))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub sentences: Vec<Sentence>,
}

/// A target sentence with up to `n` preceding sentences of its document.
#[derive(Debug, Clone, Copy)]
pub struct ContextWindow<'a> {
    pub target: &'a Sentence,
    pub context: &'a [Sentence],
}

impl<'a> ContextWindow<'a> {
    pub fn new(target: &'a Sentence, context: &'a [Sentence]) -> Self {
        Self { target, context }
    }

    pub fn without_context(target: &'a Sentence) -> Self {
        Self { target, context: &[] }
    }
}

/// Parses corpus text. Invalid UTF-8 is reported with its byte offset.
pub fn load_corpus<R: Read>(mut reader: R) -> Result<Vec<RawDocument>> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Utf8 {
        offset: e.valid_up_to(),
    })?;
    Ok(parse_corpus(text))
}

pub fn parse_corpus(text: &str) -> Vec<RawDocument> {
    let mut docs = Vec::new();
    let mut current: RawDocument = Vec::new();
    for line in text.lines() {
        let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if tokens.is_empty() {
            if !current.is_empty() {
                docs.push(std::mem::take(&mut current));
            }
        } else {
            current.push(tokens);
        }
    }
    if !current.is_empty() {
        docs.push(current);
    }
    docs
}

/// Keeps the `max_size - 2` most frequent tokens (ties broken
/// lexicographically) after the two reserved ids.
pub fn build_vocabulary(docs: &[RawDocument], max_size: usize) -> Result<Vocabulary> {
    if max_size < 2 {
        return Err(Error::InvalidArgument(format!(
            "vocabulary size {max_size} leaves no room for {UNK_TOKEN} and {EOS_TOKEN}"
        )));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for tok in docs.iter().flatten().flatten() {
        if tok != UNK_TOKEN && tok != EOS_TOKEN {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked.truncate(max_size - 2);
    Ok(Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t)))
}

/// Marks sentences longer than `max_len` as context-only. Nothing is removed.
pub fn filter_by_length(docs: &[Document], max_len: usize) -> Vec<Document> {
    docs.iter()
        .map(|d| Document {
            sentences: d
                .sentences
                .iter()
                .map(|s| Sentence {
                    tokens: s.tokens.clone(),
                    is_target: s.is_target && s.len() <= max_len,
                })
                .collect(),
        })
        .collect()
}

/// Sparse counts of content tokens across `sentences`, ascending by id.
pub fn bow_counts(sentences: &[Sentence]) -> Vec<(usize, u32)> {
    let mut counts: HashMap<u32, u32> = HashMap::new();
    for s in sentences {
        for &t in s.tokens.iter().filter(|&&t| t != EOS) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut out: Vec<(usize, u32)> = counts.into_iter().map(|(k, v)| (k as usize, v)).collect();
    out.sort_unstable();
    out
}

/// Dense bag-of-words vector of length `|V|`, EOS excluded.
pub fn bow_vector(sentences: &[Sentence], vocab: &Vocabulary) -> Vec<f64> {
    let mut v = vec![0.0; vocab.len()];
    for (id, c) in bow_counts(sentences) {
        v[id] += c as f64;
    }
    v
}

/// One window per target-eligible sentence, each with up to `n` preceding
/// sentences.
pub fn context_windows(doc: &Document, n: usize) -> Vec<ContextWindow<'_>> {
    doc.sentences
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_target)
        .map(|(l, s)| ContextWindow {
            target: s,
            context: &doc.sentences[l.saturating_sub(n)..l],
        })
        .collect()
}

pub fn all_windows(docs: &[Document], n: usize) -> Vec<ContextWindow<'_>> {
    docs.iter().flat_map(|d| context_windows(d, n)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(text: &str) -> Vec<RawDocument> {
        parse_corpus(text)
    }

    #[test]
    fn load_splits_documents_on_blank_lines() {
        let docs = load_corpus("a b\nc\n\nd e\n".as_bytes()).unwrap();
        assert_eq!(docs.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 1]);
        let one = load_corpus("a b\n".as_bytes()).unwrap();
        assert_eq!(one, vec![vec![vec!["a".to_string(), "b".to_string()]]]);
        assert!(load_corpus("".as_bytes()).unwrap().is_empty());
        // repeated blank lines never create empty documents
        assert_eq!(raw("\n\na\n\n\n\nb\n\n").len(), 2);
    }

    #[test]
    fn invalid_utf8_reports_offset() {
        let bytes = b"ab c\n\xff\n";
        match load_corpus(&bytes[..]) {
            Err(Error::Utf8 { offset }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn vocabulary_frequency_order() {
        let v = build_vocabulary(&raw("a a b"), 3).unwrap();
        assert_eq!(v.tokens(), &["<unk>", "</s>", "a"]);
        let v = build_vocabulary(&raw("a b"), 3).unwrap();
        assert_eq!(v.tokens(), &["<unk>", "</s>", "a"]);
        let v = build_vocabulary(&raw("x y x y z"), 4).unwrap();
        assert_eq!(v.tokens(), &["<unk>", "</s>", "x", "y"]);
        assert_eq!(v.encode("z"), UNK);
        assert!(build_vocabulary(&raw("a"), 1).is_err());
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let v = build_vocabulary(&raw("the cat sat on the mat"), 100).unwrap();
        let text = v.to_file_string();
        assert!(text.starts_with("<unk>\n</s>\n"));
        assert_eq!(Vocabulary::from_file_str(&text).unwrap(), v);
        assert!(Vocabulary::from_file_str("a\nb\n").is_err());
    }

    #[test]
    fn length_filter_keeps_long_sentences_as_context() {
        let doc = Document {
            sentences: vec![
                Sentence::new(vec![2; 3]),
                Sentence::new(vec![2; 60]),
                Sentence::new(vec![2; 4]),
            ],
        };
        let filtered = filter_by_length(std::slice::from_ref(&doc), 50);
        let w = context_windows(&filtered[0], 2);
        assert_eq!(w.iter().map(|w| w.target.len()).collect::<Vec<_>>(), vec![3, 4]);
        assert_eq!(w[1].context.len(), 2);
        assert_eq!(w[1].context[1].len(), 60);
        let same = filter_by_length(std::slice::from_ref(&doc), 100);
        assert_eq!(same[0], doc);
    }

    #[test]
    fn bow_counts_tokens() {
        let v = Vocabulary::from_tokens(["a", "b", "c"]);
        let s = |t: &str| v.encode_sentence(&t.split(' ').map(String::from).collect::<Vec<_>>());
        let b = bow_vector(&[s("a a b")], &v);
        assert_eq!(b, vec![0.0, 0.0, 2.0, 1.0, 0.0]);
        assert_eq!(bow_vector(&[], &v), vec![0.0; 5]);
        let b = bow_vector(&[s("a b"), s("b c")], &v);
        assert_eq!(b, vec![0.0, 0.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn windows_take_preceding_sentences() {
        let doc = Document {
            sentences: (0..10).map(|i| Sentence::new(vec![i])).collect(),
        };
        let w = context_windows(&doc, 2);
        assert!(w[0].context.is_empty());
        assert_eq!(w[1].context, &doc.sentences[0..1]);
        assert_eq!(w[2].context, &doc.sentences[0..2]);
        assert!(context_windows(&doc, 0).iter().all(|w| w.context.is_empty()));
        let w8 = context_windows(&doc, 8);
        assert_eq!(w8[9].context, &doc.sentences[1..9]);
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(words in proptest::collection::vec("[a-e]{1,3}", 1..30)) {
            let docs = vec![vec![words.clone()]];
            let v = build_vocabulary(&docs, 1000).unwrap();
            for id in 0..v.len() as u32 {
                prop_assert_eq!(v.encode(v.decode(id).unwrap()), id);
            }
            prop_assert_eq!(v.encode("not-a-word"), UNK);
        }

        #[test]
        fn window_count_matches_targets(lens in proptest::collection::vec(1usize..20, 1..15), n in 0usize..9, max_len in 1usize..20) {
            let doc = Document { sentences: lens.iter().map(|&l| Sentence::new(vec![2; l])).collect() };
            let filtered = filter_by_length(&[doc], max_len);
            let eligible = lens.iter().filter(|&&l| l <= max_len).count();
            let w = context_windows(&filtered[0], n);
            prop_assert_eq!(w.len(), eligible);
            for win in &w {
                prop_assert!(win.context.len() <= n);
            }
        }

        #[test]
        fn bow_is_additive(a in proptest::collection::vec(proptest::collection::vec(0u32..6, 1..5), 0..4),
                           b in proptest::collection::vec(proptest::collection::vec(0u32..6, 1..5), 0..4)) {
            let v = Vocabulary::from_tokens(["a", "b", "c", "d"]);
            let sa: Vec<Sentence> = a.into_iter().map(Sentence::new).collect();
            let sb: Vec<Sentence> = b.into_iter().map(Sentence::new).collect();
            let both: Vec<Sentence> = sa.iter().chain(&sb).cloned().collect();
            let (x, y, z) = (bow_vector(&sa, &v), bow_vector(&sb, &v), bow_vector(&both, &v));
            for i in 0..v.len() {
                prop_assert_eq!(x[i] + y[i], z[i]);
            }
        }
    }
}
