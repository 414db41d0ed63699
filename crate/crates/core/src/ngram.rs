//! Count-based n-gram language model with interpolated modified Kneser-Ney
//! smoothing.
//!
//! Sentences are padded with `order - 1` begin markers ([`BOS`]) and end
//! with [`EOS`](crate::corpus::EOS). Begin markers only ever appear in contexts. The highest
//! order uses raw counts; every lower order uses continuation counts (the
//! number of distinct left extensions). The recursion bottoms out in a
//! uniform distribution over the vocabulary.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::corpus::{Document, Sentence, Vocabulary};
use crate::error::{Error, Result};

/// Begin-of-sentence padding id; never a vocabulary id.
pub const BOS: u32 = u32::MAX;
pub const BOS_TOKEN: &str = "<s>";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct ContextStats {
    total: u64,
    n1: u64,
    n2: u64,
    n3plus: u64,
}

/// Count-of-counts `n1..n4` for one order.
pub type CountOfCounts = [u64; 4];

#[derive(Debug, Clone)]
pub struct NGramTable {
    order: usize,
    /// Raw counts, indexed by order - 1.
    counts: Vec<HashMap<Vec<u32>, u64>>,
    /// Counts used for estimation: raw at the top order, continuation below.
    adjusted: Vec<HashMap<Vec<u32>, u64>>,
    /// Per-context aggregates of `adjusted`, keyed by the (k-1)-token context.
    contexts: Vec<HashMap<Vec<u32>, ContextStats>>,
    /// Per-context sums of raw counts.
    raw_totals: Vec<HashMap<Vec<u32>, u64>>,
    count_of_counts: Vec<CountOfCounts>,
}

impl NGramTable {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(HashMap::is_empty)
    }

    /// Raw occurrence count of an n-gram of any order up to `order`.
    pub fn count(&self, ngram: &[u32]) -> u64 {
        if ngram.is_empty() || ngram.len() > self.order {
            return 0;
        }
        self.counts[ngram.len() - 1].get(ngram).copied().unwrap_or(0)
    }

    /// Number of distinct tokens seen immediately before `ngram`.
    pub fn continuation_count(&self, ngram: &[u32]) -> u64 {
        if ngram.is_empty() || ngram.len() >= self.order {
            return 0;
        }
        self.adjusted[ngram.len() - 1].get(ngram).copied().unwrap_or(0)
    }

    pub fn count_of_counts(&self, order: usize) -> CountOfCounts {
        self.count_of_counts[order - 1]
    }

    /// All n-grams of one order with their raw counts, sorted.
    pub fn ngrams(&self, order: usize) -> Vec<(&[u32], u64)> {
        let mut v: Vec<(&[u32], u64)> = self.counts[order - 1].iter().map(|(k, &c)| (k.as_slice(), c)).collect();
        v.sort_unstable();
        v
    }

    /// Whether `context` occurs as the history of some n-gram of order
    /// `context.len() + 1`.
    pub fn has_context(&self, context: &[u32]) -> bool {
        context.len() < self.order && self.contexts[context.len()].contains_key(context)
    }

    /// Maximum-likelihood estimate `c(h w) / sum_w' c(h w')`, no smoothing.
    pub fn ml_probability(&self, word: u32, context: &[u32]) -> Option<f64> {
        let k = context.len();
        if k >= self.order {
            return None;
        }
        let total = *self.raw_totals[k].get(context)?;
        let mut gram = context.to_vec();
        gram.push(word);
        Some(self.count(&gram) as f64 / total as f64)
    }
}

pub fn count_ngrams(docs: &[Document], order: usize) -> Result<NGramTable> {
    count_sentences(docs.iter().flat_map(|d| &d.sentences), order)
}

pub fn count_sentences<'a, I>(sentences: I, order: usize) -> Result<NGramTable>
where
    I: IntoIterator<Item = &'a Sentence>,
{
    if order == 0 {
        return Err(Error::InvalidArgument("n-gram order must be at least 1".into()));
    }
    let mut counts: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
    let mut padded = Vec::new();
    for s in sentences {
        padded.clear();
        padded.extend(std::iter::repeat_n(BOS, order - 1));
        padded.extend(s.targets());
        for i in order - 1..padded.len() {
            for k in 1..=order {
                *counts[k - 1].entry(padded[i + 1 - k..=i].to_vec()).or_default() += 1;
            }
        }
    }

    let mut adjusted: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
    adjusted[order - 1] = counts[order - 1].clone();
    for k in 1..order {
        let lower = &mut adjusted[k - 1];
        for gram in counts[k].keys() {
            *lower.entry(gram[1..].to_vec()).or_default() += 1;
        }
    }

    let mut contexts: Vec<HashMap<Vec<u32>, ContextStats>> = vec![HashMap::new(); order];
    let mut raw_totals: Vec<HashMap<Vec<u32>, u64>> = vec![HashMap::new(); order];
    let mut count_of_counts = vec![[0u64; 4]; order];
    for k in 1..=order {
        for (gram, &a) in &adjusted[k - 1] {
            let st = contexts[k - 1].entry(gram[..k - 1].to_vec()).or_default();
            st.total += a;
            match a {
                1 => st.n1 += 1,
                2 => st.n2 += 1,
                _ => st.n3plus += 1,
            }
            if (1..=4).contains(&a) {
                count_of_counts[k - 1][a as usize - 1] += 1;
            }
        }
        for (gram, &c) in &counts[k - 1] {
            *raw_totals[k - 1].entry(gram[..k - 1].to_vec()).or_default() += c;
        }
    }

    Ok(NGramTable {
        order,
        counts,
        adjusted,
        contexts,
        raw_totals,
        count_of_counts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderDiscount {
    pub d1: f64,
    pub d2: f64,
    pub d3plus: f64,
    /// Set when the count-of-counts were degenerate and a single discount
    /// was used for every count.
    pub fallback: bool,
}

impl OrderDiscount {
    fn for_count(&self, c: u64) -> f64 {
        match c {
            0 => 0.0,
            1 => self.d1,
            2 => self.d2,
            _ => self.d3plus,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscountSet {
    /// Indexed by order - 1.
    pub orders: Vec<OrderDiscount>,
}

impl DiscountSet {
    /// Orders (1-based) that fell back to a single discount.
    pub fn fallback_orders(&self) -> Vec<usize> {
        self.orders
            .iter()
            .enumerate()
            .filter(|(_, d)| d.fallback)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

/// Single discount used when `Y` is zero or undefined (no singletons).
const UNDEFINED_Y_DISCOUNT: f64 = 0.5;

/// Modified Kneser-Ney discounts from count-of-counts `n1..n4`.
pub fn discounts_from_counts(n: CountOfCounts) -> OrderDiscount {
    let [n1, n2, n3, n4] = n.map(|x| x as f64);
    let degenerate = n1 + 2.0 * n2 == 0.0 || n1 == 0.0 || n2 == 0.0 || n3 == 0.0;
    if degenerate {
        // Y = 0 would remove all backoff mass and break positivity
        let d = if n1 > 0.0 {
            n1 / (n1 + 2.0 * n2)
        } else {
            UNDEFINED_Y_DISCOUNT
        };
        return OrderDiscount {
            d1: d.clamp(0.0, 1.0),
            d2: d.clamp(0.0, 2.0),
            d3plus: d.clamp(0.0, 3.0),
            fallback: true,
        };
    }
    let y = n1 / (n1 + 2.0 * n2);
    OrderDiscount {
        d1: (1.0 - 2.0 * y * n2 / n1).clamp(0.0, 1.0),
        d2: (2.0 - 3.0 * y * n3 / n2).clamp(0.0, 2.0),
        d3plus: (3.0 - 4.0 * y * n4 / n3).clamp(0.0, 3.0),
        fallback: false,
    }
}

pub fn estimate_discounts(table: &NGramTable) -> DiscountSet {
    let orders: Vec<OrderDiscount> = table
        .count_of_counts
        .iter()
        .map(|&n| discounts_from_counts(n))
        .collect();
    for (i, d) in orders.iter().enumerate() {
        if d.fallback && !table.counts[i].is_empty() {
            log::warn!(
                "degenerate count-of-counts {:?} at order {}; using a single discount {:.4}",
                table.count_of_counts[i],
                i + 1,
                d.d1
            );
        }
    }
    DiscountSet { orders }
}

/// Smoothed n-gram model over a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct NGramModel {
    table: NGramTable,
    discounts: DiscountSet,
    vocab_size: usize,
}

impl NGramModel {
    pub fn new(table: NGramTable, vocab_size: usize) -> Self {
        let discounts = estimate_discounts(&table);
        Self {
            table,
            discounts,
            vocab_size,
        }
    }

    pub fn train(docs: &[Document], order: usize, vocab_size: usize) -> Result<Self> {
        Ok(Self::new(count_ngrams(docs, order)?, vocab_size))
    }

    pub fn table(&self) -> &NGramTable {
        &self.table
    }

    pub fn discounts(&self) -> &DiscountSet {
        &self.discounts
    }

    pub fn order(&self) -> usize {
        self.table.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Interpolated probability of `word` after `context`. Only the last
    /// `order - 1` context tokens are used.
    pub fn probability(&self, word: u32, context: &[u32]) -> Result<f64> {
        if word as usize >= self.vocab_size {
            return Err(Error::InvalidArgument(format!(
                "word id {word} outside a vocabulary of {}",
                self.vocab_size
            )));
        }
        let keep = context.len().min(self.table.order - 1);
        let context = &context[context.len() - keep..];
        Ok(self.interpolated(word, context).0)
    }

    /// Returns the probability and the backoff weight of the longest
    /// context that was used.
    fn interpolated(&self, word: u32, context: &[u32]) -> (f64, f64) {
        let mut p = 1.0 / self.vocab_size as f64;
        let mut gram = Vec::with_capacity(context.len() + 1);
        let mut gamma = 1.0;
        for k in 1..=context.len() + 1 {
            let history = &context[context.len() + 1 - k..];
            let Some(st) = self.table.contexts[k - 1].get(history) else {
                // a longer history cannot be seen if this suffix was not
                break;
            };
            gram.clear();
            gram.extend_from_slice(history);
            gram.push(word);
            let a = self.table.adjusted[k - 1].get(&gram).copied().unwrap_or(0);
            let d = &self.discounts.orders[k - 1];
            let total = st.total as f64;
            gamma = (d.d1 * st.n1 as f64 + d.d2 * st.n2 as f64 + d.d3plus * st.n3plus as f64) / total;
            p = (a as f64 - d.for_count(a)).max(0.0) / total + gamma * p;
        }
        (p, gamma)
    }

    /// Backoff weight of `context` as a history, when it has been seen.
    fn backoff_weight(&self, context: &[u32]) -> Option<f64> {
        let k = context.len() + 1;
        if k > self.table.order {
            return None;
        }
        let st = self.table.contexts[k - 1].get(context)?;
        let d = &self.discounts.orders[k - 1];
        Some((d.d1 * st.n1 as f64 + d.d2 * st.n2 as f64 + d.d3plus * st.n3plus as f64) / st.total as f64)
    }

    /// Natural-log probabilities of every target (content tokens and EOS).
    pub fn token_log_probs(&self, sentence: &Sentence) -> Result<Vec<f64>> {
        let order = self.table.order;
        let mut history: Vec<u32> = vec![BOS; order - 1];
        let mut out = Vec::with_capacity(sentence.len() + 1);
        for w in sentence.targets() {
            let ctx = &history[history.len() - (order - 1)..];
            out.push(self.probability(w, ctx)?.ln());
            history.push(w);
        }
        Ok(out)
    }

    pub fn sentence_log_probability(&self, sentence: &Sentence) -> Result<f64> {
        Ok(self.token_log_probs(sentence)?.iter().sum())
    }

    /// Text export: a block per order, one line per n-gram with
    /// `log10prob \t tokens \t log10backoff`.
    pub fn export(&self, vocab: &Vocabulary) -> String {
        let mut out = String::from("\\data\\\n");
        for k in 1..=self.table.order {
            let _ = writeln!(out, "ngram {k}={}", self.table.counts[k - 1].len());
        }
        for k in 1..=self.table.order {
            let _ = write!(out, "\n\\{k}-grams:\n");
            for (gram, _) in self.table.ngrams(k) {
                let (word, ctx) = gram.split_last().expect("n-grams are non-empty");
                let (p, _) = self.interpolated(*word, ctx);
                let tokens: Vec<&str> = gram
                    .iter()
                    .map(|&t| {
                        if t == BOS {
                            BOS_TOKEN
                        } else {
                            vocab.decode(t).unwrap_or("<unk>")
                        }
                    })
                    .collect();
                let backoff = self.backoff_weight(gram).map_or(0.0, f64::log10);
                let _ = writeln!(out, "{:.6}\t{}\t{:.6}", p.log10(), tokens.join(" "), backoff);
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }
}
