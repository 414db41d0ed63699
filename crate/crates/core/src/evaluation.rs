//! Corpus perplexity and perplexity per part-of-speech tag.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::corpus::{all_windows, ContextWindow, Document, RawDocument, UNK};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::ngram::NGramModel;
use crate::numeric::Real;

/// Anything that assigns per-event NLLs to a target sentence.
pub trait SentenceScorer: Sync {
    /// NLL in nats of each content token, then of EOS.
    fn token_nlls(&self, window: ContextWindow<'_>) -> Result<Vec<f64>>;
}

impl<T: Real> SentenceScorer for Model<T> {
    fn token_nlls(&self, window: ContextWindow<'_>) -> Result<Vec<f64>> {
        Ok(Model::token_nlls(self, window)?
            .into_iter()
            .map(|x| x.to_f64().unwrap_or(f64::NAN))
            .collect())
    }
}

/// Scores each sentence on its own, ignoring the context window.
impl SentenceScorer for NGramModel {
    fn token_nlls(&self, window: ContextWindow<'_>) -> Result<Vec<f64>> {
        Ok(self.token_log_probs(window.target)?.into_iter().map(|lp| -lp).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub sentences: usize,
    /// Predicted events, EOS included.
    pub tokens: usize,
    pub total_nll: f64,
}

impl EvalReport {
    pub fn mean_nll(&self) -> f64 {
        self.total_nll / self.tokens as f64
    }

    pub fn perplexity(&self) -> f64 {
        self.mean_nll().exp()
    }
}

/// Per-event NLLs of every sentence of `docs`, each conditioned on up to `n`
/// preceding sentences. Order follows the corpus.
pub fn corpus_token_nlls<S: SentenceScorer + ?Sized>(scorer: &S, docs: &[Document], n: usize) -> Result<Vec<Vec<f64>>> {
    let windows = all_windows(docs, n);
    windows.par_iter().map(|&w| scorer.token_nlls(w)).collect()
}

/// `exp(total NLL / predicted events)` over every sentence, EOS included.
pub fn corpus_perplexity<S: SentenceScorer + ?Sized>(scorer: &S, docs: &[Document], n: usize) -> Result<EvalReport> {
    let nlls = corpus_token_nlls(scorer, docs, n)?;
    report_from_nlls(&nlls)
}

fn report_from_nlls(nlls: &[Vec<f64>]) -> Result<EvalReport> {
    if nlls.is_empty() {
        return Err(Error::Data("evaluation corpus is empty".into()));
    }
    let mut total = 0.0;
    let mut tokens = 0;
    for s in nlls {
        total += s.iter().sum::<f64>();
        tokens += s.len();
    }
    if !total.is_finite() {
        return Err(Error::NonFinite("corpus NLL".into()));
    }
    Ok(EvalReport {
        sentences: nlls.len(),
        tokens,
        total_nll: total,
    })
}

/// Fraction of content tokens that are UNK.
pub fn unk_rate(docs: &[Document]) -> f64 {
    let (mut unk, mut all) = (0usize, 0usize);
    for s in docs.iter().flat_map(|d| &d.sentences) {
        all += s.len();
        unk += s.tokens().iter().filter(|&&t| t == UNK).count();
    }
    if all == 0 {
        0.0
    } else {
        unk as f64 / all as f64
    }
}

/// Tags aligned one-to-one with content tokens, in the corpus layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagAnnotation {
    pub docs: Vec<RawDocument>,
}

impl TagAnnotation {
    /// Parses a tag file laid out like the corpus it annotates.
    pub fn parse(text: &str) -> Self {
        Self {
            docs: crate::corpus::parse_corpus(text),
        }
    }

    /// Checks document, sentence and token counts against `docs`.
    pub fn check_alignment(&self, docs: &[Document]) -> Result<()> {
        if self.docs.len() != docs.len() {
            return Err(Error::Data(format!(
                "tag file has {} documents, corpus has {}",
                self.docs.len(),
                docs.len()
            )));
        }
        for (d, (tags, doc)) in self.docs.iter().zip(docs).enumerate() {
            if tags.len() != doc.sentences.len() {
                return Err(Error::Data(format!(
                    "document {d}: tag file has {} sentences, corpus has {}",
                    tags.len(),
                    doc.sentences.len()
                )));
            }
            for (s, (t, sent)) in tags.iter().zip(&doc.sentences).enumerate() {
                if t.len() != sent.len() {
                    return Err(Error::Data(format!(
                        "document {d}, sentence {s}: {} tags for {} tokens",
                        t.len(),
                        sent.len()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// How per-token NLLs are combined into one per-tag perplexity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TagMean {
    /// `exp(mean NLL)`
    #[default]
    Geometric,
    /// Mean of per-token `exp(NLL)`.
    Arithmetic,
}

/// Reporting group of a raw tag: NN and NNS become `Noun`, VB and VBZ
/// become `Verb`.
pub fn merge_tag(tag: &str) -> &str {
    match tag {
        "NN" | "NNS" => "Noun",
        "VB" | "VBZ" => "Verb",
        t => t,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagRow {
    pub tag: String,
    pub count: usize,
    pub mean_nll: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagReport {
    /// Every merged tag, most frequent first, ties by name.
    pub rows: Vec<TagRow>,
    pub tagged_tokens: usize,
    pub tagged_nll: f64,
    pub mean: TagMean,
}

impl TagReport {
    pub fn top(&self, k: usize) -> &[TagRow] {
        &self.rows[..k.min(self.rows.len())]
    }

    /// Perplexity over all tagged tokens, `exp(mean NLL)`.
    pub fn tagged_perplexity(&self) -> f64 {
        (self.tagged_nll / self.tagged_tokens as f64).exp()
    }
}

/// Groups per-token NLLs by merged tag. EOS carries no tag and is skipped.
pub fn tag_report(token_nlls: &[Vec<f64>], tags: &[&[String]], mean: TagMean) -> Result<TagReport> {
    if token_nlls.len() != tags.len() {
        return Err(Error::Data(format!(
            "{} scored sentences but {} tagged sentences",
            token_nlls.len(),
            tags.len()
        )));
    }
    // sum of NLL, sum of exp(NLL), count
    let mut groups: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    let mut tagged_nll = 0.0;
    let mut tagged_tokens = 0;
    for (i, (nlls, tags)) in token_nlls.iter().zip(tags).enumerate() {
        if nlls.len() != tags.len() + 1 {
            return Err(Error::Data(format!(
                "sentence {i}: {} tags for {} content tokens",
                tags.len(),
                nlls.len().saturating_sub(1)
            )));
        }
        for (nll, tag) in nlls.iter().zip(tags.iter()) {
            let g = groups.entry(merge_tag(tag)).or_insert((0.0, 0.0, 0));
            g.0 += nll;
            g.1 += nll.exp();
            g.2 += 1;
            tagged_nll += nll;
            tagged_tokens += 1;
        }
    }
    let mut rows: Vec<TagRow> = groups
        .into_iter()
        .map(|(tag, (sum, sum_exp, count))| {
            let mean_nll = sum / count as f64;
            TagRow {
                tag: tag.to_string(),
                count,
                mean_nll,
                perplexity: match mean {
                    TagMean::Geometric => mean_nll.exp(),
                    TagMean::Arithmetic => sum_exp / count as f64,
                },
            }
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.tag.cmp(&b.tag)));
    Ok(TagReport {
        rows,
        tagged_tokens,
        tagged_nll,
        mean,
    })
}

/// Scores `docs` and groups content-token NLLs by tag.
pub fn perplexity_by_tag<S: SentenceScorer + ?Sized>(
    scorer: &S,
    docs: &[Document],
    annotation: &TagAnnotation,
    n: usize,
    mean: TagMean,
) -> Result<TagReport> {
    annotation.check_alignment(docs)?;
    let nlls = corpus_token_nlls(scorer, docs, n)?;
    let tags: Vec<&[String]> = annotation
        .docs
        .iter()
        .zip(docs)
        .flat_map(|(t, d)| {
            t.iter()
                .zip(&d.sentences)
                .filter(|(_, s)| s.is_target)
                .map(|(t, _)| t.as_slice())
        })
        .collect();
    tag_report(&nlls, &tags, mean)
}

pub const CSV_HEADER: &str = "tag,count,mean_nll,perplexity";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv_row(out: &mut String, tag: &str, count: usize, mean_nll: f64, ppl: f64) {
    let _ = writeln!(out, "{},{count},{mean_nll:.6},{ppl:.6}", csv_field(tag));
}

/// CSV report: optional top-`k` tag rows and a `TAGGED` summary, then the
/// `ALL` corpus line.
pub fn report_csv(eval: &EvalReport, tags: Option<(&TagReport, usize)>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{CSV_HEADER}");
    if let Some((report, k)) = tags {
        for r in report.top(k) {
            csv_row(&mut out, &r.tag, r.count, r.mean_nll, r.perplexity);
        }
        if report.tagged_tokens > 0 {
            let mean = report.tagged_nll / report.tagged_tokens as f64;
            csv_row(&mut out, "TAGGED", report.tagged_tokens, mean, mean.exp());
        }
    }
    csv_row(&mut out, "ALL", eval.tokens, eval.mean_nll(), eval.perplexity());
    out
}
