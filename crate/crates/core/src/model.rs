//! The sentence-level LSTM language model conditioned on a context window,
//! for every variant.
//!
//! The first prediction reads a dedicated begin-of-sentence embedding;
//! each later step reads the embedding of the previous target. Attention
//! variants query the annotations with the previous hidden state.

use rand::Rng;

use crate::context::{annotate_bidirectional, encode_bow, encode_seqbow, Attention};
use crate::corpus::ContextWindow;
use crate::error::{Error, Result};
use crate::fusion::{early_fusion_input, late_fusion_step, FusionParams, LateGate};
use crate::numeric::{DenseMatrix, Gradients, ParamId, ParamStore, Real, Tape, Var};
use crate::rlm::{Lstm, LstmState, OutputLayer};
use crate::variant::{ContextEncoding, Fusion, Variant};

/// Uniform initialization range.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_h: usize,
    pub d_ctx: usize,
    /// Attention scorer width.
    pub d_att: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub variant: Variant,
    pub dims: ModelDims,
}

impl ModelSpec {
    /// Width of the context vector `p`.
    pub fn context_dim(&self) -> usize {
        match self.variant.encoding() {
            ContextEncoding::None => 0,
            ContextEncoding::Bow | ContextEncoding::SeqBow => self.dims.d_ctx,
            ContextEncoding::SeqBowAttention => 2 * self.dims.d_ctx,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ContextHandles {
    None,
    Bow {
        p: ParamId,
    },
    SeqBow {
        p: ParamId,
        fwd: Lstm,
    },
    Attention {
        p: ParamId,
        fwd: Lstm,
        rev: Lstm,
        att: Attention,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Handles {
    embedding: ParamId,
    bos: ParamId,
    lstm: Lstm,
    output: OutputLayer,
    context: ContextHandles,
    fusion: Option<FusionParams>,
}

/// How the context pathway is driven during a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContextMode {
    Encoded,
    /// Replace every context vector with zeros.
    Zeroed,
}

/// Nodes recorded during one sentence forward pass.
#[derive(Debug, Clone, Default)]
pub struct SentenceTrace {
    pub total: Option<Var>,
    /// One per predicted event, EOS last.
    pub token_nll: Vec<Var>,
    pub hidden: Vec<Var>,
    pub cells: Vec<Var>,
    /// Late-fusion gates `r_t`.
    pub late_gates: Vec<Var>,
    /// Attention weights per step.
    pub alphas: Vec<Var>,
    /// Context vector(s): one for fixed encoders, one per step for attention.
    pub context: Vec<Var>,
}

impl SentenceTrace {
    pub fn total(&self) -> Var {
        self.total.expect("trace of a finished forward pass")
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    spec: ModelSpec,
    params: ParamStore<T>,
    handles: Handles,
}

impl<T: Real> Model<T> {
    /// Fresh model with weights uniform in `[-INIT_SCALE, INIT_SCALE]`.
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        Self::with_scale(spec, INIT_SCALE, rng)
    }

    pub fn with_scale<R: Rng + ?Sized>(spec: ModelSpec, scale: f64, rng: &mut R) -> Result<Self> {
        let d = spec.dims;
        if d.vocab_size < 2 || d.d_emb == 0 || d.d_h == 0 {
            return Err(Error::InvalidArgument(format!("invalid model dimensions {d:?}")));
        }
        if spec.variant.uses_context() && (d.d_ctx == 0 || d.d_att == 0) {
            return Err(Error::InvalidArgument(format!(
                "context variants need d_ctx, d_att > 0: {d:?}"
            )));
        }
        let mut s = ParamStore::new();
        let embedding = s.add("embedding", DenseMatrix::uniform(d.vocab_size, d.d_emb, scale, rng));
        let bos = s.add("bos", DenseMatrix::uniform(d.d_emb, 1, scale, rng));
        let lstm = Lstm::init(&mut s, "lstm", d.d_emb, d.d_h, scale, rng);
        let output = OutputLayer {
            w: s.add("out.w", DenseMatrix::uniform(d.vocab_size, d.d_h, scale, rng)),
            b: s.add("out.b", DenseMatrix::uniform(d.vocab_size, 1, scale, rng)),
        };
        let context = match spec.variant.encoding() {
            ContextEncoding::None => ContextHandles::None,
            enc => {
                let p = s.add("ctx.p", DenseMatrix::uniform(d.vocab_size, d.d_ctx, scale, rng));
                match enc {
                    ContextEncoding::Bow => ContextHandles::Bow { p },
                    ContextEncoding::SeqBow => ContextHandles::SeqBow {
                        p,
                        fwd: Lstm::init(&mut s, "ctx.fwd", d.d_ctx, d.d_ctx, scale, rng),
                    },
                    _ => {
                        let fwd = Lstm::init(&mut s, "ctx.fwd", d.d_ctx, d.d_ctx, scale, rng);
                        let rev = Lstm::init(&mut s, "ctx.rev", d.d_ctx, d.d_ctx, scale, rng);
                        let att = Attention {
                            w: s.add("att.w", DenseMatrix::uniform(d.d_att, 2 * d.d_ctx, scale, rng)),
                            u: s.add("att.u", DenseMatrix::uniform(d.d_att, d.d_h, scale, rng)),
                            v: s.add("att.v", DenseMatrix::uniform(1, d.d_att, scale, rng)),
                        };
                        ContextHandles::Attention { p, fwd, rev, att }
                    }
                }
            }
        };
        let fusion = match spec.variant.fusion() {
            Fusion::None => None,
            Fusion::Early => Some(FusionParams {
                w_p: s.add(
                    "fusion.w_p",
                    DenseMatrix::uniform(d.d_emb, spec.context_dim(), scale, rng),
                ),
                late: None,
            }),
            Fusion::Late => Some(FusionParams {
                w_p: s.add(
                    "fusion.w_p",
                    DenseMatrix::uniform(d.d_h, spec.context_dim(), scale, rng),
                ),
                late: Some(LateGate {
                    w_rp: s.add("fusion.w_rp", DenseMatrix::uniform(d.d_h, d.d_h, scale, rng)),
                    w_rc: s.add("fusion.w_rc", DenseMatrix::uniform(d.d_h, d.d_h, scale, rng)),
                    b_r: s.add("fusion.b_r", DenseMatrix::uniform(d.d_h, 1, scale, rng)),
                }),
            }),
        };
        Ok(Self {
            spec,
            params: s,
            handles: Handles {
                embedding,
                bos,
                lstm,
                output,
                context,
                fusion,
            },
        })
    }

    /// Rebuilds a model from named arrays. Every expected parameter must be
    /// present with the expected shape; extra names are rejected.
    pub fn from_params(spec: ModelSpec, store: ParamStore<T>) -> Result<Self> {
        let mut template = Self::with_scale(spec, 0.0, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        if store.len() != template.params.len() {
            return Err(Error::Format(format!(
                "{} parameter arrays for {}, expected {}",
                store.len(),
                spec.variant,
                template.params.len()
            )));
        }
        for id in template.params.ids() {
            let name = template.params.name(id).to_string();
            let value = store
                .by_name(&name)
                .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))?;
            let slot = template.params.get_mut(id);
            if value.shape() != slot.shape() {
                return Err(Error::Shape(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            *slot = value.clone();
        }
        Ok(template)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.id(name)
    }

    pub fn lstm(&self) -> &Lstm {
        &self.handles.lstm
    }

    pub fn output_layer(&self) -> &OutputLayer {
        &self.handles.output
    }

    pub fn fusion_params(&self) -> Option<&FusionParams> {
        self.handles.fusion.as_ref()
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_elements()
    }

    /// Records the whole sentence on `tape`.
    pub fn forward<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        window: ContextWindow<'_>,
        mode: ContextMode,
    ) -> SentenceTrace {
        let h = &self.handles;
        let d = self.spec.dims;
        let mut trace = SentenceTrace::default();

        enum Ctx {
            None,
            /// Projected context, fixed for the sentence.
            Fixed(Var),
            Attention {
                annotations: Vec<Var>,
                keys: Vec<Var>,
                att: Attention,
            },
        }

        let context_dim = self.spec.context_dim();
        let ctx = match (h.context, mode) {
            (ContextHandles::None, _) => Ctx::None,
            (_, ContextMode::Zeroed) => {
                let p = tape.zeros(context_dim);
                trace.context.push(p);
                Ctx::Fixed(self.project(tape, p))
            }
            (ContextHandles::Bow { p }, _) => {
                let v = encode_bow(tape, p, window.context);
                trace.context.push(v);
                Ctx::Fixed(self.project(tape, v))
            }
            (ContextHandles::SeqBow { p, fwd }, _) => {
                let v = encode_seqbow(tape, p, &fwd, window.context);
                trace.context.push(v);
                Ctx::Fixed(self.project(tape, v))
            }
            (ContextHandles::Attention { p, fwd, rev, att }, _) => {
                let annotations = annotate_bidirectional(tape, p, &fwd, &rev, window.context);
                if annotations.is_empty() {
                    let v = tape.zeros(context_dim);
                    trace.context.push(v);
                    Ctx::Fixed(self.project(tape, v))
                } else {
                    let keys = att.keys(tape, &annotations);
                    Ctx::Attention { annotations, keys, att }
                }
            }
        };

        let mut state = LstmState::zeros(tape, d.d_h);
        let mut prev: Option<u32> = None;
        for target in window.target.targets() {
            let embedded = match prev {
                None => tape.param_vector(h.bos),
                Some(w) => tape.param_row(h.embedding, w as usize),
            };
            let projected = match &ctx {
                Ctx::None => None,
                Ctx::Fixed(q) => Some(*q),
                Ctx::Attention { annotations, keys, att } => {
                    let (p, alphas) = att
                        .attend(tape, annotations, keys, state.h)
                        .expect("annotations are non-empty");
                    trace.context.push(p);
                    trace.alphas.push(alphas);
                    Some(self.project(tape, p))
                }
            };
            state = match (h.fusion, projected) {
                (Some(FusionParams { late: Some(gate), .. }), Some(q)) => {
                    let step = late_fusion_step(tape, &h.lstm, &gate, embedded, state, q);
                    trace.late_gates.push(step.gate);
                    step.state
                }
                (Some(_), Some(q)) => {
                    let x = early_fusion_input(tape, embedded, q);
                    h.lstm.step(tape, x, state)
                }
                _ => h.lstm.step(tape, embedded, state),
            };
            trace.hidden.push(state.h);
            trace.cells.push(state.c);
            let logits = h.output.logits(tape, state.h);
            trace.token_nll.push(tape.nll(logits, target as usize));
            prev = Some(target);
        }
        trace.total = Some(tape.sum_all(&trace.token_nll));
        trace
    }

    fn project(&self, tape: &mut Tape<'_, T>, p: Var) -> Var {
        self.handles
            .fusion
            .expect("context variants carry fusion parameters")
            .project(tape, p)
    }

    fn check_ids(&self, window: ContextWindow<'_>) -> Result<()> {
        let v = self.spec.dims.vocab_size as u32;
        let bad = window
            .context
            .iter()
            .chain(std::iter::once(window.target))
            .flat_map(|s| s.tokens())
            .find(|&&t| t >= v);
        match bad {
            Some(t) => Err(Error::InvalidArgument(format!(
                "token id {t} outside a vocabulary of {v}"
            ))),
            None => Ok(()),
        }
    }

    /// `-log P(target | context)` in nats.
    pub fn sentence_nll(&self, window: ContextWindow<'_>) -> Result<T> {
        self.check_ids(window)?;
        let mut tape = Tape::new(&self.params);
        let trace = self.forward(&mut tape, window, ContextMode::Encoded);
        finite(tape.scalar(trace.total()))
    }

    /// Per-event NLLs, content tokens then EOS.
    pub fn token_nlls(&self, window: ContextWindow<'_>) -> Result<Vec<T>> {
        self.check_ids(window)?;
        let mut tape = Tape::new(&self.params);
        let trace = self.forward(&mut tape, window, ContextMode::Encoded);
        trace.token_nll.iter().map(|&v| finite(tape.scalar(v))).collect()
    }

    /// Next-word distributions at every position.
    pub fn token_distributions(&self, window: ContextWindow<'_>, mode: ContextMode) -> Result<Vec<Vec<T>>> {
        self.check_ids(window)?;
        let mut tape = Tape::new(&self.params);
        let trace = self.forward(&mut tape, window, mode);
        Ok(trace
            .token_nll
            .iter()
            .map(|&v| tape.nll_probs(v).expect("nll node").to_vec())
            .collect())
    }

    /// Adds the gradient of the sentence NLL into `grads` and returns the NLL.
    pub fn accumulate_gradients(&self, window: ContextWindow<'_>, grads: &mut Gradients<T>) -> Result<T> {
        self.check_ids(window)?;
        let mut tape = Tape::new(&self.params);
        let trace = self.forward(&mut tape, window, ContextMode::Encoded);
        let nll = finite(tape.scalar(trace.total()))?;
        tape.backward_into(trace.total(), grads);
        Ok(nll)
    }

    pub fn gradients(&self, window: ContextWindow<'_>) -> Result<(T, Gradients<T>)> {
        let mut g = Gradients::zeros_like(&self.params);
        let nll = self.accumulate_gradients(window, &mut g)?;
        Ok((nll, g))
    }

    /// Order-sensitive checksum of every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, m) in self.params.iter() {
            bytes.clear();
            for &x in m.as_slice() {
                x.write_le(&mut bytes);
            }
            for &b in &bytes {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x0100_0000_01b3);
            }
        }
        hash
    }
}

fn finite<T: Real>(x: T) -> Result<T> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite("sentence log-likelihood".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Sentence};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims {
            vocab_size: 10,
            d_emb: 4,
            d_h: 5,
            d_ctx: 3,
            d_att: 3,
        }
    }

    fn model(variant: Variant, seed: u64) -> Model<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Model::with_scale(ModelSpec { variant, dims: dims() }, 0.5, &mut rng).unwrap()
    }

    fn doc() -> Document {
        Document {
            sentences: vec![
                Sentence::new(vec![2, 3, 4]),
                Sentence::new(vec![5, 5, 6, 7]),
                Sentence::new(vec![8, 2]),
            ],
        }
    }

    #[test]
    fn uniform_model_nll() {
        let mut m = model(Variant::Rlm, 0);
        let out = *m.output_layer();
        m.params_mut().get_mut(out.w).fill(0.0);
        m.params_mut().get_mut(out.b).fill(0.0);
        let s = Sentence::new(vec![2, 3, 4]);
        let nll = m.sentence_nll(ContextWindow::without_context(&s)).unwrap();
        assert!((nll - 4.0 * 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn parameter_count_is_sum_of_shapes() {
        let m = model(Variant::SeqBowAttLf, 1);
        let d = dims();
        let lstm = |i: usize, h: usize| 4 * (h * i + h * h + h);
        let expected = d.vocab_size * d.d_emb
            + d.d_emb
            + lstm(d.d_emb, d.d_h)
            + d.vocab_size * d.d_h
            + d.vocab_size
            + d.vocab_size * d.d_ctx
            + 2 * lstm(d.d_ctx, d.d_ctx)
            + d.d_att * 2 * d.d_ctx
            + d.d_att * d.d_h
            + d.d_att
            + d.d_h * 2 * d.d_ctx
            + 2 * d.d_h * d.d_h
            + d.d_h;
        assert_eq!(m.num_parameters(), expected);
    }

    #[test]
    fn distributions_are_normalized() {
        let d = doc();
        for v in Variant::ALL {
            let m = model(v, 2);
            let w = ContextWindow::new(&d.sentences[2], &d.sentences[..2]);
            for p in m.token_distributions(w, ContextMode::Encoded).unwrap() {
                let s: f64 = p.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
            let nll = m.sentence_nll(w).unwrap();
            assert!(nll >= 0.0);
        }
    }

    #[test]
    fn empty_context_equals_baseline() {
        let d = doc();
        let target = &d.sentences[1];
        for v in Variant::ALL {
            let m = model(v, 3);
            // same sentence-model weights as an RLM built from the shared names
            let mut base = model(Variant::Rlm, 99);
            for id in base.params.ids() {
                let name = base.params.name(id).to_string();
                *base.params.get_mut(id) = m.params.by_name(&name).unwrap().clone();
            }
            let a = m.sentence_nll(ContextWindow::without_context(target)).unwrap();
            let b = base.sentence_nll(ContextWindow::without_context(target)).unwrap();
            assert_eq!(a, b, "{v}");
        }
    }

    #[test]
    fn context_changes_the_likelihood() {
        let d = doc();
        for v in Variant::ALL.into_iter().skip(1) {
            let m = model(v, 4);
            let with = m
                .sentence_nll(ContextWindow::new(&d.sentences[2], &d.sentences[..2]))
                .unwrap();
            let without = m.sentence_nll(ContextWindow::without_context(&d.sentences[2])).unwrap();
            assert_ne!(with, without, "{v}");
        }
    }

    #[test]
    fn from_params_round_trip_and_validation() {
        let m = model(Variant::SeqBowAttEf, 5);
        let back = Model::from_params(*m.spec(), m.params().clone()).unwrap();
        assert_eq!(back.checksum(), m.checksum());
        let other = model(Variant::BowEf, 5);
        assert!(Model::from_params(*m.spec(), other.params().clone()).is_err());
    }

    #[test]
    fn out_of_range_ids_are_rejected() {
        let m = model(Variant::Rlm, 6);
        let s = Sentence::new(vec![2, 42]);
        assert!(m.sentence_nll(ContextWindow::without_context(&s)).is_err());
    }
}
