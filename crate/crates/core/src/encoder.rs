//! Trainable question/passage encoder.
//!
//! Question and passage are packed as `[question, SEP, passage]` and encoded
//! jointly. Passage positions become the rows of `H`, question positions the
//! rows of `H_Q`, so every passage row can depend on the question.

use std::collections::{HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Axis, Bindings, ParameterSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const SEP: usize = 2;

/// Uniform initialisation half-width.
pub const INIT_SCALE: f64 = 0.08;

/// Token ↔ id map with `PAD`, `UNK` and `SEP` reserved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }
}

impl Vocabulary {
    const RESERVED: [&'static str; 3] = ["<pad>", "<unk>", "<sep>"];

    /// Reserved ids first, then each distinct token in first-seen order.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in Self::RESERVED {
            vocab.push(t);
        }
        for t in tokens {
            vocab.push(t.as_ref());
        }
        vocab
    }

    fn push(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    /// Rebuilds the lookup table after deserialisation.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Shared embedding and one bidirectional gated recurrent layer; each
    /// direction has `hidden / 2` units.
    BiRecurrent,
    /// Token plus position embeddings and one single-head self-attention
    /// layer with a projected residual.
    SelfAttention,
    /// The self-attention layer followed by the bidirectional recurrent
    /// layer, which reads the attention output.
    AttentiveRecurrent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Width `d` of each row of `H`.
    pub hidden: usize,
    pub embed: usize,
    pub kind: EncoderKind,
    pub vocab_size: usize,
    /// Longest packed sequence (`m + 1 + n`) the encoder accepts.
    pub max_len: usize,
    pub seed: u64,
    /// Adds a learned vector to every token that also occurs in the other
    /// segment (question tokens found in the passage and vice versa).
    #[serde(default)]
    pub match_feature: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            embed: 32,
            kind: EncoderKind::BiRecurrent,
            vocab_size: 64,
            max_len: 512,
            seed: 0,
            match_feature: false,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.embed == 0 || self.vocab_size <= SEP || self.max_len == 0 {
            return Err(Error::Config(format!("encoder sizes must be positive: {self:?}")));
        }
        if self.kind != EncoderKind::SelfAttention && !self.hidden.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "bidirectional encoder needs an even hidden size, got {}",
                self.hidden
            )));
        }
        Ok(())
    }
}

/// `H` (`n×d`) and `H_Q` (`m×d`) for one question/passage pair.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub h: Tensor,
    pub h_q: Tensor,
    /// Passage positions that may be selected; all `true` unless padded.
    pub valid: Vec<bool>,
}

impl EncoderOutput {
    pub fn new(h: Tensor, h_q: Tensor) -> Self {
        let valid = vec![true; h.rows()];
        Self { h, h_q, valid }
    }

    pub fn passage_len(&self) -> usize {
        self.h.rows()
    }
}

/// Tape handles for an [`EncoderOutput`].
#[derive(Clone, Debug)]
pub struct EncodedVars {
    pub h: Var,
    pub h_q: Var,
    pub valid: Vec<bool>,
}

impl EncodedVars {
    /// Records a fixed encoder output as constants.
    pub fn constant(tape: &mut Tape, enc: &EncoderOutput) -> Self {
        Self {
            h: tape.constant(enc.h.clone()),
            h_q: tape.constant(enc.h_q.clone()),
            valid: enc.valid.clone(),
        }
    }

    pub fn passage_len(&self, tape: &Tape) -> usize {
        tape.value(self.h).rows()
    }
}

/// Parameters drawn from `uniform(-0.08, 0.08)` with a generator seeded by
/// `seed`.
pub fn init_encoder(cfg: &EncoderConfig, seed: u64) -> Result<ParameterSet> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParameterSet::new();
    let s = INIT_SCALE;
    p.insert_uniform("enc.embed", &[cfg.vocab_size, cfg.embed], s, &mut rng)?;
    if cfg.match_feature {
        p.insert_uniform("enc.match", &[2, cfg.embed], s, &mut rng)?;
    }
    match cfg.kind {
        EncoderKind::BiRecurrent => {
            let half = cfg.hidden / 2;
            nn::init_gru(&mut p, "enc.fwd", cfg.embed, half, s, &mut rng)?;
            nn::init_gru(&mut p, "enc.bwd", cfg.embed, half, s, &mut rng)?;
        }
        EncoderKind::SelfAttention => init_attention(&mut p, cfg, &mut rng)?,
        EncoderKind::AttentiveRecurrent => {
            init_attention(&mut p, cfg, &mut rng)?;
            let half = cfg.hidden / 2;
            nn::init_gru(&mut p, "enc.fwd", cfg.hidden, half, s, &mut rng)?;
            nn::init_gru(&mut p, "enc.bwd", cfg.hidden, half, s, &mut rng)?;
        }
    }
    Ok(p)
}

fn init_attention(p: &mut ParameterSet, cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<()> {
    p.insert_uniform("enc.pos", &[cfg.max_len, cfg.embed], INIT_SCALE, rng)?;
    p.insert_uniform("enc.seg", &[2, cfg.embed], INIT_SCALE, rng)?;
    for w in ["w_q", "w_k", "w_v", "w_o"] {
        p.insert_uniform(format!("enc.{w}"), &[cfg.embed, cfg.hidden], INIT_SCALE, rng)?;
    }
    Ok(())
}

fn check_ids(ids: &[usize], cfg: &EncoderConfig, what: &str) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::invalid(format!("empty {what}")));
    }
    if let Some(&id) = ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(Error::Vocabulary {
            id,
            size: cfg.vocab_size,
        });
    }
    Ok(())
}

/// Records the encoder on `tape`.
pub fn encode_on(
    tape: &mut Tape,
    b: &Bindings,
    cfg: &EncoderConfig,
    question: &[usize],
    passage: &[usize],
) -> Result<EncodedVars> {
    check_ids(question, cfg, "question")?;
    check_ids(passage, cfg, "passage")?;
    let (m, n) = (question.len(), passage.len());
    let ids: Vec<usize> = question
        .iter()
        .copied()
        .chain(std::iter::once(SEP))
        .chain(passage.iter().copied())
        .collect();
    if ids.len() > cfg.max_len {
        return Err(Error::Resource(format!(
            "packed sequence of {} tokens exceeds the encoder cap of {}",
            ids.len(),
            cfg.max_len
        )));
    }

    let embed = b.get("enc.embed")?;
    let mut xs = tape.gather(embed, &ids, Axis::Row)?;
    if cfg.match_feature {
        let flags = match_flags(question, passage);
        let table = b.get("enc.match")?;
        let m = tape.gather(table, &flags, Axis::Row)?;
        xs = tape.add(xs, m)?;
    }
    let all = match cfg.kind {
        EncoderKind::BiRecurrent => bi_recurrent(tape, b, cfg, xs, ids.len())?,
        EncoderKind::SelfAttention => self_attention(tape, b, cfg, xs, m)?,
        EncoderKind::AttentiveRecurrent => {
            let att = self_attention(tape, b, cfg, xs, m)?;
            bi_recurrent(tape, b, cfg, att, ids.len())?
        }
    };

    let q_rows: Vec<usize> = (0..m).collect();
    let p_rows: Vec<usize> = (m + 1..m + 1 + n).collect();
    Ok(EncodedVars {
        h: tape.gather(all, &p_rows, Axis::Row)?,
        h_q: tape.gather(all, &q_rows, Axis::Row)?,
        valid: vec![true; n],
    })
}

/// Per packed position: 1 if the token occurs in the other segment.
fn match_flags(question: &[usize], passage: &[usize]) -> Vec<usize> {
    let q: HashSet<usize> = question.iter().copied().collect();
    let p: HashSet<usize> = passage.iter().copied().collect();
    question
        .iter()
        .map(|t| usize::from(p.contains(t)))
        .chain(std::iter::once(0))
        .chain(passage.iter().map(|t| usize::from(q.contains(t))))
        .collect()
}

fn bi_recurrent(
    tape: &mut Tape,
    b: &Bindings,
    cfg: &EncoderConfig,
    xs: Var,
    len: usize,
) -> Result<Var> {
    let half = cfg.hidden / 2;
    let run = |tape: &mut Tape, prefix: &str, order: &mut dyn Iterator<Item = usize>| {
        let inputs = nn::GruInputs::project(tape, b, prefix, xs)?;
        let mut h = tape.constant(Tensor::zeros(&[half]));
        let mut states = vec![h; len];
        for t in order {
            h = nn::gru_step_projected(tape, b, prefix, &inputs, t, h)?;
            states[t] = h;
        }
        Ok::<_, Error>(states)
    };
    let fwd = run(tape, "enc.fwd", &mut (0..len))?;
    let bwd = run(tape, "enc.bwd", &mut (0..len).rev())?;
    let rows = fwd
        .into_iter()
        .zip(bwd)
        .map(|(f, r)| tape.concat_rows(f, r))
        .collect::<Result<Vec<_>>>()?;
    tape.stack_rows(&rows)
}

/// `m` is the question length; the question and `SEP` form segment 0.
fn self_attention(tape: &mut Tape, b: &Bindings, cfg: &EncoderConfig, xs: Var, m: usize) -> Result<Var> {
    let len = tape.value(xs).rows();
    let positions: Vec<usize> = (0..len).collect();
    let pos = tape.gather(b.get("enc.pos")?, &positions, Axis::Row)?;
    let segments: Vec<usize> = (0..len).map(|t| usize::from(t > m)).collect();
    let seg = tape.gather(b.get("enc.seg")?, &segments, Axis::Row)?;
    let x = tape.add(xs, pos)?;
    let x = tape.add(x, seg)?;

    let mut proj = |name: &str| -> Result<Var> {
        let w = b.get(name)?;
        tape.matmul(x, w)
    };
    let q = proj("enc.w_q")?;
    let k = proj("enc.w_k")?;
    let v = proj("enc.w_v")?;
    let resid = proj("enc.w_o")?;

    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.affine(scores, 1.0 / (cfg.hidden as f64).sqrt(), 0.0);
    let attn = tape.softmax_rows(scores)?;
    let mixed = tape.matmul(attn, v)?;
    let out = tape.add(mixed, resid)?;
    Ok(tape.tanh(out))
}

/// Value-level [`encode_on`].
pub fn encode(
    question: &[usize],
    passage: &[usize],
    params: &ParameterSet,
    cfg: &EncoderConfig,
) -> Result<EncoderOutput> {
    let mut tape = Tape::new();
    let b = tape.bind(params);
    let vars = encode_on(&mut tape, &b, cfg, question, passage)?;
    Ok(EncoderOutput {
        h: tape.value(vars.h).clone().with_grad(false),
        h_q: tape.value(vars.h_q).clone().with_grad(false),
        valid: vars.valid,
    })
}
