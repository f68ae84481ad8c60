//! Two-party simulation of one attention layer split across Alice's and
//! Bob's halves of the context, reducing set disjointness to the most
//! frequent element task. Every transmitted number goes through a `p`-bit
//! fixed-point register and the transcript counts every bit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::constructions::build_max_mlp;
use crate::embedding::EmbeddingSet;
use crate::math::{self, axpy, dot};
use crate::model::{mlp_forward, AttentionHead};
use crate::tensor::Matrix;
use crate::{Error, Result};

/// Decoded count at or above which Bob answers "intersecting".
pub const COUNT_THRESHOLD: f64 = 1.5;

/// A signed fixed-point register: `p` bits in two's complement over
/// `[−range, range)`, step `range / 2^(p−1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantizer {
    pub bits: u32,
    pub range: f64,
}

/// A quantized value and whether it had to be clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantized {
    pub value: f64,
    pub code: i64,
    pub saturated: bool,
}

impl Quantizer {
    pub fn new(bits: u32, range: f64) -> Result<Self> {
        if !(2..=64).contains(&bits) {
            return Err(Error::InvalidArgument(format!("p must lie in 2..=64, got {}", bits)));
        }
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::InvalidArgument(format!("range must be positive, got {}", range)));
        }
        Ok(Quantizer { bits, range })
    }

    pub fn step(&self) -> f64 {
        self.range / math::powi(2.0, self.bits as i32 - 1)
    }

    pub fn quantize(&self, x: f64) -> Result<Quantized> {
        if !x.is_finite() {
            return Err(Error::NonFinite("quantizer input"));
        }
        let half = math::powi(2.0, self.bits as i32 - 1);
        let (lo, hi) = (-half, half - 1.0);
        let raw = math::round(x / self.step());
        let code = raw.clamp(lo, hi);
        Ok(Quantized {
            value: code * self.step(),
            code: code as i64,
            saturated: raw != code,
        })
    }
}

/// Rounds `x` to the `p`-bit grid over `[−range, range)`.
pub fn quantize(x: f64, bits: u32, range: f64) -> Result<Quantized> {
    Quantizer::new(bits, range)?.quantize(x)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisjointnessInstance {
    pub a: Vec<u8>,
    pub b: Vec<u8>,
}

impl DisjointnessInstance {
    pub fn new(a: Vec<u8>, b: Vec<u8>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::DimensionMismatch {
                context: "disjointness inputs",
                expected: a.len(),
                actual: b.len(),
            });
        }
        if a.is_empty() {
            return Err(Error::Empty("disjointness inputs"));
        }
        if a.iter().chain(&b).any(|&v| v > 1) {
            return Err(Error::InvalidArgument("inputs must be bits".into()));
        }
        Ok(DisjointnessInstance { a, b })
    }

    pub fn n_bits(&self) -> usize {
        self.a.len()
    }

    /// All `4^n_bits` instances, `a` varying slowest.
    pub fn all(n_bits: usize) -> Vec<DisjointnessInstance> {
        let bits = |x: usize| (0..n_bits).map(|i| ((x >> i) & 1) as u8).collect::<Vec<u8>>();
        let mut out = Vec::with_capacity(1 << (2 * n_bits));
        for x in 0..1usize << n_bits {
            for y in 0..1usize << n_bits {
                out.push(DisjointnessInstance {
                    a: bits(x),
                    b: bits(y),
                });
            }
        }
        out
    }

    pub fn random<R: Rng>(n_bits: usize, rng: &mut R) -> DisjointnessInstance {
        let mut draw = || (0..n_bits).map(|_| rng.random::<bool>() as u8).collect();
        DisjointnessInstance {
            a: draw(),
            b: draw(),
        }
    }

    /// The first `n_bits` coordinates of both inputs.
    pub fn truncated(&self, n_bits: usize) -> DisjointnessInstance {
        DisjointnessInstance {
            a: self.a[..n_bits].to_vec(),
            b: self.b[..n_bits].to_vec(),
        }
    }
}

/// `max_i a_i b_i`.
pub fn disjointness_oracle(inst: &DisjointnessInstance) -> u8 {
    inst.a.iter().zip(&inst.b).map(|(x, y)| x & y).max().unwrap_or(0)
}

/// Vocabulary the encoding needs for `n_bits`.
pub fn required_vocab(n_bits: usize) -> usize {
    3 * n_bits + 1
}

/// Number of input bits usable with `vocab` tokens: all of them when the
/// vocabulary is large enough, `vocab / 6` otherwise (the second value is
/// true when shrinking happened).
pub fn usable_bits(n_bits: usize, vocab: usize) -> (usize, bool) {
    if vocab >= required_vocab(n_bits) {
        (n_bits, false)
    } else {
        (vocab / 6, true)
    }
}

/// Token ids (1-based): `s_j = j`, `y_j = n + j`, `z_j = 2n + j`, query `3n + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedInputs {
    pub alice: Vec<usize>,
    pub bob: Vec<usize>,
    pub query: usize,
}

impl EncodedInputs {
    /// Alice's half, Bob's half, then the query.
    pub fn context(&self) -> Vec<usize> {
        let mut out = self.alice.clone();
        out.extend(&self.bob);
        out.push(self.query);
        out
    }
}

pub fn encode_inputs(inst: &DisjointnessInstance, vocab: usize) -> Result<EncodedInputs> {
    let n = inst.n_bits();
    if vocab < required_vocab(n) {
        return Err(Error::InvalidArgument(format!(
            "{} input bits need {} tokens, vocabulary has {}",
            n,
            required_vocab(n),
            vocab
        )));
    }
    let alice = (1..=n)
        .map(|j| if inst.a[j - 1] == 1 { j } else { n + j })
        .collect();
    let bob = (1..=n)
        .map(|j| if inst.b[j - 1] == 1 { j } else { 2 * n + j })
        .collect();
    Ok(EncodedInputs {
        alice,
        bob,
        query: 3 * n + 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Party {
    Alice,
    Bob,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender: Party,
    pub bits: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolTranscript {
    pub messages: Vec<Message>,
    pub total_bits: usize,
    pub output: u8,
    /// Bob's count estimate before thresholding.
    pub decoded_count: f64,
    /// False when some register saturated.
    pub valid: bool,
}

/// One head per entry, each with `query`, `key` of shape `k × d` and
/// `value` of shape `d_v × d`, applied to the raw token embeddings.
fn check_heads(heads: &[AttentionHead], d: usize) -> Result<()> {
    if heads.is_empty() {
        return Err(Error::Empty("attention heads"));
    }
    for h in heads {
        for (mat, ctx) in [(&h.query, "query"), (&h.key, "key"), (&h.value, "value")] {
            if mat.cols != d {
                return Err(Error::DimensionMismatch {
                    context: ctx,
                    expected: d,
                    actual: mat.cols,
                });
            }
        }
        if h.query.rows != h.key.rows {
            return Err(Error::DimensionMismatch {
                context: "key rows",
                expected: h.query.rows,
                actual: h.key.rows,
            });
        }
    }
    Ok(())
}

/// Runs the five-step protocol with `p`-bit registers.
///
/// Alice sends her partial softmax denominators, Bob returns the completed
/// ones, Alice sends her share of each head's output, and Bob completes the
/// heads, reads the count as `2n · max t` through a max network, and
/// announces one bit.
pub fn run_protocol(
    inst: &DisjointnessInstance,
    heads: &[AttentionHead],
    emb: &EmbeddingSet,
    bits: u32,
) -> Result<ProtocolTranscript> {
    let d = emb.dim;
    check_heads(heads, d)?;
    let enc = encode_inputs(inst, emb.len())?;
    let len = enc.alice.len() + enc.bob.len();
    let x0 = emb.of_token(enc.query);

    // logit(i) = x_iᵀ Kᵀ Q x_0, so only K x_i · Q x_0 is needed.
    let queries: Vec<Vec<f64>> = heads.iter().map(|h| h.query.matvec(x0)).collect();
    let logit = |j: usize, tok: usize| dot(&heads[j].key.matvec(emb.of_token(tok)), &queries[j]);
    let mut t_max = 0.0f64;
    for j in 0..heads.len() {
        for tok in 1..=emb.len() {
            t_max = t_max.max(math::abs(logit(j, tok)));
        }
    }
    let denom_q = Quantizer::new(bits, 2.0 * len as f64 * math::exp(t_max))?;
    let value_q = Quantizer::new(bits, len as f64)?;
    let p = bits as usize;

    let mut valid = true;
    let send = |q: &Quantizer, xs: &[f64], valid: &mut bool| -> Result<Vec<f64>> {
        xs.iter()
            .map(|&x| {
                let r = q.quantize(x)?;
                *valid &= !r.saturated;
                Ok(r.value)
            })
            .collect()
    };
    let partial = |toks: &[usize], j: usize| -> f64 {
        toks.iter().map(|&t| math::exp(logit(j, t))).sum()
    };
    let weighted = |toks: &[usize], j: usize, s: f64| -> Vec<f64> {
        let mut acc = vec![0.0; heads[j].value.rows];
        for &t in toks {
            axpy(math::exp(logit(j, t)) / s, &heads[j].value.matvec(emb.of_token(t)), &mut acc);
        }
        acc
    };

    let mut messages = Vec::with_capacity(4);
    let s_a: Vec<f64> = (0..heads.len()).map(|j| partial(&enc.alice, j)).collect();
    let s_a = send(&denom_q, &s_a, &mut valid)?;
    messages.push(Message {
        sender: Party::Alice,
        bits: p * heads.len(),
        values: s_a.clone(),
    });

    let s: Vec<f64> = (0..heads.len()).map(|j| s_a[j] + partial(&enc.bob, j)).collect();
    let s = send(&denom_q, &s, &mut valid)?;
    messages.push(Message {
        sender: Party::Bob,
        bits: p * heads.len(),
        values: s.clone(),
    });

    let mut t_a = Vec::new();
    for j in 0..heads.len() {
        if !(s[j] > 0.0) {
            valid = false;
        }
        t_a.extend(weighted(&enc.alice, j, s[j]));
    }
    let t_a = send(&value_q, &t_a, &mut valid)?;
    messages.push(Message {
        sender: Party::Alice,
        bits: p * t_a.len(),
        values: t_a.clone(),
    });

    let mut t = t_a;
    let mut offset = 0;
    for j in 0..heads.len() {
        let rows = heads[j].value.rows;
        let own = weighted(&enc.bob, j, s[j]);
        axpy(1.0, &own, &mut t[offset..offset + rows]);
        offset += rows;
    }
    let max_net = build_max_mlp(t.len())?;
    let peak = mlp_forward(&max_net, &t)?[0];
    let decoded_count = len as f64 * peak;
    let valid = valid && decoded_count.is_finite();
    let output = (decoded_count >= COUNT_THRESHOLD) as u8;
    messages.push(Message {
        sender: Party::Bob,
        bits: 1,
        values: vec![output as f64],
    });
    let total_bits = messages.iter().map(|m| m.bits).sum();
    Ok(ProtocolTranscript {
        messages,
        total_bits,
        output,
        decoded_count,
        valid,
    })
}

/// One-hot embeddings over the `3n + 1` tokens with a single uniform head
/// (`Q = 0`, `K = V = I`): the histogram most-frequent-element head.
pub fn histogram_protocol_setup(n_bits: usize) -> Result<(Vec<AttentionHead>, EmbeddingSet)> {
    if n_bits == 0 {
        return Err(Error::InvalidArgument("need at least one input bit".into()));
    }
    let m = required_vocab(n_bits);
    let emb = EmbeddingSet::one_hot(m, m)?;
    let head = AttentionHead {
        query: Matrix::zeros(m, m),
        key: Matrix::identity(m),
        value: Matrix::identity(m),
    };
    Ok((vec![head], emb))
}

/// Agreement of the protocol with the oracle over a batch of instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolSummary {
    pub n_bits: usize,
    pub bits: u32,
    pub d: usize,
    pub h: usize,
    pub total_bits: usize,
    pub instances: usize,
    pub agreement_rate: f64,
    pub invalid: usize,
}

pub fn summarize(
    instances: &[DisjointnessInstance],
    heads: &[AttentionHead],
    emb: &EmbeddingSet,
    bits: u32,
) -> Result<ProtocolSummary> {
    let n_bits = instances.first().ok_or(Error::Empty("instances"))?.n_bits();
    let (mut agree, mut invalid, mut total_bits) = (0usize, 0usize, 0usize);
    for inst in instances {
        let tr = run_protocol(inst, heads, emb, bits)?;
        total_bits = tr.total_bits;
        if !tr.valid {
            invalid += 1;
        }
        if tr.output == disjointness_oracle(inst) {
            agree += 1;
        }
    }
    Ok(ProtocolSummary {
        n_bits,
        bits,
        d: emb.dim,
        h: heads.len(),
        total_bits,
        instances: instances.len(),
        agreement_rate: agree as f64 / instances.len() as f64,
        invalid,
    })
}

/// Exhaustive agreement of the histogram head for each precision in `bits`.
pub fn precision_sweep(n_bits: usize, bits: &[u32]) -> Result<Vec<ProtocolSummary>> {
    let (heads, emb) = histogram_protocol_setup(n_bits)?;
    let all = DisjointnessInstance::all(n_bits);
    bits.iter().map(|&p| summarize(&all, &heads, &emb, p)).collect()
}
