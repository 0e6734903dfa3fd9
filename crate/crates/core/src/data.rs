//! Modular binary-operation datasets: enumeration, splitting, and encoding.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    /// `(a + b) mod q`
    ModAdd,
    /// Composition in the symmetric group on 5 symbols.
    S5Compose,
}

impl OpKind {
    pub fn is_commutative(self) -> bool {
        matches!(self, OpKind::ModAdd)
    }
}

pub const S5_ORDER: usize = 120;

/// One equation `a ∘ b = result` and its five-token encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EquationSample {
    pub a: usize,
    pub b: usize,
    pub result: usize,
    pub tokens: [usize; 5],
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub op_kind: OpKind,
    pub p: usize,
    pub q: usize,
    pub symmetric: bool,
    pub samples: Vec<EquationSample>,
    pub vocab_size: usize,
}

/// Token id layout: classes first, then operands (when they do not share the
/// class ids), then the operator and equals tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vocab {
    pub p: usize,
    pub q: usize,
}

impl Vocab {
    pub fn shares_operands(&self) -> bool {
        self.p == self.q
    }

    pub fn class(&self, c: usize) -> usize {
        c
    }

    pub fn operand(&self, a: usize) -> usize {
        if self.shares_operands() {
            a
        } else {
            self.q + a
        }
    }

    pub fn op_token(&self) -> usize {
        if self.shares_operands() {
            self.q
        } else {
            self.q + self.p
        }
    }

    pub fn eq_token(&self) -> usize {
        self.op_token() + 1
    }

    pub fn size(&self) -> usize {
        self.eq_token() + 1
    }
}

impl Dataset {
    pub fn vocab(&self) -> Vocab {
        Vocab {
            p: self.p,
            q: self.q,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// All 120 permutations of 5 symbols in lexicographic order.
pub fn s5_elements() -> Vec<[u8; 5]> {
    let mut out = Vec::with_capacity(S5_ORDER);
    let mut perm = [0u8, 1, 2, 3, 4];
    loop {
        out.push(perm);
        // next lexicographic permutation
        let Some(i) = (0..4).rev().find(|&i| perm[i] < perm[i + 1]) else {
            break;
        };
        let j = (i + 1..5).rev().find(|&j| perm[j] > perm[i]).unwrap();
        perm.swap(i, j);
        perm[i + 1..].reverse();
    }
    out
}

/// Lexicographic rank of a permutation of `0..5`.
pub fn s5_rank(perm: &[u8; 5]) -> usize {
    let mut rank = 0;
    for i in 0..5 {
        let smaller = perm[i + 1..].iter().filter(|&&x| x < perm[i]).count();
        rank = rank * (5 - i) + smaller;
    }
    rank
}

/// `(a ∘ b)(i) = a(b(i))`: apply `b` first.
pub fn s5_compose(a: &[u8; 5], b: &[u8; 5]) -> [u8; 5] {
    let mut out = [0u8; 5];
    for i in 0..5 {
        out[i] = a[b[i] as usize];
    }
    out
}

/// Enumerates the full operation table row-major over `(a, b)`.
pub fn build_dataset(op_kind: OpKind, p: usize, q: usize, symmetric: bool) -> Result<Dataset> {
    if p < 2 {
        return Err(Error::config("task.p", format!("must be >= 2, got {p}")));
    }
    if q < 2 {
        return Err(Error::config("task.q", format!("must be >= 2, got {q}")));
    }
    if symmetric && !op_kind.is_commutative() {
        return Err(Error::config(
            "task.symmetric",
            "symmetric tables require a commutative operation",
        ));
    }
    if op_kind == OpKind::S5Compose && (p != S5_ORDER || q != S5_ORDER) {
        return Err(Error::config(
            "task.p",
            format!("s5_compose requires p = q = {S5_ORDER}"),
        ));
    }
    let vocab = Vocab { p, q };
    let elements = (op_kind == OpKind::S5Compose).then(s5_elements);
    let mut samples = Vec::with_capacity(p * p);
    for a in 0..p {
        let b_start = if symmetric { a } else { 0 };
        for b in b_start..p {
            let result = match &elements {
                None => (a + b) % q,
                Some(el) => s5_rank(&s5_compose(&el[a], &el[b])),
            };
            samples.push(EquationSample {
                a,
                b,
                result,
                tokens: [
                    vocab.operand(a),
                    vocab.op_token(),
                    vocab.operand(b),
                    vocab.eq_token(),
                    vocab.class(result),
                ],
            });
        }
    }
    Ok(Dataset {
        op_kind,
        p,
        q,
        symmetric,
        samples,
        vocab_size: vocab.size(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub r: f64,
    pub seed: u64,
}

/// Uniform shuffle, then the first `floor(r·n)` indices train.
pub fn split(dataset: &Dataset, r: f64, seed: u64) -> Result<Split> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::config("task.r", format!("must lie in (0, 1), got {r}")));
    }
    let n = dataset.len();
    let n_train = (r * n as f64).floor() as usize;
    if n_train < 1 || n - n_train < 1 {
        return Err(Error::config(
            "task.r",
            format!("degenerate split: {n_train} train of {n} samples"),
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let val = idx.split_off(n_train);
    Ok(Split {
        train: idx,
        val,
        r,
        seed,
    })
}

/// Inputs `s₁…s₄` and answer classes `s₅` for a list of sample indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TokenBatch {
    /// Row-major `n × 4`.
    pub tokens: Vec<usize>,
    pub labels: Vec<usize>,
}

impl TokenBatch {
    pub const CONTEXT: usize = 4;

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[usize] {
        &self.tokens[i * Self::CONTEXT..(i + 1) * Self::CONTEXT]
    }

    /// Column `pos` of the token matrix.
    pub fn column(&self, pos: usize) -> Vec<usize> {
        self.tokens
            .chunks(Self::CONTEXT)
            .map(|r| r[pos])
            .collect()
    }

    /// The batch with every sample repeated `times` times in sequence.
    pub fn repeated(&self, times: usize) -> TokenBatch {
        TokenBatch {
            tokens: self.tokens.repeat(times),
            labels: self.labels.repeat(times),
        }
    }
}

pub fn batch_encode(indices: &[usize], dataset: &Dataset) -> Result<TokenBatch> {
    let mut batch = TokenBatch {
        tokens: Vec::with_capacity(indices.len() * 4),
        labels: Vec::with_capacity(indices.len()),
    };
    for &i in indices {
        let s = dataset.samples.get(i).ok_or_else(|| {
            Error::Shape(format!("sample index {i} out of range ({})", dataset.len()))
        })?;
        batch.tokens.extend_from_slice(&s.tokens[..4]);
        batch.labels.push(s.tokens[4]);
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn table_sizes() {
        assert_eq!(build_dataset(OpKind::ModAdd, 97, 97, false).unwrap().len(), 9409);
        assert_eq!(build_dataset(OpKind::ModAdd, 97, 97, true).unwrap().len(), 4753);
        assert_eq!(
            build_dataset(OpKind::S5Compose, 120, 120, false).unwrap().len(),
            14400
        );
    }

    #[test]
    fn small_addition_sample() {
        let ds = build_dataset(OpKind::ModAdd, 7, 7, false).unwrap();
        let s = ds.samples[3 * 7 + 5];
        assert_eq!((s.a, s.b, s.result), (3, 5, 1));
        assert_eq!(s.tokens, [3, 7, 5, 8, 1]);
        assert_eq!(ds.vocab_size, 9);
    }

    #[test]
    fn addition_exhaustive_and_unique() {
        for p in [2usize, 5, 31, 97] {
            let ds = build_dataset(OpKind::ModAdd, p, p, false).unwrap();
            let mut seen = HashSet::new();
            for s in &ds.samples {
                assert_eq!(s.result, (s.a + s.b) % p);
                assert_eq!(s.tokens[4], s.result);
                assert!(seen.insert((s.a, s.b)));
            }
        }
        let ds = build_dataset(OpKind::ModAdd, 11, 11, true).unwrap();
        let pairs: HashSet<_> = ds.samples.iter().map(|s| (s.a.min(s.b), s.a.max(s.b))).collect();
        assert_eq!(pairs.len(), ds.len());
    }

    #[test]
    fn distinct_moduli_use_separate_operand_block() {
        let ds = build_dataset(OpKind::ModAdd, 5, 3, false).unwrap();
        let v = ds.vocab();
        assert_eq!(v.operand(0), 3);
        assert_eq!(v.op_token(), 8);
        assert_eq!(ds.vocab_size, 10);
        assert!(ds.samples.iter().all(|s| s.result < 3));
    }

    #[test]
    fn s5_group_axioms() {
        let el = s5_elements();
        assert_eq!(el.len(), 120);
        for (i, e) in el.iter().enumerate() {
            assert_eq!(s5_rank(e), i);
        }
        let id = el[0];
        assert_eq!(id, [0, 1, 2, 3, 4]);
        let ds = build_dataset(OpKind::S5Compose, 120, 120, false).unwrap();
        let table = |a: usize, b: usize| ds.samples[a * 120 + b].result;
        for a in 0..120 {
            assert_eq!(table(a, 0), a);
            assert_eq!(table(0, a), a);
        }
        for a in (0..120).step_by(7) {
            for b in (0..120).step_by(11) {
                for c in (0..120).step_by(13) {
                    assert_eq!(table(table(a, b), c), table(a, table(b, c)));
                }
            }
        }
        // not commutative
        assert!((0..120).any(|a| (0..120).any(|b| table(a, b) != table(b, a))));
    }

    #[test]
    fn invalid_inputs() {
        assert!(build_dataset(OpKind::ModAdd, 1, 7, false).is_err());
        assert!(build_dataset(OpKind::ModAdd, 7, 1, false).is_err());
        assert!(build_dataset(OpKind::S5Compose, 120, 120, true).is_err());
        assert!(build_dataset(OpKind::S5Compose, 97, 97, false).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = build_dataset(OpKind::ModAdd, 97, 97, false).unwrap();
        let s = split(&ds, 0.5, 0).unwrap();
        assert_eq!(s.train.len(), 4704);
        assert_eq!(split(&ds, 0.3, 1).unwrap().train.len(), 2822);
        assert_eq!(split(&ds, 0.5, 0).unwrap(), s);
        assert_ne!(split(&ds, 0.5, 1).unwrap().train, s.train);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
    }

    #[test]
    fn split_errors() {
        let ds = build_dataset(OpKind::ModAdd, 7, 7, false).unwrap();
        assert!(split(&ds, 0.0, 0).is_err());
        assert!(split(&ds, 1.0, 0).is_err());
        assert!(split(&ds, 1.5, 0).is_err());
        assert!(split(&ds, 0.01, 0).is_err());
    }

    #[test]
    fn encoding_shapes() {
        let ds = build_dataset(OpKind::ModAdd, 7, 7, false).unwrap();
        assert!(batch_encode(&[], &ds).unwrap().is_empty());
        let one = batch_encode(&[10], &ds).unwrap();
        assert_eq!((one.tokens.len(), one.labels.len()), (4, 1));
        let s = split(&ds, 0.5, 3).unwrap();
        let b = batch_encode(&s.train, &ds).unwrap();
        assert_eq!(b.len(), 24);
        assert_eq!(b.tokens.len(), 24 * 4);
        assert!(batch_encode(&[49], &ds).is_err());
    }
}
