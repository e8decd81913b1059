//! Multi-head scaled dot-product attention built from tape primitives.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Per-head projections bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct HeadWeights {
    pub query: Var,
    pub key: Var,
    pub value: Var,
}

#[derive(Debug, Clone)]
pub struct AttentionWeights {
    pub heads: Vec<HeadWeights>,
    /// Projects the concatenated head outputs back to the query width.
    pub output: Var,
}

/// Parameter ids for one attention block inside a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AttentionParams {
    pub heads: Vec<[ParamId; 3]>,
    pub output: ParamId,
}

impl AttentionParams {
    /// Registers `W_Q: [d_query×d_head]`, `W_K, W_V: [d_source×d_head]` per head and
    /// `W_O: [d_query×d_query]`, with `d_head = d_query / heads`.
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        d_query: usize,
        d_source: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || !d_query.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "head count {heads} must divide width {d_query}"
            )));
        }
        let d_head = d_query / heads;
        let mut ids = Vec::with_capacity(heads);
        for h in 0..heads {
            let q = store.insert(format!("{prefix}.h{h}.wq"), glorot(d_query, d_head, rng));
            let k = store.insert(format!("{prefix}.h{h}.wk"), glorot(d_source, d_head, rng));
            let v = store.insert(format!("{prefix}.h{h}.wv"), glorot(d_source, d_head, rng));
            ids.push([q, k, v]);
        }
        let output = store.insert(format!("{prefix}.wo"), glorot(d_query, d_query, rng));
        Ok(Self { heads: ids, output })
    }

    /// Looks the block up by name in a loaded store.
    pub fn find(store: &ParamStore, prefix: &str, heads: usize) -> Result<Self> {
        let get = |name: String| {
            store
                .id(&name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let mut ids = Vec::with_capacity(heads);
        for h in 0..heads {
            ids.push([
                get(format!("{prefix}.h{h}.wq"))?,
                get(format!("{prefix}.h{h}.wk"))?,
                get(format!("{prefix}.h{h}.wv"))?,
            ]);
        }
        Ok(Self {
            heads: ids,
            output: get(format!("{prefix}.wo"))?,
        })
    }

    pub fn bind<'p>(&self, tape: &mut Tape<'p>, store: &'p ParamStore) -> AttentionWeights {
        let heads = self
            .heads
            .iter()
            .map(|[q, k, v]| HeadWeights {
                query: tape.param(store, *q),
                key: tape.param(store, *k),
                value: tape.param(store, *v),
            })
            .collect();
        AttentionWeights {
            heads,
            output: tape.param(store, self.output),
        }
    }
}

/// `concat_h softmax(Q W_Q^h (K W_K^h)ᵀ / sqrt(d_head)) V W_V^h` projected by `W_O`.
///
/// `q_in: [L×d]`, `k_in, v_in: [S×d_source]`; the result is `[L×d]`.
pub fn multi_head_attention(
    tape: &mut Tape<'_>,
    q_in: Var,
    k_in: Var,
    v_in: Var,
    weights: &AttentionWeights,
) -> Result<Var> {
    let (s_len, _) = tape.value(k_in).dims2()?;
    if s_len == 0 || tape.value(v_in).dims2()?.0 == 0 {
        return Err(Error::EmptySource);
    }
    if tape.shape(k_in)[0] != tape.shape(v_in)[0] {
        return Err(Error::shape("attention key/value", tape.shape(k_in), tape.shape(v_in)));
    }
    let mut outs = Vec::with_capacity(weights.heads.len());
    for head in &weights.heads {
        let q = tape.matmul(q_in, head.query)?;
        let k = tape.matmul(k_in, head.key)?;
        let v = tape.matmul(v_in, head.value)?;
        let d_head = tape.shape(q)[1];
        let scores = tape.matmul_t(q, k)?;
        let scaled = tape.scale(scores, 1.0 / (d_head as f64).sqrt());
        let attn = tape.softmax(scaled, 1)?;
        outs.push(tape.matmul(attn, v)?);
    }
    let joined = if outs.len() == 1 {
        outs[0]
    } else {
        tape.concat_cols(&outs)?
    };
    tape.matmul(joined, weights.output)
}

/// Normal initialisation with variance `2 / (fan_in + fan_out)`.
pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
    normal(&[fan_in, fan_out], std, rng)
}

pub fn normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite std");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| dist.sample(rng)).collect()).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity(n: usize) -> Tensor {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data_mut()[i * n + i] = 1.0;
        }
        t
    }

    #[test]
    fn single_key_returns_projected_value_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let p = AttentionParams::init(&mut store, "a", 4, 3, 2, &mut rng).unwrap();
        let q_in = normal(&[5, 4], 1.0, &mut rng);
        let kv = normal(&[1, 3], 1.0, &mut rng);
        let mut tape = Tape::new();
        let w = p.bind(&mut tape, &store);
        let q = tape.constant(q_in);
        let k = tape.constant(kv.clone());
        let out = multi_head_attention(&mut tape, q, k, k, &w).unwrap();

        // Expected: every query row sees concat_h(kv W_V^h) W_O.
        let mut t2 = Tape::new();
        let kvv = t2.constant(kv);
        let mut parts = Vec::new();
        for [_, _, v] in &p.heads {
            let wv = t2.param(&store, *v);
            parts.push(t2.matmul(kvv, wv).unwrap());
        }
        let cat = t2.concat_cols(&parts).unwrap();
        let wo = t2.param(&store, p.output);
        let row = t2.matmul(cat, wo).unwrap();
        for i in 0..5 {
            for (a, b) in tape.value(out).row(i).iter().zip(t2.value(row).row(0)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_projections_give_zero_output() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = AttentionParams::init(&mut store, "z", 4, 4, 2, &mut rng).unwrap();
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let shape = store.value(id).shape().to_vec();
            *store.value_mut(id) = Tensor::zeros(&shape);
        }
        let mut tape = Tape::new();
        let w = p.bind(&mut tape, &store);
        let q = tape.constant(normal(&[3, 4], 1.0, &mut rng));
        let k = tape.constant(normal(&[2, 4], 1.0, &mut rng));
        let out = multi_head_attention(&mut tape, q, k, k, &w).unwrap();
        assert!(tape.value(out).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn hand_computed_single_head() {
        // L=1, S=2, d=2, one head, identity projections.
        let mut store = ParamStore::new();
        let wq = store.insert("wq", identity(2));
        let wk = store.insert("wk", identity(2));
        let wv = store.insert("wv", identity(2));
        let wo = store.insert("wo", identity(2));
        let p = AttentionParams {
            heads: vec![[wq, wk, wv]],
            output: wo,
        };
        let mut tape = Tape::new();
        let w = p.bind(&mut tape, &store);
        let q = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let k = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let v = tape.constant(Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap());
        let out = multi_head_attention(&mut tape, q, k, v, &w).unwrap();
        // scores = [1, 0] / sqrt(2); weights = softmax
        let s0 = 1.0 / 2f64.sqrt();
        let a0 = s0.exp() / (s0.exp() + 1.0);
        let a1 = 1.0 - a0;
        let expected = [2.0 * a0, 4.0 * a1];
        for (g, e) in tape.value(out).data().iter().zip(expected) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn empty_source_is_an_error() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = AttentionParams::init(&mut store, "e", 2, 2, 1, &mut rng).unwrap();
        let mut tape = Tape::new();
        let w = p.bind(&mut tape, &store);
        let q = tape.constant(Tensor::zeros(&[1, 2]));
        let k = tape.constant(Tensor::zeros(&[0, 2]));
        assert!(matches!(
            multi_head_attention(&mut tape, q, k, k, &w),
            Err(Error::EmptySource)
        ));
    }

    #[test]
    fn heads_must_divide_width() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(AttentionParams::init(&mut store, "x", 5, 4, 2, &mut rng).is_err());
    }
}
