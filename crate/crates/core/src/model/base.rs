use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::LabelSpace;
use crate::error::{Error, Result};
use crate::numerics::attention::{glorot, normal};
use crate::numerics::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::preprocess::{Vocabulary, PAD};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Caml,
    Laat,
}

impl std::str::FromStr for Arch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "caml" => Ok(Arch::Caml),
            "laat" => Ok(Arch::Laat),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arch::Caml => "caml",
            Arch::Laat => "laat",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaseConfig {
    pub arch: Arch,
    pub d_embed: usize,
    pub d_conv: usize,
    pub kernel_width: usize,
    /// Projection width of the LAAT attention; unused by CAML.
    pub d_attn: usize,
}

impl Default for BaseConfig {
    fn default() -> Self {
        Self {
            arch: Arch::Caml,
            d_embed: 32,
            d_conv: 32,
            kernel_width: 3,
            d_attn: 32,
        }
    }
}

#[derive(Debug, Clone)]
struct BaseIds {
    emb: ParamId,
    kernels: ParamId,
    bias: ParamId,
    attn_w: Option<ParamId>,
    attn_u: ParamId,
    out_w: ParamId,
    out_b: ParamId,
}

impl BaseIds {
    fn find(s: &ParamStore, arch: Arch) -> Result<Self> {
        let get = |n: &str| s.id(n).ok_or_else(|| missing(n));
        Ok(Self {
            emb: get("emb")?,
            kernels: get("conv.kernels")?,
            bias: get("conv.bias")?,
            attn_w: match arch {
                Arch::Caml => None,
                Arch::Laat => Some(get("attn.w")?),
            },
            attn_u: get("attn.u")?,
            out_w: get("out.w")?,
            out_b: get("out.b")?,
        })
    }
}

/// Base parameters bound on a tape.
#[derive(Debug, Clone, Copy)]
pub struct BaseVars {
    emb: Var,
    kernels: Var,
    bias: Var,
    attn_w: Option<Var>,
    attn_u: Var,
    out_w: Var,
    out_b: Var,
}

impl BaseVars {
    /// Binds the base parameters found in `store`.
    pub fn bind<'p>(tape: &mut Tape<'p>, store: &'p ParamStore, arch: Arch) -> Result<Self> {
        let ids = BaseIds::find(store, arch)?;
        Ok(Self {
            emb: tape.param(store, ids.emb),
            kernels: tape.param(store, ids.kernels),
            bias: tape.param(store, ids.bias),
            attn_w: ids.attn_w.map(|w| tape.param(store, w)),
            attn_u: tape.param(store, ids.attn_u),
            out_w: tape.param(store, ids.out_w),
            out_b: tape.param(store, ids.out_b),
        })
    }

    /// Embedding lookup, convolution and tanh. Padding rows are zero and excluded from `keep`.
    pub fn encode(&self, tape: &mut Tape<'_>, ids: &[usize]) -> Result<Encoded> {
        self.encode_masked(tape, ids, None)
    }

    /// As [`encode`](Self::encode), multiplying the embeddings by `mask: [T×d_e]` (dropout).
    pub fn encode_masked(&self, tape: &mut Tape<'_>, ids: &[usize], mask: Option<Tensor>) -> Result<Encoded> {
        if ids.is_empty() {
            return Err(Error::Contract("cannot encode an empty note".into()));
        }
        let mut x = tape.embedding(self.emb, ids, Some(PAD))?;
        if let Some(m) = mask {
            let m = tape.constant(m);
            x = tape.mul(x, m)?;
        }
        let c = tape.conv1d(x, self.kernels, self.bias)?;
        let h = tape.tanh(c);
        let keep = ids.iter().enumerate().filter(|(_, &i)| i != PAD).map(|(t, _)| t).collect();
        Ok(Encoded { h, keep })
    }

    /// Unpadded rows of an encoding; errors if nothing remains.
    pub fn unmasked(tape: &mut Tape<'_>, enc: &Encoded) -> Result<Var> {
        if enc.keep.is_empty() {
            return Err(Error::EmptySource);
        }
        if enc.keep.len() == tape.shape(enc.h)[0] {
            Ok(enc.h)
        } else {
            tape.gather_rows(enc.h, &enc.keep)
        }
    }

    /// Label-specific document matrix `V: [N×d_c]`.
    pub fn attend(&self, tape: &mut Tape<'_>, h: Var) -> Result<Var> {
        let scores = match self.attn_w {
            None => tape.matmul_t(self.attn_u, h)?,
            Some(w) => {
                let z = tape.matmul_t(h, w)?;
                let z = tape.tanh(z);
                tape.matmul_t(self.attn_u, z)?
            }
        };
        let alpha = tape.softmax(scores, 1)?;
        tape.matmul(alpha, h)
    }

    pub fn classify(&self, tape: &mut Tape<'_>, v: Var) -> Result<Var> {
        let logits = tape.row_dot(self.out_w, v)?;
        let logits = tape.add(logits, self.out_b)?;
        Ok(tape.sigmoid(logits))
    }

    /// Full forward pass; returns the probability vector and the unmasked encoding.
    pub fn forward(&self, tape: &mut Tape<'_>, ids: &[usize]) -> Result<(Var, Var)> {
        self.forward_masked(tape, ids, None)
    }

    pub fn forward_masked(&self, tape: &mut Tape<'_>, ids: &[usize], mask: Option<Tensor>) -> Result<(Var, Var)> {
        let enc = self.encode_masked(tape, ids, mask)?;
        let h = BaseVars::unmasked(tape, &enc)?;
        let v = self.attend(tape, h)?;
        Ok((self.classify(tape, v)?, h))
    }
}

/// Token representations of one note and the positions that are not padding.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub h: Var,
    pub keep: Vec<usize>,
}

/// CNN encoder with a per-label attention head and a sigmoid output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseModel {
    pub arch: Arch,
    pub store: ParamStore,
    vocab_size: usize,
    n_labels: usize,
}

impl BaseModel {
    pub fn init(cfg: &BaseConfig, vocab_size: usize, n_labels: usize, seed: u64) -> Result<Self> {
        if cfg.kernel_width.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel_width must be odd, got {}",
                cfg.kernel_width
            )));
        }
        if [cfg.d_embed, cfg.d_conv, cfg.d_attn, vocab_size, n_labels].contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let mut emb = normal(&[vocab_size, cfg.d_embed], 0.1, &mut rng);
        emb.data_mut()[..cfg.d_embed].fill(0.0);
        s.insert("emb", emb);
        let fan_in = cfg.kernel_width * cfg.d_embed;
        let k = glorot(fan_in, cfg.d_conv, &mut rng).reshaped(vec![cfg.d_conv, cfg.kernel_width, cfg.d_embed])?;
        s.insert("conv.kernels", k);
        s.insert("conv.bias", Tensor::zeros(&[cfg.d_conv]));
        match cfg.arch {
            Arch::Caml => {
                s.insert("attn.u", glorot(n_labels, cfg.d_conv, &mut rng));
            }
            Arch::Laat => {
                s.insert("attn.w", glorot(cfg.d_attn, cfg.d_conv, &mut rng));
                s.insert("attn.u", glorot(n_labels, cfg.d_attn, &mut rng));
            }
        }
        s.insert("out.w", glorot(n_labels, cfg.d_conv, &mut rng));
        let prior = (2.0 / n_labels as f64).min(0.5);
        s.insert("out.b", Tensor::full(&[n_labels], (prior / (1.0 - prior)).ln()));
        Self::from_store(cfg.arch, s)
    }

    /// Wraps a parameter store, checking that every expected tensor is present and consistent.
    pub fn from_store(arch: Arch, store: ParamStore) -> Result<Self> {
        let vocab_size = store.by_name("emb").ok_or_else(|| missing("emb"))?.shape()[0];
        let n_labels = store.by_name("out.b").ok_or_else(|| missing("out.b"))?.len();
        let model = Self {
            arch,
            vocab_size,
            n_labels,
            store,
        };
        let ids = model.ids()?;
        let store = &model.store;
        let (v, d_e) = store.value(ids.emb).dims2()?;
        let ks = store.value(ids.kernels).shape().to_vec();
        let d_c = *ks.first().unwrap_or(&0);
        let n = model.n_labels;
        let mut ok = ks.len() == 3 && ks[2] == d_e && v > PAD;
        ok &= store.value(ids.bias).shape() == [d_c];
        ok &= store.value(ids.out_w).shape() == [n, d_c];
        match ids.attn_w {
            None => ok &= store.value(ids.attn_u).shape() == [n, d_c],
            Some(w) => {
                let (d_a, wc) = store.value(w).dims2()?;
                ok &= wc == d_c && store.value(ids.attn_u).shape() == [n, d_a];
            }
        }
        if !ok {
            return Err(Error::Checkpoint("inconsistent base model parameter shapes".into()));
        }
        if store.iter().any(|(_, p)| !p.value.is_finite()) {
            return Err(Error::Checkpoint("non-finite base model parameter".into()));
        }
        Ok(model)
    }

    fn ids(&self) -> Result<BaseIds> {
        BaseIds::find(&self.store, self.arch)
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn d_conv(&self) -> usize {
        self.store.by_name("conv.bias").map_or(0, Tensor::len)
    }

    pub fn freeze(&mut self) {
        self.store.freeze_all();
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> BaseVars {
        BaseVars::bind(tape, &self.store, self.arch).expect("checked at construction")
    }

    pub fn predict(&self, ids: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let (p, _) = vars.forward(&mut tape, ids)?;
        Ok(tape.value(p).data().to_vec())
    }

    /// Probabilities and the unmasked encoder output for a note.
    pub fn predict_with_encoding(&self, ids: &[usize]) -> Result<(Vec<f64>, Tensor)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let (p, h) = vars.forward(&mut tape, ids)?;
        Ok((tape.value(p).data().to_vec(), tape.value(h).clone()))
    }

    /// Unmasked encoder output, or `None` when every position is padding.
    pub fn encode_only(&self, ids: &[usize]) -> Result<Option<Tensor>> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let enc = vars.encode(&mut tape, ids)?;
        match BaseVars::unmasked(&mut tape, &enc) {
            Ok(h) => Ok(Some(tape.value(h).clone())),
            Err(Error::EmptySource) => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn save(&self, path: &Path, vocab: &Vocabulary, labels: &LabelSpace) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("arch".to_string(), self.arch.to_string());
        meta.insert("n_labels".to_string(), self.n_labels.to_string());
        meta.insert("vocab_hash".to_string(), vocab.hash());
        meta.insert("labels_hash".to_string(), labels.hash());
        self.store.write_checkpoint(path, &meta)
    }

    pub fn load(path: &Path, vocab: &Vocabulary, labels: &LabelSpace) -> Result<Self> {
        let (store, meta) = ParamStore::read_checkpoint(path)?;
        check_meta(&meta, "vocab_hash", &vocab.hash())?;
        check_meta(&meta, "labels_hash", &labels.hash())?;
        check_meta(&meta, "n_labels", &labels.len().to_string())?;
        let arch = meta.get("arch").ok_or_else(|| missing("arch"))?.parse()?;
        let model = Self::from_store(arch, store)?;
        if model.vocab_size != vocab.len() {
            return Err(Error::Checkpoint("embedding rows differ from vocabulary size".into()));
        }
        Ok(model)
    }
}

pub(crate) fn missing(name: &str) -> Error {
    Error::Checkpoint(format!("missing entry {name}"))
}

pub(crate) fn check_meta(meta: &BTreeMap<String, String>, key: &str, expected: &str) -> Result<()> {
    match meta.get(key) {
        Some(v) if v == expected => Ok(()),
        Some(v) => Err(Error::Checkpoint(format!("{key} is {v}, expected {expected}"))),
        None => Err(missing(key)),
    }
}

/// Labels whose probability exceeds `threshold`.
pub fn predict_set(probs: &[f64], threshold: f64) -> Vec<usize> {
    probs
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > threshold)
        .map(|(i, _)| i)
        .collect()
}
