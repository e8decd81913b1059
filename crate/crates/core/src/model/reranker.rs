use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::base::{check_meta, missing, BaseModel};
use crate::corpus::{Encounter, LabelSpace};
use crate::error::{Error, Result};
use crate::numerics::attention::normal;
use crate::numerics::{multi_head_attention, AttentionParams, AttentionWeights, ParamId, ParamStore, Tape, Tensor, Var};
use crate::preprocess::{aux_text, tokenize, Vocabulary};

/// Index tables for the structured modalities; index 0 is the unknown entry.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ModalityVocab {
    pub meds: Vec<String>,
    pub procs: Vec<String>,
    pub doctors: Vec<String>,
    pub depts: Vec<String>,
}

fn lookup(names: &[String]) -> HashMap<&str, usize> {
    names.iter().enumerate().map(|(i, n)| (n.as_str(), i + 1)).collect()
}

impl ModalityVocab {
    pub fn from_encounters(train: &[Encounter]) -> Self {
        let mut meds = BTreeSet::new();
        let mut procs = BTreeSet::new();
        let mut doctors = BTreeSet::new();
        let mut depts = BTreeSet::new();
        for e in train {
            meds.extend(e.meds.iter().cloned());
            procs.extend(e.procs.iter().cloned());
            doctors.insert(e.doctor.clone());
            depts.insert(e.dept.clone());
        }
        Self {
            meds: meds.into_iter().collect(),
            procs: procs.into_iter().collect(),
            doctors: doctors.into_iter().collect(),
            depts: depts.into_iter().collect(),
        }
    }

    fn lists(&self) -> [(&'static str, &Vec<String>); 4] {
        [
            ("med", &self.meds),
            ("proc", &self.procs),
            ("doctor", &self.doctors),
            ("dept", &self.depts),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RerankerConfig {
    pub d: usize,
    pub heads: usize,
}

impl Default for RerankerConfig {
    fn default() -> Self {
        Self { d: 32, heads: 2 }
    }
}

/// Everything the reranker needs about one encounter; base outputs are constants.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankInput {
    pub base_probs: Vec<f64>,
    pub h: Tensor,
    /// Encoding of the medication and procedure names; `None` when there are none.
    pub h_aux: Option<Tensor>,
    pub meds: Vec<usize>,
    pub procs: Vec<usize>,
    pub doctor: usize,
    pub dept: usize,
}

#[derive(Debug, Clone)]
struct RerankerIds {
    labels: ParamId,
    tables: [ParamId; 4],
    attn_n: AttentionParams,
    attn_m: AttentionParams,
    wp: ParamId,
    bp: ParamId,
}

impl RerankerIds {
    fn find(s: &ParamStore, heads: usize) -> Result<Self> {
        let get = |n: &str| s.id(n).ok_or_else(|| missing(n));
        Ok(Self {
            labels: get("rr.labels")?,
            tables: [get("rr.med")?, get("rr.proc")?, get("rr.doctor")?, get("rr.dept")?],
            attn_n: AttentionParams::find(s, "rr.attn_n", heads)?,
            attn_m: AttentionParams::find(s, "rr.attn_m", heads)?,
            wp: get("rr.wp")?,
            bp: get("rr.bp")?,
        })
    }
}

#[derive(Debug, Clone)]
pub struct RerankerVars {
    labels: Var,
    tables: [Var; 4],
    attn_n: AttentionWeights,
    attn_m: AttentionWeights,
    wp: Var,
    bp: Var,
}

impl RerankerVars {
    pub fn bind<'p>(tape: &mut Tape<'p>, store: &'p ParamStore, heads: usize) -> Result<Self> {
        let ids = RerankerIds::find(store, heads)?;
        Ok(Self {
            labels: tape.param(store, ids.labels),
            tables: ids.tables.map(|t| tape.param(store, t)),
            attn_n: ids.attn_n.bind(tape, store),
            attn_m: ids.attn_m.bind(tape, store),
            wp: tape.param(store, ids.wp),
            bp: tape.param(store, ids.bp),
        })
    }

    /// Sum over modalities: doctor and department rows plus the mean medication and procedure rows.
    pub fn embed_modalities(&self, tape: &mut Tape<'_>, input: &RerankInput) -> Result<Var> {
        let d = tape.shape(self.labels)[1];
        let [med, proc_, doctor, dept] = self.tables;
        let mut total = {
            let r = tape.embedding(doctor, &[input.doctor], None)?;
            tape.reshape(r, vec![d])?
        };
        let r = tape.embedding(dept, &[input.dept], None)?;
        let r = tape.reshape(r, vec![d])?;
        total = tape.add(total, r)?;
        for (table, ids) in [(med, &input.meds), (proc_, &input.procs)] {
            if !ids.is_empty() {
                let rows = tape.embedding(table, ids, None)?;
                let mean = tape.mean_rows(rows)?;
                total = tape.add(total, mean)?;
            }
        }
        Ok(total)
    }

    pub fn forward(&self, tape: &mut Tape<'_>, input: &RerankInput) -> Result<RerankOutput> {
        let n_labels = tape.shape(self.labels)[0];
        if input.base_probs.len() != n_labels {
            return Err(Error::shape("reranker input", &[input.base_probs.len()], &[n_labels]));
        }
        let modal = self.embed_modalities(tape, input)?;
        let labels = tape.add_row(self.labels, modal)?;
        let h = tape.constant(input.h.clone());
        let mut fused = multi_head_attention(tape, labels, h, h, &self.attn_n)?;
        if let Some(aux) = &input.h_aux {
            let ha = tape.constant(aux.clone());
            let m = multi_head_attention(tape, labels, ha, ha, &self.attn_m)?;
            fused = tape.add(fused, m)?;
        }
        let p = tape.row_dot(self.wp, fused)?;
        let p = tape.add(p, self.bp)?;
        let base = tape.constant(Tensor::vector(input.base_probs.clone()));
        let scores = tape.add(p, base)?;
        let probs = tape.clamp(scores, 0.0, 1.0);
        Ok(RerankOutput { scores, probs })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RerankOutput {
    /// `P' + P` before clamping; used for ranking.
    pub scores: Var,
    /// `clamp(P' + P, 0, 1)`.
    pub probs: Var,
}

/// Residual re-scoring of a frozen base model from metadata and auxiliary text.
#[derive(Debug, Clone, PartialEq)]
pub struct Reranker {
    pub store: ParamStore,
    pub modalities: ModalityVocab,
    pub heads: usize,
    n_labels: usize,
}

impl Reranker {
    pub fn init(
        cfg: &RerankerConfig,
        n_labels: usize,
        d_conv: usize,
        modalities: ModalityVocab,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let d = cfg.d;
        if d == 0 || n_labels == 0 {
            return Err(Error::Config("reranker dimensions must be positive".into()));
        }
        s.insert("rr.labels", normal(&[n_labels, d], 0.1, &mut rng));
        for (name, list) in modalities.lists() {
            let mut t = normal(&[list.len() + 1, d], 0.1, &mut rng);
            t.data_mut()[..d].fill(0.0);
            s.insert(format!("rr.{name}"), t);
        }
        AttentionParams::init(&mut s, "rr.attn_n", d, d_conv, cfg.heads, &mut rng)?;
        AttentionParams::init(&mut s, "rr.attn_m", d, d_conv, cfg.heads, &mut rng)?;
        s.insert("rr.wp", Tensor::zeros(&[n_labels, d]));
        s.insert("rr.bp", Tensor::zeros(&[n_labels]));
        Ok(Self {
            store: s,
            modalities,
            heads: cfg.heads,
            n_labels,
        })
    }

    pub fn n_labels(&self) -> usize {
        self.n_labels
    }

    pub fn bind<'p>(&'p self, tape: &mut Tape<'p>) -> RerankerVars {
        RerankerVars::bind(tape, &self.store, self.heads).expect("checked at construction")
    }

    /// Maps an encounter's metadata to table indices and attaches the frozen base outputs.
    pub fn input(&self, base: &BaseModel, vocab: &Vocabulary, e: &Encounter, max_len: usize) -> Result<RerankInput> {
        let note = tokenize(&e.text, vocab, max_len);
        let (base_probs, h) = base.predict_with_encoding(&note.ids)?;
        let aux = tokenize(&aux_text(e), vocab, max_len);
        let h_aux = base.encode_only(&aux.ids)?;
        Ok(self.input_from_parts(e, base_probs, h, h_aux))
    }

    pub fn input_from_parts(&self, e: &Encounter, base_probs: Vec<f64>, h: Tensor, h_aux: Option<Tensor>) -> RerankInput {
        let m = &self.modalities;
        let (meds, procs, doctors, depts) = (lookup(&m.meds), lookup(&m.procs), lookup(&m.doctors), lookup(&m.depts));
        let idx = |map: &HashMap<&str, usize>, name: &str| map.get(name).copied().unwrap_or(0);
        RerankInput {
            base_probs,
            h,
            h_aux,
            meds: e.meds.iter().map(|x| idx(&meds, x)).collect(),
            procs: e.procs.iter().map(|x| idx(&procs, x)).collect(),
            doctor: idx(&doctors, &e.doctor),
            dept: idx(&depts, &e.dept),
        }
    }

    /// Clamped probabilities and pre-clamp ranking scores.
    pub fn predict(&self, input: &RerankInput) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new();
        let vars = self.bind(&mut tape);
        let out = vars.forward(&mut tape, input)?;
        Ok((tape.value(out.probs).data().to_vec(), tape.value(out.scores).data().to_vec()))
    }

    pub fn save(&self, path: &Path, vocab: &Vocabulary, labels: &LabelSpace) -> Result<()> {
        let mut meta = BTreeMap::new();
        meta.insert("arch".to_string(), "reranker".to_string());
        meta.insert("heads".to_string(), self.heads.to_string());
        meta.insert("n_labels".to_string(), self.n_labels.to_string());
        meta.insert("vocab_hash".to_string(), vocab.hash());
        meta.insert("labels_hash".to_string(), labels.hash());
        for (name, list) in self.modalities.lists() {
            let json = serde_json::to_string(list).map_err(|e| Error::Invalid(e.to_string()))?;
            meta.insert(format!("modality.{name}"), json);
        }
        self.store.write_checkpoint(path, &meta)
    }

    pub fn load(path: &Path, vocab: &Vocabulary, labels: &LabelSpace) -> Result<Self> {
        let (store, meta) = ParamStore::read_checkpoint(path)?;
        check_meta(&meta, "arch", "reranker")?;
        check_meta(&meta, "vocab_hash", &vocab.hash())?;
        check_meta(&meta, "labels_hash", &labels.hash())?;
        check_meta(&meta, "n_labels", &labels.len().to_string())?;
        let heads = meta
            .get("heads")
            .and_then(|h| h.parse().ok())
            .ok_or_else(|| missing("heads"))?;
        let list = |name: &str| -> Result<Vec<String>> {
            let key = format!("modality.{name}");
            let raw = meta.get(&key).ok_or_else(|| missing(&key))?;
            serde_json::from_str(raw).map_err(|e| Error::Checkpoint(format!("{key}: {e}")))
        };
        let modalities = ModalityVocab {
            meds: list("med")?,
            procs: list("proc")?,
            doctors: list("doctor")?,
            depts: list("dept")?,
        };
        let r = Self {
            store,
            modalities,
            heads,
            n_labels: labels.len(),
        };
        RerankerIds::find(&r.store, heads)?;
        Ok(r)
    }
}
