use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::{Encounter, LabelSpace};
use crate::error::Error;
use crate::numerics::{grad_check, ParamStore, Tape, Tensor};
use crate::preprocess::{build_vocab, Vocabulary};

type Mat = Vec<Vec<f64>>;

fn mat(t: &Tensor) -> Mat {
    let (r, c) = t.dims2().unwrap();
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn mm(a: &Mat, b: &Mat) -> Mat {
    let n = b[0].len();
    a.iter()
        .map(|row| (0..n).map(|j| row.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
        .collect()
}

fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

fn softmax_rows(a: &Mat) -> Mat {
    a.iter()
        .map(|r| {
            let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = r.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.iter().map(|x| x / s).collect()
        })
        .collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Straight-loop forward pass of the base model.
fn base_oracle(store: &ParamStore, arch: Arch, ids: &[usize]) -> Vec<f64> {
    let emb = mat(store.by_name("emb").unwrap());
    let k = store.by_name("conv.kernels").unwrap();
    let (d_c, w, d_e) = (k.shape()[0], k.shape()[1], k.shape()[2]);
    let bias = store.by_name("conv.bias").unwrap().data();
    let t_len = ids.len();
    let x: Mat = ids.iter().map(|&i| if i == 0 { vec![0.0; d_e] } else { emb[i].clone() }).collect();
    let mut h = Vec::new();
    for t in 0..t_len {
        if ids[t] == 0 {
            continue;
        }
        let mut row = vec![0.0; d_c];
        for (o, r) in row.iter_mut().enumerate() {
            let mut acc = bias[o];
            for j in 0..w {
                let pos = t as isize + j as isize - (w / 2) as isize;
                if pos < 0 || pos >= t_len as isize {
                    continue;
                }
                for i in 0..d_e {
                    acc += k.data()[(o * w + j) * d_e + i] * x[pos as usize][i];
                }
            }
            *r = acc.tanh();
        }
        h.push(row);
    }
    let u = mat(store.by_name("attn.u").unwrap());
    let scores = match arch {
        Arch::Caml => mm(&u, &transpose(&h)),
        Arch::Laat => {
            let wm = mat(store.by_name("attn.w").unwrap());
            let z: Mat = mm(&h, &transpose(&wm)).into_iter().map(|r| r.into_iter().map(f64::tanh).collect()).collect();
            mm(&u, &transpose(&z))
        }
    };
    let v = mm(&softmax_rows(&scores), &h);
    let ow = mat(store.by_name("out.w").unwrap());
    let ob = store.by_name("out.b").unwrap().data();
    (0..ow.len())
        .map(|l| sig(ow[l].iter().zip(&v[l]).map(|(a, b)| a * b).sum::<f64>() + ob[l]))
        .collect()
}

fn toy_base(arch: Arch, seed: u64) -> BaseModel {
    let cfg = BaseConfig {
        arch,
        d_embed: 5,
        d_conv: 4,
        kernel_width: 3,
        d_attn: 3,
    };
    let mut m = BaseModel::init(&cfg, 7, 3, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    for name in ["conv.bias", "out.b"] {
        let id = m.store.id(name).unwrap();
        for v in m.store.value_mut(id).data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    m
}

#[test]
fn base_matches_loop_oracle() {
    for arch in [Arch::Caml, Arch::Laat] {
        for seed in 0..5 {
            let m = toy_base(arch, seed);
            for ids in [vec![2usize], vec![3, 4, 5], vec![0, 6, 2, 0, 1], vec![1, 1, 1, 1, 1, 1]] {
                let got = m.predict(&ids).unwrap();
                let want = base_oracle(&m.store, arch, &ids);
                for (g, w) in got.iter().zip(&want) {
                    assert!((g - w).abs() < 1e-12, "{arch} {ids:?}: {g} vs {w}");
                }
            }
        }
    }
}

#[test]
fn zero_kernels_give_zero_encoding() {
    let mut m = toy_base(Arch::Caml, 1);
    for name in ["conv.kernels", "conv.bias"] {
        let id = m.store.id(name).unwrap();
        m.store.value_mut(id).data_mut().fill(0.0);
    }
    let h = m.encode_only(&[2, 3, 4]).unwrap().unwrap();
    assert!(h.data().iter().all(|&v| v == 0.0));
}

#[test]
fn all_padding_is_masked_out() {
    let m = toy_base(Arch::Laat, 1);
    assert!(m.encode_only(&[0, 0]).unwrap().is_none());
    assert!(matches!(m.predict(&[0, 0]), Err(Error::EmptySource)));
}

#[test]
fn out_of_range_token_is_a_contract_error() {
    let m = toy_base(Arch::Caml, 1);
    assert!(matches!(m.predict(&[2, 7]), Err(Error::Contract(_))));
}

fn attention_matrix(m: &BaseModel, ids: &[usize]) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let vars = m.bind(&mut tape);
    let enc = vars.encode(&mut tape, ids).unwrap();
    let h = BaseVars::unmasked(&mut tape, &enc).unwrap();
    let v = vars.attend(&mut tape, h).unwrap();
    (tape.value(h).clone(), tape.value(v).clone())
}

#[test]
fn single_position_copies_h() {
    for arch in [Arch::Caml, Arch::Laat] {
        let m = toy_base(arch, 3);
        let (h, v) = attention_matrix(&m, &[4]);
        for l in 0..3 {
            assert_eq!(v.row(l), h.row(0));
        }
    }
}

#[test]
fn zero_query_gives_mean_of_rows() {
    for arch in [Arch::Caml, Arch::Laat] {
        let mut m = toy_base(arch, 4);
        let id = m.store.id("attn.u").unwrap();
        m.store.value_mut(id).data_mut().fill(0.0);
        let (h, v) = attention_matrix(&m, &[2, 3, 5, 6]);
        let (t, d) = h.dims2().unwrap();
        for l in 0..3 {
            for k in 0..d {
                let mean = (0..t).map(|i| h.at(i, k)).sum::<f64>() / t as f64;
                assert!((v.at(l, k) - mean).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn permuting_positions_leaves_v_unchanged_for_width_one() {
    let cfg = BaseConfig {
        arch: Arch::Caml,
        d_embed: 4,
        d_conv: 4,
        kernel_width: 1,
        d_attn: 4,
    };
    let m = BaseModel::init(&cfg, 9, 3, 11).unwrap();
    let (_, a) = attention_matrix(&m, &[2, 3, 4, 5, 6]);
    let (_, b) = attention_matrix(&m, &[5, 2, 6, 4, 3]);
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn predict_set_examples() {
    assert_eq!(predict_set(&[0.9, 0.1], 0.5), vec![0]);
    assert!(predict_set(&[0.2, 0.1], 0.5).is_empty());
    assert_eq!(predict_set(&[0.2, 0.1], 0.0), vec![0, 1]);
}

fn fixtures() -> (Vocabulary, LabelSpace) {
    let vocab = build_vocab(["alpha beta gamma delta eps"], 1).unwrap();
    let mut counts = BTreeMap::new();
    for c in ["A01.1", "B02.2", "C03.3"] {
        counts.insert(c.to_string(), 5);
    }
    (vocab, LabelSpace::from_counts(counts))
}

#[test]
fn base_checkpoint_round_trip_and_hash_check() {
    let (vocab, labels) = fixtures();
    let m = toy_base(Arch::Laat, 2);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    m.save(&p, &vocab, &labels).unwrap();
    let back = BaseModel::load(&p, &vocab, &labels).unwrap();
    assert_eq!(back, m);
    let other = build_vocab(["alpha beta gamma delta zeta"], 1).unwrap();
    assert!(matches!(BaseModel::load(&p, &other, &labels), Err(Error::Checkpoint(_))));
}

fn toy_encounter(meds: &[&str], procs: &[&str]) -> Encounter {
    Encounter {
        patient_id: "P".into(),
        date: NaiveDate::from_ymd_opt(2022, 2, 2).unwrap(),
        dept: "D01".into(),
        doctor: "DR001".into(),
        text: "alpha beta".into(),
        codes: vec!["A01.1".into()],
        meds: meds.iter().map(|s| s.to_string()).collect(),
        procs: procs.iter().map(|s| s.to_string()).collect(),
    }
}

fn toy_reranker(seed: u64, d: usize) -> Reranker {
    let modalities = ModalityVocab {
        meds: vec!["RX1".into(), "RX2".into()],
        procs: vec!["PX1".into()],
        doctors: vec!["DR001".into()],
        depts: vec!["D01".into()],
    };
    let mut r = Reranker::init(&RerankerConfig { d, heads: 2 }, 3, 4, modalities, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
    for name in ["rr.wp", "rr.bp"] {
        let id = r.store.id(name).unwrap();
        for v in r.store.value_mut(id).data_mut() {
            *v = rng.random_range(-0.3..0.3);
        }
    }
    r
}

fn toy_input(r: &Reranker, e: &Encounter, seed: u64, aux: bool) -> RerankInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_t = |rows: usize| {
        Tensor::new(vec![rows, 4], (0..rows * 4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    };
    let h = rand_t(3);
    let h_aux = aux.then(|| rand_t(2));
    r.input_from_parts(e, vec![0.2, 0.7, 0.05], h, h_aux)
}

fn attn_oracle(store: &ParamStore, prefix: &str, heads: usize, q: &Mat, src: &Mat) -> Mat {
    let mut concat: Mat = vec![Vec::new(); q.len()];
    for h in 0..heads {
        let w = |n: &str| mat(store.by_name(&format!("{prefix}.h{h}.{n}")).unwrap());
        let (wq, wk, wv) = (w("wq"), w("wk"), w("wv"));
        let qh = mm(q, &wq);
        let kh = mm(src, &wk);
        let vh = mm(src, &wv);
        let scale = 1.0 / (wq[0].len() as f64).sqrt();
        let s: Mat = mm(&qh, &transpose(&kh)).into_iter().map(|r| r.into_iter().map(|x| x * scale).collect()).collect();
        let o = mm(&softmax_rows(&s), &vh);
        for (c, r) in concat.iter_mut().zip(o) {
            c.extend(r);
        }
    }
    mm(&concat, &mat(store.by_name(&format!("{prefix}.wo")).unwrap()))
}

/// Step-by-step reranker computation without the tape.
fn reranker_oracle(r: &Reranker, input: &RerankInput) -> (Vec<f64>, Vec<f64>) {
    let s = &r.store;
    let row = |name: &str, i: usize| mat(s.by_name(name).unwrap())[i].clone();
    let mut modal = row("rr.doctor", input.doctor);
    for (a, b) in modal.iter_mut().zip(row("rr.dept", input.dept)) {
        *a += b;
    }
    for (name, ids) in [("rr.med", &input.meds), ("rr.proc", &input.procs)] {
        for &i in ids.iter() {
            for (a, b) in modal.iter_mut().zip(row(name, i)) {
                *a += b / ids.len() as f64;
            }
        }
    }
    let el: Mat = mat(s.by_name("rr.labels").unwrap())
        .into_iter()
        .map(|r| r.iter().zip(&modal).map(|(a, b)| a + b).collect())
        .collect();
    let mut fused = attn_oracle(s, "rr.attn_n", r.heads, &el, &mat(&input.h));
    if let Some(aux) = &input.h_aux {
        let m = attn_oracle(s, "rr.attn_m", r.heads, &el, &mat(aux));
        for (f, mr) in fused.iter_mut().zip(m) {
            for (a, b) in f.iter_mut().zip(mr) {
                *a += b;
            }
        }
    }
    let wp = mat(s.by_name("rr.wp").unwrap());
    let bp = s.by_name("rr.bp").unwrap().data();
    let scores: Vec<f64> = (0..wp.len())
        .map(|l| wp[l].iter().zip(&fused[l]).map(|(a, b)| a * b).sum::<f64>() + bp[l] + input.base_probs[l])
        .collect();
    let probs = scores.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    (probs, scores)
}

#[test]
fn reranker_matches_step_by_step_oracle() {
    for seed in 0..6 {
        let r = toy_reranker(seed, 4);
        for (meds, procs, aux) in [(vec!["RX1", "RX2"], vec!["PX1"], true), (vec![], vec![], false), (vec!["RX9"], vec![], true)] {
            let e = toy_encounter(&meds, &procs);
            let input = toy_input(&r, &e, seed, aux);
            let (p, s) = r.predict(&input).unwrap();
            let (op, os) = reranker_oracle(&r, &input);
            for i in 0..3 {
                assert!((p[i] - op[i]).abs() < 1e-12 && (s[i] - os[i]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn zero_projection_returns_base_probabilities() {
    let mut r = toy_reranker(3, 4);
    for name in ["rr.wp", "rr.bp"] {
        let id = r.store.id(name).unwrap();
        r.store.value_mut(id).data_mut().fill(0.0);
    }
    let input = toy_input(&r, &toy_encounter(&["RX1"], &["PX1"]), 1, true);
    let (p, s) = r.predict(&input).unwrap();
    assert_eq!(p, input.base_probs);
    assert_eq!(s, input.base_probs);
}

#[test]
fn fresh_reranker_is_identity() {
    let r = Reranker::init(&RerankerConfig { d: 4, heads: 2 }, 3, 4, ModalityVocab::default(), 5).unwrap();
    let input = toy_input(&r, &toy_encounter(&[], &[]), 2, false);
    assert_eq!(r.predict(&input).unwrap().0, input.base_probs);
}

fn modal_vector(r: &Reranker, input: &RerankInput) -> Vec<f64> {
    let mut tape = Tape::new();
    let vars = r.bind(&mut tape);
    let v = vars.embed_modalities(&mut tape, input).unwrap();
    tape.value(v).data().to_vec()
}

#[test]
fn modality_embedding_cases() {
    let mut r = toy_reranker(1, 4);
    let unknown = toy_encounter(&[], &[]);
    let mut e = unknown.clone();
    e.doctor = "nobody".into();
    e.dept = "nowhere".into();
    let input = toy_input(&r, &e, 0, false);
    assert_eq!(modal_vector(&r, &input), vec![0.0; 4]);

    let set = |r: &mut Reranker, row: usize, vals: [f64; 4]| {
        let id = r.store.id("rr.med").unwrap();
        r.store.value_mut(id).data_mut()[row * 4..row * 4 + 4].copy_from_slice(&vals);
    };
    set(&mut r, 1, [1.0, 2.0, 3.0, 4.0]);
    set(&mut r, 2, [3.0, 0.0, -1.0, 8.0]);
    let mut twice = e.clone();
    twice.meds = vec!["RX1".into(), "RX1".into()];
    assert_eq!(modal_vector(&r, &toy_input(&r, &twice, 0, false)), vec![1.0, 2.0, 3.0, 4.0]);
    let mut both = e.clone();
    both.meds = vec!["RX1".into(), "RX2".into()];
    assert_eq!(modal_vector(&r, &toy_input(&r, &both, 0, false)), vec![2.0, 1.0, 1.0, 6.0]);
}

#[test]
fn head_count_must_divide_width() {
    let err = Reranker::init(&RerankerConfig { d: 5, heads: 2 }, 3, 4, ModalityVocab::default(), 0).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn reranker_checkpoint_round_trip() {
    let (vocab, labels) = fixtures();
    let r = toy_reranker(9, 4);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("r.ckpt");
    r.save(&p, &vocab, &labels).unwrap();
    assert_eq!(Reranker::load(&p, &vocab, &labels).unwrap(), r);
}

#[test]
fn base_models_pass_grad_check() {
    for arch in [Arch::Caml, Arch::Laat] {
        for seed in 0..20u64 {
            let m = toy_base(arch, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = rng.random_range(1..=6);
            let ids: Vec<usize> = (0..t).map(|_| rng.random_range(1..7)).collect();
            let y: Vec<f64> = (0..3).map(|_| f64::from(rng.random_range(0..2u8))).collect();
            let report = grad_check(&m.store, 1e-4, |tape, store| {
                let vars = BaseVars::bind(tape, store, arch)?;
                let (p, _) = vars.forward(tape, &ids)?;
                tape.bce(p, &y)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{arch} seed {seed}: {report:?}");
        }
    }
}

#[test]
fn reranker_passes_grad_check() {
    for seed in 0..20u64 {
        let r = toy_reranker(seed, 8);
        let e = toy_encounter(&["RX1", "RX2"], &["PX1"]);
        let input = toy_input(&r, &e, seed, seed % 2 == 0);
        let y = [1.0, 0.0, 1.0];
        let report = grad_check(&r.store, 1e-4, |tape, store| {
            let vars = RerankerVars::bind(tape, store, 2)?;
            let out = vars.forward(tape, &input)?;
            tape.bce(out.probs, &y)
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
    }
}
