//! Finite-difference verification of tape gradients.

use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over coordinates of `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`
    pub max_rel_error: f64,
    /// parameter name and flat index of the worst coordinate
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// Compares reverse-mode gradients of `f` against fourth-order central differences
/// for every trainable coordinate in `store`.
pub fn grad_check<F>(store: &ParamStore, eps: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&mut Tape<'p>, &'p ParamStore) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store)?;
        tape.backward(loss)?
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = f(&mut tape, s)?;
        let v = tape.value(loss).data()[0];
        if !v.is_finite() {
            return Err(Error::Undefined("non-finite value during grad check".into()));
        }
        Ok(v)
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let ids: Vec<_> = store.iter().filter(|(_, p)| !p.frozen).map(|(id, _)| id).collect();
    for id in ids {
        let name = store.get(id).name.clone();
        let n = store.value(id).len();
        let zeros = Tensor::zeros(store.value(id).shape());
        let grad = analytic.get(&name).unwrap_or(&zeros);
        for i in 0..n {
            let orig = probe.value(id).data()[i];
            let mut at = |delta: f64| -> Result<f64> {
                probe.value_mut(id).data_mut()[i] = orig + delta;
                eval(&probe)
            };
            let (u1, d1, u2, d2) = (at(eps)?, at(-eps)?, at(2.0 * eps)?, at(-2.0 * eps)?);
            probe.value_mut(id).data_mut()[i] = orig;
            let numeric = (8.0 * (u1 - d1) - (u2 - d2)) / (12.0 * eps);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.coordinates += 1;
            if report.worst.is_none() || rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}

/// [`grad_check`] over a list of plain input tensors, bound as `x0`, `x1`, ...
pub fn grad_check_inputs<F>(inputs: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: for<'p> Fn(&mut Tape<'p>, &[Var]) -> Result<Var>,
{
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.insert(format!("x{i}"), t.clone()))
        .collect();
    grad_check(&store, eps, |tape, s| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
        f(tape, &vars)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::attention::{multi_head_attention, normal, AttentionParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_of_squares() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let mut store = ParamStore::new();
        let id = store.insert("x", x.clone());
        let mut tape = Tape::new();
        let v = tape.param(&store, id);
        let sq = tape.mul(v, v).unwrap();
        let s = tape.sum(sq);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get("x").unwrap().data(), &[2.0, 4.0]);
        let report = grad_check_inputs(&[x], 1e-5, |tape, v| {
            let sq = tape.mul(v[0], v[0])?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn bce_sigmoid_toy() {
        let z = Tensor::vector(vec![0.4, -1.3, 2.2]);
        let report = grad_check_inputs(&[z], 1e-5, |tape, v| {
            let p = tape.sigmoid(v[0]);
            tape.bce(p, &[1.0, 0.0, 1.0])
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    /// Every primitive, randomized over seeds.
    #[test]
    fn primitives_pass_grad_check() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = normal(&[3, 4], 0.8, &mut rng);
            let b = normal(&[4, 2], 0.8, &mut rng);
            let c = normal(&[2, 4], 0.8, &mut rng);
            let r = normal(&[4], 0.8, &mut rng);
            let k = normal(&[2, 3, 4], 0.5, &mut rng);
            let kb = normal(&[2], 0.5, &mut rng);
            let report = grad_check_inputs(&[a, b, c, r, k, kb], 1e-5, |t, v| {
                let ab = t.matmul(v[0], v[1])?; // 3x2
                let act = t.tanh(ab);
                let bt = t.matmul_t(v[0], v[2])?; // 3x2
                let sm = t.softmax(bt, 1)?;
                let sm0 = t.softmax(bt, 0)?;
                let prod = t.mul(act, sm)?;
                let both = t.add(prod, sm0)?;
                let rows = t.add_row(v[0], v[3])?; // 3x4
                let g = t.gather_rows(rows, &[2, 0, 2])?;
                let conv = t.conv1d(g, v[4], v[5])?; // 3x2
                let cat = t.concat_cols(&[both, conv])?; // 3x4
                let dots = t.row_dot(cat, rows)?; // 3
                let m = t.mean_rows(cat)?; // 4
                let e = t.embedding(v[0], &[1, 0, 1], None)?; // 3x4
                let em = t.mean_rows(e)?;
                let mm = t.mul(m, em)?;
                let rs = t.reshape(dots, vec![1, 3])?;
                let s1 = t.sum(rs);
                let s2 = t.sum(mm);
                let p = t.sigmoid(dots);
                let l = t.bce(p, &[1.0, 0.0, 1.0])?;
                let s = t.add(s1, s2)?;
                let s = t.scale(s, 0.3);
                t.add(s, l)
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn attention_passes_grad_check() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let mut store = ParamStore::new();
            let p = AttentionParams::init(&mut store, "att", 4, 3, 2, &mut rng).unwrap();
            let q = store.insert("q", normal(&[3, 4], 1.0, &mut rng));
            let kv = store.insert("kv", normal(&[5, 3], 1.0, &mut rng));
            let report = grad_check(&store, 1e-5, |t, s| {
                let w = p.bind(t, s);
                let qv = t.param(s, q);
                let kvv = t.param(s, kv);
                let out = multi_head_attention(t, qv, kvv, kvv, &w)?;
                let act = t.tanh(out);
                Ok(t.sum(act))
            })
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "seed {seed}: {report:?}");
        }
    }
}
