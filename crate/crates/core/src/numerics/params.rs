//! Named parameter storage, gradient maps and the checkpoint file format.
//!
//! A checkpoint is a text header followed by raw little-endian `f64` values:
//!
//! ```text
//! outcode-checkpoint 1
//! meta arch caml
//! param conv.kernels 32 3 16
//! param conv.bias 32
//! data
//! <values of every parameter, header order, row-major>
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "outcode-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub frozen: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.id(&name).is_none(),
            "duplicate parameter name {name}"
        );
        self.params.push(Param {
            name,
            value,
            frozen: false,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.value(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn freeze_all(&mut self) {
        for p in &mut self.params {
            p.frozen = true;
        }
    }

    pub fn set_frozen(&mut self, id: ParamId, frozen: bool) {
        self.params[id.0].frozen = frozen;
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Applies `value += step * grad` for every parameter with a gradient.
    pub fn apply(&mut self, grads: &GradientMap, step: f64) {
        for p in &mut self.params {
            if let Some(g) = grads.get(&p.name) {
                for (v, d) in p.value.data_mut().iter_mut().zip(g.data()) {
                    *v += step * d;
                }
            }
        }
    }

    pub fn write_checkpoint(&self, path: &Path, meta: &BTreeMap<String, String>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut out, meta)?;
        out.flush()?;
        Ok(())
    }

    pub fn write_to(&self, out: &mut impl Write, meta: &BTreeMap<String, String>) -> Result<()> {
        writeln!(out, "{MAGIC}")?;
        for (k, v) in meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::Invalid(format!("bad checkpoint meta entry {k:?}")));
            }
            writeln!(out, "meta {k} {v}")?;
        }
        for p in &self.params {
            let dims: Vec<String> = p.value.shape().iter().map(ToString::to_string).collect();
            writeln!(out, "param {} {}", p.name, dims.join(" "))?;
        }
        writeln!(out, "data")?;
        for p in &self.params {
            for v in p.value.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint(path: &Path) -> Result<(ParamStore, BTreeMap<String, String>)> {
        let mut input = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut input)
    }

    pub fn read_from(input: &mut impl BufRead) -> Result<(ParamStore, BTreeMap<String, String>)> {
        let mut meta = BTreeMap::new();
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        let mut line = String::new();
        let mut lineno = 0;
        loop {
            line.clear();
            lineno += 1;
            if input.read_line(&mut line)? == 0 {
                return Err(Error::Parse {
                    line: lineno,
                    msg: "checkpoint header ended before `data`".into(),
                });
            }
            let text = line.trim_end_matches('\n');
            if lineno == 1 {
                if text != MAGIC {
                    return Err(Error::Parse {
                        line: 1,
                        msg: format!("not a checkpoint (found {text:?})"),
                    });
                }
                continue;
            }
            if text == "data" {
                break;
            }
            let parse_err = |msg: &str| Error::Parse {
                line: lineno,
                msg: msg.to_string(),
            };
            if let Some(rest) = text.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = text.strip_prefix("param ") {
                let mut parts = rest.split(' ');
                let name = parts.next().ok_or_else(|| parse_err("missing name"))?;
                let dims = parts
                    .map(|d| d.parse::<usize>().map_err(|_| parse_err("bad dimension")))
                    .collect::<Result<Vec<_>>>()?;
                shapes.push((name.to_string(), dims));
            } else {
                return Err(parse_err("unknown header line"));
            }
        }
        let mut store = ParamStore::new();
        let mut buf = [0u8; 8];
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                input.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            store.insert(name, Tensor::new(shape, data)?);
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after parameter data",
                rest.len()
            )));
        }
        Ok((store, meta))
    }
}

/// Gradients keyed by parameter name; shapes equal the parameter shapes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradientMap {
    grads: BTreeMap<String, Tensor>,
}

impl GradientMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub(crate) fn accumulate(&mut self, name: &str, grad: Tensor) {
        match self.grads.get_mut(name) {
            Some(g) => g.add_assign(&grad),
            None => {
                self.grads.insert(name.to_string(), grad);
            }
        }
    }

    /// Adds every entry of `other` into `self`.
    pub fn merge(&mut self, other: GradientMap) {
        for (k, v) in other.grads {
            self.accumulate(&k, v);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.grads.values_mut() {
            for v in g.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.grads
            .values()
            .flat_map(|g| g.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn checkpoint_round_trip_is_bit_exact(
            a in proptest::collection::vec(any::<f64>(), 6),
            b in proptest::collection::vec(-1e300f64..1e300, 3),
        ) {
            let mut store = ParamStore::new();
            store.insert("layer.a", Tensor::new(vec![2, 3], a.clone()).unwrap());
            store.insert("b", Tensor::new(vec![3], b.clone()).unwrap());
            let mut meta = BTreeMap::new();
            meta.insert("arch".to_string(), "caml".to_string());
            let mut bytes = Vec::new();
            store.write_to(&mut bytes, &meta).unwrap();
            let (back, meta_back) = ParamStore::read_from(&mut bytes.as_slice()).unwrap();
            prop_assert_eq!(meta_back, meta);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(back.by_name("layer.a").unwrap()), bits(store.by_name("layer.a").unwrap()));
            prop_assert_eq!(bits(back.by_name("b").unwrap()), bits(store.by_name("b").unwrap()));
            prop_assert_eq!(back.by_name("layer.a").unwrap().shape(), &[2, 3]);
        }
    }

    #[test]
    fn truncated_checkpoint_is_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(&[4]));
        let mut bytes = Vec::new();
        store.write_to(&mut bytes, &BTreeMap::new()).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(ParamStore::read_from(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let err = ParamStore::read_from(&mut "hello\ndata\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
