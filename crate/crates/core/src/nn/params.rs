use std::io::{Read, Write};

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One named parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<S> {
    pub tensor: Tensor<S>,
    /// Belongs to a batch-normalization layer (γ, β, running mean, running variance).
    pub is_bn: bool,
    /// Updated by the optimizer. Running statistics are not.
    pub trainable: bool,
}

/// Ordered, named parameters of a model; the unit exchanged between server
/// and clients.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<S> {
    entries: IndexMap<String, ParamEntry<S>>,
}

/// Per-parameter gradients keyed like the trainable entries of a [`ParamSet`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradSet<S> {
    entries: IndexMap<String, Vec<S>>,
}

const PARAM_MAGIC: &[u8; 4] = b"PSET";
const PARAM_VERSION: u32 = 1;

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        ParamSet { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, entry: ParamEntry<S>) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, entry);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry<S>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry<S>> {
        self.entries.get_mut(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<S>> {
        self.get(name).map(|e| &e.tensor).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor<S>> {
        self.get_mut(name)
            .map(|e| &mut e.tensor)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry<S>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry<S>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.iter().filter(|(_, e)| e.trainable).map(|(k, e)| (k, &e.tensor))
    }

    /// Total number of scalar values, optionally restricted to trainable entries.
    pub fn count(&self, trainable_only: bool) -> usize {
        self.iter()
            .filter(|(_, e)| e.trainable || !trainable_only)
            .map(|(_, e)| e.tensor.numel())
            .sum()
    }

    pub fn bn_entry_count(&self) -> usize {
        self.iter().filter(|(_, e)| e.is_bn).count()
    }

    /// Copy of the entries to transmit; BN-tagged entries are dropped unless
    /// `include_bn`.
    pub fn extract(&self, include_bn: bool) -> ParamSet<S> {
        let entries = self
            .entries
            .iter()
            .filter(|(_, e)| include_bn || !e.is_bn)
            .map(|(k, e)| (k.clone(), e.clone()))
            .collect();
        ParamSet { entries }
    }

    /// Overwrites this set's values from `source`. With `include_bn == false`
    /// every BN-tagged entry keeps its current value. Returns how many entries
    /// were skipped.
    pub fn load_from(&mut self, source: &ParamSet<S>, include_bn: bool) -> Result<usize> {
        for (name, entry) in &self.entries {
            if entry.is_bn && !include_bn {
                continue;
            }
            let src = source.get(name).ok_or_else(|| Error::MissingParam(name.clone()))?;
            if src.tensor.shape() != entry.tensor.shape() {
                return Err(Error::shape(
                    "load_params",
                    format!("`{name}`: {:?} vs {:?}", src.tensor.shape(), entry.tensor.shape()),
                ));
            }
        }
        let mut skipped = 0;
        for (name, entry) in self.entries.iter_mut() {
            if entry.is_bn && !include_bn {
                skipped += 1;
                continue;
            }
            let src = &source.entries[name];
            entry.tensor.data_mut().copy_from_slice(src.tensor.data());
        }
        Ok(skipped)
    }

    /// True when both sets have the same names, order, tags and shapes.
    pub fn same_layout(&self, other: &ParamSet<S>) -> bool {
        self.len() == other.len()
            && self.iter().zip(other.iter()).all(|((na, a), (nb, b))| {
                na == nb
                    && a.is_bn == b.is_bn
                    && a.trainable == b.trainable
                    && a.tensor.shape() == b.tensor.shape()
            })
    }

    /// Squared L2 distance over trainable entries.
    pub fn trainable_sq_distance(&self, other: &ParamSet<S>) -> Result<S> {
        let mut acc = S::zero();
        for (name, t) in self.trainable() {
            let o = other.tensor(name)?;
            if o.shape() != t.shape() {
                return Err(Error::shape("distance", format!("`{name}`")));
            }
            acc += t.data().iter().zip(o.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        }
        Ok(acc)
    }

    /// Converts every value to another scalar type.
    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        let entries = self
            .entries
            .iter()
            .map(|(k, e)| {
                let data = e.tensor.data().iter().map(|v| T::of(v.as_f64())).collect();
                let tensor = Tensor::from_parts(e.tensor.shape().to_vec(), data);
                (k.clone(), ParamEntry { tensor, is_bn: e.is_bn, trainable: e.trainable })
            })
            .collect();
        ParamSet { entries }
    }

    /// Binary checkpoint: `PSET`, u32 version, u32 count, then per entry
    /// u32 name length, UTF-8 name, u8 is_bn, u8 trainable, u32 rank, u32 dims,
    /// and the values as little-endian f64. All integers little-endian.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(PARAM_MAGIC)?;
        w.write_all(&PARAM_VERSION.to_le_bytes())?;
        w.write_all(&(self.len() as u32).to_le_bytes())?;
        for (name, e) in self.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&[e.is_bn as u8, e.trainable as u8])?;
            let shape = e.tensor.shape();
            w.write_all(&(shape.len() as u32).to_le_bytes())?;
            for &d in shape {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in e.tensor.data() {
                w.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        fn take<R: Read, const N: usize>(r: &mut R, section: &'static str) -> Result<[u8; N]> {
            let mut buf = [0u8; N];
            r.read_exact(&mut buf).map_err(|e| match e.kind() {
                std::io::ErrorKind::UnexpectedEof => Error::Truncated { section },
                _ => Error::Io(e),
            })?;
            Ok(buf)
        }
        let u32_of = |b: [u8; 4]| u32::from_le_bytes(b) as usize;

        if &take::<_, 4>(&mut r, "magic")? != PARAM_MAGIC {
            return Err(Error::Format("not a parameter checkpoint (bad magic)".into()));
        }
        let version = u32_of(take(&mut r, "version")?);
        if version != PARAM_VERSION as usize {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = u32_of(take(&mut r, "entry count")?);
        let mut set = ParamSet::new();
        for _ in 0..count {
            let len = u32_of(take(&mut r, "name length")?);
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(|_| Error::Truncated { section: "name" })?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let [is_bn, trainable] = take::<_, 2>(&mut r, "flags")?;
            let rank = u32_of(take(&mut r, "rank")?);
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32_of(take(&mut r, "shape")?));
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(S::of(f64::from_le_bytes(take(&mut r, "values")?)));
            }
            let tensor = Tensor::new(shape, data)?;
            set.insert(name, ParamEntry { tensor, is_bn: is_bn != 0, trainable: trainable != 0 })?;
        }
        Ok(set)
    }
}

impl<S: Scalar> GradSet<S> {
    pub fn new() -> Self {
        GradSet { entries: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Vec<S>) {
        self.entries.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&[S]> {
        self.entries.get(name).map(Vec::as_slice)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Vec<S>> {
        self.entries.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[S])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// L2 norm of all gradients concatenated.
    pub fn global_norm(&self) -> S {
        self.entries
            .values()
            .flat_map(|g| g.iter())
            .map(|&v| v * v)
            .sum::<S>()
            .sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet<f64> {
        let mut p = ParamSet::new();
        let t = |v: &[f64]| Tensor::from_f64(&[v.len()], v).unwrap();
        p.insert("fc.weight", ParamEntry { tensor: t(&[1.0, 2.0]), is_bn: false, trainable: true }).unwrap();
        p.insert("bn.gamma", ParamEntry { tensor: t(&[1.0]), is_bn: true, trainable: true }).unwrap();
        p.insert("bn.running_var", ParamEntry { tensor: t(&[0.5]), is_bn: true, trainable: false }).unwrap();
        p
    }

    #[test]
    fn load_without_bn_keeps_local_bn_values() {
        let mut local = sample();
        let mut global = sample();
        global.iter_mut().for_each(|(_, e)| e.tensor.data_mut().iter_mut().for_each(|v| *v += 10.0));
        let before = local.clone();
        assert_eq!(local.load_from(&global, false).unwrap(), 2);
        for (name, e) in local.iter() {
            let want = if e.is_bn { before.get(name) } else { global.get(name) };
            assert_eq!(e.tensor, want.unwrap().tensor);
        }
    }

    #[test]
    fn extract_then_load_with_bn_round_trips() {
        let src = sample();
        let mut dst = sample();
        dst.iter_mut().for_each(|(_, e)| e.tensor.data_mut().fill(0.0));
        dst.load_from(&src.extract(true), true).unwrap();
        assert_eq!(dst, src);
        assert_eq!(src.extract(false).len(), 1);
    }

    #[test]
    fn load_reports_missing_and_mismatched_entries() {
        let mut dst = sample();
        let partial = sample().extract(false);
        assert!(matches!(dst.load_from(&partial, true), Err(Error::MissingParam(_))));
        assert!(dst.load_from(&partial, false).is_ok());
        let mut wrong = sample();
        wrong.get_mut("fc.weight").unwrap().tensor = Tensor::zeros(&[3]);
        assert!(matches!(dst.load_from(&wrong, true), Err(Error::Shape { .. })));
    }

    #[test]
    fn checkpoint_round_trip_and_truncation() {
        let p = sample();
        let mut bytes = Vec::new();
        p.write_to(&mut bytes).unwrap();
        assert_eq!(ParamSet::<f64>::read_from(&bytes[..]).unwrap(), p);
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(ParamSet::<f64>::read_from(cut), Err(Error::Truncated { section: "values" })));
    }

    #[test]
    fn grad_norm_is_global() {
        let mut g = GradSet::new();
        g.insert("a", vec![3.0f64]);
        g.insert("b", vec![4.0, 0.0]);
        assert_eq!(g.global_norm(), 5.0);
    }
}
