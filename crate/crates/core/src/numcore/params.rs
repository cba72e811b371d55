use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numcore::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// What role a parameter plays. Pruning selects on this.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamKind {
    ConvWeight,
    Bias,
    NormAffine,
    Slope,
    Linear,
}

impl ParamKind {
    pub fn tag(self) -> u8 {
        match self {
            ParamKind::ConvWeight => 0,
            ParamKind::Bias => 1,
            ParamKind::NormAffine => 2,
            ParamKind::Slope => 3,
            ParamKind::Linear => 4,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => ParamKind::ConvWeight,
            1 => ParamKind::Bias,
            2 => ParamKind::NormAffine,
            3 => ParamKind::Slope,
            4 => ParamKind::Linear,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
    /// Binary keep-mask; effective weight is `tensor ⊙ mask`.
    pub mask: Option<Vec<T>>,
}

impl<T: Real> Parameter<T> {
    pub fn effective(&self) -> Tensor<T> {
        match &self.mask {
            None => self.tensor.clone(),
            Some(m) => {
                let data = self.tensor.data().iter().zip(m).map(|(&w, &k)| w * k).collect();
                Tensor::new(self.tensor.shape(), data).expect("mask shape checked on insert")
            }
        }
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }

    /// Entries that are zero under the mask.
    pub fn masked_count(&self) -> usize {
        self.mask.as_ref().map_or(0, |m| m.iter().filter(|v| **v == T::zero()).count())
    }
}

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

/// Named parameter registry shared by the generator and discriminator.
///
/// Each store carries a process-unique tag (kept by clones) so one tape can
/// read from several stores without their [`ParamId`]s colliding.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
    tag: u64,
}

impl<T: PartialEq> PartialEq for ParamStore<T> {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: HashMap::new(), tag: NEXT_TAG.fetch_add(1, Ordering::Relaxed) }
    }

    pub fn tag(&self) -> u64 {
        self.tag
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::DuplicateParameter(name));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id.0);
        self.params.push(Parameter { name, kind, tensor, mask: None });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index.get(name).map(|&i| ParamId(i)).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn by_name(&self, name: &str) -> Result<&Parameter<T>> {
        Ok(self.get(self.id(name)?))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn set_mask(&mut self, id: ParamId, mask: Option<Vec<T>>) -> Result<()> {
        let p = &mut self.params[id.0];
        if let Some(m) = &mask {
            if m.len() != p.tensor.numel() {
                return Err(Error::ShapeMismatch { op: "set_mask", lhs: p.tensor.shape().to_vec(), rhs: vec![m.len()] });
            }
        }
        p.mask = mask;
        Ok(())
    }

    /// Raw or effective (mask-aware) parameter count over names starting with `prefix`.
    pub fn count(&self, prefix: &str, effective: bool) -> usize {
        self.params
            .iter()
            .filter(|p| p.name.starts_with(prefix))
            .map(|p| if effective { p.numel() - p.masked_count() } else { p.numel() })
            .sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    kind: p.kind,
                    tensor: p.tensor.cast(),
                    mask: p.mask.as_ref().map(|m| m.iter().map(|v| U::lit(v.as_f64())).collect()),
                })
                .collect(),
            index: self.index.clone(),
            tag: self.tag,
        }
    }
}

/// Parameter initializers used by model builders.
pub struct Init;

impl Init {
    /// Kaiming-uniform style: U(−b, b) with b = gain / sqrt(fan_in).
    pub fn uniform<T: Real, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut R) -> Tensor<T> {
        let bound = gain / (fan_in.max(1) as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
        Tensor::new(shape, data).expect("sized from shape")
    }

    pub fn normal<T: Real, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
        let dist = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
        Tensor::new(shape, data).expect("sized from shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::<f64>::new();
        s.insert("a.w", ParamKind::ConvWeight, Tensor::zeros(&[2])).unwrap();
        assert!(matches!(s.insert("a.w", ParamKind::Bias, Tensor::zeros(&[1])), Err(Error::DuplicateParameter(_))));
    }

    #[test]
    fn effective_count_honours_mask() {
        let mut s = ParamStore::<f64>::new();
        let id = s.insert("g.w", ParamKind::ConvWeight, Tensor::ones(&[4])).unwrap();
        s.insert("d.w", ParamKind::ConvWeight, Tensor::ones(&[3])).unwrap();
        s.set_mask(id, Some(vec![1., 0., 0., 1.])).unwrap();
        assert_eq!(s.count("", false), 7);
        assert_eq!(s.count("", true), 5);
        assert_eq!(s.count("g.", true), 2);
        assert_eq!(s.get(id).effective().data(), &[1., 0., 0., 1.]);
        assert!(s.set_mask(id, Some(vec![1.0])).is_err());
    }

    #[test]
    fn empty_registry_counts_zero() {
        assert_eq!(ParamStore::<f32>::new().count("", false), 0);
    }
}
