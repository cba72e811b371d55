//! Global L1 unstructured pruning over convolution weights.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{ParamKind, ParamStore, Real};

/// Which parameters are eligible: convolution weights whose names start with
/// one of `prefixes` (all names when empty).
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneScope {
    pub prefixes: Vec<String>,
}

impl PruneScope {
    pub fn all_convs() -> Self {
        Self::default()
    }

    pub fn with_prefix(prefix: &str) -> Self {
        Self { prefixes: vec![prefix.to_string()] }
    }

    pub fn contains(&self, name: &str, kind: ParamKind) -> bool {
        kind == ParamKind::ConvWeight && (self.prefixes.is_empty() || self.prefixes.iter().any(|p| name.starts_with(p.as_str())))
    }
}

/// Binary keep-masks keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PruneMask {
    pub amount: f64,
    pub scope: PruneScope,
    pub masks: BTreeMap<String, Vec<bool>>,
}

impl PruneMask {
    pub fn zeros(&self) -> usize {
        self.masks.values().flatten().filter(|k| !**k).count()
    }

    pub fn total(&self) -> usize {
        self.masks.values().map(Vec::len).sum()
    }

    pub fn sparsity(&self) -> f64 {
        self.zeros() as f64 / self.total().max(1) as f64
    }
}

/// Ranks every in-scope weight of every store by `|w|` (masked entries count
/// as zero) and drops the `floor(amount · N)` smallest. Ties go to the
/// lexicographically smaller name, then the smaller flat index.
pub fn l1_unstructured_prune<T: Real>(stores: &[&ParamStore<T>], scope: &PruneScope, amount: f64) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&amount) {
        return Err(Error::InvalidArgument(format!("prune amount {amount} outside [0, 1)")));
    }
    let mut entries: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for store in stores {
        for (_, p) in store.iter().filter(|(_, p)| scope.contains(&p.name, p.kind)) {
            let values = p.effective().data().iter().map(|v| v.as_f64().abs()).collect();
            if entries.insert(p.name.clone(), values).is_some() {
                return Err(Error::DuplicateParameter(p.name.clone()));
            }
        }
    }
    if entries.is_empty() {
        return Err(Error::EmptyScope(format!("{:?}", scope.prefixes)));
    }
    // names iterate in order, so a stable sort by magnitude keeps the tie rule
    let mut order: Vec<(f64, &str, usize)> =
        entries.iter().flat_map(|(name, v)| v.iter().enumerate().map(move |(i, &m)| (m, name.as_str(), i))).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_prune = (amount * order.len() as f64).floor() as usize;
    let mut masks: BTreeMap<String, Vec<bool>> = entries.iter().map(|(k, v)| (k.clone(), vec![true; v.len()])).collect();
    for &(_, name, i) in &order[..n_prune] {
        masks.get_mut(name).expect("same keys")[i] = false;
    }
    Ok(PruneMask { amount, scope: scope.clone(), masks })
}

/// Installs the masks on every matching parameter of `store` and zeroes the
/// pruned entries in storage. Names absent from `store` are ignored.
pub fn apply_masks<T: Real>(store: &mut ParamStore<T>, mask: &PruneMask) -> Result<()> {
    let mut updates = Vec::new();
    for (id, p) in store.iter() {
        if let Some(m) = mask.masks.get(&p.name) {
            if m.len() != p.numel() {
                return Err(Error::ShapeMismatch { op: "apply_masks", lhs: p.tensor.shape().to_vec(), rhs: vec![m.len()] });
            }
            updates.push((id, m.iter().map(|&k| if k { T::one() } else { T::zero() }).collect::<Vec<_>>()));
        }
    }
    for (id, m) in updates {
        store.set_mask(id, Some(m.clone()))?;
        let p = store.get_mut(id);
        for (w, k) in p.tensor.data_mut().iter_mut().zip(&m) {
            *w *= *k;
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSparsity {
    pub name: String,
    pub total: usize,
    pub zeros: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub params: Vec<ParamSparsity>,
    /// Zero fraction over the scope.
    pub global: f64,
    /// Whole-model counts (all parameters, not only the scope).
    pub raw: usize,
    pub effective: usize,
}

impl SparsityReport {
    pub fn effective_ratio(&self) -> f64 {
        self.effective as f64 / self.raw.max(1) as f64
    }

    /// `key = value` lines, one per parameter, then the totals.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for p in &self.params {
            let frac = p.zeros as f64 / p.total.max(1) as f64;
            let _ = writeln!(s, "{} = {}/{} ({:.4})", p.name, p.zeros, p.total, frac);
        }
        let _ = writeln!(s, "global_sparsity = {:.6}", self.global);
        let _ = writeln!(s, "raw_params = {}", self.raw);
        let _ = writeln!(s, "effective_params = {}", self.effective);
        let _ = writeln!(s, "effective_ratio = {:.6}", self.effective_ratio());
        s
    }
}

/// Zero counts come from the masks only: weights that merely happen to be
/// zero are not counted as pruned.
pub fn sparsity_report<T: Real>(stores: &[&ParamStore<T>], scope: &PruneScope) -> SparsityReport {
    let mut params = Vec::new();
    let (mut raw, mut effective) = (0, 0);
    for store in stores {
        raw += store.count("", false);
        effective += store.count("", true);
        for (_, p) in store.iter().filter(|(_, p)| scope.contains(&p.name, p.kind)) {
            params.push(ParamSparsity { name: p.name.clone(), total: p.numel(), zeros: p.masked_count() });
        }
    }
    params.sort_by(|a, b| a.name.cmp(&b.name));
    let total: usize = params.iter().map(|p| p.total).sum();
    let zeros: usize = params.iter().map(|p| p.zeros).sum();
    SparsityReport { params, global: zeros as f64 / total.max(1) as f64, raw, effective }
}
