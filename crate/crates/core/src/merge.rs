//! Data-free merging against a pivot model.
//!
//! Each model contributes a fusion vector `δ_k = θ_k − θ_pivot`. Elements
//! whose deltas vary most across models are selected per tensor, each model
//! gets a coefficient proportional to the squared magnitude of its selected
//! entries, entries disagreeing with the element's majority sign are
//! erased, and the result is `θ_pivot + Σ_k η_k · δ′_k`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bundle::ModelBundle;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionVector<T = f32> {
    pub source_model_id: String,
    /// Keyed by tensor name; same names and shapes as the pivot.
    pub deltas: BTreeMap<String, Tensor<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMask {
    pub tau: f64,
    pub masks: BTreeMap<String, Vec<bool>>,
}

impl SelectionMask {
    pub fn retained(&self, name: &str) -> usize {
        self.masks.get(name).map_or(0, |m| m.iter().filter(|&&b| b).count())
    }

    /// True when every element kept here is also kept by `other`.
    pub fn is_subset_of(&self, other: &SelectionMask) -> bool {
        self.masks.iter().all(|(name, m)| {
            other.masks.get(name).is_some_and(|o| {
                o.len() == m.len() && m.iter().zip(o).all(|(&a, &b)| !a || b)
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    SumToOne,
    MeanOne,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeCoefficients {
    /// One per fusion vector, in input order.
    pub etas: Vec<f64>,
    pub raw: Vec<f64>,
    pub normalization: Normalization,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErasePolicy {
    #[default]
    MajoritySign,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// Equal positive and negative counts zero every entry of the element.
    #[default]
    DropAll,
    /// Keep the side with the larger summed magnitude; exact ties drop all.
    KeepLargerMagnitudeSide,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeRecipe {
    /// Retained percentage per tensor, in `(0, 100]`.
    pub tau: f64,
    pub normalization: Normalization,
    pub erase: ErasePolicy,
    pub tie: TiePolicy,
}

impl Default for MergeRecipe {
    fn default() -> Self {
        Self {
            tau: 20.0,
            normalization: Normalization::default(),
            erase: ErasePolicy::default(),
            tie: TiePolicy::default(),
        }
    }
}

impl MergeRecipe {
    pub fn validate(&self) -> Result<()> {
        check_tau(self.tau)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 100.0) {
        return Err(Error::OutOfRange(format!("tau must lie in (0, 100], got {tau}")));
    }
    Ok(())
}

pub fn fusion_vectors<T: Scalar>(
    models: &[ModelBundle<T>],
    pivot: &ModelBundle<T>,
) -> Result<Vec<FusionVector<T>>> {
    if models.is_empty() {
        return Err(Error::Empty("no models to merge".into()));
    }
    models
        .iter()
        .map(|m| {
            pivot.check_congruent(m)?;
            let deltas = m
                .tensors()
                .into_iter()
                .zip(pivot.tensors())
                .map(|(t, p)| {
                    let data = t.data().iter().zip(p.data()).map(|(&a, &b)| a - b).collect();
                    Ok((t.name().to_string(), t.with_data(data)?))
                })
                .collect::<Result<_>>()?;
            Ok(FusionVector {
                source_model_id: m.model_id.clone(),
                deltas,
            })
        })
        .collect()
}

fn check_schema<T: Scalar>(deltas: &[FusionVector<T>]) -> Result<()> {
    let Some(first) = deltas.first() else {
        return Err(Error::Empty("no fusion vectors".into()));
    };
    for fv in &deltas[1..] {
        let same = fv.deltas.len() == first.deltas.len()
            && fv
                .deltas
                .iter()
                .zip(&first.deltas)
                .all(|((na, a), (nb, b))| na == nb && a.shape() == b.shape());
        if !same {
            return Err(Error::ShapeMismatch(format!(
                "fusion vector {:?} does not match {:?}",
                fv.source_model_id, first.source_model_id
            )));
        }
    }
    Ok(())
}

/// Number of elements kept out of `n` at `tau` percent.
pub fn retained_count(tau: f64, n: usize) -> usize {
    (((tau * n as f64) / 100.0).ceil() as usize).clamp(1, n)
}

/// Per tensor, keeps the `ceil(τ% · n)` elements with the largest population
/// variance across the deltas (absolute value when there is a single
/// delta). Cutoff ties go to the lower flattened index.
pub fn select_top_variance<T: Scalar>(deltas: &[FusionVector<T>], tau: f64) -> Result<SelectionMask> {
    check_tau(tau)?;
    check_schema(deltas)?;
    let k = deltas.len() as f64;
    let mut masks = BTreeMap::new();
    for name in deltas[0].deltas.keys() {
        let columns: Vec<&[T]> = deltas.iter().map(|fv| fv.deltas[name].data()).collect();
        let n = columns[0].len();
        let scores: Vec<f64> = (0..n)
            .map(|i| {
                if deltas.len() == 1 {
                    return columns[0][i].as_f64().abs();
                }
                let mean = columns.iter().map(|c| c[i].as_f64()).sum::<f64>() / k;
                columns
                    .iter()
                    .map(|c| {
                        let x = c[i].as_f64() - mean;
                        x * x
                    })
                    .sum::<f64>()
                    / k
            })
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let mut mask = vec![false; n];
        for &i in &order[..retained_count(tau, n)] {
            mask[i] = true;
        }
        masks.insert(name.clone(), mask);
    }
    Ok(SelectionMask { tau, masks })
}

fn check_mask<T: Scalar>(deltas: &[FusionVector<T>], mask: &SelectionMask) -> Result<()> {
    check_schema(deltas)?;
    let first = &deltas[0].deltas;
    if mask.masks.len() != first.len()
        || first
            .iter()
            .any(|(name, t)| mask.masks.get(name).map(Vec::len) != Some(t.numel()))
    {
        return Err(Error::ShapeMismatch("selection mask does not match the deltas".into()));
    }
    Ok(())
}

/// Model order used for every cross-model reduction: ascending model id,
/// input order among equal ids.
fn id_order<T>(deltas: &[FusionVector<T>]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..deltas.len()).collect();
    order.sort_by(|&a, &b| deltas[a].source_model_id.cmp(&deltas[b].source_model_id));
    order
}

/// `raw_k = Σ δ_k²` over the selected entries of every tensor, then
/// normalised. All-zero raw values fall back to uniform weights.
pub fn compute_coefficients<T: Scalar>(
    deltas: &[FusionVector<T>],
    mask: &SelectionMask,
    normalization: Normalization,
) -> Result<MergeCoefficients> {
    check_mask(deltas, mask)?;
    let raw: Vec<f64> = deltas
        .iter()
        .map(|fv| {
            fv.deltas
                .iter()
                .map(|(name, t)| {
                    t.data()
                        .iter()
                        .zip(&mask.masks[name])
                        .filter(|(_, &keep)| keep)
                        .map(|(x, _)| x.as_f64() * x.as_f64())
                        .sum::<f64>()
                })
                .sum()
        })
        .collect();
    let order = id_order(deltas);
    let total: f64 = order.iter().map(|&i| raw[i]).sum();
    let (weights, total) = if total == 0.0 {
        tracing::warn!("every selected delta is zero; using uniform coefficients");
        (vec![1.0; raw.len()], raw.len() as f64)
    } else {
        (raw.clone(), total)
    };
    let k = deltas.len() as f64;
    let etas = match normalization {
        Normalization::SumToOne => weights.iter().map(|w| w / total).collect(),
        Normalization::MeanOne => weights.iter().map(|w| w * k / total).collect(),
        Normalization::Raw => weights,
    };
    Ok(MergeCoefficients {
        etas,
        raw,
        normalization,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EraseStats {
    /// Selected elements whose non-zero entries had mixed signs.
    pub conflicts: usize,
    /// Conflicting elements with equal positive and negative counts.
    pub ties: usize,
    /// Non-zero selected entries zeroed by sign election.
    pub erased: usize,
}

/// Zeroes unselected entries everywhere and, on selected entries, every
/// entry whose sign disagrees with the sign of `Σ_k sign(δ_k)`.
pub fn erase_sign_minority<T: Scalar>(
    deltas: &[FusionVector<T>],
    mask: &SelectionMask,
    tie_policy: TiePolicy,
) -> Result<Vec<FusionVector<T>>> {
    Ok(prune(deltas, mask, Some(tie_policy))?.0)
}

fn prune<T: Scalar>(
    deltas: &[FusionVector<T>],
    mask: &SelectionMask,
    tie_policy: Option<TiePolicy>,
) -> Result<(Vec<FusionVector<T>>, BTreeMap<String, EraseStats>)> {
    check_mask(deltas, mask)?;
    let mut out: Vec<FusionVector<T>> = deltas.to_vec();
    let mut stats = BTreeMap::new();
    for (name, keep) in &mask.masks {
        let mut st = EraseStats::default();
        let mut values: Vec<T> = vec![T::zero(); deltas.len()];
        for (i, &selected) in keep.iter().enumerate() {
            if !selected {
                for fv in out.iter_mut() {
                    fv.deltas.get_mut(name).expect("checked").data_mut()[i] = T::zero();
                }
                continue;
            }
            let Some(tie_policy) = tie_policy else { continue };
            for (v, fv) in values.iter_mut().zip(deltas) {
                *v = fv.deltas[name].data()[i];
            }
            let Some(zap) = minority(&values, tie_policy, &mut st) else { continue };
            for (k, fv) in out.iter_mut().enumerate() {
                if zap(values[k]) {
                    fv.deltas.get_mut(name).expect("checked").data_mut()[i] = T::zero();
                    st.erased += 1;
                }
            }
        }
        stats.insert(name.clone(), st);
    }
    Ok((out, stats))
}

/// Predicate selecting the entries to erase for one element, or `None` when
/// the element has no sign conflict.
fn minority<T: Scalar>(
    values: &[T],
    tie_policy: TiePolicy,
    st: &mut EraseStats,
) -> Option<fn(T) -> bool> {
    let pos = values.iter().filter(|&&x| x > T::zero()).count();
    let neg = values.iter().filter(|&&x| x < T::zero()).count();
    if pos == 0 || neg == 0 {
        return None;
    }
    st.conflicts += 1;
    fn is_pos<T: Scalar>(x: T) -> bool {
        x > T::zero()
    }
    fn is_neg<T: Scalar>(x: T) -> bool {
        x < T::zero()
    }
    fn is_nonzero<T: Scalar>(x: T) -> bool {
        x != T::zero()
    }
    Some(match pos.cmp(&neg) {
        std::cmp::Ordering::Greater => is_neg::<T>,
        std::cmp::Ordering::Less => is_pos::<T>,
        std::cmp::Ordering::Equal => {
            st.ties += 1;
            match tie_policy {
                TiePolicy::DropAll => is_nonzero::<T>,
                TiePolicy::KeepLargerMagnitudeSide => {
                    let mp: f64 = values.iter().filter(|&&x| x > T::zero()).map(|x| x.as_f64()).sum();
                    let mn: f64 = values.iter().filter(|&&x| x < T::zero()).map(|x| -x.as_f64()).sum();
                    match mp.total_cmp(&mn) {
                        std::cmp::Ordering::Greater => is_neg::<T>,
                        std::cmp::Ordering::Less => is_pos::<T>,
                        std::cmp::Ordering::Equal => is_nonzero::<T>,
                    }
                }
            }
        }
    })
}

/// `θ_pivot + Σ_k η_k · δ′_k`, accumulated per element in ascending
/// model-id order. Exactly-zero terms are skipped, so all-zero deltas
/// return the pivot bit for bit.
pub fn apply_merge<T: Scalar>(
    pivot: &ModelBundle<T>,
    deltas_pruned: &[FusionVector<T>],
    etas: &MergeCoefficients,
) -> Result<ModelBundle<T>> {
    if etas.etas.len() != deltas_pruned.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} coefficients for {} fusion vectors",
            etas.etas.len(),
            deltas_pruned.len()
        )));
    }
    for fv in deltas_pruned {
        for t in pivot.tensors() {
            match fv.deltas.get(t.name()) {
                Some(d) if d.shape() == t.shape() => {}
                _ => {
                    return Err(Error::ShapeMismatch(format!(
                        "fusion vector {:?} lacks a congruent {:?}",
                        fv.source_model_id,
                        t.name()
                    )))
                }
            }
        }
        if fv.deltas.len() != pivot.tensors().len() {
            return Err(Error::ShapeMismatch(format!(
                "fusion vector {:?} has extra tensors",
                fv.source_model_id
            )));
        }
    }
    let order = id_order(deltas_pruned);
    let merged = pivot.map_tensors(|t| {
        let mut acc = t.data().to_vec();
        for &k in &order {
            let eta = T::of(etas.etas[k]);
            let d = deltas_pruned[k].deltas[t.name()].data();
            for (a, &x) in acc.iter_mut().zip(d) {
                if x != T::zero() {
                    *a = *a + eta * x;
                }
            }
        }
        let out = t.with_data(acc)?;
        out.check_finite()?;
        Ok(out)
    })?;
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMergeStats {
    pub name: String,
    pub elements: usize,
    pub retained: usize,
    pub conflicts: usize,
    pub ties: usize,
    pub erased: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCoefficient {
    pub model_id: String,
    pub eta: f64,
    pub raw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeReport {
    pub recipe: MergeRecipe,
    pub pivot_id: String,
    pub coefficients: Vec<ModelCoefficient>,
    pub tensors: Vec<TensorMergeStats>,
    pub total_retained: usize,
    pub total_conflicts: usize,
    pub total_erased: usize,
}

/// Full pipeline: fusion vectors, selection, coefficients, erasure, merge.
pub fn merge<T: Scalar>(
    models: &[ModelBundle<T>],
    pivot: &ModelBundle<T>,
    recipe: &MergeRecipe,
) -> Result<(ModelBundle<T>, MergeReport)> {
    recipe.validate()?;
    let deltas = fusion_vectors(models, pivot)?;
    let mask = select_top_variance(&deltas, recipe.tau)?;
    let coefficients = compute_coefficients(&deltas, &mask, recipe.normalization)?;
    let tie = match recipe.erase {
        ErasePolicy::MajoritySign => Some(recipe.tie),
        ErasePolicy::Off => None,
    };
    let (pruned, stats) = prune(&deltas, &mask, tie)?;
    let mut merged = apply_merge(pivot, &pruned, &coefficients)?;

    let mut ids: Vec<&str> = models.iter().map(|m| m.model_id.as_str()).collect();
    ids.sort_unstable();
    merged.metadata.insert("merged_from".into(), ids.join(","));

    let tensors: Vec<TensorMergeStats> = mask
        .masks
        .iter()
        .map(|(name, m)| {
            let st = &stats[name];
            TensorMergeStats {
                name: name.clone(),
                elements: m.len(),
                retained: mask.retained(name),
                conflicts: st.conflicts,
                ties: st.ties,
                erased: st.erased,
            }
        })
        .collect();
    let report = MergeReport {
        recipe: *recipe,
        pivot_id: pivot.model_id.clone(),
        coefficients: deltas
            .iter()
            .zip(coefficients.etas.iter().zip(&coefficients.raw))
            .map(|(fv, (&eta, &raw))| ModelCoefficient {
                model_id: fv.source_model_id.clone(),
                eta,
                raw,
            })
            .collect(),
        total_retained: tensors.iter().map(|t| t.retained).sum(),
        total_conflicts: tensors.iter().map(|t| t.conflicts).sum(),
        total_erased: tensors.iter().map(|t| t.erased).sum(),
        tensors,
    };
    Ok((merged, report))
}
