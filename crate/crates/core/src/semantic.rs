//! Vocabulary-defined semantics: one latent-space basis vector per
//! vocabulary label, taken from the rows of the LM-head pseudoinverse, and
//! the probability a representation assigns to each label.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::archive::TensorArchive;
use crate::bundle::ModelBundle;
use crate::error::{Error, Result};
use crate::linalg::{pseudoinverse, row_norms, PseudoinverseConfig};
use crate::scalar::Scalar;
use crate::tensor::{content_fingerprint, Tensor};

pub const BASES_TENSOR: &str = "bases";
pub const FINGERPRINT_KEY: &str = "source_fingerprint";
pub const RCOND_KEY: &str = "rcond";

/// `v × d` matrix whose row `i` is the semantic basis of label `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticBasisSet<T> {
    bases: Array2<T>,
    norms: Array1<T>,
    pub source_head_fingerprint: String,
    pub rcond: f64,
}

impl<T: Scalar> SemanticBasisSet<T> {
    /// Bases of a `d × v` head: row `i` of `W⁺`, i.e. `e_i · W⁺`.
    pub fn from_head(head: ArrayView2<'_, T>, cfg: &PseudoinverseConfig) -> Result<Self> {
        let pinv = pseudoinverse(head, cfg)?;
        let data: Vec<T> = head.iter().copied().collect();
        let fp = content_fingerprint(&[head.nrows(), head.ncols()], &data);
        let set = Self::from_matrix(pinv, fp)?;
        Ok(Self { rcond: cfg.rcond, ..set })
    }

    /// Wraps an explicit `v × d` basis matrix.
    pub fn from_matrix(bases: Array2<T>, fingerprint: impl Into<String>) -> Result<Self> {
        if bases.nrows() == 0 || bases.ncols() == 0 {
            return Err(Error::Empty("basis matrix".into()));
        }
        if bases.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("basis matrix".into()));
        }
        let norms = row_norms(bases.view());
        let zero = norms.iter().filter(|&&n| n == T::zero()).count();
        if zero > 0 {
            tracing::warn!(zero_rows = zero, "semantic bases contain zero-norm rows");
        }
        Ok(Self {
            bases,
            norms,
            source_head_fingerprint: fingerprint.into(),
            rcond: 0.0,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.bases.nrows()
    }

    pub fn latent_dim(&self) -> usize {
        self.bases.ncols()
    }

    pub fn matrix(&self) -> ArrayView2<'_, T> {
        self.bases.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, T> {
        self.bases.row(i)
    }

    pub fn norms(&self) -> ArrayView1<'_, T> {
        self.norms.view()
    }

    pub fn zero_rows(&self) -> Vec<usize> {
        (0..self.vocab_size()).filter(|&i| self.norms[i] == T::zero()).collect()
    }

    /// Mean Euclidean norm over non-zero rows.
    pub fn mean_norm(&self) -> T {
        let nz: Vec<T> = self.norms.iter().copied().filter(|&n| n > T::zero()).collect();
        if nz.is_empty() {
            return T::zero();
        }
        nz.iter().copied().sum::<T>() / T::of(nz.len() as f64)
    }

    /// Rows scaled to unit length; zero rows stay zero.
    pub fn unit_rows(&self) -> Array2<T> {
        let mut out = self.bases.clone();
        for (mut row, &n) in out.rows_mut().into_iter().zip(&self.norms) {
            if n > T::zero() {
                row.mapv_inplace(|x| x / n);
            }
        }
        out
    }

    /// `cos(r, s_i)` for every label; `None` for zero-norm bases.
    pub fn cosines(&self, r: ArrayView1<'_, T>) -> Result<Vec<Option<T>>> {
        let rn = check_latent(r, self.latent_dim())?;
        let dots = self.bases.dot(&r);
        Ok(dots
            .iter()
            .zip(&self.norms)
            .map(|(&dot, &n)| (n > T::zero()).then(|| dot / (n * rn)))
            .collect())
    }

    /// `bases` tensor plus fingerprint and rcond metadata.
    pub fn to_archive(&self) -> Result<TensorArchive> {
        let t = Tensor::from_array2(BASES_TENSOR, self.bases.view()).cast::<f32>();
        Ok(TensorArchive::from_tensors(vec![t])?
            .with_metadata(FINGERPRINT_KEY, self.source_head_fingerprint.clone())
            .with_metadata(RCOND_KEY, format!("{:e}", self.rcond)))
    }

    pub fn from_archive(archive: &TensorArchive) -> Result<Self> {
        let t = archive
            .get(BASES_TENSOR)
            .ok_or_else(|| Error::InvalidArgument(format!("archive has no {BASES_TENSOR:?} tensor")))?;
        let fp = archive.metadata.get(FINGERPRINT_KEY).cloned().unwrap_or_default();
        let rcond = archive
            .metadata
            .get(RCOND_KEY)
            .and_then(|s| s.parse().ok())
            .unwrap_or(0.0);
        let set = Self::from_matrix(t.cast::<T>().to_array2()?, fp)?;
        Ok(Self { rcond, ..set })
    }
}

pub fn semantic_bases<T: Scalar>(
    bundle: &ModelBundle<T>,
    cfg: &PseudoinverseConfig,
) -> Result<SemanticBasisSet<T>> {
    let head = bundle.lm_head.to_array2()?;
    let mut set = SemanticBasisSet::from_head(head.view(), cfg)?;
    set.source_head_fingerprint = bundle.lm_head.fingerprint();
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityMode {
    CosineSoftmax,
    LogitSoftmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector<T> {
    pub probs: Array1<T>,
    pub mode: ProbabilityMode,
}

impl<T: Scalar> ProbabilityVector<T> {
    pub fn argmax(&self) -> usize {
        argmax(self.probs.iter().copied().map(Some))
    }
}

/// Softmax of the cosine similarities divided by `temperature`. Labels
/// with zero-norm bases get probability zero.
pub fn semantic_probabilities<T: Scalar>(
    r: ArrayView1<'_, T>,
    bases: &SemanticBasisSet<T>,
    temperature: T,
) -> Result<ProbabilityVector<T>> {
    check_temperature(temperature)?;
    let cos = bases.cosines(r)?;
    if cos.iter().all(Option::is_none) {
        return Err(Error::ZeroVector("every semantic basis has zero norm".into()));
    }
    let scores: Vec<Option<T>> = cos.into_iter().map(|c| c.map(|c| c / temperature)).collect();
    Ok(ProbabilityVector {
        probs: softmax_masked(&scores),
        mode: ProbabilityMode::CosineSoftmax,
    })
}

/// Reference distribution `softmax(r · W / temperature)` for a `d × v` head.
pub fn logit_probabilities<T: Scalar>(
    r: ArrayView1<'_, T>,
    head: ArrayView2<'_, T>,
    temperature: T,
) -> Result<ProbabilityVector<T>> {
    check_temperature(temperature)?;
    if r.len() != head.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "representation length {} vs head rows {}",
            r.len(),
            head.nrows()
        )));
    }
    let logits = r.dot(&head);
    let scores: Vec<Option<T>> = logits.iter().map(|&l| Some(l / temperature)).collect();
    Ok(ProbabilityVector {
        probs: softmax_masked(&scores),
        mode: ProbabilityMode::LogitSoftmax,
    })
}

/// Label whose basis has the highest cosine with `r`; lowest index on ties.
pub fn nearest_basis<T: Scalar>(r: ArrayView1<'_, T>, bases: &SemanticBasisSet<T>) -> Result<usize> {
    let cos = bases.cosines(r)?;
    if cos.iter().all(Option::is_none) {
        return Err(Error::ZeroVector("every semantic basis has zero norm".into()));
    }
    Ok(argmax(cos.into_iter()))
}

fn argmax<T: Scalar>(xs: impl Iterator<Item = Option<T>>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, x) in xs.enumerate() {
        if let Some(x) = x {
            match best {
                Some((_, b)) if x <= b => {}
                _ => best = Some((i, x)),
            }
        }
    }
    best.map(|(i, _)| i).unwrap_or(0)
}

pub(crate) fn softmax_masked<T: Scalar>(scores: &[Option<T>]) -> Array1<T> {
    let max = scores
        .iter()
        .flatten()
        .copied()
        .fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scores
        .iter()
        .map(|s| s.map_or(T::zero(), |s| (s - max).exp()))
        .collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `KL(p ‖ q)` in nats, computed in `f64`. Terms with `p_i = 0` vanish.
pub fn kl_divergence<T: Scalar>(p: ArrayView1<'_, T>, q: ArrayView1<'_, T>) -> f64 {
    p.iter()
        .zip(q.iter())
        .map(|(&pi, &qi)| {
            let (pi, qi) = (pi.as_f64(), qi.as_f64());
            if pi == 0.0 {
                0.0
            } else {
                pi * (pi / qi).ln()
            }
        })
        .sum::<f64>()
        .max(0.0)
}

pub(crate) fn check_latent<T: Scalar>(r: ArrayView1<'_, T>, d: usize) -> Result<T> {
    if r.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "representation has length {}, latent dim is {d}",
            r.len()
        )));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("representation".into()));
    }
    let n = r.dot(&r).sqrt();
    if n == T::zero() {
        return Err(Error::ZeroVector("representation has zero norm".into()));
    }
    Ok(n)
}

fn check_temperature<T: Scalar>(t: T) -> Result<()> {
    if !(t > T::zero() && t.is_finite()) {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {t}")));
    }
    Ok(())
}
