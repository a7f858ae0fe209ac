//! Moving representations between latent spaces that share a vocabulary
//! but have different LM-heads, and resampling per-layer vector families
//! across models of different depth.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{pseudoinverse, PseudoinverseConfig};
use crate::scalar::Scalar;
use crate::semantic::{
    check_latent, kl_divergence, nearest_basis, semantic_probabilities, SemanticBasisSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    None,
    /// `‖r_y‖ / mean‖s_y‖ = ‖r_x‖ / mean‖s_x‖`.
    #[default]
    NormMatch,
    /// Multiply by the mean target basis norm.
    BasisScale,
}

/// How the target-side weighted combination of unit bases is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combination {
    /// Weights chosen so the result's cosine scores against the target bases
    /// match, in least squares, the scores behind the source probabilities.
    #[default]
    LeastSquares,
    /// `Σ_i cos_i · ŝ_{y,i}`: the target-side resultant of the source scores.
    CosineResultant,
    /// `Σ_i p_i · ŝ_{y,i}`.
    Probability,
}

#[derive(Debug, Clone)]
pub struct TransformPlan<T> {
    pub source: SemanticBasisSet<T>,
    pub target: SemanticBasisSet<T>,
    pub temperature: T,
    pub calibration: Calibration,
    pub combination: Combination,
    target_unit: Array2<T>,
    /// `d_y × v`, pseudoinverse of `target_unit`.
    target_unit_pinv: Array2<T>,
}

impl<T: Scalar> TransformPlan<T> {
    pub fn new(
        source: SemanticBasisSet<T>,
        target: SemanticBasisSet<T>,
        temperature: T,
        calibration: Calibration,
        combination: Combination,
        pinv: &PseudoinverseConfig,
    ) -> Result<Self> {
        if source.vocab_size() != target.vocab_size() {
            return Err(Error::VocabMismatch(source.vocab_size(), target.vocab_size()));
        }
        if !(temperature > T::zero() && temperature.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let target_unit = target.unit_rows();
        let target_unit_pinv = match combination {
            Combination::LeastSquares => pseudoinverse(target_unit.view(), pinv)?,
            _ => Array2::zeros((0, 0)),
        };
        Ok(Self {
            source,
            target,
            temperature,
            calibration,
            combination,
            target_unit,
            target_unit_pinv,
        })
    }
}

/// Maps `r_x` into the target space so its label probabilities are kept.
///
/// The source probabilities are `softmax(cos(r_x, s_x,i) / temperature)`.
/// Their scores `temperature · ln p_i` plus the softmax normaliser are the
/// cosines themselves, which weight the unit target bases according to the
/// plan's [`Combination`]. Magnitude is then fixed by [`calibrate_magnitude`].
pub fn preserve_transform<T: Scalar>(r_x: ArrayView1<'_, T>, plan: &TransformPlan<T>) -> Result<Array1<T>> {
    let p = semantic_probabilities(r_x, &plan.source, plan.temperature)?;
    let scores: Array1<T> = plan
        .source
        .cosines(r_x)?
        .into_iter()
        .map(|c| c.unwrap_or(T::zero()))
        .collect();
    let raw = match plan.combination {
        Combination::LeastSquares => plan.target_unit_pinv.dot(&scores),
        Combination::CosineResultant => plan.target_unit.t().dot(&scores),
        Combination::Probability => plan.target_unit.t().dot(&p.probs),
    };
    calibrate_magnitude(raw.view(), r_x, plan)
}

pub fn calibrate_magnitude<T: Scalar>(
    raw: ArrayView1<'_, T>,
    r_x: ArrayView1<'_, T>,
    plan: &TransformPlan<T>,
) -> Result<Array1<T>> {
    if plan.calibration == Calibration::None {
        return Ok(raw.to_owned());
    }
    let raw_norm = raw.dot(&raw).sqrt();
    if raw_norm == T::zero() {
        return Err(Error::ZeroVector("raw transformed vector under calibration".into()));
    }
    match plan.calibration {
        Calibration::None => unreachable!(),
        Calibration::NormMatch => {
            let rx = check_latent(r_x, plan.source.latent_dim())?;
            let (mx, my) = (plan.source.mean_norm(), plan.target.mean_norm());
            if mx == T::zero() {
                return Err(Error::ZeroVector("source bases".into()));
            }
            let target_norm = rx * my / mx;
            Ok(raw.mapv(|x| x * (target_norm / raw_norm)))
        }
        Calibration::BasisScale => {
            let my = plan.target.mean_norm();
            Ok(raw.mapv(|x| x * my))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowPreservation {
    pub row: usize,
    pub kl: f64,
    pub source_argmax: usize,
    pub target_nearest: usize,
    pub argmax_agrees: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreservationReport {
    pub rows: Vec<RowPreservation>,
    pub mean_kl: f64,
    pub max_kl: f64,
    pub argmax_agreement: f64,
}

/// Transforms every row of an `n × d_x` matrix and measures how well each
/// row's label distribution survives.
pub fn transform_batch<T: Scalar>(
    reps: ArrayView2<'_, T>,
    plan: &TransformPlan<T>,
) -> Result<(Array2<T>, PreservationReport)> {
    if reps.nrows() == 0 {
        return Err(Error::Empty("representation matrix".into()));
    }
    let results = (0..reps.nrows())
        .into_par_iter()
        .map(|i| {
            let r_x = reps.row(i);
            let r_y = preserve_transform(r_x, plan)?;
            let p_x = semantic_probabilities(r_x, &plan.source, plan.temperature)?;
            let p_y = semantic_probabilities(r_y.view(), &plan.target, plan.temperature)?;
            let source_argmax = p_x.argmax();
            let target_nearest = nearest_basis(r_y.view(), &plan.target)?;
            Ok((
                r_y,
                RowPreservation {
                    row: i,
                    kl: kl_divergence(p_x.probs.view(), p_y.probs.view()),
                    source_argmax,
                    target_nearest,
                    argmax_agrees: source_argmax == target_nearest,
                },
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let (vectors, rows): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let views: Vec<ArrayView1<'_, T>> = vectors.iter().map(|v| v.view()).collect();
    let out = ndarray::stack(Axis(0), &views).expect("equal row lengths");
    let n = rows.len() as f64;
    let report = PreservationReport {
        mean_kl: rows.iter().map(|r| r.kl).sum::<f64>() / n,
        max_kl: rows.iter().map(|r| r.kl).fold(0.0, f64::max),
        argmax_agreement: rows.iter().filter(|r| r.argmax_agrees).count() as f64 / n,
        rows,
    };
    Ok((out, report))
}

/// Fractional source-layer position for each target layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthMap {
    pub source_depth: usize,
    pub target_depth: usize,
    pub positions: Vec<f64>,
}

pub fn depth_map(source_depth: usize, target_depth: usize) -> Result<DepthMap> {
    if source_depth == 0 || target_depth == 0 {
        return Err(Error::InvalidArgument("depths must be at least 1".into()));
    }
    let span = (source_depth - 1) as f64;
    let positions = if target_depth == 1 {
        vec![span / 2.0]
    } else {
        let steps = (target_depth - 1) as f64;
        (0..target_depth).map(|j| j as f64 * span / steps).collect()
    };
    Ok(DepthMap {
        source_depth,
        target_depth,
        positions,
    })
}

/// Linear interpolation between the two layers around `position`.
/// Integer positions return the stored vector exactly.
pub fn interpolate_layer_semantics<T: Scalar>(
    per_layer: &[Array1<T>],
    position: f64,
) -> Result<Array1<T>> {
    let Some(last) = per_layer.len().checked_sub(1) else {
        return Err(Error::Empty("per-layer vector list".into()));
    };
    if !(position >= 0.0 && position <= last as f64) {
        return Err(Error::OutOfRange(format!("position {position} outside [0, {last}]")));
    }
    let lo = position.floor() as usize;
    let t = position - lo as f64;
    if t == 0.0 {
        return Ok(per_layer[lo].clone());
    }
    let (a, b) = (&per_layer[lo], &per_layer[lo + 1]);
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!("layer {lo} vs {}", lo + 1)));
    }
    let (wa, wb) = (T::of(1.0 - t), T::of(t));
    Ok(a.mapv(|x| x * wa) + b.mapv(|x| x * wb))
}

/// Resamples a per-layer family onto every position of `map`.
pub fn resample_layers<T: Scalar>(per_layer: &[Array1<T>], map: &DepthMap) -> Result<Vec<Array1<T>>> {
    if per_layer.len() != map.source_depth {
        return Err(Error::ShapeMismatch(format!(
            "{} layers, depth map expects {}",
            per_layer.len(),
            map.source_depth
        )));
    }
    map.positions
        .iter()
        .map(|&p| interpolate_layer_semantics(per_layer, p))
        .collect()
}
