//! Resolution of a representation into per-label components along the
//! semantic bases, re-accumulation into a resultant, and the seeded
//! experiment comparing the resultant's direction against the original for
//! true and random bases.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::ModelBundle;
use crate::error::{Error, Result};
use crate::linalg::PseudoinverseConfig;
use crate::scalar::Scalar;
use crate::semantic::{check_latent, semantic_bases, SemanticBasisSet};

/// Orthogonal projection of `r` onto the line spanned by `s`.
pub fn project<T: Scalar>(r: ArrayView1<'_, T>, s: ArrayView1<'_, T>) -> Result<Array1<T>> {
    if r.len() != s.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {}", r.len(), s.len())));
    }
    let ss = s.dot(&s);
    if ss == T::zero() {
        return Err(Error::ZeroVector("projection direction".into()));
    }
    let coef = r.dot(&s) / ss;
    Ok(s.mapv(|x| coef * x))
}

/// Per-label components `c_i = proj(r, s_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSet<T> {
    /// `v × d`; rows of zero-norm bases are zero.
    pub components: Array2<T>,
    pub skipped: Vec<usize>,
    pub source: Array1<T>,
}

pub fn decompose<T: Scalar>(r: ArrayView1<'_, T>, bases: &SemanticBasisSet<T>) -> Result<ComponentSet<T>> {
    check_latent(r, bases.latent_dim())?;
    let mut components = Array2::zeros((bases.vocab_size(), bases.latent_dim()));
    let mut skipped = Vec::new();
    for i in 0..bases.vocab_size() {
        match project(r, bases.row(i)) {
            Ok(c) => components.row_mut(i).assign(&c),
            Err(Error::ZeroVector(_)) => skipped.push(i),
            Err(e) => return Err(e),
        }
    }
    if !skipped.is_empty() {
        tracing::warn!(skipped = skipped.len(), "zero-norm bases skipped in decomposition");
    }
    Ok(ComponentSet {
        components,
        skipped,
        source: r.to_owned(),
    })
}

/// `Σ c_i`, summed in label order.
pub fn resultant<T: Scalar>(components: &ComponentSet<T>) -> Result<Array1<T>> {
    sum_rows(components.components.view())
}

pub(crate) fn sum_rows<T: Scalar>(rows: ArrayView2<'_, T>) -> Result<Array1<T>> {
    if rows.nrows() == 0 {
        return Err(Error::Empty("component set".into()));
    }
    let mut acc = Array1::<T>::zeros(rows.ncols());
    for row in rows.rows() {
        acc.zip_mut_with(&row, |a, &x| *a = *a + x);
    }
    Ok(acc)
}

/// Resultant without materialising the components:
/// `Σ_i ((r·s_i)/(s_i·s_i)) s_i = Sᵀ w`.
pub fn resultant_of<T: Scalar>(r: ArrayView1<'_, T>, bases: ArrayView2<'_, T>) -> Array1<T> {
    let dots = bases.dot(&r);
    let w: Array1<T> = dots
        .iter()
        .zip(bases.rows())
        .map(|(&d, s)| {
            let ss = s.dot(&s);
            if ss == T::zero() {
                T::zero()
            } else {
                d / ss
            }
        })
        .collect();
    bases.t().dot(&w)
}

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn parallelism_score<T: Scalar>(r: ArrayView1<'_, T>, resultant: ArrayView1<'_, T>) -> Result<T> {
    if r.len() != resultant.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {}", r.len(), resultant.len())));
    }
    let (nr, nx) = (r.dot(&r).sqrt(), resultant.dot(&resultant).sqrt());
    if nr == T::zero() || nx == T::zero() {
        return Err(Error::ZeroVector("parallelism of a zero vector".into()));
    }
    Ok((r.dot(&resultant) / (nr * nx)).max(-T::one()).min(T::one()))
}

/// How each trial's representation is drawn.
#[derive(Debug, Clone, PartialEq)]
pub enum RepresentationSampling<T> {
    /// i.i.d. standard normal coordinates.
    Gaussian,
    /// A uniformly chosen row of an `n × d` activation matrix.
    Rows(Array2<T>),
}

/// Distribution of the control bases' entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RandomBasisDistribution {
    #[default]
    Gaussian,
    /// Uniform on `[-1, 1]`.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationConfig<T> {
    pub trials: usize,
    pub seed: u64,
    pub representation: RepresentationSampling<T>,
    pub random_basis: RandomBasisDistribution,
    /// Report threshold on the mean semantic parallelism.
    pub floor: f64,
}

impl<T> ValidationConfig<T> {
    pub fn gaussian(trials: usize, seed: u64) -> Self {
        Self {
            trials,
            seed,
            representation: RepresentationSampling::Gaussian,
            random_basis: RandomBasisDistribution::Gaussian,
            floor: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub parallelism_semantic: f64,
    pub parallelism_random: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub vocab_size: usize,
    pub latent_dim: usize,
    pub trials: usize,
    pub seed: u64,
    pub representation: String,
    pub random_basis: RandomBasisDistribution,
    pub floor: f64,
    pub parallelism_semantic: f64,
    pub parallelism_semantic_std: f64,
    pub parallelism_random: f64,
    pub parallelism_random_std: f64,
    pub meets_floor: bool,
    pub per_trial: Vec<TrialRecord>,
}

impl ValidationReport {
    /// `trial,parallelism` rows for the semantic bases.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,parallelism\r\n");
        for t in &self.per_trial {
            out.push_str(&format!("{},{}\r\n", t.trial, t.parallelism_semantic));
        }
        out
    }
}

pub fn run_validation<T: Scalar>(
    bundle: &ModelBundle<T>,
    pinv: &PseudoinverseConfig,
    cfg: &ValidationConfig<T>,
) -> Result<ValidationReport> {
    let bases = semantic_bases(bundle, pinv)?;
    run_validation_with_bases(&bases, cfg)
}

/// Every trial uses its own generator seeded with `seed + trial`, so the
/// report does not depend on how trials are scheduled.
pub fn run_validation_with_bases<T: Scalar>(
    bases: &SemanticBasisSet<T>,
    cfg: &ValidationConfig<T>,
) -> Result<ValidationReport> {
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    let (v, d) = (bases.vocab_size(), bases.latent_dim());
    if let RepresentationSampling::Rows(rows) = &cfg.representation {
        if rows.nrows() == 0 || rows.ncols() != d {
            return Err(Error::ShapeMismatch(format!(
                "activation rows are {:?}, latent dim is {d}",
                rows.dim()
            )));
        }
    }
    let per_trial = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| run_trial(bases, cfg, trial))
        .collect::<Result<Vec<_>>>()?;

    let (ms, ss) = mean_std(per_trial.iter().map(|t| t.parallelism_semantic));
    let (mr, sr) = mean_std(per_trial.iter().map(|t| t.parallelism_random));
    Ok(ValidationReport {
        vocab_size: v,
        latent_dim: d,
        trials: cfg.trials,
        seed: cfg.seed,
        representation: match cfg.representation {
            RepresentationSampling::Gaussian => "gaussian".into(),
            RepresentationSampling::Rows(_) => "activation_rows".into(),
        },
        random_basis: cfg.random_basis,
        floor: cfg.floor,
        parallelism_semantic: ms,
        parallelism_semantic_std: ss,
        parallelism_random: mr,
        parallelism_random_std: sr,
        meets_floor: ms >= cfg.floor,
        per_trial,
    })
}

fn run_trial<T: Scalar>(
    bases: &SemanticBasisSet<T>,
    cfg: &ValidationConfig<T>,
    trial: usize,
) -> Result<TrialRecord> {
    let (v, d) = (bases.vocab_size(), bases.latent_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(trial as u64));
    let r: Array1<T> = match &cfg.representation {
        RepresentationSampling::Gaussian => (0..d).map(|_| gaussian(&mut rng)).collect(),
        RepresentationSampling::Rows(rows) => rows.row(rng.random_range(0..rows.nrows())).to_owned(),
    };
    let random = random_matrix(&mut rng, v, d, cfg.random_basis);
    let semantic = parallelism_score(r.view(), resultant_of(r.view(), bases.matrix()).view())?;
    let control = parallelism_score(r.view(), resultant_of(r.view(), random.view()).view())?;
    Ok(TrialRecord {
        trial,
        parallelism_semantic: semantic.as_f64(),
        parallelism_random: control.as_f64(),
    })
}

fn gaussian<T: Scalar, R: Rng>(rng: &mut R) -> T {
    let x: f64 = StandardNormal.sample(rng);
    T::of(x)
}

pub fn random_matrix<T: Scalar, R: Rng>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    dist: RandomBasisDistribution,
) -> Array2<T> {
    match dist {
        RandomBasisDistribution::Gaussian => Array2::from_shape_simple_fn((rows, cols), || gaussian(rng)),
        RandomBasisDistribution::Uniform => {
            let u = Uniform::new_inclusive(-1.0f64, 1.0).expect("valid bounds");
            Array2::from_shape_simple_fn((rows, cols), || T::of(u.sample(rng)))
        }
    }
}

/// Mean and population standard deviation.
fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
