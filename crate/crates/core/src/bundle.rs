//! Assembling archives into model bundles: ordered layer groups plus a
//! canonically oriented LM-head.

use std::collections::BTreeMap;

use ndarray::{Array1, ArrayView1};

use crate::archive::TensorArchive;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const ORIENTATION_KEY: &str = "lm_head_orientation";
pub const TRANSPOSED_KEY: &str = "lm_head_transposed";
pub const MODEL_ID_KEY: &str = "model_id";
pub const VOCAB_SIZE_KEY: &str = "vocab_size";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadOrientation {
    /// Stored `d × v`; logits are `r · W`.
    LatentMajor,
    /// Stored `v × d`, transposed on load.
    VocabMajor,
}

impl HeadOrientation {
    pub fn tag(self) -> &'static str {
        match self {
            Self::LatentMajor => "latent_major",
            Self::VocabMajor => "vocab_major",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "latent_major" => Ok(Self::LatentMajor),
            "vocab_major" => Ok(Self::VocabMajor),
            other => Err(Error::AmbiguousOrientation(format!("unknown tag {other:?}"))),
        }
    }
}

/// Naming convention used to pick layer groups and the head out of an archive.
///
/// Layer tensors are `<layer_prefix><index>.<param>`; the head is the first
/// tensor found among `head_names`. Everything else is carried as extras.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleSchema {
    pub layer_prefix: String,
    pub head_names: Vec<String>,
}

impl Default for BundleSchema {
    fn default() -> Self {
        Self {
            layer_prefix: "layers.".into(),
            head_names: vec!["lm_head".into(), "head".into(), "output.weight".into()],
        }
    }
}

impl BundleSchema {
    fn split_layer_name<'a>(&self, name: &'a str) -> Option<(usize, &'a str)> {
        let rest = name.strip_prefix(self.layer_prefix.as_str())?;
        let (idx, param) = rest.split_once('.')?;
        if param.is_empty() {
            return None;
        }
        Some((idx.parse().ok()?, param))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGroup<T = f32> {
    pub index: usize,
    /// Keyed by parameter name within the layer (`w` for `layers.0.w`).
    pub params: BTreeMap<String, Tensor<T>>,
}

/// Model parameters grouped for the merge and semantic pipelines.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle<T = f32> {
    pub model_id: String,
    pub layers: Vec<LayerGroup<T>>,
    /// Canonical `d × v` head.
    pub lm_head: Tensor<T>,
    pub stored_orientation: HeadOrientation,
    pub extras: Vec<Tensor<T>>,
    pub vocab_size: usize,
    pub latent_dim: usize,
    pub metadata: BTreeMap<String, String>,
}

/// Locates and orients the LM-head. Returns the canonical `d × v` tensor and
/// the orientation it was stored in.
pub fn load_lm_head(
    archive: &TensorArchive,
    schema: &BundleSchema,
) -> Result<(Tensor<f32>, HeadOrientation)> {
    let head = schema
        .head_names
        .iter()
        .find_map(|n| archive.get(n))
        .ok_or(Error::MissingHead)?;
    let (rows, cols) = match head.shape() {
        &[r, c] => (r, c),
        s => {
            return Err(Error::ShapeMismatch(format!(
                "LM-head {:?} must be 2-D, got {s:?}",
                head.name()
            )))
        }
    };
    let orientation = if let Some(tag) = archive.metadata.get(ORIENTATION_KEY) {
        HeadOrientation::parse(tag)?
    } else if let Some(v) = archive.metadata.get(VOCAB_SIZE_KEY) {
        let v: usize = v
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("vocab_size {v:?} is not an integer")))?;
        match (rows == v, cols == v) {
            (false, true) => HeadOrientation::LatentMajor,
            (true, false) => HeadOrientation::VocabMajor,
            (true, true) => {
                return Err(Error::AmbiguousOrientation(format!(
                    "square {rows}×{cols} head without an orientation tag"
                )))
            }
            (false, false) => {
                return Err(Error::ShapeMismatch(format!(
                    "head {rows}×{cols} has no axis of vocab_size {v}"
                )))
            }
        }
    } else if rows < cols {
        HeadOrientation::LatentMajor
    } else if rows > cols {
        HeadOrientation::VocabMajor
    } else {
        return Err(Error::AmbiguousOrientation(format!(
            "square {rows}×{cols} head without an orientation tag"
        )));
    };
    let canonical = match orientation {
        HeadOrientation::LatentMajor => head.clone(),
        HeadOrientation::VocabMajor => head.transposed()?,
    };
    Ok((canonical, orientation))
}

pub fn load_model_bundle(archive: &TensorArchive, schema: &BundleSchema) -> Result<ModelBundle<f32>> {
    archive.validate()?;
    let (lm_head, orientation) = load_lm_head(archive, schema)?;
    let mut groups: BTreeMap<usize, BTreeMap<String, Tensor<f32>>> = BTreeMap::new();
    let mut extras = Vec::new();
    for t in archive.tensors() {
        if t.name() == lm_head.name() {
            continue;
        }
        match schema.split_layer_name(t.name()) {
            Some((idx, param)) => {
                groups.entry(idx).or_default().insert(param.to_string(), t.clone());
            }
            None => extras.push(t.clone()),
        }
    }
    let layers = groups
        .into_iter()
        .map(|(index, params)| LayerGroup { index, params })
        .collect();
    let model_id = archive.metadata.get(MODEL_ID_KEY).cloned().unwrap_or_default();
    let mut metadata = archive.metadata.clone();
    metadata.insert(
        TRANSPOSED_KEY.into(),
        (orientation == HeadOrientation::VocabMajor).to_string(),
    );
    ModelBundle::assemble(model_id, layers, lm_head, orientation, extras, metadata)
}

impl<T: Scalar> ModelBundle<T> {
    /// Builds a bundle from per-layer parameter maps and a `d × v` head.
    /// Layer tensors are renamed to `layers.<i>.<param>`.
    pub fn new(
        model_id: impl Into<String>,
        layers: Vec<BTreeMap<String, Tensor<T>>>,
        lm_head: Tensor<T>,
    ) -> Result<Self> {
        let layers = layers
            .into_iter()
            .enumerate()
            .map(|(index, params)| LayerGroup {
                index,
                params: params
                    .into_iter()
                    .map(|(p, t)| {
                        let name = format!("layers.{index}.{p}");
                        (p, t.renamed(name))
                    })
                    .collect(),
            })
            .collect();
        let model_id = model_id.into();
        let mut metadata = BTreeMap::new();
        metadata.insert(MODEL_ID_KEY.to_string(), model_id.clone());
        Self::assemble(
            model_id,
            layers,
            lm_head.renamed("lm_head"),
            HeadOrientation::LatentMajor,
            Vec::new(),
            metadata,
        )
    }

    fn assemble(
        model_id: String,
        layers: Vec<LayerGroup<T>>,
        lm_head: Tensor<T>,
        stored_orientation: HeadOrientation,
        extras: Vec<Tensor<T>>,
        metadata: BTreeMap<String, String>,
    ) -> Result<Self> {
        let (latent_dim, vocab_size) = match lm_head.shape() {
            &[d, v] => (d, v),
            s => return Err(Error::ShapeMismatch(format!("LM-head must be 2-D, got {s:?}"))),
        };
        let Some(first) = layers.first() else {
            return Err(Error::RaggedSchema("bundle has no layer groups".into()));
        };
        let schema: Vec<(&String, &[usize])> =
            first.params.iter().map(|(k, t)| (k, t.shape())).collect();
        for g in &layers[1..] {
            let other: Vec<(&String, &[usize])> =
                g.params.iter().map(|(k, t)| (k, t.shape())).collect();
            if other != schema {
                return Err(Error::RaggedSchema(format!(
                    "layer {} exposes {:?}, layer {} exposes {:?}",
                    first.index, schema, g.index, other
                )));
            }
        }
        if vocab_size < latent_dim {
            tracing::warn!(
                vocab_size,
                latent_dim,
                "vocabulary smaller than latent dimension; semantic bases are not unique"
            );
        }
        Ok(Self {
            model_id,
            layers,
            lm_head,
            stored_orientation,
            extras,
            vocab_size,
            latent_dim,
            metadata,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Every tensor in canonical order: layers by index and parameter name,
    /// then extras by name, then the head (in `d × v` orientation).
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut extras: Vec<&Tensor<T>> = self.extras.iter().collect();
        extras.sort_by(|a, b| a.name().cmp(b.name()));
        self.layers
            .iter()
            .flat_map(|g| g.params.values())
            .chain(extras)
            .chain(std::iter::once(&self.lm_head))
            .collect()
    }

    /// Rebuilds the bundle with every tensor passed through `f`.
    /// `f` must preserve names and shapes.
    pub fn map_tensors<U: Scalar>(
        &self,
        mut f: impl FnMut(&Tensor<T>) -> Result<Tensor<U>>,
    ) -> Result<ModelBundle<U>> {
        let mut apply = |t: &Tensor<T>| -> Result<Tensor<U>> {
            let out = f(t)?;
            if out.name() != t.name() || out.shape() != t.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {:?} changed name or shape",
                    t.name()
                )));
            }
            Ok(out)
        };
        let layers = self
            .layers
            .iter()
            .map(|g| {
                Ok(LayerGroup {
                    index: g.index,
                    params: g
                        .params
                        .iter()
                        .map(|(k, t)| Ok((k.clone(), apply(t)?)))
                        .collect::<Result<_>>()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let extras = self.extras.iter().map(&mut apply).collect::<Result<Vec<_>>>()?;
        let lm_head = apply(&self.lm_head)?;
        Ok(ModelBundle {
            model_id: self.model_id.clone(),
            layers,
            lm_head,
            stored_orientation: self.stored_orientation,
            extras,
            vocab_size: self.vocab_size,
            latent_dim: self.latent_dim,
            metadata: self.metadata.clone(),
        })
    }

    pub fn cast<U: Scalar>(&self) -> ModelBundle<U> {
        self.map_tensors(|t| Ok(t.cast())).expect("cast preserves names and shapes")
    }

    /// Errors unless both bundles expose the same tensor names and shapes.
    pub fn check_congruent(&self, other: &ModelBundle<T>) -> Result<()> {
        let a = self.tensors();
        let b = other.tensors();
        if a.len() != b.len() {
            return Err(Error::ShapeMismatch(format!(
                "{:?} has {} tensors, {:?} has {}",
                self.model_id,
                a.len(),
                other.model_id,
                b.len()
            )));
        }
        for (x, y) in a.iter().zip(&b) {
            if !x.is_congruent(y) {
                return Err(Error::ShapeMismatch(format!(
                    "{:?} {:?} vs {:?} {:?}",
                    x.name(),
                    x.shape(),
                    y.name(),
                    y.shape()
                )));
            }
        }
        Ok(())
    }

    /// `r · W`, length `vocab_size`.
    pub fn logits(&self, r: ArrayView1<'_, T>) -> Result<Array1<T>> {
        if r.len() != self.latent_dim {
            return Err(Error::ShapeMismatch(format!(
                "representation has length {}, latent dim is {}",
                r.len(),
                self.latent_dim
            )));
        }
        Ok(r.dot(&self.lm_head.to_array2()?))
    }

    /// Back to an archive, restoring the head's stored orientation.
    pub fn to_archive(&self) -> Result<TensorArchive> {
        let mut archive = TensorArchive::new();
        for g in &self.layers {
            for t in g.params.values() {
                archive.push(t.cast())?;
            }
        }
        for t in &self.extras {
            archive.push(t.cast())?;
        }
        let head = match self.stored_orientation {
            HeadOrientation::LatentMajor => self.lm_head.cast(),
            HeadOrientation::VocabMajor => self.lm_head.transposed()?.cast(),
        };
        archive.push(head)?;
        archive.metadata = self.metadata.clone();
        archive.metadata.remove(TRANSPOSED_KEY);
        archive
            .metadata
            .insert(ORIENTATION_KEY.into(), self.stored_orientation.tag().into());
        if !self.model_id.is_empty() {
            archive.metadata.insert(MODEL_ID_KEY.into(), self.model_id.clone());
        }
        Ok(archive)
    }
}
