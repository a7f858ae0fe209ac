//! Reading inputs while recording their fingerprints.

use std::path::Path;

use anyhow::{anyhow, bail, Context};
use ndarray::Array2;
use seme_core::alignment::{DistributionMatrix, TokenSequence, VocabMappingTable, Vocabulary};
use seme_core::bundle::MODEL_ID_KEY;
use seme_core::{load_model_bundle, BundleSchema, ModelBundle, TensorArchive};

use crate::report::{FileRecord, Provenance};

pub fn read_bytes(path: &Path, role: &str, prov: &mut Provenance) -> anyhow::Result<Vec<u8>> {
    let bytes = std::fs::read(path).with_context(|| format!("cannot read {role} {}", path.display()))?;
    prov.inputs.push(FileRecord::of_bytes(role, path, &bytes));
    Ok(bytes)
}

pub fn load_archive(path: &Path, role: &str, prov: &mut Provenance) -> anyhow::Result<TensorArchive> {
    let bytes = read_bytes(path, role, prov)?;
    TensorArchive::from_bytes(&bytes).with_context(|| format!("{role} {}", path.display()))
}

/// Loads a bundle; the model id falls back to the file stem.
pub fn load_bundle(
    path: &Path,
    role: &str,
    schema: &BundleSchema,
    prov: &mut Provenance,
) -> anyhow::Result<ModelBundle<f32>> {
    let archive = load_archive(path, role, prov)?;
    let mut bundle = load_model_bundle(&archive, schema).with_context(|| format!("{role} {}", path.display()))?;
    if bundle.model_id.is_empty() {
        bundle.model_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        bundle.metadata.insert(MODEL_ID_KEY.into(), bundle.model_id.clone());
    }
    Ok(bundle)
}

pub fn schema(head: Option<&String>) -> BundleSchema {
    let mut s = BundleSchema::default();
    if let Some(h) = head {
        s.head_names = vec![h.clone()];
    }
    s
}

fn is_json_lines(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("jsonl" | "ndjson" | "json")
    )
}

fn json_lines<T: serde::de::DeserializeOwned>(bytes: &[u8], path: &Path) -> anyhow::Result<Vec<T>> {
    let text = std::str::from_utf8(bytes).with_context(|| format!("{} is not UTF-8", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

fn as_id(x: f32) -> anyhow::Result<u32> {
    if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f32 {
        Ok(x as u32)
    } else {
        Err(anyhow!("token id {x} is not a non-negative integer"))
    }
}

/// Token sequences from JSON lines (`{"ids": [...], "surfaces": [...]}`) or
/// from an archive's `ids` tensor (one sequence, or one per row).
pub fn load_sequences(path: &Path, role: &str, prov: &mut Provenance) -> anyhow::Result<Vec<TokenSequence>> {
    let bytes = read_bytes(path, role, prov)?;
    let seqs: Vec<TokenSequence> = if is_json_lines(path) {
        json_lines(&bytes, path)?
    } else {
        let archive = TensorArchive::from_bytes(&bytes).with_context(|| format!("{role} {}", path.display()))?;
        let t = archive
            .get("ids")
            .ok_or_else(|| anyhow!("{role} {} has no \"ids\" tensor", path.display()))?;
        let width = match t.shape() {
            [n] => *n,
            [_, l] => *l,
            s => bail!("\"ids\" must be 1-D or 2-D, got {s:?}"),
        };
        t.data()
            .chunks(width)
            .map(|c| Ok(TokenSequence::new(c.iter().map(|&x| as_id(x)).collect::<anyhow::Result<_>>()?)))
            .collect::<anyhow::Result<_>>()?
    };
    for s in &seqs {
        s.validate()?;
    }
    if seqs.is_empty() {
        bail!("{role} {} holds no sequences", path.display());
    }
    Ok(seqs)
}

/// Probability rows from an archive's `dist` tensor or from JSON lines of
/// arrays. Rows must sum to one within 1e-4 and are renormalised in f64.
pub fn load_distributions(path: &Path, role: &str, prov: &mut Provenance) -> anyhow::Result<DistributionMatrix<f64>> {
    let bytes = read_bytes(path, role, prov)?;
    let rows: Array2<f64> = if is_json_lines(path) {
        let rows: Vec<Vec<f64>> = json_lines(&bytes, path)?;
        let v = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || v == 0 || rows.iter().any(|r| r.len() != v) {
            bail!("{role} {} must hold equal-length, non-empty rows", path.display());
        }
        Array2::from_shape_fn((rows.len(), v), |(i, j)| rows[i][j])
    } else {
        let archive = TensorArchive::from_bytes(&bytes).with_context(|| format!("{role} {}", path.display()))?;
        let t = archive
            .get("dist")
            .ok_or_else(|| anyhow!("{role} {} has no \"dist\" tensor", path.display()))?;
        t.cast::<f64>().to_array2().with_context(|| format!("{role} \"dist\""))?
    };
    for (i, r) in rows.rows().into_iter().enumerate() {
        let s = r.sum();
        if (s - 1.0).abs() > 1e-4 {
            bail!("{role} row {i} sums to {s}");
        }
    }
    Ok(DistributionMatrix::normalized(rows)?)
}

pub fn load_table(path: &Path, role: &str, prov: &mut Provenance) -> anyhow::Result<VocabMappingTable> {
    let bytes = read_bytes(path, role, prov)?;
    let table: VocabMappingTable =
        serde_json::from_slice(&bytes).with_context(|| format!("{role} {}", path.display()))?;
    table.validate()?;
    Ok(table)
}

/// A JSON array of token strings, position = id.
pub fn load_vocab(path: &Path, role: &str, prov: &mut Provenance) -> anyhow::Result<Vocabulary> {
    let bytes = read_bytes(path, role, prov)?;
    serde_json::from_slice(&bytes).with_context(|| format!("{role} {}", path.display()))
}
