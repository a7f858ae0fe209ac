use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::config::{self, overlay, Globals};
use crate::io;
use crate::report::Provenance;

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InspectOpts {
    /// Archive to inspect.
    pub archive: Option<PathBuf>,
    /// Print the JSON report instead of the text summary.
    #[arg(long)]
    #[serde(default)]
    pub json: bool,
    /// Also write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Name of the LM-head tensor, when the bundle view should use a specific one.
    #[arg(long)]
    pub head: Option<String>,
}

#[derive(Serialize)]
struct TensorEntry {
    name: String,
    dtype: &'static str,
    shape: Vec<usize>,
    elements: usize,
    content_sha256: String,
}

#[derive(Serialize)]
struct BundleView {
    model_id: String,
    depth: usize,
    latent_dim: usize,
    vocab_size: usize,
    head: String,
    head_orientation: &'static str,
    layer_params: Vec<String>,
    extras: Vec<String>,
}

#[derive(Serialize)]
struct Summary {
    tensor_count: usize,
    total_elements: usize,
    tensors: Vec<TensorEntry>,
    metadata: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bundle: Option<BundleView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bundle_error: Option<String>,
}

pub fn run(mut opts: InspectOpts, body: Map<String, Value>, globals: &Globals) -> anyhow::Result<()> {
    let mut file: InspectOpts = config::from_body(body)?;
    overlay!(opts, file; archive, report, head);
    opts.json |= file.json;
    let path = config::required(opts.archive.clone(), "archive path")?;

    let mut prov = Provenance::new("inspect", globals);
    let archive = io::load_archive(&path, "archive", &mut prov)?;
    let tensors: Vec<TensorEntry> = archive
        .tensors()
        .iter()
        .map(|t| TensorEntry {
            name: t.name().to_string(),
            dtype: "F32",
            shape: t.shape().to_vec(),
            elements: t.numel(),
            content_sha256: t.fingerprint(),
        })
        .collect();
    let (bundle, bundle_error) = match seme_core::load_model_bundle(&archive, &io::schema(opts.head.as_ref())) {
        Ok(b) => (
            Some(BundleView {
                model_id: b.model_id.clone(),
                depth: b.depth(),
                latent_dim: b.latent_dim,
                vocab_size: b.vocab_size,
                head: b.lm_head.name().to_string(),
                head_orientation: b.stored_orientation.tag(),
                layer_params: b.layers.first().map(|g| g.params.keys().cloned().collect()).unwrap_or_default(),
                extras: b.extras.iter().map(|t| t.name().to_string()).collect(),
            }),
            None,
        ),
        Err(e) => (None, Some(e.to_string())),
    };
    let summary = Summary {
        tensor_count: tensors.len(),
        total_elements: tensors.iter().map(|t| t.elements).sum(),
        tensors,
        metadata: archive.metadata.clone(),
        bundle,
        bundle_error,
    };

    let rendered = prov.render(&opts, &summary)?;
    if let Some(out) = &opts.report {
        crate::report::write_atomic(out, &rendered)?;
    }
    if opts.json {
        print!("{}", String::from_utf8(rendered)?);
    } else {
        print_text(&path, &prov, &summary);
    }
    Ok(())
}

fn print_text(path: &std::path::Path, prov: &Provenance, s: &Summary) {
    println!("archive  {}", path.display());
    println!("sha256   {}", prov.inputs[0].sha256);
    println!("tensors  {} ({} elements)", s.tensor_count, s.total_elements);
    let width = s.tensors.iter().map(|t| t.name.len()).max().unwrap_or(0);
    for t in &s.tensors {
        println!("  {:width$}  {}  {:?}", t.name, t.dtype, t.shape);
    }
    if !s.metadata.is_empty() {
        println!("metadata");
        for (k, v) in &s.metadata {
            println!("  {k} = {v}");
        }
    }
    match (&s.bundle, &s.bundle_error) {
        (Some(b), _) => println!(
            "bundle   {} layers, latent {} x vocab {}, head {:?} ({})",
            b.depth, b.latent_dim, b.vocab_size, b.head, b.head_orientation
        ),
        (None, Some(e)) => println!("bundle   not a model bundle: {e}"),
        _ => {}
    }
}
