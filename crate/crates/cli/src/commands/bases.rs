use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use seme_core::linalg::svd;
use seme_core::{semantic_bases, PseudoinverseConfig};

use crate::config::{self, overlay, usage, Globals};
use crate::io;
use crate::report::Provenance;

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasesOpts {
    /// Model bundle archive.
    pub bundle: Option<PathBuf>,
    /// Output archive holding the `v × d` "bases" tensor.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Relative singular-value cutoff.
    #[arg(long)]
    pub rcond: Option<f64>,
    /// LM-head tensor name.
    #[arg(long)]
    pub head: Option<String>,
}

#[derive(Serialize)]
struct BasesSummary {
    model_id: String,
    vocab_size: usize,
    latent_dim: usize,
    head_fingerprint: String,
    singular_value_max: f64,
    singular_value_min: f64,
    rank: usize,
    zero_rows: Vec<usize>,
    mean_norm: f64,
}

pub fn pinv_config(rcond: f64) -> anyhow::Result<PseudoinverseConfig> {
    let cfg = PseudoinverseConfig {
        rcond,
        ..PseudoinverseConfig::default()
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

pub fn run(mut opts: BasesOpts, body: Map<String, Value>, globals: &Globals) -> anyhow::Result<()> {
    let mut file: BasesOpts = config::from_body(body)?;
    overlay!(opts, file; bundle, out, report, rcond, head);
    let rcond = *opts.rcond.get_or_insert(PseudoinverseConfig::default().rcond);
    let cfg = pinv_config(rcond)?;
    let path = config::required(opts.bundle.clone(), "bundle path")?;
    let out = config::required(opts.out.clone(), "--out")?;

    let mut prov = Provenance::new("bases", globals);
    let bundle = io::load_bundle(&path, "bundle", &io::schema(opts.head.as_ref()), &mut prov)?.cast::<f64>();
    let bases = semantic_bases(&bundle, &cfg)?;
    let singular = svd(bundle.lm_head.to_array2()?.view())?.singular_values;
    let smax = singular[0];
    let summary = BasesSummary {
        model_id: bundle.model_id.clone(),
        vocab_size: bases.vocab_size(),
        latent_dim: bases.latent_dim(),
        head_fingerprint: bases.source_head_fingerprint.clone(),
        singular_value_max: smax,
        singular_value_min: singular[singular.len() - 1],
        rank: singular.iter().filter(|&&s| s > rcond * smax).count(),
        zero_rows: bases.zero_rows(),
        mean_norm: bases.mean_norm(),
    };
    let archive = bases.to_archive()?.with_metadata("model_id", bundle.model_id.clone());
    prov.write_output("bases", &out, &archive.to_bytes()?)?;
    if let Some(report) = &opts.report {
        prov.write_report(report, &opts, &summary)?;
    }
    Ok(())
}
