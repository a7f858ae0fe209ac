use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use seme_core::merge::{merge, ErasePolicy, MergeRecipe, Normalization, TiePolicy};
use seme_core::{load_model_bundle, TensorArchive};

use crate::config::{self, overlay, snake, usage, Globals};
use crate::io;
use crate::report::Provenance;

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MergeOpts {
    /// Pivot bundle archive.
    #[arg(long)]
    pub pivot: Option<PathBuf>,
    /// Bundle to merge; repeat for each model.
    #[arg(long = "model")]
    #[serde(default)]
    pub models: Vec<PathBuf>,
    /// Merged archive path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Percentage of elements kept per tensor, in (0, 100].
    #[arg(long)]
    pub tau: Option<f64>,
    /// sum_to_one, mean_one or raw.
    #[arg(long, value_parser = snake::<Normalization>)]
    pub normalization: Option<Normalization>,
    /// majority_sign or off.
    #[arg(long, value_parser = snake::<ErasePolicy>)]
    pub erase: Option<ErasePolicy>,
    /// drop_all or keep_larger_magnitude_side.
    #[arg(long, value_parser = snake::<TiePolicy>)]
    pub tie: Option<TiePolicy>,
    #[arg(long)]
    pub head: Option<String>,
}

pub fn run(mut opts: MergeOpts, body: Map<String, Value>, globals: &Globals) -> anyhow::Result<()> {
    let mut file: MergeOpts = config::from_body(body)?;
    overlay!(opts, file; pivot, out, report, tau, normalization, erase, tie, head);
    if opts.models.is_empty() {
        opts.models = file.models;
    }
    let defaults = MergeRecipe::default();
    let recipe = MergeRecipe {
        tau: *opts.tau.get_or_insert(defaults.tau),
        normalization: *opts.normalization.get_or_insert(defaults.normalization),
        erase: *opts.erase.get_or_insert(defaults.erase),
        tie: *opts.tie.get_or_insert(defaults.tie),
    };
    recipe.validate().map_err(|e| usage(e.to_string()))?;
    let pivot_path = config::required(opts.pivot.clone(), "--pivot")?;
    let out = config::required(opts.out.clone(), "--out")?;
    if opts.models.is_empty() {
        return Err(usage("at least one --model is required"));
    }

    let mut prov = Provenance::new("merge", globals);
    let schema = io::schema(opts.head.as_ref());
    let pivot = io::load_bundle(&pivot_path, "pivot", &schema, &mut prov)?;
    let models = opts
        .models
        .iter()
        .map(|p| io::load_bundle(p, "model", &schema, &mut prov))
        .collect::<anyhow::Result<Vec<_>>>()?;

    let (merged, report) = merge(&models, &pivot, &recipe)?;
    let bytes = merged.to_archive()?.to_bytes()?;
    let check = TensorArchive::from_bytes(&bytes)?;
    load_model_bundle(&check, &schema)?;
    prov.write_output("merged", &out, &bytes)?;
    if let Some(path) = &opts.report {
        prov.write_report(path, &opts, &report)?;
    }
    Ok(())
}
