use std::path::PathBuf;

use anyhow::anyhow;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use seme_core::decomposition::{
    run_validation, RandomBasisDistribution, RepresentationSampling, ValidationConfig,
};
use seme_core::PseudoinverseConfig;

use crate::commands::bases::pinv_config;
use crate::config::{self, overlay, snake, usage, Globals};
use crate::io;
use crate::report::Provenance;

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateOpts {
    /// Model bundle archive.
    pub bundle: Option<PathBuf>,
    /// Number of trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// JSON report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-trial CSV path; defaults to the report path with a .csv extension.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Mean parallelism threshold recorded as `meets_floor`.
    #[arg(long)]
    pub floor: Option<f64>,
    /// Entry distribution of the random control bases: gaussian or uniform.
    #[arg(long, value_parser = snake::<RandomBasisDistribution>)]
    pub random_basis: Option<RandomBasisDistribution>,
    /// Archive with an `n × d` "activations" tensor to sample representations from.
    #[arg(long)]
    pub activations: Option<PathBuf>,
    #[arg(long)]
    pub rcond: Option<f64>,
    #[arg(long)]
    pub head: Option<String>,
}

pub fn run(mut opts: ValidateOpts, body: Map<String, Value>, globals: &Globals) -> anyhow::Result<()> {
    let mut file: ValidateOpts = config::from_body(body)?;
    overlay!(opts, file; bundle, trials, out, csv, floor, random_basis, activations, rcond, head);
    globals.require_seed()?;
    let trials = *opts.trials.get_or_insert(1000);
    if trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let floor = *opts.floor.get_or_insert(0.9);
    if !floor.is_finite() {
        return Err(usage("--floor must be finite"));
    }
    let random_basis = *opts.random_basis.get_or_insert_default();
    let cfg = pinv_config(*opts.rcond.get_or_insert(PseudoinverseConfig::default().rcond))?;
    let path = config::required(opts.bundle.clone(), "bundle path")?;
    let out = config::required(opts.out.clone(), "--out")?;
    let csv = opts.csv.get_or_insert_with(|| out.with_extension("csv")).clone();

    let mut prov = Provenance::new("validate", globals);
    let bundle = io::load_bundle(&path, "bundle", &io::schema(opts.head.as_ref()), &mut prov)?.cast::<f64>();
    let representation = match &opts.activations {
        None => RepresentationSampling::Gaussian,
        Some(p) => {
            let archive = io::load_archive(p, "activations", &mut prov)?;
            let t = archive
                .get("activations")
                .ok_or_else(|| anyhow!("{} has no \"activations\" tensor", p.display()))?;
            RepresentationSampling::Rows(t.cast::<f64>().to_array2()?)
        }
    };
    let report = run_validation(
        &bundle,
        &cfg,
        &ValidationConfig {
            trials,
            seed: globals.seed,
            representation,
            random_basis,
            floor,
        },
    )?;
    if !report.meets_floor {
        tracing::warn!(mean = report.parallelism_semantic, floor, "mean parallelism is below the floor");
    }
    prov.write_output("per_trial_csv", &csv, report.to_csv().as_bytes())?;
    prov.write_report(&out, &opts, &report)?;
    Ok(())
}
