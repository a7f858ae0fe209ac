use std::path::PathBuf;

use anyhow::anyhow;
use clap::Args;
use ndarray::Axis;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use seme_core::transform::{transform_batch, Calibration, Combination, TransformPlan};
use seme_core::{semantic_bases, PseudoinverseConfig, Tensor, TensorArchive};

use crate::commands::bases::pinv_config;
use crate::config::{self, overlay, snake, usage, Globals};
use crate::io;
use crate::report::Provenance;

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformOpts {
    /// Bundle whose latent space the representations live in.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Bundle to carry them into.
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Archive with an `n × d_source` representation tensor.
    #[arg(long)]
    pub reps: Option<PathBuf>,
    /// Name of the representation tensor.
    #[arg(long)]
    pub reps_tensor: Option<String>,
    /// Output archive; the transformed rows are stored under the same tensor name.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON preservation report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub temperature: Option<f64>,
    /// none, norm_match or basis_scale.
    #[arg(long, value_parser = snake::<Calibration>)]
    pub calibration: Option<Calibration>,
    /// least_squares, cosine_resultant or probability.
    #[arg(long, value_parser = snake::<Combination>)]
    pub combination: Option<Combination>,
    #[arg(long)]
    pub rcond: Option<f64>,
    #[arg(long)]
    pub source_head: Option<String>,
    #[arg(long)]
    pub target_head: Option<String>,
}

pub fn run(mut opts: TransformOpts, body: Map<String, Value>, globals: &Globals) -> anyhow::Result<()> {
    let mut file: TransformOpts = config::from_body(body)?;
    overlay!(opts, file; source, target, reps, reps_tensor, out, report, temperature, calibration,
        combination, rcond, source_head, target_head);
    let temperature = *opts.temperature.get_or_insert(1.0);
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(usage("--temperature must be positive"));
    }
    let calibration = *opts.calibration.get_or_insert_default();
    let combination = *opts.combination.get_or_insert_default();
    let cfg = pinv_config(*opts.rcond.get_or_insert(PseudoinverseConfig::default().rcond))?;
    let tensor_name = opts.reps_tensor.get_or_insert_with(|| "reps".into()).clone();
    let source = config::required(opts.source.clone(), "--source")?;
    let target = config::required(opts.target.clone(), "--target")?;
    let reps_path = config::required(opts.reps.clone(), "--reps")?;
    let out = config::required(opts.out.clone(), "--out")?;
    let report = config::required(opts.report.clone(), "--report")?;

    let mut prov = Provenance::new("transform", globals);
    let sx = io::load_bundle(&source, "source", &io::schema(opts.source_head.as_ref()), &mut prov)?.cast::<f64>();
    let sy = io::load_bundle(&target, "target", &io::schema(opts.target_head.as_ref()), &mut prov)?.cast::<f64>();
    let archive = io::load_archive(&reps_path, "reps", &mut prov)?;
    let t = archive
        .get(&tensor_name)
        .ok_or_else(|| anyhow!("{} has no {tensor_name:?} tensor", reps_path.display()))?;
    let reps = match t.shape() {
        [_] => t.cast::<f64>().to_array1().insert_axis(Axis(0)),
        _ => t.cast::<f64>().to_array2()?,
    };

    let plan = TransformPlan::new(
        semantic_bases(&sx, &cfg)?,
        semantic_bases(&sy, &cfg)?,
        temperature,
        calibration,
        combination,
        &cfg,
    )?;
    let (moved, preservation) = transform_batch(reps.view(), &plan)?;
    let result = TensorArchive::from_tensors(vec![Tensor::from_array2(tensor_name, moved.view()).cast()])?
        .with_metadata("source_model", sx.model_id.clone())
        .with_metadata("target_model", sy.model_id.clone());
    prov.write_output("transformed", &out, &result.to_bytes()?)?;
    prov.write_report(&report, &opts, &preservation)?;
    Ok(())
}
