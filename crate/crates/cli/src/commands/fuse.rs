use std::path::PathBuf;

use anyhow::bail;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use seme_core::alignment::{fuse_distributions, FusedFrom, FusionStrategy, UnmappedPolicy};
use seme_core::{Tensor, TensorArchive};

use crate::config::{self, overlay, snake, Globals};
use crate::io;
use crate::report::Provenance;

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseOpts {
    /// First distribution matrix: archive with "dist" or JSON lines of rows.
    #[arg(long)]
    pub a: Option<PathBuf>,
    /// Second distribution matrix.
    #[arg(long)]
    pub b: Option<PathBuf>,
    /// Reference token sequence, one per position.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Mapping table applied to `a` before fusion.
    #[arg(long)]
    pub map_a: Option<PathBuf>,
    /// Mapping table applied to `b` before fusion.
    #[arg(long)]
    pub map_b: Option<PathBuf>,
    /// `redistribute` or `unknown:<id>`.
    #[arg(long, value_parser = parse_unmapped)]
    pub unmapped: Option<UnmappedPolicy>,
    /// min_cross_entropy or average.
    #[arg(long, value_parser = snake::<FusionStrategy>)]
    pub strategy: Option<FusionStrategy>,
    /// Fused archive path ("dist" tensor).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Selection trace report path.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

fn parse_unmapped(s: &str) -> Result<UnmappedPolicy, String> {
    match s.split_once(':') {
        None if s == "redistribute" => Ok(UnmappedPolicy::Redistribute),
        Some(("unknown", id)) => id
            .parse()
            .map(UnmappedPolicy::UnknownToken)
            .map_err(|e| format!("bad token id {id:?}: {e}")),
        _ => Err(format!("expected `redistribute` or `unknown:<id>`, got {s:?}")),
    }
}

#[derive(Serialize)]
struct Position {
    position: usize,
    reference: u32,
    selected: FusedFrom,
    /// `null` when the reference token has zero probability.
    cross_entropy_a: Option<f64>,
    cross_entropy_b: Option<f64>,
}

#[derive(Serialize)]
struct Trace {
    positions: usize,
    vocab_size: usize,
    selected_a: usize,
    selected_b: usize,
    trace: Vec<Position>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

pub fn run(mut opts: FuseOpts, body: Map<String, Value>, globals: &Globals) -> anyhow::Result<()> {
    let mut file: FuseOpts = config::from_body(body)?;
    overlay!(opts, file; a, b, reference, map_a, map_b, unmapped, strategy, out, trace);
    let unmapped = *opts.unmapped.get_or_insert_default();
    let strategy = *opts.strategy.get_or_insert_default();
    let a_path = config::required(opts.a.clone(), "--a")?;
    let b_path = config::required(opts.b.clone(), "--b")?;
    let ref_path = config::required(opts.reference.clone(), "--reference")?;
    let out = config::required(opts.out.clone(), "--out")?;
    let trace_path = config::required(opts.trace.clone(), "--trace")?;

    let mut prov = Provenance::new("fuse", globals);
    let mut a = io::load_distributions(&a_path, "a", &mut prov)?;
    let mut b = io::load_distributions(&b_path, "b", &mut prov)?;
    let mut refs = io::load_sequences(&ref_path, "reference", &mut prov)?;
    if refs.len() != 1 {
        bail!("reference must hold exactly one sequence, found {}", refs.len());
    }
    let reference = refs.remove(0);
    if let Some(p) = &opts.map_a {
        a = a.map_through(&io::load_table(p, "map_a", &mut prov)?, unmapped)?;
    }
    if let Some(p) = &opts.map_b {
        b = b.map_through(&io::load_table(p, "map_b", &mut prov)?, unmapped)?;
    }

    let fused = fuse_distributions(&a, &b, &reference, strategy)?;
    let trace = Trace {
        positions: fused.selected.len(),
        vocab_size: fused.matrix.vocab_size(),
        selected_a: fused.selected.iter().filter(|s| **s == FusedFrom::A).count(),
        selected_b: fused.selected.iter().filter(|s| **s == FusedFrom::B).count(),
        trace: fused
            .selected
            .iter()
            .enumerate()
            .map(|(i, &selected)| Position {
                position: i,
                reference: reference.ids[i],
                selected,
                cross_entropy_a: finite(fused.cross_entropy_a[i]),
                cross_entropy_b: finite(fused.cross_entropy_b[i]),
            })
            .collect(),
    };
    let archive = TensorArchive::from_tensors(vec![Tensor::from_array2("dist", fused.matrix.rows()).cast()])?
        .with_metadata("strategy", serde_json::to_value(strategy)?.as_str().unwrap_or_default().to_string());
    prov.write_output("fused", &out, &archive.to_bytes()?)?;
    prov.write_report(&trace_path, &opts, &trace)?;
    Ok(())
}
