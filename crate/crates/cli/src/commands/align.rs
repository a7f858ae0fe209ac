use std::path::PathBuf;

use anyhow::bail;
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use seme_core::alignment::{
    align_sequences, build_vocab_mapping, AlignedPair, AlignmentMap, EditCosts, MappingMode, TokenSequence,
    Vocabulary,
};

use crate::config::{self, overlay, snake, usage, Globals};
use crate::io;
use crate::report::Provenance;

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignOpts {
    /// Source sequences: JSON lines or an archive with an "ids" tensor.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Pivot sequences, paired with the source line by line.
    #[arg(long)]
    pub pivot: Option<PathBuf>,
    /// Alignment report path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub substitution: Option<f64>,
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub merge: Option<f64>,
    /// Source vocabulary: a JSON array of token strings.
    #[arg(long)]
    pub source_vocab: Option<PathBuf>,
    /// Pivot vocabulary: a JSON array of token strings.
    #[arg(long)]
    pub pivot_vocab: Option<PathBuf>,
    /// Build a mapping table: exact, fuzzy or statistical.
    #[arg(long, value_parser = snake::<MappingMode>)]
    pub mapping: Option<MappingMode>,
    /// Largest edit distance accepted by fuzzy mapping.
    #[arg(long)]
    pub fuzzy_max_dist: Option<usize>,
    /// Mapping table output path.
    #[arg(long)]
    pub table_out: Option<PathBuf>,
}

#[derive(Serialize)]
struct PairResult<'a> {
    index: usize,
    source_len: usize,
    pivot_len: usize,
    #[serde(flatten)]
    alignment: &'a AlignmentMap,
}

#[derive(Serialize)]
struct TableSummary {
    mode: MappingMode,
    source_vocab_size: usize,
    pivot_vocab_size: usize,
    mapped_source_tokens: usize,
    coverage: f64,
}

#[derive(Serialize)]
struct AlignResult<'a> {
    pairs: Vec<PairResult<'a>>,
    total_cost: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    table: Option<TableSummary>,
}

/// Fills missing surfaces from the vocabulary so span matching can see them.
fn attach_surfaces(seqs: &mut [TokenSequence], vocab: &Vocabulary) -> anyhow::Result<()> {
    for s in seqs.iter_mut().filter(|s| s.surface_forms.is_none()) {
        let surfaces = s
            .ids
            .iter()
            .map(|&id| match vocab.tokens.get(id as usize) {
                Some(t) => Ok(t.clone()),
                None => bail!("token id {id} outside a vocabulary of {}", vocab.len()),
            })
            .collect::<anyhow::Result<_>>()?;
        s.surface_forms = Some(surfaces);
    }
    Ok(())
}

pub fn run(mut opts: AlignOpts, body: Map<String, Value>, globals: &Globals) -> anyhow::Result<()> {
    let mut file: AlignOpts = config::from_body(body)?;
    overlay!(opts, file; source, pivot, out, substitution, split, merge, source_vocab, pivot_vocab,
        mapping, fuzzy_max_dist, table_out);
    let d = EditCosts::default();
    let costs = EditCosts {
        substitution: *opts.substitution.get_or_insert(d.substitution),
        split: *opts.split.get_or_insert(d.split),
        merge: *opts.merge.get_or_insert(d.merge),
    };
    if [costs.substitution, costs.split, costs.merge].iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
        return Err(usage("edit costs must be finite and non-negative"));
    }
    let src_path = config::required(opts.source.clone(), "--source")?;
    let piv_path = config::required(opts.pivot.clone(), "--pivot")?;
    let out = config::required(opts.out.clone(), "--out")?;
    if opts.mapping.is_some() {
        opts.fuzzy_max_dist.get_or_insert(2);
        if opts.table_out.is_none() || opts.source_vocab.is_none() || opts.pivot_vocab.is_none() {
            return Err(usage("--mapping needs --table-out, --source-vocab and --pivot-vocab"));
        }
    }

    let mut prov = Provenance::new("align", globals);
    let mut src = io::load_sequences(&src_path, "source", &mut prov)?;
    let mut piv = io::load_sequences(&piv_path, "pivot", &mut prov)?;
    if src.len() != piv.len() {
        bail!("{} source sequences but {} pivot sequences", src.len(), piv.len());
    }
    let vocabs = match (&opts.source_vocab, &opts.pivot_vocab) {
        (Some(a), Some(b)) => {
            let va = io::load_vocab(a, "source_vocab", &mut prov)?;
            let vb = io::load_vocab(b, "pivot_vocab", &mut prov)?;
            attach_surfaces(&mut src, &va)?;
            attach_surfaces(&mut piv, &vb)?;
            Some((va, vb))
        }
        (None, None) => None,
        _ => return Err(usage("give both --source-vocab and --pivot-vocab, or neither")),
    };

    let maps = src
        .iter()
        .zip(&piv)
        .map(|(a, b)| align_sequences(a, b, &costs))
        .collect::<seme_core::Result<Vec<_>>>()?;

    let mut table_summary = None;
    if let (Some(mode), Some((va, vb)), Some(table_out)) = (opts.mapping, &vocabs, &opts.table_out) {
        let corpus: Vec<AlignedPair> = src
            .iter()
            .zip(&piv)
            .zip(&maps)
            .map(|((a, b), m)| AlignedPair {
                source: a.clone(),
                pivot: b.clone(),
                alignment: m.clone(),
            })
            .collect();
        let table = build_vocab_mapping(mode, va, vb, &corpus, opts.fuzzy_max_dist.unwrap_or(2))?;
        let mut bytes = serde_json::to_vec_pretty(&table)?;
        bytes.push(b'\n');
        prov.write_output("mapping_table", table_out, &bytes)?;
        table_summary = Some(TableSummary {
            mode,
            source_vocab_size: table.source_vocab_size,
            pivot_vocab_size: table.pivot_vocab_size,
            mapped_source_tokens: table.entries.len(),
            coverage: table.coverage(),
        });
    }

    let result = AlignResult {
        total_cost: maps.iter().map(|m| m.cost).sum(),
        pairs: maps
            .iter()
            .enumerate()
            .map(|(index, alignment)| PairResult {
                index,
                source_len: src[index].len(),
                pivot_len: piv[index].len(),
                alignment,
            })
            .collect(),
        table: table_summary,
    };
    prov.write_report(&out, &opts, &result)?;
    Ok(())
}
