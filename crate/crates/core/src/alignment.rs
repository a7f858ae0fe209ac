//! Cross-tokenizer alignment: span segmentation of two token sequences by
//! dynamic programming, source→pivot vocabulary mapping tables, transport
//! of probability rows through a table, and per-position fusion of two
//! distribution matrices.

use std::collections::BTreeMap;
use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none", rename = "surfaces")]
    pub surface_forms: Option<Vec<String>>,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Self {
        Self {
            ids,
            surface_forms: None,
        }
    }

    pub fn with_surfaces(ids: Vec<u32>, surfaces: Vec<String>) -> Result<Self> {
        let s = Self {
            ids,
            surface_forms: Some(surfaces),
        };
        s.validate()?;
        Ok(s)
    }

    /// Ids are taken from the surfaces' positions in `vocab`.
    pub fn from_surfaces(surfaces: &[&str], vocab: &Vocabulary) -> Result<Self> {
        let ids = surfaces
            .iter()
            .map(|s| {
                vocab
                    .id_of(s)
                    .ok_or_else(|| Error::InvalidArgument(format!("{s:?} not in vocabulary")))
            })
            .collect::<Result<_>>()?;
        Self::with_surfaces(ids, surfaces.iter().map(|s| s.to_string()).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(s) = &self.surface_forms {
            if s.len() != self.ids.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} ids but {} surface forms",
                    self.ids.len(),
                    s.len()
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn concat(&self, r: Range<usize>) -> Option<String> {
        self.surface_forms.as_ref().map(|s| s[r].concat())
    }
}

/// Whether a source span and a pivot span carry the same content:
/// concatenated surfaces when both sides have them, otherwise equal ids for
/// single tokens. Multi-token spans without surfaces never match.
pub fn spans_match(src: &TokenSequence, a: Range<usize>, pivot: &TokenSequence, b: Range<usize>) -> bool {
    match (src.concat(a.clone()), pivot.concat(b.clone())) {
        (Some(x), Some(y)) => x == y,
        _ => a.len() == 1 && b.len() == 1 && src.ids[a.start] == pivot.ids[b.start],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EditCosts {
    /// Charged when a link's two sides differ.
    pub substitution: f64,
    /// Per extra pivot token absorbed by one source token.
    pub split: f64,
    /// Per extra source token absorbed by one pivot token.
    pub merge: f64,
}

impl Default for EditCosts {
    fn default() -> Self {
        Self {
            substitution: 1.0,
            split: 1.0,
            merge: 1.0,
        }
    }
}

impl EditCosts {
    pub fn link_cost(&self, src: &TokenSequence, a: Range<usize>, pivot: &TokenSequence, b: Range<usize>) -> f64 {
        let shape = self.merge * (a.len() - 1) as f64 + self.split * (b.len() - 1) as f64;
        if spans_match(src, a, pivot, b) {
            shape
        } else {
            shape + self.substitution
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkKind {
    OneToOne,
    OneToMany,
    ManyToOne,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub source: Range<usize>,
    pub pivot: Range<usize>,
}

impl Link {
    pub fn kind(&self) -> LinkKind {
        match (self.source.len(), self.pivot.len()) {
            (1, 1) => LinkKind::OneToOne,
            (1, _) => LinkKind::OneToMany,
            _ => LinkKind::ManyToOne,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMap {
    pub links: Vec<Link>,
    pub cost: f64,
}

impl AlignmentMap {
    /// Checks that links are contiguous, in order, cover both sequences and
    /// are never many-to-many.
    pub fn validate(&self, source_len: usize, pivot_len: usize) -> Result<()> {
        let (mut i, mut j) = (0, 0);
        for l in &self.links {
            if l.source.start != i || l.pivot.start != j || l.source.is_empty() || l.pivot.is_empty() {
                return Err(Error::InvalidArgument(format!("link {l:?} is not contiguous")));
            }
            if l.source.len() > 1 && l.pivot.len() > 1 {
                return Err(Error::InvalidArgument(format!("link {l:?} is many-to-many")));
            }
            i = l.source.end;
            j = l.pivot.end;
        }
        if i != source_len || j != pivot_len {
            return Err(Error::InvalidArgument("links do not cover both sequences".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Step {
    Start,
    OneToOne,
    OneToMany(usize),
    ManyToOne(usize),
}

/// Minimum-cost segmentation into one-to-one, one-to-many and many-to-one
/// links. On equal cost the one-to-one link wins, then the shortest split,
/// then the shortest merge.
pub fn align_sequences(src: &TokenSequence, pivot: &TokenSequence, costs: &EditCosts) -> Result<AlignmentMap> {
    src.validate()?;
    pivot.validate()?;
    if src.is_empty() || pivot.is_empty() {
        return Err(Error::Empty("cannot align an empty sequence".into()));
    }
    let (n, m) = (src.len(), pivot.len());
    let mut best = vec![vec![f64::INFINITY; m + 1]; n + 1];
    let mut step = vec![vec![Step::Start; m + 1]; n + 1];
    best[0][0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let mut cell = (f64::INFINITY, Step::Start);
            let mut consider = |prev: f64, cost: f64, s: Step| {
                if prev + cost < cell.0 {
                    cell = (prev + cost, s);
                }
            };
            consider(
                best[i - 1][j - 1],
                costs.link_cost(src, i - 1..i, pivot, j - 1..j),
                Step::OneToOne,
            );
            for b in 2..=j {
                consider(
                    best[i - 1][j - b],
                    costs.link_cost(src, i - 1..i, pivot, j - b..j),
                    Step::OneToMany(b),
                );
            }
            for a in 2..=i {
                consider(
                    best[i - a][j - 1],
                    costs.link_cost(src, i - a..i, pivot, j - 1..j),
                    Step::ManyToOne(a),
                );
            }
            (best[i][j], step[i][j]) = cell;
        }
    }
    let mut links = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let (a, b) = match step[i][j] {
            Step::OneToOne => (1, 1),
            Step::OneToMany(b) => (1, b),
            Step::ManyToOne(a) => (a, 1),
            Step::Start => unreachable!("every cell with i, j > 0 is reachable"),
        };
        links.push(Link {
            source: i - a..i,
            pivot: j - b..j,
        });
        i -= a;
        j -= b;
    }
    links.reverse();
    Ok(AlignmentMap {
        links,
        cost: best[n][m],
    })
}

/// Token strings indexed by id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vocabulary {
    pub tokens: Vec<String>,
}

impl Vocabulary {
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        Self {
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, s: &str) -> Option<u32> {
        self.tokens.iter().position(|t| t == s).map(|i| i as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingMode {
    Exact,
    Fuzzy,
    Statistical,
}

/// Weighted source→pivot token correspondence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabMappingTable {
    pub mode: MappingMode,
    pub source_vocab_size: usize,
    pub pivot_vocab_size: usize,
    /// Source id → `(pivot id, weight)`, weights summing to one. Absent ids
    /// are unmapped.
    pub entries: BTreeMap<u32, Vec<(u32, f64)>>,
    /// Raw co-occurrence counts (statistical mode only).
    #[serde(default)]
    pub counts: BTreeMap<u32, BTreeMap<u32, f64>>,
}

impl VocabMappingTable {
    pub fn identity(size: usize) -> Self {
        Self {
            mode: MappingMode::Exact,
            source_vocab_size: size,
            pivot_vocab_size: size,
            entries: (0..size as u32).map(|i| (i, vec![(i, 1.0)])).collect(),
            counts: BTreeMap::new(),
        }
    }

    pub fn coverage(&self) -> f64 {
        self.entries.len() as f64 / self.source_vocab_size as f64
    }

    pub fn validate(&self) -> Result<()> {
        for (&s, targets) in &self.entries {
            if s as usize >= self.source_vocab_size {
                return Err(Error::OutOfRange(format!("source id {s}")));
            }
            let mut total = 0.0;
            for &(p, w) in targets {
                if p as usize >= self.pivot_vocab_size {
                    return Err(Error::OutOfRange(format!("pivot id {p}")));
                }
                if !(w >= 0.0 && w.is_finite()) {
                    return Err(Error::InvalidArgument(format!("weight {w} for {s}->{p}")));
                }
                total += w;
            }
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("weights of {s} sum to {total}")));
            }
        }
        Ok(())
    }

    /// Dense `source × pivot` transport matrix.
    pub fn to_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.source_vocab_size, self.pivot_vocab_size));
        for (&s, targets) in &self.entries {
            for &(p, w) in targets {
                m[[s as usize, p as usize]] += w;
            }
        }
        m
    }
}

/// A pair of sequences with their alignment, one unit of the statistical
/// mapping corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub source: TokenSequence,
    pub pivot: TokenSequence,
    pub alignment: AlignmentMap,
}

/// Character-level Levenshtein distance.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.chars().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Builds a mapping table.
///
/// * exact: identical surface strings map one-to-one;
/// * fuzzy: the nearest pivot string within `fuzzy_max_dist` edits (lowest
///   id on ties);
/// * statistical: normalised co-occurrence counts over `corpus`. A matched
///   link gives each of its source tokens one unit spread evenly over the
///   pivot span; a mismatched link spreads a single unit over all its
///   (source, pivot) pairs.
pub fn build_vocab_mapping(
    mode: MappingMode,
    source_vocab: &Vocabulary,
    pivot_vocab: &Vocabulary,
    corpus: &[AlignedPair],
    fuzzy_max_dist: usize,
) -> Result<VocabMappingTable> {
    let mut table = VocabMappingTable {
        mode,
        source_vocab_size: source_vocab.len(),
        pivot_vocab_size: pivot_vocab.len(),
        entries: BTreeMap::new(),
        counts: BTreeMap::new(),
    };
    match mode {
        MappingMode::Exact => {
            for (s, tok) in source_vocab.tokens.iter().enumerate() {
                if let Some(p) = pivot_vocab.id_of(tok) {
                    table.entries.insert(s as u32, vec![(p, 1.0)]);
                }
            }
        }
        MappingMode::Fuzzy => {
            for (s, tok) in source_vocab.tokens.iter().enumerate() {
                let nearest = pivot_vocab
                    .tokens
                    .iter()
                    .enumerate()
                    .map(|(p, pt)| (edit_distance(tok, pt), p))
                    .min();
                if let Some((dist, p)) = nearest {
                    if dist <= fuzzy_max_dist {
                        table.entries.insert(s as u32, vec![(p as u32, 1.0)]);
                    }
                }
            }
        }
        MappingMode::Statistical => {
            if corpus.is_empty() {
                return Err(Error::Empty("statistical mapping needs an aligned corpus".into()));
            }
            for pair in corpus {
                pair.alignment.validate(pair.source.len(), pair.pivot.len())?;
                for link in &pair.alignment.links {
                    let matched = spans_match(&pair.source, link.source.clone(), &pair.pivot, link.pivot.clone());
                    let (a, b) = (link.source.len() as f64, link.pivot.len() as f64);
                    let unit = if matched { 1.0 / b } else { 1.0 / (a * b) };
                    for &s in &pair.source.ids[link.source.clone()] {
                        if s as usize >= table.source_vocab_size {
                            return Err(Error::OutOfRange(format!("source id {s}")));
                        }
                        for &p in &pair.pivot.ids[link.pivot.clone()] {
                            if p as usize >= table.pivot_vocab_size {
                                return Err(Error::OutOfRange(format!("pivot id {p}")));
                            }
                            *table.counts.entry(s).or_default().entry(p).or_insert(0.0) += unit;
                        }
                    }
                }
            }
            for (&s, row) in &table.counts {
                let total: f64 = row.values().sum();
                table
                    .entries
                    .insert(s, row.iter().map(|(&p, &c)| (p, c / total)).collect());
            }
        }
    }
    Ok(table)
}

/// Where probability on unmapped source tokens goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy", content = "token")]
pub enum UnmappedPolicy {
    /// Dropped, then the mapped mass is renormalised.
    #[default]
    Redistribute,
    /// Moved onto this pivot id.
    UnknownToken(u32),
}

const ROW_TOLERANCE: f64 = 1e-6;

fn check_row<T: Scalar>(row: ArrayView1<'_, T>, tol: f64) -> Result<()> {
    if row.iter().any(|&x| !(x >= T::zero() && x.is_finite())) {
        return Err(Error::InvalidArgument("probability row has a negative or non-finite entry".into()));
    }
    let s: f64 = row.iter().map(|x| x.as_f64()).sum();
    if (s - 1.0).abs() > tol {
        return Err(Error::InvalidArgument(format!("probability row sums to {s}")));
    }
    Ok(())
}

/// `pivot[j] = Σ_i src[i] · weight(i → j)`, renormalised.
pub fn map_distribution<T: Scalar>(
    src_row: ArrayView1<'_, T>,
    table: &VocabMappingTable,
    unmapped: UnmappedPolicy,
) -> Result<Array1<T>> {
    if src_row.len() != table.source_vocab_size {
        return Err(Error::VocabMismatch(src_row.len(), table.source_vocab_size));
    }
    check_row(src_row, ROW_TOLERANCE)?;
    let mut out = vec![0.0f64; table.pivot_vocab_size];
    let mut lost = 0.0f64;
    for (i, &p) in src_row.iter().enumerate() {
        let p = p.as_f64();
        if p == 0.0 {
            continue;
        }
        match table.entries.get(&(i as u32)) {
            Some(targets) => {
                for &(j, w) in targets {
                    out[j as usize] += p * w;
                }
            }
            None => lost += p,
        }
    }
    if let UnmappedPolicy::UnknownToken(u) = unmapped {
        let u = u as usize;
        if u >= out.len() {
            return Err(Error::OutOfRange(format!("unknown token {u}")));
        }
        out[u] += lost;
    }
    let total: f64 = out.iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroVector("no probability mass survives the mapping".into()));
    }
    Ok(out.into_iter().map(|x| T::of(x / total)).collect())
}

/// `n × v` matrix of probability rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionMatrix<T> {
    rows: Array2<T>,
}

impl<T: Scalar> DistributionMatrix<T> {
    /// Each row must be non-negative and sum to one within 1e-6.
    pub fn new(rows: Array2<T>) -> Result<Self> {
        for r in rows.rows() {
            check_row(r, ROW_TOLERANCE)?;
        }
        Ok(Self { rows })
    }

    /// Divides each non-negative row by its sum.
    pub fn normalized(rows: Array2<T>) -> Result<Self> {
        let mut rows = rows;
        for mut r in rows.rows_mut() {
            if r.iter().any(|&x| !(x >= T::zero() && x.is_finite())) {
                return Err(Error::InvalidArgument("negative or non-finite probability".into()));
            }
            let s: f64 = r.iter().map(|x| x.as_f64()).sum();
            if s <= 0.0 {
                return Err(Error::ZeroVector("probability row with zero mass".into()));
            }
            r.mapv_inplace(|x| T::of(x.as_f64() / s));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> ArrayView2<'_, T> {
        self.rows.view()
    }

    pub fn into_inner(self) -> Array2<T> {
        self.rows
    }

    pub fn positions(&self) -> usize {
        self.rows.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.rows.ncols()
    }

    /// Maps every row through `table`.
    pub fn map_through(&self, table: &VocabMappingTable, unmapped: UnmappedPolicy) -> Result<Self> {
        let rows: Vec<Array1<T>> = self
            .rows
            .rows()
            .into_iter()
            .map(|r| map_distribution(r, table, unmapped))
            .collect::<Result<_>>()?;
        let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
        Ok(Self {
            rows: ndarray::stack(Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    #[default]
    MinCrossEntropy,
    Average,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusedFrom {
    A,
    B,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedDistributions<T> {
    pub matrix: DistributionMatrix<T>,
    /// Which input produced each row.
    pub selected: Vec<FusedFrom>,
    pub cross_entropy_a: Vec<f64>,
    pub cross_entropy_b: Vec<f64>,
}

/// `−ln p[reference]`, infinite when the reference has zero probability.
pub fn cross_entropy<T: Scalar>(row: ArrayView1<'_, T>, reference: u32) -> f64 {
    -row[reference as usize].as_f64().ln()
}

/// Per position, keeps the row with lower cross-entropy against the
/// reference token (`a` on ties), or averages the two rows.
pub fn fuse_distributions<T: Scalar>(
    a: &DistributionMatrix<T>,
    b: &DistributionMatrix<T>,
    reference: &TokenSequence,
    strategy: FusionStrategy,
) -> Result<FusedDistributions<T>> {
    let n = a.positions();
    if b.positions() != n || reference.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "positions: a {n}, b {}, reference {}",
            b.positions(),
            reference.len()
        )));
    }
    if a.vocab_size() != b.vocab_size() {
        return Err(Error::VocabMismatch(a.vocab_size(), b.vocab_size()));
    }
    if let Some(&bad) = reference.ids.iter().find(|&&id| id as usize >= a.vocab_size()) {
        return Err(Error::OutOfRange(format!("reference id {bad} outside vocabulary")));
    }
    let ce_a: Vec<f64> = (0..n).map(|i| cross_entropy(a.rows.row(i), reference.ids[i])).collect();
    let ce_b: Vec<f64> = (0..n).map(|i| cross_entropy(b.rows.row(i), reference.ids[i])).collect();
    let mut rows = Array2::zeros(a.rows.dim());
    let mut selected = Vec::with_capacity(n);
    for i in 0..n {
        match strategy {
            FusionStrategy::MinCrossEntropy => {
                if ce_a[i] <= ce_b[i] {
                    rows.row_mut(i).assign(&a.rows.row(i));
                    selected.push(FusedFrom::A);
                } else {
                    rows.row_mut(i).assign(&b.rows.row(i));
                    selected.push(FusedFrom::B);
                }
            }
            FusionStrategy::Average => {
                let half = T::of(0.5);
                let avg = (&a.rows.row(i) + &b.rows.row(i)).mapv(|x| x * half);
                rows.row_mut(i).assign(&avg);
                selected.push(FusedFrom::Both);
            }
        }
    }
    let matrix = match strategy {
        FusionStrategy::MinCrossEntropy => DistributionMatrix { rows },
        FusionStrategy::Average => DistributionMatrix::normalized(rows)?,
    };
    Ok(FusedDistributions {
        matrix,
        selected,
        cross_entropy_a: ce_a,
        cross_entropy_b: ce_b,
    })
}
