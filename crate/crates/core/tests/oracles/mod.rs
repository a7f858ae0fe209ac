//! Reference implementations written independently of the library, used as
//! ground truth by the integration and acceptance tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

pub fn gaussian_vector<R: Rng>(rng: &mut R, n: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || StandardNormal.sample(rng))
}

fn to_na(a: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// `Wᵀ (W Wᵀ)⁻¹` for a full-row-rank `d × v` head, i.e. the minimum-norm
/// least-squares solution of `W X = I` taken row-wise.
pub fn normal_equations_bases(w: ArrayView2<'_, f64>) -> Array2<f64> {
    let w = to_na(w);
    let gram = &w * w.transpose();
    let inv = gram.try_inverse().expect("full row rank head");
    from_na(&(w.transpose() * inv))
}

/// Haar-ish orthogonal matrix from the QR factors of a Gaussian matrix.
pub fn random_orthogonal<R: Rng>(rng: &mut R, d: usize) -> Array2<f64> {
    let g = to_na(gaussian_matrix(rng, d, d).view());
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    from_na(&q)
}

pub fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (x, y) in a.iter().zip(b) {
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// `softmax_i(cos(r, s_i) / t)` with zero rows given zero mass.
pub fn cosine_softmax(r: ArrayView1<'_, f64>, bases: ArrayView2<'_, f64>, t: f64) -> Vec<f64> {
    let scores: Vec<Option<f64>> = bases
        .rows()
        .into_iter()
        .map(|s| {
            if s.iter().all(|&x| x == 0.0) {
                None
            } else {
                Some(cosine(r, s) / t)
            }
        })
        .collect();
    let m = scores.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| s.map_or(0.0, |x| (x - m).exp())).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// First index of maximal cosine.
pub fn nearest_linear_scan(r: ArrayView1<'_, f64>, bases: ArrayView2<'_, f64>) -> usize {
    let mut best = (f64::NEG_INFINITY, 0);
    for (i, s) in bases.rows().into_iter().enumerate() {
        let c = cosine(r, s);
        if c > best.0 {
            best = (c, i);
        }
    }
    best.1
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

/// One named tensor's flattened values.
pub type Params = BTreeMap<String, Vec<f32>>;

/// Straight-line pivot merge: differences, variance ranking by counting,
/// squared-magnitude coefficients summed to one, majority-sign pruning with
/// ties dropped, then `pivot + Σ η δ′` in ascending id order.
pub fn literal_merge(models: &[(String, Params)], pivot: &Params, tau: f64) -> Params {
    let (order, deltas, keep, eta) = literal_steps(models, pivot, tau);
    let mut out = Params::new();
    for (name, p) in pivot {
        let mut acc = p.clone();
        for i in 0..p.len() {
            if !keep[name][i] {
                continue;
            }
            let vals: Vec<f32> = deltas.iter().map(|d| d[name][i]).collect();
            let survivors = majority_survivors(&vals.iter().map(|&x| x as f64).collect::<Vec<_>>());
            for &kk in &order {
                if survivors[kk] {
                    acc[i] += eta[kk] as f32 * vals[kk];
                }
            }
        }
        out.insert(name.clone(), acc);
    }
    out
}

/// The coefficients `literal_merge` uses, in input order.
pub fn literal_etas(models: &[(String, Params)], pivot: &Params, tau: f64) -> Vec<f64> {
    literal_steps(models, pivot, tau).3
}

type Steps = (Vec<usize>, Vec<Params>, BTreeMap<String, Vec<bool>>, Vec<f64>);

fn literal_steps(models: &[(String, Params)], pivot: &Params, tau: f64) -> Steps {
    let mut order: Vec<usize> = (0..models.len()).collect();
    order.sort_by(|&a, &b| models[a].0.cmp(&models[b].0));
    let k = models.len();

    let mut deltas: Vec<Params> = Vec::new();
    for (_, m) in models {
        let mut d = Params::new();
        for (name, p) in pivot {
            let v: Vec<f32> = m[name].iter().zip(p).map(|(a, b)| a - b).collect();
            d.insert(name.clone(), v);
        }
        deltas.push(d);
    }

    let mut keep: BTreeMap<String, Vec<bool>> = BTreeMap::new();
    for (name, p) in pivot {
        let n = p.len();
        let score: Vec<f64> = (0..n)
            .map(|i| {
                let xs: Vec<f64> = deltas.iter().map(|d| d[name][i] as f64).collect();
                if k == 1 {
                    return xs[0].abs();
                }
                let mean = xs.iter().sum::<f64>() / k as f64;
                xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / k as f64
            })
            .collect();
        let m = ((tau * n as f64 / 100.0).ceil() as usize).clamp(1, n);
        let mask = (0..n)
            .map(|i| {
                let ahead = (0..n)
                    .filter(|&j| score[j] > score[i] || (score[j] == score[i] && j < i))
                    .count();
                ahead < m
            })
            .collect();
        keep.insert(name.clone(), mask);
    }

    let raw: Vec<f64> = deltas
        .iter()
        .map(|d| {
            let mut total = 0.0;
            for (name, v) in d {
                let mut s = 0.0;
                for (i, &x) in v.iter().enumerate() {
                    if keep[name][i] {
                        s += x as f64 * x as f64;
                    }
                }
                total += s;
            }
            total
        })
        .collect();
    let mut z = 0.0;
    for &i in &order {
        z += raw[i];
    }
    let eta: Vec<f64> = raw.iter().map(|r| r / z).collect();
    (order, deltas, keep, eta)
}

/// Which entries survive sign election: those agreeing with the sign of the
/// majority of non-zero entries; nothing survives an even split.
pub fn majority_survivors(values: &[f64]) -> Vec<bool> {
    let pos = values.iter().filter(|&&x| x > 0.0).count();
    let neg = values.iter().filter(|&&x| x < 0.0).count();
    values
        .iter()
        .map(|&x| (pos > neg && x > 0.0) || (neg > pos && x < 0.0))
        .collect()
}

/// Symbols whose concatenations can coincide, so merges and splits matter.
pub const ALPHABET: [&str; 5] = ["a", "b", "c", "ab", "bc"];

/// Minimum total cost over every segmentation into 1-1, 1-n and n-1 links,
/// enumerated recursively without memoisation.
pub fn exhaustive_alignment_cost(
    src: &[&str],
    pivot: &[&str],
    substitution: f64,
    split: f64,
    merge: f64,
) -> f64 {
    fn go(src: &[&str], pivot: &[&str], c: (f64, f64, f64)) -> f64 {
        if src.is_empty() && pivot.is_empty() {
            return 0.0;
        }
        if src.is_empty() || pivot.is_empty() {
            return f64::INFINITY;
        }
        let mut best = f64::INFINITY;
        for a in 1..=src.len() {
            for b in 1..=pivot.len() {
                if a > 1 && b > 1 {
                    continue;
                }
                let same = src[..a].concat() == pivot[..b].concat();
                let link = c.2 * (a - 1) as f64
                    + c.1 * (b - 1) as f64
                    + if same { 0.0 } else { c.0 };
                best = best.min(link + go(&src[a..], &pivot[b..], c));
            }
        }
        best
    }
    go(src, pivot, (substitution, split, merge))
}

/// Dense row-vector times mapping matrix, then renormalised.
pub fn matrix_map(row: &[f64], m: &Array2<f64>) -> Vec<f64> {
    let mut out = vec![0.0; m.ncols()];
    for (i, &p) in row.iter().enumerate() {
        for j in 0..m.ncols() {
            out[j] += p * m[[i, j]];
        }
    }
    let z: f64 = out.iter().sum();
    out.into_iter().map(|x| x / z).collect()
}

/// Index of the candidate with the smallest `−ln p[reference]`, first on ties.
pub fn ce_argmin(candidates: &[&[f64]], reference: usize) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, row) in candidates.iter().enumerate() {
        let ce = -row[reference].ln();
        if ce < best.0 {
            best = (ce, i);
        }
    }
    best.1
}

pub fn random_simplex<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let x: Vec<f64> = (0..n).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let z: f64 = x.iter().sum();
    x.into_iter().map(|v| v / z).collect()
}
