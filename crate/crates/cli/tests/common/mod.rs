//! Fixture builders and a thin wrapper around the `seme` binary.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use seme_core::{ModelBundle, Tensor, TensorArchive};

pub fn seme(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seme"))
        .args(args)
        .env_remove("SEME_THREADS")
        .output()
        .expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

pub fn write_archive(path: &Path, archive: &TensorArchive) {
    std::fs::write(path, archive.to_bytes().unwrap()).unwrap();
}

pub fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Two layers of 4×4 `attn` and `mlp` tensors and a `d × v` head. With a
/// base, every value is the base's plus 0.1 × noise.
pub fn toy_bundle(id: &str, seed: u64, d: usize, v: usize, base: Option<&ModelBundle>) -> ModelBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut near = |n: usize, from: Option<&[f32]>| -> Vec<f32> {
        let mut x = noise(&mut rng, n);
        if let Some(b) = from {
            for (a, y) in x.iter_mut().zip(b) {
                *a = y + 0.1 * *a;
            }
        }
        x
    };
    let layers = (0..2)
        .map(|l| {
            ["attn", "mlp"]
                .iter()
                .map(|name| {
                    let from = base.map(|b| b.layers[l].params[*name].data());
                    (name.to_string(), Tensor::new(*name, vec![4, 4], near(16, from)).unwrap())
                })
                .collect::<BTreeMap<_, _>>()
        })
        .collect();
    let head = near(d * v, base.map(|b| b.lm_head.data()));
    ModelBundle::new(id, layers, Tensor::new("lm_head", vec![d, v], head).unwrap()).unwrap()
}

pub fn save_bundle(dir: &Path, name: &str, b: &ModelBundle) -> PathBuf {
    let path = dir.join(format!("{name}.safetensors"));
    write_archive(&path, &b.to_archive().unwrap());
    path
}

pub fn save_matrix(path: &Path, name: &str, m: &Array2<f64>) {
    let t = Tensor::from_array2(name, m.view()).cast::<f32>();
    write_archive(path, &TensorArchive::from_tensors(vec![t]).unwrap());
}

pub fn gaussian(seed: u64, rows: usize, cols: usize) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(&mut rng))
}

/// Rows drawn on the simplex, stored as f32 "dist".
pub fn save_distributions(path: &Path, rows: &Array2<f64>) {
    save_matrix(path, "dist", rows);
}

pub fn write_lines(path: &Path, lines: &[serde_json::Value]) {
    let text: String = lines.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(path, text).unwrap();
}
