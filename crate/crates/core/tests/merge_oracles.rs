mod oracles;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use seme_core::merge::{
    erase_sign_minority, fusion_vectors, merge, select_top_variance, FusionVector, MergeRecipe,
    SelectionMask, TiePolicy,
};
use seme_core::{ModelBundle, Tensor};

use oracles::*;

fn toy(id: &str, rng: &mut ChaCha8Rng, base: Option<&ModelBundle>) -> ModelBundle {
    let mut noise = |n: usize| -> Vec<f32> {
        (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
    };
    let layers = (0..2)
        .map(|l| {
            let mut p = BTreeMap::new();
            for name in ["attn", "mlp"] {
                let mut data = noise(16);
                if let Some(b) = base {
                    let t = &b.layers[l].params[name];
                    for (x, y) in data.iter_mut().zip(t.data()) {
                        *x = y + 0.1 * *x;
                    }
                }
                p.insert(name.to_string(), Tensor::new(name, vec![4, 4], data).unwrap());
            }
            p
        })
        .collect();
    let mut head = noise(24);
    if let Some(b) = base {
        for (x, y) in head.iter_mut().zip(b.lm_head.data()) {
            *x = y + 0.1 * *x;
        }
    }
    ModelBundle::new(id, layers, Tensor::new("head", vec![4, 6], head).unwrap()).unwrap()
}

fn params(b: &ModelBundle) -> Params {
    b.tensors()
        .into_iter()
        .map(|t| (t.name().to_string(), t.data().to_vec()))
        .collect()
}

#[test]
fn three_model_merge_matches_literal_oracle_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for tau in [5.0, 20.0, 37.5, 100.0] {
        let pivot = toy("pivot", &mut rng, None);
        let models: Vec<ModelBundle> = ["m2", "m0", "m1"]
            .iter()
            .map(|id| toy(id, &mut rng, Some(&pivot)))
            .collect();
        let recipe = MergeRecipe { tau, ..MergeRecipe::default() };
        let (merged, _) = merge(&models, &pivot, &recipe).unwrap();
        let inputs: Vec<(String, Params)> = models.iter().map(|m| (m.model_id.clone(), params(m))).collect();
        let oracle = literal_merge(&inputs, &params(&pivot), tau);
        let ours = params(&merged);
        assert_eq!(ours.len(), oracle.len());
        for (name, v) in &oracle {
            let got: Vec<u32> = ours[name].iter().map(|x| x.to_bits()).collect();
            let want: Vec<u32> = v.iter().map(|x| x.to_bits()).collect();
            assert_eq!(got, want, "tensor {name} at tau {tau}");
        }
    }
}

#[test]
fn self_merge_is_the_pivot() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let pivot = toy("p", &mut rng, None);
    let (merged, _) = merge(std::slice::from_ref(&pivot), &pivot, &MergeRecipe::default()).unwrap();
    for (a, b) in merged.tensors().iter().zip(pivot.tensors()) {
        assert_eq!(a.name(), b.name());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn masks_grow_with_tau() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let pivot = toy("p", &mut rng, None);
    let models: Vec<ModelBundle> = (0..3).map(|i| toy(&format!("m{i}"), &mut rng, Some(&pivot))).collect();
    let deltas = fusion_vectors(&models, &pivot).unwrap();
    let masks: Vec<SelectionMask> = [5.0, 20.0, 50.0, 100.0]
        .iter()
        .map(|&t| select_top_variance(&deltas, t).unwrap())
        .collect();
    for w in masks.windows(2) {
        assert!(w[0].is_subset_of(&w[1]));
    }
    assert!(masks[3].masks.values().all(|m| m.iter().all(|&b| b)));
}

fn single(id: &str, data: Vec<f64>) -> FusionVector<f64> {
    let n = data.len();
    FusionVector {
        source_model_id: id.into(),
        deltas: BTreeMap::from([("w".to_string(), Tensor::new("w", vec![n], data).unwrap())]),
    }
}

#[test]
fn erase_matches_majority_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    for k in [2usize, 3, 5] {
        let n = 400;
        let cols: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                (0..n)
                    .map(|_| match rng.random_range(0..5) {
                        0 => 0.0,
                        1 | 2 => rng.random_range(0.01..1.0),
                        _ => -rng.random_range(0.01..1.0),
                    })
                    .collect()
            })
            .collect();
        let deltas: Vec<_> = cols.iter().enumerate().map(|(i, c)| single(&format!("m{i}"), c.clone())).collect();
        let mask = SelectionMask {
            tau: 100.0,
            masks: BTreeMap::from([("w".to_string(), vec![true; n])]),
        };
        let pruned = erase_sign_minority(&deltas, &mask, TiePolicy::DropAll).unwrap();
        for e in 0..n {
            let vals: Vec<f64> = cols.iter().map(|c| c[e]).collect();
            let keep = majority_survivors(&vals);
            for m in 0..k {
                let want = if keep[m] { vals[m] } else { 0.0 };
                assert_eq!(pruned[m].deltas["w"].data()[e], want);
            }
        }
    }
}
