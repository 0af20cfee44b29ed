//! Central finite-difference harness shared by the gradient and acceptance
//! targets.

#![allow(dead_code)]

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stepalign_core::align::{brute_force_align, drop_dtw, percentile_drop_cost, CostSpec};
use stepalign_core::losses::{
    attention_on_tape, diversity_on_tape, global_loss_on_tape, sample_frames, seq_correspondence,
    seq_loss_with, smoothness_with, total_on_tape,
};
use stepalign_core::model::{ModelConfig, ModelParams, Tape, Var};
use stepalign_core::{EmbeddingSequence, MatchMode, Matrix, SequenceKind};

const EPS: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-8;

pub fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

/// Worst relative error over all coordinates of all inputs.
pub fn check<F>(inputs: &[Matrix], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |vals: &[Matrix]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out)[(0, 0)]
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let mut worst: f64 = 0.0;
    for (t, &v) in vars.iter().enumerate() {
        let analytic = grads.get(v);
        for k in 0..inputs[t].len() {
            let mut plus = inputs.to_vec();
            plus[t].as_mut_slice()[k] += EPS;
            let mut minus = inputs.to_vec();
            minus[t].as_mut_slice()[k] -= EPS;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * EPS);
            let a = analytic.as_slice()[k];
            let diff = (a - numeric).abs();
            if diff > ABS_FLOOR {
                worst = worst.max(diff / a.abs().max(numeric.abs()));
            }
        }
    }
    worst
}

/// Reduce a matrix node to a scalar with fixed random weights so that every
/// output coordinate gets a distinct adjoint.
pub fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let (r, c) = tape.shape(x);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(r, c, &mut rng);
    let y = tape.mul_const(x, w).unwrap();
    tape.sum(y)
}

/// Worst relative error per elementary tape operation.
pub fn elementary_errors() -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random(3, 4, &mut rng);
    let b = random(3, 4, &mut rng);
    let c = random(4, 2, &mut rng);
    let row = random(1, 4, &mut rng);
    let pos = a.map(|x| x.abs() + 0.5);

    type Build = fn(&mut Tape, &[Var]) -> Var;
    let cases: Vec<(&str, Vec<Matrix>, Build)> = vec![
        ("matmul", vec![a.clone(), c.clone()], |t, v| {
            let y = t.matmul(v[0], v[1]).unwrap();
            weighted_sum(t, y, 1)
        }),
        ("matmul_t", vec![a.clone(), b.clone()], |t, v| {
            let y = t.matmul_t(v[0], v[1]).unwrap();
            weighted_sum(t, y, 2)
        }),
        ("add_sub_mul", vec![a.clone(), b.clone()], |t, v| {
            let s = t.add(v[0], v[1]).unwrap();
            let d = t.sub(v[0], v[1]).unwrap();
            let y = t.mul(s, d).unwrap();
            let y = t.scale(y, 1.7);
            weighted_sum(t, y, 3)
        }),
        ("row_broadcast", vec![a.clone(), row.clone()], |t, v| {
            let y = t.mul_row(v[0], v[1]).unwrap();
            let y = t.add_row(y, v[1]).unwrap();
            weighted_sum(t, y, 4)
        }),
        ("layer_norm", vec![a.clone()], |t, v| {
            let y = t.layer_norm(v[0]);
            weighted_sum(t, y, 5)
        }),
        ("softmax_rows", vec![a.clone()], |t, v| {
            let y = t.softmax_rows(v[0]);
            weighted_sum(t, y, 6)
        }),
        ("gelu", vec![a.clone()], |t, v| {
            let y = t.gelu(v[0]);
            weighted_sum(t, y, 7)
        }),
        ("slice_concat", vec![a.clone(), b.clone()], |t, v| {
            let l = t.slice_cols(v[0], 1, 2).unwrap();
            let r = t.slice_cols(v[1], 0, 3).unwrap();
            let y = t.concat_cols(&[r, l]).unwrap();
            let z = t.concat_rows(&[y, y]).unwrap();
            weighted_sum(t, z, 8)
        }),
        ("select_rows", vec![a.clone()], |t, v| {
            let y = t.select_rows(v[0], &[2, 0, 2]).unwrap();
            weighted_sum(t, y, 9)
        }),
        ("normalize_rows", vec![a.clone()], |t, v| {
            let y = t.normalize_rows(v[0]).unwrap();
            weighted_sum(t, y, 10)
        }),
        ("exp_log", vec![pos.clone()], |t, v| {
            let y = t.ln(v[0]);
            let z = t.exp(y);
            let z = t.mul(z, y).unwrap();
            weighted_sum(t, z, 11)
        }),
        ("mean_pick", vec![a.clone()], |t, v| {
            let m = t.mean(v[0]);
            let p = t.pick(v[0], 1, 2).unwrap();
            let y = t.mul(m, p).unwrap();
            t.sum(y)
        }),
        ("masked_logsumexp", vec![a.clone()], |t, v| {
            let mask: Vec<bool> = (0..12).map(|k| k % 3 != 1).collect();
            let y = t.masked_logsumexp(v[0], &mask).unwrap();
            weighted_sum(t, y, 12)
        }),
        ("cosine", vec![a.clone(), b.clone()], |t, v| {
            let y = t.cosine(v[0], v[1]).unwrap();
            weighted_sum(t, y, 13)
        }),
    ];
    cases
        .into_iter()
        .map(|(name, inputs, build)| (name, check(&inputs, build)))
        .collect()
}

pub fn unit_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    random(rows, cols, rng).normalized_rows().unwrap()
}

pub fn sequence_loss_with_frozen_correspondence_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let slots = random(4, 6, &mut rng);
    let phrases = unit_rows(5, 6, &mut rng);
    let corr = seq_correspondence(&slots, &phrases, 0.5).unwrap();
    assert!(corr.num_matches() > 0);
    
    check(&[slots, phrases], |t, v| seq_loss_with(t, v[0], v[1], &corr, 0.1).unwrap())
}

pub fn info_nce_single_anchor_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let anchor = random(1, 5, &mut rng);
    let cands = random(4, 5, &mut rng);
    
    check(&[anchor, cands], |t, v| {
        let cos = t.cosine(v[0], v[1]).unwrap();
        let logits = t.scale(cos, 1.0 / 0.1);
        let lse = t.masked_logsumexp(logits, &[true; 4]).unwrap();
        let p = t.pick(logits, 0, 2).unwrap();
        t.sub(lse, p).unwrap()
    })
}

pub fn global_loss_gradient_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let inputs = vec![
        random(3, 5, &mut rng),
        random(3, 5, &mut rng),
        unit_rows(4, 5, &mut rng),
        unit_rows(2, 5, &mut rng),
    ];
    
    check(&inputs, |t, v| {
        global_loss_on_tape(t, &v[..2], &v[2..], 0.1).unwrap()
    })
}

pub fn diversity_gradient_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    
    check(&[random(4, 6, &mut rng)], |t, v| diversity_on_tape(t, v[0]).unwrap())
}

pub fn smoothness_gradient_with_fixed_sampling_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let video = unit_rows(16, 6, &mut rng);
    let slots = random(3, 6, &mut rng);
    let sampled = sample_frames(16, 10, &mut rng);
    
    check(&[video, slots], |t, v| {
        let att = attention_on_tape(t, v[0], v[1], 0.3).unwrap();
        smoothness_with(t, att, &sampled, 2, 0.3).unwrap()
    })
}

pub fn full_model_gradient_error() -> f64 {
    let cfg = ModelConfig {
        dim: 8,
        num_slots: 3,
        num_layers: 1,
        num_heads: 2,
        ff_multiplier: 2,
        dropout_rate: 0.1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let base = ModelParams::init(cfg.clone(), &mut rng).unwrap();
    // move away from the symmetric initialization so every path is active
    let tensors: Vec<Matrix> = base
        .tensors()
        .iter()
        .map(|m| m.zip_map(&random(m.rows(), m.cols(), &mut rng), |x, n| x + 0.3 * n))
        .collect();
    let video = EmbeddingSequence::new(unit_rows(12, 8, &mut rng), SequenceKind::Video).unwrap();
    let phrases = unit_rows(5, 8, &mut rng);
    let other_phrases = unit_rows(4, 8, &mut rng);
    let sampled = sample_frames(12, 8, &mut rng);

    let params = ModelParams::from_tensors(cfg.clone(), tensors.clone()).unwrap();
    let slots0 = params.forward(&video).unwrap();
    let corr = seq_correspondence(slots0.data(), &phrases, 0.8).unwrap();

    let gamma = 0.1;
    // evaluate the objective with parameters bound on a fresh tape
    let objective = |values: &[Matrix]| -> (f64, Vec<Matrix>) {
        let params = ModelParams::from_tensors(cfg.clone(), values.to_vec()).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let slots = params
            .forward_on_tape(&mut tape, &bound, &video, None::<&mut ChaCha8Rng>)
            .unwrap();
        let p = tape.leaf(phrases.clone());
        let other_slots = tape.leaf(random(3, 8, &mut ChaCha8Rng::seed_from_u64(2)));
        let q = tape.leaf(other_phrases.clone());
        let seq = seq_loss_with(&mut tape, slots, p, &corr, gamma).unwrap();
        let glob = global_loss_on_tape(&mut tape, &[slots, other_slots], &[p, q], gamma).unwrap();
        let div = diversity_on_tape(&mut tape, slots).unwrap();
        let v = tape.leaf(video.data().clone());
        let att = attention_on_tape(&mut tape, v, slots, 0.3).unwrap();
        let smooth = smoothness_with(&mut tape, att, &sampled, 2, 0.3).unwrap();
        let total = total_on_tape(&mut tape, seq, glob, div, smooth, 0.3, 0.02).unwrap();
        let mut grads = tape.backward(total).unwrap();
        let g = params.gradients(&mut grads, &bound);
        (tape.value(total)[(0, 0)], g)
    };

    let (_, analytic) = objective(&tensors);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for t in 0..tensors.len() {
        assert_eq!(analytic[t].shape(), tensors[t].shape());
        for k in 0..tensors[t].len() {
            let mut plus = tensors.clone();
            plus[t].as_mut_slice()[k] += EPS;
            let mut minus = tensors.clone();
            minus[t].as_mut_slice()[k] -= EPS;
            let numeric = (objective(&plus).0 - objective(&minus).0) / (2.0 * EPS);
            let a = analytic[t].as_slice()[k];
            let diff = (a - numeric).abs();
            if diff > ABS_FLOOR {
                worst = worst.max(diff / a.abs().max(numeric.abs()));
            }
            checked += 1;
        }
    }
    assert_eq!(checked, params.num_values());
    worst
}

pub const PERCENTILES: [f64; 3] = [0.3, 0.5, 0.8];

/// Costs uniform in [-1, 1] with K <= 5 rows and N <= 6 columns.
pub fn random_costs(rng: &mut ChaCha8Rng) -> Matrix {
    let k = rng.random_range(1..=5);
    let n = rng.random_range(1..=6);
    random(k, n, rng)
}

/// Random instance with a symmetric percentile drop cost.
pub fn random_spec(rng: &mut ChaCha8Rng) -> CostSpec {
    let costs = random_costs(rng);
    let p = *PERCENTILES.choose(rng).unwrap();
    let drop = percentile_drop_cost(&costs, p).unwrap();
    CostSpec::symmetric(costs, drop)
}

/// Largest |DP - exhaustive| total cost over `count` random instances.
pub fn oracle_max_error(mode: MatchMode, count: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let spec = random_spec(&mut rng);
        let dp = drop_dtw(&spec, mode).unwrap();
        let bf = brute_force_align(&spec, mode).unwrap();
        worst = worst.max((dp.total_cost() - bf.total_cost()).abs());
    }
    worst
}

pub const DROP_SWEEP: [f64; 5] = [-0.6, -0.2, 0.1, 0.4, 0.9];

/// Number of instances where a larger drop cost led to more drops.
pub fn monotonicity_violations(mode: MatchMode, instances: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..instances {
        let costs = random_costs(&mut rng);
        let drops: Vec<usize> = DROP_SWEEP
            .iter()
            .map(|&c| drop_dtw(&CostSpec::symmetric(costs.clone(), c), mode).unwrap().num_drops())
            .collect();
        if drops.windows(2).any(|w| w[1] > w[0]) {
            violations += 1;
        }
    }
    violations
}
