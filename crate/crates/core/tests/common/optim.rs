//! Optimizer traces on f(θ) = θ²/2 and on the tiny model.

use mlconv_gec::mlconv::{forward_nll, Mode};
use mlconv_gec::numcore::Array;
use mlconv_gec::trainer::{nag_step, nag_update};

use super::{random_params, tiny_config};

/// Hand trace for g = θ, lr = 0.1, μ = 0.9 from θ = 1: (v, θ) per step.
pub const NAG_TRACE: [(f64, f64); 3] = [(-0.1, 0.81), (-0.171, 0.5751), (-0.21141, 0.327321)];

/// Largest deviation from [`NAG_TRACE`].
pub fn nag_trace_error() -> f64 {
    let (mut theta, mut v) = ([1.0], [0.0]);
    let mut worst: f64 = 0.0;
    for (vk, tk) in NAG_TRACE {
        let g = [theta[0]];
        nag_update(&mut theta, &mut v, &g, 0.1, 0.9);
        worst = worst.max((v[0] - vk).abs()).max((theta[0] - tk).abs());
    }
    worst
}

/// θ after `steps` NAG steps on the quadratic.
pub fn nag_theta_after(steps: usize) -> f64 {
    let (mut theta, mut v) = ([1.0], [0.0]);
    for _ in 0..steps {
        let g = [theta[0]];
        nag_update(&mut theta, &mut v, &g, 0.1, 0.9);
    }
    theta[0]
}

/// Parameters whose μ = 0 step differs in any bit from `θ - lr·g`.
pub fn zero_momentum_mismatches() -> usize {
    let p = random_params(tiny_config(8, 8, 3, 4, 2), 1, 0.5);
    let g = forward_nll(&p, &[4, 5, 2], &[6, 2], Mode::Inference, true).unwrap().grads.unwrap();
    let mut stepped = p.weights.clone();
    let mut vel: Vec<Array> = p.weights.arrays().iter().map(|a| Array::zeros(a.shape())).collect();
    nag_step(&mut stepped, &g, &mut vel, 0.3, 0.0).unwrap();
    let ga = g.arrays();
    let mut bad = 0;
    for (i, (s, o)) in stepped.arrays().iter().zip(p.weights.arrays()).enumerate() {
        for ((a, b), gv) in s.data().iter().zip(o.data()).zip(ga[i].data()) {
            if a.to_bits() != (b - 0.3 * gv).to_bits() {
                bad += 1;
            }
        }
    }
    bad
}
