//! Helpers shared by several test targets.
#![allow(dead_code)]

use hybrid_sysid::lstm::{mse_loss, LstmNetwork};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Loss of `net` on one batch, recomputed from scratch.
fn loss(net: &LstmNetwork, x: &[f64], y: &[f64], steps: usize, batch: usize) -> f64 {
    let (pred, _) = net.forward_batch(x, steps, batch, false).unwrap();
    mse_loss(&pred, y).unwrap()
}

#[derive(Clone, Copy)]
pub enum Stencil {
    /// `(f(+h) - f(-h)) / 2h`
    Central2(f64),
    /// `(f(-2h) - 8f(-h) + 8f(+h) - f(+2h)) / 12h`
    Central4(f64),
}

/// Largest relative error between BPTT and central differences.
pub fn worst_gradient_error(
    cells: &[usize],
    n_in: usize,
    n_out: usize,
    steps: usize,
    batch: usize,
    seed: u64,
    stencil: Stencil,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = LstmNetwork::initialized(n_in, n_out, cells, seed).unwrap();
    for p in net.params_mut() {
        *p += rng.gen_range(-0.3..0.3);
    }
    let x: Vec<f64> = (0..steps * batch * n_in).map(|_| rng.gen_range(-1.5..1.5)).collect();
    let y: Vec<f64> = (0..steps * batch * n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (_, cache) = net.forward_batch(&x, steps, batch, true).unwrap();
    let grads = net.backward(&cache.unwrap(), &y).unwrap();

    let mut worst: f64 = 0.0;
    for i in 0..net.parameter_count() {
        let orig = net.params()[i];
        let mut at = |d: f64| {
            net.params_mut()[i] = orig + d;
            let l = loss(&net, &x, &y, steps, batch);
            net.params_mut()[i] = orig;
            l
        };
        let numeric = match stencil {
            Stencil::Central2(h) => (at(h) - at(-h)) / (2.0 * h),
            Stencil::Central4(h) => (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h),
        };
        let analytic = grads.values[i];
        let denom = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / denom);
    }
    worst
}
