//! Batched forward pass and backpropagation through time.
//!
//! Sequence batches are time-major: element `(t, b, i)` of a batch with
//! `batch` sequences and width `w` sits at `(t * batch + b) * w + i`. A single
//! sequence (`batch == 1`) is therefore an ordinary row-major `L x w` matrix.

use super::LstmNetwork;
use crate::error::{Error, Result};

/// `C = beta * C + A * B` for strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
    csc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    if k > 0 {
        assert!((m - 1) * rsa + (k - 1) * csa < a.len());
        assert!((k - 1) * rsb + (n - 1) * csb < b.len());
    }
    // SAFETY: the asserts above bound every index dgemm touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct BlockCache {
    /// `[x_t, h_{t-1}]` rows.
    concat: Vec<f64>,
    /// Activated gate values `[store, out, forget, in]` per row.
    gates: Vec<f64>,
    cells: Vec<f64>,
    tanh_cells: Vec<f64>,
    h: Vec<f64>,
}

/// Activations retained by a forward pass for [`LstmNetwork::backward`].
pub struct ForwardCache {
    revision: u64,
    params_len: usize,
    steps: usize,
    batch: usize,
    blocks: Vec<BlockCache>,
    outputs: Vec<f64>,
}

impl ForwardCache {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Network outputs in time-major layout.
    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    /// Activated gate values of `block` at step `t` for sequence `b`, in
    /// storage order `[store, out, forget, in]`.
    pub fn gate_values(&self, block: usize, t: usize, b: usize) -> &[f64] {
        let cache = &self.blocks[block];
        let four_h = cache.gates.len() / (self.steps * self.batch);
        let row = t * self.batch + b;
        &cache.gates[row * four_h..(row + 1) * four_h]
    }

    /// Cell states of `block` at step `t` for sequence `b`.
    pub fn cell_state(&self, block: usize, t: usize, b: usize) -> &[f64] {
        let cache = &self.blocks[block];
        let h = cache.cells.len() / (self.steps * self.batch);
        let row = t * self.batch + b;
        &cache.cells[row * h..(row + 1) * h]
    }
}

/// Parameter gradient with the loss it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
    /// Batch-mean MSE at the cached forward pass.
    pub loss: f64,
}

/// Mean squared error over every time step and output channel.
pub fn mse_loss(prediction: &[f64], target: &[f64]) -> Result<f64> {
    if prediction.len() != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "prediction has {} values, target {}",
            prediction.len(),
            target.len()
        )));
    }
    if prediction.is_empty() {
        return Err(Error::Empty("no values to compare".into()));
    }
    let sum: f64 = prediction
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / prediction.len() as f64)
}

impl LstmNetwork {
    /// Predicts one standardized `steps x n_inputs` sequence, starting from
    /// zero cell state. Returns `steps x n_outputs` values.
    pub fn forward(&self, inputs: &[f64], steps: usize) -> Result<Vec<f64>> {
        self.forward_batch(inputs, steps, 1, false).map(|(y, _)| y)
    }

    /// Forward pass over a time-major batch. With `keep_cache`, retains the
    /// activations needed by [`LstmNetwork::backward`].
    pub fn forward_batch(
        &self,
        inputs: &[f64],
        steps: usize,
        batch: usize,
        keep_cache: bool,
    ) -> Result<(Vec<f64>, Option<ForwardCache>)> {
        if steps == 0 || batch == 0 {
            return Err(Error::Empty("empty sequence batch".into()));
        }
        if inputs.len() != steps * batch * self.n_inputs() {
            return Err(Error::ShapeMismatch(format!(
                "{} input values for {steps} steps x {batch} sequences x {} inputs",
                inputs.len(),
                self.n_inputs()
            )));
        }
        let rows = steps * batch;
        let params = self.params();
        let mut caches = Vec::with_capacity(self.layout().blocks.len());
        let mut below: Option<Vec<f64>> = None;

        for block in &self.layout().blocks {
            let (ni, nh, w) = (block.inputs, block.cells, block.width());
            let weights = &params[block.weights..block.bias];
            let bias = &params[block.bias..block.bias + 4 * nh];
            let x = below.as_deref().unwrap_or(inputs);

            let mut concat = vec![0.0; rows * w];
            let mut gates = vec![0.0; rows * 4 * nh];
            let mut cells = vec![0.0; rows * nh];
            let mut tanh_cells = vec![0.0; rows * nh];
            let mut h = vec![0.0; rows * nh];

            for t in 0..steps {
                let r0 = t * batch;
                for b in 0..batch {
                    let row = &mut concat[(r0 + b) * w..(r0 + b + 1) * w];
                    row[..ni].copy_from_slice(&x[(r0 + b) * ni..(r0 + b + 1) * ni]);
                    if t > 0 {
                        let prev = (r0 - batch + b) * nh;
                        row[ni..].copy_from_slice(&h[prev..prev + nh]);
                    }
                }
                let z = &mut gates[r0 * 4 * nh..(r0 + batch) * 4 * nh];
                for zrow in z.chunks_exact_mut(4 * nh) {
                    zrow.copy_from_slice(bias);
                }
                gemm(
                    batch,
                    w,
                    4 * nh,
                    &concat[r0 * w..(r0 + batch) * w],
                    w,
                    1,
                    weights,
                    1,
                    w,
                    1.0,
                    z,
                    4 * nh,
                    1,
                );
                for b in 0..batch {
                    let r = r0 + b;
                    let g = &mut gates[r * 4 * nh..(r + 1) * 4 * nh];
                    for j in 0..nh {
                        let s = sigmoid(g[j]);
                        let o = sigmoid(g[nh + j]);
                        let f = sigmoid(g[2 * nh + j]);
                        let a = g[3 * nh + j].tanh();
                        g[j] = s;
                        g[nh + j] = o;
                        g[2 * nh + j] = f;
                        g[3 * nh + j] = a;
                        let c_prev = if t > 0 { cells[(r - batch) * nh + j] } else { 0.0 };
                        let c = c_prev * f + a * s;
                        let tc = c.tanh();
                        cells[r * nh + j] = c;
                        tanh_cells[r * nh + j] = tc;
                        h[r * nh + j] = tc * o;
                    }
                }
            }
            below = Some(h.clone());
            caches.push(BlockCache {
                concat,
                gates,
                cells,
                tanh_cells,
                h,
            });
        }

        let layout = self.layout();
        let nh = *self.architecture().last().expect("non-empty");
        let no = self.n_outputs();
        let top = below.expect("at least one block");
        let head_b = &params[layout.head_bias..layout.total];
        let mut outputs = vec![0.0; rows * no];
        for orow in outputs.chunks_exact_mut(no) {
            orow.copy_from_slice(head_b);
        }
        gemm(
            rows,
            nh,
            no,
            &top,
            nh,
            1,
            &params[layout.head_weights..layout.head_bias],
            1,
            nh,
            1.0,
            &mut outputs,
            no,
            1,
        );

        let cache = keep_cache.then(|| ForwardCache {
            revision: self.revision(),
            params_len: params.len(),
            steps,
            batch,
            blocks: caches,
            outputs: outputs.clone(),
        });
        Ok((outputs, cache))
    }

    /// Exact gradient of the batch-mean MSE with respect to every parameter.
    ///
    /// `target` uses the same time-major layout as the cached outputs. Cell
    /// states start at zero for each sequence, so gradients are truncated at
    /// sequence boundaries.
    pub fn backward(&self, cache: &ForwardCache, target: &[f64]) -> Result<Gradients> {
        if cache.revision != self.revision() || cache.params_len != self.params().len() {
            return Err(Error::StaleCache);
        }
        let (steps, batch) = (cache.steps, cache.batch);
        let rows = steps * batch;
        let no = self.n_outputs();
        if target.len() != rows * no {
            return Err(Error::ShapeMismatch(format!(
                "target has {} values, expected {}",
                target.len(),
                rows * no
            )));
        }
        let params = self.params();
        let layout = self.layout();
        let mut grads = vec![0.0; params.len()];

        let norm = (steps * no * batch) as f64;
        let mut loss = 0.0;
        let mut d_out = vec![0.0; rows * no];
        for ((d, y), t) in d_out.iter_mut().zip(&cache.outputs).zip(target) {
            let e = y - t;
            loss += e * e;
            *d = 2.0 * e / norm;
        }
        loss /= norm;

        let nh_top = *self.architecture().last().expect("non-empty");
        let top = &cache.blocks.last().expect("non-empty").h;
        gemm(
            no,
            rows,
            nh_top,
            &d_out,
            1,
            no,
            top,
            nh_top,
            1,
            0.0,
            &mut grads[layout.head_weights..layout.head_bias],
            nh_top,
            1,
        );
        for drow in d_out.chunks_exact(no) {
            for (g, d) in grads[layout.head_bias..layout.total].iter_mut().zip(drow) {
                *g += d;
            }
        }
        let mut d_h = vec![0.0; rows * nh_top];
        gemm(
            rows,
            no,
            nh_top,
            &d_out,
            no,
            1,
            &params[layout.head_weights..layout.head_bias],
            nh_top,
            1,
            0.0,
            &mut d_h,
            nh_top,
            1,
        );

        for (index, (block, bc)) in layout.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let (ni, nh, w) = (block.inputs, block.cells, block.width());
            let weights = &params[block.weights..block.bias];
            let has_lower = index > 0;
            let mut d_z = vec![0.0; rows * 4 * nh];
            let mut dh_rec = vec![0.0; batch * nh];
            let mut dc_next = vec![0.0; batch * nh];
            let mut d_x = if has_lower { vec![0.0; rows * ni] } else { Vec::new() };
            let mut d_a = vec![0.0; batch * w];

            for t in (0..steps).rev() {
                let r0 = t * batch;
                for b in 0..batch {
                    let r = r0 + b;
                    let g = &bc.gates[r * 4 * nh..(r + 1) * 4 * nh];
                    let dz = &mut d_z[r * 4 * nh..(r + 1) * 4 * nh];
                    for j in 0..nh {
                        let (s, o, f, a) = (g[j], g[nh + j], g[2 * nh + j], g[3 * nh + j]);
                        let tc = bc.tanh_cells[r * nh + j];
                        let c_prev = if t > 0 { bc.cells[(r - batch) * nh + j] } else { 0.0 };
                        let dh = d_h[r * nh + j] + dh_rec[b * nh + j];
                        let dc = dc_next[b * nh + j] + dh * o * (1.0 - tc * tc);
                        dz[j] = dc * a * s * (1.0 - s);
                        dz[nh + j] = dh * tc * o * (1.0 - o);
                        dz[2 * nh + j] = dc * c_prev * f * (1.0 - f);
                        dz[3 * nh + j] = dc * s * (1.0 - a * a);
                        dc_next[b * nh + j] = dc * f;
                    }
                }
                let dz_t = &d_z[r0 * 4 * nh..(r0 + batch) * 4 * nh];
                if has_lower {
                    gemm(batch, 4 * nh, w, dz_t, 4 * nh, 1, weights, w, 1, 0.0, &mut d_a, w, 1);
                    for b in 0..batch {
                        let row = &d_a[b * w..(b + 1) * w];
                        d_x[(r0 + b) * ni..(r0 + b + 1) * ni].copy_from_slice(&row[..ni]);
                        dh_rec[b * nh..(b + 1) * nh].copy_from_slice(&row[ni..]);
                    }
                } else if t > 0 {
                    gemm(
                        batch,
                        4 * nh,
                        nh,
                        dz_t,
                        4 * nh,
                        1,
                        &weights[ni..],
                        w,
                        1,
                        0.0,
                        &mut dh_rec,
                        nh,
                        1,
                    );
                }
            }

            gemm(
                4 * nh,
                rows,
                w,
                &d_z,
                1,
                4 * nh,
                &bc.concat,
                w,
                1,
                0.0,
                &mut grads[block.weights..block.bias],
                w,
                1,
            );
            let gb = &mut grads[block.bias..block.bias + 4 * nh];
            for dz in d_z.chunks_exact(4 * nh) {
                for (g, d) in gb.iter_mut().zip(dz) {
                    *g += d;
                }
            }
            d_h = d_x;
        }

        Ok(Gradients { values: grads, loss })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lstm::Gate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_predicts_zero() {
        let net = LstmNetwork::zeros(3, 2, &[4, 3]).unwrap();
        let x: Vec<f64> = (0..30).map(|i| (i as f64).sin() * 5.0).collect();
        let y = net.forward(&x, 10).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn head_bias_passes_through() {
        let mut net = LstmNetwork::zeros(2, 1, &[3]).unwrap();
        net.head_bias_mut()[0] = 1.5;
        let y = net.forward(&[0.3; 16], 8).unwrap();
        assert!(y.iter().all(|v| *v == 1.5));
    }

    /// Direct scalar evaluation of the gate equations for one cell.
    #[test]
    fn single_cell_single_step() {
        let mut net = LstmNetwork::zeros(1, 1, &[1]).unwrap();
        let layout = net.layout().clone();
        let p = net.params_mut();
        p[layout.blocks[0].weights..layout.blocks[0].bias].fill(0.1);
        let cache_y = {
            let (y, cache) = net.forward_batch(&[1.0], 1, 1, true).unwrap();
            let cache = cache.unwrap();
            let g = cache.gate_values(0, 0, 0).to_vec();
            assert!((g[Gate::Store as usize] - 0.524979).abs() < 1e-6);
            assert!((g[Gate::In as usize] - 0.099668).abs() < 1e-6);
            assert!((cache.cell_state(0, 0, 0)[0] - 0.052323).abs() < 1e-5);
            let h = cache.cell_state(0, 0, 0)[0].tanh() * g[Gate::Out as usize];
            assert!((h - 0.027445).abs() < 1e-5);
            y
        };
        // zero head: output is zero regardless of the block
        assert_eq!(cache_y, vec![0.0]);
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let mut net = LstmNetwork::initialized(2, 2, &[3, 2], 5).unwrap();
        let layout = net.layout().clone();
        let p = net.params_mut();
        for b in &layout.blocks {
            p[b.bias..b.bias + 4 * b.cells].fill(0.0);
        }
        p[layout.head_bias..layout.total].fill(0.0);
        let y = net.forward(&[0.0; 40], 20).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(mse_loss(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn head_bias_gradient_equals_error() {
        let mut net = LstmNetwork::zeros(1, 2, &[2]).unwrap();
        net.head_bias_mut().copy_from_slice(&[0.5, -0.25]);
        let steps = 6;
        let (_, cache) = net.forward_batch(&[0.7; 6], steps, 1, true).unwrap();
        let g = net.backward(&cache.unwrap(), &[0.0; 12]).unwrap();
        let bias = &g.values[net.layout().head_bias..];
        // mean over steps and outputs: d/db (1/(L*O)) sum e^2 = 2e/O
        assert!((bias[0] - 0.5).abs() < 1e-15);
        assert!((bias[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_error_gives_zero_gradient() {
        let net = LstmNetwork::initialized(2, 1, &[3], 1).unwrap();
        let x = [0.1, -0.4, 0.3, 0.9, -1.0, 0.2];
        let (y, cache) = net.forward_batch(&x, 3, 1, true).unwrap();
        let g = net.backward(&cache.unwrap(), &y).unwrap();
        assert!(g.values.iter().all(|v| *v == 0.0));
        assert_eq!(g.loss, 0.0);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = LstmNetwork::initialized(1, 1, &[2], 1).unwrap();
        let (_, cache) = net.forward_batch(&[0.5, 0.1], 2, 1, true).unwrap();
        let cache = cache.unwrap();
        net.params_mut()[0] += 0.1;
        assert!(matches!(net.backward(&cache, &[0.0, 0.0]), Err(Error::StaleCache)));
        let other = LstmNetwork::initialized(1, 1, &[3], 1).unwrap();
        assert!(matches!(other.backward(&cache, &[0.0, 0.0]), Err(Error::StaleCache)));
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let net = LstmNetwork::zeros(3, 1, &[2]).unwrap();
        assert!(net.forward(&[0.0; 7], 2).is_err());
        assert!(net.forward(&[], 0).is_err());
    }

    #[test]
    fn batch_rows_match_single_sequences() {
        let net = LstmNetwork::initialized(2, 2, &[4, 3], 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let steps = 7;
        let seqs: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..steps * 2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut batch = vec![0.0; steps * 3 * 2];
        for (b, s) in seqs.iter().enumerate() {
            for t in 0..steps {
                batch[(t * 3 + b) * 2..(t * 3 + b) * 2 + 2].copy_from_slice(&s[t * 2..t * 2 + 2]);
            }
        }
        let (yb, _) = net.forward_batch(&batch, steps, 3, false).unwrap();
        for (b, s) in seqs.iter().enumerate() {
            let y = net.forward(s, steps).unwrap();
            for t in 0..steps {
                for o in 0..2 {
                    assert!((y[t * 2 + o] - yb[(t * 3 + b) * 2 + o]).abs() < 1e-13);
                }
            }
        }
    }
}
