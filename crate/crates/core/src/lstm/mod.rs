//! Stacked LSTM network with an affine output head, trained from scratch with
//! backpropagation through time and RMSProp.
//!
//! All parameters live in one flat `f64` vector. Each memory block stores a
//! `4H x (I + H)` weight matrix whose row blocks are the store, out, forget and
//! input-network gates (in that order; the first `I` columns act on the block
//! input, the last `H` on the previous block output), followed by the `4H`
//! biases. The head `W_FC` (`O x H`) and `b_FC` (`O`) come last.

mod bptt;
mod train;

pub use bptt::{mse_loss, ForwardCache, Gradients};
pub use train::{evaluate_loss, rmsprop_step, train, train_with, EpochStats, RmsPropState, SequenceSet, TrainConfig, TrainOutcome};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::signal::StandardizationStats;

/// Gates of a memory block, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Store = 0,
    Out = 1,
    Forget = 2,
    /// The tanh input network.
    In = 3,
}

impl Gate {
    pub const ALL: [Gate; 4] = [Gate::Store, Gate::Out, Gate::Forget, Gate::In];
}

/// Number of scalar parameters of a network with the given cells per block.
pub fn parameter_count(cells: &[usize], n_inputs: usize, n_outputs: usize) -> usize {
    let mut width = n_inputs;
    let mut total = 0;
    for &h in cells {
        total += 4 * (h * (width + h) + h);
        width = h;
    }
    total + n_outputs * width + n_outputs
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct BlockLayout {
    pub inputs: usize,
    pub cells: usize,
    pub weights: usize,
    pub bias: usize,
}

impl BlockLayout {
    pub fn width(&self) -> usize {
        self.inputs + self.cells
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub blocks: Vec<BlockLayout>,
    pub head_weights: usize,
    pub head_bias: usize,
    pub total: usize,
}

impl Layout {
    fn new(cells: &[usize], n_inputs: usize, n_outputs: usize) -> Self {
        let mut offset = 0;
        let mut width = n_inputs;
        let mut blocks = Vec::with_capacity(cells.len());
        for &h in cells {
            let weights = offset;
            let bias = weights + 4 * h * (width + h);
            offset = bias + 4 * h;
            blocks.push(BlockLayout {
                inputs: width,
                cells: h,
                weights,
                bias,
            });
            width = h;
        }
        let head_weights = offset;
        let head_bias = head_weights + n_outputs * width;
        Self {
            blocks,
            head_weights,
            head_bias,
            total: head_bias + n_outputs,
        }
    }
}

/// Read-only view of one memory block's parameters.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams<'a> {
    layout: BlockLayout,
    params: &'a [f64],
}

impl<'a> BlockParams<'a> {
    pub fn cells(&self) -> usize {
        self.layout.cells
    }

    pub fn inputs(&self) -> usize {
        self.layout.inputs
    }

    /// Entry `(cell, input)` of `W_gate^x`.
    pub fn input_weight(&self, gate: Gate, cell: usize, input: usize) -> f64 {
        let row = gate as usize * self.layout.cells + cell;
        self.params[self.layout.weights + row * self.layout.width() + input]
    }

    /// Entry `(cell, prev_cell)` of `W_gate^h`.
    pub fn recurrent_weight(&self, gate: Gate, cell: usize, prev: usize) -> f64 {
        let row = gate as usize * self.layout.cells + cell;
        self.params[self.layout.weights + row * self.layout.width() + self.layout.inputs + prev]
    }

    pub fn bias(&self, gate: Gate, cell: usize) -> f64 {
        self.params[self.layout.bias + gate as usize * self.layout.cells + cell]
    }
}

/// Stacked LSTM memory blocks, output head and standardization statistics.
#[derive(Debug, Clone)]
pub struct LstmNetwork {
    n_inputs: usize,
    n_outputs: usize,
    cells: Vec<usize>,
    layout: Layout,
    params: Vec<f64>,
    input_stats: StandardizationStats,
    output_stats: StandardizationStats,
    revision: u64,
}

impl PartialEq for LstmNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.n_inputs == other.n_inputs
            && self.n_outputs == other.n_outputs
            && self.cells == other.cells
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self.input_stats == other.input_stats
            && self.output_stats == other.output_stats
    }
}

fn default_names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

impl LstmNetwork {
    /// Network with all parameters zero and identity standardization.
    pub fn zeros(n_inputs: usize, n_outputs: usize, cells: &[usize]) -> Result<Self> {
        if n_inputs == 0 || n_outputs == 0 {
            return Err(Error::InvalidArgument("network needs inputs and outputs".into()));
        }
        if cells.is_empty() || cells.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "architecture {cells:?} must have at least one non-empty block"
            )));
        }
        let layout = Layout::new(cells, n_inputs, n_outputs);
        Ok(Self {
            n_inputs,
            n_outputs,
            cells: cells.to_vec(),
            params: vec![0.0; layout.total],
            layout,
            input_stats: StandardizationStats::identity(default_names("in", n_inputs)),
            output_stats: StandardizationStats::identity(default_names("out", n_outputs)),
            revision: 0,
        })
    }

    /// Randomly initialized network.
    ///
    /// Weights are uniform in `±1/sqrt(fan_in)`, forget-gate biases start at
    /// one and all other biases at zero.
    pub fn initialized(n_inputs: usize, n_outputs: usize, cells: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(n_inputs, n_outputs, cells)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = net.layout.clone();
        for b in &layout.blocks {
            let bound = 1.0 / (b.width() as f64).sqrt();
            for w in &mut net.params[b.weights..b.bias] {
                *w = rng.gen_range(-bound..=bound);
            }
            let forget = b.bias + Gate::Forget as usize * b.cells;
            net.params[forget..forget + b.cells].fill(1.0);
        }
        let last = *cells.last().expect("validated non-empty");
        let bound = 1.0 / (last as f64).sqrt();
        for w in &mut net.params[layout.head_weights..layout.head_bias] {
            *w = rng.gen_range(-bound..=bound);
        }
        Ok(net)
    }

    /// Rebuilds a network from stored parts, checking the parameter count.
    pub fn from_parts(
        n_inputs: usize,
        n_outputs: usize,
        cells: &[usize],
        params: Vec<f64>,
        input_stats: StandardizationStats,
        output_stats: StandardizationStats,
    ) -> Result<Self> {
        let mut net = Self::zeros(n_inputs, n_outputs, cells)?;
        if params.len() != net.params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters stored, architecture {cells:?} needs {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        net.set_stats(input_stats, output_stats)?;
        Ok(net)
    }

    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.n_outputs
    }

    /// Cells per block.
    pub fn architecture(&self) -> &[usize] {
        &self.cells
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameters. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.revision = self.revision.wrapping_add(1);
        &mut self.params
    }

    pub fn block(&self, index: usize) -> BlockParams<'_> {
        BlockParams {
            layout: self.layout.blocks[index],
            params: &self.params,
        }
    }

    pub fn head_weight(&self, output: usize, cell: usize) -> f64 {
        let h = *self.cells.last().expect("non-empty");
        self.params[self.layout.head_weights + output * h + cell]
    }

    pub fn head_bias(&self, output: usize) -> f64 {
        self.params[self.layout.head_bias + output]
    }

    /// Mutable head bias `b_FC`.
    pub fn head_bias_mut(&mut self) -> &mut [f64] {
        self.revision = self.revision.wrapping_add(1);
        let range = self.layout.head_bias..self.layout.total;
        &mut self.params[range]
    }

    pub fn input_stats(&self) -> &StandardizationStats {
        &self.input_stats
    }

    pub fn output_stats(&self) -> &StandardizationStats {
        &self.output_stats
    }

    pub fn set_stats(&mut self, input: StandardizationStats, output: StandardizationStats) -> Result<()> {
        if input.len() != self.n_inputs || output.len() != self.n_outputs {
            return Err(Error::ShapeMismatch(format!(
                "stats cover {}/{} channels, network has {}/{}",
                input.len(),
                output.len(),
                self.n_inputs,
                self.n_outputs
            )));
        }
        self.input_stats = input;
        self.output_stats = output;
        Ok(())
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    pub(crate) fn revision(&self) -> u64 {
        self.revision
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_counts_match_reference_table() {
        assert_eq!(parameter_count(&[10], 3, 3), 593);
        assert_eq!(parameter_count(&[39], 3, 3), 6_828);
        assert_eq!(parameter_count(&[23, 23], 3, 3), 6_880);
        assert_eq!(parameter_count(&[39, 39], 3, 3), 19_152);
    }

    #[test]
    fn allocation_matches_count() {
        for (cells, i, o) in [(vec![1], 1, 1), (vec![4, 2, 3], 5, 2), (vec![39, 39], 3, 3)] {
            let net = LstmNetwork::zeros(i, o, &cells).unwrap();
            assert_eq!(net.params().len(), parameter_count(&cells, i, o));
        }
    }

    #[test]
    fn init_follows_fan_in_bounds() {
        let net = LstmNetwork::initialized(3, 2, &[5], 7).unwrap();
        let b = net.block(0);
        let bound = 1.0 / 8f64.sqrt();
        for g in Gate::ALL {
            for c in 0..5 {
                for i in 0..3 {
                    assert!(b.input_weight(g, c, i).abs() <= bound);
                }
                let expected = if g == Gate::Forget { 1.0 } else { 0.0 };
                assert_eq!(b.bias(g, c), expected);
            }
        }
        assert_eq!(net.head_bias(0), 0.0);
        assert!(net.head_weight(1, 4).abs() <= 1.0 / 5f64.sqrt());
        let again = LstmNetwork::initialized(3, 2, &[5], 7).unwrap();
        assert_eq!(net, again);
    }

    #[test]
    fn rejects_empty_architectures() {
        assert!(LstmNetwork::zeros(3, 3, &[]).is_err());
        assert!(LstmNetwork::zeros(3, 3, &[4, 0]).is_err());
        assert!(LstmNetwork::zeros(0, 3, &[4]).is_err());
        let stats = StandardizationStats::identity(vec!["a".into()]);
        assert!(LstmNetwork::from_parts(1, 1, &[2], vec![0.0; 3], stats.clone(), stats).is_err());
    }
}
