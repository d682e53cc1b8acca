use std::ops::{Index, IndexMut};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::market_data::FEATURE_DIM;

/// Named parameter blocks. Gate-stacked recurrent weights use the column order
/// input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Param {
    EncoderInput,
    EncoderHidden,
    EncoderBias,
    ExpectationInput,
    ExpectationHidden,
    ExpectationBias,
    TopicWeight,
    TopicBias,
    ExpectationPrevWeight,
    ExpectationTopicWeight,
    ExpectationUpdateBias,
    StockHeadWeight,
    StockHeadBias,
    ExpectationHeadWeight,
    ExpectationHeadBias,
    TopicReadoutWeight,
    TopicReadoutBias,
    TopicHeadWeight,
    TopicHeadBias,
    CombinerWeight,
    CombinerBias,
}

impl Param {
    pub const ALL: [Param; 21] = [
        Param::EncoderInput,
        Param::EncoderHidden,
        Param::EncoderBias,
        Param::ExpectationInput,
        Param::ExpectationHidden,
        Param::ExpectationBias,
        Param::TopicWeight,
        Param::TopicBias,
        Param::ExpectationPrevWeight,
        Param::ExpectationTopicWeight,
        Param::ExpectationUpdateBias,
        Param::StockHeadWeight,
        Param::StockHeadBias,
        Param::ExpectationHeadWeight,
        Param::ExpectationHeadBias,
        Param::TopicReadoutWeight,
        Param::TopicReadoutBias,
        Param::TopicHeadWeight,
        Param::TopicHeadBias,
        Param::CombinerWeight,
        Param::CombinerBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Param::EncoderInput => "encoder.w_input",
            Param::EncoderHidden => "encoder.w_hidden",
            Param::EncoderBias => "encoder.bias",
            Param::ExpectationInput => "expectation_lstm.w_input",
            Param::ExpectationHidden => "expectation_lstm.w_hidden",
            Param::ExpectationBias => "expectation_lstm.bias",
            Param::TopicWeight => "topic_update.weight",
            Param::TopicBias => "topic_update.bias",
            Param::ExpectationPrevWeight => "expectation_update.w_prev",
            Param::ExpectationTopicWeight => "expectation_update.w_topic",
            Param::ExpectationUpdateBias => "expectation_update.bias",
            Param::StockHeadWeight => "head_stock.weight",
            Param::StockHeadBias => "head_stock.bias",
            Param::ExpectationHeadWeight => "head_expectation.weight",
            Param::ExpectationHeadBias => "head_expectation.bias",
            Param::TopicReadoutWeight => "topic_readout.weight",
            Param::TopicReadoutBias => "topic_readout.bias",
            Param::TopicHeadWeight => "head_topic.weight",
            Param::TopicHeadBias => "head_topic.bias",
            Param::CombinerWeight => "combiner.weight",
            Param::CombinerBias => "combiner.bias",
        }
    }

    pub fn from_name(name: &str) -> Option<Param> {
        Param::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn is_bias(self) -> bool {
        self.name().ends_with("bias")
    }

    pub fn shape(self, input: usize, d: usize, separate_head_weights: bool) -> (usize, usize) {
        match self {
            Param::EncoderInput => (input, 4 * d),
            Param::EncoderHidden | Param::ExpectationInput | Param::ExpectationHidden => (d, 4 * d),
            Param::EncoderBias | Param::ExpectationBias => (1, 4 * d),
            Param::TopicWeight
            | Param::ExpectationPrevWeight
            | Param::ExpectationTopicWeight
            | Param::TopicReadoutWeight => (d, d),
            Param::TopicBias | Param::ExpectationUpdateBias | Param::TopicReadoutBias => (1, d),
            Param::StockHeadWeight | Param::ExpectationHeadWeight | Param::TopicHeadWeight => {
                (d, 1)
            }
            Param::StockHeadBias
            | Param::ExpectationHeadBias
            | Param::TopicHeadBias
            | Param::CombinerBias => (1, 1),
            Param::CombinerWeight => (if separate_head_weights { 3 } else { 1 }, 1),
        }
    }
}

/// All learnable weights of the model.
///
/// Affine maps act on row vectors: `y = x · W + b`, so a `d_in → d_out` map
/// stores `W` as `d_in × d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParameters {
    pub input_size: usize,
    pub embedding_size: usize,
    pub separate_head_weights: bool,
    pub seed: u64,
    blocks: Vec<Array2<f64>>,
}

impl ModelParameters {
    /// Weights uniform in `[-1/√d, 1/√d]`, biases zero.
    pub fn init(
        input_size: usize,
        embedding_size: usize,
        separate_head_weights: bool,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (embedding_size as f64).sqrt();
        let blocks = Param::ALL
            .iter()
            .map(|&p| {
                let shape = p.shape(input_size, embedding_size, separate_head_weights);
                if p.is_bias() {
                    Array2::zeros(shape)
                } else {
                    Array2::from_shape_simple_fn(shape, || rng.gen_range(-bound..=bound))
                }
            })
            .collect();
        Self {
            input_size,
            embedding_size,
            separate_head_weights,
            seed,
            blocks,
        }
    }

    /// Alpha360-sized model.
    pub fn new(embedding_size: usize, separate_head_weights: bool, seed: u64) -> Self {
        Self::init(FEATURE_DIM, embedding_size, separate_head_weights, seed)
    }

    pub fn zeros(input_size: usize, embedding_size: usize, separate_head_weights: bool) -> Self {
        let blocks = Param::ALL
            .iter()
            .map(|p| Array2::zeros(p.shape(input_size, embedding_size, separate_head_weights)))
            .collect();
        Self {
            input_size,
            embedding_size,
            separate_head_weights,
            seed: 0,
            blocks,
        }
    }

    /// Assembles parameters from explicit blocks in [`Param::ALL`] order, checking shapes.
    pub fn from_blocks(
        input_size: usize,
        embedding_size: usize,
        separate_head_weights: bool,
        seed: u64,
        blocks: Vec<Array2<f64>>,
    ) -> Result<Self, String> {
        if blocks.len() != Param::ALL.len() {
            return Err(format!(
                "expected {} parameter blocks, got {}",
                Param::ALL.len(),
                blocks.len()
            ));
        }
        for (p, b) in Param::ALL.iter().zip(&blocks) {
            let want = p.shape(input_size, embedding_size, separate_head_weights);
            if b.dim() != want {
                return Err(format!(
                    "{} has shape {:?}, expected {:?}",
                    p.name(),
                    b.dim(),
                    want
                ));
            }
            if b.iter().any(|v| !v.is_finite()) {
                return Err(format!("{} contains non-finite values", p.name()));
            }
        }
        Ok(Self {
            input_size,
            embedding_size,
            separate_head_weights,
            seed,
            blocks,
        })
    }

    pub fn blocks(&self) -> impl Iterator<Item = (Param, &Array2<f64>)> {
        Param::ALL.iter().copied().zip(self.blocks.iter())
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = (Param, &mut Array2<f64>)> {
        Param::ALL.iter().copied().zip(self.blocks.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn num_values(&self) -> usize {
        self.blocks.iter().map(Array2::len).sum()
    }
}

impl Index<Param> for ModelParameters {
    type Output = Array2<f64>;

    fn index(&self, p: Param) -> &Array2<f64> {
        &self.blocks[p as usize]
    }
}

impl IndexMut<Param> for ModelParameters {
    fn index_mut(&mut self, p: Param) -> &mut Array2<f64> {
        &mut self.blocks[p as usize]
    }
}
