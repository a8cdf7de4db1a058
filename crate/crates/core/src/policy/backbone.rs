//! Frozen context backbone and output head.
//!
//! The backbone maps a token prefix to a feature vector: the mean of a
//! seeded start vector and per-position (token embedding + sinusoidal
//! position code) terms. The output head is a fixed embedding matrix `E`;
//! next-token logits are `Eᵀ·z` for an adapted feature `z`. Both are frozen
//! for the lifetime of a run — only the adapter between them ever trains.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

pub struct Backbone {
    dim: usize,
    seed: u64,
    start: Vec<f64>,
    token_embed: Vec<Vec<f64>>,
    output_embed: Vec<Vec<f64>>,
}

impl Backbone {
    pub fn new(seed: u64, dim: usize, vocab_size: usize) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let scale = (3.0 / dim as f64).sqrt();
        let vector = |rng: &mut ChaCha12Rng| -> Vec<f64> {
            (0..dim).map(|_| rng.random_range(-scale..scale)).collect()
        };
        let start = vector(&mut rng);
        let token_embed = (0..vocab_size).map(|_| vector(&mut rng)).collect();
        let output_embed = (0..vocab_size).map(|_| vector(&mut rng)).collect();
        Backbone { dim, seed, start, token_embed, output_embed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn vocab_size(&self) -> usize {
        self.token_embed.len()
    }

    fn position_code(&self, position: usize, out: &mut [f64]) {
        for (k, slot) in out.iter_mut().enumerate() {
            let rate = 1.0 / 10_000f64.powf((2 * (k / 2)) as f64 / self.dim as f64);
            let angle = position as f64 * rate;
            *slot = if k % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }

    /// Deterministic prefix features: mean over the start vector and each
    /// prefix token's embedding plus its position code.
    pub fn features(&self, prefix: &[u32]) -> Vec<f64> {
        let mut acc = self.start.clone();
        let mut pos = vec![0.0; self.dim];
        for (i, &id) in prefix.iter().enumerate() {
            self.position_code(i + 1, &mut pos);
            let embed = &self.token_embed[id as usize];
            for k in 0..self.dim {
                acc[k] += embed[k] + pos[k];
            }
        }
        let count = (prefix.len() + 1) as f64;
        for value in acc.iter_mut() {
            *value /= count;
        }
        acc
    }

    /// `Eᵀ·z`: one logit per vocabulary token.
    pub fn output_logits(&self, z: &[f64]) -> Vec<f64> {
        self.output_embed
            .iter()
            .map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Accumulates `Σ_v grad_v · E_v` into `out`, the pullback of a logit
    /// gradient through the output head.
    pub fn output_pullback(&self, logit_grad: &[f64], out: &mut [f64]) {
        for (row, &g) in self.output_embed.iter().zip(logit_grad) {
            if g == 0.0 {
                continue;
            }
            for (slot, &e) in out.iter_mut().zip(row) {
                *slot += g * e;
            }
        }
    }

    /// Content fingerprint over every frozen table, for asserting that
    /// training never touches the backbone or the output head.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        let mut feed = |values: &[f64]| {
            for v in values {
                hasher.update(v.to_le_bytes());
            }
        };
        feed(&self.start);
        for row in &self.token_embed {
            feed(row);
        }
        for row in &self.output_embed {
            feed(row);
        }
        hex::encode(hasher.finalize())
    }
}
