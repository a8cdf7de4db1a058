//! Autoregressive token-sequence policy.
//!
//! A frozen backbone produces prefix features; a one-hidden-layer adapter
//! (the only tunable part) perturbs them residually; the frozen output head
//! turns them into next-token logits over the candidate vocabulary:
//!
//! `logits = Eᵀ · (φ(prefix) + w2·relu(w1·φ(prefix) + b1) + b2)`
//!
//! Sampling, greedy decoding, REINFORCE updates, snapshots, and checkpoint
//! serialization all live here.

mod backbone;
mod vocab;

pub use backbone::Backbone;
pub use vocab::Vocab;

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::TokenSeq;
use crate::util::derive_seed;

/// Tunable adapter parameters. `w1` is `hidden × dim` row-major, `w2` is
/// `dim × hidden` row-major; biases match their output sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub backbone_dim: usize,
    pub hidden_dim: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl PolicyParams {
    /// Uniform `±1/√fan_in` weights, zero biases.
    pub fn init(seed: u64, backbone_dim: usize, hidden_dim: usize) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let lim1 = 1.0 / (backbone_dim as f64).sqrt();
        let lim2 = 1.0 / (hidden_dim as f64).sqrt();
        PolicyParams {
            backbone_dim,
            hidden_dim,
            w1: (0..hidden_dim * backbone_dim).map(|_| rng.random_range(-lim1..lim1)).collect(),
            b1: vec![0.0; hidden_dim],
            w2: (0..backbone_dim * hidden_dim).map(|_| rng.random_range(-lim2..lim2)).collect(),
            b2: vec![0.0; backbone_dim],
        }
    }

    /// All-zero adapter: the policy reduces exactly to the backbone prior.
    pub fn zeros(backbone_dim: usize, hidden_dim: usize) -> Self {
        PolicyParams {
            backbone_dim,
            hidden_dim,
            w1: vec![0.0; hidden_dim * backbone_dim],
            b1: vec![0.0; hidden_dim],
            w2: vec![0.0; backbone_dim * hidden_dim],
            b2: vec![0.0; backbone_dim],
        }
    }

    /// Deep value copy; restoring it later is bit-identical.
    pub fn snapshot(&self) -> PolicyParams {
        self.clone()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|v| v.is_finite())
    }

    /// Adapter forward pass, keeping the hidden pre-activations around for
    /// backprop. Returns `(u, relu(u), adapted z = h + w2·relu(u) + b2)`.
    fn forward(&self, h: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.backbone_dim;
        let hd = self.hidden_dim;
        let mut u = vec![0.0; hd];
        for i in 0..hd {
            let row = &self.w1[i * d..(i + 1) * d];
            u[i] = row.iter().zip(h).map(|(w, x)| w * x).sum::<f64>() + self.b1[i];
        }
        let r: Vec<f64> = u.iter().map(|&v| v.max(0.0)).collect();
        let mut z = h.to_vec();
        for k in 0..d {
            let row = &self.w2[k * hd..(k + 1) * hd];
            z[k] += row.iter().zip(&r).map(|(w, x)| w * x).sum::<f64>() + self.b2[k];
        }
        (u, r, z)
    }
}

/// One training batch: sequences sampled from the current policy (extension
/// tokens only, past a fixed frozen prefix), their per-token sampling
/// log-probabilities, and one scalar reward each.
#[derive(Debug, Clone)]
pub struct EpisodeBatch {
    pub prefix: Vec<u32>,
    pub sequences: Vec<TokenSeq>,
    pub logprobs: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub temperature: f64,
}

impl EpisodeBatch {
    pub fn validate(&self) -> Result<()> {
        if self.sequences.is_empty() {
            return Err(Error::Argument("episode batch is empty".into()));
        }
        if self.sequences.len() != self.logprobs.len() || self.sequences.len() != self.rewards.len()
        {
            return Err(Error::Argument("episode batch lists have mismatched lengths".into()));
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::Argument("episode batch has non-finite rewards".into()));
        }
        if self.logprobs.iter().flatten().any(|lp| !lp.is_finite()) {
            return Err(Error::Argument("episode batch has non-finite logprobs".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UpdateOpts {
    pub lr: f64,
    pub baseline: f64,
    pub grad_clip: f64,
}

impl Default for UpdateOpts {
    fn default() -> Self {
        UpdateOpts { lr: 1e-2, baseline: 0.0, grad_clip: 5.0 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct UpdateStats {
    pub grad_norm: f64,
    pub clipped: bool,
}

struct Gradients {
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl Gradients {
    fn zeros(params: &PolicyParams) -> Self {
        Gradients {
            w1: vec![0.0; params.w1.len()],
            b1: vec![0.0; params.b1.len()],
            w2: vec![0.0; params.w2.len()],
            b2: vec![0.0; params.b2.len()],
        }
    }

    fn norm(&self) -> f64 {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2).all(|g| g.is_finite())
    }
}

/// The policy generator: frozen backbone + frozen output head + vocabulary,
/// with every operation parameterized by explicit [`PolicyParams`].
pub struct PolicyGenerator {
    backbone: Backbone,
    vocab: Vocab,
    max_seq_len: usize,
}

impl PolicyGenerator {
    pub fn new(vocab: Vocab, backbone_seed: u64, backbone_dim: usize, max_seq_len: usize) -> Self {
        let backbone = Backbone::new(backbone_seed, backbone_dim, vocab.len());
        PolicyGenerator { backbone, vocab, max_seq_len }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn backbone(&self) -> &Backbone {
        &self.backbone
    }

    pub fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    /// Fresh adapter parameters sized for this generator.
    pub fn init_params(&self, seed: u64, hidden_dim: usize) -> PolicyParams {
        PolicyParams::init(seed, self.backbone.dim(), hidden_dim)
    }

    fn check_shapes(&self, params: &PolicyParams) -> Result<()> {
        if params.backbone_dim != self.backbone.dim() {
            return Err(Error::Config(format!(
                "policy params built for backbone dim {}, generator has {}",
                params.backbone_dim,
                self.backbone.dim()
            )));
        }
        if params.w1.len() != params.hidden_dim * params.backbone_dim
            || params.b1.len() != params.hidden_dim
            || params.w2.len() != params.backbone_dim * params.hidden_dim
            || params.b2.len() != params.backbone_dim
        {
            return Err(Error::Config("policy params have inconsistent shapes".into()));
        }
        Ok(())
    }

    /// Next-token logits for a prefix.
    pub fn next_token_logits(&self, params: &PolicyParams, prefix: &[u32]) -> Result<Vec<f64>> {
        self.check_shapes(params)?;
        if prefix.len() >= self.max_seq_len {
            return Err(Error::Argument(format!(
                "prefix of {} tokens reaches the max sequence length {}",
                prefix.len(),
                self.max_seq_len
            )));
        }
        let h = self.backbone.features(prefix);
        let (_, _, z) = params.forward(&h);
        Ok(self.backbone.output_logits(&z))
    }

    /// Samples `length` tokens autoregressively past `prefix` at the given
    /// temperature. Returns the sampled extension and the log of the actual
    /// per-token sampling probabilities. Fixed `(params, seed, temperature)`
    /// reproduces the identical sequence.
    pub fn sample_extension(
        &self,
        params: &PolicyParams,
        prefix: &[u32],
        length: usize,
        temperature: f64,
        rng: &mut ChaCha12Rng,
    ) -> Result<(TokenSeq, Vec<f64>)> {
        if length == 0 {
            return Err(Error::Argument("sample length must be at least 1".into()));
        }
        if temperature <= 0.0 {
            return Err(Error::Argument("sampling temperature must be positive".into()));
        }
        let mut context = prefix.to_vec();
        let mut sampled = Vec::with_capacity(length);
        let mut logprobs = Vec::with_capacity(length);
        for _ in 0..length {
            let logits = self.next_token_logits(params, &context)?;
            let (token, logprob) = sample_from_logits(&logits, temperature, rng);
            context.push(token);
            sampled.push(token);
            logprobs.push(logprob);
        }
        Ok((self.vocab.seq(&sampled)?, logprobs))
    }

    pub fn sample_sequence(
        &self,
        params: &PolicyParams,
        length: usize,
        temperature: f64,
        rng: &mut ChaCha12Rng,
    ) -> Result<(TokenSeq, Vec<f64>)> {
        self.sample_extension(params, &[], length, temperature, rng)
    }

    /// Greedy decode past `prefix`: argmax token at every step, ties broken
    /// by the lowest token id (and invariant to any positive temperature).
    pub fn greedy_extension(
        &self,
        params: &PolicyParams,
        prefix: &[u32],
        length: usize,
    ) -> Result<TokenSeq> {
        let mut context = prefix.to_vec();
        let mut out = Vec::with_capacity(length);
        for _ in 0..length {
            let logits = self.next_token_logits(params, &context)?;
            let token = argmax(&logits);
            context.push(token);
            out.push(token);
        }
        self.vocab.seq(&out)
    }

    pub fn greedy_sequence(&self, params: &PolicyParams, length: usize) -> Result<TokenSeq> {
        self.greedy_extension(params, &[], length)
    }

    /// One REINFORCE ascent step:
    /// `θ' = θ + lr · (1/N) Σ_n (r_n − baseline) · ∇_θ Σ_t log π(a_t | ·)`.
    /// Only the adapter moves; backbone and output head are untouched. A
    /// non-finite gradient aborts with the parameters unchanged.
    pub fn update(
        &self,
        params: &PolicyParams,
        batch: &EpisodeBatch,
        opts: &UpdateOpts,
    ) -> Result<(PolicyParams, UpdateStats)> {
        self.check_shapes(params)?;
        batch.validate()?;
        let d = params.backbone_dim;
        let hd = params.hidden_dim;
        let mut grads = Gradients::zeros(params);
        let n = batch.sequences.len() as f64;

        for (seq, &reward) in batch.sequences.iter().zip(&batch.rewards) {
            let advantage = reward - opts.baseline;
            if advantage == 0.0 {
                continue;
            }
            let mut context = batch.prefix.clone();
            for &token in &seq.ids {
                let h = self.backbone.features(&context);
                let (u, r, z) = params.forward(&h);
                let logits = self.backbone.output_logits(&z);
                let probs = softmax(&logits, batch.temperature);

                // d log p[token] / d logits = (onehot − p) / T
                let mut dlogits = probs;
                for p in dlogits.iter_mut() {
                    *p = -*p / batch.temperature;
                }
                dlogits[token as usize] += 1.0 / batch.temperature;

                let mut dz = vec![0.0; d];
                self.backbone.output_pullback(&dlogits, &mut dz);

                let scale = advantage / n;
                for k in 0..d {
                    let g = dz[k] * scale;
                    grads.b2[k] += g;
                    let row = &mut grads.w2[k * hd..(k + 1) * hd];
                    for (slot, &ri) in row.iter_mut().zip(&r) {
                        *slot += g * ri;
                    }
                }
                for i in 0..hd {
                    if u[i] <= 0.0 {
                        continue;
                    }
                    let mut dr = 0.0;
                    for k in 0..d {
                        dr += params.w2[k * hd + i] * dz[k];
                    }
                    let g = dr * scale;
                    grads.b1[i] += g;
                    let row = &mut grads.w1[i * d..(i + 1) * d];
                    for (slot, &hj) in row.iter_mut().zip(&h) {
                        *slot += g * hj;
                    }
                }
                context.push(token);
            }
        }

        if !grads.is_finite() {
            return Err(Error::NonFiniteGradient(
                "policy gradient has NaN or infinite entries".into(),
            ));
        }
        let norm = grads.norm();
        if norm == 0.0 || opts.lr == 0.0 {
            return Ok((params.snapshot(), UpdateStats { grad_norm: norm, clipped: false }));
        }
        let clipped = opts.grad_clip > 0.0 && norm > opts.grad_clip;
        let step = if clipped { opts.lr * opts.grad_clip / norm } else { opts.lr };

        let mut next = params.clone();
        let apply = |target: &mut [f64], grad: &[f64]| {
            for (t, g) in target.iter_mut().zip(grad) {
                *t += step * g;
            }
        };
        apply(&mut next.w1, &grads.w1);
        apply(&mut next.b1, &grads.b1);
        apply(&mut next.w2, &grads.w2);
        apply(&mut next.b2, &grads.b2);
        if !next.is_finite() {
            return Err(Error::NonFiniteGradient("updated parameters are non-finite".into()));
        }
        Ok((next, UpdateStats { grad_norm: norm, clipped }))
    }
}

fn argmax(values: &[f64]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best as u32
}

fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|l| l / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

fn sample_from_logits(logits: &[f64], temperature: f64, rng: &mut ChaCha12Rng) -> (u32, f64) {
    let probs = softmax(logits, temperature);
    let draw: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut chosen = probs.len() - 1;
    for (i, &p) in probs.iter().enumerate() {
        cumulative += p;
        if draw <= cumulative {
            chosen = i;
            break;
        }
    }
    (chosen as u32, probs[chosen].max(f64::MIN_POSITIVE).ln())
}

/// Versioned checkpoint: adapter parameters plus the backbone seed and the
/// candidate-vocabulary hash they were trained against.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub params: PolicyParams,
    pub backbone_seed: u64,
    pub vocab_hash: String,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn new(params: PolicyParams, generator: &PolicyGenerator) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            params,
            backbone_seed: generator.backbone().seed(),
            vocab_hash: generator.vocab().hash().to_string(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    /// Restores parameters, refusing checkpoints from another vocabulary or
    /// backbone.
    pub fn load(path: impl AsRef<Path>, generator: &PolicyGenerator) -> Result<PolicyParams> {
        let raw = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&raw)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        if ckpt.vocab_hash != generator.vocab().hash() {
            return Err(Error::Checkpoint(
                "checkpoint was trained against a different candidate vocabulary".into(),
            ));
        }
        if ckpt.backbone_seed != generator.backbone().seed() {
            return Err(Error::Checkpoint(
                "checkpoint was trained against a different backbone".into(),
            ));
        }
        if !ckpt.params.is_finite() {
            return Err(Error::Checkpoint("checkpoint has non-finite parameters".into()));
        }
        Ok(ckpt.params)
    }
}

/// Stable per-role parameter seeds so stages stay decorrelated.
pub fn params_seed(global_seed: u64, role: &str) -> u64 {
    derive_seed(global_seed, &format!("params:{role}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_generator() -> PolicyGenerator {
        let vocab = Vocab::new(
            ["va", "vb", "vc", "vd", "ve"].iter().map(|s| s.to_string()).collect(),
        )
        .unwrap();
        PolicyGenerator::new(vocab, 13, 4, 8)
    }

    #[test]
    fn zero_adapter_reduces_to_backbone_prior() {
        let gen = tiny_generator();
        let params = PolicyParams::zeros(4, 6);
        let logits = gen.next_token_logits(&params, &[1, 2]).unwrap();
        let h = gen.backbone().features(&[1, 2]);
        let expected = gen.backbone().output_logits(&h);
        assert_eq!(logits, expected);
    }

    #[test]
    fn logits_match_independent_matrix_arithmetic() {
        // Oracle: redo the whole forward pass with naive index loops.
        let gen = tiny_generator();
        let d = 4;
        let hd = 3;
        let mut params = PolicyParams::zeros(d, hd);
        for (i, w) in params.w1.iter_mut().enumerate() {
            *w = 0.05 * (i as f64 + 1.0) * if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        for (i, w) in params.w2.iter_mut().enumerate() {
            *w = 0.03 * (i as f64 + 1.0) * if i % 3 == 0 { -1.0 } else { 1.0 };
        }
        params.b1 = vec![0.1, -0.2, 0.3];
        params.b2 = vec![0.05, 0.0, -0.05, 0.1];

        let prefix = [0u32, 3];
        let h = gen.backbone().features(&prefix);
        let mut u = vec![0.0; hd];
        for i in 0..hd {
            for j in 0..d {
                u[i] += params.w1[i * d + j] * h[j];
            }
            u[i] += params.b1[i];
        }
        let r: Vec<f64> = u.iter().map(|&x| x.max(0.0)).collect();
        let mut z = h.clone();
        for k in 0..d {
            for i in 0..hd {
                z[k] += params.w2[k * hd + i] * r[i];
            }
            z[k] += params.b2[k];
        }
        let expected = gen.backbone().output_logits(&z);

        let got = gen.next_token_logits(&params, &prefix).unwrap();
        for (a, b) in got.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn logits_are_deterministic() {
        let gen = tiny_generator();
        let params = gen.init_params(3, 6);
        assert_eq!(
            gen.next_token_logits(&params, &[2]).unwrap(),
            gen.next_token_logits(&params, &[2]).unwrap()
        );
    }

    #[test]
    fn shape_mismatch_is_config_error() {
        let gen = tiny_generator();
        let params = PolicyParams::zeros(5, 6);
        assert!(matches!(gen.next_token_logits(&params, &[]), Err(Error::Config(_))));
    }

    #[test]
    fn prefix_at_max_len_is_rejected() {
        let gen = tiny_generator();
        let params = PolicyParams::zeros(4, 6);
        let long = vec![0u32; gen.max_seq_len()];
        assert!(gen.next_token_logits(&params, &long).is_err());
    }

    #[test]
    fn sampling_is_reproducible_per_seed() {
        let gen = tiny_generator();
        let params = gen.init_params(5, 6);
        let mut rng1 = ChaCha12Rng::seed_from_u64(42);
        let mut rng2 = ChaCha12Rng::seed_from_u64(42);
        let (a, lp_a) = gen.sample_sequence(&params, 4, 1.0, &mut rng1).unwrap();
        let (b, lp_b) = gen.sample_sequence(&params, 4, 1.0, &mut rng2).unwrap();
        assert_eq!(a, b);
        assert_eq!(lp_a, lp_b);
        // Golden replay: recorded from the implementation on first run; any
        // drift in the backbone, init, or sampler shows up here.
        assert_eq!(a.ids, vec![2, 1, 1, 1]);
        assert_eq!(a.text, "vc vb vb vb");
    }

    #[test]
    fn high_temperature_sampling_is_near_uniform() {
        let vocab = Vocab::new(vec!["x".into(), "y".into()]).unwrap();
        let gen = PolicyGenerator::new(vocab, 1, 4, 4);
        let params = gen.init_params(9, 4);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut count_first = 0usize;
        let draws = 10_000;
        for _ in 0..draws {
            let (seq, _) = gen.sample_sequence(&params, 1, 1e6, &mut rng).unwrap();
            if seq.ids[0] == 0 {
                count_first += 1;
            }
        }
        let freq = count_first as f64 / draws as f64;
        assert!((freq - 0.5).abs() <= 0.02, "frequency {freq} not near 0.5");
    }

    #[test]
    fn degenerate_logits_always_pick_the_margin_token() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let logits = vec![0.0, 50.0, 0.0];
        for _ in 0..1000 {
            let (token, logprob) = sample_from_logits(&logits, 1.0, &mut rng);
            assert_eq!(token, 1);
            assert!(logprob.abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_sampling_arguments() {
        let gen = tiny_generator();
        let params = PolicyParams::zeros(4, 6);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert!(gen.sample_sequence(&params, 0, 1.0, &mut rng).is_err());
        assert!(gen.sample_sequence(&params, 1, 0.0, &mut rng).is_err());
        assert!(gen.sample_sequence(&params, 1, -1.0, &mut rng).is_err());
    }

    #[test]
    fn greedy_matches_near_zero_temperature_sampling() {
        let gen = tiny_generator();
        let params = gen.init_params(21, 6);
        let greedy = gen.greedy_sequence(&params, 3).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let (sampled, _) = gen.sample_sequence(&params, 3, 1e-9, &mut rng).unwrap();
        assert_eq!(greedy, sampled);
    }

    #[test]
    fn greedy_with_zero_adapter_repeats_the_prior_argmax() {
        let gen = tiny_generator();
        let params = PolicyParams::zeros(4, 6);
        let seq = gen.greedy_sequence(&params, 3).unwrap();
        // Positions shift the features slightly, but the test pins the
        // decode to be deterministic and vocabulary-valid.
        let again = gen.greedy_sequence(&params, 3).unwrap();
        assert_eq!(seq, again);
        assert!(seq.ids.iter().all(|&id| (id as usize) < gen.vocab().len()));
    }

    fn singleton_batch(gen: &PolicyGenerator, params: &PolicyParams, reward: f64) -> EpisodeBatch {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let (seq, lps) = gen.sample_sequence(params, 2, 1.0, &mut rng).unwrap();
        EpisodeBatch {
            prefix: vec![],
            sequences: vec![seq],
            logprobs: vec![lps],
            rewards: vec![reward],
            temperature: 1.0,
        }
    }

    #[test]
    fn zero_advantage_update_is_identity() {
        let gen = tiny_generator();
        let params = gen.init_params(17, 6);
        let batch = singleton_batch(&gen, &params, 5.0);
        let (next, stats) =
            gen.update(&params, &batch, &UpdateOpts { lr: 0.1, baseline: 5.0, grad_clip: 5.0 })
                .unwrap();
        assert_eq!(next, params);
        assert_eq!(stats.grad_norm, 0.0);
    }

    #[test]
    fn zero_lr_update_is_identity() {
        let gen = tiny_generator();
        let params = gen.init_params(17, 6);
        let batch = singleton_batch(&gen, &params, 5.0);
        let (next, _) =
            gen.update(&params, &batch, &UpdateOpts { lr: 0.0, baseline: 0.0, grad_clip: 5.0 })
                .unwrap();
        assert_eq!(next, params);
    }

    #[test]
    fn non_finite_rewards_abort_without_touching_params() {
        let gen = tiny_generator();
        let params = gen.init_params(17, 6);
        let batch = singleton_batch(&gen, &params, f64::NAN);
        assert!(gen.update(&params, &batch, &UpdateOpts::default()).is_err());
    }

    #[test]
    fn update_moves_only_adapter_params() {
        let gen = tiny_generator();
        let before = gen.backbone().fingerprint();
        let params = gen.init_params(1, 6);
        let batch = singleton_batch(&gen, &params, 10.0);
        let (next, stats) = gen.update(&params, &batch, &UpdateOpts::default()).unwrap();
        assert_ne!(next, params);
        assert!(stats.grad_norm > 0.0);
        assert_eq!(gen.backbone().fingerprint(), before);
    }

    #[test]
    fn snapshot_is_isolated_from_later_updates() {
        let gen = tiny_generator();
        let params = gen.init_params(8, 6);
        let snap = params.snapshot();
        let batch = singleton_batch(&gen, &params, 3.0);
        let (next, _) = gen.update(&params, &batch, &UpdateOpts::default()).unwrap();
        assert_eq!(snap, params);
        assert_ne!(next, snap);
        assert_eq!(gen.greedy_sequence(&snap, 3).unwrap(), gen.greedy_sequence(&params, 3).unwrap());
    }

    #[test]
    fn checkpoint_round_trip_and_vocab_guard() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.json");
        let gen = tiny_generator();
        let params = gen.init_params(30, 6);
        Checkpoint::new(params.clone(), &gen).save(&path).unwrap();
        let restored = Checkpoint::load(&path, &gen).unwrap();
        assert_eq!(restored, params);

        let other_vocab = Vocab::new(vec!["q".into(), "r".into(), "s".into(), "t".into(), "u".into()]).unwrap();
        let other_gen = PolicyGenerator::new(other_vocab, 13, 4, 8);
        assert!(matches!(Checkpoint::load(&path, &other_gen), Err(Error::Checkpoint(_))));
    }
}
