//! The three-level hierarchy: phone, word and utterance stacks with their heads.

mod checkpoint;
mod config;
mod words;

pub use checkpoint::{Checkpoint, NamedParam, RngState, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use config::HMambaConfig;
pub use words::{aggregate_word_predictions, broadcast_word_targets, diagnose};

use rand::{Rng, RngCore};

use crate::corpus::{UtteranceRecord, UTTERANCE_ASPECTS, WORD_ASPECTS};
use crate::error::{Error, Result};
use crate::features::{
    assemble_features, project, relative_tokens, FeatureBundle, PhonologicalEmbeddings,
    ProviderBlock,
};
use crate::nn::{FeedForward, Linear};
use crate::numerics::{concat, ConvMode, DiffTensor, Tape, Tensor};
use crate::params::{Bound, ParamGroup, ParamId, ParamStore, Scope};
use crate::rng::substream;
use crate::ssm::SequenceBlock;

/// Score-conditioned attention pooling over positions.
///
/// `α = softmax(q·w / τ)` over rows, result `Σ α_i H_i` as `[1×d]`. Returns the
/// pooled vector and `α` as `[1×N]`.
pub fn attention_pool<'t>(
    h: DiffTensor<'t>,
    q: DiffTensor<'t>,
    w: DiffTensor<'t>,
    tau: f64,
) -> Result<(DiffTensor<'t>, DiffTensor<'t>)> {
    let (n, _) = h.value().dims2()?;
    let k = w.numel();
    let alpha = q
        .matmul(w.reshape(&[k, 1])?)?
        .scale(1.0 / tau)
        .reshape(&[1, n])?
        .softmax()?;
    Ok((alpha.matmul(h)?, alpha))
}

/// Differentiable outputs of one forward pass.
pub struct Graph<'t> {
    /// `[N]`
    pub phone: DiffTensor<'t>,
    /// `[N×3]`
    pub word: DiffTensor<'t>,
    /// `[5]`
    pub utterance: DiffTensor<'t>,
    /// `[N×C]`
    pub logits: DiffTensor<'t>,
    /// `[1×N]`
    pub alpha: DiffTensor<'t>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub phone_scores: Vec<f64>,
    pub word_scores_per_phone: Vec<[f64; WORD_ASPECTS]>,
    pub utterance_scores: [f64; UTTERANCE_ASPECTS],
    pub mdd_logits: Tensor,
    pub diagnosis: Vec<usize>,
    pub error_states: Vec<bool>,
    pub pool_weights: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct HMambaModel {
    pub config: HMambaConfig,
    pub store: ParamStore,
    pub input: Linear,
    pub embed: PhonologicalEmbeddings,
    pub phone_blocks: Vec<SequenceBlock>,
    pub phone_head: FeedForward,
    pub mdd_head: FeedForward,
    pub word_blocks: Vec<SequenceBlock>,
    pub word_conv: ParamId,
    pub word_conv_bias: ParamId,
    pub word_proj: Linear,
    pub word_heads: Vec<FeedForward>,
    pub utterance_blocks: Vec<SequenceBlock>,
    pub pool_w: ParamId,
    pub utterance_heads: Vec<FeedForward>,
}

impl HMambaModel {
    /// Initializes every parameter from the `init` stream of `seed`.
    pub fn new(config: HMambaConfig, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, "init");
        Self::with_rng(config, &mut rng)
    }

    pub fn with_rng(config: HMambaConfig, rng: &mut dyn RngCore) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut root = Scope::new(&mut store, rng);
        let d = config.d;
        let hh = config.head_hidden;
        let spec = config.block_spec();
        let n_classes = config.inventory.num_classes();

        let input = Linear::new(&mut root, "input", config.feature_width(), d, true);
        let embed = PhonologicalEmbeddings::new(
            &mut root,
            "embed",
            config.inventory.vocab_size(),
            config.max_len,
            d,
        );
        let stack = |root: &mut Scope<'_>, name: &str, count: usize| -> Result<Vec<SequenceBlock>> {
            (0..count).map(|i| spec.build(root, &format!("{name}.{i}"))).collect()
        };
        let phone_blocks = stack(&mut root, "phone", config.phone_blocks)?;
        let phone_head = FeedForward::new(&mut root, "phone_head", d, hh, 1);
        let mdd_head = FeedForward::new(&mut root, "mdd_head", d, hh, n_classes);

        let word_blocks = stack(&mut root, "word", config.word_blocks)?;
        let (kc, ks) = (config.word_conv_kernels, config.word_conv_size);
        let bound = 1.0 / ((d * ks) as f64).sqrt();
        let w = root.uniform(vec![kc, d, ks], bound);
        let word_conv = root.add("word_conv.weight", w);
        let b = root.uniform(vec![kc], bound);
        let word_conv_bias = root.add("word_conv.bias", b);
        let word_proj = Linear::new(&mut root, "word_proj", kc, d, true);
        let word_heads = (0..WORD_ASPECTS)
            .map(|k| FeedForward::new(&mut root, &format!("word_head.{k}"), d, hh, 1))
            .collect();

        let utterance_blocks = stack(&mut root, "utterance", config.utterance_blocks)?;
        let w = root.uniform(vec![1 + WORD_ASPECTS], 0.5);
        let pool_w = root.add("pool.w", w);
        let utterance_heads = {
            let mut heads = root.sub_in("utterance_head", ParamGroup::UtteranceHead);
            (0..UTTERANCE_ASPECTS)
                .map(|k| FeedForward::new(&mut heads, &k.to_string(), d, hh, 1))
                .collect()
        };

        Ok(Self {
            config,
            store,
            input,
            embed,
            phone_blocks,
            phone_head,
            mdd_head,
            word_blocks,
            word_conv,
            word_conv_bias,
            word_proj,
            word_heads,
            utterance_blocks,
            pool_w,
            utterance_heads,
        })
    }

    pub fn num_params(&self) -> usize {
        self.store.numel()
    }

    /// Concatenates provider blocks per the model's manifest.
    pub fn assemble<R: Rng + ?Sized>(
        &self,
        record: &UtteranceRecord,
        blocks: &[ProviderBlock],
        training: bool,
        rng: &mut R,
    ) -> Result<FeatureBundle> {
        assemble_features(record, blocks, &self.config.manifest, training, rng)
    }

    /// Builds the full differentiable graph for one utterance.
    pub fn forward_graph<'t>(
        &self,
        p: &Bound<'t>,
        record: &UtteranceRecord,
        bundle: &FeatureBundle,
    ) -> Result<Graph<'t>> {
        let n = record.len();
        if bundle.len() != n {
            return Err(Error::Alignment {
                provider: "bundle".into(),
                expected: n,
                got: bundle.len(),
            });
        }
        if n == 0 {
            return Err(Error::Structure {
                utt_id: record.utt_id.clone(),
                msg: "no phones".into(),
            });
        }
        let tape = p.get(self.pool_w).tape();
        let tokens = relative_tokens(record, &self.config.inventory, self.config.long_silence)?;
        let a = tape.constant(bundle.rows.clone());
        let x = project(a, p.get(self.input.weight), p.get(self.input.bias.expect("input bias")))?;
        let mut h = self.embed.phone_level_input(p, x, &record.canonical, &tokens)?;

        for b in &self.phone_blocks {
            h = b.forward(p, h)?;
        }
        let phone = self.phone_head.forward(p, h)?.reshape(&[n])?;
        let logits = self.mdd_head.forward(p, h)?;

        for b in &self.word_blocks {
            h = b.forward(p, h)?;
        }
        let conv = h
            .conv1d(p.get(self.word_conv), ConvMode::Same)?
            .add(p.get(self.word_conv_bias))?
            .silu();
        let h = self.word_proj.forward(p, conv)?;
        let word_cols = self
            .word_heads
            .iter()
            .map(|head| head.forward(p, h))
            .collect::<Result<Vec<_>>>()?;
        let word = concat(&word_cols, 1)?;

        let mut hu = h;
        for b in &self.utterance_blocks {
            hu = b.forward(p, hu)?;
        }
        let q = concat(&[phone.reshape(&[n, 1])?, word], 1)?;
        let (pooled, alpha) = attention_pool(hu, q, p.get(self.pool_w), self.config.tau)?;
        let utt_cols = self
            .utterance_heads
            .iter()
            .map(|head| head.forward(p, pooled))
            .collect::<Result<Vec<_>>>()?;
        let utterance = concat(&utt_cols, 1)?.reshape(&[UTTERANCE_ASPECTS])?;

        Ok(Graph {
            phone,
            word,
            utterance,
            logits,
            alpha,
        })
    }

    /// Inference on an assembled bundle.
    pub fn forward(&self, record: &UtteranceRecord, bundle: &FeatureBundle) -> Result<ModelOutput> {
        let tape = Tape::new();
        let p = self.store.bind_constants(&tape);
        let g = self.forward_graph(&p, record, bundle)?;
        let logits = g.logits.value();
        let (diagnosis, error_states) = diagnose(&logits, record, &self.config.inventory)?;
        let word = g.word.value();
        let mut utterance_scores = [0.0; UTTERANCE_ASPECTS];
        utterance_scores.copy_from_slice(g.utterance.value().data());
        Ok(ModelOutput {
            phone_scores: g.phone.value().to_vec(),
            word_scores_per_phone: (0..record.len())
                .map(|t| {
                    let mut r = [0.0; WORD_ASPECTS];
                    r.copy_from_slice(word.row(t));
                    r
                })
                .collect(),
            utterance_scores,
            mdd_logits: logits,
            diagnosis,
            error_states,
            pool_weights: g.alpha.value().to_vec(),
        })
    }

    /// Evaluation-mode inference straight from provider blocks.
    pub fn predict(&self, record: &UtteranceRecord, blocks: &[ProviderBlock]) -> Result<ModelOutput> {
        let mut unused = substream(0, "eval");
        let bundle = self.assemble(record, blocks, false, &mut unused)?;
        self.forward(record, &bundle)
    }

    /// Every head and block parameter set, for group bookkeeping.
    pub fn param_groups(&self) -> [(ParamGroup, Vec<ParamId>); 2] {
        let (mut main, mut utt) = (Vec::new(), Vec::new());
        for (id, p) in self.store.iter() {
            match p.group {
                ParamGroup::Main => main.push(id),
                ParamGroup::UtteranceHead => utt.push(id),
            }
        }
        [(ParamGroup::Main, main), (ParamGroup::UtteranceHead, utt)]
    }
}
