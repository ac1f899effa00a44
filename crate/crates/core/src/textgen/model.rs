use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::rank::{argmax, PROB_FLOOR};
use crate::corpus::Example;
use crate::error::{invalid, Error, Result};
use crate::nn::{
    attention, attention_backward, axpy, dropout_mask, softmax, AblationMask, CellKind, CellParams, RecurrentState,
    StepCache, Tensor, INIT_SCALE,
};
use crate::seed;

/// Magic first line of every model checkpoint.
pub const CHECKPOINT_MAGIC: &str = "PAUD1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Recurrent next-word language model.
    NextWord,
    /// Encoder-decoder with dot-product attention (translation).
    Seq2seqAttn,
    /// Encoder-decoder without attention (dialog).
    Seq2seqPlain,
}

impl Task {
    pub fn is_seq2seq(self) -> bool {
        !matches!(self, Task::NextWord)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub task: Task,
    pub cell: CellKind,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub vocab_size: usize,
    pub seed: u64,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_init_scale() -> f64 {
    INIT_SCALE
}

impl ModelConfig {
    /// One-layer LSTM language model with 128-wide embeddings and hidden
    /// state and 0.5 dropout.
    pub fn next_word(vocab_size: usize) -> Self {
        Self {
            task: Task::NextWord,
            cell: CellKind::Lstm,
            emb_dim: 128,
            hidden_dim: 128,
            dropout_rate: 0.5,
            vocab_size,
            seed: 0,
            init_scale: INIT_SCALE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.emb_dim == 0 || self.hidden_dim == 0 || self.vocab_size == 0 {
            return Err(invalid("model dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(invalid(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// Width of the vector fed to the output classifier.
    pub fn feature_dim(&self) -> usize {
        match self.task {
            Task::Seq2seqAttn => 2 * self.hidden_dim,
            _ => self.hidden_dim,
        }
    }
}

/// All trainable arrays of one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    /// Token embeddings, `vocab x emb`. Shared by encoder and decoder.
    pub embed: Tensor,
    pub encoder: Option<CellParams>,
    /// The recurrent cell of a language model, or the decoder cell.
    pub decoder: CellParams,
    /// Learned decoder input for the first target position.
    pub start: Option<Tensor>,
    /// Output classifier, `vocab x feature`.
    pub out_w: Tensor,
    pub out_b: Tensor,
}

impl ParamSet {
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut rng = seed::rng(cfg.seed);
        let s = cfg.init_scale;
        let (v, e, h) = (cfg.vocab_size, cfg.emb_dim, cfg.hidden_dim);
        let embed = Tensor::uniform("embed", v, e, s, &mut rng);
        let encoder = cfg
            .task
            .is_seq2seq()
            .then(|| CellParams::uniform(cfg.cell, "encoder", e, h, s, &mut rng));
        let decoder = CellParams::uniform(cfg.cell, "decoder", e, h, s, &mut rng);
        let start = cfg.task.is_seq2seq().then(|| Tensor::uniform("start", e, 1, s, &mut rng));
        let out_w = Tensor::uniform("out.w", v, cfg.feature_dim(), s, &mut rng);
        let out_b = Tensor::uniform("out.b", v, 1, s, &mut rng);
        Self {
            embed,
            encoder,
            decoder,
            start,
            out_w,
            out_b,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            embed: self.embed.zeros_like(),
            encoder: self.encoder.as_ref().map(CellParams::zeros_like),
            decoder: self.decoder.zeros_like(),
            start: self.start.as_ref().map(Tensor::zeros_like),
            out_w: self.out_w.zeros_like(),
            out_b: self.out_b.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.embed];
        if let Some(enc) = &self.encoder {
            v.extend(enc.tensors());
        }
        v.extend(self.decoder.tensors());
        if let Some(s) = &self.start {
            v.push(s);
        }
        v.push(&self.out_w);
        v.push(&self.out_b);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.embed];
        if let Some(enc) = &mut self.encoder {
            v.extend(enc.tensors_mut());
        }
        v.extend(self.decoder.tensors_mut());
        if let Some(s) = &mut self.start {
            v.push(s);
        }
        v.push(&mut self.out_w);
        v.push(&mut self.out_b);
        v
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Per-example training statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExampleStats {
    /// Summed natural-log NLL.
    pub loss: f64,
    pub tokens: usize,
    pub correct: usize,
}

/// Decoder input at one step: a token embedding or the learned start vector.
#[derive(Clone, Copy)]
enum StepInput {
    Token(usize),
    Start,
}

/// Everything the backward pass needs from one forward run.
struct Trace {
    src: Vec<usize>,
    enc_caches: Vec<StepCache>,
    enc_h: Vec<Vec<f64>>,
    inputs: Vec<StepInput>,
    dec_caches: Vec<StepCache>,
    dec_h: Vec<Vec<f64>>,
    attn: Vec<Vec<f64>>,
    features: Vec<Vec<f64>>,
    drop: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
}

/// A trained or freshly initialized text-generation model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextModel {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl TextModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let params = ParamSet::init(&config);
        Ok(Self { config, params })
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn task(&self) -> Task {
        self.config.task
    }

    fn check_tokens(&self, ids: &[usize]) -> Result<()> {
        if ids.iter().any(|&t| t >= self.config.vocab_size) {
            return Err(Error::BadToken);
        }
        Ok(())
    }

    fn step_inputs(&self, ex: &Example) -> Vec<StepInput> {
        match self.config.task {
            Task::NextWord => ex.x.iter().map(|&t| StepInput::Token(t)).collect(),
            _ => std::iter::once(StepInput::Start)
                .chain(ex.y[..ex.y.len().saturating_sub(1)].iter().map(|&t| StepInput::Token(t)))
                .collect(),
        }
    }

    fn validate_example(&self, ex: &Example) -> Result<()> {
        self.check_tokens(&ex.x)?;
        self.check_tokens(&ex.y)?;
        if ex.y.is_empty() {
            return Err(invalid("example has no targets"));
        }
        match self.config.task {
            Task::NextWord if ex.x.len() != ex.y.len() => {
                Err(invalid("next-word example needs |x| == |y|"))
            }
            Task::Seq2seqAttn | Task::Seq2seqPlain if ex.x.is_empty() => Err(invalid("empty source sequence")),
            _ => Ok(()),
        }
    }

    fn run<R: Rng>(&self, ex: &Example, mask: Option<&AblationMask>, mut drop_rng: Option<&mut R>) -> Result<Trace> {
        self.validate_example(ex)?;
        let p = &self.params;
        let cfg = &self.config;
        let h = cfg.hidden_dim;
        let e = cfg.emb_dim;

        let mut enc_caches = Vec::new();
        let mut enc_h = Vec::new();
        let mut state = RecurrentState::zeros(cfg.cell, h);
        let src = if cfg.task.is_seq2seq() { ex.x.clone() } else { Vec::new() };
        if let Some(enc) = &p.encoder {
            for &t in &src {
                let (mut s, c) = enc.step(p.embed.row(t), &state)?;
                if let Some(m) = mask {
                    m.apply_in_place(&mut s.h);
                }
                enc_caches.push(c);
                enc_h.push(s.h.clone());
                state = s;
            }
        }

        let inputs = self.step_inputs(ex);
        let mut trace = Trace {
            src,
            enc_caches,
            enc_h,
            inputs: inputs.clone(),
            dec_caches: Vec::with_capacity(inputs.len()),
            dec_h: Vec::with_capacity(inputs.len()),
            attn: Vec::new(),
            features: Vec::with_capacity(inputs.len()),
            drop: Vec::new(),
            probs: Vec::with_capacity(inputs.len()),
        };
        for inp in inputs {
            let x = match inp {
                StepInput::Token(t) => p.embed.row(t),
                StepInput::Start => &p.start.as_ref().expect("seq2seq start vector").data[..e],
            };
            let (mut s, c) = p.decoder.step(x, &state)?;
            if let Some(m) = mask {
                m.apply_in_place(&mut s.h);
            }
            let mut feature = s.h.clone();
            if cfg.task == Task::Seq2seqAttn {
                let a = attention(&s.h, &trace.enc_h)?;
                feature.extend_from_slice(&a.context);
                trace.attn.push(a.weights);
            }
            if let Some(rng) = drop_rng.as_deref_mut() {
                if cfg.dropout_rate > 0.0 {
                    let dm = dropout_mask(feature.len(), cfg.dropout_rate, rng);
                    feature.iter_mut().zip(&dm).for_each(|(f, m)| *f *= m);
                    trace.drop.push(dm);
                }
            }
            let mut logits = p.out_b.data.clone();
            p.out_w.matvec_acc(&feature, &mut logits);
            trace.probs.push(softmax(&logits));
            trace.features.push(feature);
            trace.dec_caches.push(c);
            trace.dec_h.push(s.h.clone());
            state = s;
        }
        Ok(trace)
    }

    /// Per-position output distributions for one example (teacher forced).
    pub fn example_distributions(&self, ex: &Example) -> Result<Vec<Vec<f64>>> {
        self.example_distributions_masked(ex, None)
    }

    /// As [`Self::example_distributions`], with hidden units ablated.
    pub fn example_distributions_masked(&self, ex: &Example, mask: Option<&AblationMask>) -> Result<Vec<Vec<f64>>> {
        Ok(self.run::<rand_chacha::ChaCha8Rng>(ex, mask, None)?.probs)
    }

    /// Next-word distributions for positions `1..len(seq)`; entry `j-1`
    /// predicts `seq[j]` from `seq[..j]`.
    pub fn forward_lm(&self, seq: &[usize]) -> Result<Vec<Vec<f64>>> {
        if self.config.task != Task::NextWord {
            return Err(invalid("forward_lm on a sequence-to-sequence model"));
        }
        if seq.len() < 2 {
            return Err(invalid("next-word query needs at least two tokens"));
        }
        self.check_tokens(seq)?;
        let ex = Example {
            x: seq[..seq.len() - 1].to_vec(),
            y: seq[1..].to_vec(),
        };
        self.example_distributions(&ex)
    }

    /// Teacher-forced target distributions, one per target position.
    pub fn forward_seq2seq(&self, x: &[usize], y: &[usize]) -> Result<Vec<Vec<f64>>> {
        Ok(self.forward_seq2seq_traced(x, y)?.0)
    }

    /// As [`Self::forward_seq2seq`], also returning per-position attention
    /// weights (empty for the plain variant).
    pub fn forward_seq2seq_traced(&self, x: &[usize], y: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        if !self.config.task.is_seq2seq() {
            return Err(invalid("forward_seq2seq on a next-word model"));
        }
        if x.is_empty() || y.is_empty() {
            return Err(invalid("source and target must be non-empty"));
        }
        let ex = Example {
            x: x.to_vec(),
            y: y.to_vec(),
        };
        let t = self.run::<rand_chacha::ChaCha8Rng>(&ex, None, None)?;
        Ok((t.probs, t.attn))
    }

    /// Forward and backward pass for one example.
    ///
    /// Gradients of `scale * NLL` accumulate into `grad`. Dropout is active
    /// only when `drop_rng` is given.
    pub fn loss_and_grad<R: Rng>(
        &self,
        ex: &Example,
        drop_rng: Option<&mut R>,
        grad: &mut ParamSet,
        scale: f64,
    ) -> Result<ExampleStats> {
        let tr = self.run(ex, None, drop_rng)?;
        let p = &self.params;
        let h = self.config.hidden_dim;
        let mut stats = ExampleStats {
            tokens: ex.y.len(),
            ..Default::default()
        };

        let mut d_enc = vec![vec![0.0; h]; tr.enc_h.len()];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; if self.config.cell == CellKind::Lstm { h } else { 0 }];
        let mut dfeat = vec![0.0; self.config.feature_dim()];
        let mut dx = vec![0.0; self.config.emb_dim];

        for j in (0..tr.probs.len()).rev() {
            let target = ex.y[j];
            let probs = &tr.probs[j];
            stats.loss -= probs[target].max(PROB_FLOOR).ln();
            if argmax(probs) == target {
                stats.correct += 1;
            }
            let mut dlogits: Vec<f64> = probs.iter().map(|q| q * scale).collect();
            dlogits[target] -= scale;

            grad.out_w.outer_acc(&dlogits, &tr.features[j]);
            axpy(1.0, &dlogits, &mut grad.out_b.data);
            dfeat.iter_mut().for_each(|v| *v = 0.0);
            p.out_w.matvec_t_acc(&dlogits, &mut dfeat);
            if let Some(dm) = tr.drop.get(j) {
                dfeat.iter_mut().zip(dm).for_each(|(d, m)| *d *= m);
            }

            let mut dh: Vec<f64> = dfeat[..h].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            if let Some(weights) = tr.attn.get(j) {
                attention_backward(&tr.dec_h[j], &tr.enc_h, weights, &dfeat[h..], &mut dh, &mut d_enc);
            }
            dx.iter_mut().for_each(|v| *v = 0.0);
            let (dhp, dcp) = p.decoder.step_backward(&tr.dec_caches[j], &dh, &dc_next, &mut grad.decoder, &mut dx);
            dh_next = dhp;
            dc_next = dcp;
            match tr.inputs[j] {
                StepInput::Token(t) => axpy(1.0, &dx, grad.embed.row_mut(t)),
                StepInput::Start => {
                    let s = grad.start.as_mut().expect("seq2seq start gradient");
                    axpy(1.0, &dx, &mut s.data);
                }
            }
        }

        if let (Some(enc), Some(genc)) = (&p.encoder, grad.encoder.as_mut()) {
            for i in (0..tr.src.len()).rev() {
                let dh: Vec<f64> = d_enc[i].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
                dx.iter_mut().for_each(|v| *v = 0.0);
                let (dhp, dcp) = enc.step_backward(&tr.enc_caches[i], &dh, &dc_next, genc, &mut dx);
                dh_next = dhp;
                dc_next = dcp;
                axpy(1.0, &dx, grad.embed.row_mut(tr.src[i]));
            }
        }
        Ok(stats)
    }

    /// Writes the `PAUD1` checkpoint: magic line, then one JSON document
    /// holding the config and every named array.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        writeln!(f, "{CHECKPOINT_MAGIC}")?;
        serde_json::to_writer(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = BufReader::new(fs::File::open(path)?);
        let mut magic = String::new();
        reader.read_line(&mut magic)?;
        if magic.trim_end() != CHECKPOINT_MAGIC {
            return Err(Error::Format(format!("{}: not a {CHECKPOINT_MAGIC} checkpoint", path.display())));
        }
        let model: TextModel = serde_json::from_reader(reader)?;
        model.config.validate()?;
        if !model.params.is_finite() {
            return Err(Error::Format("checkpoint holds non-finite parameters".into()));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(task: Task, cell: CellKind) -> ModelConfig {
        ModelConfig {
            task,
            cell,
            emb_dim: 3,
            hidden_dim: 4,
            dropout_rate: 0.0,
            vocab_size: 7,
            seed: 5,
            init_scale: 0.5,
        }
    }

    #[test]
    fn lm_output_count_and_causality() {
        let m = TextModel::new(cfg(Task::NextWord, CellKind::Lstm)).unwrap();
        let seq = [1, 2, 3, 4, 5];
        let a = m.forward_lm(&seq).unwrap();
        assert_eq!(a.len(), 4);
        let b = m.forward_lm(&[1, 2, 3, 6, 0]).unwrap();
        // Output j predicts seq[j+1] from seq[..=j]; editing seq[3] keeps 0..3.
        assert_eq!(a[..3], b[..3]);
        assert_ne!(a[3], b[3]);
        assert!(m.forward_lm(&[1]).is_err());
        assert!(matches!(m.forward_lm(&[1, 9]), Err(Error::BadToken)));
    }

    #[test]
    fn seq2seq_conditioning() {
        for task in [Task::Seq2seqAttn, Task::Seq2seqPlain] {
            let m = TextModel::new(cfg(task, CellKind::Gru)).unwrap();
            let (a, attn) = m.forward_seq2seq_traced(&[1, 2, 3], &[4, 5, 6]).unwrap();
            assert_eq!(a.len(), 3);
            let b = m.forward_seq2seq(&[1, 2, 3], &[0, 1, 2]).unwrap();
            assert_eq!(a[0], b[0]);
            let c = m.forward_seq2seq(&[1, 2, 3], &[4, 5, 0]).unwrap();
            assert_eq!(a[..2], c[..2]);
            if task == Task::Seq2seqAttn {
                assert_eq!(attn.len(), 3);
                for w in attn {
                    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            } else {
                assert!(attn.is_empty());
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = TextModel::new(cfg(Task::Seq2seqAttn, CellKind::Lstm)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.paud");
        m.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("PAUD1\n"));
        assert_eq!(TextModel::load(&p).unwrap(), m);
        std::fs::write(&p, "nope\n{}").unwrap();
        assert!(TextModel::load(&p).is_err());
    }

    #[test]
    fn ablation_all_units_gives_constant_prediction() {
        let m = TextModel::new(cfg(Task::NextWord, CellKind::Lstm)).unwrap();
        let mask = AblationMask::new(1.0, 4, 0).unwrap();
        let ex = Example { x: vec![1, 2, 3], y: vec![2, 3, 4] };
        let d = m.example_distributions_masked(&ex, Some(&mask)).unwrap();
        let bias = softmax(&m.params.out_b.data);
        for row in d {
            for (a, b) in row.iter().zip(&bias) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }
}
