//! The model: token embeddings, a tanh recurrent encoder, a tanh recurrent
//! decoder with single-head dot-product attention over the encoder states,
//! and an output projection. Small enough that exact log-likelihoods and
//! analytic gradients stay transparent.

use rand::Rng;

use crate::scalar::Scalar;
use crate::seeding;
use crate::text::{Sequence, BOS};

use super::ModelError;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<F: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Mat<F> {
    pub fn zeros(rows: usize, cols: usize) -> Mat<F> {
        Mat {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    /// out = M v.
    pub fn matvec(&self, v: &[F], out: &mut [F]) {
        debug_assert_eq!(v.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = F::zero();
            for (x, &m) in v.iter().zip(self.row(r).iter()) {
                acc += *x * m;
            }
            *o = acc;
        }
    }

    /// out += Mᵀ v.
    pub fn matvec_transpose_add(&self, v: &[F], out: &mut [F]) {
        debug_assert_eq!(v.len(), self.rows);
        debug_assert_eq!(out.len(), self.cols);
        for (r, &x) in v.iter().enumerate() {
            for (o, &m) in out.iter_mut().zip(self.row(r).iter()) {
                *o += x * m;
            }
        }
    }

    /// M += u vᵀ.
    pub fn add_outer(&mut self, u: &[F], v: &[F]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (r, &x) in u.iter().enumerate() {
            for (m, &y) in self.row_mut(r).iter_mut().zip(v.iter()) {
                *m += x * y;
            }
        }
    }
}

/// Model dimensions: vocabulary sizes come from the corpus, the embedding
/// and hidden widths from the training configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub d_model: usize,
    pub hidden: usize,
}

/// All trainable parameters. The gradient of a model reuses this struct
/// with the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F: Scalar> {
    pub dims: ModelDims,
    pub src_embed: Mat<F>,
    pub tgt_embed: Mat<F>,
    pub enc_wx: Mat<F>,
    pub enc_wh: Mat<F>,
    pub enc_b: Vec<F>,
    pub dec_wx: Mat<F>,
    pub dec_wh: Mat<F>,
    pub dec_b: Vec<F>,
    pub comb_w: Mat<F>,
    pub comb_b: Vec<F>,
    pub out_w: Mat<F>,
    pub out_b: Vec<F>,
}

impl<F: Scalar> ModelParams<F> {
    pub fn zeros(dims: ModelDims) -> ModelParams<F> {
        let (v_src, v_tgt, d, h) = (dims.src_vocab, dims.tgt_vocab, dims.d_model, dims.hidden);
        ModelParams {
            dims,
            src_embed: Mat::zeros(v_src, d),
            tgt_embed: Mat::zeros(v_tgt, d),
            enc_wx: Mat::zeros(h, d),
            enc_wh: Mat::zeros(h, h),
            enc_b: vec![F::zero(); h],
            dec_wx: Mat::zeros(h, d),
            dec_wh: Mat::zeros(h, h),
            dec_b: vec![F::zero(); h],
            comb_w: Mat::zeros(h, 2 * h),
            comb_b: vec![F::zero(); h],
            out_w: Mat::zeros(v_tgt, h),
            out_b: vec![F::zero(); v_tgt],
        }
    }

    /// Seeded uniform initialization in [-0.08, 0.08].
    pub fn init(dims: ModelDims, seed: u64) -> ModelParams<F> {
        let mut model = ModelParams::zeros(dims);
        let mut rng = seeding::rng(seeding::mix(seed, &[0x1217]));
        for (_, slice) in model.tensors_mut() {
            for v in slice.iter_mut() {
                *v = F::from_f(rng.gen_range(-0.08..0.08));
            }
        }
        model
    }

    /// All parameter tensors in a fixed order (also the checkpoint order).
    pub fn tensors(&self) -> [(&'static str, &[F]); 12] {
        [
            ("src_embed", self.src_embed.data()),
            ("tgt_embed", self.tgt_embed.data()),
            ("enc_wx", self.enc_wx.data()),
            ("enc_wh", self.enc_wh.data()),
            ("enc_b", &self.enc_b),
            ("dec_wx", self.dec_wx.data()),
            ("dec_wh", self.dec_wh.data()),
            ("dec_b", &self.dec_b),
            ("comb_w", self.comb_w.data()),
            ("comb_b", &self.comb_b),
            ("out_w", self.out_w.data()),
            ("out_b", &self.out_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut [F]); 12] {
        [
            ("src_embed", self.src_embed.data_mut()),
            ("tgt_embed", self.tgt_embed.data_mut()),
            ("enc_wx", self.enc_wx.data_mut()),
            ("enc_wh", self.enc_wh.data_mut()),
            ("enc_b", &mut self.enc_b),
            ("dec_wx", self.dec_wx.data_mut()),
            ("dec_wh", self.dec_wh.data_mut()),
            ("dec_b", &mut self.dec_b),
            ("comb_w", self.comb_w.data_mut()),
            ("comb_b", &mut self.comb_b),
            ("out_w", self.out_w.data_mut()),
            ("out_b", &mut self.out_b),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, s)| s.len()).sum()
    }

    pub fn get_flat(&self, index: usize) -> F {
        let mut offset = 0;
        for (_, slice) in self.tensors() {
            if index < offset + slice.len() {
                return slice[index - offset];
            }
            offset += slice.len();
        }
        panic!("flat index {index} out of range");
    }

    pub fn add_flat(&mut self, index: usize, delta: F) {
        let mut offset = 0;
        for (_, slice) in self.tensors_mut() {
            if index < offset + slice.len() {
                slice[index - offset] += delta;
                return;
            }
            offset += slice.len();
        }
        panic!("flat index {index} out of range");
    }

    /// self += scale * other.
    pub fn add_scaled(&mut self, other: &ModelParams<F>, scale: F) {
        for ((_, dst), (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (d, &s) in dst.iter_mut().zip(src.iter()) {
                *d += scale * s;
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for (_, slice) in self.tensors_mut() {
            for v in slice.iter_mut() {
                *v *= s;
            }
        }
    }

    pub fn l2_norm(&self) -> F {
        let mut acc = F::zero();
        for (_, slice) in self.tensors() {
            for &v in slice {
                acc += v * v;
            }
        }
        acc.sqrt()
    }
}

/// One decoder step with everything the backward pass needs.
#[derive(Debug, Clone)]
pub(crate) struct DecodeStep<F: Scalar> {
    pub input_token: usize,
    /// Decoder recurrent state s_i.
    pub state: Vec<F>,
    /// Attention weights over the encoder states.
    pub attn: Vec<F>,
    /// Attention context vector.
    pub context: Vec<F>,
    /// tanh-combined [state; context].
    pub combined: Vec<F>,
    /// Full log-softmax over the target vocabulary.
    pub log_probs: Vec<F>,
}

/// One teacher-forced pass: encoder states plus a decode step per target
/// position (gold targets include the closing EOS).
#[derive(Debug, Clone)]
pub(crate) struct ForwardPass<F: Scalar> {
    pub src_ids: Vec<usize>,
    pub enc_states: Vec<Vec<F>>,
    pub steps: Vec<DecodeStep<F>>,
    pub targets: Vec<usize>,
}

pub(crate) fn check_ids<F: Scalar>(
    seq: &Sequence,
    vocab_size: usize,
) -> Result<Vec<usize>, ModelError> {
    if seq.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    seq.ids()
        .iter()
        .map(|&id| {
            let id = id as usize;
            if id >= vocab_size {
                Err(ModelError::VocabError { id, vocab_size })
            } else {
                Ok(id)
            }
        })
        .collect()
}

/// Runs the encoder over the source ids, returning h_1..h_N.
pub(crate) fn encode<F: Scalar>(model: &ModelParams<F>, src_ids: &[usize]) -> Vec<Vec<F>> {
    let h = model.dims.hidden;
    let mut states: Vec<Vec<F>> = Vec::with_capacity(src_ids.len());
    let mut prev = vec![F::zero(); h];
    for &tok in src_ids {
        let mut pre = model.enc_b.clone();
        let mut tmp = vec![F::zero(); h];
        model.enc_wx.matvec(model.src_embed.row(tok), &mut tmp);
        for (p, &t) in pre.iter_mut().zip(tmp.iter()) {
            *p += t;
        }
        model.enc_wh.matvec(&prev, &mut tmp);
        for (p, &t) in pre.iter_mut().zip(tmp.iter()) {
            *p += t;
        }
        let state: Vec<F> = pre.iter().map(|&v| v.tanh()).collect();
        states.push(state.clone());
        prev = state;
    }
    states
}

/// One decoder step: recurrence, attention over the encoder states, the
/// combined projection, and the stable log-softmax over target logits.
pub(crate) fn decoder_step<F: Scalar>(
    model: &ModelParams<F>,
    enc_states: &[Vec<F>],
    prev_state: &[F],
    input_token: usize,
) -> DecodeStep<F> {
    let h = model.dims.hidden;
    let v_tgt = model.dims.tgt_vocab;

    // s_i = tanh(Wx g + Wh s_prev + b)
    let mut pre = model.dec_b.clone();
    let mut tmp = vec![F::zero(); h];
    model
        .dec_wx
        .matvec(model.tgt_embed.row(input_token), &mut tmp);
    for (p, &t) in pre.iter_mut().zip(tmp.iter()) {
        *p += t;
    }
    model.dec_wh.matvec(prev_state, &mut tmp);
    for (p, &t) in pre.iter_mut().zip(tmp.iter()) {
        *p += t;
    }
    let state: Vec<F> = pre.iter().map(|&v| v.tanh()).collect();

    // Dot-product attention over the encoder states.
    let scores: Vec<F> = enc_states
        .iter()
        .map(|enc| {
            let mut acc = F::zero();
            for (&s, &e) in state.iter().zip(enc.iter()) {
                acc += s * e;
            }
            acc
        })
        .collect();
    let attn = softmax(&scores);
    let mut context = vec![F::zero(); h];
    for (a, enc) in attn.iter().zip(enc_states.iter()) {
        for (c, &e) in context.iter_mut().zip(enc.iter()) {
            *c += *a * e;
        }
    }

    // q_i = tanh(Wc [s; ctx] + bc)
    let mut concat = Vec::with_capacity(2 * h);
    concat.extend_from_slice(&state);
    concat.extend_from_slice(&context);
    let mut comb_pre = model.comb_b.clone();
    model.comb_w.matvec(&concat, &mut tmp);
    for (p, &t) in comb_pre.iter_mut().zip(tmp.iter()) {
        *p += t;
    }
    let combined: Vec<F> = comb_pre.iter().map(|&v| v.tanh()).collect();

    // logits and log-softmax
    let mut logits = model.out_b.clone();
    let mut out_tmp = vec![F::zero(); v_tgt];
    model.out_w.matvec(&combined, &mut out_tmp);
    for (l, &t) in logits.iter_mut().zip(out_tmp.iter()) {
        *l += t;
    }
    let log_probs = log_softmax(&logits);

    DecodeStep {
        input_token,
        state,
        attn,
        context,
        combined,
        log_probs,
    }
}

/// Teacher-forced forward pass: decoder inputs are BOS followed by the gold
/// prefix, targets are the gold tokens followed by EOS.
pub(crate) fn forward_teacher<F: Scalar>(
    model: &ModelParams<F>,
    x: &Sequence,
    y: &Sequence,
) -> Result<ForwardPass<F>, ModelError> {
    let src_ids = check_ids::<F>(x, model.dims.src_vocab)?;
    let tgt_ids = check_ids::<F>(y, model.dims.tgt_vocab)?;

    let enc_states = encode(model, &src_ids);

    let mut inputs = Vec::with_capacity(tgt_ids.len() + 1);
    inputs.push(BOS as usize);
    inputs.extend_from_slice(&tgt_ids);
    let mut targets = tgt_ids;
    targets.push(crate::text::EOS as usize);

    let mut steps = Vec::with_capacity(inputs.len());
    let mut prev = enc_states.last().expect("non-empty source").clone();
    for &tok in &inputs {
        let step = decoder_step(model, &enc_states, &prev, tok);
        prev = step.state.clone();
        steps.push(step);
    }
    Ok(ForwardPass {
        src_ids,
        enc_states,
        steps,
        targets,
    })
}

/// Exact conditional log-likelihood log p(y | x) under teacher forcing,
/// including the closing EOS step. Always <= 0.
pub fn log_prob<F: Scalar>(
    model: &ModelParams<F>,
    x: &Sequence,
    y: &Sequence,
) -> Result<F, ModelError> {
    let pass = forward_teacher(model, x, y)?;
    Ok(pass_log_prob(&pass))
}

pub(crate) fn pass_log_prob<F: Scalar>(pass: &ForwardPass<F>) -> F {
    let mut acc = F::zero();
    for (step, &t) in pass.steps.iter().zip(pass.targets.iter()) {
        acc += step.log_probs[t];
    }
    acc
}

pub(crate) fn softmax<F: Scalar>(scores: &[F]) -> Vec<F> {
    let max = scores.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let exps: Vec<F> = scores.iter().map(|&v| (v - max).exp()).collect();
    let sum: F = exps.iter().fold(F::zero(), |s, &v| s + v);
    exps.into_iter().map(|v| v / sum).collect()
}

pub(crate) fn log_softmax<F: Scalar>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
    let sum: F = logits.iter().map(|&v| (v - max).exp()).sum();
    let lse = max + sum.ln();
    logits.iter().map(|&v| v - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Sequence;

    fn dims() -> ModelDims {
        ModelDims {
            src_vocab: 9,
            tgt_vocab: 7,
            d_model: 4,
            hidden: 5,
        }
    }

    fn seq(ids: &[u32]) -> Sequence {
        Sequence::new(ids.to_vec())
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParams::<f64>::init(dims(), 3);
        let b = ModelParams::<f64>::init(dims(), 3);
        assert_eq!(a, b);
        let c = ModelParams::<f64>::init(dims(), 4);
        assert_ne!(a, c);
    }

    #[test]
    fn zeroed_output_projection_gives_uniform_log_prob() {
        let mut model = ModelParams::<f64>::init(dims(), 11);
        model.out_w = Mat::zeros(7, 5);
        model.out_b = vec![0.0; 7];
        let x = seq(&[4, 5, 6]);
        let y = seq(&[4, 5]);
        let lp = log_prob(&model, &x, &y).unwrap();
        // Uniform softmax over 7 tokens, 2 gold steps plus EOS.
        let want = -((y.len() + 1) as f64) * (7.0f64).ln();
        assert!((lp - want).abs() < 1e-12);
    }

    #[test]
    fn log_prob_is_a_log_probability() {
        let model = ModelParams::<f64>::init(dims(), 5);
        let x = seq(&[4, 5, 6, 7]);
        let y = seq(&[5, 6, 4]);
        let lp = log_prob(&model, &x, &y).unwrap();
        assert!(lp <= 0.0);
        let p = lp.exp();
        assert!(p > 0.0 && p <= 1.0);
    }

    #[test]
    fn log_prob_rejects_invalid_ids() {
        let model = ModelParams::<f64>::init(dims(), 5);
        let x = seq(&[4, 99]);
        let y = seq(&[5]);
        assert!(matches!(
            log_prob(&model, &x, &y),
            Err(ModelError::VocabError { id: 99, .. })
        ));
    }

    #[test]
    fn log_prob_rejects_empty_sequences() {
        let model = ModelParams::<f64>::init(dims(), 5);
        let x = seq(&[4]);
        let empty = Sequence::new(vec![]);
        assert!(matches!(
            log_prob(&model, &empty, &x),
            Err(ModelError::EmptySequence)
        ));
        assert!(matches!(
            log_prob(&model, &x, &empty),
            Err(ModelError::EmptySequence)
        ));
    }

    /// Independent scalar-by-scalar recomputation of the forward pass for a
    /// tiny model, written against the layer equations rather than the Mat
    /// helpers.
    #[test]
    fn forward_matches_hand_computed_chain() {
        let dims = ModelDims {
            src_vocab: 5,
            tgt_vocab: 5,
            d_model: 2,
            hidden: 2,
        };
        let mut model = ModelParams::<f64>::zeros(dims);
        // Hand-set weights: simple distinct values.
        for (i, v) in model.src_embed.data_mut().iter_mut().enumerate() {
            *v = 0.01 * (i as f64) - 0.03;
        }
        for (i, v) in model.tgt_embed.data_mut().iter_mut().enumerate() {
            *v = 0.02 * (i as f64) - 0.05;
        }
        for (i, v) in model.enc_wx.data_mut().iter_mut().enumerate() {
            *v = 0.1 + 0.05 * i as f64;
        }
        for (i, v) in model.enc_wh.data_mut().iter_mut().enumerate() {
            *v = -0.2 + 0.1 * i as f64;
        }
        model.enc_b = vec![0.01, -0.02];
        for (i, v) in model.dec_wx.data_mut().iter_mut().enumerate() {
            *v = 0.15 - 0.04 * i as f64;
        }
        for (i, v) in model.dec_wh.data_mut().iter_mut().enumerate() {
            *v = 0.05 * (i as f64 + 1.0);
        }
        model.dec_b = vec![-0.01, 0.03];
        for (i, v) in model.comb_w.data_mut().iter_mut().enumerate() {
            *v = 0.07 - 0.02 * i as f64;
        }
        model.comb_b = vec![0.02, -0.04];
        for (i, v) in model.out_w.data_mut().iter_mut().enumerate() {
            *v = 0.3 - 0.06 * i as f64;
        }
        model.out_b = vec![0.1, 0.0, -0.1, 0.2, -0.2];

        let x = seq(&[4]);
        let y = seq(&[4, 3]);
        let got = log_prob(&model, &x, &y).unwrap();

        // Reference chain, explicit scalars.
        let e = |m: &Mat<f64>, r: usize, c: usize| m.row(r)[c];
        let tanh = f64::tanh;
        let ex = [e(&model.src_embed, 4, 0), e(&model.src_embed, 4, 1)];
        let h1 = [
            tanh(e(&model.enc_wx, 0, 0) * ex[0] + e(&model.enc_wx, 0, 1) * ex[1] + model.enc_b[0]),
            tanh(e(&model.enc_wx, 1, 0) * ex[0] + e(&model.enc_wx, 1, 1) * ex[1] + model.enc_b[1]),
        ];
        let mut s_prev = h1;
        let mut total = 0.0;
        let inputs = [1usize, 4, 3]; // BOS, y1, y2
        let targets = [4usize, 3, 2]; // y1, y2, EOS
        for (inp, tgt) in inputs.iter().zip(targets.iter()) {
            let g = [e(&model.tgt_embed, *inp, 0), e(&model.tgt_embed, *inp, 1)];
            let s = [
                tanh(
                    e(&model.dec_wx, 0, 0) * g[0]
                        + e(&model.dec_wx, 0, 1) * g[1]
                        + e(&model.dec_wh, 0, 0) * s_prev[0]
                        + e(&model.dec_wh, 0, 1) * s_prev[1]
                        + model.dec_b[0],
                ),
                tanh(
                    e(&model.dec_wx, 1, 0) * g[0]
                        + e(&model.dec_wx, 1, 1) * g[1]
                        + e(&model.dec_wh, 1, 0) * s_prev[0]
                        + e(&model.dec_wh, 1, 1) * s_prev[1]
                        + model.dec_b[1],
                ),
            ];
            // Single encoder state: attention weight is 1, context is h1.
            let ctx = h1;
            let concat = [s[0], s[1], ctx[0], ctx[1]];
            let q = [
                tanh(
                    (0..4)
                        .map(|c| e(&model.comb_w, 0, c) * concat[c])
                        .sum::<f64>()
                        + model.comb_b[0],
                ),
                tanh(
                    (0..4)
                        .map(|c| e(&model.comb_w, 1, c) * concat[c])
                        .sum::<f64>()
                        + model.comb_b[1],
                ),
            ];
            let logits: Vec<f64> = (0..5)
                .map(|v| {
                    e(&model.out_w, v, 0) * q[0] + e(&model.out_w, v, 1) * q[1] + model.out_b[v]
                })
                .collect();
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            total += logits[*tgt] - z.ln();
            s_prev = s;
        }
        assert!(
            (got - total).abs() < 1e-10,
            "forward {got} vs reference {total}"
        );
    }
}
