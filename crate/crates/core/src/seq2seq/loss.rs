//! The smoothed training objective and its analytic gradient. The loss is
//! the example NLL plus alpha/|R| times the summed NLLs of the related
//! targets; token-level uniform smoothing optionally replaces the one-hot
//! targets of the base term.

use crate::scalar::Scalar;
use crate::smoothing::RelatedTarget;
use crate::text::Sequence;

use super::model::{forward_teacher, pass_log_prob, ForwardPass, ModelParams};
use super::ModelError;

/// The pieces of one example's smoothed loss.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<F: Scalar> {
    pub base_nll: F,
    pub related_nlls: Vec<F>,
    pub total: F,
}

impl<F: Scalar> LossBreakdown<F> {
    /// total = base + (alpha / |R|) * sum(related); the second term is
    /// dropped when the related set is empty.
    pub fn compose(base_nll: F, related_nlls: Vec<F>, alpha: F) -> LossBreakdown<F> {
        let total = if related_nlls.is_empty() {
            base_nll
        } else {
            let sum: F = related_nlls.iter().fold(F::zero(), |s, &v| s + v);
            base_nll + alpha / F::from_count(related_nlls.len()) * sum
        };
        LossBreakdown {
            base_nll,
            related_nlls,
            total,
        }
    }
}

/// Per-step target distribution used by the base term.
#[derive(Debug, Clone, Copy)]
pub(crate) enum TargetKind<F: Scalar> {
    OneHot,
    /// Uniform token smoothing with the given alpha.
    Smoothed(F),
}

fn validate_alphas<F: Scalar>(alpha: F, token_ls: Option<F>) -> Result<(), ModelError> {
    if alpha < F::zero() {
        return Err(ModelError::InvalidConfig(
            "sequence smoothing alpha must be non-negative".into(),
        ));
    }
    if let Some(a) = token_ls {
        if a < F::zero() || a >= F::one() {
            return Err(ModelError::InvalidConfig(
                "token smoothing alpha must be in [0, 1)".into(),
            ));
        }
    }
    Ok(())
}

/// NLL of one teacher-forced pass under the given target distribution.
fn pass_nll<F: Scalar>(pass: &ForwardPass<F>, target: TargetKind<F>) -> F {
    match target {
        TargetKind::OneHot => -pass_log_prob(pass),
        TargetKind::Smoothed(a) => {
            let vocab = pass.steps[0].log_probs.len();
            let uniform = a / F::from_count(vocab);
            let mut acc = F::zero();
            for (step, &t) in pass.steps.iter().zip(pass.targets.iter()) {
                let sum_log: F = step.log_probs.iter().fold(F::zero(), |s, &v| s + v);
                acc += -((F::one() - a) * step.log_probs[t] + uniform * sum_log);
            }
            acc
        }
    }
}

/// Smoothed loss of one example: base NLL (optionally with token-smoothed
/// targets) plus the alpha-weighted mean NLL over the related targets.
pub fn smoothed_loss<F: Scalar>(
    model: &ModelParams<F>,
    x: &Sequence,
    y: &Sequence,
    related: &[RelatedTarget<F>],
    alpha: F,
    token_ls: Option<F>,
) -> Result<LossBreakdown<F>, ModelError> {
    validate_alphas(alpha, token_ls)?;
    let base_target = match token_ls {
        Some(a) => TargetKind::Smoothed(a),
        None => TargetKind::OneHot,
    };
    let base_pass = forward_teacher(model, x, y)?;
    let base_nll = pass_nll(&base_pass, base_target);
    let mut related_nlls = Vec::with_capacity(related.len());
    for r in related {
        let pass = forward_teacher(model, x, &r.target)?;
        related_nlls.push(pass_nll(&pass, TargetKind::OneHot));
    }
    Ok(LossBreakdown::compose(base_nll, related_nlls, alpha))
}

/// Analytic gradient of [`smoothed_loss`] with respect to every parameter,
/// returned alongside the loss value.
pub fn grad<F: Scalar>(
    model: &ModelParams<F>,
    x: &Sequence,
    y: &Sequence,
    related: &[RelatedTarget<F>],
    alpha: F,
    token_ls: Option<F>,
) -> Result<(LossBreakdown<F>, ModelParams<F>), ModelError> {
    let mut grads = ModelParams::zeros(model.dims);
    let breakdown = grad_accumulate(model, x, y, related, alpha, token_ls, F::one(), &mut grads)?;
    Ok((breakdown, grads))
}

/// Accumulates `weight` times the example gradient into `grads`.
pub(crate) fn grad_accumulate<F: Scalar>(
    model: &ModelParams<F>,
    x: &Sequence,
    y: &Sequence,
    related: &[RelatedTarget<F>],
    alpha: F,
    token_ls: Option<F>,
    weight: F,
    grads: &mut ModelParams<F>,
) -> Result<LossBreakdown<F>, ModelError> {
    validate_alphas(alpha, token_ls)?;
    let base_target = match token_ls {
        Some(a) => TargetKind::Smoothed(a),
        None => TargetKind::OneHot,
    };
    let base_pass = forward_teacher(model, x, y)?;
    let base_nll = pass_nll(&base_pass, base_target);
    backward_pass(model, &base_pass, base_target, weight, grads);

    let mut related_nlls = Vec::with_capacity(related.len());
    if !related.is_empty() {
        let term_weight = weight * alpha / F::from_count(related.len());
        for r in related {
            let pass = forward_teacher(model, x, &r.target)?;
            related_nlls.push(pass_nll(&pass, TargetKind::OneHot));
            if term_weight != F::zero() {
                backward_pass(model, &pass, TargetKind::OneHot, term_weight, grads);
            }
        }
    }
    Ok(LossBreakdown::compose(base_nll, related_nlls, alpha))
}

/// Backpropagation through one teacher-forced pass, accumulating
/// `weight * dNLL/dparam` into `grads`.
fn backward_pass<F: Scalar>(
    model: &ModelParams<F>,
    pass: &ForwardPass<F>,
    target: TargetKind<F>,
    weight: F,
    grads: &mut ModelParams<F>,
) {
    let h = model.dims.hidden;
    let v_tgt = model.dims.tgt_vocab;
    let n_src = pass.enc_states.len();

    // Gradients flowing into each encoder state (attention plus recurrence).
    let mut d_enc: Vec<Vec<F>> = vec![vec![F::zero(); h]; n_src];
    // Gradient carried into s_i from step i+1.
    let mut d_state_carry = vec![F::zero(); h];

    for i in (0..pass.steps.len()).rev() {
        let step = &pass.steps[i];
        let gold = pass.targets[i];
        let prev_state: &[F] = if i == 0 {
            &pass.enc_states[n_src - 1]
        } else {
            &pass.steps[i - 1].state
        };

        // d logits = weight * (p - q)
        let mut d_logits: Vec<F> = step.log_probs.iter().map(|&lp| weight * lp.exp()).collect();
        match target {
            TargetKind::OneHot => {
                d_logits[gold] -= weight;
            }
            TargetKind::Smoothed(a) => {
                let uniform = weight * a / F::from_count(v_tgt);
                for d in d_logits.iter_mut() {
                    *d -= uniform;
                }
                d_logits[gold] -= weight * (F::one() - a);
            }
        }

        // Output projection.
        grads.out_w.add_outer(&d_logits, &step.combined);
        for (g, &d) in grads.out_b.iter_mut().zip(d_logits.iter()) {
            *g += d;
        }
        let mut d_comb = vec![F::zero(); h];
        model.out_w.matvec_transpose_add(&d_logits, &mut d_comb);

        // Combined tanh projection.
        let d_comb_pre: Vec<F> = d_comb
            .iter()
            .zip(step.combined.iter())
            .map(|(&d, &q)| d * (F::one() - q * q))
            .collect();
        let mut concat = Vec::with_capacity(2 * h);
        concat.extend_from_slice(&step.state);
        concat.extend_from_slice(&step.context);
        grads.comb_w.add_outer(&d_comb_pre, &concat);
        for (g, &d) in grads.comb_b.iter_mut().zip(d_comb_pre.iter()) {
            *g += d;
        }
        let mut d_concat = vec![F::zero(); 2 * h];
        model
            .comb_w
            .matvec_transpose_add(&d_comb_pre, &mut d_concat);
        let mut d_state: Vec<F> = d_concat[..h].to_vec();
        let d_context = &d_concat[h..];

        // Attention: context = sum_t attn_t * enc_t with scores s . enc_t.
        let mut d_attn = vec![F::zero(); n_src];
        for t in 0..n_src {
            let mut acc = F::zero();
            for (dc, &e) in d_context.iter().zip(pass.enc_states[t].iter()) {
                acc += *dc * e;
            }
            d_attn[t] = acc;
            for (de, &dc) in d_enc[t].iter_mut().zip(d_context.iter()) {
                *de += step.attn[t] * dc;
            }
        }
        let dot_attn: F = step
            .attn
            .iter()
            .zip(d_attn.iter())
            .fold(F::zero(), |s, (&a, &d)| s + a * d);
        for t in 0..n_src {
            let d_score = step.attn[t] * (d_attn[t] - dot_attn);
            for (ds, &e) in d_state.iter_mut().zip(pass.enc_states[t].iter()) {
                *ds += d_score * e;
            }
            for (de, &s) in d_enc[t].iter_mut().zip(step.state.iter()) {
                *de += d_score * s;
            }
        }

        // Recurrence carried in from step i+1.
        for (ds, &c) in d_state.iter_mut().zip(d_state_carry.iter()) {
            *ds += c;
        }

        // Decoder tanh recurrence.
        let d_pre: Vec<F> = d_state
            .iter()
            .zip(step.state.iter())
            .map(|(&d, &s)| d * (F::one() - s * s))
            .collect();
        grads
            .dec_wx
            .add_outer(&d_pre, model.tgt_embed.row(step.input_token));
        grads.dec_wh.add_outer(&d_pre, prev_state);
        for (g, &d) in grads.dec_b.iter_mut().zip(d_pre.iter()) {
            *g += d;
        }
        model
            .dec_wx
            .matvec_transpose_add(&d_pre, grads.tgt_embed.row_mut(step.input_token));
        d_state_carry = vec![F::zero(); h];
        model
            .dec_wh
            .matvec_transpose_add(&d_pre, &mut d_state_carry);
    }

    // s_0 is the final encoder state.
    for (de, &c) in d_enc[n_src - 1].iter_mut().zip(d_state_carry.iter()) {
        *de += c;
    }

    // Encoder backward.
    let mut d_h_carry = vec![F::zero(); h];
    for t in (0..n_src).rev() {
        let mut d_h = d_enc[t].clone();
        for (dh, &c) in d_h.iter_mut().zip(d_h_carry.iter()) {
            *dh += c;
        }
        let state = &pass.enc_states[t];
        let d_pre: Vec<F> = d_h
            .iter()
            .zip(state.iter())
            .map(|(&d, &s)| d * (F::one() - s * s))
            .collect();
        grads
            .enc_wx
            .add_outer(&d_pre, model.src_embed.row(pass.src_ids[t]));
        if t > 0 {
            grads.enc_wh.add_outer(&d_pre, &pass.enc_states[t - 1]);
        }
        for (g, &d) in grads.enc_b.iter_mut().zip(d_pre.iter()) {
            *g += d;
        }
        model
            .enc_wx
            .matvec_transpose_add(&d_pre, grads.src_embed.row_mut(pass.src_ids[t]));
        d_h_carry = vec![F::zero(); h];
        model.enc_wh.matvec_transpose_add(&d_pre, &mut d_h_carry);
    }
}
