//! Hand-derived gradient of the LSR loss with respect to the token table.
//!
//! With `z_i = s_i / γ`, `P = softmax(z)` and `Q` held fixed,
//! `∂KL(P‖Q)/∂z_i = P_i (ln P_i − ln Q_i − KL)`. Cosine scores backpropagate
//! as `∂cos(a,b)/∂a = b/(|a||b|) − cos·a/|a|²`, and mean pooling spreads
//! `∂/∂E` evenly over the pooled rows (`count_t / n` per occurrence).

use crate::encoder::{EncoderError, EncoderParams};
use crate::numeric::{softmax_with_temperature, Scalar};
use crate::tokenizer::TokenId;

use super::{kl_divergence, LsrError};

/// One context's inputs to the loss: the query tokens, its retrieved
/// candidates and the constant LM distribution `Q` over them.
#[derive(Debug, Clone)]
pub struct ExampleTerm<'a, T> {
    pub query: &'a [TokenId],
    pub docs: Vec<&'a [TokenId]>,
    pub lm_probs: Vec<T>,
}

fn pooled<T: Scalar>(params: &EncoderParams<T>, tokens: &[TokenId]) -> Result<Vec<T>, EncoderError> {
    Ok(params.embed(tokens)?.into_values())
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Adds `scale · ∂cos(a,b)/∂a` into `out`.
fn add_cos_grad<T: Scalar>(out: &mut [T], a: &[T], b: &[T], cos: T, scale: T) {
    let (na, nb) = (norm(a), norm(b));
    let cross = scale / (na * nb);
    let self_term = scale * cos / (na * na);
    for ((o, &ai), &bi) in out.iter_mut().zip(a).zip(b) {
        *o += cross * bi - self_term * ai;
    }
}

/// Spreads a pooled-embedding gradient back onto the rows it averaged.
fn scatter<T: Scalar>(grad: &mut [T], dim: usize, tokens: &[TokenId], g: &[T]) {
    let inv = T::one() / T::count(tokens.len());
    for &t in tokens {
        let row = &mut grad[t as usize * dim..(t as usize + 1) * dim];
        for (r, &gi) in row.iter_mut().zip(g) {
            *r += gi * inv;
        }
    }
}

/// Mean KL over `terms` and, when `want_grad`, its gradient with respect to
/// the flattened token table.
pub fn loss_and_gradient<T: Scalar>(
    params: &EncoderParams<T>,
    terms: &[ExampleTerm<'_, T>],
    gamma: T,
    want_grad: bool,
) -> Result<(T, Option<Vec<T>>), LsrError> {
    if terms.is_empty() {
        return Err(LsrError::Domain("empty batch".into()));
    }
    let dim = params.dim();
    let mut grad = want_grad.then(|| vec![T::zero(); params.table().len()]);
    let batch = T::count(terms.len());
    let mut total = T::zero();
    for term in terms {
        if term.docs.len() != term.lm_probs.len() || term.docs.is_empty() {
            return Err(LsrError::Domain("candidate and LM distribution lengths differ".into()));
        }
        let q = pooled(params, term.query)?;
        let ds = term.docs.iter().map(|d| pooled(params, d)).collect::<Result<Vec<_>, _>>()?;
        let (qn, dn): (T, Vec<T>) = (norm(&q), ds.iter().map(|d| norm(d)).collect());
        if qn == T::zero() || dn.iter().any(|&n| n == T::zero()) {
            return Err(EncoderError::DegenerateEmbedding.into());
        }
        let scores: Vec<T> = ds.iter().zip(&dn).map(|(d, &n)| dot(&q, d) / (qn * n)).collect();
        let p = softmax_with_temperature(&scores, gamma).ok_or_else(|| LsrError::Domain("non-finite score".into()))?;
        let kl = kl_divergence(&p, &term.lm_probs)?;
        total += kl;
        let Some(grad) = grad.as_mut() else { continue };
        let mut gq = vec![T::zero(); dim];
        for (i, d) in ds.iter().enumerate() {
            let (pi, qi) = (p[i], term.lm_probs[i]);
            if pi == T::zero() {
                continue;
            }
            let dl_ds = pi * (pi.ln() - qi.ln() - kl) / (gamma * batch);
            add_cos_grad(&mut gq, &q, d, scores[i], dl_ds);
            let mut gd = vec![T::zero(); dim];
            add_cos_grad(&mut gd, d, &q, scores[i], dl_ds);
            scatter(grad, dim, term.docs[i], &gd);
        }
        scatter(grad, dim, term.query, &gq);
    }
    Ok((total / batch, grad))
}
