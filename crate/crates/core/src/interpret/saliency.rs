use super::explanation::{Explanation, Technique};
use crate::data::tokenize;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::models::{Mode, Model};
use crate::params::ParamSet;
use crate::tensor::Tensor;

/// Value and gradient of a scalar score with respect to a `T × E` embedding matrix.
///
/// `score` builds the score node from the embedding leaf inside a graph over `params`.
pub fn score_gradient(
    params: &ParamSet,
    embeddings: &Tensor,
    score: impl Fn(&mut Graph<'_>, NodeId) -> Result<NodeId>,
) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new(params);
    let e = g.input(embeddings.clone().with_grad(true));
    let s = score(&mut g, e)?;
    if g.value(s).len() != 1 {
        return Err(Error::Contract("saliency score must be a scalar".into()));
    }
    let value = g.value(s).data()[0];
    let back = g.backward(s)?;
    let grad = back.node(e).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; embeddings.len()]);
    Ok((value, grad))
}

/// Euclidean norm of each `width`-sized row.
pub fn row_norms(grad: &[f64], width: usize) -> Vec<f64> {
    grad.chunks(width).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
}

/// Model score for `label` (pre-softmax logit or pre-sigmoid activation) as a graph node.
pub fn model_score(model: &Model, g: &mut Graph<'_>, words: &[usize], chars: &[usize], c_max: usize, embeddings: NodeId, label: usize) -> Result<NodeId> {
    let ex = crate::data::Example { words, chars, c_max };
    let f = model.forward_embedded(g, ex, embeddings, Mode::Eval)?;
    g.pick(f.logits, label)
}

/// The model's word-embedding rows for `text` after tokenization and truncation.
pub fn text_embeddings(model: &Model, text: &str) -> Result<(Vec<String>, crate::data::Batch, Tensor)> {
    let mut tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::InvalidInput("cannot explain an empty text".into()));
    }
    tokens.truncate(model.config.max_tokens);
    let batch = model.encode_token_lists(std::slice::from_ref(&tokens));
    let table = model.params.get(model.embedding_param());
    let e = table.cols();
    let data = batch.example(0).words.iter().flat_map(|&w| table.row(w).to_vec()).collect();
    let emb = Tensor::matrix(tokens.len(), e, data)?;
    Ok((tokens, batch, emb))
}

/// First-derivative saliency: per-token L2 norm of `∂ score_label / ∂ E`.
pub fn saliency_map(model: &Model, text: &str, label: usize) -> Result<Explanation> {
    let outputs = model.config.num_outputs();
    if label >= outputs {
        return Err(Error::InvalidInput(format!("label {label} out of range for {outputs} outputs")));
    }
    let (tokens, batch, emb) = text_embeddings(model, text)?;
    let ex = batch.example(0);
    let (_, grad) = score_gradient(&model.params, &emb, |g, e| model_score(model, g, ex.words, ex.chars, ex.c_max, e, label))?;
    Ok(Explanation {
        technique: Technique::Saliency,
        weights: row_norms(&grad, emb.cols()),
        tokens,
        target_class: label,
        probabilities: model.outputs(ex)?,
        features: Vec::new(),
        intercept: None,
    })
}
