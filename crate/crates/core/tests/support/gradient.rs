//! Finite-difference gradient cases shared by the gradient tests and the acceptance suite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use storyclass::data::{synthetic::keyword_corpus, Category, Task};
use storyclass::graph::{Graph, NodeId};
use storyclass::models::{Architecture, EmbeddingInput, Mode, Model, ModelConfig, Target};
use storyclass::tensor::Tensor;
use storyclass_testkit::{central_difference, max_relative_error};

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: usize = 20;

pub struct CaseResult {
    pub name: String,
    pub instances: usize,
    pub max_rel_err: f64,
}

type Build = Box<dyn Fn(&mut Graph<'static>, &[NodeId]) -> storyclass::Result<NodeId>>;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks are not straddled by the finite difference.
fn rand_off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn evaluate(inputs: &[Tensor], weights: &Tensor, build: &Build) -> (f64, Vec<Vec<f64>>) {
    let mut g = Graph::detached();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone().with_grad(true))).collect();
    let out = build(&mut g, &ids).expect("forward");
    let w = g.input(weights.clone());
    let prod = g.mul(out, w).expect("weights match output");
    let loss = g.sum(prod);
    let value = g.value(loss).data()[0];
    let back = g.backward(loss).expect("backward");
    let grads = ids
        .iter()
        .zip(inputs)
        .map(|(id, t)| back.node(*id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    (value, grads)
}

/// Max relative error between reverse-mode and central-difference gradients of
/// `sum(build(inputs) ⊙ R)` for a random fixed `R`.
pub fn check_op(inputs: Vec<Tensor>, build: Build, rng: &mut ChaCha8Rng) -> f64 {
    let out_shape = {
        let mut g = Graph::detached();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &ids).expect("forward");
        g.value(out).shape().to_vec()
    };
    let weights = rand_tensor(rng, &out_shape);
    let (_, analytic) = evaluate(&inputs, &weights, &build);
    let mut worst: f64 = 0.0;
    for i in 0..inputs.len() {
        let mut f = |x: &[f64]| {
            let mut perturbed = inputs.clone();
            perturbed[i] = Tensor::new(inputs[i].shape().to_vec(), x.to_vec()).unwrap();
            evaluate(&perturbed, &weights, &build).0
        };
        let numeric = central_difference(&mut f, inputs[i].data(), STEP);
        worst = worst.max(max_relative_error(&analytic[i], &numeric));
    }
    worst
}

type Generator = fn(&mut ChaCha8Rng) -> (Vec<Tensor>, Build);

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

fn op_generators() -> Vec<(&'static str, Generator)> {
    vec![
        ("matmul", |r| {
            let (m, k, n) = (dims(r, 1, 4), dims(r, 1, 5), dims(r, 1, 4));
            (vec![rand_tensor(r, &[m, k]), rand_tensor(r, &[k, n])], Box::new(|g, x| g.matmul(x[0], x[1])))
        }),
        ("add_bias", |r| {
            let (m, n) = (dims(r, 1, 4), dims(r, 1, 5));
            (vec![rand_tensor(r, &[m, n]), rand_tensor(r, &[n])], Box::new(|g, x| g.add_bias(x[0], x[1])))
        }),
        ("affine", |r| {
            let (m, k, n) = (dims(r, 1, 3), dims(r, 1, 5), dims(r, 1, 3));
            (
                vec![rand_tensor(r, &[m, k]), rand_tensor(r, &[k, n]), rand_tensor(r, &[n])],
                Box::new(|g, x| g.affine(x[0], x[1], x[2])),
            )
        }),
        ("add", |r| {
            let s = [dims(r, 1, 4), dims(r, 1, 4)];
            (vec![rand_tensor(r, &s), rand_tensor(r, &s)], Box::new(|g, x| g.add(x[0], x[1])))
        }),
        ("mul", |r| {
            let s = [dims(r, 1, 4), dims(r, 1, 4)];
            (vec![rand_tensor(r, &s), rand_tensor(r, &s)], Box::new(|g, x| g.mul(x[0], x[1])))
        }),
        ("scale", |r| {
            let s: f64 = r.random_range(-3.0..3.0);
            (vec![rand_tensor(r, &[3, 2])], Box::new(move |g, x| Ok(g.scale(x[0], s))))
        }),
        ("sigmoid", |r| {
            let m = dims(r, 1, 4);
            let x = rand_tensor(r, &[m, 3]);
            (vec![x], Box::new(|g, x| Ok(g.sigmoid(x[0]))))
        }),
        ("tanh", |r| {
            let m = dims(r, 1, 4);
            let x = rand_tensor(r, &[m, 3]);
            (vec![x], Box::new(|g, x| Ok(g.tanh(x[0]))))
        }),
        ("relu", |r| {
            let m = dims(r, 1, 4);
            let x = rand_off_zero(r, &[m, 4]);
            (vec![x], Box::new(|g, x| Ok(g.relu(x[0]))))
        }),
        ("concat_cols", |r| {
            let m = dims(r, 1, 3);
            let parts = vec![rand_tensor(r, &[m, 2]), rand_tensor(r, &[m, 1]), rand_tensor(r, &[m, 3])];
            (parts, Box::new(|g, x| g.concat_cols(x)))
        }),
        ("concat_rows", |r| {
            let n = dims(r, 1, 3);
            let parts = vec![rand_tensor(r, &[2, n]), rand_tensor(r, &[1, n])];
            (parts, Box::new(|g, x| g.concat_rows(x)))
        }),
        ("slice_rows", |r| {
            let rows = dims(r, 2, 6);
            let start = r.random_range(0..rows);
            let len = r.random_range(1..=rows - start);
            (vec![rand_tensor(r, &[rows, 3])], Box::new(move |g, x| g.slice_rows(x[0], start, len)))
        }),
        ("pad_rows", |r| {
            let rows = dims(r, 1, 3);
            let min = rows + dims(r, 1, 3);
            (vec![rand_tensor(r, &[rows, 2])], Box::new(move |g, x| Ok(g.pad_rows(x[0], min))))
        }),
        ("gather", |r| {
            let rows = dims(r, 3, 6);
            let idx: Vec<usize> = (0..dims(r, 2, 7)).map(|_| r.random_range(0..rows)).collect();
            let zero = Some(r.random_range(0..rows));
            (vec![rand_tensor(r, &[rows, 3])], Box::new(move |g, x| g.gather(x[0], &idx, zero)))
        }),
        ("conv1d", |r| {
            let (t, d, w, f) = (dims(r, 5, 8), dims(r, 1, 4), dims(r, 1, 4), dims(r, 1, 3));
            (
                vec![rand_tensor(r, &[t, d]), rand_tensor(r, &[w, d, f]), rand_tensor(r, &[f])],
                Box::new(move |g, x| g.conv1d(x[0], x[1], x[2], w, 1)),
            )
        }),
        ("conv1d_grouped", |r| {
            let (groups, l, d, w, f) = (dims(r, 2, 3), dims(r, 4, 6), dims(r, 1, 3), dims(r, 1, 3), dims(r, 1, 3));
            (
                vec![rand_tensor(r, &[groups * l, d]), rand_tensor(r, &[w, d, f]), rand_tensor(r, &[f])],
                Box::new(move |g, x| g.conv1d(x[0], x[1], x[2], w, groups)),
            )
        }),
        ("max_pool", |r| {
            let groups = dims(r, 1, 3);
            let rows = groups * dims(r, 1, 4);
            (vec![rand_tensor(r, &[rows, 3])], Box::new(move |g, x| g.max_pool(x[0], groups)))
        }),
        ("lstm", |r| {
            let (t, d, h) = (dims(r, 1, 5), dims(r, 1, 3), dims(r, 1, 3));
            (
                vec![rand_tensor(r, &[t, d]), rand_tensor(r, &[d, 4 * h]), rand_tensor(r, &[h, 4 * h]), rand_tensor(r, &[4 * h])],
                Box::new(|g, x| g.lstm(x[0], x[1], x[2], x[3], false)),
            )
        }),
        ("lstm_reverse", |r| {
            let (t, d, h) = (dims(r, 1, 5), dims(r, 1, 3), dims(r, 1, 3));
            (
                vec![rand_tensor(r, &[t, d]), rand_tensor(r, &[d, 4 * h]), rand_tensor(r, &[h, 4 * h]), rand_tensor(r, &[4 * h])],
                Box::new(|g, x| g.lstm(x[0], x[1], x[2], x[3], true)),
            )
        }),
        ("dropout_mask", |r| {
            let x = rand_tensor(r, &[2, 5]);
            let mask = storyclass::nn::dropout_mask(10, 0.75, r).unwrap();
            (vec![x], Box::new(move |g, x| g.apply_mask(x[0], mask.clone())))
        }),
        ("softmax_cross_entropy", |r| {
            let (n, c) = (dims(r, 1, 4), dims(r, 2, 4));
            let targets: Vec<usize> = (0..n).map(|_| r.random_range(0..c)).collect();
            (vec![rand_tensor(r, &[n, c])], Box::new(move |g, x| g.softmax_cross_entropy(x[0], &targets)))
        }),
        ("sigmoid_bce", |r| {
            let n = dims(r, 1, 3);
            let targets: Vec<f64> = (0..3 * n).map(|_| f64::from(u8::from(r.random_bool(0.5)))).collect();
            (vec![rand_tensor(r, &[n, 3])], Box::new(move |g, x| g.sigmoid_bce(x[0], &targets)))
        }),
        ("sum", |r| (vec![rand_tensor(r, &[3, 2])], Box::new(|g, x| Ok(g.sum(x[0]))))),
        ("pick", |r| {
            let ix = r.random_range(0..6);
            (vec![rand_tensor(r, &[2, 3])], Box::new(move |g, x| g.pick(x[0], ix)))
        }),
    ]
}

/// Every differentiable graph operation, `INSTANCES` random instances each.
pub fn op_suite() -> Vec<CaseResult> {
    op_generators()
        .into_iter()
        .map(|(name, gen)| {
            let mut worst: f64 = 0.0;
            for seed in 0..INSTANCES as u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
                let (inputs, build) = gen(&mut rng);
                worst = worst.max(check_op(inputs, build, &mut rng));
            }
            CaseResult {
                name: name.to_string(),
                instances: INSTANCES,
                max_rel_err: worst,
            }
        })
        .collect()
}

/// Small widths that keep finite differences over every parameter affordable.
pub fn tiny_config(arch: Architecture, task: Task, seed: u64) -> ModelConfig {
    let mut c = ModelConfig::reduced(arch, task);
    c.embedding_dim = 5;
    c.seed = seed;
    if arch.uses_conv() {
        c.filters_per_width = 3;
    }
    if arch.uses_lstm() {
        c.lstm_hidden = 4;
    }
    if arch.uses_chars() {
        c.char_embedding_dim = 3;
        c.char_filters_per_width = 2;
    }
    c
}

fn model_loss(model: &Model, text: &str, target: &Target, dropout_seed: u64) -> (f64, storyclass::graph::Gradients) {
    let batch = model.encode_texts(&[text]);
    let mut g = Graph::new(&model.params);
    let f = model
        .forward(&mut g, batch.example(0), EmbeddingInput::Lookup, Mode::Train { seed: dropout_seed })
        .unwrap();
    let loss = model.loss(&mut g, f.logits, target).unwrap();
    let value = g.value(loss).data()[0];
    let grads = g.backward(loss).unwrap().into_param_grads(&g);
    (value, grads)
}

/// Full-model loss gradients (dropout active with a fixed mask) against central
/// differences over a random sample of entries from every parameter tensor.
pub fn model_case(arch: Architecture, task: Task, instance: u64, entries_per_param: usize) -> f64 {
    let stories = keyword_corpus(12, 50 + instance);
    let cfg = tiny_config(arch, task, instance);
    let mut model = Model::from_training_texts(cfg, stories.iter().map(|s| s.text.as_str())).unwrap();
    let story = &stories[instance as usize % stories.len()];
    let target = match task {
        Task::Single(c) => Target::Class(story.class(c)),
        Task::Multi => Target::Flags(story.labels.flags()),
    };
    // Windows over character padding evaluate to the bias alone; a zero bias would sit
    // exactly on the ReLU kink, where finite differences are one-sided.
    let mut rng = ChaCha8Rng::seed_from_u64(instance);
    let bias_ids: Vec<_> = model.params.iter().filter(|(_, n, _)| n.ends_with("bias")).map(|(id, _, _)| id).collect();
    for id in bias_ids {
        for v in model.params.get_mut(id).data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let seed = 77 + instance;
    let (_, grads) = model_loss(&model, &story.text, &target, seed);
    let ids: Vec<_> = model.params.ids().collect();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for id in ids {
        let len = model.params.get(id).len();
        let dense = grads.get(id).map(|g| g.to_dense(len)).unwrap_or_else(|| vec![0.0; len]);
        let mut picks: Vec<usize> = (0..entries_per_param.min(len)).map(|_| rng.random_range(0..len)).collect();
        // Rows of tokens in the story carry the only nonzero embedding gradients.
        if model.params.name(id) == "embedding" {
            let width = model.params.get(id).cols();
            let batch = model.encode_texts(&[story.text.as_str()]);
            for &w in batch.example(0).words {
                picks.push(w * width + rng.random_range(0..width));
            }
        }
        for k in picks {
            let orig = model.params.get(id).data()[k];
            model.params.get_mut(id).data_mut()[k] = orig + STEP;
            let up = model_loss(&model, &story.text, &target, seed).0;
            model.params.get_mut(id).data_mut()[k] = orig - STEP;
            let down = model_loss(&model, &story.text, &target, seed).0;
            model.params.get_mut(id).data_mut()[k] = orig;
            analytic.push(dense[k]);
            numeric.push((up - down) / (2.0 * STEP));
        }
    }
    max_relative_error(&analytic, &numeric)
}

/// Each architecture at tiny widths, `INSTANCES` instances each.
pub fn model_suite() -> Vec<CaseResult> {
    let cases = [
        (Architecture::Cnn, Task::Single(Category::Commenting)),
        (Architecture::Rnn, Task::Single(Category::Ogling)),
        (Architecture::CnnRnn, Task::Single(Category::Groping)),
        (Architecture::CnnRnnBidirecChar, Task::Multi),
    ];
    cases
        .iter()
        .map(|&(arch, task)| {
            let worst = (0..INSTANCES as u64)
                .map(|i| model_case(arch, task, i, 40))
                .fold(0.0, f64::max);
            CaseResult {
                name: format!("{arch} ({task})"),
                instances: INSTANCES,
                max_rel_err: worst,
            }
        })
        .collect()
}
