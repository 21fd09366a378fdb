use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use storyclass::checkpoint;
use storyclass::data::synthetic::keyword_corpus;
use storyclass::data::{stratified_split, Category, LabelSet, Task};
use storyclass::models::{Architecture, ModelConfig};
use storyclass::training::{self, evaluate_multi, Trainer};
use storyclass_testkit::brute_force_multilabel;

fn small(arch: Architecture, task: Task) -> ModelConfig {
    let mut cfg = ModelConfig::reduced(arch, task);
    cfg.embedding_dim = 16;
    cfg.filters_per_width = 8;
    cfg.lstm_hidden = 12;
    cfg.char_embedding_dim = 6;
    cfg.char_filters_per_width = 4;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 16;
    cfg
}

#[test]
fn multilabel_metrics_match_bitwise_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        let gold: Vec<[bool; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let pred: Vec<[bool; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let y: Vec<LabelSet> = gold.iter().map(|f| LabelSet::from_flags(*f)).collect();
        let z: Vec<LabelSet> = pred.iter().map(|f| LabelSet::from_flags(*f)).collect();
        let m = evaluate_multi(&z, &y).unwrap();
        let (exact, hamming) = brute_force_multilabel(&gold, &pred);
        assert!((m.exact_match - exact).abs() < 1e-12);
        assert!((m.hamming_score - hamming).abs() < 1e-12);
    }
}

#[test]
fn small_cnn_fits_keyword_stories() {
    let stories = keyword_corpus(160, 5);
    let splits = stratified_split(&stories, 5);
    let mut cfg = small(Architecture::Cnn, Task::Single(Category::Groping));
    cfg.max_epochs = 15;
    let trained = training::train(cfg, &splits.train, &splits.dev).unwrap();
    assert!(trained.best_dev_metric >= 0.9, "dev accuracy {}", trained.best_dev_metric);
    let acc = training::evaluate_single(&trained.model, &splits.train).unwrap();
    assert!(acc >= 0.95, "train accuracy {acc}");
}

#[test]
fn first_epoch_lowers_batch_loss() {
    let stories = keyword_corpus(128, 2);
    let mut t = Trainer::new(small(Architecture::Rnn, Task::Multi), &stories).unwrap();
    let stats = t.run_epoch().unwrap();
    let k = stats.batch_losses.len();
    assert!(k >= 4);
    let head: f64 = stats.batch_losses[..2].iter().sum();
    let tail: f64 = stats.batch_losses[k - 2..].iter().sum();
    assert!(tail < head, "{:?}", stats.batch_losses);
    assert!(stats.grad_norms.iter().all(|g| g.is_finite()));
}

#[test]
fn training_is_bitwise_reproducible() {
    let stories = keyword_corpus(48, 8);
    let splits = stratified_split(&stories, 8);
    let mut cfg = small(Architecture::CnnRnnBidirecChar, Task::Multi);
    cfg.max_epochs = 2;
    let a = training::train(cfg.clone(), &splits.train, &splits.dev).unwrap();
    let b = training::train(cfg, &splits.train, &splits.dev).unwrap();
    assert_eq!(checkpoint::to_bytes(&a).unwrap(), checkpoint::to_bytes(&b).unwrap());
}

#[test]
fn reloaded_checkpoint_reproduces_dev_metric() {
    let stories = keyword_corpus(96, 4);
    let splits = stratified_split(&stories, 4);
    let mut cfg = small(Architecture::CnnRnn, Task::Multi);
    cfg.max_epochs = 3;
    let trained = training::train(cfg, &splits.train, &splits.dev).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&path, &trained).unwrap();
    let back = checkpoint::load(&path).unwrap();
    let report = training::evaluate(&back.model, &splits.dev).unwrap();
    assert_eq!(report.primary(), trained.best_dev_metric);
    assert_eq!(back.history, trained.history);
}

#[test]
fn threshold_tuning_scans_the_grid() {
    let stories = keyword_corpus(64, 6);
    let mut cfg = small(Architecture::Cnn, Task::Multi);
    cfg.max_epochs = 4;
    let trained = training::train(cfg, &stories, &stories).unwrap();
    let grid = training::default_threshold_grid();
    let choice = training::tune_threshold(&trained.model, &stories, &grid).unwrap();
    assert_eq!(choice.grid.len(), grid.len());
    let best = choice.grid.iter().map(|(_, h)| *h).fold(f64::MIN, f64::max);
    assert_eq!(choice.hamming_score, best);
    assert!(grid.contains(&choice.threshold));
}
