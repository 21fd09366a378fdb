use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use storyclass::checkpoint;
use storyclass::data::synthetic::keyword_corpus;
use storyclass::data::{resolve_splits, tokenize, write_dataset, Category, SplitName, SplitSource, Splits, Story, Task};
use storyclass::interpret::{
    choose_k, extract_activations, heatmap_svg, kmeans, lime_explain, saliency_map, seed_word_neighbors,
    summarize_clusters, tsne, Layer, LimeConfig, TsneConfig,
};
use storyclass::models::{predict_multi, Architecture, Model, ModelConfig, TrainedModel};
use storyclass::training;

use crate::args::{ClusterArgs, Cli, DataArgs, EvalArgs, ExplainArgs, Method, ReportArgs, TrainArgs, TsneArgs, TuneArgs};
use crate::error::CliError;
use crate::manifest::{path_hash, Manifest};

type Result<T> = std::result::Result<T, CliError>;

fn write_file(dir: &Path, name: &str, body: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| CliError::io(&path, e))
}

fn json_line(value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string(value).map_err(storyclass::Error::from)?;
    s.push('\n');
    Ok(s)
}

fn parse_task(task: &str, category: Option<&str>) -> Result<Task> {
    match (task, category) {
        ("multi", None) => Ok(Task::Multi),
        ("multi", Some(_)) => Err(CliError::Usage("--category only applies to single-label tasks".into())),
        ("single", Some(c)) => Ok(Task::Single(c.parse()?)),
        ("single", None) => Err(CliError::Usage("--task single needs --category".into())),
        (t, None) if t.starts_with("single:") => Ok(Task::Single(t["single:".len()..].parse()?)),
        (t, _) => Err(CliError::Usage(format!("unknown task {t:?}; use multi, single or single:<category>"))),
    }
}

fn config_overrides(raw: &str) -> Result<Value> {
    let text = if raw.trim_start().starts_with('{') {
        raw.to_string()
    } else {
        let path = Path::new(raw);
        fs::read_to_string(path).map_err(|e| CliError::io(path, e))?
    };
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("--config is not valid JSON: {e}")))
}

fn load_checkpoint(path: &Path, manifest: &mut Manifest) -> Result<TrainedModel> {
    manifest.input("checkpoint", path)?;
    Ok(checkpoint::load(path)?)
}

fn load_splits(data: &DataArgs, seed: u64, manifest: &mut Manifest) -> Result<Splits> {
    manifest.input("data", &data.data)?;
    if let Some(dir) = &data.splits {
        manifest.input("splits", dir)?;
    }
    let (splits, source) = resolve_splits(&data.data, data.splits.as_deref(), seed)?;
    manifest.notes.push(split_note(&source));
    Ok(splits)
}

fn split_note(source: &SplitSource) -> String {
    match source {
        SplitSource::SplitFiles(dir) => format!("splits read from {}", dir.display()),
        SplitSource::IndexFiles(dir) => format!("splits from index files in {}", dir.display()),
        SplitSource::Stratified { seed } => format!("stratified 70/15/15 split with seed {seed}"),
    }
}

fn finish(mut manifest: Manifest, out: &Path, outputs: &[(&str, &str)]) -> Result<()> {
    for (role, name) in outputs {
        manifest.output(role, out, name)?;
    }
    let path = manifest.write(out)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn warn_unused_config(cli: &Cli) {
    if cli.config.is_some() {
        log::warn!("--config only affects train; ignoring it");
    }
}

pub fn train(cli: &Cli, args: &TrainArgs) -> Result<()> {
    let arch: Architecture = args.arch.parse()?;
    let task = parse_task(&args.task, args.category.as_deref())?;
    let mut config = if args.reduced {
        ModelConfig::reduced(arch, task)
    } else {
        ModelConfig::new(arch, task)
    };
    if let Some(raw) = &cli.config {
        config = config.with_overrides(&config_overrides(raw)?)?;
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;

    let mut manifest = Manifest::new("train");
    manifest.seed = Some(config.seed);
    let mut outputs = vec![("checkpoint", "model.ckpt"), ("history", "history.csv")];
    let data: PathBuf = match (args.synthetic, &args.data) {
        (Some(n), _) => {
            let path = cli.out.join("synthetic.csv");
            write_dataset(&path, &keyword_corpus(n, config.seed))?;
            manifest
                .notes
                .push(format!("synthetic keyword corpus of {n} stories (seed {}) used in place of a real dataset", config.seed));
            outputs.push(("data", "synthetic.csv"));
            path
        }
        (None, Some(path)) => path.clone(),
        (None, None) => return Err(CliError::Usage("train needs --data or --synthetic".into())),
    };
    let splits = load_splits(
        &DataArgs {
            data: data.clone(),
            splits: args.splits.clone(),
        },
        config.seed,
        &mut manifest,
    )?;
    if args.synthetic.is_some() {
        manifest.inputs.retain(|r| r.role != "data");
    }
    manifest.config = Some(serde_json::to_value(&config).map_err(storyclass::Error::from)?);
    log::info!(
        "training {} ({}) on {} stories, {} dev",
        config.architecture,
        config.task,
        splits.train.len(),
        splits.dev.len()
    );
    let trained = training::train(config, &splits.train, &splits.dev)?;
    checkpoint::save(cli.out.join("model.ckpt"), &trained)?;
    training::write_history_csv(cli.out.join("history.csv"), &trained.history)?;
    manifest.results = json!({
        "best_epoch": trained.best_epoch,
        "best_dev_metric": trained.best_dev_metric,
        "dev_metric": if matches!(trained.model.task(), Task::Multi) { "hamming_score" } else { "accuracy" },
        "epochs_run": trained.history.len(),
        "split_sizes": { "train": splits.train.len(), "dev": splits.dev.len(), "test": splits.test.len() },
    });
    finish(manifest, &cli.out, &outputs)
}

fn with_threshold(model: &mut Model, threshold: Option<f64>) -> Result<()> {
    if let Some(t) = threshold {
        if !(t > 0.0 && t < 1.0) {
            return Err(CliError::Usage(format!("threshold {t} must lie in (0, 1)")));
        }
        model.config.threshold = t;
    }
    Ok(())
}

pub fn eval(cli: &Cli, args: &EvalArgs) -> Result<()> {
    warn_unused_config(cli);
    let mut manifest = Manifest::new("eval");
    let mut trained = load_checkpoint(&args.checkpoint, &mut manifest)?;
    with_threshold(&mut trained.model, args.threshold)?;
    let seed = trained.model.config.seed;
    manifest.seed = Some(seed);
    let splits = load_splits(&args.data, seed, &mut manifest)?;
    let split: SplitName = args.split.parse()?;
    let report = training::evaluate(&trained.model, splits.get(split))?;
    let line = json_line(&report)?;
    print!("{line}");
    write_file(&cli.out, "eval.json", line.as_bytes())?;
    manifest.results = json!({ "split": split, "primary": report.primary() });
    finish(manifest, &cli.out, &[("report", "eval.json")])
}

#[derive(Serialize)]
struct Confidences {
    commenting: f64,
    ogling: f64,
    groping: f64,
}

#[derive(Serialize)]
struct IncidentReport {
    text: String,
    commenting: bool,
    ogling: bool,
    groping: bool,
    confidence: Confidences,
    threshold: f64,
    model_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    location: Option<String>,
}

fn report_inputs(args: &ReportArgs, manifest: &mut Manifest) -> Result<Vec<(String, Option<String>)>> {
    let Some(path) = &args.input else {
        return Ok(args.text.iter().map(|t| (t.clone(), None)).collect());
    };
    manifest.input("input", path)?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if !is_csv {
        let body = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        return Ok(body.lines().filter(|l| !l.trim().is_empty()).map(|l| (l.to_string(), None)).collect());
    }
    let mut reader = csv::Reader::from_path(path).map_err(storyclass::Error::from)?;
    let headers = reader.headers().map_err(storyclass::Error::from)?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(name));
    let text_col = find("description")
        .ok_or_else(|| CliError::data(format!("{}: missing required column \"description\"", path.display())))?;
    let loc_col = find("location");
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(storyclass::Error::from)?;
        let text = record.get(text_col).unwrap_or("").to_string();
        let location = loc_col.and_then(|c| record.get(c)).filter(|s| !s.trim().is_empty()).map(String::from);
        rows.push((text, location));
    }
    Ok(rows)
}

pub fn report(cli: &Cli, args: &ReportArgs) -> Result<()> {
    warn_unused_config(cli);
    let mut manifest = Manifest::new("report");
    let mut trained = load_checkpoint(&args.checkpoint, &mut manifest)?;
    with_threshold(&mut trained.model, args.threshold)?;
    let model = &trained.model;
    if model.task() != Task::Multi {
        return Err(CliError::Usage("report needs a multi-label checkpoint".into()));
    }
    let inputs = report_inputs(args, &mut manifest)?;
    if inputs.is_empty() {
        return Err(CliError::data("no descriptions to report on"));
    }
    if let Some(i) = inputs.iter().position(|(t, _)| t.trim().is_empty()) {
        return Err(CliError::data(format!("description {} is empty or whitespace-only", i + 1)));
    }
    let model_id = path_hash(&args.checkpoint)?;
    let t = model.config.threshold;
    let texts: Vec<&str> = inputs.iter().map(|(t, _)| t.as_str()).collect();
    let acts = model.activations_multi(&model.encode_texts(&texts))?;
    let mut body = String::new();
    for ((text, location), a) in inputs.iter().zip(&acts) {
        let flags = predict_multi(a, t);
        body.push_str(&json_line(&IncidentReport {
            text: text.clone(),
            commenting: flags[Category::Commenting.index()],
            ogling: flags[Category::Ogling.index()],
            groping: flags[Category::Groping.index()],
            confidence: Confidences {
                commenting: a[Category::Commenting.index()],
                ogling: a[Category::Ogling.index()],
                groping: a[Category::Groping.index()],
            },
            threshold: t,
            model_id: model_id.clone(),
            location: location.clone(),
        })?);
    }
    print!("{body}");
    write_file(&cli.out, "reports.jsonl", body.as_bytes())?;
    manifest.results = json!({ "reports": inputs.len(), "threshold": t });
    finish(manifest, &cli.out, &[("reports", "reports.jsonl")])
}

fn explain_label(model: &Model, label: Option<&str>, outputs: &[f64]) -> Result<usize> {
    let n = outputs.len();
    match label {
        None => Ok((0..n).fold(0, |best, i| if outputs[i] > outputs[best] { i } else { best })),
        Some(raw) => {
            if let Ok(i) = raw.parse::<usize>() {
                if i < n {
                    return Ok(i);
                }
                return Err(CliError::Usage(format!("label {i} out of range for {n} outputs")));
            }
            match model.task() {
                Task::Multi => Ok(raw.parse::<Category>()?.index()),
                Task::Single(_) => Err(CliError::Usage("single-label models take --label 0 or 1".into())),
            }
        }
    }
}

pub fn explain(cli: &Cli, args: &ExplainArgs) -> Result<()> {
    warn_unused_config(cli);
    let mut manifest = Manifest::new("explain");
    let trained = load_checkpoint(&args.checkpoint, &mut manifest)?;
    let model = &trained.model;
    if args.text.trim().is_empty() {
        return Err(CliError::data("cannot explain an empty description"));
    }
    let tokens = tokenize(&args.text);
    let outputs = model.outputs_for_tokens(std::slice::from_ref(&tokens))?.remove(0);
    let label = explain_label(model, args.label.as_deref(), &outputs)?;
    let seed = cli.seed.unwrap_or(model.config.seed);
    manifest.seed = Some(seed);
    let explanation = match args.method {
        Method::Lime => {
            let cfg = LimeConfig {
                n_samples: args.samples,
                k: args.features,
                kernel_width: args.kernel_width,
                seed,
            };
            let mut tokens = tokens;
            tokens.truncate(model.config.max_tokens);
            let predict = |texts: &[Vec<String>]| model.outputs_for_tokens(texts);
            lime_explain(&predict, &tokens, label, &cfg)?
        }
        Method::Saliency => saliency_map(model, &args.text, label)?,
    };
    let name = match args.method {
        Method::Lime => "lime",
        Method::Saliency => "saliency",
    };
    let json_name = format!("explain-{name}.json");
    let svg_name = format!("explain-{name}.svg");
    let line = json_line(&explanation)?;
    print!("{line}");
    write_file(&cli.out, &json_name, line.as_bytes())?;
    write_file(&cli.out, &svg_name, heatmap_svg(&explanation).as_bytes())?;
    manifest.results = json!({ "method": name, "label": label, "tokens": explanation.tokens.len() });
    finish(manifest, &cli.out, &[("explanation", &json_name), ("heatmap", &svg_name)])
}

pub fn cluster(cli: &Cli, args: &ClusterArgs) -> Result<()> {
    warn_unused_config(cli);
    let layer: Layer = args.layer.parse()?;
    let mut manifest = Manifest::new("cluster");
    let trained = load_checkpoint(&args.checkpoint, &mut manifest)?;
    let model = &trained.model;
    let splits = load_splits(&args.data, model.config.seed, &mut manifest)?;
    let stories: Vec<(&str, &Story)> = match args.split.as_str() {
        "all" => [("train", &splits.train), ("dev", &splits.dev), ("test", &splits.test)]
            .into_iter()
            .flat_map(|(n, s)| s.iter().map(move |st| (n, st)))
            .collect(),
        other => {
            let name: SplitName = other.parse()?;
            splits.get(name).iter().map(|s| (other, s)).collect()
        }
    };
    if stories.len() < 2 {
        return Err(CliError::data("need at least two stories to cluster"));
    }
    let seed = cli.seed.unwrap_or(model.config.seed);
    manifest.seed = Some(seed);
    let texts: Vec<String> = stories.iter().map(|(_, s)| s.text.clone()).collect();
    let points = extract_activations(model, &model.encode_texts(&texts), layer)?;
    let selection = match args.k {
        Some(_) => None,
        None => Some(choose_k(&points, 2..=12, seed)?),
    };
    let k = args.k.or(selection.as_ref().map(|s| s.best_k)).expect("k given or chosen");
    let result = kmeans(&points, k, args.max_iter, seed)?;
    let summaries = summarize_clusters(&texts, &points, &result.assignments, &result.centroids)?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "story_id", "split", "cluster"]).map_err(storyclass::Error::from)?;
    for (row, ((split, story), c)) in stories.iter().zip(&result.assignments).enumerate() {
        w.write_record([row.to_string(), story.id.to_string(), split.to_string(), c.to_string()])
            .map_err(storyclass::Error::from)?;
    }
    let csv_bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    write_file(&cli.out, "clusters.csv", &csv_bytes)?;
    let summary = json!({
        "layer": layer.tag(),
        "k": k,
        "silhouette": selection.as_ref().map(|s| &s.scores),
        "inertia": result.inertia,
        "inertia_history": result.inertia_history,
        "iterations": result.iterations,
        "converged": result.converged,
        "clusters": summaries,
    });
    let mut body = serde_json::to_string_pretty(&summary).map_err(storyclass::Error::from)?;
    body.push('\n');
    write_file(&cli.out, "clusters.json", body.as_bytes())?;
    log::info!("clustered {} stories into {k} groups", stories.len());
    manifest.results = json!({ "stories": stories.len(), "k": k, "inertia": result.inertia });
    finish(manifest, &cli.out, &[("assignments", "clusters.csv"), ("summary", "clusters.json")])
}

fn sanitize(word: &str) -> String {
    word.chars().map(|c| if c.is_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

pub fn tsne_cmd(cli: &Cli, args: &TsneArgs) -> Result<()> {
    warn_unused_config(cli);
    let mut manifest = Manifest::new("tsne");
    let trained = load_checkpoint(&args.checkpoint, &mut manifest)?;
    let model = &trained.model;
    let table = model.params.get(model.embedding_param());
    // Ids 0 and 1 are PAD and UNK; the rest are frequency-ranked.
    let available = model.vocab.len().saturating_sub(2);
    let n = args.top.min(available);
    if n < args.top {
        log::warn!("vocabulary holds only {available} words; projecting all of them");
    }
    let words: Vec<String> = (2..2 + n).map(|i| model.vocab.token(i).to_string()).collect();
    let vectors: Vec<Vec<f64>> = (2..2 + n).map(|i| table.row(i).to_vec()).collect();
    let seed = cli.seed.unwrap_or(model.config.seed);
    manifest.seed = Some(seed);
    let cfg = TsneConfig {
        perplexity: args.perplexity,
        iterations: args.iterations,
        seed,
        ..TsneConfig::default()
    };
    // Validate the seeds before the expensive projection.
    let placeholder = vec![[0.0; 2]; n];
    for s in &args.seeds {
        seed_word_neighbors(&words, &vectors, &placeholder, s, args.neighbors)?;
    }
    let projection = tsne(&vectors, &cfg)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["word", "x", "y"]).map_err(storyclass::Error::from)?;
    for (word, p) in words.iter().zip(&projection.embedding) {
        w.write_record([word.clone(), p[0].to_string(), p[1].to_string()])
            .map_err(storyclass::Error::from)?;
    }
    let csv_bytes = w.into_inner().map_err(|e| CliError::data(e.to_string()))?;
    write_file(&cli.out, "tsne.csv", &csv_bytes)?;
    let mut outputs: Vec<(String, String)> = vec![("coordinates".into(), "tsne.csv".into())];
    for s in &args.seeds {
        let nb = seed_word_neighbors(&words, &vectors, &projection.embedding, s, args.neighbors)?;
        let name = format!("neighbors-{}.json", sanitize(s));
        let mut body = serde_json::to_string_pretty(&nb).map_err(storyclass::Error::from)?;
        body.push('\n');
        write_file(&cli.out, &name, body.as_bytes())?;
        outputs.push(("neighbors".into(), name));
    }
    let (first, last) = (projection.kl_history[0], *projection.kl_history.last().expect("non-empty"));
    log::info!("t-SNE KL divergence {:.4} → {:.4}", first.1, last.1);
    manifest.results = json!({ "words": n, "kl_history": projection.kl_history });
    let refs: Vec<(&str, &str)> = outputs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    finish(manifest, &cli.out, &refs)
}

pub fn tune_threshold(cli: &Cli, args: &TuneArgs) -> Result<()> {
    warn_unused_config(cli);
    let mut manifest = Manifest::new("tune-threshold");
    let trained = load_checkpoint(&args.checkpoint, &mut manifest)?;
    let model = &trained.model;
    if model.task() != Task::Multi {
        return Err(CliError::Usage("threshold tuning needs a multi-label checkpoint".into()));
    }
    let grid = if args.grid.is_empty() {
        training::default_threshold_grid()
    } else {
        args.grid.clone()
    };
    if let Some(bad) = grid.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(CliError::Usage(format!("threshold {bad} must lie in (0, 1)")));
    }
    let splits = load_splits(&args.data, model.config.seed, &mut manifest)?;
    let choice = training::tune_threshold(model, &splits.dev, &grid)?;
    let line = json_line(&choice)?;
    print!("{line}");
    write_file(&cli.out, "threshold.json", line.as_bytes())?;
    manifest.results = json!({ "threshold": choice.threshold, "hamming_score": choice.hamming_score });
    finish(manifest, &cli.out, &[("threshold", "threshold.json")])
}

/// Creates the output directory and checks it is writable.
pub fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let probe = dir.join(".write-test");
    fs::File::create(&probe)
        .and_then(|mut f| f.write_all(b""))
        .map_err(|e| CliError::io(dir, e))?;
    fs::remove_file(&probe).map_err(|e| CliError::io(&probe, e))
}
