use std::collections::hash_map::DefaultHasher;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::time::Instant;

use lri_core::invariants::{enumerate_nonzero_triples, triple_count};
use lri_core::kernels::{init_weights, radial_count_for};
use lri_core::layer::{gradient_check, InvariantKind, LayerConfig, LriLayer};
use lri_core::network::{
    build_model, confidence_interval, evaluate, train as train_model, write_metrics_csv, CachedDataset, FeatureCache,
    FeatureExtractor, Model, ModelConfig, ModelKind, TrainConfig,
};
use lri_core::synth::{generate_dataset, summarize, GenConfig, Manifest, Split, ToyExperiment, ToyPipeline, ToySpec};
use lri_core::volume::Volume3D;
use lri_core::{LriError, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::run::{run_json_beside, RunRecord};
use crate::{
    CurveArgs, EvalArgs, GenArgs, GradcheckArgs, ModelArgs, OptimArgs, SplitArg, SweepArgs, TableArg, TablesArgs,
    ToyArgs, TrainArgs,
};

pub struct Context {
    pub jobs: usize,
    pub run_json: Option<PathBuf>,
}

impl Context {
    fn finish(&self, record: RunRecord, default: PathBuf) -> Result<()> {
        record.write(self.run_json.as_deref().unwrap_or(&default))
    }
}

/// Reference feature counts `(N, spectrum, bispectrum)`.
pub const REFERENCE_COUNTS: [(usize, usize, usize); 8] = [
    (0, 1, 1),
    (1, 2, 2),
    (2, 3, 5),
    (4, 5, 14),
    (6, 7, 30),
    (8, 9, 55),
    (10, 11, 91),
    (100, 101, 48127),
];

fn model_config(args: &ModelArgs) -> Result<ModelConfig> {
    let kind: ModelKind = args.model.parse()?;
    let mut cfg = ModelConfig::new(kind);
    cfg.max_degree = if kind == ModelKind::Z3 { 0 } else { args.degree };
    cfg.streams = args.filters;
    cfg.kernel_size = args.kernel_size;
    cfg.stride = args.stride;
    cfg.padding = args.padding.into();
    cfg.prune_zero = args.prune_zero;
    cfg.validate()?;
    Ok(cfg)
}

fn train_config(args: &OptimArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations: args.iters,
        batch_size: args.batch_size,
        lr: args.lr,
        beta1: args.beta1,
        beta2: args.beta2,
        eps: 1e-8,
        seed,
        eval_every: args.eval_every,
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(|e| LriError::io(d, e)),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, text).map_err(|e| LriError::io(path, e))
}

pub fn gen(ctx: &Context, args: GenArgs) -> Result<()> {
    let cfg = GenConfig {
        volume_size: args.volume_size,
        density_range: (args.density_min, args.density_max),
        per_class: args.n_per_class,
        seed: args.seed,
        ..GenConfig::default()
    };
    let start = Instant::now();
    let manifest = generate_dataset(&cfg, &args.out)?;
    let n_train = manifest.indices(Split::Train).len();
    println!(
        "generated {} volumes ({} train, {} test) of shape {:?} in {} [{:.1} s]",
        manifest.samples.len(),
        n_train,
        manifest.samples.len() - n_train,
        manifest.shape,
        args.out.display(),
        start.elapsed().as_secs_f64()
    );
    let mut record = RunRecord::new("gen", ctx.jobs, json!({ "args": &args, "generator": cfg }));
    record.outputs.push(args.out.join(lri_core::synth::patterns::MANIFEST_FILE));
    record.results = json!({ "samples": manifest.samples.len(), "train": n_train });
    ctx.finish(record, args.out.join("run.json"))
}

pub fn toy(ctx: &Context, args: ToyArgs) -> Result<()> {
    let mut spec = ToySpec::new(ToyExperiment::from_id(args.experiment)?, args.noise, args.seed);
    spec.instances_per_class = args.instances;
    spec.profile.rho0 = args.rho0;
    let result = ToyPipeline::new(spec.clone())?.run()?;
    result.write_csv(&args.out)?;
    let summary = summarize(&result);
    println!(
        "toy experiment {}: {} instances, noise {}",
        args.experiment,
        result.instances.len(),
        args.noise
    );
    for (n, acc) in summary.spectrum_accuracy.iter().enumerate() {
        println!("  spectrum n={n}: held-out threshold accuracy {acc:.3}");
    }
    println!(
        "  bispectrum {}: held-out pair accuracy {:.3}",
        summary.separating_triples.join(" + "),
        summary.bispectrum_pair_accuracy
    );
    let mut record = RunRecord::new("toy", ctx.jobs, json!({ "args": &args, "spec": spec }));
    record.outputs.push(args.out.clone());
    record.results = serde_json::to_value(&summary).expect("summary serializes");
    ctx.finish(record, run_json_beside(&args.out))
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    key: String,
    features: Vec<FeatureCache>,
}

/// Everything the cached features depend on: the dataset and the layer
/// geometry, not the stream count.
fn cache_key(manifest: &Manifest, cfg: &ModelConfig) -> String {
    let mut h = DefaultHasher::new();
    serde_json::to_string(manifest).expect("manifest serializes").hash(&mut h);
    format!(
        "{}{}-n{}-c{}-s{}-{}-{:016x}",
        cfg.kind,
        if cfg.prune_zero { "-pruned" } else { "" },
        cfg.max_degree,
        cfg.kernel_size,
        cfg.stride,
        serde_json::to_value(cfg.padding).expect("padding serializes").as_str().unwrap_or("pad"),
        h.finish()
    )
}

/// Feature caches of every sample in `manifest`, reusing `cache_dir` when
/// given.
pub fn dataset_features(data: &Path, manifest: &Manifest, cfg: &ModelConfig, cache_dir: Option<&Path>) -> Result<Vec<FeatureCache>> {
    let key = cache_key(manifest, cfg);
    let path = cache_dir.map(|d| d.join(format!("features-{key}.json")));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        let text = std::fs::read_to_string(p).map_err(|e| LriError::io(p, e))?;
        let file: CacheFile = serde_json::from_str(&text).map_err(|e| LriError::Format {
            path: p.clone(),
            message: e.to_string(),
        })?;
        if file.key == key && file.features.len() == manifest.samples.len() {
            eprintln!("loaded features from {}", p.display());
            return Ok(file.features);
        }
    }
    let start = Instant::now();
    let extractor = FeatureExtractor::new(cfg)?;
    let features = extractor.extract_all(manifest.samples.len(), |i| manifest.load_volume(data, i))?;
    eprintln!(
        "extracted {} {} feature caches [{:.1} s]",
        features.len(),
        cfg.kind,
        start.elapsed().as_secs_f64()
    );
    if let Some(p) = path {
        let text = serde_json::to_string(&CacheFile { key, features }).map_err(|e| LriError::Numerical(e.to_string()))?;
        write_text(&p, &text)?;
        let file: CacheFile = serde_json::from_str(&text).expect("cache round-trips");
        return Ok(file.features);
    }
    Ok(features)
}

/// A class-balanced subset of `indices` of the given size. Without a seed the
/// first samples of each class are taken.
pub fn balanced_subset(indices: &[usize], labels: &[usize], size: usize, seed: Option<u64>) -> Result<Vec<usize>> {
    if size > indices.len() {
        return Err(LriError::Config(format!("requested {size} samples, only {} available", indices.len())));
    }
    let classes = indices.iter().map(|&i| labels[i] + 1).max().unwrap_or(0);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for &i in indices {
        per_class[labels[i]].push(i);
    }
    if let Some(s) = seed {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        per_class.iter_mut().for_each(|v| v.shuffle(&mut rng));
    }
    let mut out = Vec::with_capacity(size);
    let mut round = 0;
    while out.len() < size {
        for v in &per_class {
            if out.len() < size && round < v.len() {
                out.push(v[round]);
            }
        }
        round += 1;
    }
    out.sort_unstable();
    Ok(out)
}

struct Prepared {
    cfg: ModelConfig,
    train: CachedDataset,
    test: CachedDataset,
}

fn prepare(data: &Path, model: &ModelArgs, train_limit: Option<usize>, cache_dir: Option<&Path>) -> Result<Prepared> {
    let cfg = model_config(model)?;
    let manifest = Manifest::load(data)?;
    let features = dataset_features(data, &manifest, &cfg, cache_dir)?;
    let all = CachedDataset::new(features, manifest.labels())?;
    let labels = manifest.labels();
    let mut train_idx = manifest.indices(Split::Train);
    if let Some(limit) = train_limit {
        train_idx = balanced_subset(&train_idx, &labels, limit, None)?;
    }
    Ok(Prepared {
        cfg,
        train: all.subset(&train_idx),
        test: all.subset(&manifest.indices(Split::Test)),
    })
}

fn fit(cfg: ModelConfig, seed: u64, train: &CachedDataset, test: &CachedDataset, optim: &OptimArgs) -> Result<(Model, Vec<lri_core::network::MetricsRow>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = build_model(cfg, seed, &mut rng)?;
    let rows = train_model(&mut model, train, test, &train_config(optim, seed))?;
    Ok((model, rows))
}

pub fn train(ctx: &Context, args: TrainArgs) -> Result<()> {
    let p = prepare(&args.data, &args.model, args.train_limit, args.cache_dir.as_deref())?;
    println!("model {} with {} parameters", p.cfg.kind, p.cfg.parameter_count());
    let start = Instant::now();
    let (model, rows) = fit(p.cfg, args.seed, &p.train, &p.test, &args.optim)?;
    create_parent(&args.out)?;
    model.save(&args.out)?;
    create_parent(&args.metrics)?;
    write_metrics_csv(&args.metrics, &rows)?;
    let last = rows.last().copied().ok_or_else(|| LriError::Numerical("no metrics recorded".into()))?;
    println!(
        "iteration {}: loss {:.4}, train accuracy {:.4}, test accuracy {:.4} [{:.1} s]",
        last.iteration,
        last.loss,
        last.train_accuracy,
        last.test_accuracy,
        start.elapsed().as_secs_f64()
    );
    let mut record = RunRecord::new(
        "train",
        ctx.jobs,
        json!({ "args": &args, "model": p.cfg, "train": train_config(&args.optim, args.seed), "train_samples": p.train.len() }),
    );
    record.outputs = vec![args.out.clone(), args.metrics.clone()];
    record.results = json!({
        "parameters": p.cfg.parameter_count(),
        "train_accuracy": last.train_accuracy,
        "test_accuracy": last.test_accuracy,
    });
    ctx.finish(record, run_json_beside(&args.out))
}

pub fn eval(ctx: &Context, args: EvalArgs) -> Result<()> {
    let model = Model::load(&args.model_file)?;
    let manifest = Manifest::load(&args.data)?;
    let indices = match args.split {
        SplitArg::Train => manifest.indices(Split::Train),
        SplitArg::Test => manifest.indices(Split::Test),
        SplitArg::All => (0..manifest.samples.len()).collect(),
    };
    let extractor = FeatureExtractor::new(model.config())?;
    let features = extractor.extract_all(indices.len(), |k| manifest.load_volume(&args.data, indices[k]))?;
    let labels: Vec<usize> = indices.iter().map(|&i| manifest.samples[i].class).collect();
    let data = CachedDataset::new(features, labels)?;
    let acc = evaluate(&model, &data)?;
    let split = serde_json::to_value(args.split).expect("split serializes");
    let split = split.as_str().unwrap_or("split");
    println!(
        "accuracy {split} {acc:.4} ({}/{})",
        (acc * data.len() as f64).round() as usize,
        data.len()
    );
    let mut record = RunRecord::new("eval", ctx.jobs, json!({ "args": &args }));
    record.results = json!({ "accuracy": acc, "samples": data.len() });
    ctx.finish(record, PathBuf::from("run.json"))
}

fn mean_ci_line(values: &[f64]) -> Result<String> {
    let (mean, half) = confidence_interval(values)?;
    Ok(format!("{mean:.4} ± {half:.4} (95% CI, {} seeds)", values.len()))
}

pub fn sweep(ctx: &Context, args: SweepArgs) -> Result<()> {
    if args.seeds.is_empty() {
        return Err(LriError::Config("at least one seed is required".into()));
    }
    let p = prepare(&args.data, &args.model, args.train_limit, args.cache_dir.as_deref())?;
    println!("model {} with {} parameters, {} training samples", p.cfg.kind, p.cfg.parameter_count(), p.train.len());
    std::fs::create_dir_all(&args.out).map_err(|e| LriError::io(&args.out, e))?;
    let mut summary = String::from("seed,train_accuracy,test_accuracy\n");
    let mut accs = Vec::new();
    let mut outputs = Vec::new();
    for &seed in &args.seeds {
        let start = Instant::now();
        let (model, rows) = fit(p.cfg, seed, &p.train, &p.test, &args.optim)?;
        let last = *rows.last().expect("training records a final row");
        let metrics = args.out.join(format!("metrics_seed{seed}.csv"));
        write_metrics_csv(&metrics, &rows)?;
        let model_path = args.out.join(format!("model_seed{seed}.json"));
        model.save(&model_path)?;
        outputs.extend([metrics, model_path]);
        println!(
            "seed {seed}: train accuracy {:.4}, test accuracy {:.4} [{:.1} s]",
            last.train_accuracy,
            last.test_accuracy,
            start.elapsed().as_secs_f64()
        );
        writeln!(summary, "{seed},{},{}", last.train_accuracy, last.test_accuracy).expect("string write");
        accs.push(last.test_accuracy);
    }
    let line = mean_ci_line(&accs)?;
    println!("test accuracy {line}");
    let summary_path = args.out.join("summary.csv");
    write_text(&summary_path, &summary)?;
    outputs.push(summary_path);
    let (mean, half) = confidence_interval(&accs)?;
    let mut record = RunRecord::new(
        "sweep",
        ctx.jobs,
        json!({ "args": &args, "model": p.cfg, "train_samples": p.train.len() }),
    );
    record.outputs = outputs;
    record.results = json!({ "test_accuracy": accs, "mean": mean, "ci95": half });
    ctx.finish(record, args.out.join("run.json"))
}

pub fn learning_curve(ctx: &Context, args: CurveArgs) -> Result<()> {
    if args.seeds.is_empty() || args.sizes.is_empty() {
        return Err(LriError::Config("sizes and seeds must be non-empty".into()));
    }
    let p = prepare(&args.data, &args.model, None, args.cache_dir.as_deref())?;
    let mut csv = String::from("size,seed,test_accuracy\n");
    let mut means = Vec::new();
    for &size in &args.sizes {
        let mut accs = Vec::new();
        for &seed in &args.seeds {
            let all: Vec<usize> = (0..p.train.len()).collect();
            let idx = balanced_subset(&all, &p.train.labels, size, Some(seed))?;
            let (model, _) = fit(p.cfg, seed, &p.train.subset(&idx), &CachedDataset::default(), &args.optim)?;
            let acc = evaluate(&model, &p.test)?;
            writeln!(csv, "{size},{seed},{acc}").expect("string write");
            accs.push(acc);
        }
        let (mean, half) = confidence_interval(&accs)?;
        println!("N_s = {size}: test accuracy {}", mean_ci_line(&accs)?);
        means.push(json!({ "size": size, "mean": mean, "ci95": half, "test_accuracy": accs }));
    }
    write_text(&args.out, &csv)?;
    let mut record = RunRecord::new("learning-curve", ctx.jobs, json!({ "args": &args, "model": p.cfg }));
    record.outputs.push(args.out.clone());
    record.results = json!(means);
    ctx.finish(record, run_json_beside(&args.out))
}

/// Rows of the feature-count table as printed text.
pub fn feature_count_table(prune_zero: bool) -> String {
    let mut out = String::from("N,spectrum,bispectrum,reference_spectrum,reference_bispectrum,match\n");
    let count = |n: usize| if prune_zero { enumerate_nonzero_triples(n).len() } else { triple_count(n) };
    for (n, ps, pb) in REFERENCE_COUNTS {
        let (s, b) = (n + 1, count(n));
        let ok = if s == ps && b == pb { "yes" } else { "no" };
        writeln!(out, "{n},{s},{b},{ps},{pb},{ok}").expect("string write");
    }
    let b100 = count(100);
    if prune_zero {
        writeln!(out, "note: identically vanishing (n, n, odd l) triples are excluded from the bispectrum column")
            .expect("string write");
    }
    writeln!(
        out,
        "note: at N=100 the enumeration rule gives {b100} bispectrum maps against the reference value 48127; \
         the rule matches every reference row for N <= 10 and the N=100 entry is left as an open question \
         (see README, \"Open questions\")"
    )
    .expect("string write");
    out
}

fn parameter_table() -> Result<String> {
    let mut out = String::from("model,N,Q,c,parameters\n");
    for (kind, n, q, c) in [
        (ModelKind::Z3, 0, 10, 9),
        (ModelKind::Z3, 0, 10, 7),
        (ModelKind::Sse, 4, 4, 9),
        (ModelKind::Ssb, 4, 4, 9),
        (ModelKind::Ssb, 2, 2, 7),
        (ModelKind::Sse, 2, 2, 7),
    ] {
        let cfg = ModelConfig {
            max_degree: n,
            streams: q,
            kernel_size: c,
            ..ModelConfig::new(kind)
        };
        cfg.validate()?;
        writeln!(out, "{kind},{n},{q},{c},{}", cfg.parameter_count()).expect("string write");
    }
    Ok(out)
}

pub fn tables(ctx: &Context, args: TablesArgs) -> Result<()> {
    let text = match args.which {
        TableArg::FeatureCounts => feature_count_table(args.prune_zero),
        TableArg::Parameters => parameter_table()?,
    };
    print!("{text}");
    let mut record = RunRecord::new("tables", ctx.jobs, json!({ "args": &args }));
    record.results = json!(text);
    ctx.finish(record, PathBuf::from("run.json"))
}

pub fn gradcheck(ctx: &Context, args: GradcheckArgs) -> Result<()> {
    let cfg = model_config(&args.model)?;
    let kind = match cfg.kind {
        ModelKind::Sse => InvariantKind::Spectrum,
        ModelKind::Ssb => InvariantKind::Bispectrum(cfg.triples()),
        ModelKind::Z3 => return Err(LriError::Config("gradcheck applies to sse and ssb layers".into())),
    };
    let layer_cfg = LayerConfig {
        kernel_size: cfg.kernel_size,
        stride: cfg.stride,
        padding: cfg.padding,
        max_degree: cfg.max_degree,
    };
    let radial = radial_count_for(cfg.kernel_size);
    let layer = LriLayer::new(layer_cfg, kind, radial)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let s = args.size;
    let vol = Volume3D::from_fn([s, s, s], |_| rng.gen_range(-1.0..1.0));
    let bank = init_weights(&mut rng, cfg.streams, cfg.max_degree, radial);
    let upstream: Vec<f64> = (0..cfg.streams * layer.channels_per_stream())
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let start = Instant::now();
    let report = gradient_check(&layer, &vol, &bank, &upstream, args.step)?;
    println!(
        "gradcheck {} N={} Q={} c={} on {s}^3: {} weights, max relative error {:.3e} \
         (weight {}: analytic {:.6e}, finite difference {:.6e}) [{:.1} s]",
        cfg.kind,
        cfg.max_degree,
        cfg.streams,
        cfg.kernel_size,
        report.weights,
        report.max_rel_error,
        report.worst_index,
        report.analytic,
        report.numeric,
        start.elapsed().as_secs_f64()
    );
    let mut record = RunRecord::new("gradcheck", ctx.jobs, json!({ "args": &args, "model": cfg }));
    record.results = json!({ "max_rel_error": report.max_rel_error, "weights": report.weights });
    ctx.finish(record, PathBuf::from("run.json"))
}
