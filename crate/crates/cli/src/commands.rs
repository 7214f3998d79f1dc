use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};

use ycd_core::data::{
    generate_synthetic_dataset, preprocess_rgb, render_sample, scan_dataset, split_manifest, DatasetManifest,
    Split, SplitPolicy, SynthConfig,
};
use ycd_core::model::{build_arch, forward, load_bundle, save_bundle, ArchSpec, LayerKind, LayerSpec, ModelBundle};
use ycd_core::nnops::{count_costs, CostReport};
use ycd_core::train::{
    evaluate_embeddings, extract_embeddings, train_head, write_metrics_csv, EmbeddingSet, TrainConfig,
};
use ycd_serve::{classify_bytes, ServiceConfig};

use crate::stats::{LatencyStats, WARMUP_ITERATIONS};
use crate::{
    usage, ArchArgs, BenchArgs, ClassifyArgs, EvalArgs, InfoArgs, ScanArgs, ServeArgs, Source, SplitArgs,
    SplitChoice, SplitCmdArgs, SynthArgs, TrainArgs,
};

/// Refuses to replace an existing file unless `force` is set.
fn check_writable(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(anyhow!("{} already exists; pass --force to overwrite", path.display()));
    }
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    create_parent(path)?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        return Err(usage(format!("data root {} is not a directory", path.display())));
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    Ok(())
}

impl SplitArgs {
    fn policy(&self) -> Result<SplitPolicy> {
        let policy = match (self.test_count, self.test_fraction) {
            (Some(t), _) => SplitPolicy::TestCount(t),
            (None, Some(f)) => SplitPolicy::Fraction(f),
            (None, None) => SplitPolicy::Standard,
        };
        policy.validate().map_err(|e| usage(e.to_string()))?;
        Ok(policy)
    }
}

impl ArchArgs {
    fn build(&self) -> Result<ArchSpec> {
        build_arch(self.alpha, self.rho, self.resolution).map_err(|e| usage(e.to_string()))
    }
}

fn scan(source: &Source) -> Result<DatasetManifest> {
    match (&source.data, &source.manifest) {
        (Some(root), _) => {
            require_dir(root)?;
            Ok(scan_dataset(root)?)
        }
        (None, Some(path)) => {
            require_file(path, "manifest")?;
            Ok(DatasetManifest::load(path)?)
        }
        (None, None) => Err(usage("one of --data or --manifest is required")),
    }
}

/// The dataset with every entry assigned to a split. A manifest that already carries a
/// split is used as is; otherwise the policy and seed decide.
fn split_source(source: &Source, split: &SplitArgs, seed: u64) -> Result<DatasetManifest> {
    let policy = split.policy()?;
    let manifest = scan(source)?;
    if manifest.entries.iter().all(|e| e.split.is_some()) && !manifest.entries.is_empty() {
        return Ok(manifest);
    }
    Ok(split_manifest(&manifest, policy, seed)?)
}

fn print_counts(manifest: &DatasetManifest) {
    println!("{:<12} {:>6} {:>6} {:>6}", "CLASS", "TRAIN", "TEST", "TOTAL");
    for (label, train, test) in manifest.split_counts() {
        println!("{label:<12} {train:>6} {test:>6} {:>6}", train + test);
    }
}

pub fn dataset_scan(a: ScanArgs) -> Result<()> {
    require_dir(&a.data)?;
    if let Some(out) = &a.out {
        check_writable(out, a.force)?;
    }
    let manifest = scan_dataset(&a.data)?;
    println!("{:<12} {:>6}", "CLASS", "IMAGES");
    for class in &manifest.classes {
        let n = manifest.entries.iter().filter(|e| &e.label == class).count();
        println!("{class:<12} {n:>6}");
    }
    println!("{} classes, {} images", manifest.classes.len(), manifest.entries.len());
    if let Some(out) = &a.out {
        write_file(out, manifest.to_json().as_bytes())?;
        println!("manifest written to {}", out.display());
    }
    Ok(())
}

pub fn dataset_split(a: SplitCmdArgs) -> Result<()> {
    let policy = a.split.policy()?;
    if let Some(out) = &a.out {
        check_writable(out, a.force)?;
    }
    let manifest = split_manifest(&scan(&a.source)?, policy, a.seed)?;
    print_counts(&manifest);
    if let Some(out) = &a.out {
        write_file(out, manifest.to_json().as_bytes())?;
        println!("manifest written to {}", out.display());
    }
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let occupied = fs::read_dir(&a.out).map(|mut d| d.next().is_some()).unwrap_or(false);
    if occupied && !a.force {
        return Err(anyhow!(
            "{} is not empty; pass --force to overwrite",
            a.out.display()
        ));
    }
    let cfg = SynthConfig {
        classes: a.classes,
        per_class: a.per_class,
        resolution: a.resolution,
        seed: a.seed,
    };
    let start = Instant::now();
    let summary = generate_synthetic_dataset(&a.out, &cfg).map_err(|e| match e {
        ycd_core::data::DataError::InvalidSynth(msg) => usage(msg),
        other => other.into(),
    })?;
    println!(
        "wrote {} images for classes [{}] to {} in {:.1}s",
        summary.files.len(),
        summary.labels.join(", "),
        a.out.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

fn report_failures(set: &EmbeddingSet) {
    for f in &set.failures {
        eprintln!("warning: skipped {}: {}", f.path.display(), f.message);
    }
}

pub fn train(a: TrainArgs) -> Result<()> {
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        momentum: a.momentum,
        shuffle_seed: a.seed,
        standardize: !a.no_standardize,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let arch = a.arch.build()?;
    let metrics_path = a.metrics.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    if metrics_path == a.out {
        return Err(usage("bundle and metrics paths must differ"));
    }
    check_writable(&a.out, a.force)?;
    check_writable(&metrics_path, a.force)?;

    let start = Instant::now();
    let manifest = split_source(&a.source, &a.split, a.seed)?;
    print_counts(&manifest);
    let bundle = ModelBundle::initialize(manifest.classes.clone(), arch, a.seed)?;
    println!(
        "backbone: alpha={} input={}px embedding_dim={}",
        a.arch.alpha,
        bundle.arch().effective_resolution(),
        bundle.arch().embedding_dim
    );

    let train_set = extract_embeddings(&bundle, &manifest, Some(Split::Train))?;
    report_failures(&train_set);
    let test_set = extract_embeddings(&bundle, &manifest, Some(Split::Test))?;
    report_failures(&test_set);
    let test = (!test_set.is_empty()).then_some(&test_set);
    println!(
        "embedded {} train / {} test images in {:.1}s",
        train_set.len(),
        test_set.len(),
        start.elapsed().as_secs_f64()
    );

    let outcome = train_head(&train_set, manifest.classes.len(), &cfg, test)?;
    for m in &outcome.metrics {
        let test_acc = m.test_accuracy.map(|t| format!("{t:.4}")).unwrap_or_else(|| "-".into());
        println!(
            "epoch {:>3}/{} loss {:.6} train_acc {:.4} test_acc {test_acc}",
            m.epoch, cfg.epochs, m.loss, m.train_accuracy
        );
    }

    let trained = bundle.with_head(outcome.head)?;
    create_parent(&a.out)?;
    save_bundle(&trained, &a.out)?;
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &outcome.metrics)?;
    write_file(&metrics_path, &csv)?;

    if let Some(test) = test {
        let report = evaluate_embeddings(trained.head(), test, trained.labels())?;
        print!("{}", report.to_table());
    }
    println!(
        "bundle written to {}, metrics to {} ({:.1}s total)",
        a.out.display(),
        metrics_path.display(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    require_file(&a.bundle, "bundle")?;
    if let Some(out) = &a.report {
        check_writable(out, a.force)?;
    }
    let bundle = load_bundle(&a.bundle)?;
    let manifest = split_source(&a.source, &a.split, a.seed)?;
    let split = match a.on {
        SplitChoice::Train => Some(Split::Train),
        SplitChoice::Test => Some(Split::Test),
        SplitChoice::All => None,
    };
    let set = extract_embeddings(&bundle, &manifest, split)?;
    report_failures(&set);
    let report = evaluate_embeddings(bundle.head(), &set, bundle.labels())?;
    print!("{}", report.to_table());
    if let Some(out) = &a.report {
        write_file(out, serde_json::to_string_pretty(&report)?.as_bytes())?;
        println!("report written to {}", out.display());
    }
    Ok(())
}

pub fn classify(a: ClassifyArgs) -> Result<()> {
    require_file(&a.bundle, "bundle")?;
    if a.top_k == Some(0) {
        return Err(usage("--top-k must be at least 1"));
    }
    let bundle = load_bundle(&a.bundle)?;
    for path in &a.images {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let preds = classify_bytes(&bundle, &bytes, a.top_k)
            .map_err(|e| anyhow!("{}: {}", path.display(), e.message))?;
        let listed: Vec<String> = preds
            .iter()
            .map(|p| format!("{}={:.4}", p.label, p.probability))
            .collect();
        println!("{}\t{}", path.display(), listed.join(" "));
    }
    Ok(())
}

fn stride_of(layer: &LayerSpec) -> Option<usize> {
    match layer {
        LayerSpec::StandardConv(p) | LayerSpec::DepthwiseConv(p) | LayerSpec::PointwiseConv(p) => Some(p.stride),
        _ => None,
    }
}

fn print_costs(arch: &ArchSpec, costs: &CostReport) {
    println!(
        "{:>3} {:<14} {:>6} {:>5} {:>8} {:>14} {:>10}",
        "#", "LAYER", "STRIDE", "OUT", "CHANNELS", "MACS", "PARAMS"
    );
    for (layer, c) in arch.layers.iter().zip(&costs.layers) {
        let stride = stride_of(layer).map(|s| s.to_string()).unwrap_or_else(|| "-".into());
        println!(
            "{:>3} {:<14} {:>6} {:>5} {:>8} {:>14} {:>10}",
            c.index,
            c.kind.to_string(),
            stride,
            c.output_side,
            c.output_channels,
            c.macs,
            c.params
        );
    }
    println!("total MACs:   {}", costs.total_macs);
    println!("total params: {}", costs.total_params);
}

pub fn info(a: InfoArgs) -> Result<()> {
    let (base, classes) = match &a.bundle {
        Some(path) => {
            require_file(path, "bundle")?;
            let b = load_bundle(path)?;
            let k = b.labels().len();
            println!("bundle: {} (labels: {})", path.display(), b.labels().join(", "));
            (b.arch().clone(), k)
        }
        None => (a.arch.build()?, a.classes),
    };
    if classes == 0 {
        return Err(usage("--classes must be at least 1"));
    }
    let arch = base.with_head(classes);
    let costs = count_costs(&arch, arch.effective_resolution());
    println!(
        "alpha={} input={}px conv_layers={} embedding_dim={} classes={classes}",
        arch.width_multiplier,
        arch.effective_resolution(),
        arch.conv_layer_count(),
        arch.embedding_dim
    );
    print_costs(&arch, &costs);

    if let Some(alpha) = a.compare_alpha {
        let other = build_arch(alpha, arch.resolution_multiplier, arch.input_resolution)
            .map_err(|e| usage(e.to_string()))?
            .with_head(classes);
        let oc = count_costs(&other, other.effective_resolution());
        let pw = |c: &CostReport| c.macs_of(LayerKind::PointwiseConv);
        println!(
            "alpha={alpha}: pointwise MACs {} ({}x), total MACs {} ({:.4}x), params {} ({:.4}x)",
            pw(&oc),
            pw(&oc) as f64 / pw(&costs) as f64,
            oc.total_macs,
            oc.total_macs as f64 / costs.total_macs as f64,
            oc.total_params,
            oc.total_params as f64 / costs.total_params as f64
        );
    }
    Ok(())
}

pub fn serve(a: ServeArgs) -> Result<()> {
    let cfg = ServiceConfig {
        addr: a.addr,
        model_path: a.model,
        top_k: a.top_k,
        max_body_bytes: a.max_body_bytes,
        allowed_origins: a.allow_origins,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if let Some(p) = &cfg.model_path {
        require_file(p, "model")?;
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(ycd_serve::run(cfg))?;
    Ok(())
}

/// Times `iterations` forward passes on one synthetic image after [`WARMUP_ITERATIONS`]
/// untimed ones. Latencies are in milliseconds.
pub fn bench_forward(bundle: &ModelBundle, iterations: usize, seed: u64) -> Result<LatencyStats> {
    let r = bundle.arch().effective_resolution();
    let image = preprocess_rgb(&render_sample(0, 4, 0, r, seed), r);
    for _ in 0..WARMUP_ITERATIONS {
        forward(bundle, &image)?;
    }
    let mut samples = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t = Instant::now();
        let out = forward(bundle, &image)?;
        samples.push(t.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    LatencyStats::from_samples(&samples).ok_or_else(|| usage("--iterations must be at least 1"))
}

pub fn bench(a: BenchArgs) -> Result<()> {
    if a.iterations == 0 {
        return Err(usage("--iterations must be at least 1"));
    }
    let bundle = match &a.bundle {
        Some(path) => {
            require_file(path, "bundle")?;
            load_bundle(path)?
        }
        None => ModelBundle::initialize(vec!["a".into(), "b".into(), "c".into(), "d".into()], a.arch.build()?, a.seed)?,
    };
    let s = bench_forward(&bundle, a.iterations, a.seed)?;
    println!(
        "forward alpha={} input={}px: {} samples ({} warm-up excluded)",
        bundle.arch().width_multiplier,
        bundle.arch().effective_resolution(),
        s.samples,
        WARMUP_ITERATIONS
    );
    println!(
        "p50 {:.3} ms  p95 {:.3} ms  mean {:.3} ms  min {:.3} ms  max {:.3} ms",
        s.p50, s.p95, s.mean, s.min, s.max
    );
    Ok(())
}
