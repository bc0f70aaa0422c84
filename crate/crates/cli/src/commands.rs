use std::collections::{BTreeMap, HashMap};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use hierclass::config::{parse_list, resolve_seed, Config, SEED_ENV};
use hierclass::dataset::{
    generate_synthetic, ingest_features, ingest_scores, make_splits, DataSplit, Dataset, MlMode, Scheme, ScoreTable,
    SplitSpec, SyntheticSpec,
};
use hierclass::hierarchy::{
    evaluate_file, predict_from_scores, predict_split, read_predictions, read_truths, train_topology,
    write_predictions, AggregationRule, LearnerSpec, ModelBundle, Topology, TrainConfig,
};
use hierclass::learners::{GridPhase, GridSpec, PreprocessConfig, SoftmaxHyper};
use hierclass::manifest::{sha256_hex, RunManifest};
use hierclass::report::Report;
use hierclass::taxonomy::{parse_taxonomy, LabelPath, PrefixMode, Taxonomy, FIXTURE_CSV};

use crate::failure::{write_atomic, Invalid};
use crate::{Cli, Command, EvaluateArgs, PredictArgs, ReportArgs, SplitArgs, SynthArgs, TaxonomyCmd, TrainArgs};

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "synth.dim",
    "synth.alignment",
    "synth.separation",
    "synth.noise_sd",
    "synth.specimen_share",
    "synth.per_label",
    "synth.views",
    "split.scheme",
    "split.n_splits",
    "split.train_fraction",
    "split.ml_fractions",
    "split.ml_mode",
    "split.train_view_cap",
    "split.test_view_cap",
    "split.comparison_test_view_cap",
    "train.topology",
    "train.learner",
    "train.ranks",
    "svm.c",
    "svm.gamma",
    "svm.grid_phase",
    "softmax.learning_rate",
    "softmax.epochs",
    "softmax.l2",
    "softmax.batch_size",
    "preprocess.pca",
    "preprocess.retained_variance",
    "predict.rule",
    "evaluate.mode",
];

/// Per-label test counts for the comparison scheme: `split.count.<label> = n`.
const SECTIONS: &[&str] = &["split.count"];

/// Config file, seed and the settings a command actually used.
struct Ctx {
    config: Config,
    seed: u64,
    used: BTreeMap<String, String>,
}

impl Ctx {
    /// Flag, else config key, else default; recorded for the manifest.
    fn pick<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => v,
            None => self.config.get(key)?.unwrap_or(default),
        };
        self.used.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    fn pick_list<T>(&mut self, key: &str, flag: Option<&str>) -> Result<Option<Vec<T>>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let list = match flag {
            Some(v) => {
                Some(parse_list(v).map_err(|m| Invalid(format!("--{}: {m}", key.rsplit('.').next().unwrap_or(key))))?)
            }
            None => self.config.get_list(key)?,
        };
        if let Some(l) = &list {
            let text: Vec<String> = l.iter().map(ToString::to_string).collect();
            self.used.insert(key.to_string(), text.join(","));
        }
        Ok(list)
    }

    fn manifest(&self, command: &str, taxonomy: &Taxonomy, started: u64) -> RunManifest {
        let mut m = RunManifest::new(command, &taxonomy.digest());
        m.config = self.used.clone();
        m.seeds.insert("run".into(), self.seed);
        m.started = Some(started);
        m
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn load_taxonomy(path: &Path) -> Result<Taxonomy> {
    let bytes = read(path)?;
    parse_taxonomy(bytes.as_slice()).with_context(|| format!("taxonomy {}", path.display()))
}

fn load_dataset(path: &Path, taxonomy: &Taxonomy) -> Result<(Dataset, String)> {
    let bytes = read(path)?;
    let dataset =
        ingest_features(bytes.as_slice(), taxonomy).with_context(|| format!("features {}", path.display()))?;
    Ok((dataset, sha256_hex(&bytes)))
}

fn load_split(path: &Path) -> Result<(DataSplit, String)> {
    let bytes = read(path)?;
    let split = DataSplit::from_json(&bytes).with_context(|| format!("split {}", path.display()))?;
    Ok((split, sha256_hex(&bytes)))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn finish(mut manifest: RunManifest, path: &Path) -> Result<()> {
    manifest.finished = Some(now());
    write_atomic(path, manifest.to_json().as_bytes())?;
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Invalid("--jobs must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("starting the worker pool")?;
    }
    let config = match &cli.config {
        Some(path) => {
            let text =
                String::from_utf8(read(path)?).map_err(|_| Invalid(format!("{} is not UTF-8", path.display())))?;
            Config::parse(&text).with_context(|| format!("config {}", path.display()))?
        }
        None => Config::default(),
    };
    config.check_keys(KNOWN_KEYS, SECTIONS)?;
    let env = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(cli.seed, env.as_deref(), &config)?;
    let mut ctx = Ctx {
        config,
        seed,
        used: BTreeMap::new(),
    };
    match cli.command {
        Command::Taxonomy(cmd) => taxonomy(cmd),
        Command::Synth(args) => synth(&mut ctx, args),
        Command::Split(args) => split(&mut ctx, args),
        Command::Train(args) => train(&mut ctx, args),
        Command::Predict(args) => predict(&mut ctx, args),
        Command::Evaluate(args) => evaluate(&mut ctx, args),
        Command::Report(args) => report(args),
    }
}

fn taxonomy(cmd: TaxonomyCmd) -> Result<()> {
    match cmd {
        TaxonomyCmd::Validate { file } => {
            let t = load_taxonomy(&file)?;
            println!("ok: {} class labels over {} ranks", t.labels().len(), t.levels());
        }
        TaxonomyCmd::Stats { file, json } => {
            let t = load_taxonomy(&file)?;
            let stats = t.stats();
            if json {
                println!("{}", serde_json::to_string_pretty(&stats)?);
                return Ok(());
            }
            let mut summary = vec![format!("{} leaves", stats.labels)];
            for rank in 1..=t.levels() {
                let name = t.rank_name(rank);
                let n = stats.nodes_per_rank.get(name).copied().unwrap_or(0);
                println!("{name:<10} {n}");
                summary.push(n.to_string());
            }
            for (depth, n) in &stats.label_depth_histogram {
                println!("labels ending at {:<8} {n}", t.rank_name(*depth));
            }
            if let Some(s) = stats.specimens {
                println!("specimens  {s}");
            }
            if let Some(i) = stats.images {
                println!("images     {i}");
            }
            println!("{}", summary.join(" / "));
        }
        TaxonomyCmd::Fixture { out } => match out {
            Some(path) => write_atomic(&path, FIXTURE_CSV.as_bytes())?,
            None => print!("{FIXTURE_CSV}"),
        },
    }
    Ok(())
}

fn synth(ctx: &mut Ctx, args: SynthArgs) -> Result<()> {
    let started = now();
    let taxonomy = load_taxonomy(&args.taxonomy)?;
    let d = SyntheticSpec::default();
    let spec = SyntheticSpec {
        dim: ctx.pick("synth.dim", args.dim, d.dim)?,
        alignment: ctx.pick("synth.alignment", args.alignment, d.alignment)?,
        separation: ctx.pick("synth.separation", args.separation, d.separation)?,
        noise_sd: ctx.pick("synth.noise_sd", args.noise_sd, d.noise_sd)?,
        specimen_share: ctx.pick("synth.specimen_share", None, d.specimen_share)?,
        per_label: ctx.pick("synth.per_label", args.per_label, d.per_label)?,
        views_per_specimen: ctx.pick("synth.views", args.views, d.views_per_specimen)?,
        seed: ctx.seed,
        means: None,
    };
    if spec.dim == 0 || spec.per_label == 0 || spec.views_per_specimen == 0 {
        return Err(Invalid("dim, per-label and views must be at least 1".into()).into());
    }
    if !(0.0..=1.0).contains(&spec.alignment) || !(0.0..=1.0).contains(&spec.specimen_share) {
        return Err(Invalid("alignment and specimen share must lie in [0, 1]".into()).into());
    }
    let dataset = generate_synthetic(&taxonomy, &spec)?;
    let mut manifest = ctx.manifest("synth", &taxonomy, started);
    manifest.dataset_hash = Some(dataset.digest());
    let body = format!("# manifest={}\n{}", manifest.hash(), dataset.to_feature_csv(&taxonomy));
    write_atomic(&args.out, body.as_bytes())?;
    log::info!("{} specimens, {} images", dataset.len(), dataset.image_count());
    finish(manifest, &manifest_path(&args.out))
}

fn split(ctx: &mut Ctx, args: SplitArgs) -> Result<()> {
    let started = now();
    let taxonomy = load_taxonomy(&args.taxonomy)?;
    let (dataset, features_hash) = load_dataset(&args.features, &taxonomy)?;
    let d = SplitSpec::new(Scheme::Comparison, ctx.seed);
    let mut spec = SplitSpec::new(ctx.pick("split.scheme", args.scheme, d.scheme)?, ctx.seed);
    spec.n_splits = ctx.pick("split.n_splits", args.n_splits, d.n_splits)?;
    spec.comparison_train_fraction = ctx.pick("split.train_fraction", None, d.comparison_train_fraction)?;
    if let Some(f) = ctx.pick_list::<f64>("split.ml_fractions", None)? {
        spec.ml_fractions = f
            .try_into()
            .map_err(|_| Invalid("split.ml_fractions needs three values".into()))?;
    }
    spec.ml_mode = ctx.pick::<MlMode>("split.ml_mode", None, d.ml_mode)?;
    spec.train_view_cap = ctx.pick("split.train_view_cap", None, d.train_view_cap)?;
    spec.test_view_cap = ctx.pick("split.test_view_cap", None, d.test_view_cap)?;
    spec.comparison_test_view_cap = ctx.pick("split.comparison_test_view_cap", None, d.comparison_test_view_cap)?;
    let counts = ctx.config.section("split.count");
    if !counts.is_empty() {
        let mut table = BTreeMap::new();
        for (label, n) in counts {
            let n: usize = n
                .parse()
                .map_err(|_| Invalid(format!("split.count.{label}: '{n}' is not a count")))?;
            ctx.used.insert(format!("split.count.{label}"), n.to_string());
            table.insert(label.to_string(), n);
        }
        spec.comparison_counts = Some(table);
    }
    let splits = make_splits(&dataset, &taxonomy, &spec)?;
    let mut manifest = ctx.manifest("split", &taxonomy, started);
    manifest.dataset_hash = Some(dataset.digest());
    manifest.inputs.insert("features".into(), features_hash);
    let hash = manifest.hash();
    for mut s in splits {
        s.manifest = Some(hash.clone());
        let path = args.out_dir.join(format!("split-{:02}.json", s.split));
        write_atomic(&path, s.to_json().as_bytes())?;
        log::info!("{}: {}/{}/{}", path.display(), s.train.len(), s.val.len(), s.test.len());
    }
    finish(manifest, &args.out_dir.join("manifest.json"))
}

fn train(ctx: &mut Ctx, args: TrainArgs) -> Result<()> {
    let started = now();
    let taxonomy = load_taxonomy(&args.taxonomy)?;
    let (dataset, features_hash) = load_dataset(&args.features, &taxonomy)?;
    let (split, split_hash) = load_split(&args.split)?;
    split.validate_against(&dataset)?;
    let topology = ctx.pick("train.topology", args.topology, Topology::Cascade)?;
    let learner = ctx.pick("train.learner", args.learner, "svm".to_string())?;
    let all_ranks: Vec<usize> = (1..=taxonomy.levels()).collect();
    let ranks = match topology {
        Topology::PerLevel => ctx
            .pick_list("train.ranks", args.ranks.as_deref())?
            .unwrap_or(all_ranks),
        _ => Vec::new(),
    };
    let dp = PreprocessConfig::default();
    let preprocess = PreprocessConfig {
        pca: ctx.pick("preprocess.pca", None, dp.pca)?,
        retained_variance: ctx.config.get("preprocess.retained_variance")?,
    };
    if let Some(v) = preprocess.retained_variance {
        ctx.used.insert("preprocess.retained_variance".into(), v.to_string());
    }
    let spec = match learner.as_str() {
        "svm" => {
            let base = TrainConfig::svm(ctx.seed).grid_for(topology);
            let c = ctx.pick_list("svm.c", args.c.as_deref())?;
            let gamma = ctx.pick_list("svm.gamma", args.gamma.as_deref())?;
            let explicit = c.is_some() || gamma.is_some();
            let default_phase = if explicit { GridPhase::Single } else { base.phase };
            let grid = GridSpec {
                c: c.unwrap_or(base.c),
                gamma: gamma.unwrap_or(base.gamma),
                phase: ctx.pick("svm.grid_phase", args.grid_phase, default_phase)?,
            };
            if grid.c.iter().chain(&grid.gamma).any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Invalid("grid values must be positive".into()).into());
            }
            LearnerSpec::Svm { grid: Some(grid) }
        }
        "softmax" => {
            let d = SoftmaxHyper::default();
            LearnerSpec::Softmax {
                hyper: SoftmaxHyper {
                    learning_rate: ctx.pick("softmax.learning_rate", None, d.learning_rate)?,
                    epochs: ctx.pick("softmax.epochs", None, d.epochs)?,
                    l2: ctx.pick("softmax.l2", None, d.l2)?,
                    batch_size: ctx.pick("softmax.batch_size", None, d.batch_size)?,
                    seed: ctx.seed,
                },
            }
        }
        other => return Err(Invalid(format!("unknown learner '{other}' (use svm or softmax)")).into()),
    };
    let config = TrainConfig {
        learner: spec,
        preprocess,
        seed: ctx.seed,
    };
    let mut manifest = ctx.manifest("train", &taxonomy, started);
    manifest.dataset_hash = Some(dataset.digest());
    manifest.inputs.insert("features".into(), features_hash);
    manifest.inputs.insert("split".into(), split_hash);
    manifest.topology = Some(topology.to_string());
    manifest.learner = Some(learner);
    if let LearnerSpec::Svm { grid } = &config.learner {
        manifest.grid = grid.clone();
    }
    let trained = train_topology(topology, &taxonomy, &dataset, &split, &config, &ranks)?;
    for m in &trained.models {
        if !m.report.dropped.is_empty() {
            log::warn!("{}: {} classes without training data", m.key, m.report.dropped.len());
        }
    }
    log::info!("{} models trained", trained.models.len());
    let mut bundle = ModelBundle::new(&taxonomy, config, trained);
    bundle.manifest = Some(manifest.hash());
    write_atomic(&args.out, bundle.to_json().as_bytes())?;
    finish(manifest, &manifest_path(&args.out))
}

fn restrict_to_split(table: ScoreTable, split: &DataSplit) -> ScoreTable {
    let by_id: HashMap<_, _> = table.specimens.into_iter().map(|s| (s.id.clone(), s)).collect();
    let specimens = split
        .test
        .iter()
        .filter_map(|id| by_id.get(id).cloned())
        .map(|mut s| {
            if let Some(keep) = split.views.get(&s.id) {
                s.views.retain(|v| keep.contains(&v.image_id));
            }
            s
        })
        .collect();
    ScoreTable {
        classes: table.classes,
        specimens,
    }
}

fn predict(ctx: &mut Ctx, args: PredictArgs) -> Result<()> {
    let started = now();
    let taxonomy = load_taxonomy(&args.taxonomy)?;
    let rule = ctx.pick("predict.rule", args.rule, AggregationRule::MajorityVote)?;
    let mut manifest = ctx.manifest("predict", &taxonomy, started);
    let split = match &args.split {
        Some(p) => {
            let (s, h) = load_split(p)?;
            manifest.inputs.insert("split".into(), h);
            Some(s)
        }
        None => None,
    };
    let mut meta = BTreeMap::new();
    let (rows, topology) = if let Some(model_path) = &args.model {
        let bytes = read(model_path)?;
        let bundle = ModelBundle::from_json(&bytes)?;
        bundle.check_taxonomy(&taxonomy)?;
        manifest.inputs.insert("model".into(), sha256_hex(&bytes));
        let features = args
            .features
            .as_ref()
            .ok_or_else(|| Invalid("--model needs --features".into()))?;
        let (dataset, features_hash) = load_dataset(features, &taxonomy)?;
        manifest.inputs.insert("features".into(), features_hash);
        manifest.dataset_hash = Some(dataset.digest());
        let split = split.ok_or_else(|| Invalid("--model needs --split".into()))?;
        split.validate_against(&dataset)?;
        let rows = predict_split(&taxonomy, &bundle.trained, &dataset, &split, rule)?;
        meta.insert("split".to_string(), split.split.to_string());
        (rows, bundle.trained.topology)
    } else {
        let path = args
            .scores
            .as_ref()
            .ok_or_else(|| Invalid("give --model or --scores".into()))?;
        let bytes = read(path)?;
        let mut table =
            ingest_scores(bytes.as_slice(), &taxonomy).with_context(|| format!("scores {}", path.display()))?;
        manifest.inputs.insert("scores".into(), sha256_hex(&bytes));
        if let Some(split) = &split {
            table = restrict_to_split(table, split);
            meta.insert("split".to_string(), split.split.to_string());
        }
        (predict_from_scores(&taxonomy, &table, rule)?, Topology::Flat)
    };
    manifest.topology = Some(topology.to_string());
    meta.insert("manifest".to_string(), manifest.hash());
    meta.insert("topology".to_string(), topology.to_string());
    meta.insert("rule".to_string(), rule.to_string());
    write_atomic(&args.out, write_predictions(&taxonomy, &rows, &meta).as_bytes())?;
    log::info!("{} predictions", rows.len());
    finish(manifest, &manifest_path(&args.out))
}

fn evaluate(ctx: &mut Ctx, args: EvaluateArgs) -> Result<()> {
    let started = now();
    let taxonomy = load_taxonomy(&args.taxonomy)?;
    let mode = ctx.pick("evaluate.mode", args.mode, PrefixMode::PartialCredit)?;
    let mut manifest = ctx.manifest("evaluate", &taxonomy, started);
    let truths: HashMap<String, LabelPath> = match (&args.truth, &args.features) {
        (Some(path), _) => {
            let bytes = read(path)?;
            manifest.inputs.insert("truth".into(), sha256_hex(&bytes));
            read_truths(bytes.as_slice(), &taxonomy).with_context(|| format!("truth {}", path.display()))?
        }
        (None, Some(path)) => {
            let (dataset, h) = load_dataset(path, &taxonomy)?;
            manifest.inputs.insert("features".into(), h);
            manifest.dataset_hash = Some(dataset.digest());
            dataset
                .specimens()
                .iter()
                .map(|s| (s.id.clone(), s.truth.clone()))
                .collect()
        }
        (None, None) => return Err(Invalid("give --truth or --features".into()).into()),
    };
    let mut reports = Vec::with_capacity(args.predictions.len());
    for (i, path) in args.predictions.iter().enumerate() {
        let bytes = read(path)?;
        manifest
            .inputs
            .insert(format!("predictions.{i:02}"), sha256_hex(&bytes));
        let file =
            read_predictions(bytes.as_slice(), &taxonomy).with_context(|| format!("predictions {}", path.display()))?;
        let report =
            evaluate_file(&file, &truths, &taxonomy, mode).with_context(|| format!("scoring {}", path.display()))?;
        reports.push(report);
    }
    let mut report = Report::new(&taxonomy, mode);
    report.add_column(&args.name, reports)?;
    report.manifest = Some(manifest.hash());
    write_atomic(&args.out, report.to_json().as_bytes())?;
    emit_table(&report, args.table.as_deref())?;
    finish(manifest, &manifest_path(&args.out))
}

fn emit_table(report: &Report, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => write_atomic(p, report.to_text().as_bytes())?,
        None => print!("{}", report.to_text()),
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut parts = Vec::with_capacity(args.reports.len());
    let mut hasher = Vec::new();
    for path in &args.reports {
        let bytes = read(path)?;
        hasher.extend_from_slice(sha256_hex(&bytes).as_bytes());
        parts.push(Report::from_json(&bytes).with_context(|| format!("report {}", path.display()))?);
    }
    let mut merged = Report::merge(parts)?;
    // the merged table is identified by the reports it was built from
    merged.manifest = Some(format!("sha256:{}", sha256_hex(&hasher)));
    if let Some(p) = &args.json {
        write_atomic(p, merged.to_json().as_bytes())?;
    }
    emit_table(&merged, args.out.as_deref())
}
