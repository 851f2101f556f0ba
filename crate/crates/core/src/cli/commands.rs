use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DataSource, RunConfig};
use super::run_dir::{read_json, write_json, RunDir, BENCH_FILE, TIMING_FILE};
use crate::classifiers::ProbabilisticClassifier;
use crate::cnn::{
    architecture, build_network, extract_features, train, truncate_head, ExampleSet, FeatureExtractor, FeatureTable,
    Provenance, TrainedNetwork, POSITIVE_CLASS,
};
use crate::data::{
    generate_synthetic_problem, load_problem_directory, stratified_split, synthetic_suite, write_problem_directory,
    DatasetSplit, ProblemDataset, SplitPart, CLEAN_DIR, DEFECT_DIR,
};
use crate::error::{Error, Result};
use crate::fusion::{fuse_dataset, fuse_predictions, measure_fusion_seconds, timing_profile, PredictionMatrix, TimingProfile};
use crate::headsearch::{
    assemble_auto_classifier, check_disjoint_ids, evaluate_auto_classifier, run_search, select_best, AutoClassifierModel,
    InferenceTiming,
};
use crate::metrics::{classification_report, roc_auc, EvalReport};
use crate::rng::{derive_seed, tag_of};
use crate::tensor::{cross_entropy, Tensor};

pub const AUTO_MODEL_FILE: &str = "auto-classifier.model";
pub const FUSION_REPORT: &str = "fusion.json";
pub const AUTO_REPORT: &str = "auto-classifier.json";

pub fn cnn_report_file(arch: &str) -> String {
    format!("cnn-{arch}.json")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnReport {
    pub network: String,
    pub validation_auc: f64,
    pub selected_epoch: usize,
    pub test: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionReport {
    pub networks: Vec<String>,
    pub weights: Vec<f64>,
    pub test: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoReport {
    pub source_network: String,
    pub source_validation_auc: f64,
    pub extractor_dim: usize,
    pub extractor_warning: Option<String>,
    pub spec_id: String,
    pub family: String,
    pub hyperparameters: String,
    pub validation_auc: f64,
    pub base_candidates: usize,
    pub failed_candidates: usize,
    pub test: EvalReport,
}

/// Wall-clock measurements for one problem. Kept apart from the reports
/// because they differ between runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProblemTiming {
    pub train_seconds: BTreeMap<String, f64>,
    pub fusion: Option<TimingProfile>,
    pub search_seconds: Option<f64>,
    pub auto_inference: Option<InferenceTiming>,
}

/// One loaded problem with its split.
pub struct Problem {
    pub seed: u64,
    pub dataset: ProblemDataset,
    pub split: DatasetSplit,
}

impl Problem {
    pub fn name(&self) -> &str {
        &self.dataset.name
    }

    pub fn images(&self, part: SplitPart) -> Vec<&Tensor> {
        self.split.part(part).iter().map(|&i| &self.dataset.images[i].pixels).collect()
    }

    pub fn truth(&self, part: SplitPart) -> Vec<bool> {
        self.split.part(part).iter().map(|&i| self.dataset.images[i].defect).collect()
    }

    pub fn ids(&self, part: SplitPart) -> Vec<String> {
        self.split.ids(&self.dataset, part)
    }

    fn examples(&self, part: SplitPart) -> Result<ExampleSet<'_>> {
        let labels = self
            .split
            .part(part)
            .iter()
            .map(|&i| self.dataset.images[i].class_index())
            .collect();
        ExampleSet::new(self.images(part), labels)
    }
}

/// Problem names selected by the configuration, in suite or directory order.
pub fn problem_names(config: &RunConfig) -> Result<Vec<String>> {
    let all: Vec<String> = match config.data.source {
        DataSource::Synthetic => synthetic_suite(config.data.contrast, config.data.noise, 0)
            .into_iter()
            .map(|s| s.name)
            .collect(),
        DataSource::Directory => {
            let root = config.data.path.as_ref().expect("validated");
            let mut names: Vec<String> = fs::read_dir(root)
                .map_err(|e| Error::io(root, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join(DEFECT_DIR).is_dir() && p.join(CLEAN_DIR).is_dir())
                .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
                .collect();
            names.sort();
            names
        }
    };
    if all.is_empty() {
        return Err(Error::Data("no problems found".into()));
    }
    if config.data.problems.is_empty() {
        return Ok(all);
    }
    for p in &config.data.problems {
        if !all.contains(p) {
            return Err(Error::Config(format!("unknown problem {p:?} (available: {})", all.join(", "))));
        }
    }
    Ok(all.into_iter().filter(|n| config.data.problems.contains(n)).collect())
}

fn problem_seed(config: &RunConfig, name: &str) -> u64 {
    derive_seed(config.seed, tag_of(name))
}

fn problem_dir(config: &RunConfig, run: &RunDir, name: &str) -> PathBuf {
    match config.data.source {
        DataSource::Synthetic => run.data().join(name),
        DataSource::Directory => config.data.path.as_ref().expect("validated").join(name),
    }
}

pub fn load_problem(config: &RunConfig, run: &RunDir, name: &str) -> Result<Problem> {
    let dir = problem_dir(config, run, name);
    if !dir.is_dir() {
        return Err(Error::Data(format!("{} not found; run gen-data first", dir.display())));
    }
    let dataset = load_problem_directory(&dir, config.data.image_size)?;
    let seed = problem_seed(config, name);
    let split = stratified_split(&dataset, config.split.fractions, derive_seed(seed, tag_of("split")))?;
    Ok(Problem { seed, dataset, split })
}

fn with_stage<T>(r: Result<T>, problem: &str, stage: &str) -> Result<T> {
    r.map_err(|e| e.context(format!("{problem}/{stage}")))
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn load_timing(run: &RunDir, problem: &str) -> Result<ProblemTiming> {
    let p = run.reports(problem)?.join(TIMING_FILE);
    if p.exists() {
        read_json(&p)
    } else {
        Ok(ProblemTiming::default())
    }
}

fn store_timing(run: &RunDir, problem: &str, t: &ProblemTiming) -> Result<()> {
    write_json(&run.reports(problem)?.join(TIMING_FILE), t)
}

/// Writes the synthetic suite (or checks the directory layout) and the
/// split of every problem.
pub fn cmd_gen_data(config: &RunConfig, run: &RunDir) -> Result<Vec<String>> {
    let names = problem_names(config)?;
    if config.data.source == DataSource::Synthetic {
        let suite = synthetic_suite(config.data.contrast, config.data.noise, derive_seed(config.seed, tag_of("data")));
        for mut spec in suite.into_iter().filter(|s| names.contains(&s.name)) {
            spec.image_size = config.data.image_size;
            spec.n_defect = config.data.n_defect;
            spec.n_clean = config.data.n_clean;
            let name = spec.name.clone();
            let ds = with_stage(generate_synthetic_problem(&spec), &name, "generate")?;
            with_stage(write_problem_directory(&ds, &run.data()), &name, "write")?;
        }
    }
    for name in &names {
        let p = with_stage(load_problem(config, run, name), name, "load")?;
        write_json(&run.split_file(name), &p.split)?;
        log::info!(
            "{name}: {} images ({} defect), split {}/{}/{}",
            p.dataset.len(),
            p.dataset.defect_count(),
            p.split.train.len(),
            p.split.val.len(),
            p.split.test.len()
        );
    }
    run.write_manifest(config, &names)?;
    Ok(names)
}

/// Test-set report for one network: argmax labels and AUC on the defect
/// probability.
pub fn network_report(net: &TrainedNetwork, images: &[&Tensor], truth: &[bool]) -> Result<EvalReport> {
    let mut predicted = Vec::with_capacity(images.len());
    let mut scores = Vec::with_capacity(images.len());
    for x in images {
        let p = net.predict(x)?;
        let winner = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        predicted.push(winner == POSITIVE_CLASS);
        scores.push(p[POSITIVE_CLASS]);
    }
    let mut report = classification_report(&predicted, truth)?;
    report.auc = Some(roc_auc(&scores, truth)?);
    Ok(report)
}

fn model_path(run: &RunDir, problem: &str, arch: &str) -> Result<PathBuf> {
    Ok(run.models(problem)?.join(format!("{arch}.acnn")))
}

pub fn cmd_train_cnns(config: &RunConfig, run: &RunDir) -> Result<()> {
    let names = problem_names(config)?;
    let pool = pool(config.workers)?;
    for name in &names {
        let p = with_stage(load_problem(config, run, name), name, "load")?;
        let train_set = p.examples(SplitPart::Train)?;
        let val_set = p.examples(SplitPart::Val)?;
        let results: Vec<Result<TrainedNetwork>> = pool.install(|| {
            use rayon::prelude::*;
            config
                .train
                .architectures
                .par_iter()
                .map(|arch| {
                    let spec = architecture(arch)?;
                    let net = build_network(&spec, derive_seed(p.seed, tag_of(&format!("init/{arch}"))))?;
                    let cfg = config.train_config(derive_seed(p.seed, tag_of(&format!("train/{arch}"))));
                    train(net, &train_set, &val_set, &cfg).map_err(|e| e.context(format!("{name}/train {arch}")))
                })
                .collect()
        });
        let mut timing = load_timing(run, name)?;
        let (test, truth) = (p.images(SplitPart::Test), p.truth(SplitPart::Test));
        for (arch, trained) in config.train.architectures.iter().zip(results) {
            let trained = trained?;
            trained.save(&model_path(run, name, arch)?)?;
            let report = CnnReport {
                network: arch.clone(),
                validation_auc: trained.validation_auc,
                selected_epoch: trained.selected_epoch,
                test: with_stage(network_report(&trained, &test, &truth), name, "evaluate")?,
            };
            write_json(&run.reports(name)?.join(cnn_report_file(arch)), &report)?;
            timing.train_seconds.insert(arch.clone(), trained.train_seconds);
            log::info!(
                "{name}/{arch}: val AUC {:.4} (epoch {}), test acc {:.4}, {:.1}s",
                trained.validation_auc,
                trained.selected_epoch,
                report.test.accuracy,
                trained.train_seconds
            );
        }
        store_timing(run, name, &timing)?;
    }
    run.write_manifest(config, &names)
}

pub fn load_networks(config: &RunConfig, run: &RunDir, problem: &str) -> Result<Vec<TrainedNetwork>> {
    config
        .train
        .architectures
        .iter()
        .map(|arch| {
            let path = model_path(run, problem, arch)?;
            if !path.exists() {
                return Err(Error::Data(format!(
                    "{problem}: missing model {}; run train-cnns first",
                    path.display()
                )));
            }
            TrainedNetwork::load(&path)
        })
        .collect()
}

/// Mean single-image inference seconds of `f` over `images`.
fn mean_seconds(images: &[&Tensor], mut f: impl FnMut(&Tensor) -> Result<()>) -> Result<f64> {
    let started = Instant::now();
    for x in images {
        f(x)?;
    }
    Ok(started.elapsed().as_secs_f64() / images.len().max(1) as f64)
}

fn fusion_timing(nets: &[TrainedNetwork], images: &[&Tensor], weights: &crate::fusion::FusionWeights) -> Result<TimingProfile> {
    let per_network = nets
        .iter()
        .map(|n| mean_seconds(images, |x| n.predict(x).map(drop)))
        .collect::<Result<Vec<_>>>()?;
    let first = images.first().ok_or_else(|| Error::Data("empty test split".into()))?;
    let columns = nets.iter().map(|n| n.predict(first)).collect::<Result<Vec<_>>>()?;
    timing_profile(&per_network, measure_fusion_seconds(&columns, weights, 1000)?)
}

pub fn cmd_fuse(config: &RunConfig, run: &RunDir) -> Result<()> {
    let names = problem_names(config)?;
    for name in &names {
        let p = with_stage(load_problem(config, run, name), name, "load")?;
        let nets = load_networks(config, run, name)?;
        let (test, truth) = (p.images(SplitPart::Test), p.truth(SplitPart::Test));
        let outcome = with_stage(fuse_dataset(&nets, &test, &truth), name, "fuse")?;
        let report = FusionReport {
            networks: outcome.weights.ids.clone(),
            weights: outcome.weights.weights.clone(),
            test: outcome.report.clone(),
        };
        write_json(&run.reports(name)?.join(FUSION_REPORT), &report)?;
        let mut timing = load_timing(run, name)?;
        timing.fusion = Some(fusion_timing(&nets, &test, &outcome.weights)?);
        store_timing(run, name, &timing)?;
        log::info!(
            "{name}: fusion test acc {:.4}, AUC {:.4}",
            report.test.accuracy,
            report.test.auc.unwrap_or(f64::NAN)
        );
    }
    run.write_manifest(config, &names)
}

/// Index of the network with the highest validation AUC. Ties go to the
/// lower validation cross-entropy, then to the first listed: AUC
/// saturates early on easy problems, and an epoch-1 checkpoint that ranks
/// perfectly can still give poorly separated features.
pub fn best_network(nets: &[TrainedNetwork], val_images: &[&Tensor], val_truth: &[bool]) -> Result<usize> {
    let top = nets.iter().map(|n| n.validation_auc).fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<(usize, f64)> = None;
    for (i, net) in nets.iter().enumerate() {
        if net.validation_auc < top {
            continue;
        }
        let mut loss = 0.0;
        for (x, &t) in val_images.iter().zip(val_truth) {
            loss += cross_entropy(&net.predict(x)?, usize::from(t))?;
        }
        if best.is_none_or(|(_, l)| loss < l) {
            best = Some((i, loss));
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| Error::Validation("no trained networks".into()))
}

fn model_digest(net: &TrainedNetwork) -> Result<String> {
    let bytes = net.to_container()?.to_bytes();
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}

/// Loads cached features when they were produced by the same network on the
/// same examples, otherwise extracts and caches them.
fn features(
    run: &RunDir,
    p: &Problem,
    ex: &FeatureExtractor,
    net: &TrainedNetwork,
    part: SplitPart,
) -> Result<FeatureTable> {
    let provenance = Provenance {
        network: format!("{}@{}", net.name(), model_digest(net)?),
        dataset: p.name().to_owned(),
        split: part.name().to_owned(),
    };
    let path = run.features(p.name())?.join(format!("{}.{}.aftb", net.name(), part.name()));
    let ids = p.ids(part);
    if path.exists() {
        if let Ok(t) = FeatureTable::read_cache(&path) {
            if t.provenance == provenance && t.ids == ids && t.dim == ex.dim {
                return Ok(t);
            }
        }
    }
    let t = extract_features(ex, &p.images(part), &p.truth(part), &ids, provenance)?;
    t.write_cache(&path)?;
    Ok(t)
}

pub fn auto_model_path(run: &RunDir, problem: &str) -> Result<PathBuf> {
    Ok(run.models(problem)?.join(AUTO_MODEL_FILE))
}

pub fn cmd_search_head(config: &RunConfig, run: &RunDir) -> Result<()> {
    let names = problem_names(config)?;
    for name in &names {
        let p = with_stage(load_problem(config, run, name), name, "load")?;
        let nets = load_networks(config, run, name)?;
        let source = &nets[best_network(&nets, &p.images(SplitPart::Val), &p.truth(SplitPart::Val))?];
        let ex = truncate_head(source);
        let train_f = with_stage(features(run, &p, &ex, source, SplitPart::Train), name, "extract")?;
        let val_f = with_stage(features(run, &p, &ex, source, SplitPart::Val), name, "extract")?;
        let started = Instant::now();
        let budget = config.budget(derive_seed(p.seed, tag_of("search")));
        let board = with_stage(run_search(&train_f, &val_f, &budget, config.workers), name, "search")?;
        let search_seconds = started.elapsed().as_secs_f64();
        let lb = run.leaderboards();
        fs::write(lb.join(format!("{name}.csv")), board.to_csv(false)?).map_err(|e| Error::io(&lb, e))?;
        fs::write(lb.join(format!("{name}.timing.csv")), board.to_csv(true)?).map_err(|e| Error::io(&lb, e))?;
        let best = select_best(&board)?;
        let model = assemble_auto_classifier(
            ex,
            Arc::clone(&best.model),
            best.spec.clone(),
            best.validation_auc,
            board.rows(),
        )?;
        let test_ids = p.ids(SplitPart::Test);
        check_disjoint_ids(&test_ids, train_f.ids.iter().chain(&val_f.ids))?;
        model.save(&auto_model_path(run, name)?)?;
        let eval = with_stage(
            evaluate_auto_classifier(&model, &p.images(SplitPart::Test), &p.truth(SplitPart::Test)),
            name,
            "evaluate",
        )?;
        let report = AutoReport {
            source_network: source.name().to_owned(),
            source_validation_auc: source.validation_auc,
            extractor_dim: model.extractor().dim,
            extractor_warning: model.extractor().warning.clone(),
            spec_id: best.spec.id(),
            family: best.spec.family.name().to_owned(),
            hyperparameters: best.spec.params.canonical(),
            validation_auc: best.validation_auc,
            base_candidates: board.base_candidates,
            failed_candidates: board.failures.len(),
            test: eval.report,
        };
        write_json(&run.reports(name)?.join(AUTO_REPORT), &report)?;
        let mut timing = load_timing(run, name)?;
        timing.search_seconds = Some(search_seconds);
        timing.auto_inference = Some(eval.timing);
        store_timing(run, name, &timing)?;
        log::info!(
            "{name}: head {} ({}) val AUC {:.4}, test acc {:.4}, AUC {:.4}",
            report.spec_id,
            report.family,
            report.validation_auc,
            report.test.accuracy,
            report.test.auc.unwrap_or(f64::NAN)
        );
    }
    run.write_manifest(config, &names)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub stddev: f64,
    pub runs: usize,
}

impl Stats {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stddev = if n < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, stddev, runs: n }
    }
}

/// Times `f` on `repeats` single inputs after `warmup` untimed calls,
/// cycling through `inputs`.
pub fn bench<T>(inputs: &[T], warmup: usize, repeats: usize, mut f: impl FnMut(&T) -> Result<()>) -> Result<Stats> {
    if inputs.is_empty() {
        return Err(Error::Data("nothing to benchmark".into()));
    }
    for i in 0..warmup {
        f(&inputs[i % inputs.len()])?;
    }
    let mut samples = Vec::with_capacity(repeats);
    for i in 0..repeats {
        let x = &inputs[i % inputs.len()];
        let t = Instant::now();
        f(std::hint::black_box(x))?;
        samples.push(t.elapsed().as_secs_f64());
    }
    Ok(Stats::from_samples(&samples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkBench {
    pub network: String,
    pub inference: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionBench {
    /// The timing model built from the per-network means.
    pub model: TimingProfile,
    /// Measured end-to-end serial fusion: every network then the fusion step.
    pub measured_serial: Stats,
    /// `|measured − model| / model` for the serial time.
    pub serial_relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoBench {
    pub extractor: Stats,
    pub head: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemBench {
    pub problem: String,
    pub networks: Vec<NetworkBench>,
    pub fusion: FusionBench,
    pub auto_classifier: Option<AutoBench>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub warmup: usize,
    pub repeats: usize,
    pub problems: Vec<ProblemBench>,
}

pub fn bench_problem(
    name: &str,
    nets: &[TrainedNetwork],
    auto: Option<&AutoClassifierModel>,
    images: &[&Tensor],
    warmup: usize,
    repeats: usize,
) -> Result<ProblemBench> {
    let mut networks = Vec::with_capacity(nets.len());
    for n in nets {
        networks.push(NetworkBench {
            network: n.name().to_owned(),
            inference: bench(images, warmup, repeats, |x| n.predict(x).map(drop))?,
        });
    }
    let weights = crate::fusion::normalize_auc_weights(&crate::fusion::ValidationScores::from_networks(nets)?)?;
    let columns = nets.iter().map(|n| n.predict(images[0])).collect::<Result<Vec<_>>>()?;
    let t_fusion = measure_fusion_seconds(&columns, &weights, repeats.max(1000))?;
    let means: Vec<f64> = networks.iter().map(|b| b.inference.mean).collect();
    let model = timing_profile(&means, t_fusion)?;
    let measured_serial = bench(images, warmup, repeats, |x| {
        let cols = nets.iter().map(|n| n.predict(x)).collect::<Result<Vec<_>>>()?;
        fuse_predictions(&PredictionMatrix::from_columns(&cols)?, &weights).map(drop)
    })?;
    let serial_relative_gap = (measured_serial.mean - model.f_time_serial).abs() / model.f_time_serial;
    let auto_classifier = match auto {
        Some(m) => {
            let extractor = bench(images, warmup, repeats, |x| m.extractor().extract(x).map(drop))?;
            let feats = images.iter().map(|x| m.extractor().extract(x)).collect::<Result<Vec<_>>>()?;
            let head = bench(&feats, warmup, repeats, |f| m.head().predict_proba(f).map(drop))?;
            Some(AutoBench { extractor, head })
        }
        None => None,
    };
    Ok(ProblemBench {
        problem: name.to_owned(),
        networks,
        fusion: FusionBench {
            model,
            measured_serial,
            serial_relative_gap,
        },
        auto_classifier,
    })
}

pub fn cmd_bench(config: &RunConfig, run: &RunDir) -> Result<BenchReport> {
    let names = problem_names(config)?;
    let mut problems = Vec::with_capacity(names.len());
    for name in &names {
        let p = with_stage(load_problem(config, run, name), name, "load")?;
        let nets = load_networks(config, run, name)?;
        let auto_path = auto_model_path(run, name)?;
        let auto = if auto_path.exists() {
            Some(AutoClassifierModel::load(&auto_path)?)
        } else {
            None
        };
        let images = p.images(SplitPart::Test);
        problems.push(with_stage(
            bench_problem(name, &nets, auto.as_ref(), &images, config.bench.warmup, config.bench.repeats),
            name,
            "bench",
        )?);
    }
    let report = BenchReport {
        warmup: config.bench.warmup,
        repeats: config.bench.repeats,
        problems,
    };
    write_json(&run.reports_root().join(BENCH_FILE), &report)?;
    Ok(report)
}
