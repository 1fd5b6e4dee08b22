use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use repdensity::analysis::{
    between_class_kl_matrix, class_log_density_stats, density_bins, detect_density_groups, empirical_priors,
    generative_classify, memorization_from_trials, select_memorization_subsets, ClassDensityReport, ExampleLogDensity,
    TrialRecords,
};
use repdensity::certify::{certification_report, certify as certify_point, BinnedOutcome, CertifyOutcome};
use repdensity::{
    derive_prior, kl_between_predictives, kl_to_reference, load_representations, max_entropy_reference, run,
    split_by_class, svd_reduce, write_representations, Error, KlEstimate, PredictiveModel, RepresentationDataset,
    SvdTarget,
};

use crate::classifier::SubprocessClassifier;
use crate::config::{derive_seed, RunConfig, SEED_FIT, SEED_KL, SEED_SUBSETS};
use crate::manifest::{sha256_file, sidecar, Manifest};
use crate::model::{load_archive, save_archive, ArchiveMeta};
use crate::{
    AnalyzeArgs, CertifyArgs, ClassifyArgs, CliError, DensityArgs, FitArgs, KlArgs, MemScoresArgs, ReduceArgs,
};

type CmdResult = Result<(), CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io { path: path.to_path_buf(), source },
        kind => Error::Format(format!("{}: {kind:?}", path.display())),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), Error> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, Error> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json value serializes"));
}

fn create_dir(path: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn config_json(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

/// JSON has no infinities; those are written as the string "inf".
fn json_f64(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn kl_json(e: &KlEstimate) -> serde_json::Value {
    json!({
        "estimate": json_f64(e.estimate),
        "stderr": json_f64(e.stderr),
        "n_snapshots": e.n_snapshots,
        "samples_per_snapshot": e.samples_per_snapshot,
        "infinite_terms": e.infinite_terms,
    })
}

pub fn inspect(file: &Path) -> CmdResult {
    let data = load_representations(file)?;
    let histogram: BTreeMap<String, usize> =
        data.class_histogram().into_iter().map(|(c, n)| (c.to_string(), n)).collect();
    print_json(&json!({
        "path": file.display().to_string(),
        "n": data.len(),
        "d": data.dim(),
        "stage": data.stage(),
        "precision": format!("{:?}", data.precision()).to_lowercase(),
        "classes": histogram,
        // loading rejects non-finite rows, so a successful load means finite
        "finite": true,
    }));
    Ok(())
}

pub fn reduce(a: &ReduceArgs) -> CmdResult {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let data = load_representations(&a.input)?;
    let target = match (a.dims, a.variance) {
        (Some(k), _) => SvdTarget::Dims(k),
        (None, Some(f)) => SvdTarget::VarianceFraction(f),
        (None, None) => {
            let k = *cfg.svd.targets.get(a.stage_index).ok_or_else(|| {
                Error::Configuration(format!(
                    "stage index {} but only {} svd targets are configured",
                    a.stage_index,
                    cfg.svd.targets.len()
                ))
            })?;
            SvdTarget::Dims(k)
        }
    };
    let (reduced, projection) = svd_reduce(&data, target)?;
    write_representations(&a.out, &reduced)?;

    let mut manifest = Manifest::new(
        "reduce",
        json!({ "target": format!("{target:?}"), "stage_index": a.stage_index, "run": config_json(&cfg) }),
    );
    manifest.input(&a.input)?;
    manifest.output(&a.out)?;
    manifest.write(&sidecar(&a.out, ".manifest.json"))?;
    print_json(&json!({
        "input_dim": data.dim(),
        "output_dim": projection.output_dim(),
        "variance_captured": projection.variance_captured,
    }));
    Ok(())
}

/// Rows of one class, refusing an empty selection.
fn class_rows(data: &RepresentationDataset, class: u32, path: &Path) -> Result<RepresentationDataset, Error> {
    let idx = data.class_indices(class);
    if idx.is_empty() {
        return Err(Error::EmptySubset(format!("class {class} has no rows in {}", path.display())));
    }
    Ok(data.select(&idx))
}

struct Fitted {
    meta: ArchiveMeta,
    model: PredictiveModel,
}

fn fit_class(input: &Path, input_sha256: &str, cfg: &RunConfig, class: u32, rows: RepresentationDataset) -> Result<Fitted, Error> {
    let seed = derive_seed(cfg.seed, SEED_FIT, u64::from(class));
    let rows = rows.into_rows();
    let prior = derive_prior(rows.view())?;
    let snapshots = run(rows.view(), &prior, &cfg.sampler_config(seed))?;
    let meta = ArchiveMeta {
        input: input.display().to_string(),
        input_sha256: input_sha256.to_string(),
        class,
        n: rows.nrows(),
        d: rows.ncols(),
        seed,
        sampler: cfg.sampler.clone(),
    };
    let model = PredictiveModel::new(snapshots, rows, prior)?;
    Ok(Fitted { meta, model })
}

pub fn fit(a: &FitArgs) -> CmdResult {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let data = load_representations(&a.input)?;
    let rows = class_rows(&data, a.class, &a.input)?;
    let fitted = fit_class(&a.input, &sha256_file(&a.input)?, &cfg, a.class, rows)?;
    let meta_path = save_archive(&a.out, &fitted.meta, fitted.model.snapshots())?;

    let mut manifest = Manifest::new("fit", json!({ "class": a.class, "run": config_json(&cfg) }));
    manifest.input(&a.input)?;
    manifest.output(&a.out)?;
    manifest.output(&meta_path)?;
    manifest.write(&sidecar(&a.out, ".manifest.json"))?;
    let counts: Vec<usize> = fitted.model.snapshots().iter().map(|s| s.component_count()).collect();
    print_json(&json!({
        "class": a.class,
        "n": fitted.meta.n,
        "d": fitted.meta.d,
        "snapshots": counts.len(),
        "component_counts": counts,
        "alphas": fitted.model.snapshots().iter().map(|s| s.alpha).collect::<Vec<f64>>(),
    }));
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct DensityRow {
    example_id: usize,
    label: u32,
    log_density: f64,
}

fn log_densities(model: &PredictiveModel, data: &RepresentationDataset) -> Result<Vec<f64>, Error> {
    if data.dim() != model.prior().dim() {
        return Err(Error::Parameter(format!(
            "rows are {}-dimensional, model is {}-dimensional",
            data.dim(),
            model.prior().dim()
        )));
    }
    Ok((0..data.len())
        .into_par_iter()
        .map(|i| model.posterior_predictive_logpdf(data.row(i)))
        .collect())
}

pub fn density(a: &DensityArgs) -> CmdResult {
    let loaded = load_archive(&a.model)?;
    let data = load_representations(&a.repr)?;
    let logp = log_densities(&loaded.model, &data)?;
    write_csv(
        &a.out,
        logp.iter().enumerate().map(|(i, &l)| DensityRow { example_id: i, label: data.labels()[i], log_density: l }),
    )?;
    Ok(())
}

pub fn kl(a: &KlArgs) -> CmdResult {
    let p = load_archive(&a.p)?.model;
    let mut kl_cfg = RunConfig::default().kl_config(a.seed);
    if let Some(m) = a.m {
        kl_cfg.samples_per_snapshot = m;
    }
    let est = if a.q == "maxent" {
        let q = max_entropy_reference(p.data())?;
        kl_to_reference(&p, &q, &kl_cfg)?
    } else {
        let q = load_archive(Path::new(&a.q))?.model;
        kl_between_predictives(&p, &q, &kl_cfg)?
    };
    print_json(&kl_json(&est));
    Ok(())
}

#[derive(Debug, Deserialize)]
struct ScoreRow {
    example_id: usize,
    score: f64,
}

#[derive(Debug, Serialize)]
struct ScoreOut {
    example_id: usize,
    score: f64,
}

/// Scores indexed by example id; every id in `0..n` must appear exactly once.
fn read_scores(path: &Path, n: usize) -> Result<Vec<f64>, Error> {
    let rows: Vec<ScoreRow> = read_csv(path)?;
    let mut scores = vec![None; n];
    for r in rows {
        let slot = scores
            .get_mut(r.example_id)
            .ok_or_else(|| Error::Validation(format!("{}: example_id {} out of range 0..{n}", path.display(), r.example_id)))?;
        if slot.replace(r.score).is_some() {
            return Err(Error::Validation(format!("{}: duplicate example_id {}", path.display(), r.example_id)));
        }
    }
    let missing: Vec<usize> = (0..n).filter(|&i| scores[i].is_none()).collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!("{}: no score for examples {missing:?}", path.display())));
    }
    Ok(scores.into_iter().map(Option::unwrap).collect())
}

fn opt_pool(threads: Option<usize>) -> Result<Option<rayon::ThreadPool>, Error> {
    match threads {
        None => Ok(None),
        Some(0) => Err(Error::Parameter("--parallel-classes must be at least 1".into())),
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map(Some)
            .map_err(|e| Error::Configuration(e.to_string())),
    }
}

#[derive(Serialize)]
struct ClassStatRow {
    class: u32,
    count: usize,
    mean: f64,
    std: f64,
    group: &'static str,
}

#[derive(Serialize)]
struct BinRow {
    bin: usize,
    size: usize,
    mean_log_density: f64,
    std_log_density: f64,
    mean_memorization: Option<f64>,
    std_memorization: Option<f64>,
    low_fraction: Option<f64>,
    high_fraction: Option<f64>,
}

#[derive(Serialize)]
struct KlRow {
    from: u32,
    to: u32,
    estimate: f64,
    stderr: f64,
    infinite_terms: usize,
}

#[derive(Serialize)]
struct PredictionRow {
    example_id: usize,
    label: u32,
    predicted: u32,
}

pub fn analyze(a: &AnalyzeArgs) -> CmdResult {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let data = load_representations(&a.input)?;
    let test = a.test.as_deref().map(load_representations).transpose()?;
    let memorization = match (&a.memorization, &a.trials) {
        (Some(p), _) => Some(read_scores(p, data.len())?),
        (None, Some(p)) => {
            let scores = memorization_from_trials(&TrialRecords::load(p)?)?;
            if scores.len() != data.len() {
                return Err(Error::Validation(format!(
                    "{} holds {} examples, {} has {}",
                    p.display(),
                    scores.len(),
                    a.input.display(),
                    data.len()
                ))
                .into());
            }
            Some(scores)
        }
        (None, None) => None,
    };
    let models_dir = a.out_dir.join("models");
    create_dir(&models_dir)?;

    let input_sha = sha256_file(&a.input)?;
    let by_class: Vec<(u32, RepresentationDataset)> = split_by_class(&data).into_iter().collect();
    let fit_all = || {
        by_class
            .into_par_iter()
            .map(|(c, rows)| fit_class(&a.input, &input_sha, &cfg, c, rows).map(|f| (c, f)))
            .collect::<Result<Vec<_>, Error>>()
    };
    let fitted = match opt_pool(a.parallel_classes)? {
        Some(pool) => pool.install(fit_all)?,
        None => fit_all()?,
    };

    let mut outputs: Vec<PathBuf> = Vec::new();
    let mut models = BTreeMap::new();
    for (c, f) in fitted {
        let archive = models_dir.join(format!("class_{c}.dpss"));
        outputs.push(save_archive(&archive, &f.meta, f.model.snapshots())?);
        outputs.push(archive);
        models.insert(c, f.model);
    }

    let report = class_log_density_stats(&models, &data)?;
    let groups = (report.classes.len() >= 2).then(|| detect_density_groups(&report.class_means())).transpose()?;
    let class_groups = groups.as_ref().map(|g| report.class_groups(g));

    let stats_path = a.out_dir.join("class_stats.csv");
    write_csv(
        &stats_path,
        report.classes.iter().map(|s| ClassStatRow {
            class: s.class,
            count: s.count,
            mean: s.mean,
            std: s.std,
            group: match &class_groups {
                Some(g) if g.low.contains(&s.class) => "low",
                Some(g) if g.high.contains(&s.class) => "high",
                _ => "",
            },
        }),
    )?;
    outputs.push(stats_path);

    let densities_path = a.out_dir.join("example_density.csv");
    write_csv(
        &densities_path,
        report
            .records
            .iter()
            .map(|r| DensityRow { example_id: r.example, label: r.class, log_density: r.log_density }),
    )?;
    outputs.push(densities_path);

    let bins = cfg.bins.min(data.len());
    let binning = density_bins(&report, memorization.as_deref(), class_groups.as_ref(), bins)?;
    let bins_path = a.out_dir.join("bins.csv");
    write_csv(
        &bins_path,
        binning.summaries.iter().map(|s| BinRow {
            bin: s.bin,
            size: s.size,
            mean_log_density: s.mean_log_density,
            std_log_density: s.std_log_density,
            mean_memorization: s.mean_memorization,
            std_memorization: s.std_memorization,
            low_fraction: s.low_fraction,
            high_fraction: s.high_fraction,
        }),
    )?;
    outputs.push(bins_path);

    let kl_cfg = cfg.kl_config(derive_seed(cfg.seed, SEED_KL, 0));
    let kl_summary = match between_class_kl_matrix(&models, &kl_cfg, cfg.min_class_size) {
        Ok(m) => {
            let path = a.out_dir.join("kl_matrix.csv");
            let rows = m.classes.iter().enumerate().flat_map(|(i, &from)| {
                m.classes.iter().enumerate().map(move |(j, &to)| (i, j, from, to))
            });
            write_csv(
                &path,
                rows.map(|(i, j, from, to)| {
                    let e = &m.entries[i][j];
                    KlRow { from, to, estimate: e.estimate, stderr: e.stderr, infinite_terms: e.infinite_terms }
                }),
            )?;
            outputs.push(path);
            json!({
                "classes": m.classes,
                "off_diagonal_mean": json_f64(m.off_diagonal_mean),
                "off_diagonal_std": json_f64(m.off_diagonal_std),
            })
        }
        Err(Error::Parameter(msg)) => json!({ "skipped": msg }),
        Err(e) => return Err(e.into()),
    };

    let eval = test.as_ref().unwrap_or(&data);
    let classification = generative_classify(&models, &empirical_priors(&models), eval.rows(), Some(eval.labels()))?;
    let pred_path = a.out_dir.join("predictions.csv");
    write_csv(
        &pred_path,
        classification.predictions.iter().enumerate().map(|(i, &p)| PredictionRow {
            example_id: i,
            label: eval.labels()[i],
            predicted: p,
        }),
    )?;
    outputs.push(pred_path);

    let subsets = match &memorization {
        Some(scores) => match select_memorization_subsets(
            scores,
            data.labels(),
            cfg.memorization_threshold,
            cfg.min_class_size,
            derive_seed(cfg.seed, SEED_SUBSETS, 0),
        ) {
            Ok(s) => json!({
                "memorized": s.memorized.len(),
                "eligible_classes": s.eligible_classes,
                "memorized_ids": s.memorized,
                "least_memorized_ids": s.least_memorized,
                "random_ids": s.random,
            }),
            Err(Error::EmptySubset(msg)) => json!({ "skipped": msg }),
            Err(e) => return Err(e.into()),
        },
        None => serde_json::Value::Null,
    };

    let summary_path = a.out_dir.join("summary.json");
    let summary = json!({
        "classes": report.classes.len(),
        "examples": data.len(),
        "bins": bins,
        "groups": groups.as_ref().map(|g| json!({
            "separation": json_f64(g.separation),
            "threshold": g.threshold,
            "bimodal": g.is_bimodal(),
            "low": class_groups.as_ref().map(|cg| cg.low.iter().copied().collect::<Vec<u32>>()),
            "high": class_groups.as_ref().map(|cg| cg.high.iter().copied().collect::<Vec<u32>>()),
        })),
        "kl_matrix": kl_summary,
        "classification": {
            "evaluated_on": if test.is_some() { "test" } else { "input" },
            "macro_f": classification.macro_f,
            "per_class_f": classification.per_class_f.iter().map(|(c, f)| (c.to_string(), *f)).collect::<BTreeMap<String, f64>>(),
        },
        "memorization_subsets": subsets,
    });
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    std::fs::write(&summary_path, text).map_err(io_err(&summary_path))?;
    outputs.push(summary_path);

    let mut manifest = Manifest::new(
        "analyze",
        json!({
            "test": a.test.as_ref().map(|p| p.display().to_string()),
            "run": config_json(&cfg),
        }),
    );
    manifest.input(&a.input)?;
    for p in [&a.test, &a.memorization, &a.trials].into_iter().flatten() {
        manifest.input(p)?;
    }
    for p in &outputs {
        manifest.output(p)?;
    }
    manifest.write(&a.out_dir.join("manifest.json"))?;
    Ok(())
}

pub fn classify(a: &ClassifyArgs) -> CmdResult {
    let mut models = BTreeMap::new();
    for path in &a.models {
        let loaded = load_archive(path)?;
        let class = loaded.meta.class;
        if models.insert(class, loaded.model).is_some() {
            return Err(Error::Configuration(format!("two models given for class {class}")).into());
        }
    }
    let data = load_representations(&a.repr)?;
    let result = generative_classify(&models, &empirical_priors(&models), data.rows(), Some(data.labels()))?;
    write_csv(
        &a.out,
        result.predictions.iter().enumerate().map(|(i, &p)| PredictionRow {
            example_id: i,
            label: data.labels()[i],
            predicted: p,
        }),
    )?;
    print_json(&json!({
        "macro_f": result.macro_f,
        "per_class_f": result.per_class_f.iter().map(|(c, f)| (c.to_string(), *f)).collect::<BTreeMap<String, f64>>(),
    }));
    Ok(())
}

#[derive(Serialize)]
struct CertifyRow {
    example_id: usize,
    label: u32,
    abstain: bool,
    class: Option<u32>,
    p_lower: Option<f64>,
    radius: Option<f64>,
}

#[derive(Serialize)]
struct CertifyBinRow {
    bin: usize,
    count: usize,
    mean_radius: Option<f64>,
    std_radius: Option<f64>,
    classification_rate: Option<f64>,
    f_score_abstain_as_error: Option<f64>,
    f_score_certified_only: Option<f64>,
}

pub fn certify(a: &CertifyArgs) -> CmdResult {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let cert_cfg = cfg.certify_config();
    let data = load_representations(&a.points)?;

    // Read before running the classifier so a bad file fails fast.
    let density = a
        .density
        .as_deref()
        .map(|p| {
            let rows: Vec<DensityRow> = read_csv(p)?;
            if rows.len() != data.len() || rows.iter().enumerate().any(|(i, r)| r.example_id != i) {
                return Err(Error::Validation(format!(
                    "{} must list example_id 0..{} in order",
                    p.display(),
                    data.len()
                )));
            }
            Ok(rows)
        })
        .transpose()?;

    let mut classifier = SubprocessClassifier::spawn(&a.classifier)?;
    let mut outcomes = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        // one stream per point, so results do not depend on evaluation order
        let mut rng = ChaCha8Rng::seed_from_u64(cert_cfg.seed);
        rng.set_stream(i as u64);
        let x = ndarray::ArrayView1::from(data.row(i));
        outcomes.push(certify_point(&mut classifier, x, &cert_cfg, &mut rng)?);
    }
    classifier.finish()?;

    write_csv(
        &a.out,
        outcomes.iter().enumerate().map(|(i, o)| {
            let (class, p_lower, radius) = match *o {
                CertifyOutcome::Abstain => (None, None, None),
                CertifyOutcome::Certified { class, radius, p_lower } => (Some(class), Some(p_lower), Some(radius)),
            };
            CertifyRow { example_id: i, label: data.labels()[i], abstain: o.is_abstain(), class, p_lower, radius }
        }),
    )?;
    let mut manifest = Manifest::new(
        "certify",
        json!({ "classifier": a.classifier, "run": config_json(&cfg) }),
    );
    manifest.input(&a.points)?;
    manifest.output(&a.out)?;

    if let (Some(rows), Some(path)) = (density, &a.density) {
        manifest.input(path)?;
        let report = ClassDensityReport {
            classes: vec![],
            records: rows
                .iter()
                .map(|r| ExampleLogDensity { example: r.example_id, class: r.label, log_density: r.log_density })
                .collect(),
        };
        let bins = cfg.bins.min(data.len());
        let binning = density_bins(&report, None, None, bins)?;
        let mut binned = Vec::with_capacity(outcomes.len());
        for (bin, members) in binning.bins.iter().enumerate() {
            for &i in members {
                binned.push(BinnedOutcome { bin, truth: data.labels()[i], outcome: outcomes[i] });
            }
        }
        let bins_path = sidecar(&a.out, ".bins.csv");
        write_csv(
            &bins_path,
            certification_report(&binned, bins).into_iter().map(|b| CertifyBinRow {
                bin: b.bin,
                count: b.count,
                mean_radius: b.mean_radius,
                std_radius: b.std_radius,
                classification_rate: b.classification_rate,
                f_score_abstain_as_error: b.f_score_abstain_as_error,
                f_score_certified_only: b.f_score_certified_only,
            }),
        )?;
        manifest.output(&bins_path)?;
    }
    manifest.write(&sidecar(&a.out, ".manifest.json"))?;
    let certified = outcomes.iter().filter(|o| !o.is_abstain()).count();
    print_json(&json!({ "points": outcomes.len(), "certified": certified, "abstained": outcomes.len() - certified }));
    Ok(())
}

pub fn mem_scores(a: &MemScoresArgs) -> CmdResult {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let records = TrialRecords::load(&a.trials)?;
    let scores = memorization_from_trials(&records)?;
    write_csv(&a.out, scores.iter().enumerate().map(|(i, &s)| ScoreOut { example_id: i, score: s }))?;
    if let Some(labels_path) = &a.labels {
        let data = load_representations(labels_path)?;
        let s = select_memorization_subsets(
            &scores,
            data.labels(),
            cfg.memorization_threshold,
            cfg.min_class_size,
            derive_seed(cfg.seed, SEED_SUBSETS, 0),
        )?;
        let path = sidecar(&a.out, ".subsets.json");
        let v = json!({
            "threshold": cfg.memorization_threshold,
            "min_class_size": cfg.min_class_size,
            "memorized": s.memorized,
            "least_memorized": s.least_memorized,
            "random": s.random,
            "eligible_classes": s.eligible_classes,
        });
        let mut text = serde_json::to_string_pretty(&v).expect("subsets serialize");
        text.push('\n');
        std::fs::write(&path, text).map_err(io_err(&path))?;
    }
    Ok(())
}
