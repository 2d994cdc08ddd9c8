use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lccm::data::{
    dump_dataset, load_dataset, load_dataset_aligned, simulate_dataset, standardize, AttributeSampler, ChoiceDataset,
    StandardizationRecord,
};
use lccm::em::{
    fit_gbm_lccm, fit_lccm, predict as predict_model, run_restarts, ChoiceStart, FitResult, FittedModel, GbmInit,
    GbmLccmParams, LccmInit, ModelKind, ModelParams, ModelSpec,
};
use lccm::kv::KvDoc;
use lccm::metrics::{
    class_profile, cross_validate, lccm_class_profile, standard_errors, summary_table, CvSettings, ModelSummary,
    ParamEstimate,
};
use lccm::mixture::GbmMembershipParams;
use lccm::mnl::{weighted_panel_loglik, MnlParams};

use crate::config::{InitMode, RunArgs, RunConfig};
use crate::{ConfigError, EstimationError};

const GRADCHECK_STEP: f64 = 1e-5;
const GRADCHECK_TOL: f64 = 1e-6;

fn set_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(ConfigError("threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| ConfigError(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn out_dir(out: Option<&Path>) -> Result<Option<PathBuf>> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            Ok(Some(dir.to_path_buf()))
        }
        None => Ok(None),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Reads the dataset and applies the configured standardization.
fn load(run: &RunConfig) -> Result<(ChoiceDataset, StandardizationRecord)> {
    let ds = load_dataset(&run.data, &run.schema).with_context(|| format!("loading {}", run.data.display()))?;
    info!("{} persons, {} situations, {} alternatives", ds.n_persons(), ds.n_situations(), ds.alt_count());
    if run.standardize.is_empty() {
        return Ok((ds, StandardizationRecord::default()));
    }
    let vars = StandardizationRecord::resolve(&ds, &run.standardize)?;
    Ok(standardize(&ds, &vars)?)
}

fn fit(ds: &ChoiceDataset, run: &RunConfig) -> Result<FitResult> {
    let (seed, em) = (run.plan.seed, &run.plan.em);
    let result = match (run.kind, run.init) {
        (ModelKind::Gbm(s), InitMode::KMeans) => {
            fit_gbm_lccm(ds, run.classes, s, &GbmInit::KMeans(ChoiceStart::Zero), seed, em)
        }
        (ModelKind::Gbm(s), InitMode::Random) => {
            fit_gbm_lccm(ds, run.classes, s, &GbmInit::Random(ChoiceStart::Random), seed, em)
        }
        (ModelKind::Lccm, InitMode::Random) => {
            let init = LccmInit::Start { membership: ChoiceStart::Random, choice: ChoiceStart::Random };
            fit_lccm(ds, run.classes, &init, seed, em)
        }
        _ => run_restarts(ds, &ModelSpec { kind: run.kind, classes: run.classes }, &run.plan),
    };
    result.map_err(|e| anyhow::Error::new(e).context("estimation failed"))
}

fn label(run: &RunConfig) -> String {
    match run.kind.structure() {
        Some(s) => format!("{} {s}", run.kind.tag()),
        None => run.kind.tag().to_string(),
    }
}

fn convergence_log(fit: &FitResult) -> String {
    let mut s = String::new();
    writeln!(s, "# restarts").unwrap();
    writeln!(s, "restart\tstart\titerations\tconverged\tmarginal_ll\tjoint_ll\terror").unwrap();
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.6}"));
    for r in &fit.restarts {
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            r.stream,
            r.label,
            r.iterations,
            r.converged,
            opt(r.marginal_ll),
            opt(r.joint_ll),
            r.error.as_deref().unwrap_or("-")
        )
        .unwrap();
    }
    writeln!(s, "# best fit: {} iterations, converged {}", fit.iterations, fit.converged).unwrap();
    writeln!(s, "iteration\tobjective").unwrap();
    for (i, v) in fit.ll_trace.iter().enumerate() {
        writeln!(s, "{i}\t{v:.10}").unwrap();
    }
    s
}

fn parameter_table(estimates: &[ParamEstimate]) -> String {
    let width = estimates.iter().map(|e| e.name.len()).max().unwrap_or(4).max(9);
    let mut s = format!("{:<width$}  {:>12}  {:>10}  {:>8}\n", "parameter", "estimate", "std.err", "p");
    let opt = |v: Option<f64>, prec: usize| v.map_or("-".to_string(), |v| format!("{v:.prec$}"));
    for e in estimates {
        writeln!(s, "{:<width$}  {:>12.4}  {:>10}  {:>8}", e.name, e.value, opt(e.se, 4), opt(e.p_value, 3)).unwrap();
    }
    s
}

pub fn estimate(args: &RunArgs, se: bool, threads: Option<usize>) -> Result<()> {
    let run = RunConfig::resolve(args)?;
    set_threads(threads.or(run.threads))?;
    let (ds, record) = load(&run)?;
    let fit = fit(&ds, &run)?;
    let summary = ModelSummary::new(label(&run), &fit, ds.n_situations());
    let table = summary_table(std::slice::from_ref(&summary));
    print!("{table}");
    let estimates = if se { Some(standard_errors(&ds, &fit.params)?) } else { None };
    if let Some(est) = &estimates {
        print!("\n{}", parameter_table(est));
    }
    if let Some(dir) = out_dir(run.out.as_deref())? {
        FittedModel::new(&fit, &ds, run.schema.clone(), record).write(&dir.join("model.kv"))?;
        write_file(&dir.join("summary.txt"), &table)?;
        write_file(&dir.join("summary.kv"), &summary.to_kv().to_string())?;
        write_file(&dir.join("convergence.log"), &convergence_log(&fit))?;
        if let Some(est) = &estimates {
            write_file(&dir.join("parameters.txt"), &parameter_table(est))?;
        }
        info!("wrote results to {}", dir.display());
    }
    Ok(())
}

pub fn predict(model_path: &Path, data: &Path, out: Option<&Path>) -> Result<()> {
    let model = FittedModel::read(model_path).with_context(|| format!("reading model {}", model_path.display()))?;
    let raw = load_dataset_aligned(data, &model.schema, &model.alt_ids)
        .with_context(|| format!("loading {}", data.display()))?;
    let ds = model.standardization.apply(&raw)?;
    let prediction = predict_model(&model.params, &ds)?;
    println!("predictive LL: {:.6}", prediction.total_ll);
    if let Some(dir) = out_dir(out)? {
        let path = dir.join("probabilities.csv");
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        let mut header = vec!["person".to_string(), "situation".to_string(), "chosen".to_string()];
        header.extend(model.alt_ids.iter().cloned());
        w.write_record(&header)?;
        let mut probs = prediction.probs.iter();
        for person in ds.persons() {
            for (t, sit) in person.situations.iter().enumerate() {
                let row = probs.next().expect("one probability row per situation");
                let mut rec = vec![person.id.clone(), t.to_string(), model.alt_ids[sit.chosen()].clone()];
                rec.extend(row.iter().map(|p| format!("{p:?}")));
                w.write_record(&rec)?;
            }
        }
        w.flush().with_context(|| format!("writing {}", path.display()))?;
        let mut doc = KvDoc::new();
        doc.push_floats("pred_ll", &[prediction.total_ll]);
        doc.push("persons", ds.n_persons());
        doc.push("situations", ds.n_situations());
        write_file(&dir.join("prediction.kv"), &doc.to_string())?;
    }
    Ok(())
}

pub fn cv(args: &RunArgs, folds: Option<usize>, fold_seed: Option<u64>, threads: Option<usize>) -> Result<()> {
    let run = RunConfig::resolve(args)?;
    set_threads(threads.or(run.threads))?;
    let ds = load_dataset(&run.data, &run.schema).with_context(|| format!("loading {}", run.data.display()))?;
    let k = folds.or(run.folds).unwrap_or(5);
    let settings = CvSettings { plan: run.plan.clone(), standardize: StandardizationRecord::resolve(&ds, &run.standardize)? };
    let spec = ModelSpec { kind: run.kind, classes: run.classes };
    let report = cross_validate(&ds, &spec, k, fold_seed.unwrap_or(run.plan.seed), &settings)?;
    let mut text = String::from("fold\ttrain\ttest\tpred_ll\n");
    let mut doc = KvDoc::new();
    doc.push("model", label(&run));
    doc.push("classes", run.classes);
    doc.push("folds", k);
    for (i, f) in report.folds.iter().enumerate() {
        let ll = match (f.pred_ll, &f.error) {
            (Some(v), _) => format!("{v:.6}"),
            (None, e) => format!("failed: {}", e.as_deref().unwrap_or("unknown")),
        };
        writeln!(text, "{}\t{}\t{}\t{ll}", i + 1, f.train_persons, f.test_persons).unwrap();
        match f.pred_ll {
            Some(v) => doc.push_floats(format!("fold.{i}.pred_ll"), &[v]),
            None => doc.push(format!("fold.{i}.error"), f.error.as_deref().unwrap_or("unknown").replace('\n', " ")),
        }
    }
    if let Some(mean) = report.mean() {
        writeln!(text, "mean\t\t\t{mean:.6}").unwrap();
        doc.push_floats("mean_pred_ll", &[mean]);
    }
    print!("{text}");
    if let Some(dir) = out_dir(run.out.as_deref())? {
        write_file(&dir.join("cv.txt"), &text)?;
        write_file(&dir.join("cv.kv"), &doc.to_string())?;
    }
    if report.failed() > 0 {
        return Err(EstimationError(format!("{} of {k} folds failed", report.failed())).into());
    }
    Ok(())
}

/// Parameter file for `simulate`: `beta.<k>` rows, a `membership.` section
/// and a `sampler.` section describing the attribute distributions.
fn read_truth(path: &Path) -> Result<(GbmLccmParams, AttributeSampler)> {
    let doc = KvDoc::read(path)?;
    let membership = GbmMembershipParams::from_kv(&doc.section("membership"))?;
    let betas = (0..membership.class_count())
        .map(|k| MnlParams::new(doc.floats(&format!("beta.{k}"))?))
        .collect::<lccm::Result<Vec<_>>>()?;
    let sampler = AttributeSampler::from_kv(&doc.section("sampler"))?;
    Ok((GbmLccmParams { membership, betas }, sampler))
}

pub fn simulate(params: &Path, n: usize, t: usize, seed: u64, out: &Path) -> Result<()> {
    let (truth, sampler) = read_truth(params).with_context(|| format!("reading parameters {}", params.display()))?;
    let sim = simulate_dataset(&truth, n, t, &sampler, seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    dump_dataset(&sim.dataset, out, None)?;
    println!("wrote {} persons, {} situations to {}", n, sim.dataset.n_situations(), out.display());
    Ok(())
}

pub fn profile(model_path: &Path, data: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let model = FittedModel::read(model_path).with_context(|| format!("reading model {}", model_path.display()))?;
    let profile = match &model.params {
        ModelParams::Mnl(_) => return Err(ConfigError("a single-class logit has no class profile".into()).into()),
        ModelParams::Gbm(p) => class_profile(p, &model.standardization, &model.cont_names, &model.bin_names)?,
        ModelParams::Lccm(p) => {
            let data = data.ok_or_else(|| ConfigError("logit-membership profiles need the training data (--data)".into()))?;
            let raw = load_dataset_aligned(data, &model.schema, &model.alt_ids)
                .with_context(|| format!("loading {}", data.display()))?;
            lccm_class_profile(&model.standardization.apply(&raw)?, p, &model.standardization)?
        }
    };
    print!("{profile}");
    if let Some(dir) = out_dir(out)? {
        write_file(&dir.join("profile.txt"), &profile.to_string())?;
        write_file(&dir.join("profile.kv"), &profile.to_kv().to_string())?;
    }
    Ok(())
}

pub fn gradcheck(args: &RunArgs, draws: usize) -> Result<()> {
    let run = RunConfig::resolve(args)?;
    let (ds, _) = load(&run)?;
    let mut rng = ChaCha8Rng::seed_from_u64(run.plan.seed);
    let p = ds.attr_count();
    let mut worst = 0.0f64;
    for _ in 0..draws {
        let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..ds.n_persons()).map(|_| rng.random_range(0.0..1.0)).collect();
        let (_, grad) = weighted_panel_loglik(&ds, &beta, &w)?;
        let mut probe = beta.clone();
        for i in 0..p {
            probe[i] = beta[i] + GRADCHECK_STEP;
            let up = weighted_panel_loglik(&ds, &probe, &w)?.0;
            probe[i] = beta[i] - GRADCHECK_STEP;
            let down = weighted_panel_loglik(&ds, &probe, &w)?.0;
            probe[i] = beta[i];
            let fd = (up - down) / (2.0 * GRADCHECK_STEP);
            worst = worst.max((grad[i] - fd).abs() / fd.abs().max(1.0));
        }
    }
    println!("max relative gradient error over {draws} draws: {worst:.3e}");
    if worst >= GRADCHECK_TOL {
        return Err(EstimationError(format!("gradient error {worst:.3e} exceeds {GRADCHECK_TOL:e}")).into());
    }
    Ok(())
}
