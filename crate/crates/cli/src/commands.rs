use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ertalign::heatmap::{synthesize, write_maps};
use ertalign::pipeline::{cross_matrix, evaluate, predict_dataset, train_model, Ablation, MapFiles};
use ertalign::shape::{load_dataset, save_dataset, FACE_SIZE};
use ertalign::synth::{generate_corpus, map_seed};
use ertalign::{load_model, save_model, CascadeModel, Dataset, Shape};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::source::Source;
use crate::CliError;

fn output_dir(cfg: &RunConfig) -> Result<&Path, CliError> {
    fs::create_dir_all(&cfg.output)
        .map_err(|e| CliError::Usage(format!("cannot create output directory {}: {e}", cfg.output.display())))?;
    Ok(&cfg.output)
}

fn required<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf, CliError> {
    path.as_ref().ok_or_else(|| CliError::Usage(format!("no {what} given")))
}

fn load(cfg: &RunConfig, path: &Path) -> Result<Dataset<f64>, CliError> {
    load_dataset(path, cfg.schema()?).map_err(|e| match e {
        ertalign::Error::Io(io) => CliError::Core(ertalign::Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display())))),
        other => other.into(),
    })
}

fn model_path(cfg: &RunConfig) -> PathBuf {
    cfg.model.clone().unwrap_or_else(|| cfg.output.join("model.ert"))
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    count: usize,
    map_seed: u64,
    maps_written: bool,
    annotations: &'a str,
    corpus: ertalign::synth::CorpusConfig,
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let out = output_dir(cfg)?;
    let corpus_cfg = cfg.corpus_config();
    let corpus = generate_corpus(&corpus_cfg, cfg.schema()?, &cfg.assets()?.model3d)?;
    save_dataset(&corpus.dataset, out.join("annotations.jsonl"))?;
    if cfg.write_maps {
        let files = MapFiles { dir: out.join("maps") };
        fs::create_dir_all(&files.dir)?;
        let synth_cfg = cfg.synth_config();
        corpus.dataset.samples.par_iter().try_for_each(|s| {
            let maps = synthesize::<f64>(s, (FACE_SIZE, FACE_SIZE), &synth_cfg, map_seed(cfg.map_seed, &s.image));
            write_maps(&maps, files.path_for(&s.image))
        })?;
    }
    let manifest = Manifest {
        seed: cfg.seed,
        count: cfg.count,
        map_seed: cfg.map_seed,
        maps_written: cfg.write_maps,
        annotations: "annotations.jsonl",
        corpus: corpus_cfg,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Usage(e.to_string()))?;
    fs::write(out.join("manifest.json"), json + "\n")?;
    println!("wrote {} faces to {}", corpus.dataset.len(), out.display());
    Ok(())
}

fn fit(cfg: &RunConfig, data: &Dataset<f64>, source: &Source) -> Result<(CascadeModel<f64>, String), CliError> {
    let (model, log) = train_model(data, source, &cfg.assets()?, &cfg.pipeline(), None)?;
    Ok((model, log.to_string()))
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load(cfg, required(&cfg.train_data, "training data (--data)")?)?;
    let out = output_dir(cfg)?;
    let (model, log) = fit(cfg, &data, &Source::from_config(cfg))?;
    let path = model_path(cfg);
    save_model(&model, &path)?;
    fs::write(out.join("train.log"), log.clone() + "\n")?;
    println!("{}", log.lines().last().unwrap_or(""));
    println!("wrote {}", path.display());
    Ok(())
}

pub fn predict(cfg: &RunConfig) -> Result<(), CliError> {
    let model = load_model::<f64>(model_path(cfg))?;
    let data = load(cfg, required(&cfg.test_data, "data (--data)")?)?;
    let out = output_dir(cfg)?;
    let preds = predict_dataset(&model, &data, &Source::from_config(cfg))?;
    let mut predicted = data.clone();
    for (s, p) in predicted.samples.iter_mut().zip(preds) {
        s.ground_truth = Shape { annotated: vec![true; p.shape.len()], ..p.shape };
        s.initial = None;
    }
    save_dataset(&predicted, out.join("predictions.jsonl"))?;
    println!("wrote {} predictions", predicted.len());
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let model = load_model::<f64>(model_path(cfg))?;
    let data = load(cfg, required(&cfg.test_data, "test data (--data)")?)?;
    if data.schema.names() != model.schema.names() {
        return Err(ertalign::Error::Schema("model and test set use different schemas".into()).into());
    }
    let out = output_dir(cfg)?;
    let report = evaluate(&model, &data, &Source::from_config(cfg), cfg.normalization, cfg.epsilon)?;
    let names = model.schema.names();
    fs::write(out.join("report.txt"), report.to_text(Some(&names)))?;
    fs::write(out.join("ced.txt"), report.ced_text())?;
    println!("nme {:.4} auc {:.4} fr {:.2}", report.nme, report.auc, report.fr);
    Ok(())
}

fn label(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

pub fn cross(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.cross_train.is_empty() || cfg.cross_train.len() != cfg.cross_test.len() {
        return Err(CliError::Usage("cross needs matching --train and --test lists".into()));
    }
    let out = output_dir(cfg)?;
    let source = Source::from_config(cfg);
    let train: Vec<Dataset<f64>> = cfg.cross_train.iter().map(|p| load(cfg, p)).collect::<Result<_, _>>()?;
    let mut tests: Vec<Dataset<f64>> = cfg.cross_test.iter().map(|p| load(cfg, p)).collect::<Result<_, _>>()?;
    let mut rows: Vec<String> = cfg.cross_train.iter().map(|p| label(p)).collect();
    let mut cols: Vec<String> = cfg.cross_test.iter().map(|p| label(p)).collect();
    let mut models = train.iter().map(|d| fit(cfg, d, &source).map(|m| m.0)).collect::<Result<Vec<_>, _>>()?;
    if cfg.pooled && train.len() > 1 {
        let all_train = Dataset::concat(&train.iter().collect::<Vec<_>>())?;
        models.push(fit(cfg, &all_train, &source)?.0);
        tests.push(Dataset::concat(&tests.iter().collect::<Vec<_>>())?);
        rows.push("All".into());
        cols.push("All".into());
    }
    let refs: Vec<&CascadeModel<f64>> = models.iter().collect();
    let pairs: Vec<_> = tests.iter().map(|t| (t, &source)).collect();
    let matrix = cross_matrix(&refs, &pairs)?;
    let mut text = String::from("# NME (height) on shared distinct landmarks; rows train, columns test\ntrain\\test");
    for c in &cols {
        let _ = write!(text, " {c}");
    }
    text.push('\n');
    for (r, row) in rows.iter().zip(&matrix) {
        let _ = write!(text, "{r}");
        for v in row {
            let _ = write!(text, " {v:.4}");
        }
        text.push('\n');
    }
    fs::write(out.join("cross.txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn ablate(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load(cfg, required(&cfg.train_data, "training data (--data)")?)?;
    let test = load(cfg, required(&cfg.test_data, "test data (--test)")?)?;
    let out = output_dir(cfg)?;
    let source = Source::from_config(cfg);
    let base = cfg.pipeline();
    let mut text = format!("# {}\nconfig nme auc_{e} fr_{e} stages\n", base.header()[0], e = cfg.epsilon);
    for ab in Ablation::all() {
        let (model, _) = train_model(&data, &source, &cfg.assets()?, &ab.apply(&base), None)?;
        let r = evaluate(&model, &test, &source, cfg.normalization, cfg.epsilon)?;
        let line = format!("{} {:.4} {:.4} {:.2} {}", ab.label(), r.nme, r.auc, r.fr, model.stages.len());
        println!("{line}");
        text.push_str(&line);
        text.push('\n');
    }
    fs::write(out.join("ablation.txt"), text)?;
    Ok(())
}
