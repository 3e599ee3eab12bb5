//! Subcommand implementations. Each takes a fully resolved [`RunConfig`] and
//! returns the files it wrote, in a deterministic order.

use std::fs;
use std::path::{Path, PathBuf};

use beerla::baselines::sparse_nmf::sparse_nmf_decompose_seeded;
use beerla::baselines::{macenko_estimate, macenko_normalize, reinhard_normalize};
use beerla::head::save_projection;
use beerla::imagery::save_density_maps;
use beerla::metrics::MetricTable;
use beerla::train::{
    history_from_json_lines, history_to_json_lines, load_dataset, make_synthetic_domains, save_dataset, train_loop,
    Classifier, EpochRecord, SyntheticDataset,
};
use beerla::{
    decompose, denoise, load_image, normalize_render, project_density, save_image, tile, to_optical_density, untile,
    LearnableParams, RawImage, SolverConfig, StainModel,
};
use log::info;
use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{BaselineMethod, NormalizeMethod, RunConfig};
use crate::error::{CliError, CliResult};

pub const HISTORY_FILE: &str = "history.jsonl";
pub const PARAMS_FILE: &str = "params.json";
pub const CLASSIFIER_FILE: &str = "classifier.json";
pub const REPORT_FILE: &str = "report.json";
pub const APU_FILE: &str = "apu.json";
pub const HISTORY_SUMMARY_FILE: &str = "history_summary.json";
pub const NORMALIZE_SUMMARY_FILE: &str = "normalize.json";

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn ensure_out(cfg: &RunConfig) -> CliResult<()> {
    fs::create_dir_all(&cfg.out).map_err(|e| io_error(&cfg.out, e))
}

/// The configured input file, or every `.png` in the configured directory
/// sorted by name.
pub fn list_inputs(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let input = cfg
        .input
        .as_ref()
        .ok_or_else(|| CliError::Usage("no input image or directory given".into()))?;
    if !input.is_dir() {
        return Ok(vec![input.clone()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| io_error(input, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Data(format!("no PNG files in {}", input.display())));
    }
    Ok(files)
}

fn stem_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

/// Runs `f` over the inputs on at most `jobs` threads, keeping input order.
fn for_each_input<T, F>(cfg: &RunConfig, inputs: &[PathBuf], f: F) -> CliResult<Vec<T>>
where
    T: Send,
    F: Fn(&Path) -> CliResult<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    pool.install(|| inputs.par_iter().map(|p| f(p)).collect())
}

fn read_input(cfg: &RunConfig, path: &Path) -> CliResult<RawImage> {
    let img = load_image(path)?;
    Ok(if cfg.denoise { denoise(&img)? } else { img })
}

/// Trained parameters from `params=`, otherwise seeded defaults. A params
/// file fixes the rank, so the solver follows it.
fn resolve_params(cfg: &RunConfig, channels: usize) -> CliResult<(LearnableParams, SolverConfig)> {
    let mut solver = cfg.solver();
    let params = match &cfg.params {
        Some(path) => {
            let p: LearnableParams = read_json(path)?;
            p.validate()?;
            solver.rank = p.rank();
            p
        }
        None => cfg.default_params(channels),
    };
    if params.channels() != channels {
        return Err(CliError::Data(format!(
            "parameters have {} channels, image has {channels}",
            params.channels()
        )));
    }
    Ok((params, solver))
}

fn tiles_of(cfg: &RunConfig, img: &RawImage) -> CliResult<Vec<RawImage>> {
    Ok(if cfg.tile_size > 0 { tile(img, cfg.tile_size)? } else { vec![img.clone()] })
}

fn solve(img: &RawImage, params: &LearnableParams, solver: &SolverConfig) -> CliResult<StainModel> {
    let model = decompose(&to_optical_density(img), params, solver)?;
    if model.objective_trace.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numeric("objective is not finite".into()));
    }
    Ok(model)
}

/// Per image (or per tile with `tile_size`): density maps `<stem>.d<k>.png`,
/// the head projection `<stem>.proj.png` and the sidecar `<stem>.json`.
pub fn cmd_decompose(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let inputs = list_inputs(cfg)?;
    ensure_out(cfg)?;
    let written = for_each_input(cfg, &inputs, |path| {
        let img = read_input(cfg, path)?;
        let (params, solver) = resolve_params(cfg, img.channels())?;
        let tiles = tiles_of(cfg, &img)?;
        let mut out = Vec::new();
        for (k, t) in tiles.iter().enumerate() {
            let name = if tiles.len() == 1 {
                stem_of(path)
            } else {
                format!("{}.t{k}", stem_of(path))
            };
            let stem = cfg.out.join(&name);
            let model = solve(t, &params, &solver)?;
            let g = t.geometry();
            let mut sidecar = model.sidecar(g, &params, &solver);
            sidecar.density_max = save_density_maps(model.densities.view(), g.width, g.height, &stem)?;
            let proj = project_density(&model, &params.head, g)?;
            sidecar.projection = Some(save_projection(proj.view(), g, &cfg.out.join(format!("{name}.proj.png")))?);
            let json = cfg.out.join(format!("{name}.json"));
            write_json(&sidecar, &json)?;
            info!("{}: effective rank {}", json.display(), sidecar.effective_rank);
            out.push(json);
        }
        Ok(out)
    })?;
    Ok(written.into_iter().flatten().collect())
}

#[derive(Serialize)]
struct NormalizeSummary {
    method: &'static str,
    template: Option<PathBuf>,
    /// File names inside the output directory.
    outputs: Vec<PathBuf>,
}

fn beerla_normalize(cfg: &RunConfig, img: &RawImage) -> CliResult<RawImage> {
    let (params, solver) = resolve_params(cfg, img.channels())?;
    let reference: Array2<f64> = match &cfg.reference {
        Some(path) => {
            let rows: Vec<Vec<f64>> = read_json(path)?;
            let c = rows.len();
            let r = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|row| row.len() != r) {
                return Err(CliError::Data(format!("{}: ragged stain matrix", path.display())));
            }
            Array2::from_shape_vec((c, r), rows.concat()).map_err(|e| CliError::Data(e.to_string()))?
        }
        // The seeded initialization is the same for every image.
        None => params.stains_init.clone(),
    };
    if reference.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(CliError::Data("reference stains must be finite and nonnegative".into()));
    }
    let rendered = tiles_of(cfg, img)?
        .iter()
        .map(|t| normalize_render(&solve(t, &params, &solver)?, reference.view(), t.geometry()).map_err(CliError::from))
        .collect::<CliResult<Vec<_>>>()?;
    Ok(untile(&rendered, img.geometry())?)
}

/// One `<stem>.norm.png` per input plus a summary listing them.
pub fn cmd_normalize(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let template = match (cfg.method, &cfg.template) {
        (NormalizeMethod::Beerla, _) => None,
        (_, Some(path)) => Some(load_image(path)?),
        (m, None) => {
            return Err(CliError::Usage(format!("method {} needs a template image", m.name())));
        }
    };
    let inputs = list_inputs(cfg)?;
    ensure_out(cfg)?;
    let mut outputs = for_each_input(cfg, &inputs, |path| {
        let img = read_input(cfg, path)?;
        let normalized = match (cfg.method, &template) {
            (NormalizeMethod::Reinhard, Some(t)) => reinhard_normalize(&img, t)?,
            (NormalizeMethod::Macenko, Some(t)) => macenko_normalize(&img, t)?,
            _ => beerla_normalize(cfg, &img)?,
        };
        let out = cfg.out.join(format!("{}.norm.png", stem_of(path)));
        save_image(&normalized, &out)?;
        Ok(out)
    })?;
    let summary = cfg.out.join(NORMALIZE_SUMMARY_FILE);
    write_json(
        &NormalizeSummary {
            method: cfg.method.name(),
            template: cfg.template.clone(),
            outputs: outputs.iter().filter_map(|p| p.file_name().map(PathBuf::from)).collect(),
        },
        &summary,
    )?;
    outputs.push(summary);
    Ok(outputs)
}

/// Writes the two-domain dataset as PNGs plus `manifest.json`.
pub fn cmd_synth(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let dataset = make_synthetic_domains(cfg.seed, &cfg.synthetic_spec())?;
    ensure_out(cfg)?;
    save_dataset(&dataset, &cfg.out)?;
    info!("{} images in {}", dataset.samples.len(), cfg.out.display());
    Ok(vec![cfg.out.join(beerla::train::MANIFEST_FILE)])
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct TrainReport {
    pub freeze: bool,
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    #[serde(rename = "acc_A")]
    pub acc_a: f64,
    #[serde(rename = "acc_B")]
    pub acc_b: f64,
}

fn dataset_for(cfg: &RunConfig) -> CliResult<SyntheticDataset> {
    match &cfg.dataset {
        Some(dir) => Ok(load_dataset(dir)?),
        None => Ok(make_synthetic_domains(cfg.seed, &cfg.synthetic_spec())?),
    }
}

/// Trains on domain A and writes the JSON-lines history, the parameters,
/// the classifier and a short report.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let dataset = dataset_for(cfg)?;
    let channels = dataset.spec.geometry().channels;
    let (params, solver) = resolve_params(cfg, channels)?;
    let tc = beerla::train::TrainConfig {
        solver,
        ..cfg.train_config()
    };
    let (params, clf, history) = train_loop(&params, &Classifier::default(), &dataset, &tc)?;
    ensure_out(cfg)?;
    let hist_path = cfg.out.join(HISTORY_FILE);
    fs::write(&hist_path, history_to_json_lines(&history)?).map_err(|e| io_error(&hist_path, e))?;
    let params_path = cfg.out.join(PARAMS_FILE);
    write_json(&params, &params_path)?;
    let clf_path = cfg.out.join(CLASSIFIER_FILE);
    write_json(&clf, &clf_path)?;
    let (first, last) = (&history[0], &history[history.len() - 1]);
    let report = TrainReport {
        freeze: cfg.freeze,
        epochs: cfg.epochs,
        initial_loss: first.loss,
        final_loss: last.loss,
        acc_a: last.acc_a,
        acc_b: last.acc_b,
    };
    let report_path = cfg.out.join(REPORT_FILE);
    write_json(&report, &report_path)?;
    info!(
        "loss {:.4} -> {:.4}, accuracy A {:.3}, B {:.3}",
        report.initial_loss, report.final_loss, report.acc_a, report.acc_b
    );
    Ok(vec![hist_path, params_path, clf_path, report_path])
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct HistorySummary {
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// `1 - final / initial`.
    pub loss_reduction: f64,
    #[serde(rename = "acc_A")]
    pub acc_a: f64,
    #[serde(rename = "acc_B")]
    pub acc_b: f64,
}

pub fn summarize_history(history: &[EpochRecord]) -> CliResult<HistorySummary> {
    let (first, last) = match (history.first(), history.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(CliError::Data("empty training history".into())),
    };
    Ok(HistorySummary {
        epochs: last.epoch,
        initial_loss: first.loss,
        final_loss: last.loss,
        loss_reduction: 1.0 - last.loss / first.loss,
        acc_a: last.acc_a,
        acc_b: last.acc_b,
    })
}

/// APU per row of a metric table and/or a summary of a training history.
/// Results go to files and, one line each, to standard output.
pub fn cmd_eval(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    if cfg.table.is_none() && cfg.history.is_none() {
        return Err(CliError::Usage("eval needs a metric table or a training history".into()));
    }
    ensure_out(cfg)?;
    let mut written = Vec::new();
    if let Some(path) = &cfg.table {
        let table: MetricTable = read_json(path)?;
        let entries = table.apu_all()?;
        for e in &entries {
            println!("{}\t{:.2}", e.method, e.apu);
        }
        let out = cfg.out.join(APU_FILE);
        write_json(&entries, &out)?;
        written.push(out);
    }
    if let Some(path) = &cfg.history {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let history = history_from_json_lines(&text)?;
        let summary = summarize_history(&history)?;
        println!(
            "loss {} -> {} ({:.1}% lower), acc_A {}, acc_B {}",
            summary.initial_loss,
            summary.final_loss,
            100.0 * summary.loss_reduction,
            summary.acc_a,
            summary.acc_b
        );
        let out = cfg.out.join(HISTORY_SUMMARY_FILE);
        write_json(&summary, &out)?;
        written.push(out);
    }
    Ok(written)
}

#[derive(Serialize)]
struct NmfOutput {
    x0: Vec<f64>,
    #[serde(rename = "S")]
    stains: Vec<Vec<f64>>,
    objective_trace: Vec<f64>,
    density_max: Vec<f64>,
    rank: usize,
    lambda: f64,
    iterations: usize,
    seed: u64,
}

/// Macenko writes `<stem>.macenko.json` (stain basis); sparse NMF writes
/// `<stem>.nmf.json` and density maps `<stem>.nmf.d<k>.png`.
pub fn cmd_baseline(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let inputs = list_inputs(cfg)?;
    ensure_out(cfg)?;
    for_each_input(cfg, &inputs, |path| {
        let img = read_input(cfg, path)?;
        match cfg.baseline {
            BaselineMethod::Macenko => {
                let basis = macenko_estimate(&img)?;
                let out = cfg.out.join(format!("{}.macenko.json", stem_of(path)));
                write_json(&basis, &out)?;
                Ok(out)
            }
            BaselineMethod::SparseNmf => {
                let x = to_optical_density(&img);
                let res = sparse_nmf_decompose_seeded(&x, cfg.rank, cfg.lambda, cfg.nmf_iters, cfg.seed)?;
                if res.objective_trace.iter().any(|v| !v.is_finite()) {
                    return Err(CliError::Numeric("sparse NMF objective is not finite".into()));
                }
                let name = format!("{}.nmf", stem_of(path));
                let density_max =
                    save_density_maps(res.densities.view(), img.width(), img.height(), &cfg.out.join(&name))?;
                let out = cfg.out.join(format!("{name}.json"));
                write_json(
                    &NmfOutput {
                        x0: res.x0.to_vec(),
                        stains: res.basis.stains.rows().into_iter().map(|r| r.to_vec()).collect(),
                        objective_trace: res.objective_trace,
                        density_max,
                        rank: cfg.rank,
                        lambda: cfg.lambda,
                        iterations: cfg.nmf_iters,
                        seed: cfg.seed,
                    },
                    &out,
                )?;
                Ok(out)
            }
        }
    })
}
