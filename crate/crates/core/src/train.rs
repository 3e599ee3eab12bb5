//! Desk-scale end-to-end training of [`LearnableParams`] on a synthetic
//! two-domain classification task.
//!
//! The forward pass is `to_optical_density -> decompose -> project_density ->
//! pooled features -> logistic loss`; gradients are central finite
//! differences over the packed parameter vector. Training sees domain A only,
//! accuracy is reported on both domains.

use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::baselines::angle_degrees;
use crate::error::{Error, Result};
use crate::head::{project_densities, HeadWeights, HEAD_CHANNELS};
use crate::imagery::{load_image, render_beer_lambert, save_image, to_optical_density, Geometry, RawImage};
use crate::matrix_serde;
use crate::unroll::{decompose, LearnableParams, SolverConfig};

/// Pooled features per image: mean and max of each projected channel.
pub const FEATURES: usize = 2 * HEAD_CHANNELS;
/// Smallest stain column angle a generator spec may use.
pub const MIN_STAIN_ANGLE_DEG: f64 = 5.0;
pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_LEARNING_RATE: f64 = 0.05;
pub const DEFAULT_FD_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    A,
    B,
}

/// Generator settings. Column 0 of each stain matrix is the tissue stain,
/// column 1 the stain of the target structure. With the defaults nuclei and
/// the target blob share size and density, so only color separates the labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    /// Images per domain, labels alternating starting with a positive.
    pub per_domain: usize,
    #[serde(with = "matrix_serde")]
    pub stains_a: Array2<f64>,
    #[serde(with = "matrix_serde")]
    pub stains_b: Array2<f64>,
    /// Background intensity of each domain.
    pub tint_a: Vec<f64>,
    pub tint_b: Vec<f64>,
    /// Number of tissue nuclei per image, inclusive range.
    pub nuclei: (usize, usize),
    /// Peak tissue density of a nucleus.
    pub nucleus_density: f64,
    pub nucleus_radius: f64,
    /// Peak density of the target blob.
    pub blob_density: f64,
    pub blob_radius: f64,
    /// Standard deviation of additive intensity noise.
    pub noise: f64,
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn stain_pair(tissue: [f64; 3], target: [f64; 3]) -> Array2<f64> {
    let (t, g) = (unit(tissue), unit(target));
    Array2::from_shape_fn((3, 2), |(ch, k)| if k == 0 { t[ch] } else { g[ch] })
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            width: 24,
            height: 24,
            per_domain: 40,
            stains_a: stain_pair([0.65, 0.70, 0.29], [0.07, 0.99, 0.11]),
            stains_b: stain_pair([0.45, 0.80, 0.40], [0.30, 0.90, 0.02]),
            tint_a: vec![0.97, 0.95, 0.97],
            tint_b: vec![0.85, 0.86, 0.84],
            nuclei: (2, 4),
            nucleus_density: 3.0,
            nucleus_radius: 2.5,
            blob_density: 3.0,
            blob_radius: 2.5,
            noise: 0.01,
        }
    }
}

impl SyntheticSpec {
    pub fn geometry(&self) -> Geometry {
        Geometry::new(self.tint_a.len(), self.width, self.height)
    }

    pub fn stains(&self, domain: Domain) -> &Array2<f64> {
        match domain {
            Domain::A => &self.stains_a,
            Domain::B => &self.stains_b,
        }
    }

    pub fn tint(&self, domain: Domain) -> &[f64] {
        match domain {
            Domain::A => &self.tint_a,
            Domain::B => &self.tint_b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 || self.per_domain < 2 {
            return Err(Error::InvalidParameter(
                "need a nonempty image size and at least 2 images per domain".into(),
            ));
        }
        let c = self.tint_a.len();
        if c == 0 || self.tint_b.len() != c {
            return Err(Error::Dimension("tints must share a nonzero channel count".into()));
        }
        for (name, s) in [("stains_a", &self.stains_a), ("stains_b", &self.stains_b)] {
            if s.dim() != (c, 2) {
                return Err(Error::Dimension(format!("{name} is {:?}, expected ({c}, 2)", s.dim())));
            }
            if s.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidParameter(format!("{name} must be finite and nonnegative")));
            }
            let angle = angle_degrees(s.column(0), s.column(1));
            if angle.is_nan() || angle < MIN_STAIN_ANGLE_DEG {
                return Err(Error::InvalidParameter(format!(
                    "{name} columns are {angle:.2} degrees apart, need at least {MIN_STAIN_ANGLE_DEG}"
                )));
            }
        }
        if self.tint_a.iter().chain(&self.tint_b).any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::InvalidParameter("tints must lie in (0, 1]".into()));
        }
        let nonneg = [
            self.nucleus_density,
            self.nucleus_radius,
            self.blob_density,
            self.blob_radius,
            self.noise,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.nuclei.0 > self.nuclei.1 {
            return Err(Error::InvalidParameter("density, radius and noise settings".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: RawImage,
    pub label: bool,
    pub domain: Domain,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub spec: SyntheticSpec,
    pub seed: u64,
    pub samples: Vec<Sample>,
}

impl SyntheticDataset {
    pub fn domain(&self, domain: Domain) -> Vec<&Sample> {
        self.samples.iter().filter(|s| s.domain == domain).collect()
    }
}

/// Adds a Gaussian bump of peak `amplitude` to `field` (row-major `w x h`).
fn add_bump(field: &mut [f64], width: usize, cx: f64, cy: f64, radius: f64, amplitude: f64) {
    let two_r2 = 2.0 * radius * radius;
    for (j, v) in field.iter_mut().enumerate() {
        let dx = (j % width) as f64 - cx;
        let dy = (j / width) as f64 - cy;
        *v += amplitude * (-(dx * dx + dy * dy) / two_r2).exp();
    }
}

fn render_sample(spec: &SyntheticSpec, domain: Domain, label: bool, rng: &mut ChaCha8Rng) -> Result<RawImage> {
    let geometry = spec.geometry();
    let p = geometry.pixels();
    let (w, h) = (spec.width as f64, spec.height as f64);
    let mut tissue = vec![0.0; p];
    let mut target = vec![0.0; p];
    let count = rng.gen_range(spec.nuclei.0..=spec.nuclei.1);
    for _ in 0..count {
        let (cx, cy) = (rng.gen_range(0.0..w), rng.gen_range(0.0..h));
        let amp = spec.nucleus_density * rng.gen_range(0.6..1.0);
        add_bump(&mut tissue, spec.width, cx, cy, spec.nucleus_radius, amp);
    }
    if label {
        let (cx, cy) = (rng.gen_range(0.25 * w..0.75 * w), rng.gen_range(0.25 * h..0.75 * h));
        let amp = spec.blob_density * rng.gen_range(0.8..1.2);
        add_bump(&mut target, spec.width, cx, cy, spec.blob_radius, amp);
    }
    let densities = Array2::from_shape_fn((p, 2), |(j, k)| if k == 0 { tissue[j] } else { target[j] });
    let x0 = spec.tint(domain).iter().map(|t| t.ln()).collect::<ndarray::Array1<f64>>();
    let clean = render_beer_lambert(x0.view(), spec.stains(domain).view(), densities.view(), geometry)?;
    let mut data = clean.into_data();
    if spec.noise > 0.0 {
        data.mapv_inplace(|v| v + spec.noise * rng.sample::<f64, _>(StandardNormal));
    }
    RawImage::new(geometry, data)
}

/// Deterministic two-domain dataset: `spec.per_domain` images for A, then
/// for B, labels alternating positive/negative.
pub fn make_synthetic_domains(seed: u64, spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(2 * spec.per_domain);
    for domain in [Domain::A, Domain::B] {
        for i in 0..spec.per_domain {
            let label = i % 2 == 0;
            let image = render_sample(spec, domain, label, &mut rng)?;
            samples.push(Sample { image, label, domain });
        }
    }
    Ok(SyntheticDataset {
        spec: spec.clone(),
        seed,
        samples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    label: bool,
    domain: Domain,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    seed: u64,
    spec: SyntheticSpec,
    images: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `img_NNNN.png` files and `manifest.json` into `dir`.
pub fn save_dataset(dataset: &SyntheticDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut images = Vec::with_capacity(dataset.samples.len());
    for (i, s) in dataset.samples.iter().enumerate() {
        let file = format!("img_{i:04}.png");
        save_image(&s.image, dir.join(&file))?;
        images.push(ManifestEntry {
            file,
            label: s.label,
            domain: s.domain,
        });
    }
    let manifest = Manifest {
        seed: dataset.seed,
        spec: dataset.spec.clone(),
        images,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads a dataset written by [`save_dataset`]; images carry 8-bit quantization.
pub fn load_dataset(dir: &Path) -> Result<SyntheticDataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let samples = manifest
        .images
        .iter()
        .map(|e| {
            Ok(Sample {
                image: load_image(dir.join(&e.file))?,
                label: e.label,
                domain: e.domain,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset {
        spec: manifest.spec,
        seed: manifest.seed,
        samples,
    })
}

/// Logistic regression on the pooled features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub weights: [f64; FEATURES],
    pub bias: f64,
}

impl Default for Classifier {
    fn default() -> Self {
        Classifier {
            weights: [0.0; FEATURES],
            bias: 0.0,
        }
    }
}

impl Classifier {
    pub fn logit(&self, features: &[f64; FEATURES]) -> f64 {
        self.weights.iter().zip(features).map(|(w, f)| w * f).sum::<f64>() + self.bias
    }

    pub fn predict(&self, features: &[f64; FEATURES]) -> bool {
        self.logit(features) > 0.0
    }
}

/// `-ln σ(z)` for a positive label, `-ln(1 - σ(z))` otherwise, computed stably.
pub fn logistic_loss(logit: f64, label: bool) -> f64 {
    let y = if label { 1.0 } else { 0.0 };
    logit.max(0.0) - logit * y + (-logit.abs()).exp().ln_1p()
}

/// Per-channel mean then per-channel max of the projected density map.
pub fn pooled_features(densities: ArrayView2<'_, f64>, head: &HeadWeights, geometry: Geometry) -> Result<[f64; FEATURES]> {
    let projected = project_densities(densities, head, geometry)?;
    let mut out = [0.0; FEATURES];
    for (ch, row) in projected.axis_iter(Axis(0)).enumerate() {
        out[ch] = row.sum() / row.len() as f64;
        out[HEAD_CHANNELS + ch] = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }
    Ok(out)
}

/// Solver densities for one image.
pub fn solve_densities(image: &RawImage, params: &LearnableParams, solver: &SolverConfig) -> Result<Array2<f64>> {
    Ok(decompose(&to_optical_density(image), params, solver)?.densities)
}

/// Mean logistic loss over `batch`.
pub fn model_loss(
    params: &LearnableParams,
    clf: &Classifier,
    batch: &[&Sample],
    solver: &SolverConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("loss batch".into()));
    }
    let mut total = 0.0;
    for s in batch {
        let d = solve_densities(&s.image, params, solver)?;
        let f = pooled_features(d.view(), &params.head, s.image.geometry())?;
        total += logistic_loss(clf.logit(&f), s.label);
    }
    Ok(total / batch.len() as f64)
}

/// Central differences `(f(p + h e_i) - f(p - h e_i)) / 2h` for every coordinate.
pub fn fd_gradient<F>(f: F, point: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidParameter(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        probe[i] = point[i] + h;
        let up = f(&probe)?;
        probe[i] = point[i] - h;
        let down = f(&probe)?;
        probe[i] = point[i];
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite(format!("objective at coordinate {i} (+h: {up}, -h: {down})")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Number of packed coordinates that change the solver output: `S_init`
/// (row-major), `γ`, `λ`.
pub fn solver_param_count(channels: usize, rank: usize) -> usize {
    channels * rank + 2
}

/// Packs `S_init` (row-major), `γ`, `λ`, `W` (row-major), classifier
/// weights and bias into one vector.
pub fn pack(params: &LearnableParams, clf: &Classifier) -> Vec<f64> {
    let mut v: Vec<f64> = params.stains_init.iter().copied().collect();
    v.push(params.gamma);
    v.push(params.lambda);
    v.extend(params.head.0.iter().copied());
    v.extend(clf.weights);
    v.push(clf.bias);
    v
}

/// Inverse of [`pack`]; `channels` and `rank` fix the matrix shapes.
pub fn unpack(v: &[f64], channels: usize, rank: usize) -> Result<(LearnableParams, Classifier)> {
    let ns = channels * rank;
    let nw = HEAD_CHANNELS * rank;
    let expected = ns + 2 + nw + FEATURES + 1;
    if v.len() != expected {
        return Err(Error::Dimension(format!("parameter vector has {} entries, expected {expected}", v.len())));
    }
    let stains_init = Array2::from_shape_vec((channels, rank), v[..ns].to_vec())
        .map_err(|e| Error::Dimension(e.to_string()))?;
    let head = Array2::from_shape_vec((HEAD_CHANNELS, rank), v[ns + 2..ns + 2 + nw].to_vec())
        .map_err(|e| Error::Dimension(e.to_string()))?;
    let tail = &v[ns + 2 + nw..];
    let mut weights = [0.0; FEATURES];
    weights.copy_from_slice(&tail[..FEATURES]);
    Ok((
        LearnableParams {
            stains_init,
            gamma: v[ns],
            lambda: v[ns + 1],
            head: HeadWeights(head),
        },
        Classifier {
            weights,
            bias: tail[FEATURES],
        },
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Images per gradient step; `None` uses the full training split.
    pub batch_size: Option<usize>,
    pub fd_step: f64,
    pub seed: u64,
    /// Train only the classifier, keeping `LearnableParams` at their start values.
    pub freeze_params: bool,
    pub solver: SolverConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: DEFAULT_EPOCHS,
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: None,
            fd_step: DEFAULT_FD_STEP,
            seed: 0,
            freeze_params: false,
            solver: SolverConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "learning rate must be nonnegative, got {}",
                self.learning_rate
            )));
        }
        if !(self.fd_step > 0.0 && self.fd_step.is_finite()) {
            return Err(Error::InvalidParameter(format!("fd step must be positive, got {}", self.fd_step)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidParameter("batch size must be positive".into()));
        }
        self.solver.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    #[serde(rename = "acc_A")]
    pub acc_a: f64,
    #[serde(rename = "acc_B")]
    pub acc_b: f64,
}

/// One JSON object per line.
pub fn history_to_json_lines(history: &[EpochRecord]) -> Result<String> {
    let mut out = String::new();
    for rec in history {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn history_from_json_lines(text: &str) -> Result<Vec<EpochRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Fraction of samples (optionally restricted to one domain) classified correctly.
pub fn evaluate_accuracy(
    params: &LearnableParams,
    clf: &Classifier,
    dataset: &SyntheticDataset,
    domain: Option<Domain>,
    solver: &SolverConfig,
) -> Result<f64> {
    let selected: Vec<&Sample> = dataset
        .samples
        .iter()
        .filter(|s| domain.is_none_or(|d| s.domain == d))
        .collect();
    accuracy_on(params, clf, &selected, solver)
}

fn accuracy_on(params: &LearnableParams, clf: &Classifier, samples: &[&Sample], solver: &SolverConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("no samples match the domain filter".into()));
    }
    let mut correct = 0usize;
    for s in samples {
        let d = solve_densities(&s.image, params, solver)?;
        let f = pooled_features(d.view(), &params.head, s.image.geometry())?;
        if clf.predict(&f) == s.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}

/// Loss with the solver outputs held fixed; only the head and classifier vary.
fn cached_loss(cache: &[Array2<f64>], batch: &[&Sample], params: &LearnableParams, clf: &Classifier) -> Result<f64> {
    let mut total = 0.0;
    for (d, s) in cache.iter().zip(batch) {
        let f = pooled_features(d.view(), &params.head, s.image.geometry())?;
        total += logistic_loss(clf.logit(&f), s.label);
    }
    Ok(total / batch.len() as f64)
}

/// Full gradient of [`model_loss`] over the packed vector. Coordinates past
/// the solver block reuse one set of decompositions, which gives the same
/// central differences as re-solving.
fn batch_gradient(
    point: &[f64],
    channels: usize,
    rank: usize,
    batch: &[&Sample],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    let ns = solver_param_count(channels, rank);
    let (params, _) = unpack(point, channels, rank)?;
    let mut grad = vec![0.0; point.len()];
    if !cfg.freeze_params {
        let tail = point[ns..].to_vec();
        let solver_grad = fd_gradient(
            |head: &[f64]| {
                let mut full = head.to_vec();
                full.extend_from_slice(&tail);
                let (p, c) = unpack(&full, channels, rank)?;
                model_loss(&p, &c, batch, &cfg.solver)
            },
            &point[..ns],
            cfg.fd_step,
        )?;
        grad[..ns].copy_from_slice(&solver_grad);
    }
    let cache = batch
        .iter()
        .map(|s| solve_densities(&s.image, &params, &cfg.solver))
        .collect::<Result<Vec<_>>>()?;
    let head_len = HEAD_CHANNELS * rank;
    let lead = point[..ns].to_vec();
    let start = if cfg.freeze_params { ns + head_len } else { ns };
    let fixed = point[ns..start].to_vec();
    let rest = fd_gradient(
        |v: &[f64]| {
            let mut full = lead.clone();
            full.extend_from_slice(&fixed);
            full.extend_from_slice(v);
            let (p, c) = unpack(&full, channels, rank)?;
            cached_loss(&cache, batch, &p, &c)
        },
        &point[start..],
        cfg.fd_step,
    )?;
    grad[start..].copy_from_slice(&rest);
    Ok(grad)
}

/// Plain gradient descent on domain-A samples with `S_init`, `γ`, `λ`
/// clamped to be nonnegative after every step. The history starts with the
/// untrained state (epoch 0) and has one record per epoch after it.
pub fn train_loop(
    params: &LearnableParams,
    clf: &Classifier,
    dataset: &SyntheticDataset,
    cfg: &TrainConfig,
) -> Result<(LearnableParams, Classifier, Vec<EpochRecord>)> {
    cfg.validate()?;
    params.validate()?;
    let (channels, rank) = (params.channels(), params.rank());
    let train = dataset.domain(Domain::A);
    let test = dataset.domain(Domain::B);
    if train.is_empty() {
        return Err(Error::Empty("no domain-A samples to train on".into()));
    }
    let batch_size = cfg.batch_size.unwrap_or(train.len()).min(train.len());

    let mut current = (params.clone(), clf.clone());
    let record = |epoch: usize, p: &LearnableParams, c: &Classifier| -> Result<EpochRecord> {
        let loss = model_loss(p, c, &train, &cfg.solver)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at epoch {epoch}")));
        }
        Ok(EpochRecord {
            epoch,
            loss,
            acc_a: accuracy_on(p, c, &train, &cfg.solver)?,
            acc_b: if test.is_empty() {
                f64::NAN
            } else {
                accuracy_on(p, c, &test, &cfg.solver)?
            },
        })
    };
    let mut history = vec![record(0, &current.0, &current.1)?];

    for epoch in 1..=cfg.epochs {
        for batch in train.chunks(batch_size) {
            let mut point = pack(&current.0, &current.1);
            let grad = batch_gradient(&point, channels, rank, batch, cfg)?;
            for (v, g) in point.iter_mut().zip(&grad) {
                *v -= cfg.learning_rate * g;
            }
            let (mut p, c) = unpack(&point, channels, rank)?;
            p.clamp_nonneg();
            current = (p, c);
        }
        let rec = record(epoch, &current.0, &current.1)?;
        log::debug!("epoch {epoch}: loss {:.6} acc_A {:.3} acc_B {:.3}", rec.loss, rec.acc_a, rec.acc_b);
        history.push(rec);
    }
    Ok((current.0, current.1, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> SyntheticSpec {
        SyntheticSpec {
            width: 12,
            height: 12,
            per_domain: 4,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = make_synthetic_domains(3, &tiny_spec()).unwrap();
        let b = make_synthetic_domains(3, &tiny_spec()).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic_domains(4, &tiny_spec()).unwrap();
        assert_ne!(a.samples[0].image, c.samples[0].image);
    }

    #[test]
    fn both_domains_hold_both_labels() {
        let ds = make_synthetic_domains(0, &tiny_spec()).unwrap();
        for d in [Domain::A, Domain::B] {
            let s = ds.domain(d);
            assert!(s.iter().any(|x| x.label) && s.iter().any(|x| !x.label));
        }
    }

    #[test]
    fn near_parallel_stains_are_rejected() {
        let mut spec = tiny_spec();
        spec.stains_b = stain_pair([0.6, 0.7, 0.3], [0.61, 0.7, 0.3]);
        assert!(matches!(make_synthetic_domains(0, &spec), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn zero_classifier_gives_ln2() {
        let ds = make_synthetic_domains(0, &tiny_spec()).unwrap();
        let batch: Vec<&Sample> = ds.samples.iter().collect();
        let params = LearnableParams::seeded(3, 8, 0);
        let loss = model_loss(&params, &Classifier::default(), &batch, &SolverConfig::default()).unwrap();
        assert_eq!(loss, std::f64::consts::LN_2);
    }

    #[test]
    fn logistic_loss_is_stable() {
        assert!((logistic_loss(800.0, true)).abs() < 1e-300);
        assert!((logistic_loss(800.0, false) - 800.0).abs() < 1e-9);
        assert!((logistic_loss(-800.0, true) - 800.0).abs() < 1e-9);
    }

    #[test]
    fn pack_round_trips() {
        let params = LearnableParams::seeded(3, 4, 2);
        let clf = Classifier {
            weights: [1.0, -2.0, 3.0, 0.5, 0.0, -1.5],
            bias: 0.25,
        };
        let v = pack(&params, &clf);
        assert_eq!(v.len(), 3 * 4 + 2 + 3 * 4 + FEATURES + 1);
        let (p, c) = unpack(&v, 3, 4).unwrap();
        assert_eq!((p, c), (params, clf));
        assert!(unpack(&v[1..], 3, 4).is_err());
    }

    #[test]
    fn fd_gradient_of_quadratic() {
        let g = fd_gradient(|p| Ok(p.iter().map(|v| v * v).sum()), &[1.0, 2.0], 1e-4).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let z = fd_gradient(|_| Ok(7.0), &[1.0, 2.0, 3.0], 1e-3).unwrap();
        assert_eq!(z, vec![0.0; 3]);
        assert!(fd_gradient(|_| Ok(f64::NAN), &[1.0], 1e-3).is_err());
        assert!(fd_gradient(|_| Ok(0.0), &[1.0], 0.0).is_err());
    }

    #[test]
    fn empty_domain_filter_is_an_error() {
        let mut ds = make_synthetic_domains(0, &tiny_spec()).unwrap();
        ds.samples.retain(|s| s.domain == Domain::A);
        let params = LearnableParams::seeded(3, 8, 0);
        let r = evaluate_accuracy(&params, &Classifier::default(), &ds, Some(Domain::B), &SolverConfig::default());
        assert!(matches!(r, Err(Error::Empty(_))));
    }

    #[test]
    fn history_json_lines_round_trip() {
        let h = vec![
            EpochRecord {
                epoch: 0,
                loss: 0.69,
                acc_a: 0.5,
                acc_b: 0.25,
            },
            EpochRecord {
                epoch: 1,
                loss: 0.1 + 0.2,
                acc_a: 1.0,
                acc_b: 0.75,
            },
        ];
        let text = history_to_json_lines(&h).unwrap();
        assert!(text.lines().next().unwrap().contains("\"acc_A\""));
        assert_eq!(history_from_json_lines(&text).unwrap(), h);
    }
}
