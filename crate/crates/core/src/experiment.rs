//! Train, rescale, prune, rewind and finetune a small MLP on a synthetic
//! 2-D task, comparing the masks chosen with and without a random rescaling
//! of the trained weights.
//!
//! Every random draw comes from a ChaCha8 stream derived from the config
//! seed: data, initialization, the rescaling and one shuffle per epoch.
//! Finetuning replays the dense run's shuffles from the rewind epoch on, so
//! an arm that prunes nothing reproduces the dense run bit for bit. All arms
//! rewind to the same unrescaled snapshot; they differ only by their masks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{LossKind, Tape};
use crate::error::{Error, Result};
use crate::fixtures::layered;
use crate::net::{Architecture, ParamVector};
use crate::pruning::{apply_prune, baseline_scores, path_mag_scores, Amount, Baseline, Batch, Mask, PruneScope, ScoreMethod};
use crate::transforms::{random_rescaling_with, rescale, RescalePreset, Rescaling};

const DATA_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const RESCALE_STREAM: u64 = 3;
const SHUFFLE_STREAM: u64 = 1 << 32;
/// Training points fed to the loss-curvature criteria.
const OBD_BATCH: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Two isotropic Gaussians centred at `±(1, 0.5)`, unit variance.
    TwoGaussians,
    /// Uniform square, label = sign agreement of the coordinates.
    Xor,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-gaussians" | "two_gaussians" | "gaussians" => Ok(Task::TwoGaussians),
            "xor" => Ok(Task::Xor),
            _ => Err(Error::Parse(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub task: Task,
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    PathMag,
    Magnitude,
    ObdFd,
    ObdHutchinson,
}

impl Criterion {
    pub fn name(self) -> &'static str {
        match self {
            Criterion::PathMag => "pathmag",
            Criterion::Magnitude => "magnitude",
            Criterion::ObdFd => "obd_fd",
            Criterion::ObdHutchinson => "obd_hutchinson",
        }
    }
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pathmag" | "path_mag" => Ok(Criterion::PathMag),
            "magnitude" => Ok(Criterion::Magnitude),
            "obd" | "obd_fd" => Ok(Criterion::ObdFd),
            "obd_hutchinson" | "hutchinson" => Ok(Criterion::ObdHutchinson),
            _ => Err(Error::Parse(format!("unknown criterion `{s}`"))),
        }
    }
}

/// Missing fields in a deserialized config take their default values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetSpec,
    /// Layer widths, input first.
    pub widths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub loss: LossKind,
    pub rewind_epoch: usize,
    pub fraction: f64,
    pub preset: RescalePreset,
    pub criteria: Vec<Criterion>,
    pub scope: PruneScope,
    pub hutchinson_probes: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetSpec { task: Task::TwoGaussians, train: 2000, test: 500 },
            widths: vec![2, 16, 16, 2],
            epochs: 200,
            batch_size: 32,
            learning_rate: 0.05,
            loss: LossKind::Logistic,
            rewind_epoch: 10,
            fraction: 0.4,
            preset: RescalePreset::FixedFactors,
            criteria: vec![Criterion::PathMag, Criterion::Magnitude],
            scope: PruneScope::EdgesOnly,
            hutchinson_probes: 16,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.rewind_epoch >= self.epochs {
            return bad(format!("rewind epoch {} must be below the {} training epochs", self.rewind_epoch, self.epochs));
        }
        if !(0.0..1.0).contains(&self.fraction) {
            return bad(format!("prune fraction {} must lie in [0, 1)", self.fraction));
        }
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return bad("layer widths must list at least two positive widths".into());
        }
        if self.widths[0] != 2 {
            return bad(format!("the synthetic tasks are 2-D, input width is {}", self.widths[0]));
        }
        let classes = *self.widths.last().unwrap();
        if classes != 2 && !(classes == 1 && self.loss == LossKind::Logistic) {
            return bad(format!("output width {classes} does not fit a binary task"));
        }
        if self.dataset.train == 0 || self.dataset.test == 0 || self.batch_size == 0 {
            return bad("sample counts and batch size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.criteria.is_empty() {
            return bad("at least one criterion is required".into());
        }
        if self.criteria.contains(&Criterion::ObdHutchinson) && self.hutchinson_probes == 0 {
            return bad("Hutchinson criterion needs at least one probe".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmReport {
    pub criterion: Criterion,
    pub rescaled: bool,
    pub accuracy: f64,
    pub pruned: usize,
    /// `1` keeps, `0` prunes, in coordinate order.
    pub mask: String,
    pub hamming_to_unrescaled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Agreement {
    pub criterion: Criterion,
    pub hamming: usize,
    pub disagreement_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub num_params: usize,
    pub dense_accuracy: f64,
    pub rewind_accuracy: f64,
    /// Factor per hidden neuron, by id.
    pub rescaling: Vec<(String, f64)>,
    /// Draws of the rescaling discarded for being all ones.
    pub rescale_redraws: usize,
    pub arms: Vec<ArmReport>,
    pub agreement: Vec<Agreement>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per arm.
    pub fn table(&self) -> String {
        let mut out = String::from("criterion\trescaled\taccuracy\thamming_to_unrescaled\n");
        for a in &self.arms {
            out.push_str(&format!("{}\t{}\t{:.4}\t{}\n", a.criterion.name(), if a.rescaled { "yes" } else { "no" }, a.accuracy, a.hamming_to_unrescaled));
        }
        out
    }

    pub fn agreement_for(&self, c: Criterion) -> Option<&Agreement> {
        self.agreement.iter().find(|a| a.criterion == c)
    }
}

/// Labelled points, targets one-hot (or a single 0/1 column).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub targets: Vec<Vec<f64>>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn sample_points<R: Rng>(rng: &mut R, task: Task, n: usize, classes: usize) -> Dataset {
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut ds = Dataset { inputs: Vec::with_capacity(n), labels: Vec::with_capacity(n), targets: Vec::with_capacity(n) };
    for i in 0..n {
        let (x, label) = match task {
            Task::TwoGaussians => {
                let label = i % 2;
                let s = if label == 1 { 1.0 } else { -1.0 };
                (vec![s + noise.sample(rng), 0.5 * s + noise.sample(rng)], label)
            }
            Task::Xor => {
                let x: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..=1.0)).collect();
                let label = usize::from(x[0] * x[1] > 0.0);
                (x, label)
            }
        };
        let target = if classes == 1 { vec![label as f64] } else { (0..classes).map(|c| f64::from(u8::from(c == label))).collect() };
        ds.inputs.push(x);
        ds.labels.push(label);
        ds.targets.push(target);
    }
    ds
}

/// Training and test sets for `config`.
pub fn make_dataset(config: &ExperimentConfig) -> (Dataset, Dataset) {
    let classes = *config.widths.last().unwrap();
    let mut rng = stream(config.seed, DATA_STREAM);
    let train = sample_points(&mut rng, config.dataset.task, config.dataset.train, classes);
    let test = sample_points(&mut rng, config.dataset.task, config.dataset.test, classes);
    (train, test)
}

/// He-normal weights, zero biases.
fn init_params(arch: &Architecture, seed: u64) -> ParamVector {
    let mut rng = stream(seed, INIT_STREAM);
    let mut values = vec![0.0; arch.num_params()];
    for (e, &(_, v)) in arch.edges().iter().enumerate() {
        let fan_in = arch.incoming(v).len() as f64;
        values[e] = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std").sample(&mut rng);
    }
    ParamVector::new(arch, values).expect("no pooling neurons")
}

struct Trainer<'a> {
    arch: &'a Architecture,
    config: &'a ExperimentConfig,
    train: &'a Dataset,
    tape: Tape,
}

impl<'a> Trainer<'a> {
    fn new(arch: &'a Architecture, config: &'a ExperimentConfig, train: &'a Dataset) -> Self {
        Self { arch, config, train, tape: Tape::new(arch) }
    }

    /// Mini-batch gradient descent over `epochs`; masked coordinates stay put.
    fn run(&mut self, theta: &mut ParamVector, epochs: std::ops::Range<usize>, mask: Option<&Mask>) -> Result<()> {
        let mut values = std::mem::replace(theta, ParamVector::zeros(self.arch)).into_vec();
        let mut grad = vec![0.0; values.len()];
        let mut order: Vec<usize> = (0..self.train.inputs.len()).collect();
        for epoch in epochs {
            order.sort_unstable();
            order.shuffle(&mut stream(self.config.seed, SHUFFLE_STREAM + epoch as u64));
            for chunk in order.chunks(self.config.batch_size) {
                let current = ParamVector::from_vec(values);
                grad.iter_mut().for_each(|g| *g = 0.0);
                for &i in chunk {
                    let out = self.tape.forward(self.arch, &current, &self.train.inputs[i])?;
                    let (_, seed) = self.config.loss.eval(out, &self.train.targets[i]);
                    self.tape.backward(self.arch, &current, &seed, false);
                    for (g, t) in grad.iter_mut().zip(self.tape.gradient()) {
                        *g += t;
                    }
                }
                values = current.into_vec();
                let step = self.config.learning_rate / chunk.len() as f64;
                for (i, (w, g)) in values.iter_mut().zip(&grad).enumerate() {
                    if mask.is_none_or(|m| m.keep()[i]) {
                        *w -= step * g;
                    }
                }
            }
        }
        *theta = ParamVector::from_vec(values);
        Ok(())
    }
}

/// Fraction of test points whose largest output matches the label.
pub fn accuracy(arch: &Architecture, theta: &ParamVector, data: &Dataset) -> Result<f64> {
    let mut tape = Tape::new(arch);
    let mut hits = 0usize;
    for (x, &label) in data.inputs.iter().zip(&data.labels) {
        let out = tape.forward(arch, theta, x)?;
        let predicted = if out.len() == 1 {
            usize::from(out[0] > 0.0)
        } else {
            (0..out.len()).fold(0, |best, k| if out[k] > out[best] { k } else { best })
        };
        hits += usize::from(predicted == label);
    }
    Ok(hits as f64 / data.inputs.len() as f64)
}

fn draw_rescaling(arch: &Architecture, config: &ExperimentConfig) -> (Rescaling, usize) {
    let mut rng = stream(config.seed, RESCALE_STREAM);
    let has_hidden = (0..arch.num_neurons()).any(|v| arch.is_hidden(v));
    let mut redraws = 0;
    loop {
        let lambda = random_rescaling_with(arch, &mut rng, config.preset);
        if !lambda.is_identity() || !has_hidden || redraws >= 1000 {
            return (lambda, redraws);
        }
        redraws += 1;
    }
}

fn arm_mask(arch: &Architecture, theta: &ParamVector, criterion: Criterion, config: &ExperimentConfig, train: &Dataset) -> Result<Mask> {
    let n = OBD_BATCH.min(train.inputs.len());
    let batch = || Batch { inputs: train.inputs[..n].to_vec(), targets: train.targets[..n].to_vec() };
    let scores = match criterion {
        Criterion::PathMag => path_mag_scores(arch, theta, ScoreMethod::Autodiff)?,
        Criterion::Magnitude => baseline_scores(arch, theta, Baseline::Magnitude, None, config.loss)?,
        Criterion::ObdFd => baseline_scores(arch, theta, Baseline::ObdFd, Some(&batch()), config.loss)?,
        Criterion::ObdHutchinson => {
            let b = Baseline::ObdHutchinson { probes: config.hutchinson_probes, seed: config.seed };
            baseline_scores(arch, theta, b, Some(&batch()), config.loss)?
        }
    };
    Ok(apply_prune(arch, theta, &scores, Amount::Fraction(config.fraction), config.scope)?.0)
}

/// Runs the full pipeline; deterministic given the config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let arch = layered(&config.widths);
    let (train, test) = make_dataset(config);

    let mut theta = init_params(&arch, config.seed);
    let mut trainer = Trainer::new(&arch, config, &train);
    trainer.run(&mut theta, 0..config.rewind_epoch, None)?;
    let snapshot = theta.clone();
    trainer.run(&mut theta, config.rewind_epoch..config.epochs, None)?;
    let dense_accuracy = accuracy(&arch, &theta, &test)?;
    let rewind_accuracy = accuracy(&arch, &snapshot, &test)?;

    let (lambda, rescale_redraws) = draw_rescaling(&arch, config);
    let rescaled = rescale(&arch, &theta, &lambda)?;

    let jobs: Vec<(Criterion, bool)> = config.criteria.iter().flat_map(|&c| [(c, false), (c, true)]).collect();
    let outcomes: Vec<Result<(Mask, f64)>> = jobs
        .par_iter()
        .map(|&(criterion, is_rescaled)| {
            let trained = if is_rescaled { &rescaled } else { &theta };
            let mask = arm_mask(&arch, trained, criterion, config, &train)?;
            let mut weights = mask.apply(&snapshot);
            Trainer::new(&arch, config, &train).run(&mut weights, config.rewind_epoch..config.epochs, Some(&mask))?;
            let acc = accuracy(&arch, &weights, &test)?;
            Ok((mask, acc))
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let mut arms = Vec::with_capacity(jobs.len());
    let mut agreement = Vec::with_capacity(config.criteria.len());
    for (pair, outs) in jobs.chunks(2).zip(outcomes.chunks(2)) {
        let criterion = pair[0].0;
        let hamming = outs[0].0.hamming(&outs[1].0);
        for (&(_, is_rescaled), (mask, acc)) in pair.iter().zip(outs) {
            arms.push(ArmReport {
                criterion,
                rescaled: is_rescaled,
                accuracy: *acc,
                pruned: mask.pruned().len(),
                mask: mask.bits(),
                hamming_to_unrescaled: if is_rescaled { hamming } else { 0 },
            });
        }
        agreement.push(Agreement { criterion, hamming, disagreement_rate: hamming as f64 / arch.num_params() as f64 });
    }

    let rescaling = (0..arch.num_neurons())
        .filter(|&v| arch.is_hidden(v))
        .map(|v| (arch.id(v).to_string(), lambda.factor(v)))
        .collect();
    Ok(ExperimentReport {
        config: config.clone(),
        num_params: arch.num_params(),
        dense_accuracy,
        rewind_accuracy,
        rescaling,
        rescale_redraws,
        arms,
        agreement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig { epochs: 20, rewind_epoch: 3, dataset: DatasetSpec { task: Task::TwoGaussians, train: 200, test: 100 }, ..Default::default() }
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = [
            ExperimentConfig { rewind_epoch: 200, ..Default::default() },
            ExperimentConfig { fraction: 1.0, ..Default::default() },
            ExperimentConfig { fraction: -0.1, ..Default::default() },
            ExperimentConfig { widths: vec![3, 4, 2], ..Default::default() },
            ExperimentConfig { criteria: vec![], ..Default::default() },
        ];
        for c in bad {
            assert!(matches!(run_experiment(&c), Err(Error::InvalidConfig(_))), "{c:?}");
        }
    }

    #[test]
    fn pathmag_masks_agree_and_run_is_deterministic() {
        let config = small();
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.agreement_for(Criterion::PathMag).unwrap().hamming, 0);
        assert!(a.dense_accuracy > 0.7, "{}", a.dense_accuracy);
        assert_eq!(a.arms.len(), 4);
        assert_eq!(a.arms[0].pruned, (0.4f64 * 320.0).round() as usize);
        assert!(a.table().lines().count() == 5);
    }

    #[test]
    fn zero_fraction_reproduces_dense_run() {
        let config = ExperimentConfig { fraction: 0.0, criteria: vec![Criterion::PathMag, Criterion::Magnitude], ..small() };
        let r = run_experiment(&config).unwrap();
        for arm in &r.arms {
            assert_eq!(arm.accuracy, r.dense_accuracy);
            assert_eq!(arm.pruned, 0);
        }
    }

    #[test]
    fn xor_task_and_obd_criteria_run() {
        let config = ExperimentConfig {
            dataset: DatasetSpec { task: Task::Xor, train: 100, test: 50 },
            epochs: 4,
            rewind_epoch: 1,
            criteria: vec![Criterion::ObdFd, Criterion::ObdHutchinson],
            hutchinson_probes: 2,
            ..Default::default()
        };
        let r = run_experiment(&config).unwrap();
        assert_eq!(r.arms.len(), 4);
        assert!(r.to_json().contains("\"obd_hutchinson\""));
    }
}
