//! The class-incremental state loop: exemplar memory, per-state training,
//! score statistics and evaluation over every class seen so far.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, incremental_split, AugmentConfig, Dataset, StateData};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::head::{argmax, record_statistics, rectify_scores, ClassScores, StateStats};
use crate::model::{Architecture, Model, ModelConfig};
use crate::nncore::{AdamConfig, Graph, Tensor};

/// Independent random streams derived from the run seed.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Init = 1,
    Expand = 2,
    Batches = 3,
    Exemplars = 4,
}

fn stream(seed: u64, purpose: Stream, state: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | state as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncrementalSchedule {
    pub classes_per_state: Vec<usize>,
    /// Total exemplar budget `|M|`.
    pub exemplars: usize,
    pub seed: u64,
}

impl IncrementalSchedule {
    /// `total` classes split evenly over `states`.
    pub fn uniform(total: usize, states: usize, exemplars: usize, seed: u64) -> Result<Self> {
        if states == 0 || !total.is_multiple_of(states) || total == 0 {
            return Err(Error::Schedule(format!(
                "{total} classes do not split into {states} equal states"
            )));
        }
        Ok(IncrementalSchedule {
            classes_per_state: vec![total / states; states],
            exemplars,
            seed,
        })
    }

    pub fn states(&self) -> usize {
        self.classes_per_state.len()
    }

    pub fn total_classes(&self) -> usize {
        self.classes_per_state.iter().sum()
    }

    /// Classes learned before 1-based `state`.
    pub fn past_classes(&self, state: usize) -> usize {
        self.classes_per_state[..state - 1].iter().sum()
    }

    /// Budget rules for a state with `past` old classes and `new_samples`
    /// training samples over `new_classes` new classes.
    pub fn check_budget(&self, past: usize, new_samples: usize, new_classes: usize) -> Result<()> {
        if self.exemplars == 0 || past == 0 {
            return Ok(());
        }
        if self.exemplars < past {
            return Err(Error::Memory(format!(
                "budget {} below {past} past classes",
                self.exemplars
            )));
        }
        // |M| / c_p < n_s / c_s, cross-multiplied.
        if self.exemplars * new_classes >= new_samples * past {
            return Err(Error::Memory(format!(
                "budget {} per {past} past classes is not small against {new_samples} samples of {new_classes} new classes",
                self.exemplars
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    #[default]
    Herding,
    Random,
}

/// Greedy selection keeping the running mean of the chosen rows closest to
/// the mean of all rows. Ties go to the lowest index.
pub fn herding(features: &Tensor, count: usize) -> Vec<usize> {
    let (n, d) = (features.rows(), features.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(features.row(i)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut sum = vec![0.0; d];
    let mut used = vec![false; n];
    let mut chosen = Vec::with_capacity(count.min(n));
    for k in 1..=count.min(n) {
        let mut best: Option<(f64, usize)> = None;
        for i in (0..n).filter(|&i| !used[i]) {
            let dist: f64 = features
                .row(i)
                .iter()
                .zip(&sum)
                .zip(&mean)
                .map(|((f, s), m)| {
                    let diff = m - (s + f) / k as f64;
                    diff * diff
                })
                .sum();
            if best.is_none_or(|(b, _)| dist < b) {
                best = Some((dist, i));
            }
        }
        let (_, i) = best.expect("unused rows remain");
        used[i] = true;
        for (s, f) in sum.iter_mut().zip(features.row(i)) {
            *s += f;
        }
        chosen.push(i);
    }
    chosen
}

/// Stored past-class samples, each class in selection order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExemplarMemory {
    budget: usize,
    selection: Selection,
    classes: BTreeMap<usize, Vec<PointCloud>>,
}

impl ExemplarMemory {
    pub fn new(budget: usize, selection: Selection) -> Self {
        ExemplarMemory {
            budget,
            selection,
            classes: BTreeMap::new(),
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class(&self, class: usize) -> Option<&[PointCloud]> {
        self.classes.get(&class).map(Vec::as_slice)
    }

    pub fn classes(&self) -> impl Iterator<Item = (usize, &[PointCloud])> {
        self.classes.iter().map(|(c, v)| (*c, v.as_slice()))
    }

    /// All stored clouds, class by class.
    pub fn clouds(&self) -> impl Iterator<Item = &PointCloud> {
        self.classes.values().flatten()
    }

    pub fn quota(budget: usize, past_classes: usize) -> usize {
        budget.checked_div(past_classes).unwrap_or(0)
    }

    /// Check the budget and that only classes below `seen` are stored.
    pub fn check(&self, seen: usize) -> Result<()> {
        if self.len() > self.budget {
            return Err(Error::Memory(format!(
                "{} exemplars over budget {}",
                self.len(),
                self.budget
            )));
        }
        if let Some((&c, _)) = self.classes.iter().find(|(&c, _)| c >= seen) {
            return Err(Error::Memory(format!("exemplars of unseen class {c}")));
        }
        Ok(())
    }

    /// Rebalance for the classes of `previous` joining the past, then select
    /// their exemplars with `model`.
    pub fn update(&mut self, previous: &StateData, model: &Model, rng: &mut ChaCha8Rng) -> Result<()> {
        if self.budget == 0 {
            return Ok(());
        }
        let past = self.classes.len() + previous.num_classes;
        if self.budget < past {
            return Err(Error::Memory(format!(
                "budget {} below {past} past classes",
                self.budget
            )));
        }
        let quota = Self::quota(self.budget, past);
        for stored in self.classes.values_mut() {
            stored.truncate(quota);
        }
        for class in previous.classes() {
            let samples: Vec<PointCloud> = previous.train.iter().filter(|c| c.label == class).cloned().collect();
            let order = match self.selection {
                Selection::Herding => herding(&model.embed(&samples)?, quota),
                Selection::Random => {
                    let mut idx: Vec<usize> = (0..samples.len()).collect();
                    idx.shuffle(rng);
                    idx.truncate(quota);
                    idx
                }
            };
            self.classes
                .insert(class, order.into_iter().map(|i| samples[i].clone()).collect());
        }
        self.check(previous.first_class + previous.num_classes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 150,
            batch_size: 32,
            adam: AdamConfig::default(),
            augment: Some(AugmentConfig::default()),
        }
    }
}

/// Train on `data` for the configured epochs; returns the mean batch loss
/// of every epoch.
pub fn train_state(
    model: &mut Model,
    data: &[&PointCloud],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Schedule("no training data for this state".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if let Some(c) = data.iter().find(|c| c.label >= model.classes()) {
        return Err(Error::ClassRange(format!(
            "label {} with {} outputs",
            c.label,
            model.classes()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<PointCloud> = match &cfg.augment {
                Some(a) => chunk.iter().map(|&i| augment(data[i], a, rng)).collect::<Result<_>>()?,
                None => chunk.iter().map(|&i| data[i].clone()).collect(),
            };
            let refs: Vec<&PointCloud> = batch.iter().collect();
            let labels: Vec<usize> = batch.iter().map(|c| c.label).collect();
            let mut g = Graph::new();
            let vars = g.bind_params(&model.params);
            let out = model.forward(&mut g, &vars, &refs)?;
            let loss = g.cross_entropy(out.logits, &labels)?;
            total += g.value(loss).get(0, 0);
            batches += 1;
            let grads = g.backward(loss)?;
            for (id, grad) in g.param_grads(&grads) {
                model.params.set_grad(id, grad)?;
            }
            model.params.adam_step(&cfg.adam)?;
        }
        trace.push(total / batches as f64);
    }
    Ok(trace)
}

/// Top-1 outcome over a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    /// Past-class samples predicted as a new class.
    pub past_as_new: usize,
}

/// Evaluate precomputed softmax score rows against `labels` in `state`,
/// where classes `0..past_classes` predate it.
pub fn evaluate_scores(
    scores: &Tensor,
    labels: &[usize],
    stats: &StateStats,
    state: usize,
    past_classes: usize,
    use_compensation: bool,
) -> Result<Evaluation> {
    if scores.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} score rows for {} labels",
            scores.rows(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Evaluation("empty test set".into()));
    }
    let mut predictions = Vec::with_capacity(labels.len());
    let mut hits = 0;
    let mut past_as_new = 0;
    for (i, &label) in labels.iter().enumerate() {
        if label >= scores.cols() {
            return Err(Error::Evaluation(format!(
                "label {label} not among {} seen classes",
                scores.cols()
            )));
        }
        let row = scores.row(i);
        let pred = if use_compensation {
            argmax(&rectify_scores(row, stats, state, past_classes)?)
        } else {
            argmax(row)
        };
        hits += usize::from(pred == label);
        past_as_new += usize::from(label < past_classes && pred >= past_classes);
        predictions.push(pred);
    }
    Ok(Evaluation {
        accuracy: hits as f64 / labels.len() as f64,
        predictions,
        past_as_new,
    })
}

pub fn evaluate(
    model: &Model,
    stats: &StateStats,
    test: &[PointCloud],
    state: usize,
    past_classes: usize,
    use_compensation: bool,
) -> Result<Evaluation> {
    if let Some(c) = test.iter().find(|c| c.label >= model.classes()) {
        return Err(Error::Evaluation(format!(
            "label {} not among {} seen classes",
            c.label,
            model.classes()
        )));
    }
    let labels: Vec<usize> = test.iter().map(|c| c.label).collect();
    evaluate_scores(
        &model.scores(test)?,
        &labels,
        stats,
        state,
        past_classes,
        use_compensation,
    )
}

/// Softmax scores grouped by class.
fn class_scores(
    model: &Model,
    clouds: &[&PointCloud],
    classes: impl Iterator<Item = usize>,
) -> Result<Vec<ClassScores>> {
    let owned: Vec<PointCloud> = clouds.iter().map(|c| (*c).clone()).collect();
    let scores = model.scores(&owned)?;
    Ok(classes
        .map(|class| ClassScores {
            class,
            scores: owned
                .iter()
                .enumerate()
                .filter(|(_, c)| c.label == class)
                .map(|(i, _)| scores.row(i).to_vec())
                .collect(),
        })
        .collect())
}

/// One completed state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLog {
    pub state: usize,
    pub classes_seen: usize,
    /// Absent when compensation is disabled or has no exemplar statistics.
    pub acc_with_comp: Option<f64>,
    pub acc_without_comp: f64,
    pub loss_trace: Vec<f64>,
    pub seconds: f64,
    pub past_as_new_with_comp: Option<usize>,
    pub past_as_new_without_comp: usize,
}

impl StateLog {
    pub fn loss_final(&self) -> f64 {
        self.loss_trace.last().copied().unwrap_or(f64::NAN)
    }

    /// Compensated accuracy when available, raw otherwise.
    pub fn accuracy(&self) -> f64 {
        self.acc_with_comp.unwrap_or(self.acc_without_comp)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub states: Vec<StateLog>,
}

pub const RUNLOG_HEADER: &str = "state,classes_seen,acc_with_comp,acc_without_comp,loss_final,seconds";

impl RunLog {
    /// Mean over states of the headline accuracy.
    pub fn average_accuracy(&self) -> f64 {
        mean(self.states.iter().map(StateLog::accuracy))
    }

    pub fn average_accuracy_without_comp(&self) -> f64 {
        mean(self.states.iter().map(|s| s.acc_without_comp))
    }

    /// CSV text. Wall-clock seconds are left blank unless requested so that
    /// reruns stay byte-identical.
    pub fn to_csv(&self, wall_clock: bool) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{RUNLOG_HEADER}");
        for st in &self.states {
            let with = st.acc_with_comp.map(|a| format!("{a:?}")).unwrap_or_default();
            let secs = if wall_clock {
                format!("{:.3}", st.seconds)
            } else {
                String::new()
            };
            let _ = writeln!(
                s,
                "{},{},{},{:?},{:?},{}",
                st.state,
                st.classes_seen,
                with,
                st.acc_without_comp,
                st.loss_final(),
                secs
            );
        }
        s
    }

    /// Per-epoch losses as `state,epoch,loss` rows.
    pub fn loss_csv(&self) -> String {
        let mut s = String::from("state,epoch,loss\n");
        for st in &self.states {
            for (e, l) in st.loss_trace.iter().enumerate() {
                let _ = writeln!(s, "{},{},{l:?}", st.state, e + 1);
            }
        }
        s
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Everything that defines one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub model: ModelConfig,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub schedule: IncrementalSchedule,
    pub selection: Selection,
    pub compensation: bool,
    /// Train each state on the full data of every seen class, without
    /// exemplars or compensation.
    pub joint: bool,
}

/// Named ablations of the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Ours,
    NoAdaptiveCentroids,
    NoAttention,
    NoCompensation,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Ours,
        Variant::NoAdaptiveCentroids,
        Variant::NoAttention,
        Variant::NoCompensation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Ours => "Ours",
            Variant::NoAdaptiveCentroids => "w/oAG",
            Variant::NoAttention => "w/oGA",
            Variant::NoCompensation => "w/oSF",
        }
    }

    pub fn apply(self, spec: &RunSpec) -> RunSpec {
        let mut s = spec.clone();
        match self {
            Variant::Ours => {}
            Variant::NoAdaptiveCentroids => s.arch.adaptive_centroids = false,
            Variant::NoAttention => s.arch.attention = false,
            Variant::NoCompensation => s.compensation = false,
        }
        s
    }
}

/// Final state of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub log: RunLog,
    pub model: Model,
    pub stats: StateStats,
    pub memory: ExemplarMemory,
    pub class_order: Vec<usize>,
}

/// Observer called after each state with the trained model and statistics.
pub type StateHook<'a> = dyn FnMut(&StateLog, &Model, &StateStats) -> Result<()> + 'a;

pub fn run(spec: &RunSpec, dataset: &Dataset) -> Result<RunOutput> {
    run_with(spec, dataset, &mut |_, _, _| Ok(()))
}

pub fn run_with(spec: &RunSpec, dataset: &Dataset, hook: &mut StateHook<'_>) -> Result<RunOutput> {
    let sched = &spec.schedule;
    let split = incremental_split(dataset, &sched.classes_per_state, sched.seed)?;
    let first = split
        .states
        .first()
        .ok_or_else(|| Error::Schedule("no states".into()))?;
    let mut model = Model::new(
        &spec.model,
        spec.arch,
        first.num_classes,
        &mut stream(sched.seed, Stream::Init, 0),
    )?;
    let budget = if spec.joint { 0 } else { sched.exemplars };
    let mut memory = ExemplarMemory::new(budget, spec.selection);
    let mut stats = StateStats::new();
    let mut log = RunLog::default();

    for (i, data) in split.states.iter().enumerate() {
        let state = i + 1;
        let started = Instant::now();
        let past = data.first_class;
        if data.train.is_empty() {
            return Err(Error::Schedule(format!("state {state} has no training data")));
        }
        if state > 1 {
            if !spec.joint {
                sched.check_budget(past, data.train.len(), data.num_classes)?;
                memory.update(
                    &split.states[i - 1],
                    &model,
                    &mut stream(sched.seed, Stream::Exemplars, state),
                )?;
            }
            model.expand_classes(data.num_classes, &mut stream(sched.seed, Stream::Expand, state))?;
        }

        let mut train: Vec<&PointCloud> = data.train.iter().collect();
        if spec.joint {
            train = split.states[..=i].iter().flat_map(|s| s.train.iter()).collect();
        } else {
            train.extend(memory.clouds());
        }
        let losses = train_state(
            &mut model,
            &train,
            &spec.train,
            &mut stream(sched.seed, Stream::Batches, state),
        )?;

        let new_refs: Vec<&PointCloud> = data.train.iter().collect();
        let new_scores = class_scores(&model, &new_refs, data.classes())?;
        let exemplars: Vec<&PointCloud> = memory.clouds().collect();
        let past_scores = if exemplars.is_empty() {
            Vec::new()
        } else {
            class_scores(&model, &exemplars, memory.classes().map(|(c, _)| c))?
        };
        record_statistics(&mut stats, state, &new_scores, &past_scores)?;

        let test: Vec<PointCloud> = split.states[..=i].iter().flat_map(|s| s.test.iter().cloned()).collect();
        let labels: Vec<usize> = test.iter().map(|c| c.label).collect();
        let scores = model.scores(&test)?;
        let raw = evaluate_scores(&scores, &labels, &stats, state, past, false)?;
        let compensated_available = spec.compensation && !spec.joint && (past == 0 || !memory.is_empty());
        let with = if compensated_available {
            Some(evaluate_scores(&scores, &labels, &stats, state, past, true)?)
        } else {
            None
        };
        let entry = StateLog {
            state,
            classes_seen: data.first_class + data.num_classes,
            acc_with_comp: with.as_ref().map(|e| e.accuracy),
            acc_without_comp: raw.accuracy,
            loss_trace: losses,
            seconds: started.elapsed().as_secs_f64(),
            past_as_new_with_comp: with.as_ref().map(|e| e.past_as_new),
            past_as_new_without_comp: raw.past_as_new,
        };
        hook(&entry, &model, &stats)?;
        log.states.push(entry);
    }
    Ok(RunOutput {
        log,
        model,
        stats,
        memory,
        class_order: split.class_order,
    })
}
