//! Classifier over all classes seen so far, and score fairness compensation.
//!
//! After each state the mean softmax score of every class is recorded:
//! `ψ_init(t)` once, when class `t` is first learned; `ψ_cur(t)` for every
//! past class on its exemplars; `ψ_new(s)`, the mean over the classes that
//! are new in state `s`. At inference, when the raw prediction is a new class,
//! each past-class score is multiplied by
//! `(ψ_init(t) / ψ_cur(t)) · (ψ_new(s) / ψ_new(s_i(t)))`.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nncore::{glorot, Graph, Linear, ParamSet, ParamVars, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassifierConfig {
    pub hidden: [usize; 3],
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { hidden: [64, 64, 32] }
    }
}

/// Four dense layers with ReLU between hidden layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Classifier {
    layers: [Linear; 4],
    classes: usize,
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        in_dim: usize,
        cfg: &ClassifierConfig,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if classes == 0 {
            return Err(Error::ClassRange("classifier needs at least one class".into()));
        }
        let [h1, h2, h3] = cfg.hidden;
        let layers = [
            Linear::new(params, "classifier.0", in_dim, h1, rng)?,
            Linear::new(params, "classifier.1", h1, h2, rng)?,
            Linear::new(params, "classifier.2", h2, h3, rng)?,
            Linear::new(params, "classifier.3", h3, classes, rng)?,
        ];
        Ok(Classifier { layers, classes })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[Linear; 4] {
        &self.layers
    }

    pub fn output_layer(&self) -> Linear {
        self.layers[3]
    }

    fn check_width(&self, params: &ParamSet) -> Result<()> {
        let width = self.layers[3].out_dim(params);
        if width != self.classes {
            return Err(Error::ClassRange(format!(
                "classifier outputs {width} scores for {} classes",
                self.classes
            )));
        }
        Ok(())
    }

    /// Logits `[n, classes]` for global features `[n, d]`.
    pub fn forward(&self, g: &mut Graph, vars: &ParamVars, fc: Var) -> Result<Var> {
        let cols = g.value(vars.get(self.layers[3].weight)).cols();
        if cols != self.classes {
            return Err(Error::ClassRange(format!(
                "classifier outputs {cols} scores for {} classes",
                self.classes
            )));
        }
        let mut h = fc;
        for layer in &self.layers[..3] {
            h = layer.forward_relu(g, vars, h)?;
        }
        self.layers[3].forward(g, vars, h)
    }

    /// Softmax scores of one global feature vector.
    pub fn classify(&self, params: &ParamSet, fc: &[f64]) -> Result<Vec<f64>> {
        self.check_width(params)?;
        let mut g = Graph::new();
        let vars = g.bind_params(params);
        let x = g.input(Tensor::row_vector(fc));
        let logits = self.forward(&mut g, &vars, x)?;
        let p = g.softmax(logits)?;
        Ok(g.value(p).row(0).to_vec())
    }

    /// Append `new_classes` freshly initialized outputs; existing output
    /// weights and biases stay bit-identical.
    pub fn expand_classes<R: Rng + ?Sized>(
        &mut self,
        params: &mut ParamSet,
        new_classes: usize,
        rng: &mut R,
    ) -> Result<()> {
        self.check_width(params)?;
        if new_classes == 0 {
            return Ok(());
        }
        let out = self.layers[3];
        let fan_in = out.in_dim(params);
        let total = self.classes + new_classes;
        let w = glorot(fan_in, new_classes, fan_in, total, rng);
        params.append_cols(out.weight, &w);
        params.append_cols(out.bias, &Tensor::zeros(1, new_classes));
        self.classes = total;
        Ok(())
    }
}

/// Index of the largest score, lowest index on ties.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Statistics recorded for a class when it is first learned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassRecord {
    pub initial_state: usize,
    pub psi_init: f64,
}

/// Statistics recorded at the end of one state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateRecord {
    /// Mean score over the classes new in this state.
    pub psi_new: f64,
    /// Mean score of each past class on its exemplars.
    pub psi_cur: BTreeMap<usize, f64>,
}

/// Per-class and per-state mean-score statistics. Every record is written once.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateStats {
    classes: BTreeMap<usize, ClassRecord>,
    states: BTreeMap<usize, StateRecord>,
}

fn check_psi(v: f64, what: &str) -> Result<()> {
    if v.is_finite() && v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::Statistics(format!("{what} = {v} outside (0, 1]")))
    }
}

impl StateStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_class(&mut self, class: usize, initial_state: usize, psi_init: f64) -> Result<()> {
        check_psi(psi_init, "psi_init")?;
        if self.classes.contains_key(&class) {
            return Err(Error::Statistics(format!(
                "class {class} already has initial statistics"
            )));
        }
        self.classes.insert(
            class,
            ClassRecord {
                initial_state,
                psi_init,
            },
        );
        Ok(())
    }

    pub fn record_state(&mut self, state: usize, record: StateRecord) -> Result<()> {
        check_psi(record.psi_new, "psi_new")?;
        for v in record.psi_cur.values() {
            check_psi(*v, "psi_cur")?;
        }
        if self.states.contains_key(&state) {
            return Err(Error::Statistics(format!("state {state} already recorded")));
        }
        self.states.insert(state, record);
        Ok(())
    }

    pub fn class(&self, class: usize) -> Option<&ClassRecord> {
        self.classes.get(&class)
    }

    pub fn state(&self, state: usize) -> Option<&StateRecord> {
        self.states.get(&state)
    }

    pub fn classes(&self) -> impl Iterator<Item = (usize, &ClassRecord)> {
        self.classes.iter().map(|(k, v)| (*k, v))
    }

    pub fn states(&self) -> impl Iterator<Item = (usize, &StateRecord)> {
        self.states.iter().map(|(k, v)| (*k, v))
    }

    /// Rescaling factor for past class `class` evaluated in state `state`.
    pub fn coefficient(&self, class: usize, state: usize) -> Result<f64> {
        let rec = self
            .classes
            .get(&class)
            .ok_or_else(|| Error::Compensation(format!("no initial statistics for class {class}")))?;
        let cur_state = self
            .states
            .get(&state)
            .ok_or_else(|| Error::Compensation(format!("no statistics for state {state}")))?;
        let psi_cur = cur_state
            .psi_cur
            .get(&class)
            .ok_or_else(|| Error::Compensation(format!("no current score for class {class} in state {state}")))?;
        let initial = self
            .states
            .get(&rec.initial_state)
            .ok_or_else(|| Error::Compensation(format!("no statistics for initial state {}", rec.initial_state)))?;
        Ok((rec.psi_init / psi_cur) * (cur_state.psi_new / initial.psi_new))
    }
}

/// Softmax score rows of the samples of one class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub class: usize,
    pub scores: Vec<Vec<f64>>,
}

fn mean_own_score(cs: &ClassScores) -> Result<f64> {
    if cs.scores.is_empty() {
        return Err(Error::Statistics(format!("class {} has no samples", cs.class)));
    }
    let mut total = 0.0;
    for row in &cs.scores {
        let v = row
            .get(cs.class)
            .ok_or_else(|| Error::Statistics(format!("score row lacks class {}", cs.class)))?;
        total += v;
    }
    Ok(total / cs.scores.len() as f64)
}

/// Record the statistics of `state` from score tables of its new classes
/// (training samples) and of past classes (exemplars).
pub fn record_statistics(
    stats: &mut StateStats,
    state: usize,
    new_classes: &[ClassScores],
    past_classes: &[ClassScores],
) -> Result<()> {
    if new_classes.is_empty() {
        return Err(Error::Statistics(format!("state {state} has no new classes")));
    }
    let init: Vec<(usize, f64)> = new_classes
        .iter()
        .map(|cs| Ok((cs.class, mean_own_score(cs)?)))
        .collect::<Result<_>>()?;
    let psi_cur = past_classes
        .iter()
        .map(|cs| Ok((cs.class, mean_own_score(cs)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let psi_new = init.iter().map(|(_, v)| v).sum::<f64>() / init.len() as f64;
    if let Some((c, _)) = init.iter().find(|(c, _)| stats.classes.contains_key(c)) {
        return Err(Error::Statistics(format!("class {c} already has initial statistics")));
    }
    stats.record_state(state, StateRecord { psi_new, psi_cur })?;
    for (class, psi) in init {
        stats.record_class(class, state, psi)?;
    }
    Ok(())
}

/// Apply fairness compensation to one sample's scores in `state`, where
/// classes `0..past_classes` were learned before `state`. Past-class scores
/// are rescaled only when the raw argmax is a new class; the result is not
/// renormalized.
pub fn rectify_scores(raw: &[f64], stats: &StateStats, state: usize, past_classes: usize) -> Result<Vec<f64>> {
    let mut out = raw.to_vec();
    if state <= 1 || past_classes == 0 || argmax(raw) < past_classes {
        return Ok(out);
    }
    for (t, score) in out.iter_mut().enumerate().take(past_classes) {
        *score *= stats.coefficient(t, state)?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn classifier(classes: usize, seed: u64) -> (ParamSet, Classifier) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let c = Classifier::new(&mut ps, 6, &ClassifierConfig { hidden: [8, 8, 4] }, classes, &mut rng).unwrap();
        (ps, c)
    }

    fn logits(ps: &ParamSet, c: &Classifier, fc: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let vars = g.bind_params(ps);
        let x = g.input(Tensor::row_vector(fc));
        let l = c.forward(&mut g, &vars, x).unwrap();
        g.value(l).row(0).to_vec()
    }

    const FC: [f64; 6] = [0.3, -0.2, 0.9, 0.1, 0.5, -0.7];

    #[test]
    fn zero_classifier_is_uniform() {
        let (mut ps, c) = classifier(4, 0);
        for id in ps.ids().collect::<Vec<_>>() {
            ps.value_mut(id).data_mut().fill(0.0);
        }
        assert_eq!(c.classify(&ps, &FC).unwrap(), vec![0.25; 4]);
    }

    #[test]
    fn scores_are_a_distribution_with_logit_argmax() {
        let (ps, c) = classifier(5, 1);
        let s = c.classify(&ps, &FC).unwrap();
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(argmax(&s), argmax(&logits(&ps, &c, &FC)));
    }

    #[test]
    fn expansion_preserves_old_logits() {
        let (mut ps, mut c) = classifier(4, 2);
        let before = logits(&ps, &c, &FC);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        c.expand_classes(&mut ps, 0, &mut rng).unwrap();
        assert_eq!(logits(&ps, &c, &FC), before);
        c.expand_classes(&mut ps, 4, &mut rng).unwrap();
        assert_eq!(c.classes(), 8);
        let after = logits(&ps, &c, &FC);
        assert_eq!(after.len(), 8);
        assert_eq!(&after[..4], &before[..]);
    }

    #[test]
    fn width_mismatch_is_class_range_error() {
        let (mut ps, c) = classifier(3, 3);
        let out = c.output_layer();
        ps.append_cols(out.weight, &Tensor::zeros(4, 1));
        ps.append_cols(out.bias, &Tensor::zeros(1, 1));
        assert!(matches!(c.classify(&ps, &FC), Err(Error::ClassRange(_))));
    }

    fn stats_for_flip() -> StateStats {
        let mut st = StateStats::new();
        st.record_state(
            1,
            StateRecord {
                psi_new: 0.25,
                psi_cur: BTreeMap::new(),
            },
        )
        .unwrap();
        st.record_class(0, 1, 0.8).unwrap();
        st.record_state(
            2,
            StateRecord {
                psi_new: 0.5,
                psi_cur: BTreeMap::from([(0, 0.4)]),
            },
        )
        .unwrap();
        st
    }

    #[test]
    fn hand_derived_flip() {
        let st = stats_for_flip();
        assert_eq!(st.coefficient(0, 2).unwrap(), 4.0);
        let raw = [0.2, 0.5, 0.3];
        let rect = rectify_scores(&raw, &st, 2, 1).unwrap();
        assert_eq!(rect, vec![0.8, 0.5, 0.3]);
        assert_eq!(argmax(&raw), 1);
        assert_eq!(argmax(&rect), 0);
    }

    #[test]
    fn unit_coefficients_change_nothing() {
        let mut st = StateStats::new();
        st.record_state(
            1,
            StateRecord {
                psi_new: 0.6,
                psi_cur: BTreeMap::new(),
            },
        )
        .unwrap();
        st.record_class(0, 1, 0.7).unwrap();
        st.record_class(1, 1, 0.5).unwrap();
        st.record_state(
            2,
            StateRecord {
                psi_new: 0.6,
                psi_cur: BTreeMap::from([(0, 0.7), (1, 0.5)]),
            },
        )
        .unwrap();
        let raw = [0.1, 0.2, 0.4, 0.3];
        assert_eq!(rectify_scores(&raw, &st, 2, 2).unwrap(), raw.to_vec());
    }

    #[test]
    fn past_argmax_is_left_alone() {
        let st = stats_for_flip();
        let raw = [0.6, 0.3, 0.1];
        assert_eq!(rectify_scores(&raw, &st, 2, 1).unwrap(), raw.to_vec());
    }

    #[test]
    fn first_state_is_identity() {
        let st = StateStats::new();
        let raw = [0.2, 0.8];
        assert_eq!(rectify_scores(&raw, &st, 1, 0).unwrap(), raw.to_vec());
        assert_eq!(rectify_scores(&raw, &st, 1, 1).unwrap(), raw.to_vec());
    }

    #[test]
    fn missing_statistic_is_compensation_error() {
        let st = stats_for_flip();
        assert!(matches!(
            rectify_scores(&[0.1, 0.1, 0.8], &st, 3, 1),
            Err(Error::Compensation(_))
        ));
        assert!(matches!(
            rectify_scores(&[0.1, 0.1, 0.8], &st, 2, 2),
            Err(Error::Compensation(_))
        ));
    }

    #[test]
    fn new_class_scores_untouched_and_classes_independent() {
        let mut st = StateStats::new();
        st.record_state(
            1,
            StateRecord {
                psi_new: 0.9,
                psi_cur: BTreeMap::new(),
            },
        )
        .unwrap();
        st.record_class(0, 1, 0.9).unwrap();
        st.record_class(1, 1, 0.8).unwrap();
        st.record_state(
            2,
            StateRecord {
                psi_new: 0.7,
                psi_cur: BTreeMap::from([(0, 0.3), (1, 0.6)]),
            },
        )
        .unwrap();
        let raw = [0.05, 0.1, 0.5, 0.35];
        let r = rectify_scores(&raw, &st, 2, 2).unwrap();
        assert_eq!(&r[2..], &raw[2..]);
        assert_eq!(r[0], raw[0] * st.coefficient(0, 2).unwrap());
        assert_eq!(r[1], raw[1] * st.coefficient(1, 2).unwrap());
    }

    #[test]
    fn records_are_write_once() {
        let mut st = stats_for_flip();
        assert!(matches!(st.record_class(0, 2, 0.5), Err(Error::Statistics(_))));
        assert!(matches!(
            st.record_state(
                2,
                StateRecord {
                    psi_new: 0.5,
                    psi_cur: BTreeMap::new()
                }
            ),
            Err(Error::Statistics(_))
        ));
        assert_eq!(st.class(0).unwrap().psi_init, 0.8);
        assert!(matches!(st.record_class(5, 1, 0.0), Err(Error::Statistics(_))));
    }

    #[test]
    fn record_statistics_from_score_tables() {
        let mut st = StateStats::new();
        // State 1: classes 0 and 1.
        let new = [
            ClassScores {
                class: 0,
                scores: vec![vec![0.9, 0.1], vec![0.7, 0.3], vec![0.8, 0.2]],
            },
            ClassScores {
                class: 1,
                scores: vec![vec![0.4, 0.6], vec![0.2, 0.8]],
            },
        ];
        record_statistics(&mut st, 1, &new, &[]).unwrap();
        let psi0 = (0.9 + 0.7 + 0.8) / 3.0;
        let psi1 = (0.6 + 0.8) / 2.0;
        assert!((st.class(0).unwrap().psi_init - psi0).abs() < 1e-12);
        assert!((st.class(1).unwrap().psi_init - psi1).abs() < 1e-12);
        assert!((st.state(1).unwrap().psi_new - (psi0 + psi1) / 2.0).abs() < 1e-12);

        let new2 = [ClassScores {
            class: 2,
            scores: vec![vec![0.1, 0.1, 0.8]],
        }];
        let past = [
            ClassScores {
                class: 0,
                scores: vec![vec![0.5, 0.2, 0.3], vec![0.3, 0.3, 0.4]],
            },
            ClassScores {
                class: 1,
                scores: vec![vec![0.2, 0.6, 0.2]],
            },
        ];
        record_statistics(&mut st, 2, &new2, &past).unwrap();
        let s2 = st.state(2).unwrap();
        assert!((s2.psi_cur[&0] - 0.4).abs() < 1e-12);
        assert!((s2.psi_cur[&1] - 0.6).abs() < 1e-12);
        assert!((s2.psi_new - 0.8).abs() < 1e-12);
        assert_eq!(st.class(2).unwrap().initial_state, 2);
        // write-once initial statistics
        assert!(record_statistics(&mut st, 3, &new2, &[]).is_err());
    }

    #[test]
    fn uniform_and_confident_bounds() {
        let mut st = StateStats::new();
        let uniform = [ClassScores {
            class: 0,
            scores: vec![vec![0.25; 4]; 3],
        }];
        record_statistics(&mut st, 1, &uniform, &[]).unwrap();
        assert_eq!(st.class(0).unwrap().psi_init, 0.25);
        let confident = [ClassScores {
            class: 1,
            scores: vec![vec![0.0, 1.0]; 2],
        }];
        record_statistics(&mut st, 2, &confident, &[]).unwrap();
        assert_eq!(st.class(1).unwrap().psi_init, 1.0);
    }

    #[test]
    fn empty_class_is_statistics_error() {
        let mut st = StateStats::new();
        let empty = [ClassScores {
            class: 0,
            scores: vec![],
        }];
        assert!(matches!(
            record_statistics(&mut st, 1, &empty, &[]),
            Err(Error::Statistics(_))
        ));
    }
}
