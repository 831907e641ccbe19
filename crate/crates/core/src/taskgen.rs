//! Task mixtures and sequence generation for the three settings.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Context resampling budget for IWL sequences.
pub const IWL_MAX_ATTEMPTS: usize = 1000;

/// Label written in place of the query label in classification sequences.
pub const QUERY_SENTINEL: i8 = -1;

pub const DEFAULT_EVAL_SIZE: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingKind {
    #[serde(alias = "BallsUrns")]
    BallsUrns,
    #[serde(alias = "LinearRegression")]
    LinearRegression,
    #[serde(alias = "Classification")]
    Classification,
}

impl SettingKind {
    pub fn slug(self) -> &'static str {
        match self {
            SettingKind::BallsUrns => "balls_urns",
            SettingKind::LinearRegression => "linear_regression",
            SettingKind::Classification => "classification",
        }
    }

    /// Noise variance used when none is given explicitly.
    pub fn default_sigma2(self, m: usize) -> f64 {
        match self {
            SettingKind::BallsUrns => 0.0,
            SettingKind::LinearRegression => m as f64 / 256.0,
            SettingKind::Classification => 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub setting: SettingKind,
    #[serde(rename = "D")]
    pub d: usize,
    pub m: usize,
    #[serde(rename = "C")]
    pub c: usize,
    pub sigma2: f64,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn new(setting: SettingKind, d: usize, m: usize, c: usize, seed: u64) -> Self {
        Self {
            setting,
            d,
            m,
            c,
            sigma2: setting.default_sigma2(m),
            seed,
        }
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Self {
        self.sigma2 = sigma2;
        self
    }

    pub fn with_diversity(&self, d: usize) -> Self {
        Self { d, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidSpec("task diversity D must be at least 1".into()));
        }
        if self.m == 0 {
            return Err(Error::InvalidSpec("task dimensionality m must be at least 1".into()));
        }
        if self.setting == SettingKind::BallsUrns && self.m < 2 {
            return Err(Error::InvalidSpec(format!(
                "balls & urns needs at least 2 ball types, got m={}",
                self.m
            )));
        }
        let min_c = if self.setting == SettingKind::Classification {
            2
        } else {
            1
        };
        if self.c < min_c {
            return Err(Error::InvalidSpec(format!(
                "context length C={} is below the minimum {min_c} for {:?}",
                self.c, self.setting
            )));
        }
        if !self.sigma2.is_finite() || self.sigma2 < 0.0 {
            return Err(Error::InvalidSpec(format!(
                "sigma2 must be finite and >= 0, got {}",
                self.sigma2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub w: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMixture {
    pub spec: MixtureSpec,
    pub tasks: Vec<Task>,
}

impl TaskMixture {
    pub fn setting(&self) -> SettingKind {
        self.spec.setting
    }

    pub fn diversity(&self) -> usize {
        self.tasks.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    BallsUrns {
        tokens: Vec<usize>,
    },
    LinearRegression {
        xs: Vec<Vec<f64>>,
        ys: Vec<f64>,
    },
    /// `items`/`labels` are the C-1 context pairs. `query` carries the
    /// sentinel label -1 in the sequence; `target` is its true label and
    /// `twin` the context position it was re-noised from (none for IWL).
    Classification {
        items: Vec<Vec<f64>>,
        labels: Vec<u8>,
        query: Vec<f64>,
        target: u8,
        twin: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub setting: SettingKind,
    pub payload: Payload,
    /// One id for BallsUrns/LinearRegression. For Classification, the C-1
    /// context task ids followed by the query's task id.
    pub source_task_ids: Vec<usize>,
}

impl Sequence {
    /// Number of elements a predictor is scored on.
    pub fn predicted_len(&self) -> usize {
        match &self.payload {
            Payload::BallsUrns { tokens } => tokens.len(),
            Payload::LinearRegression { ys, .. } => ys.len(),
            Payload::Classification { .. } => 1,
        }
    }

    /// Position indices of the predicted elements (0-based payload indices).
    pub fn predicted_positions(&self) -> Vec<usize> {
        match &self.payload {
            Payload::BallsUrns { tokens } => (0..tokens.len()).collect(),
            Payload::LinearRegression { ys, .. } => (0..ys.len()).collect(),
            Payload::Classification { items, .. } => vec![items.len()],
        }
    }

    pub fn query_task(&self) -> Option<usize> {
        self.source_task_ids.last().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EvalMode {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
    #[serde(rename = "IWL")]
    Iwl,
}

impl EvalMode {
    fn tag(self) -> u64 {
        match self {
            EvalMode::Id => 1,
            EvalMode::Ood => 2,
            EvalMode::Iwl => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    pub spec: MixtureSpec,
    pub mode: EvalMode,
    pub sequences: Vec<Sequence>,
    /// Fresh tasks used by OOD sets; their ids start at D.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ood_tasks: Vec<Task>,
}

impl EvalSet {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }
}

fn sample_task<R: Rng>(spec: &MixtureSpec, rng: &mut R) -> Task {
    let m = spec.m;
    match spec.setting {
        SettingKind::BallsUrns => {
            // Dirichlet(1): normalized unit exponentials.
            let raw: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let total: f64 = raw.iter().sum();
            Task {
                w: raw.into_iter().map(|x| x / total).collect(),
                label: None,
            }
        }
        SettingKind::LinearRegression => Task {
            w: (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
            label: None,
        },
        SettingKind::Classification => {
            let scale = 1.0 / (m as f64).sqrt();
            let w = (0..m).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            Task {
                w,
                label: Some(rng.random_range(0..2u8)),
            }
        }
    }
}

/// Draws the D tasks of a mixture. Task `d` depends only on `(seed, d)`.
pub fn sample_mixture(spec: &MixtureSpec) -> Result<TaskMixture> {
    spec.validate()?;
    let tasks = (0..spec.d)
        .map(|d| sample_task(spec, &mut rng::stream(spec.seed, Domain::Task, d as u64, 0)))
        .collect();
    Ok(TaskMixture {
        spec: spec.clone(),
        tasks,
    })
}

fn noisy_item<R: Rng>(w: &[f64], sigma2: f64, rng: &mut R) -> Vec<f64> {
    let m = w.len() as f64;
    let sigma = sigma2.sqrt();
    let eps_scale = 1.0 / m.sqrt();
    let norm = 1.0 / (1.0 + sigma2).sqrt();
    w.iter()
        .map(|&wi| (wi + sigma * eps_scale * rng.sample::<f64, _>(StandardNormal)) * norm)
        .collect()
}

fn draw_categorical<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &pk) in p.iter().enumerate() {
        acc += pk;
        if u < acc {
            return k;
        }
    }
    // u landed in the rounding gap past the last cumulative sum
    p.iter().rposition(|&pk| pk > 0.0).unwrap_or(p.len() - 1)
}

fn urn_sequence<R: Rng>(task: &Task, c: usize, rng: &mut R) -> Payload {
    Payload::BallsUrns {
        tokens: (0..c).map(|_| draw_categorical(&task.w, rng)).collect(),
    }
}

fn regression_sequence<R: Rng>(task: &Task, c: usize, sigma2: f64, rng: &mut R) -> Payload {
    let sigma = sigma2.sqrt();
    let mut xs = Vec::with_capacity(c);
    let mut ys = Vec::with_capacity(c);
    for _ in 0..c {
        let x: Vec<f64> = (0..task.w.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let clean: f64 = x.iter().zip(&task.w).map(|(a, b)| a * b).sum();
        ys.push(clean + sigma * rng.sample::<f64, _>(StandardNormal));
        xs.push(x);
    }
    Payload::LinearRegression { xs, ys }
}

/// Classification sequence over `pool` with context ids already chosen.
fn classification_from_ids<R: Rng>(
    pool: &[Task],
    id_offset: usize,
    context_ids: Vec<usize>,
    query_id: usize,
    twin: Option<usize>,
    sigma2: f64,
    rng: &mut R,
) -> Sequence {
    let items = context_ids
        .iter()
        .map(|&id| noisy_item(&pool[id - id_offset].w, sigma2, rng))
        .collect();
    let labels = context_ids
        .iter()
        .map(|&id| pool[id - id_offset].label.unwrap_or(0))
        .collect();
    let query_task = &pool[query_id - id_offset];
    let query = noisy_item(&query_task.w, sigma2, rng);
    let mut source_task_ids = context_ids;
    source_task_ids.push(query_id);
    Sequence {
        setting: SettingKind::Classification,
        payload: Payload::Classification {
            items,
            labels,
            query,
            target: query_task.label.unwrap_or(0),
            twin,
        },
        source_task_ids,
    }
}

/// One training-style sequence: a uniformly chosen task (or, for
/// Classification, C-1 pairs drawn with replacement and a re-noised query).
pub fn sample_sequence<R: Rng>(mixture: &TaskMixture, rng: &mut R) -> Sequence {
    let spec = &mixture.spec;
    let d = mixture.tasks.len();
    match spec.setting {
        SettingKind::Classification => {
            let context: Vec<usize> = (0..spec.c - 1).map(|_| rng.random_range(0..d)).collect();
            let twin = rng.random_range(0..context.len());
            let query_id = context[twin];
            classification_from_ids(&mixture.tasks, 0, context, query_id, Some(twin), spec.sigma2, rng)
        }
        _ => {
            let id = rng.random_range(0..d);
            single_task_sequence(spec, &mixture.tasks[id], id, rng)
        }
    }
}

fn single_task_sequence<R: Rng>(spec: &MixtureSpec, task: &Task, id: usize, rng: &mut R) -> Sequence {
    let payload = match spec.setting {
        SettingKind::BallsUrns => urn_sequence(task, spec.c, rng),
        SettingKind::LinearRegression => regression_sequence(task, spec.c, spec.sigma2, rng),
        SettingKind::Classification => unreachable!("classification sequences draw several tasks"),
    };
    Sequence {
        setting: spec.setting,
        payload,
        source_task_ids: vec![id],
    }
}

/// `index`-th training sequence for this mixture, from its own stream.
pub fn training_sequence(mixture: &TaskMixture, index: u64) -> Sequence {
    let mut rng = rng::stream(
        mixture.spec.seed,
        Domain::TrainSequence,
        mixture.tasks.len() as u64,
        index,
    );
    sample_sequence(mixture, &mut rng)
}

/// Classification context of length C-1 that contains `query_id` at a
/// uniformly chosen position, other entries uniform over the pool.
fn context_with_query<R: Rng>(
    pool_len: usize,
    offset: usize,
    c: usize,
    query_id: usize,
    rng: &mut R,
) -> (Vec<usize>, usize) {
    let mut context: Vec<usize> = (0..c - 1).map(|_| offset + rng.random_range(0..pool_len)).collect();
    let twin = rng.random_range(0..context.len());
    context[twin] = query_id;
    (context, twin)
}

pub fn make_eval_set(mixture: &TaskMixture, n: usize, mode: EvalMode, eval_seed: u64) -> Result<EvalSet> {
    let spec = &mixture.spec;
    spec.validate()?;
    if mode == EvalMode::Iwl && spec.setting != SettingKind::Classification {
        return Err(Error::UnsupportedMode {
            mode,
            setting: spec.setting,
        });
    }
    let d = mixture.tasks.len();

    // Cycle through a shuffled task order so min(n, D) distinct tasks appear.
    let order = {
        let mut rng = rng::stream(eval_seed, Domain::EvalOrder, mode.tag(), d as u64);
        let mut order: Vec<usize> = (0..d).collect();
        for i in (1..d).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        order
    };

    let ood_tasks: Vec<Task> = if mode == EvalMode::Ood {
        (0..n)
            .map(|i| sample_task(spec, &mut rng::stream(spec.seed, Domain::OodTask, i as u64, 0)))
            .collect()
    } else {
        Vec::new()
    };

    let sequences = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(eval_seed, Domain::EvalSequence, (mode.tag() << 32) | d as u64, i as u64);
            match (mode, spec.setting) {
                (EvalMode::Ood, SettingKind::Classification) => {
                    let query = d + i;
                    let (context, twin) = context_with_query(n, d, spec.c, query, &mut rng);
                    Ok(classification_from_ids(
                        &ood_tasks,
                        d,
                        context,
                        query,
                        Some(twin),
                        spec.sigma2,
                        &mut rng,
                    ))
                }
                (EvalMode::Ood, _) => Ok(single_task_sequence(spec, &ood_tasks[i], d + i, &mut rng)),
                (EvalMode::Id, SettingKind::Classification) => {
                    let query = order[i % d];
                    let (context, twin) = context_with_query(d, 0, spec.c, query, &mut rng);
                    Ok(classification_from_ids(
                        &mixture.tasks,
                        0,
                        context,
                        query,
                        Some(twin),
                        spec.sigma2,
                        &mut rng,
                    ))
                }
                (EvalMode::Id, _) => {
                    let id = order[i % d];
                    Ok(single_task_sequence(spec, &mixture.tasks[id], id, &mut rng))
                }
                (EvalMode::Iwl, _) => {
                    let query = order[i % d];
                    for _ in 0..IWL_MAX_ATTEMPTS {
                        let context: Vec<usize> = (0..spec.c - 1).map(|_| rng.random_range(0..d)).collect();
                        if !context.contains(&query) {
                            return Ok(classification_from_ids(
                                &mixture.tasks,
                                0,
                                context,
                                query,
                                None,
                                spec.sigma2,
                                &mut rng,
                            ));
                        }
                    }
                    Err(Error::IwlExhausted {
                        attempts: IWL_MAX_ATTEMPTS,
                    })
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(EvalSet {
        spec: spec.clone(),
        mode,
        sequences,
        ood_tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn bu(d: usize) -> MixtureSpec {
        MixtureSpec::new(SettingKind::BallsUrns, d, 4, 16, 7)
    }

    #[test]
    fn single_urn_is_on_the_simplex() {
        let mix = sample_mixture(&bu(1)).unwrap();
        assert_eq!(mix.tasks.len(), 1);
        let s: f64 = mix.tasks[0].w.iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert!(mix.tasks[0].w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn larger_mixture_extends_smaller() {
        let small = sample_mixture(&bu(2)).unwrap();
        let large = sample_mixture(&bu(4)).unwrap();
        assert_eq!(&large.tasks[..2], &small.tasks[..]);
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(matches!(sample_mixture(&bu(0)), Err(Error::InvalidSpec(_))));
        let one_ball = MixtureSpec::new(SettingKind::BallsUrns, 2, 1, 8, 0);
        assert!(matches!(sample_mixture(&one_ball), Err(Error::InvalidSpec(_))));
        let short = MixtureSpec::new(SettingKind::Classification, 2, 4, 1, 0);
        assert!(short.validate().is_err());
    }

    #[test]
    fn default_noise_levels() {
        assert_eq!(
            MixtureSpec::new(SettingKind::LinearRegression, 1, 8, 4, 0).sigma2,
            8.0 / 256.0
        );
        assert_eq!(MixtureSpec::new(SettingKind::Classification, 1, 8, 4, 0).sigma2, 0.5);
    }

    #[test]
    fn degenerate_urn_emits_one_token() {
        let mix = TaskMixture {
            spec: bu(1),
            tasks: vec![Task {
                w: vec![1.0, 0.0, 0.0, 0.0],
                label: None,
            }],
        };
        let mut rng = rng::stream(1, Domain::TrainSequence, 0, 0);
        for _ in 0..20 {
            match sample_sequence(&mix, &mut rng).payload {
                Payload::BallsUrns { tokens } => assert!(tokens.iter().all(|&t| t == 0)),
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn classification_shape_and_twin() {
        let spec = MixtureSpec::new(SettingKind::Classification, 8, 4, 6, 3);
        let mix = sample_mixture(&spec).unwrap();
        let seq = training_sequence(&mix, 0);
        assert_eq!(seq.source_task_ids.len(), 6);
        match &seq.payload {
            Payload::Classification {
                items,
                labels,
                twin,
                target,
                ..
            } => {
                assert_eq!(items.len(), 5);
                assert_eq!(labels.len(), 5);
                let twin = twin.unwrap();
                assert_eq!(seq.source_task_ids[twin], seq.query_task().unwrap());
                assert_eq!(labels[twin], *target);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn id_eval_covers_each_task() {
        let mix = sample_mixture(&bu(4)).unwrap();
        let eval = make_eval_set(&mix, 500, EvalMode::Id, 11).unwrap();
        assert_eq!(eval.len(), 500);
        let ids: BTreeSet<usize> = eval.sequences.iter().map(|s| s.source_task_ids[0]).collect();
        assert_eq!(ids.len(), 4);
    }

    #[test]
    fn ood_ids_are_disjoint() {
        let mix = sample_mixture(&bu(4)).unwrap();
        let eval = make_eval_set(&mix, 50, EvalMode::Ood, 11).unwrap();
        assert!(eval.sequences.iter().all(|s| s.source_task_ids[0] >= 4));
        assert_eq!(eval.ood_tasks.len(), 50);
        assert!(eval.ood_tasks.iter().all(|t| !mix.tasks.contains(t)));
    }

    #[test]
    fn iwl_contexts_exclude_query_task() {
        let spec = MixtureSpec::new(SettingKind::Classification, 16, 4, 8, 3);
        let mix = sample_mixture(&spec).unwrap();
        let eval = make_eval_set(&mix, 200, EvalMode::Iwl, 5).unwrap();
        for seq in &eval.sequences {
            let (ctx, q) = seq.source_task_ids.split_at(seq.source_task_ids.len() - 1);
            assert!(!ctx.contains(&q[0]));
        }
    }

    #[test]
    fn iwl_rejected_outside_classification_and_exhausts_at_d1() {
        let mix = sample_mixture(&bu(4)).unwrap();
        assert!(matches!(
            make_eval_set(&mix, 5, EvalMode::Iwl, 0),
            Err(Error::UnsupportedMode { .. })
        ));
        let spec = MixtureSpec::new(SettingKind::Classification, 1, 4, 4, 3);
        let mix = sample_mixture(&spec).unwrap();
        assert!(matches!(
            make_eval_set(&mix, 2, EvalMode::Iwl, 0),
            Err(Error::IwlExhausted {
                attempts: IWL_MAX_ATTEMPTS
            })
        ));
    }

    #[test]
    fn deterministic_generation() {
        let spec = MixtureSpec::new(SettingKind::LinearRegression, 8, 3, 5, 42);
        let a = sample_mixture(&spec).unwrap();
        let b = sample_mixture(&spec).unwrap();
        assert_eq!(a, b);
        let ea = make_eval_set(&a, 20, EvalMode::Id, 9).unwrap();
        let eb = make_eval_set(&b, 20, EvalMode::Id, 9).unwrap();
        assert_eq!(ea, eb);
        assert_eq!(training_sequence(&a, 3), training_sequence(&b, 3));
    }
}
