//! Monthly local/global training protocol.
//!
//! Each month, every country's client trains on its local-train shard:
//! from scratch the first time, afterwards from a blend of its previous
//! weights and the global weights. The server then aggregates all local
//! weights together with the previous global weights and trains the
//! result on the month's pooled global-train shards. After the last month
//! each local model is scored on its country's accumulated local-test set
//! and the global model on the accumulated global-test set.
//!
//! Clients own their data. The only values that cross from a [`Client`]
//! to the [`Server`] are [`WeightedContribution`]s.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encode::{encode_dataset, EncodedDataset, EncodingContext, SequenceRecord};
use crate::error::{Error, Result};
use crate::fed::{aggregate, merge_local_global, Scheme, WeightedContribution};
use crate::metrics::{self, MetricsReport};
use crate::nn::{init_model, predict, train, ModelSpec, TrainConfig, TrainHistory, WeightSet};
use crate::partition::{build_plan, PartitionPlan, SplitConfig};
use crate::seeds::derive_seed;

/// Sample count the previous global weights carry into the server-side
/// aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalMember {
    /// Weighted like an average client: the mean local sample count.
    #[default]
    OneMember,
    /// The number of examples the global model trained on last month.
    SampleCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    pub scheme: Scheme,
    /// Share of the client's own weights when blending with the global ones.
    pub local_fraction: f64,
    pub global_member: GlobalMember,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self { scheme: Scheme::SampleWeighted, local_fraction: 0.5, global_member: GlobalMember::OneMember }
    }
}

/// Everything that defines one experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub context: EncodingContext,
    pub countries: Vec<String>,
    pub months: Vec<u32>,
    pub split: SplitConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub fed: FedConfig,
    /// Worker threads for client training; 0 or 1 trains serially.
    pub parallelism: usize,
}

impl Experiment {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.split.validate()?;
        if self.model.input_dim != self.context.feature_width() {
            return Err(Error::InvalidSpec(format!(
                "input_dim {} differs from the encoding width {}",
                self.model.input_dim,
                self.context.feature_width()
            )));
        }
        if self.model.num_classes != self.context.num_classes() {
            return Err(Error::InvalidSpec(format!(
                "num_classes {} differs from the {} configured labels",
                self.model.num_classes,
                self.context.num_classes()
            )));
        }
        if !(0.0..=1.0).contains(&self.fed.local_fraction) {
            return Err(Error::InvalidConfig(format!("local_fraction {} outside [0, 1]", self.fed.local_fraction)));
        }
        if self.countries.is_empty() || self.months.is_empty() {
            return Err(Error::InvalidConfig("need at least one country and one month".into()));
        }
        Ok(())
    }

    fn round_config(&self, role: &str, month: u32) -> TrainConfig {
        TrainConfig {
            shuffle_seed: derive_seed(self.train.shuffle_seed, &[role, &month.to_string()]),
            ..self.train.clone()
        }
    }
}

/// Encoded corpus and the partition plan shared by the federated and
/// centralized runs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: EncodedDataset,
    pub plan: PartitionPlan,
}

pub fn prepare(exp: &Experiment, records: &[SequenceRecord]) -> Result<Prepared> {
    exp.validate()?;
    let dataset = encode_dataset(records, &exp.context)?;
    let plan = build_plan(records, &exp.countries, &exp.months, &exp.split)?;
    Ok(Prepared { dataset, plan })
}

/// A country's training participant. Holds its shards privately; the
/// rows themselves are unreachable from outside the crate:
///
/// ```compile_fail
/// use epic_core::orchestrator::Client;
///
/// fn leak(client: &Client) -> usize {
///     client.train_shards.len()
/// }
/// ```
pub struct Client {
    country: String,
    /// Local-train shard per month, aligned with `Experiment::months`.
    train_shards: Vec<EncodedDataset>,
    local_test: EncodedDataset,
}

/// One round of client output.
#[derive(Debug, Clone)]
pub struct ClientUpdate {
    pub contribution: WeightedContribution,
    pub history: TrainHistory,
    pub seconds: f64,
}

impl Client {
    pub fn new(country: String, train_shards: Vec<EncodedDataset>, local_test: EncodedDataset) -> Self {
        Self { country, train_shards, local_test }
    }

    pub fn country(&self) -> &str {
        &self.country
    }

    /// Number of local-train examples in round `round`.
    pub fn shard_size(&self, round: usize) -> usize {
        self.train_shards.get(round).map_or(0, EncodedDataset::len)
    }

    /// Train for round `round`. Returns `None` when the shard is empty,
    /// in which case the caller keeps the previous weights.
    pub fn train_round(
        &self,
        exp: &Experiment,
        round: usize,
        previous: Option<&WeightSet>,
        global: Option<&WeightSet>,
    ) -> Result<Option<ClientUpdate>> {
        let shard = &self.train_shards[round];
        if shard.is_empty() {
            return Ok(None);
        }
        let start = Instant::now();
        let init = match (previous, global) {
            (None, _) => init_model(&exp.model)?,
            (Some(local), Some(global)) => merge_local_global(local, global, exp.fed.local_fraction)?,
            (Some(local), None) => local.clone(),
        };
        let cfg = exp.round_config("local", exp.months[round]);
        let (weights, history) = train(&init, &exp.model, shard, &cfg)?;
        Ok(Some(ClientUpdate {
            contribution: WeightedContribution { weights, sample_count: shard.len() as u64 },
            history,
            seconds: start.elapsed().as_secs_f64(),
        }))
    }

    /// Score `weights` on this client's accumulated local-test set.
    pub fn evaluate(&self, exp: &Experiment, weights: &WeightSet) -> Result<MetricsReport> {
        evaluate_dataset(weights, &exp.model, &self.local_test)
    }

    pub fn local_test_size(&self) -> usize {
        self.local_test.len()
    }
}

/// Server side: aggregation plus global training on the pooled
/// global-train shards.
pub struct Server {
    train_shards: Vec<EncodedDataset>,
    global_test: EncodedDataset,
}

impl Server {
    pub fn new(train_shards: Vec<EncodedDataset>, global_test: EncodedDataset) -> Self {
        Self { train_shards, global_test }
    }

    /// New global weights for round `round`: fresh when there are no
    /// previous global weights, otherwise initialized from the aggregate of
    /// all local contributions and the previous global contribution.
    pub fn train_round(
        &self,
        exp: &Experiment,
        round: usize,
        locals: &[WeightedContribution],
        previous: Option<&WeightedContribution>,
    ) -> Result<Option<ClientUpdate>> {
        let shard = &self.train_shards[round];
        if shard.is_empty() {
            return Ok(None);
        }
        let start = Instant::now();
        let init = match previous {
            None => init_model(&exp.model)?,
            Some(global) => {
                let mut members = locals.to_vec();
                let weight = match exp.fed.global_member {
                    GlobalMember::SampleCount => global.sample_count,
                    GlobalMember::OneMember if locals.is_empty() => global.sample_count,
                    GlobalMember::OneMember => {
                        let total: u64 = locals.iter().map(|c| c.sample_count).sum();
                        (total as f64 / locals.len() as f64).round().max(1.0) as u64
                    }
                };
                members.push(WeightedContribution { weights: global.weights.clone(), sample_count: weight });
                aggregate(&members, exp.fed.scheme)?
            }
        };
        let cfg = exp.round_config("global", exp.months[round]);
        let (weights, history) = train(&init, &exp.model, shard, &cfg)?;
        Ok(Some(ClientUpdate {
            contribution: WeightedContribution { weights, sample_count: shard.len() as u64 },
            history,
            seconds: start.elapsed().as_secs_f64(),
        }))
    }

    pub fn evaluate(&self, exp: &Experiment, weights: &WeightSet) -> Result<MetricsReport> {
        evaluate_dataset(weights, &exp.model, &self.global_test)
    }
}

/// Split the encoded corpus into per-client and server-side datasets.
pub fn distribute(exp: &Experiment, prepared: &Prepared) -> (Vec<Client>, Server) {
    let Prepared { dataset, plan } = prepared;
    let clients = exp
        .countries
        .iter()
        .map(|country| {
            let shards = exp
                .months
                .iter()
                .map(|&m| plan.cell(m, country).map_or_else(Vec::new, |c| c.local_train.clone()))
                .map(|idx| dataset.select(&idx))
                .collect();
            let local_test = dataset.select(&plan.local_test[country]);
            Client::new(country.clone(), shards, local_test)
        })
        .collect();
    // one global shard per month, pooled over every country's gtr cell
    let server_shards = exp
        .months
        .iter()
        .map(|&m| {
            let idx: Vec<usize> = plan.cells_for_month(m).flat_map(|c| c.global_train.iter().copied()).collect();
            dataset.select(&idx)
        })
        .collect();
    (clients, Server::new(server_shards, dataset.select(&plan.global_test)))
}

/// Per-round view of the protocol state, handed to the round observer.
#[derive(Debug, Clone, Default)]
pub struct RoundState {
    pub month: u32,
    /// Latest weights per country; absent until a country first trains.
    pub local: BTreeMap<String, WeightedContribution>,
    pub global: Option<WeightedContribution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHistory {
    pub model: String,
    pub month: u32,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalReport {
    pub country: String,
    pub test_examples: usize,
    /// `None` when the country never trained or has no local test data.
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub locals: Vec<LocalReport>,
    pub global: MetricsReport,
    pub histories: Vec<ModelHistory>,
    /// Wall-clock training seconds per model; excluded from serialized
    /// reports so they stay byte-reproducible.
    #[serde(skip)]
    pub train_seconds: BTreeMap<String, f64>,
}

pub const GLOBAL_MODEL: &str = "global";
pub const CENTRALIZED_MODEL: &str = "centralized";

/// Run the full federated protocol. `observer` sees the state after each
/// month (e.g. to write checkpoints).
pub fn run_epic(
    exp: &Experiment,
    prepared: &Prepared,
    observer: &mut dyn FnMut(&RoundState) -> Result<()>,
) -> Result<ExperimentReport> {
    exp.validate()?;
    let first = exp.months[0];
    if prepared.plan.cells_for_month(first).all(|c| c.is_empty()) {
        return Err(Error::NoData(format!("no records in the first month (index {first})")));
    }
    let (clients, server) = distribute(exp, prepared);
    run_rounds(exp, &clients, &server, observer)
}

/// Drive the protocol over already-distributed clients and server.
pub fn run_rounds(
    exp: &Experiment,
    clients: &[Client],
    server: &Server,
    observer: &mut dyn FnMut(&RoundState) -> Result<()>,
) -> Result<ExperimentReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(exp.parallelism.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;

    let mut state = RoundState::default();
    let mut histories = Vec::new();
    let mut seconds: BTreeMap<String, f64> = BTreeMap::new();

    for (round, &month) in exp.months.iter().enumerate() {
        state.month = month;
        let global_weights = state.global.as_ref().map(|g| &g.weights);
        let step = |client: &Client| {
            let previous = state.local.get(client.country()).map(|c| &c.weights);
            client.train_round(exp, round, previous, global_weights)
        };
        let updates: Vec<Result<Option<ClientUpdate>>> = if exp.parallelism > 1 {
            pool.install(|| clients.par_iter().map(step).collect())
        } else {
            clients.iter().map(step).collect()
        };
        // barrier: every client of this month has finished
        for (client, update) in clients.iter().zip(updates) {
            if let Some(u) = update? {
                histories.push(ModelHistory { model: client.country().to_string(), month, history: u.history });
                *seconds.entry(client.country().to_string()).or_default() += u.seconds;
                state.local.insert(client.country().to_string(), u.contribution);
            }
        }

        // Every current local model participates, including those carried
        // forward from an earlier month.
        let locals: Vec<WeightedContribution> =
            exp.countries.iter().filter_map(|c| state.local.get(c).cloned()).collect();
        if let Some(u) = server.train_round(exp, round, &locals, state.global.as_ref())? {
            histories.push(ModelHistory { model: GLOBAL_MODEL.to_string(), month, history: u.history });
            *seconds.entry(GLOBAL_MODEL.to_string()).or_default() += u.seconds;
            state.global = Some(u.contribution);
        }
        observer(&state)?;
    }

    let global =
        state.global.as_ref().ok_or_else(|| Error::NoData("the global model never received training data".into()))?;
    let global_report = server.evaluate(exp, &global.weights)?;
    let mut locals = Vec::with_capacity(clients.len());
    for client in clients {
        let metrics = match state.local.get(client.country()) {
            Some(c) if client.local_test_size() > 0 => Some(client.evaluate(exp, &c.weights)?),
            _ => None,
        };
        locals.push(LocalReport {
            country: client.country().to_string(),
            test_examples: client.local_test_size(),
            metrics,
        });
    }
    Ok(ExperimentReport { locals, global: global_report, histories, train_seconds: seconds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralizedReport {
    pub metrics: MetricsReport,
    pub history: TrainHistory,
    #[serde(skip)]
    pub train_seconds: f64,
}

/// Baseline: one model trained on every training shard (local and global
/// train sets of all cells) for `months x epochs` epochs, scored on the
/// same global-test set as the federated run.
pub fn run_centralized(exp: &Experiment, prepared: &Prepared) -> Result<CentralizedReport> {
    exp.validate()?;
    let Prepared { dataset, plan } = prepared;
    let idx: Vec<usize> =
        plan.cells.iter().flat_map(|c| c.local_train.iter().chain(&c.global_train).copied()).collect();
    if idx.is_empty() {
        return Err(Error::NoData("no training examples in any cell".into()));
    }
    let pooled = dataset.select(&idx);
    let cfg = TrainConfig {
        epochs: exp.train.epochs * exp.months.len(),
        shuffle_seed: derive_seed(exp.train.shuffle_seed, &[CENTRALIZED_MODEL]),
        ..exp.train.clone()
    };
    let start = Instant::now();
    let (weights, history) = train(&init_model(&exp.model)?, &exp.model, &pooled, &cfg)?;
    let train_seconds = start.elapsed().as_secs_f64();
    let metrics = evaluate(&weights, &exp.model, &plan.global_test, dataset)?;
    Ok(CentralizedReport { metrics, history, train_seconds })
}

/// Eval-mode metrics of `weights` on the rows `test_indices` of `dataset`.
pub fn evaluate(
    weights: &WeightSet,
    spec: &ModelSpec,
    test_indices: &[usize],
    dataset: &EncodedDataset,
) -> Result<MetricsReport> {
    if test_indices.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    evaluate_dataset(weights, spec, &dataset.select(test_indices))
}

pub fn evaluate_dataset(weights: &WeightSet, spec: &ModelSpec, test: &EncodedDataset) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let prediction = predict(weights, spec, test)?;
    let probabilities: Array2<f64> = prediction.probabilities.mapv(f64::from);
    metrics::compute(&test.class_indices(), &prediction.classes, probabilities.view(), spec.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encode::Alphabet;

    fn records(n: usize, countries: &[&str], months: u32) -> Vec<SequenceRecord> {
        (0..n)
            .map(|i| {
                let class = i % 2;
                SequenceRecord {
                    id: format!("r{i}"),
                    sequence: if class == 0 { "ACDA".into() } else { "WYWY".into() },
                    country: countries[(i / 2) % countries.len()].into(),
                    month: (i as u32 / 2 / countries.len() as u32) % months,
                    lineage: if class == 0 { "a".into() } else { "b".into() },
                }
            })
            .collect()
    }

    fn experiment(countries: &[&str], months: u32) -> Experiment {
        let context = EncodingContext::new(Alphabet::amino_acids(), 4, vec!["a".into(), "b".into()]).unwrap();
        let model = ModelSpec { hidden_dims: vec![6], ..ModelSpec::with_defaults(context.feature_width(), 2, 3) };
        Experiment {
            context,
            countries: countries.iter().map(|s| s.to_string()).collect(),
            months: (0..months).collect(),
            split: SplitConfig { seed: 1, ..Default::default() },
            model,
            train: TrainConfig { epochs: 5, batch_size: 8, learning_rate: 0.01, ..Default::default() },
            fed: FedConfig::default(),
            parallelism: 1,
        }
    }

    #[test]
    fn single_cell_degenerates_to_plain_training() {
        let exp = experiment(&["USA"], 1);
        let recs = records(60, &["USA"], 1);
        let prepared = prepare(&exp, &recs).unwrap();
        let mut seen = None;
        run_epic(&exp, &prepared, &mut |s| {
            seen = s.local.get("USA").cloned();
            Ok(())
        })
        .unwrap();
        let cell = prepared.plan.cell(0, "USA").unwrap();
        let shard = prepared.dataset.select(&cell.local_train);
        let (direct, _) =
            train(&init_model(&exp.model).unwrap(), &exp.model, &shard, &exp.round_config("local", 0)).unwrap();
        assert_eq!(seen.unwrap().weights, direct);
    }

    #[test]
    fn identical_clients_produce_identical_weights() {
        let exp = experiment(&["A", "B"], 1);
        let recs = records(40, &["A"], 1);
        let shard = encode_dataset(&recs, &exp.context).unwrap();
        let test = EncodedDataset::empty(exp.model.input_dim, 2);
        let a = Client::new("A".into(), vec![shard.clone()], test.clone());
        let b = Client::new("B".into(), vec![shard], test);
        let a = a.train_round(&exp, 0, None, None).unwrap().unwrap();
        let b = b.train_round(&exp, 0, None, None).unwrap().unwrap();
        assert_eq!(a.contribution.weights, b.contribution.weights);
        let agg = aggregate(&[a.contribution.clone(), b.contribution], Scheme::SampleWeighted).unwrap();
        assert_eq!(agg, a.contribution.weights);
    }

    #[test]
    fn empty_first_month_is_no_data() {
        let exp = experiment(&["USA"], 2);
        let recs: Vec<_> = records(20, &["USA"], 1).into_iter().map(|r| SequenceRecord { month: 1, ..r }).collect();
        let prepared = prepare(&exp, &recs).unwrap();
        assert!(matches!(run_epic(&exp, &prepared, &mut |_| Ok(())), Err(Error::NoData(_))));
    }

    #[test]
    fn carry_forward_on_empty_shard() {
        let exp = experiment(&["A", "B"], 2);
        // B only has data in month 0
        let recs: Vec<_> =
            records(80, &["A", "B"], 2).into_iter().filter(|r| !(r.country == "B" && r.month == 1)).collect();
        let prepared = prepare(&exp, &recs).unwrap();
        let mut snapshots = Vec::new();
        run_epic(&exp, &prepared, &mut |s| {
            snapshots.push(s.local.get("B").map(|c| c.weights.clone()));
            Ok(())
        })
        .unwrap();
        assert!(snapshots[0].is_some());
        assert_eq!(snapshots[0], snapshots[1]);
    }

    #[test]
    fn evaluate_errors_on_empty_test_set() {
        let exp = experiment(&["USA"], 1);
        let w = init_model(&exp.model).unwrap();
        let ds = EncodedDataset::empty(exp.model.input_dim, 2);
        assert!(matches!(evaluate(&w, &exp.model, &[], &ds), Err(Error::EmptyTestSet)));
    }

    #[test]
    fn centralized_needs_data() {
        let exp = experiment(&["USA"], 1);
        let prepared = prepare(&exp, &[]).unwrap();
        assert!(matches!(run_centralized(&exp, &prepared), Err(Error::NoData(_))));
    }
}
