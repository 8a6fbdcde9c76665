//! The two decoupled stages, run epoch by epoch so a run can be
//! checkpointed and resumed at any epoch boundary.

use serde::{Deserialize, Serialize};

use super::derive::{
    derive_darts_policy, derive_dots_policy, edge_importance, importance_report, operation_scores,
    EdgeScores, ImportanceReport, TopologyReading,
};
use super::plan::{OptimizerConfig, StagePlan};
use super::strategy::{
    operation_strategy, topology_parameterization, OperationStrategy, RetainedMixing,
    TopologyParameterization,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::space::{Genotype, OpKind, OperationSet};
use crate::supernet::{
    dual_temperature, AnnealSchedule, CellNetwork, EdgeGroups, EdgeLayout, Mixing, NetworkShape,
    OperationWeights, SearchPhase, SupernetState, TopologyWeights,
};
use crate::tensor::{argmax, cosine_lr, Adam, BoundParams, ParamStore, Sgd, Tape, Var};

/// Minimum largest combination weight per node expected at the end of topology search.
pub const CONCENTRATION_WARNING: f64 = 0.95;

/// Static description of a search run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSetup {
    pub shape: NetworkShape,
    pub ops: OperationSet,
    pub plan: StagePlan,
    pub optim: OptimizerConfig,
    pub seed: u64,
}

/// One per-epoch metrics row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub stage: String,
    /// Mean training loss of the epoch.
    pub loss: f64,
    /// Mean validation loss of the architecture steps (operation stage).
    pub val_loss: Option<f64>,
    /// Network-weight learning rate at the start of the epoch.
    pub lr_w: f64,
    pub lr_arch: f64,
    pub t_beta: Option<f64>,
    pub t_alpha: Option<f64>,
    /// Largest combination score per intermediate node (topology stage).
    pub max_beta: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct OperationStage {
    state: SupernetState,
    sgd: Sgd,
    adam: Adam,
    epoch: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TopologyStage {
    state: SupernetState,
    sgd: Sgd,
    adam_beta: Adam,
    adam_alpha: Adam,
    epoch: usize,
    /// Per finished epoch, the heaviest candidate of every edge.
    argmax_history: Vec<Vec<OpKind>>,
}

/// Resumable snapshot taken between epochs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchCheckpoint {
    pub tool_version: String,
    pub setup: SearchSetup,
    pub data_checksum: u64,
    operation: Option<OperationStage>,
    trained_alpha: Option<OperationWeights>,
    topology: Option<TopologyStage>,
    pub metrics: Vec<MetricsRow>,
}

/// Everything a finished search produces.
#[derive(Clone, Debug)]
pub struct SearchOutcome {
    /// Operation-stage logits (absent when no operation search ran).
    pub trained_alpha: Option<OperationWeights>,
    /// Retained candidates per edge with their final weights.
    pub retained: Vec<EdgeScores>,
    pub topology: TopologyWeights,
    pub t_beta: f64,
    pub genotype: Genotype,
    pub darts_genotype: Option<Genotype>,
    pub importance: ImportanceReport,
    pub metrics: Vec<MetricsRow>,
    pub argmax_history: Vec<Vec<OpKind>>,
    pub final_state: SupernetState,
}

pub struct SearchRun {
    setup: SearchSetup,
    strategy: Box<dyn OperationStrategy>,
    parameterization: Box<dyn TopologyParameterization>,
    train: Dataset,
    op_train: Dataset,
    op_val: Dataset,
    operation: Option<OperationStage>,
    trained_alpha: Option<OperationWeights>,
    topology: Option<TopologyStage>,
    metrics: Vec<MetricsRow>,
}

fn bind_views(tape: &mut Tape, batch: &Dataset) -> Result<[Var; 2]> {
    Ok([
        tape.constant(batch.views[0].clone())?,
        tape.constant(batch.views[1].clone())?,
    ])
}

fn batch_count(n: usize, batch: usize) -> usize {
    n.div_ceil(batch)
}

impl SearchRun {
    pub fn new(setup: SearchSetup, train: Dataset) -> Result<Self> {
        setup.plan.validate()?;
        setup.optim.validate()?;
        if train.len() < 2 {
            return Err(Error::invalid("search needs at least two training samples"));
        }
        let strategy = operation_strategy(&setup.plan.strategy, &setup.plan)?;
        let parameterization = topology_parameterization(&setup.plan.baseline, &setup.plan)?;
        let (op_train, op_val) = train.split_half()?;
        let mut run = SearchRun {
            setup,
            strategy,
            parameterization,
            train,
            op_train,
            op_val,
            operation: None,
            trained_alpha: None,
            topology: None,
            metrics: Vec::new(),
        };
        run.start_operation_stage()?;
        Ok(run)
    }

    pub fn setup(&self) -> &SearchSetup {
        &self.setup
    }

    pub fn metrics(&self) -> &[MetricsRow] {
        &self.metrics
    }

    fn start_operation_stage(&mut self) -> Result<()> {
        let groups = self.strategy.search_groups(&self.setup.ops)?;
        match groups {
            Some(groups) if self.setup.plan.op_epochs > 0 => {
                let ops: Vec<OpKind> = groups.iter().flatten().copied().collect();
                let seed = derive_seed(self.setup.seed, "op-init", 0);
                let network = CellNetwork::supernet(self.setup.shape, &ops, seed)?;
                let alpha = OperationWeights::uniform_layout(&self.setup.shape.cell, &groups)?;
                let o = &self.setup.optim;
                self.operation = Some(OperationStage {
                    state: SupernetState {
                        phase: SearchPhase::Operation,
                        network,
                        alpha,
                        beta: None,
                        t_alpha: AnnealSchedule::constant(1.0)?,
                        t_beta: None,
                    },
                    sgd: Sgd::new(o.momentum, o.weight_decay, o.grad_clip),
                    adam: Adam::new(o.arch_beta1, o.arch_beta2, o.arch_weight_decay),
                    epoch: 0,
                });
            }
            Some(groups) => {
                self.trained_alpha = Some(OperationWeights::uniform_layout(
                    &self.setup.shape.cell,
                    &groups,
                )?);
                self.start_topology_stage()?;
            }
            None => self.start_topology_stage()?,
        }
        Ok(())
    }

    fn start_topology_stage(&mut self) -> Result<()> {
        let cell = self.setup.shape.cell;
        let mut edges = Vec::with_capacity(cell.num_edges());
        let mut layout = Vec::with_capacity(cell.num_edges());
        for edge in cell.edges() {
            let ops = self.strategy.retain(self.trained_alpha.as_ref(), edge)?;
            if ops.is_empty() {
                return Err(Error::invalid(format!(
                    "no candidate retained on edge {}-{}",
                    edge.from, edge.to
                )));
            }
            layout.push(EdgeLayout {
                edge,
                ops: ops.clone(),
            });
            edges.push(EdgeGroups {
                edge,
                groups: vec![ops],
            });
        }
        let mut alpha = OperationWeights::zeros(edges)?;
        if let Some(trained) = &self.trained_alpha {
            for k in 0..alpha.len() {
                let src = trained
                    .position(alpha.edges[k].edge)
                    .ok_or_else(|| Error::invalid("trained operation weights miss an edge"))?;
                let logits: Vec<f64> = alpha.edges[k].groups[0]
                    .iter()
                    .map(|&op| {
                        trained.edges[src]
                            .groups
                            .iter()
                            .enumerate()
                            .find_map(|(g, ops)| {
                                ops.iter()
                                    .position(|&o| o == op)
                                    .map(|i| trained.logits(src, g)[i])
                            })
                            .unwrap_or(0.0)
                    })
                    .collect();
                alpha.set_logits(k, 0, &logits)?;
            }
        }

        let plan = &self.setup.plan;
        let mut network = CellNetwork::build(
            self.setup.shape,
            layout,
            derive_seed(self.setup.seed, "topo-init", 0),
        )?;
        if plan.inherit_weights {
            if let Some(op) = &self.operation {
                let old = &op.state.network.weights;
                for p in network.weights.iter_mut() {
                    if let Some(id) = old.find(&p.name) {
                        p.value = old.get(id).value.clone();
                    }
                }
            }
        }
        let t_beta = if self.parameterization.anneals() {
            AnnealSchedule::over_epochs(plan.t0, plan.t_final, plan.topo_epochs)?
        } else {
            AnnealSchedule::constant(1.0)?
        };
        let grouped = self.strategy.retained_mixing() == RetainedMixing::DualTemperature;
        let phase = SearchPhase::Topology {
            group_search: grouped,
        };
        let t_alpha = if grouped {
            dual_temperature(&t_beta, phase)?
        } else {
            AnnealSchedule::constant(1.0)?
        };
        let param = &self.parameterization;
        let beta = TopologyWeights::zeros(&cell, plan.policy, |s| param.logit_count(s))?;
        let o = &self.setup.optim;
        self.topology = Some(TopologyStage {
            state: SupernetState {
                phase,
                network,
                alpha,
                beta: Some(beta),
                t_alpha,
                t_beta: Some(t_beta),
            },
            sgd: Sgd::new(o.momentum, o.weight_decay, o.grad_clip),
            adam_beta: Adam::new(o.arch_beta1, o.arch_beta2, o.arch_weight_decay),
            adam_alpha: Adam::new(o.arch_beta1, o.arch_beta2, o.arch_weight_decay),
            epoch: 0,
            argmax_history: Vec::new(),
        });
        Ok(())
    }

    /// A run that shares this run's finished operation stage but searches
    /// the topology with parameterisation `baseline`, from its first epoch.
    pub fn fork_topology(&self, baseline: &str) -> Result<SearchRun> {
        if self.topology.is_none() {
            return Err(Error::invalid("the operation stage has not finished"));
        }
        let mut setup = self.setup.clone();
        setup.plan.baseline = baseline.to_string();
        let mut run = SearchRun {
            strategy: operation_strategy(&setup.plan.strategy, &setup.plan)?,
            parameterization: topology_parameterization(baseline, &setup.plan)?,
            setup,
            train: self.train.clone(),
            op_train: self.op_train.clone(),
            op_val: self.op_val.clone(),
            operation: self.operation.clone(),
            trained_alpha: self.trained_alpha.clone(),
            topology: None,
            metrics: self
                .metrics
                .iter()
                .filter(|m| m.stage == "operation")
                .cloned()
                .collect(),
        };
        run.start_topology_stage()?;
        Ok(run)
    }

    /// True once the operation stage is over (or was skipped).
    pub fn in_topology_stage(&self) -> bool {
        self.topology.is_some()
    }

    /// True once both stages have run all their epochs.
    pub fn is_finished(&self) -> bool {
        self.topology
            .as_ref()
            .is_some_and(|t| t.epoch >= self.setup.plan.topo_epochs)
    }

    /// Run one epoch of whichever stage is active.
    pub fn step_epoch(&mut self) -> Result<()> {
        if self.is_finished() {
            return Ok(());
        }
        if let Some(op) = self.operation.as_ref() {
            if op.epoch < self.setup.plan.op_epochs {
                self.operation_epoch()?;
                if self
                    .operation
                    .as_ref()
                    .is_some_and(|op| op.epoch == self.setup.plan.op_epochs)
                {
                    self.trained_alpha = self.operation.as_ref().map(|op| op.state.alpha.clone());
                    self.start_topology_stage()?;
                }
                return Ok(());
            }
        }
        self.topology_epoch()
    }

    pub fn run_to_end(&mut self) -> Result<SearchOutcome> {
        while !self.is_finished() {
            self.step_epoch()?;
        }
        self.outcome()
    }

    fn operation_epoch(&mut self) -> Result<()> {
        let setup = &self.setup;
        let bs = setup.optim.batch_size;
        let stage = self.operation.as_mut().expect("operation stage active");
        let epoch = stage.epoch;
        let train = self.op_train.batches(
            bs,
            &mut rng_from_seed(derive_seed(setup.seed, "op-train", epoch as u64)),
        )?;
        let val = self.op_val.batches(
            bs,
            &mut rng_from_seed(derive_seed(setup.seed, "op-val", epoch as u64)),
        )?;
        let steps = train.len().min(val.len());
        let per_epoch =
            batch_count(self.op_train.len(), bs).min(batch_count(self.op_val.len(), bs));
        let total = per_epoch * setup.plan.op_epochs;
        let lr0 = cosine_lr(epoch * per_epoch, total, setup.optim.w_lr)?;
        let (mut loss_sum, mut val_sum) = (0.0, 0.0);
        for s in 0..steps {
            let lr = cosine_lr(epoch * per_epoch + s, total, setup.optim.w_lr)?;
            let (train_loss, val_loss) =
                bilevel_step(stage, &train[s], &val[s], lr, setup.optim.arch_lr)?;
            loss_sum += train_loss;
            val_sum += val_loss;
        }
        stage.epoch += 1;
        self.metrics.push(MetricsRow {
            epoch,
            stage: "operation".into(),
            loss: loss_sum / steps as f64,
            val_loss: Some(val_sum / steps as f64),
            lr_w: lr0,
            lr_arch: setup.optim.arch_lr,
            t_beta: None,
            t_alpha: Some(1.0),
            max_beta: vec![],
        });
        Ok(())
    }

    fn topology_epoch(&mut self) -> Result<()> {
        let setup = &self.setup;
        let bs = setup.optim.batch_size;
        let param = self.parameterization.as_ref();
        let stage = self.topology.as_mut().expect("topology stage active");
        let epoch = stage.epoch;
        let batches = self.train.batches(
            bs,
            &mut rng_from_seed(derive_seed(setup.seed, "topo-train", epoch as u64)),
        )?;
        let per_epoch = batch_count(self.train.len(), bs);
        let total = per_epoch * setup.plan.topo_epochs;
        let t_beta = stage
            .state
            .t_beta
            .as_ref()
            .expect("topology schedule")
            .temperature();
        let t_alpha = stage.state.t_alpha.temperature();
        let lr0 = cosine_lr(epoch * per_epoch, total, setup.optim.w_lr)?;
        let mixes = stage
            .state
            .alpha
            .edges
            .iter()
            .any(|e| e.candidates().len() > 1);
        let mut loss_sum = 0.0;
        for (s, batch) in batches.iter().enumerate() {
            let lr = cosine_lr(epoch * per_epoch + s, total, setup.optim.w_lr)?;
            let st = &mut stage.state;
            let beta = st.beta.as_mut().expect("topology weights");
            let mut tape = Tape::new();
            let views = bind_views(&mut tape, batch)?;
            let bound_w = st.network.weights.bind(&mut tape, true)?;
            let (bound_a, edge_mix) = st.alpha.bind_mixing(&mut tape, true, t_alpha)?;
            let bound_b = beta.store.bind(&mut tape, true)?;
            let gamma = (0..beta.spaces.len())
                .map(|slot| {
                    param
                        .edge_weights(
                            &mut tape,
                            bound_b.get(beta.id(slot)),
                            &beta.spaces[slot],
                            t_beta,
                        )
                        .map(Some)
                })
                .collect::<Result<Vec<_>>>()?;
            let mixing = Mixing {
                edges: edge_mix,
                gamma,
            };
            let logits = st
                .network
                .forward(&mut tape, &bound_w, views, Some(&mixing))?;
            let loss = tape.cross_entropy(logits, &batch.labels)?;
            loss_sum += tape.value(loss).item();
            let grads = tape.backward(loss)?;
            st.network.weights.absorb_grads(&bound_w, &grads);
            beta.store.absorb_grads(&bound_b, &grads);
            stage.sgd.step(&mut st.network.weights, lr)?;
            stage.adam_beta.step(&mut beta.store, setup.optim.arch_lr)?;
            if mixes {
                st.alpha.store.absorb_grads(&bound_a, &grads);
                stage
                    .adam_alpha
                    .step(&mut st.alpha.store, setup.optim.arch_lr)?;
            }
        }
        let st = &mut stage.state;
        let beta = st.beta.as_ref().expect("topology weights");
        let max_beta = (0..beta.spaces.len())
            .map(|slot| {
                let scores =
                    param.combination_scores(beta.logits(slot), &beta.spaces[slot], t_beta)?;
                Ok(scores.into_iter().fold(f64::NEG_INFINITY, f64::max))
            })
            .collect::<Result<Vec<_>>>()?;
        stage.argmax_history.push(
            (0..st.alpha.len())
                .map(|k| {
                    st.alpha.edges[k].groups[0][argmax(st.alpha.logits(k, 0)).expect("non-empty")]
                })
                .collect(),
        );
        stage.epoch += 1;
        self.metrics.push(MetricsRow {
            epoch,
            stage: "topology".into(),
            loss: loss_sum / batches.len() as f64,
            val_loss: None,
            lr_w: lr0,
            lr_arch: setup.optim.arch_lr,
            t_beta: Some(t_beta),
            t_alpha: Some(t_alpha),
            max_beta,
        });
        if stage.epoch < setup.plan.topo_epochs {
            st.t_beta.as_mut().expect("topology schedule").anneal_step();
            st.t_alpha.anneal_step();
        }
        Ok(())
    }

    /// Results of a finished run.
    pub fn outcome(&self) -> Result<SearchOutcome> {
        if !self.is_finished() {
            return Err(Error::invalid("search has not finished"));
        }
        let stage = self
            .topology
            .as_ref()
            .expect("finished run has a topology stage");
        let st = &stage.state;
        let beta = st.beta.clone().expect("topology weights");
        let t_beta = st.t_beta.as_ref().expect("topology schedule").temperature();
        let t_alpha = st.t_alpha.temperature();
        let retained: Vec<EdgeScores> = (0..st.alpha.len())
            .map(|k| Ok((st.alpha.edges[k].edge, st.alpha.weighted_ops(k, t_alpha)?)))
            .collect::<Result<_>>()?;
        let param = self.parameterization.as_ref();
        let mut genotype =
            derive_dots_policy(&beta, param, t_beta, &retained, self.setup.plan.policy)?;
        if param.anneals() {
            for (slot, space) in beta.spaces.iter().enumerate() {
                let top = beta
                    .normalized(slot, t_beta)?
                    .into_iter()
                    .fold(0.0, f64::max);
                if space.len() > 1 && top < CONCENTRATION_WARNING {
                    genotype.meta_mut().warnings.push(format!(
                        "node {}: largest combination weight {top:.3} below {CONCENTRATION_WARNING} at the final temperature",
                        space.node
                    ));
                }
            }
        }
        let darts_genotype = match &self.trained_alpha {
            Some(a)
                if a.edges
                    .iter()
                    .all(|e| e.candidates().iter().any(|&o| o != OpKind::Zero)) =>
            {
                Some(derive_darts_policy(a, &self.setup.shape.cell)?)
            }
            _ => None,
        };
        let importance_source = match &self.trained_alpha {
            Some(a) => edge_importance(&operation_scores(a)?),
            None => edge_importance(&retained),
        };
        let reading = TopologyReading {
            weights: &beta,
            parameterization: param,
            temperature: t_beta,
        };
        let importance = importance_report(&importance_source, &beta.spaces, Some(&reading))?;
        Ok(SearchOutcome {
            trained_alpha: self.trained_alpha.clone(),
            retained,
            topology: beta.clone(),
            t_beta,
            genotype,
            darts_genotype,
            importance,
            metrics: self.metrics.clone(),
            argmax_history: stage.argmax_history.clone(),
            final_state: st.clone(),
        })
    }

    pub fn checkpoint(&self) -> SearchCheckpoint {
        SearchCheckpoint {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            setup: self.setup.clone(),
            data_checksum: self.train.bit_checksum(),
            operation: self.operation.clone(),
            trained_alpha: self.trained_alpha.clone(),
            topology: self.topology.clone(),
            metrics: self.metrics.clone(),
        }
    }

    /// Continue from `checkpoint` on the same training data.
    pub fn resume(checkpoint: SearchCheckpoint, train: Dataset) -> Result<Self> {
        if checkpoint.data_checksum != train.bit_checksum() {
            return Err(Error::Checkpoint(
                "training data differs from the checkpointed run".into(),
            ));
        }
        let mut run = SearchRun::new(checkpoint.setup, train)?;
        run.operation = checkpoint.operation;
        run.trained_alpha = checkpoint.trained_alpha;
        run.topology = checkpoint.topology;
        run.metrics = checkpoint.metrics;
        Ok(run)
    }
}

/// Supernet loss on `batch` with plain node sums, on a fresh tape.
fn forward_loss(
    state: &SupernetState,
    batch: &Dataset,
    train_weights: bool,
    train_alpha: bool,
) -> Result<(Tape, Var, BoundParams, BoundParams)> {
    let mut tape = Tape::new();
    let views = bind_views(&mut tape, batch)?;
    let bound_w = state.network.weights.bind(&mut tape, train_weights)?;
    let (bound_a, edge_mix) =
        state
            .alpha
            .bind_mixing(&mut tape, train_alpha, state.t_alpha.temperature())?;
    let mixing = Mixing {
        edges: edge_mix,
        gamma: vec![None; state.network.shape().cell.intermediate_nodes],
    };
    let logits = state
        .network
        .forward(&mut tape, &bound_w, views, Some(&mixing))?;
    let loss = tape.cross_entropy(logits, &batch.labels)?;
    Ok((tape, loss, bound_w, bound_a))
}

fn step_store(store: &mut ParamStore, bound: &BoundParams, tape: &Tape, loss: Var) -> Result<()> {
    let grads = tape.backward(loss)?;
    store.absorb_grads(bound, &grads);
    Ok(())
}

/// First-order alternation: one architecture step on the validation batch
/// with `w` frozen, then one weight step on the training batch with `α′`
/// frozen. Returns `(train loss, validation loss)`.
fn bilevel_step(
    stage: &mut OperationStage,
    train: &Dataset,
    val: &Dataset,
    lr_w: f64,
    lr_arch: f64,
) -> Result<(f64, f64)> {
    let (tape, loss, _, bound_a) = forward_loss(&stage.state, val, false, true)?;
    let val_loss = tape.value(loss).item();
    step_store(&mut stage.state.alpha.store, &bound_a, &tape, loss)?;
    stage.adam.step(&mut stage.state.alpha.store, lr_arch)?;

    let (tape, loss, bound_w, _) = forward_loss(&stage.state, train, true, false)?;
    let train_loss = tape.value(loss).item();
    step_store(&mut stage.state.network.weights, &bound_w, &tape, loss)?;
    stage.sgd.step(&mut stage.state.network.weights, lr_w)?;
    Ok((train_loss, val_loss))
}
