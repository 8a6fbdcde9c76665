//! Search stages: frozen architecture learning rates, the one-level
//! topology update against a hand-written training loop, checkpoints,
//! forks and the toy tasks where the right answer is known.

use std::path::Path;

use dots_core::artifacts::{load_checkpoint, save_checkpoint, ArtifactMeta};
use dots_core::data::Dataset;
use dots_core::harness::{generate_task, train_standalone, SyntheticTask, TaskConfig, TrainConfig};
use dots_core::rng::{derive_seed, rng_from_seed};
use dots_core::space::{
    CellSpec, Genotype, GenotypeEdge, GenotypeNode, OpKind, OperationSet, TopologyPolicy,
};
use dots_core::stages::{OptimizerConfig, SearchOutcome, SearchRun, SearchSetup, StagePlan};
use dots_core::supernet::{
    aggregate_gamma_var, mixed_op, AnnealSchedule, Candidate, CellNetwork, EdgeLayout, Mixing,
    NetworkShape,
};
use dots_core::tensor::{cosine_lr, Adam, ParamStore, Sgd, Tape, Tensor};

fn task(seed: u64, signal_node: usize) -> SyntheticTask {
    generate_task(&TaskConfig {
        seed,
        train_samples: 96,
        val_samples: 32,
        test_samples: 128,
        height: 6,
        width: 6,
        signal_node,
        ..TaskConfig::default()
    })
    .unwrap()
}

fn setup(nodes: usize, plan: StagePlan, optim: OptimizerConfig, seed: u64) -> SearchSetup {
    let defaults = TaskConfig::default();
    SearchSetup {
        shape: NetworkShape {
            cell: CellSpec::new(nodes, 4).unwrap(),
            input_channels: defaults.channels,
            classes: defaults.classes,
        },
        ops: OperationSet::canonical(),
        plan,
        optim,
        seed,
    }
}

fn small_plan(strategy: &str) -> StagePlan {
    StagePlan {
        op_epochs: 2,
        topo_epochs: 3,
        strategy: strategy.into(),
        ..StagePlan::default()
    }
}

fn optim() -> OptimizerConfig {
    OptimizerConfig {
        batch_size: 32,
        ..OptimizerConfig::default()
    }
}

/// Retained-candidate file listing `ops(edge)` for every edge of `cell`.
fn external_file(
    dir: &Path,
    cell: &CellSpec,
    ops: impl Fn(usize, usize) -> OpKind,
) -> std::path::PathBuf {
    let edges: Vec<_> = cell
        .edges()
        .into_iter()
        .map(|e| serde_json::json!({"from": e.from, "to": e.to, "ops": [ops(e.from, e.to)]}))
        .collect();
    let path = dir.join("retained.json");
    std::fs::write(&path, serde_json::json!({ "edges": edges }).to_string()).unwrap();
    path
}

fn same_outcome(a: &SearchOutcome, b: &SearchOutcome) {
    assert_eq!(a.genotype, b.genotype);
    assert_eq!(a.final_state.bit_checksum(), b.final_state.bit_checksum());
    assert_eq!(
        serde_json::to_string(&a.metrics).unwrap(),
        serde_json::to_string(&b.metrics).unwrap()
    );
    assert_eq!(
        serde_json::to_string(&a.importance).unwrap(),
        serde_json::to_string(&b.importance).unwrap()
    );
}

#[test]
fn zero_architecture_rate_leaves_operation_weights_at_zero() {
    let t = task(1, 2);
    let o = OptimizerConfig {
        arch_lr: 0.0,
        ..optim()
    };
    let mut run = SearchRun::new(setup(2, small_plan("darts_top1"), o, 5), t.train).unwrap();
    let out = run.run_to_end().unwrap();
    let alpha = out.trained_alpha.unwrap();
    for k in 0..alpha.len() {
        assert!(alpha.logits(k, 0).iter().all(|&v| v == 0.0), "edge {k}");
    }
    assert!(out
        .topology
        .store
        .iter()
        .all(|p| p.value.data().iter().all(|&v| v == 0.0)));

    // With a positive rate the same run moves them.
    let mut moving = SearchRun::new(
        setup(2, small_plan("darts_top1"), optim(), 5),
        task(1, 2).train,
    )
    .unwrap();
    let alpha = moving.run_to_end().unwrap().trained_alpha.unwrap();
    assert!((0..alpha.len()).any(|k| alpha.logits(k, 0).iter().any(|&v| v != 0.0)));
}

/// With a zero architecture rate the topology stage must be plain SGD
/// training under the uniform edge weights of all-zero logits.
#[test]
fn frozen_topology_stage_is_plain_training() {
    let dir = tempfile::tempdir().unwrap();
    let cell = CellSpec::new(3, 4).unwrap();
    let op = |from: usize, to: usize| OpKind::ALL[1 + (from + to) % (OpKind::ALL.len() - 1)];
    let plan = StagePlan {
        topo_epochs: 3,
        strategy: "external".into(),
        external_ops: Some(external_file(dir.path(), &cell, op)),
        ..StagePlan::default()
    };
    let o = OptimizerConfig {
        arch_lr: 0.0,
        ..optim()
    };
    let s = setup(3, plan.clone(), o.clone(), 11);
    let train = task(2, 2).train;
    let out = SearchRun::new(s.clone(), train.clone())
        .unwrap()
        .run_to_end()
        .unwrap();

    let layout: Vec<EdgeLayout> = cell
        .edges()
        .into_iter()
        .map(|e| EdgeLayout {
            edge: e,
            ops: vec![op(e.from, e.to)],
        })
        .collect();
    let mut net = CellNetwork::build(s.shape, layout, derive_seed(s.seed, "topo-init", 0)).unwrap();
    let mut sgd = Sgd::new(o.momentum, o.weight_decay, o.grad_clip);
    let mut schedule =
        AnnealSchedule::over_epochs(plan.t0, plan.t_final, plan.topo_epochs).unwrap();
    let spaces: Vec<_> = cell
        .intermediate_nodes()
        .map(|j| dots_core::space::TopologySpace::build(plan.policy, j, cell.in_degree(j)).unwrap())
        .collect();
    let per_epoch = train.len().div_ceil(o.batch_size);
    let total = per_epoch * plan.topo_epochs;
    let mut losses = Vec::new();
    for epoch in 0..plan.topo_epochs {
        let mut rng = rng_from_seed(derive_seed(s.seed, "topo-train", epoch as u64));
        let batches = train.batches(o.batch_size, &mut rng).unwrap();
        let mut sum = 0.0;
        for (step, batch) in batches.iter().enumerate() {
            let mut tape = Tape::new();
            let views = [
                tape.constant(batch.views[0].clone()).unwrap(),
                tape.constant(batch.views[1].clone()).unwrap(),
            ];
            let bound = net.weights.bind(&mut tape, true).unwrap();
            let gamma = spaces
                .iter()
                .map(|space| {
                    let logits = tape.constant(Tensor::zeros(&[space.len()])).unwrap();
                    let beta = tape.softmax(logits, schedule.temperature()).unwrap();
                    Some(aggregate_gamma_var(&mut tape, beta, space).unwrap())
                })
                .collect();
            let mixing = Mixing {
                edges: vec![Vec::new(); cell.num_edges()],
                gamma,
            };
            let logits = net
                .forward(&mut tape, &bound, views, Some(&mixing))
                .unwrap();
            let loss = tape.cross_entropy(logits, &batch.labels).unwrap();
            sum += tape.value(loss).item();
            let grads = tape.backward(loss).unwrap();
            net.weights.absorb_grads(&bound, &grads);
            sgd.step(
                &mut net.weights,
                cosine_lr(epoch * per_epoch + step, total, o.w_lr).unwrap(),
            )
            .unwrap();
        }
        losses.push(sum / batches.len() as f64);
        if epoch + 1 < plan.topo_epochs {
            schedule.anneal_step();
        }
    }
    let searched: Vec<f64> = out.metrics.iter().map(|m| m.loss).collect();
    assert_eq!(searched, losses);
    assert_eq!(
        out.final_state.network.weights.bit_checksum(),
        net.weights.bit_checksum()
    );
}

#[test]
fn resuming_from_a_checkpoint_file_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let s = setup(2, small_plan("group_v2"), optim(), 21);
    let train = task(3, 2).train;
    let reference = SearchRun::new(s.clone(), train.clone())
        .unwrap()
        .run_to_end()
        .unwrap();
    let meta = ArtifactMeta::new("0".repeat(64), 21);
    // Inside the operation stage, at the hand-over and inside the topology stage.
    for stop in [1, 2, 3] {
        let mut run = SearchRun::new(s.clone(), train.clone()).unwrap();
        for _ in 0..stop {
            run.step_epoch().unwrap();
        }
        let path = dir.path().join(format!("ckpt{stop}.json"));
        save_checkpoint(&path, &meta, &run.checkpoint()).unwrap();
        drop(run);
        let file = load_checkpoint(&path).unwrap();
        assert_eq!(file.meta, meta);
        let mut resumed = SearchRun::resume(file.checkpoint, train.clone()).unwrap();
        same_outcome(&resumed.run_to_end().unwrap(), &reference);
    }
}

#[test]
fn checkpoint_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let s = setup(2, small_plan("darts_top1"), optim(), 4);
    let mut run = SearchRun::new(s, task(4, 2).train).unwrap();
    run.step_epoch().unwrap();
    let other: Dataset = task(5, 2).train;
    let err = SearchRun::resume(run.checkpoint(), other).err().unwrap();
    assert_eq!(err.category(), "checkpoint");

    let path = dir.path().join("ckpt.json");
    save_checkpoint(&path, &ArtifactMeta::new("x", 4), &run.checkpoint()).unwrap();
    let text = std::fs::read_to_string(&path)
        .unwrap()
        .replace("dots-checkpoint/1", "dots-checkpoint/0");
    std::fs::write(&path, text).unwrap();
    assert_eq!(
        load_checkpoint(&path).err().unwrap().category(),
        "checkpoint"
    );
    std::fs::write(&path, "{").unwrap();
    assert_eq!(
        load_checkpoint(&path).err().unwrap().category(),
        "checkpoint"
    );
}

#[test]
fn forked_topology_search_matches_a_fresh_run() {
    let s = setup(2, small_plan("darts_top1"), optim(), 8);
    let train = task(6, 2).train;
    let mut run = SearchRun::new(s.clone(), train.clone()).unwrap();
    assert!(run.fork_topology("edge_level_sigmoid").is_err());
    while !run.in_topology_stage() {
        run.step_epoch().unwrap();
    }
    let mut fork = run.fork_topology("edge_level_sigmoid").unwrap();
    assert_eq!(fork.setup().plan.baseline, "edge_level_sigmoid");
    let forked = fork.run_to_end().unwrap();

    let mut fresh_setup = s;
    fresh_setup.plan.baseline = "edge_level_sigmoid".into();
    let fresh = SearchRun::new(fresh_setup, train)
        .unwrap()
        .run_to_end()
        .unwrap();
    same_outcome(&forked, &fresh);
    assert!(fork.fork_topology("nope").is_err());
}

#[test]
fn retained_candidates_follow_the_strategy() {
    let train = task(7, 2).train;
    let top1 = SearchRun::new(
        setup(2, small_plan("darts_top1"), optim(), 1),
        train.clone(),
    )
    .unwrap()
    .run_to_end()
    .unwrap();
    let groups = |o: &SearchOutcome| -> Vec<usize> {
        o.final_state
            .alpha
            .edges
            .iter()
            .map(|e| e.candidates().len())
            .collect()
    };
    assert_eq!(groups(&top1), vec![1; 5]);
    assert!(top1
        .final_state
        .alpha
        .edges
        .iter()
        .all(|e| e.candidates()[0] != OpKind::Zero));

    let v2 = SearchRun::new(setup(2, small_plan("group_v2"), optim(), 1), train)
        .unwrap()
        .run_to_end()
        .unwrap();
    assert_eq!(groups(&v2), vec![2; 5]);
    let partition = dots_core::space::group_partition_v2(&OperationSet::canonical())
        .unwrap()
        .groups();
    for e in &v2.final_state.alpha.edges {
        let c = e.candidates();
        assert!(
            partition[0].contains(&c[0]) && partition[1].contains(&c[1]),
            "{c:?}"
        );
    }
    for out in [&top1, &v2] {
        for n in &out.genotype.nodes {
            assert_eq!(n.edges.len() + n.dropped.len(), 2, "node {}", n.node);
        }
    }
}

#[test]
fn single_combination_node_keeps_the_trivial_distribution() {
    let out = SearchRun::new(
        setup(1, small_plan("darts_top1"), optim(), 2),
        task(8, 2).train,
    )
    .unwrap()
    .run_to_end()
    .unwrap();
    assert_eq!(out.topology.spaces[0].len(), 1);
    assert_eq!(out.topology.normalized(0, out.t_beta).unwrap(), vec![1.0]);
    assert_eq!(
        out.genotype.nodes[0].edges.len() + out.genotype.nodes[0].dropped.len(),
        2
    );
}

/// One edge holding Zero and Skip, target equal to the input: the Skip
/// weight must rise at every step and the loss must fall.
#[test]
fn dominant_candidate_gains_weight() {
    let mut weights = ParamStore::new();
    let mut rng = rng_from_seed(0);
    let cands = [OpKind::Zero, OpKind::SkipConnect]
        .map(|op| Candidate::register(&mut weights, &format!("{op}"), op, 2, &mut rng));
    let mut arch = ParamStore::new();
    let alpha = arch.add("alpha", Tensor::zeros(&[2]));
    let mut x = Tensor::zeros(&[4, 2, 3, 3]);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v = (i as f64 * 0.37).sin();
    }
    let o = OptimizerConfig::default();
    let mut adam = Adam::new(o.arch_beta1, o.arch_beta2, o.arch_weight_decay);
    let mut skip_weight = vec![];
    let mut losses = vec![];
    for _ in 0..50 {
        let mut tape = Tape::new();
        let bound_w = weights.bind(&mut tape, false).unwrap();
        let bound_a = arch.bind(&mut tape, true).unwrap();
        let xv = tape.constant(x.clone()).unwrap();
        let outs: Vec<_> = cands
            .iter()
            .map(|c| c.apply(&mut tape, &bound_w, xv).unwrap())
            .collect();
        let w = tape.softmax(bound_a.get(alpha), 1.0).unwrap();
        skip_weight.push(tape.value(w).data()[1]);
        let mixed = mixed_op(&mut tape, &outs, w).unwrap();
        let neg = tape.scale(xv, -1.0).unwrap();
        let diff = tape.add(mixed, neg).unwrap();
        let sq = tape.mul(diff, diff).unwrap();
        let loss = tape.sum(sq).unwrap();
        losses.push(tape.value(loss).item());
        let grads = tape.backward(loss).unwrap();
        arch.absorb_grads(&bound_a, &grads);
        adam.step(&mut arch, 0.05).unwrap();
    }
    assert!(
        skip_weight[..11].windows(2).all(|p| p[1] > p[0]),
        "{skip_weight:?}"
    );
    assert!(losses.windows(2).all(|p| p[1] < p[0]));
    assert!(losses[49] < 0.5 * losses[0]);
}

fn node_of(out: &SearchOutcome, node: usize) -> Vec<usize> {
    let n = out.genotype.nodes.iter().find(|n| n.node == node).unwrap();
    let mut from: Vec<usize> = n
        .edges
        .iter()
        .map(|e| e.from)
        .chain(n.dropped.iter().copied())
        .collect();
    from.sort();
    from
}

/// Node 3 is all Zero, so node 4 sees the signal only on its edge from
/// input 1. Stand-alone training of the three pairs confirms that only the
/// pair without that edge fails, and the search must avoid it.
#[test]
fn search_keeps_the_signal_edge() {
    let t = generate_task(&TaskConfig {
        seed: 9,
        train_samples: 256,
        test_samples: 256,
        height: 6,
        width: 6,
        signal_node: 1,
        ..TaskConfig::default()
    })
    .unwrap();
    let cell = CellSpec::new(2, 4).unwrap();
    let op = |_: usize, to: usize| {
        if to == 3 {
            OpKind::Zero
        } else {
            OpKind::SepConv3x3
        }
    };

    let train_cfg = TrainConfig {
        epochs: 20,
        channels: 4,
        batch_size: 32,
        ..TrainConfig::default()
    };
    let pair_accuracy = |a: usize, b: usize| {
        let g = Genotype {
            policy: TopologyPolicy::Pairwise,
            nodes: vec![
                GenotypeNode {
                    node: 3,
                    edges: vec![],
                    dropped: vec![1, 2],
                },
                GenotypeNode {
                    node: 4,
                    edges: [a, b]
                        .into_iter()
                        .filter(|&f| f != 3)
                        .map(|from| GenotypeEdge {
                            from,
                            op: OpKind::SepConv3x3,
                        })
                        .collect(),
                    dropped: [a, b].into_iter().filter(|&f| f == 3).collect(),
                },
            ],
            meta: None,
        };
        train_standalone(&g, &t, &train_cfg, 0).unwrap()
    };
    let chance = 1.0 / t.config.classes as f64;
    let with_signal = [pair_accuracy(1, 2), pair_accuracy(1, 3)];
    let without = pair_accuracy(2, 3);
    eprintln!("pairs <1,2> <1,3> <2,3>: {with_signal:?} {without}");
    assert!(with_signal.iter().all(|&a| a > without + 0.2));
    assert!((without - chance).abs() < 0.1);

    let dir = tempfile::tempdir().unwrap();
    let plan = StagePlan {
        topo_epochs: 10,
        strategy: "external".into(),
        external_ops: Some(external_file(dir.path(), &cell, op)),
        ..StagePlan::default()
    };
    let hits = (0..5u64)
        .filter(|&seed| {
            let out = SearchRun::new(setup(2, plan.clone(), optim(), seed), t.train.clone())
                .unwrap()
                .run_to_end()
                .unwrap();
            node_of(&out, 4).contains(&1)
        })
        .count();
    assert!(hits >= 4, "{hits} of 5 seeds kept the signal edge");
}
