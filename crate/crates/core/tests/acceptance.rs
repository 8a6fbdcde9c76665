//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run all criteria with `cargo test -p dots-core --test acceptance`, or a
//! subset by number: `cargo test -p dots-core --test acceptance -- 1 5 7`.
//! The training-heavy criteria (6, 8, 9, 10) keep searches and stand-alone
//! accuracies in an experiment cache under Cargo's target temp directory,
//! so reruns of unchanged experiments only read it. Delete
//! `acceptance_cache.json` there to recompute everything.
//!
//! A criterion that does not meet its threshold prints FAIL and is listed
//! in the summary line, but only aborts the run (nonzero exit) when
//! `ACCEPTANCE_STRICT=1` is set. A criterion that errors always aborts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dots_core::commands::{cmd_search, GENOTYPE_FILE};
use dots_core::config::RunConfig;
use dots_core::harness::{
    generate_task, rank_experiment, ExperimentCache, RankOutcome, SyntheticTask,
};
use dots_core::rng::rng_from_seed;
use dots_core::space::{
    build_flexible_space, build_pairwise_space, CellSpec, OpKind, TopologyPolicy, TopologySpace,
};
use dots_core::stages::{
    derive_darts_from_scores, derive_darts_policy, operation_scores, SearchOutcome, SearchRun,
};
use dots_core::supernet::{
    aggregate_gamma, aggregate_gamma_var, node_forward, AnnealSchedule, CellNetwork, Mixing,
    NetworkShape, OperationWeights,
};
use dots_core::tensor::gradcheck::check_gradients;
use dots_core::tensor::{Tape, Tensor, Var};
use dots_core::{Error, Result};
use rand::Rng;
use rand_distr::StandardNormal;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

/// Configuration shared by the training-heavy criteria.
const RANK_CONFIG: &str = include_str!("../../../configs/rankcorr.toml");

const EXPERIMENT_SEEDS: std::ops::Range<u64> = 0..5;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

fn random(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    t
}

// 1. Space sizes.

fn combinatorics() -> Result<Verdict> {
    let mut bad = Vec::new();
    for n in 2..=8usize {
        let pw = build_pairwise_space(n + 1, n)?.len();
        let fx = build_flexible_space(n + 1, n)?.len();
        if pw != n * (n - 1) / 2 || fx != (1 << n) - 1 {
            bad.push(format!("n={n}: {pw} pairs, {fx} codes"));
        }
    }
    let five = build_pairwise_space(6, 5)?.len();
    verdict(
        bad.is_empty() && five == 10,
        format!("n=5 pairwise has {five} combinations; mismatches {bad:?}"),
    )
}

// 2. Edge weights from normalised combination weights.

fn gamma_normalisation() -> Result<Verdict> {
    let mut rng = rng_from_seed(2);
    let mut worst = 0.0f64;
    for policy in [TopologyPolicy::Pairwise, TopologyPolicy::Flexible] {
        for n in 2..=6 {
            let space = TopologySpace::build(policy, n + 1, n)?;
            for _ in 0..1000 {
                let raw: Vec<f64> = (0..space.len()).map(|_| rng.random::<f64>()).collect();
                let total: f64 = raw.iter().sum();
                let beta: Vec<f64> = raw.iter().map(|v| v / total).collect();
                let sum: f64 = aggregate_gamma(&beta, &space)?.iter().sum();
                worst = worst.max((sum - 1.0).abs());
            }
        }
    }
    verdict(
        worst < 1e-9,
        format!("max |sum - 1| = {worst:.2e} over 10,000 draws"),
    )
}

// 3. Finite-difference gradients of every primitive and of the topology chain.

fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(out).shape().to_vec();
    let r = tape.constant(random(&shape, &mut rng_from_seed(seed ^ 0x5eed)))?;
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

fn gradient_cases(seed: u64) -> Result<Vec<(&'static str, Vec<Tensor>, Build)>> {
    let mut rng = rng_from_seed(1000 + seed);
    let x = random(&[2, 3, 5, 5], &mut rng);
    let mut cases: Vec<(&'static str, Vec<Tensor>, Build)> = vec![
        (
            "add",
            vec![x.clone(), random(&[2, 3, 5, 5], &mut rng)],
            Box::new(move |t, v| {
                let o = t.add(v[0], v[1])?;
                project(t, o, seed)
            }),
        ),
        (
            "mul",
            vec![x.clone(), random(&[2, 3, 5, 5], &mut rng)],
            Box::new(move |t, v| {
                let o = t.mul(v[0], v[1])?;
                project(t, o, seed)
            }),
        ),
        (
            "scale",
            vec![x.clone()],
            Box::new(move |t, v| {
                let o = t.scale(v[0], -1.7)?;
                project(t, o, seed)
            }),
        ),
        (
            "reshape",
            vec![x.clone()],
            Box::new(move |t, v| {
                let o = t.reshape(v[0], &[6, 25])?;
                project(t, o, seed)
            }),
        ),
        ("sum", vec![x.clone()], Box::new(|t, v| t.sum(v[0]))),
        (
            "matmul",
            vec![random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)],
            Box::new(move |t, v| {
                let o = t.matmul(v[0], v[1])?;
                project(t, o, seed)
            }),
        ),
        (
            "conv2d",
            vec![x.clone(), random(&[4, 3, 3, 3], &mut rng)],
            Box::new(move |t, v| {
                let o = t.conv2d(v[0], v[1], 1, 1)?;
                project(t, o, seed)
            }),
        ),
        (
            "depthwise_conv2d",
            vec![x.clone(), random(&[3, 1, 5, 5], &mut rng)],
            Box::new(move |t, v| {
                let o = t.depthwise_conv2d(v[0], v[1], 1)?;
                project(t, o, seed)
            }),
        ),
        (
            "pointwise_conv2d",
            vec![x.clone(), random(&[4, 3, 1, 1], &mut rng)],
            Box::new(move |t, v| {
                let o = t.pointwise_conv2d(v[0], v[1])?;
                project(t, o, seed)
            }),
        ),
        (
            "dilated_conv2d",
            vec![x.clone(), random(&[3, 3, 3, 3], &mut rng)],
            Box::new(move |t, v| {
                let o = t.dilated_conv2d(v[0], v[1])?;
                project(t, o, seed)
            }),
        ),
        (
            "avg_pool3x3",
            vec![x.clone()],
            Box::new(move |t, v| {
                let o = t.avg_pool3x3(v[0])?;
                project(t, o, seed)
            }),
        ),
        (
            "max_pool3x3",
            vec![x.clone()],
            Box::new(move |t, v| {
                let o = t.max_pool3x3(v[0])?;
                project(t, o, seed)
            }),
        ),
        (
            "relu",
            vec![x.clone()],
            Box::new(move |t, v| {
                let o = t.relu(v[0])?;
                project(t, o, seed)
            }),
        ),
        (
            "batch_stat_norm",
            vec![x.clone(), random(&[3], &mut rng), random(&[3], &mut rng)],
            Box::new(move |t, v| {
                let o = t.batch_stat_norm(v[0], v[1], v[2])?;
                project(t, o, seed)
            }),
        ),
        (
            "global_avg_pool",
            vec![x.clone()],
            Box::new(move |t, v| {
                let o = t.global_avg_pool(v[0])?;
                project(t, o, seed)
            }),
        ),
        (
            "linear",
            vec![
                random(&[3, 5], &mut rng),
                random(&[2, 5], &mut rng),
                random(&[2], &mut rng),
            ],
            Box::new(move |t, v| {
                let o = t.linear(v[0], v[1], v[2])?;
                project(t, o, seed)
            }),
        ),
        (
            "softmax",
            vec![random(&[6], &mut rng)],
            Box::new(move |t, v| {
                let o = t.softmax(v[0], 0.7)?;
                project(t, o, seed)
            }),
        ),
        (
            "sigmoid",
            vec![random(&[6], &mut rng)],
            Box::new(move |t, v| {
                let o = t.sigmoid(v[0])?;
                project(t, o, seed)
            }),
        ),
        (
            "weighted_sum",
            vec![
                x.clone(),
                random(&[2, 3, 5, 5], &mut rng),
                random(&[2], &mut rng),
            ],
            Box::new(move |t, v| {
                let o = t.weighted_sum(&[v[0], v[1]], v[2])?;
                project(t, o, seed)
            }),
        ),
        (
            "concat_channels",
            vec![x.clone(), random(&[2, 2, 5, 5], &mut rng)],
            Box::new(move |t, v| {
                let o = t.concat_channels(&[v[0], v[1]])?;
                project(t, o, seed)
            }),
        ),
        (
            "cross_entropy",
            vec![random(&[4, 3], &mut rng)],
            Box::new(|t, v| t.cross_entropy(v[0], &[0, 2, 1, 2])),
        ),
    ];
    // softmax(β′/T) → γ = Mβ → Σ γ_i ō_i, for both policies.
    for (name, policy, n) in [
        ("topology chain (pairwise)", TopologyPolicy::Pairwise, 4),
        ("topology chain (flexible)", TopologyPolicy::Flexible, 3),
    ] {
        let space = TopologySpace::build(policy, n + 1, n)?;
        let mut inputs = vec![random(&[space.len()], &mut rng)];
        inputs.extend((0..n).map(|_| random(&[2, 3, 4, 4], &mut rng)));
        cases.push((
            name,
            inputs,
            Box::new(move |t, v| {
                let beta = t.softmax(v[0], 0.5)?;
                let gamma = aggregate_gamma_var(t, beta, &space)?;
                let node = node_forward(t, &v[1..], Some(gamma))?;
                project(t, node, seed)
            }),
        ));
    }
    Ok(cases)
}

fn gradient_correctness() -> Result<Verdict> {
    let mut worst = (0.0f64, "");
    let mut checked = 0;
    for seed in 0..20 {
        for (name, inputs, build) in gradient_cases(seed)? {
            let report = check_gradients(&inputs, 1e-5, build)?;
            checked += report.checked;
            if report.checked == 0 {
                return verdict(false, format!("{name}: nothing checked"));
            }
            if report.max_rel_error > worst.0 {
                worst = (report.max_rel_error, name);
            }
        }
    }
    verdict(
        worst.0 < 1e-4,
        format!(
            "max relative error {:.2e} ({}) over {checked} elements, 20 seeds",
            worst.0, worst.1
        ),
    )
}

// 4. Annealing.

fn annealing() -> Result<Verdict> {
    let mut worst = 0.0f64;
    for steps in [39usize, 1000] {
        let mut s = AnnealSchedule::new(10.0, 0.02, steps)?;
        let theta = (0.02f64 / 10.0).powf(1.0 / steps as f64);
        for t in 0..=steps {
            worst = worst.max((s.temperature() - 10.0 * theta.powi(t as i32)).abs());
            if t < steps {
                s.anneal_step();
            }
        }
        worst = worst.max((s.temperature() - 0.02).abs());
        worst = worst.max((s.temperature_at(0) - 10.0).abs());
    }
    verdict(
        worst < 1e-9,
        format!("max deviation {worst:.2e} over 40- and 1001-epoch schedules"),
    )
}

// 5. The supernet against a DARTS forward written out with plain loops.

#[derive(Clone)]
struct Map {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    v: Vec<f64>,
}

impl Map {
    fn zeros(n: usize, c: usize, h: usize, w: usize) -> Map {
        Map {
            n,
            c,
            h,
            w,
            v: vec![0.0; n * c * h * w],
        }
    }
    fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.v[((n * self.c + c) * self.h + y) * self.w + x]
    }
    fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.v[((n * self.c + c) * self.h + y) * self.w + x]
    }
}

fn conv(x: &Map, weight: &[f64], cout: usize, k: usize, dil: usize, groups: usize) -> Map {
    let (cin_g, cout_g) = (x.c / groups, cout / groups);
    let pad = (dil * (k - 1) / 2) as isize;
    let mut out = Map::zeros(x.n, cout, x.h, x.w);
    for n in 0..x.n {
        for oc in 0..cout {
            let g = oc / cout_g;
            for y in 0..x.h {
                for xx in 0..x.w {
                    let mut acc = 0.0;
                    for icg in 0..cin_g {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = y as isize + (ky * dil) as isize - pad;
                                let ix = xx as isize + (kx * dil) as isize - pad;
                                if iy >= 0 && ix >= 0 && (iy as usize) < x.h && (ix as usize) < x.w
                                {
                                    acc += weight[((oc * cin_g + icg) * k + ky) * k + kx]
                                        * x.at(n, g * cin_g + icg, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    *out.at_mut(n, oc, y, xx) = acc;
                }
            }
        }
    }
    out
}

fn batch_norm(x: &Map, scale: &[f64], shift: &[f64]) -> Map {
    let mut out = x.clone();
    let m = (x.n * x.h * x.w) as f64;
    for c in 0..x.c {
        let vals = || {
            (0..x.n)
                .flat_map(move |n| (0..x.h).flat_map(move |y| (0..x.w).map(move |xx| (n, y, xx))))
        };
        let mean = vals().map(|(n, y, xx)| x.at(n, c, y, xx)).sum::<f64>() / m;
        let var = vals()
            .map(|(n, y, xx)| (x.at(n, c, y, xx) - mean).powi(2))
            .sum::<f64>()
            / m;
        for (n, y, xx) in vals() {
            *out.at_mut(n, c, y, xx) =
                scale[c] * (x.at(n, c, y, xx) - mean) / (var + 1e-5).sqrt() + shift[c];
        }
    }
    out
}

fn pool(x: &Map, max: bool) -> Map {
    let mut out = x.clone();
    for n in 0..x.n {
        for c in 0..x.c {
            for y in 0..x.h {
                for xx in 0..x.w {
                    let mut vals = Vec::new();
                    for iy in y.saturating_sub(1)..=(y + 1).min(x.h - 1) {
                        for ix in xx.saturating_sub(1)..=(xx + 1).min(x.w - 1) {
                            vals.push(x.at(n, c, iy, ix));
                        }
                    }
                    *out.at_mut(n, c, y, xx) = if max {
                        vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    } else {
                        vals.iter().sum::<f64>() / vals.len() as f64
                    };
                }
            }
        }
    }
    out
}

struct Oracle<'a> {
    net: &'a CellNetwork,
}

impl Oracle<'_> {
    fn p(&self, name: &str) -> &[f64] {
        let id = self
            .net
            .weights
            .find(name)
            .unwrap_or_else(|| panic!("no parameter {name}"));
        self.net.weights.get(id).value.data()
    }

    fn bn(&self, x: &Map, prefix: &str) -> Map {
        batch_norm(
            x,
            self.p(&format!("{prefix}.bn.scale")),
            self.p(&format!("{prefix}.bn.shift")),
        )
    }

    /// ReLU, depthwise, pointwise, normalisation.
    fn block(&self, x: &Map, prefix: &str, k: usize, dil: usize) -> Map {
        let mut h = x.clone();
        h.v.iter_mut().for_each(|v| *v = v.max(0.0));
        let h = conv(&h, self.p(&format!("{prefix}.dw")), x.c, k, dil, x.c);
        let h = conv(&h, self.p(&format!("{prefix}.pw")), x.c, 1, 1, 1);
        self.bn(&h, prefix)
    }

    fn op(&self, x: &Map, prefix: &str, op: OpKind) -> Map {
        match op {
            OpKind::Zero => Map::zeros(x.n, x.c, x.h, x.w),
            OpKind::SkipConnect => x.clone(),
            OpKind::AvgPool3x3 => self.bn(&pool(x, false), prefix),
            OpKind::MaxPool3x3 => self.bn(&pool(x, true), prefix),
            OpKind::SepConv3x3 | OpKind::SepConv5x5 => {
                let k = if op == OpKind::SepConv3x3 { 3 } else { 5 };
                let h = self.block(x, &format!("{prefix}.0"), k, 1);
                self.block(&h, &format!("{prefix}.1"), k, 1)
            }
            OpKind::DilConv3x3 | OpKind::DilConv5x5 => {
                let k = if op == OpKind::DilConv3x3 { 3 } else { 5 };
                self.block(x, prefix, k, 2)
            }
        }
    }

    /// Stems, mixed edges with softmax(α), node sums, pooled concat, head.
    fn forward(&self, views: &[Map; 2], alpha: &OperationWeights, classes: usize) -> Vec<f64> {
        let cell = self.net.shape().cell;
        let mut nodes: Vec<Map> = views
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let h = conv(
                    v,
                    self.p(&format!("stem{}.conv", i + 1)),
                    cell.channels,
                    3,
                    1,
                    1,
                );
                self.bn(&h, &format!("stem{}", i + 1))
            })
            .collect();
        for j in cell.intermediate_nodes() {
            let mut sum = Map::zeros(nodes[0].n, cell.channels, nodes[0].h, nodes[0].w);
            for from in 1..j {
                let k = alpha
                    .edges
                    .iter()
                    .position(|e| e.edge.from == from && e.edge.to == j)
                    .unwrap();
                let logits = alpha.logits(k, 0);
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                for (o, &op) in alpha.edges[k].groups[0].iter().enumerate() {
                    let w = logits[o].exp() / z;
                    let out = self.op(
                        &nodes[from - 1],
                        &format!("cell.{from}-{j}.{}", op.name()),
                        op,
                    );
                    sum.v.iter_mut().zip(&out.v).for_each(|(s, v)| *s += w * v);
                }
            }
            nodes.push(sum);
        }
        let inter = &nodes[2..];
        let n = nodes[0].n;
        let mut features = vec![0.0; n * inter.len() * cell.channels];
        let f = inter.len() * cell.channels;
        for (k, m) in inter.iter().enumerate() {
            for s in 0..n {
                for c in 0..cell.channels {
                    let mean = (0..m.h * m.w)
                        .map(|i| m.v[(s * m.c + c) * m.h * m.w + i])
                        .sum::<f64>()
                        / (m.h * m.w) as f64;
                    features[s * f + k * cell.channels + c] = mean;
                }
            }
        }
        let (wt, b) = (self.p("head.weight"), self.p("head.bias"));
        (0..n)
            .flat_map(|s| {
                let feats = &features[s * f..(s + 1) * f];
                (0..classes)
                    .map(move |k| b[k] + (0..f).map(|i| wt[k * f + i] * feats[i]).sum::<f64>())
            })
            .collect()
    }
}

fn darts_equivalence() -> Result<Verdict> {
    let cell = CellSpec::new(2, 3)?;
    let shape = NetworkShape {
        cell,
        input_channels: 2,
        classes: 4,
    };
    let mut net = CellNetwork::supernet(shape, &OpKind::ALL, 17)?;
    let mut rng = rng_from_seed(5);
    for p in net.weights.iter_mut() {
        for v in p.value.data_mut() {
            *v += 0.3 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut alpha = OperationWeights::uniform_layout(&cell, &[OpKind::ALL.to_vec()])?;
    for k in 0..alpha.len() {
        let logits: Vec<f64> = (0..OpKind::ALL.len())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        alpha.set_logits(k, 0, &logits)?;
    }
    let views = [
        random(&[3, 2, 6, 6], &mut rng),
        random(&[3, 2, 6, 6], &mut rng),
    ];

    let mut worst = 0.0f64;
    for gamma_ones in [false, true] {
        let mut tape = Tape::new();
        let vars = [
            tape.constant(views[0].clone())?,
            tape.constant(views[1].clone())?,
        ];
        let bound = net.weights.bind(&mut tape, false)?;
        let (_, edges) = alpha.bind_mixing(&mut tape, false, 1.0)?;
        let gamma = cell
            .intermediate_nodes()
            .map(|j| {
                let ones = Tensor::full(&[cell.in_degree(j)], 1.0);
                gamma_ones.then(|| tape.constant(ones)).transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        let logits = net.forward(&mut tape, &bound, vars, Some(&Mixing { edges, gamma }))?;
        let maps = views.clone().map(|t| {
            let s = t.shape().to_vec();
            Map {
                n: s[0],
                c: s[1],
                h: s[2],
                w: s[3],
                v: t.into_data(),
            }
        });
        let expected = Oracle { net: &net }.forward(&maps, &alpha, 4);
        for (a, b) in tape.value(logits).data().iter().zip(&expected) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(
        worst < 1e-10,
        format!("max |difference| {worst:.2e} on a 2-node cell with all 8 candidates"),
    )
}

// 7. Invariance of the DARTS rule under monotone transforms.

fn derivation_invariance() -> Result<Verdict> {
    let cell = CellSpec::new(4, 1)?;
    type Transform = (&'static str, fn(f64) -> f64);
    let transforms: [Transform; 5] = [
        ("cube", |x| x.powi(3)),
        ("log", f64::ln),
        ("exp(5x)", |x| (5.0 * x).exp()),
        ("2 sqrt(x) - 7", |x| 2.0 * x.sqrt() - 7.0),
        ("x / (1 + x)", |x| x / (1.0 + x)),
    ];
    let mut rng = rng_from_seed(7);
    let mut changed = Vec::new();
    for draw in 0..100 {
        let mut alpha = OperationWeights::uniform_layout(&cell, &[OpKind::ALL.to_vec()])?;
        for k in 0..alpha.len() {
            let logits: Vec<f64> = (0..OpKind::ALL.len())
                .map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            alpha.set_logits(k, 0, &logits)?;
        }
        let reference = derive_darts_policy(&alpha, &cell)?;
        let scores = operation_scores(&alpha)?;
        for (name, f) in transforms {
            let mapped: Vec<_> = scores
                .iter()
                .map(|(e, ops)| {
                    (
                        *e,
                        ops.iter().map(|&(op, w)| (op, f(w))).collect::<Vec<_>>(),
                    )
                })
                .collect();
            if derive_darts_from_scores(&mapped, &cell)? != reference {
                changed.push(format!("draw {draw}, {name}"));
            }
        }
    }
    verdict(
        changed.is_empty(),
        format!(
            "500 transformed derivations, {} changed {:?}",
            changed.len(),
            changed
        ),
    )
}

// Training-heavy criteria.

fn cache_path() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance_cache.json")
}

struct Heavy {
    cfg: RunConfig,
    task: SyntheticTask,
    cache: ExperimentCache,
}

impl Heavy {
    fn new() -> Result<Self> {
        let cfg = RunConfig::from_toml_str(RANK_CONFIG)?;
        let task = generate_task(&cfg.task)?;
        Ok(Heavy {
            cfg,
            task,
            cache: ExperimentCache::load_or_default(&cache_path())?,
        })
    }

    fn seeded(&self, seed: u64) -> RunConfig {
        RunConfig {
            seed,
            ..self.cfg.clone()
        }
    }

    fn save(&self) -> Result<()> {
        self.cache.save(&cache_path())
    }

    /// Finished search for `cfg`, from the cache when available.
    fn search(&mut self, cfg: &RunConfig) -> Result<SearchOutcome> {
        let setup = cfg.search_setup()?;
        let train = self.task.train.clone();
        let run = self
            .cache
            .search(&setup, &self.task, || SearchRun::new(setup.clone(), train))?;
        self.save()?;
        run.outcome()
    }

    fn rank(&mut self, seed: u64) -> Result<RankOutcome> {
        let cfg = self.seeded(seed);
        let out = rank_experiment(
            &self.task,
            cfg.search_setup()?,
            &cfg.rankcorr,
            &cfg.train,
            &mut self.cache,
        );
        self.save()?;
        out
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn fmt_tau(t: Option<f64>) -> String {
    t.map_or("none".into(), |t| format!("{t:+.3}"))
}

// 6 and 10 share the rank experiments.

fn rank_correlation(heavy: &mut Heavy, outcomes: &[RankOutcome]) -> Result<Verdict> {
    let _ = heavy;
    let mut wins = 0;
    let mut combos = Vec::new();
    let mut lines = Vec::new();
    for (seed, o) in EXPERIMENT_SEEDS.zip(outcomes) {
        let win = matches!((o.tau_combo, o.tau_op), (Some(c), Some(p)) if c > p)
            || (o.tau_combo.is_some() && o.tau_op.is_none());
        wins += win as usize;
        combos.push(o.tau_combo.unwrap_or(0.0));
        lines.push(format!(
            "seed {seed}: tau_op {} tau_combo {}",
            fmt_tau(o.tau_op),
            fmt_tau(o.tau_combo)
        ));
    }
    let mean = combos.iter().sum::<f64>() / combos.len() as f64;
    verdict(
        wins >= 4 && mean >= 0.4,
        format!(
            "tau_combo > tau_op in {wins}/5 seeds, mean tau_combo {mean:.3}\n    {}",
            lines.join("\n    ")
        ),
    )
}

fn baselines(outcomes: &[RankOutcome], expected: &[String]) -> Result<Verdict> {
    let mut lines = Vec::new();
    let mut complete = true;
    for name in expected {
        let mut at_least = 0;
        let mut taus = Vec::new();
        for o in outcomes {
            match o.comparisons.iter().find(|c| &c.baseline == name) {
                Some(c) => {
                    taus.push(fmt_tau(c.tau));
                    if o.tau_combo.unwrap_or(f64::NEG_INFINITY)
                        >= c.tau.unwrap_or(f64::NEG_INFINITY)
                    {
                        at_least += 1;
                    }
                }
                None => complete = false,
            }
        }
        lines.push(format!(
            "{name}: tau [{}]; tau_combo >= baseline in {at_least}/5 seeds (logged, not asserted)",
            taus.join(", ")
        ));
    }
    verdict(complete && !expected.is_empty(), lines.join("\n    "))
}

// 8. Determinism and flexible topologies.

fn determinism(heavy: &mut Heavy) -> Result<Verdict> {
    let dir = tempfile::tempdir().map_err(|e| io_error(Path::new("tempdir"), e))?;
    let cfg = heavy.seeded(0);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_search(&cfg, &a)?;
    cmd_search(&cfg, &b)?;
    let read = |p: &Path| std::fs::read(p.join(GENOTYPE_FILE)).map_err(|e| io_error(p, e));
    let identical = read(&a)? == read(&b)?;

    let mut flexible_hits = Vec::new();
    for seed in EXPERIMENT_SEEDS {
        let mut flex = heavy.seeded(seed);
        flex.plan.policy = TopologyPolicy::Flexible;
        let out = heavy.search(&flex)?;
        let sizes: Vec<usize> = out
            .genotype
            .nodes
            .iter()
            .map(|n| n.edges.len() + n.dropped.len())
            .collect();
        if sizes.iter().any(|&s| s != 2) {
            flexible_hits.push(format!("seed {seed} {sizes:?}"));
        }
    }
    verdict(
        identical && !flexible_hits.is_empty(),
        format!(
            "genotype files identical: {identical}; flexible runs with a node of != 2 edges: {}/5 {flexible_hits:?}",
            flexible_hits.len()
        ),
    )
}

// 9. Group strategy stability.

fn group_stability(heavy: &mut Heavy) -> Result<Verdict> {
    let (mut stable, mut total) = (0, 0);
    let mut per_seed = Vec::new();
    for seed in EXPERIMENT_SEEDS {
        let mut cfg = heavy.seeded(seed);
        cfg.plan.strategy = "group_v2".into();
        let out = heavy.search(&cfg)?;
        let history = &out.argmax_history;
        let epochs = history.len();
        let start = epochs - (epochs * 3) / 4;
        let edges = history[0].len();
        let s = (0..edges)
            .filter(|&k| {
                history[start..]
                    .iter()
                    .all(|row| row[k] == history[start][k])
            })
            .count();
        per_seed.push(format!("{s}/{edges}"));
        stable += s;
        total += edges;
    }
    let frac = stable as f64 / total as f64;
    verdict(
        frac >= 0.95,
        format!("{stable}/{total} edges ({:.1}%) keep their argmax over the last 75% of epochs; per seed {per_seed:?}", 100.0 * frac),
    )
}

fn main() {
    let wanted: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let want = |n: u32| wanted.is_empty() || wanted.contains(&n);
    let mut results: Vec<(u32, &str, Result<Verdict>, f64)> = Vec::new();
    let mut run = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Result<Verdict>| {
        if !want(n) {
            return;
        }
        let start = Instant::now();
        let v = f();
        let secs = start.elapsed().as_secs_f64();
        let line = match &v {
            Ok(v) => format!(
                "{} criterion {n} ({name}) [{secs:.1}s]: {}",
                if v.pass { "PASS" } else { "FAIL" },
                v.detail
            ),
            Err(e) => format!("FAIL criterion {n} ({name}) [{secs:.1}s]: error: {e}"),
        };
        println!("{line}");
        results.push((n, name, v, secs));
    };

    run(1, "combinatorics", &mut combinatorics);
    run(2, "gamma normalisation", &mut gamma_normalisation);
    run(3, "gradient correctness", &mut gradient_correctness);
    run(4, "annealing fidelity", &mut annealing);
    run(5, "DARTS equivalence", &mut darts_equivalence);
    run(7, "derivation invariance", &mut derivation_invariance);

    if [6, 8, 9, 10].into_iter().any(want) {
        match Heavy::new() {
            Ok(mut heavy) => {
                if want(6) || want(10) {
                    let outcomes: Result<Vec<RankOutcome>> =
                        EXPERIMENT_SEEDS.map(|s| heavy.rank(s)).collect();
                    match outcomes {
                        Ok(outcomes) => {
                            let compare = heavy.cfg.rankcorr.compare.clone();
                            run(6, "rank correlation", &mut || {
                                rank_correlation(&mut heavy, &outcomes)
                            });
                            run(10, "baseline ablations", &mut || {
                                baselines(&outcomes, &compare)
                            });
                        }
                        Err(e) => {
                            let msg = e.to_string();
                            run(6, "rank correlation", &mut || {
                                Err(Error::InvalidArgument(msg.clone()))
                            });
                            run(10, "baseline ablations", &mut || {
                                Err(Error::InvalidArgument(msg.clone()))
                            });
                        }
                    }
                }
                run(8, "end-to-end determinism", &mut || determinism(&mut heavy));
                run(9, "group strategy stability", &mut || {
                    group_stability(&mut heavy)
                });
            }
            Err(e) => {
                let msg = e.to_string();
                for (n, name) in [
                    (6, "rank correlation"),
                    (8, "end-to-end determinism"),
                    (9, "group strategy stability"),
                    (10, "baseline ablations"),
                ] {
                    run(n, name, &mut || Err(Error::InvalidArgument(msg.clone())));
                }
            }
        }
    }

    results.sort_by_key(|r| r.0);
    let failed: Vec<u32> = results
        .iter()
        .filter(|r| !r.2.as_ref().is_ok_and(|v| v.pass))
        .map(|r| r.0)
        .collect();
    let total: f64 = results.iter().map(|r| r.3).sum();
    println!(
        "acceptance: {} of {} criteria passed in {total:.0}s{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed {failed:?}")
        }
    );
    let errored = results.iter().any(|r| r.2.is_err());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if errored || (strict && !failed.is_empty()) {
        std::process::exit(1);
    }
}
