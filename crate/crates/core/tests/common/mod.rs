//! Independent oracles and the acceptance criteria built on them. Shared by
//! the integration tests and the `acceptance` target.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rfn::data::observations::speed_targets;
use rfn::data::{synth_network, temporal_split, Checkpoint, SynthOutput, SynthSpec};
use rfn::diagnostics::model_gradient_check;
use rfn::features::{CategoryVocabulary, FeatureMatrices, FeatureScaling, MinMax};
use rfn::graph::{build_dual, fixtures, PrimalGraph};
use rfn::learn::{fit_grouping, macro_f1, mae_per_segment, train, Metric, MetricHistory, TrainConfig, Trained};
use rfn::model::{Hyper, Model, ModelKind, Task};
use rfn::network::PreparedNetwork;
use rfn::rfn::{relational_fusion, AggregatorKind, FusionKind, Head, InputWidths, RfnConfig, RfnModel};
use rfn::tensor::{Activation, Tape, Tensor};

// Pinned tolerances.
pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_STEP: f64 = 1e-5;
pub const ATTENTION_SUM_TOL: f64 = 1e-12;
pub const MEAN_IDENTITY_TOL: f64 = 1e-12;
pub const BLOCK_TOL: f64 = 1e-12;
pub const INTERACTION_TOL: f64 = 1e-10;
pub const RECEPTIVE_TOL: f64 = 1e-10;
pub const METRIC_TOL: f64 = 1e-12;

// Desk experiment protocol.
pub const DESK_SEEDS: u64 = 5;
pub const DESK_WINS_NEEDED: usize = 4;
pub const DESK_SIGMA: f64 = 3.0;
pub const DESK_SLOWDOWN: f64 = 0.3;
pub const DESK_BATCH: usize = 32;
pub const DESK_EPOCHS: usize = 20;

pub struct Check {
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

fn timed(f: impl FnOnce() -> (bool, String)) -> Check {
    let t0 = Instant::now();
    let (passed, detail) = f();
    Check {
        passed,
        detail,
        elapsed: t0.elapsed(),
    }
}

fn within(check: Check, limit: Duration) -> Check {
    if check.elapsed <= limit {
        return check;
    }
    Check {
        passed: false,
        detail: format!("{}; runtime over {limit:?}", check.detail),
        ..check
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- graphs

/// Random digraph without self-loops or parallel edges.
pub fn random_digraph(rng: &mut impl Rng, max_nodes: usize) -> PrimalGraph {
    let n = rng.random_range(2..=max_nodes);
    let p = rng.random_range(0.02..0.2);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u != v && rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    edges.shuffle(rng);
    PrimalGraph::new(n, edges).unwrap()
}

/// Every ordered pair of edges `((u, v), (v, w))`, found by scanning all
/// pairs: `(from, to, connector)`, sorted.
pub fn brute_force_between(g: &PrimalGraph) -> Vec<(usize, usize, usize)> {
    let e = g.edges();
    let mut out = Vec::new();
    for (i, &(_, v)) in e.iter().enumerate() {
        for (j, &(x, _)) in e.iter().enumerate() {
            if i != j && v == x {
                out.push((i, j, v));
            }
        }
    }
    out.sort_unstable();
    out
}

pub fn dual_triples(g: &PrimalGraph) -> Vec<(usize, usize, usize)> {
    let mut got: Vec<_> = build_dual(g).between_edges().iter().map(|b| (b.from, b.to, b.connector)).collect();
    got.sort_unstable();
    got
}

/// Undirected hop distances in the dual graph from `start`.
pub fn dual_distances(net: &PreparedNetwork, start: usize) -> Vec<usize> {
    let n = net.edge_count();
    let mut adj = vec![Vec::new(); n];
    for b in net.dual.between_edges() {
        adj[b.from].push(b.to);
        adj[b.to].push(b.from);
    }
    let mut dist = vec![usize::MAX; n];
    dist[start] = 0;
    let mut queue = VecDeque::from([start]);
    while let Some(x) = queue.pop_front() {
        for &y in &adj[x] {
            if dist[y] == usize::MAX {
                dist[y] = dist[x] + 1;
                queue.push_back(y);
            }
        }
    }
    dist
}

fn uniform_tensor(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub const SMALL_WIDTHS: InputWidths = InputWidths {
    node: 3,
    edge: 6,
    between: 5,
};

/// `g` with random features; between-edge features are keyed by the
/// `(from, to)` edge pair through `between_of`.
pub fn featurize(
    g: PrimalGraph,
    nodes: Tensor,
    edges: Tensor,
    between_of: impl Fn(usize, usize) -> Vec<f64>,
) -> PreparedNetwork {
    let dual = build_dual(&g);
    let rows: Vec<Vec<f64>> = dual.between_edges().iter().map(|b| between_of(b.from, b.to)).collect();
    let between = if rows.is_empty() {
        Tensor::zeros(0, SMALL_WIDTHS.between)
    } else {
        Tensor::from_rows(&rows)
    };
    let features = FeatureMatrices {
        nodes,
        edges,
        between,
        scaling: FeatureScaling {
            length: MinMax { lo: 0.0, hi: 1.0 },
        },
    };
    PreparedNetwork::new(g, dual, features).unwrap()
}

/// A grid-like synthetic network with its real encoded features.
pub fn small_synth(seed: u64) -> SynthOutput {
    synth_network(&SynthSpec {
        regions: 2,
        edges_per_region: 40,
        transition_edges: 2,
        seed,
        ..SynthSpec::default()
    })
    .unwrap()
}

pub fn prepare(out: &SynthOutput) -> PreparedNetwork {
    out.network.prepare(&CategoryVocabulary::default(), None, true).unwrap()
}

pub fn widths_of(net: &PreparedNetwork) -> InputWidths {
    let (node, edge, between) = net.features.widths();
    InputWidths { node, edge, between }
}

pub fn rfn_model(fusion: FusionKind, aggregator: AggregatorKind, input: InputWidths, hidden: usize, head: Head, seed: u64) -> RfnModel {
    RfnModel::new(RfnConfig::two_layer(fusion, aggregator, input, hidden, head), &mut rng(seed)).unwrap()
}

pub const VARIANTS: [(FusionKind, AggregatorKind); 4] = [
    (FusionKind::Additive, AggregatorKind::Mean),
    (FusionKind::Additive, AggregatorKind::Attentional),
    (FusionKind::Interactional, AggregatorKind::Mean),
    (FusionKind::Interactional, AggregatorKind::Attentional),
];

// ------------------------------------------------------------- criteria

pub fn criterion_1_dual_graph() -> Check {
    within(
        timed(|| {
            let mut r = rng(11);
            let mut mismatches = 0;
            let mut total = 0;
            for _ in 0..30 {
                let g = random_digraph(&mut r, 50);
                let want = brute_force_between(&g);
                total += want.len();
                if dual_triples(&g) != want {
                    mismatches += 1;
                }
            }
            let fig = build_dual(&fixtures::three_way());
            let fig_ok = fig.edge_count() == 6 && fig.between_count() == 12;
            (
                mismatches == 0 && fig_ok,
                format!(
                    "30 random digraphs ({total} between-edges), {mismatches} mismatches; three-way fixture {} dual nodes / {} between-edges",
                    fig.edge_count(),
                    fig.between_count()
                ),
            )
        }),
        Duration::from_secs(1),
    )
}

pub fn criterion_2_gradients() -> Check {
    within(
        timed(|| {
            let kinds: Vec<ModelKind> = ModelKind::ALL.into_iter().filter(|k| k.is_neural()).collect();
            let mut worst = (0.0f64, String::new());
            let mut checked = 0;
            for &kind in &kinds {
                for head in [Head::Regression, Head::Classification { classes: 3 }] {
                    for seed in 0..3 {
                        let r = model_gradient_check(kind, head, seed).unwrap();
                        checked += r.checked;
                        if r.max_rel_error > worst.0 || worst.1.is_empty() {
                            worst = (r.max_rel_error.max(worst.0), format!("{kind}"));
                        }
                    }
                }
            }
            (
                worst.0 < GRAD_TOL,
                format!(
                    "{} models x 2 heads x 3 graphs, {checked} entries, h={GRAD_STEP:e}: max rel. error {:.2e} (worst {}) < {GRAD_TOL:e}",
                    kinds.len(),
                    worst.0,
                    worst.1
                ),
            )
        }),
        Duration::from_secs(60),
    )
}

/// Relational rows `[src | rel | flag | tgt]` of the edge view, built by
/// looping over the dual graph's relations.
pub fn edge_relational_rows(net: &PreparedNetwork, h_e: &Tensor, joined: &Tensor) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
    let mut rows = Vec::new();
    let mut segments = vec![Vec::new(); net.edge_count()];
    for (e, segment) in segments.iter_mut().enumerate() {
        let mut entries: Vec<(usize, usize, f64)> = Vec::new();
        for &b in net.dual.out_between(e) {
            entries.push((b, net.dual.between(b).to, 1.0));
        }
        for &b in net.dual.in_between(e) {
            entries.push((b, net.dual.between(b).from, 0.0));
        }
        entries.sort_by(|a, b| a.0.cmp(&b.0).then(b.2.total_cmp(&a.2)));
        for (b, n, flag) in entries {
            let mut row = h_e.row(e).to_vec();
            row.extend_from_slice(joined.row(b));
            row.push(flag);
            row.extend_from_slice(h_e.row(n));
            segment.push(rows.len());
            rows.push(row);
        }
    }
    (rows, segments)
}

pub fn joined_features(net: &PreparedNetwork) -> Tensor {
    let rows: Vec<Vec<f64>> = net
        .dual
        .between_edges()
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let mut row = net.features.between.row(i).to_vec();
            row.extend_from_slice(net.features.nodes.row(b.connector));
            row
        })
        .collect();
    Tensor::from_rows(&rows)
}

fn dot_col(row: &[f64], w: &Tensor, c: usize) -> f64 {
    row.iter().enumerate().map(|(k, v)| v * w.get(k, c)).sum()
}

pub fn criterion_3_aggregators() -> Check {
    timed(|| {
        let mut attention_err = 0.0f64;
        let mut mean_err = 0.0f64;
        let mut block_err = 0.0f64;
        let mut inter_err = 0.0f64;
        for seed in 0..5 {
            let out = small_synth(seed);
            let net = prepare(&out);
            let input = widths_of(&net);
            let joined = joined_features(&net);
            let (rows, segments) = edge_relational_rows(&net, &net.features.edges, &joined);

            // Attention weights sum to one per neighborhood.
            let aa = rfn_model(FusionKind::Additive, AggregatorKind::Attentional, input, 8, Head::Regression, seed);
            let path = &aa.layers[0].edge;
            let w_c = aa.params.get(path.aggregator.w_c.unwrap());
            for seg in &segments {
                if seg.is_empty() {
                    continue;
                }
                let scores: Vec<f64> = seg
                    .iter()
                    .map(|&i| Activation::leaky_relu().apply_scalar(dot_col(&rows[i], w_c, 0)))
                    .collect();
                let mut tape = Tape::new();
                let s = tape.constant(Tensor::column_vector(&scores));
                let seg_idx = std::sync::Arc::new(rfn::tensor::Segments::contiguous(vec![0, scores.len()]));
                let w = tape.segment_softmax(s, &seg_idx).unwrap();
                let sum: f64 = tape.value(w).data().iter().sum();
                attention_err = attention_err.max((sum - 1.0).abs());
            }
            // And through the model's own attention path.
            {
                let mut tape = Tape::new();
                let bound = aa.params.bind_frozen(&mut tape);
                let h_r = tape.constant(Tensor::from_rows(&rows));
                let flat: Vec<usize> = (0..rows.len()).collect();
                let offsets: Vec<usize> = std::iter::once(0)
                    .chain(segments.iter().scan(0, |acc, s| {
                        *acc += s.len();
                        Some(*acc)
                    }))
                    .collect();
                debug_assert_eq!(flat.len(), *offsets.last().unwrap());
                let seg_idx = std::sync::Arc::new(rfn::tensor::Segments::contiguous(offsets));
                let w = rfn::rfn::attention_weights(&mut tape, &bound, &path.aggregator, h_r, &seg_idx).unwrap();
                for (i, seg) in segments.iter().enumerate() {
                    if seg.is_empty() {
                        continue;
                    }
                    let s: f64 = seg_idx.range(i).map(|p| tape.value(w).data()[p]).sum();
                    attention_err = attention_err.max((s - 1.0).abs());
                }
            }

            // W^C = 0 turns attention into the mean.
            for fusion in [FusionKind::Additive, FusionKind::Interactional] {
                let mut m = rfn_model(fusion, AggregatorKind::Attentional, input, 8, Head::Regression, seed + 100);
                let layer = m.layers[0].clone();
                for p in [&layer.node, &Some(layer.edge.clone())].into_iter().flatten() {
                    let id = p.aggregator.w_c.unwrap();
                    let (r, c) = m.params.get(id).shape();
                    *m.params.get_mut(id) = Tensor::zeros(r, c);
                }
                let mut mean_path = layer.edge.clone();
                mean_path.aggregator.kind = AggregatorKind::Mean;
                let mut tape = Tape::new();
                let bound = m.params.bind_frozen(&mut tape);
                let h_e = tape.constant(net.features.edges.clone());
                let j = tape.constant(joined.clone());
                let att = relational_fusion(&mut tape, &bound, &layer.edge, &net.dual_relations, h_e, j).unwrap();
                let mean = relational_fusion(&mut tape, &bound, &mean_path, &net.dual_relations, h_e, j).unwrap();
                mean_err = mean_err.max(tape.value(att).max_abs_diff(tape.value(mean)));
            }

            // Additive fusion equals the sum of independent block transforms.
            let fuse = &aa.layers[0].edge.fusion;
            let w_r = aa.params.get(fuse.w_r);
            let b = aa.params.get(fuse.bias);
            let (de, dj) = (input.edge, input.between + input.node);
            let blocks = [(0, de), (de, de + dj), (de + dj, de + dj + 1), (de + dj + 1, 2 * de + dj + 1)];
            let mut tape = Tape::new();
            let bound = aa.params.bind_frozen(&mut tape);
            let h_r = tape.constant(Tensor::from_rows(&rows));
            let fused = rfn::rfn::fuse_rows(&mut tape, &bound, fuse, h_r).unwrap();
            for (i, row) in rows.iter().enumerate() {
                for c in 0..fuse.output_width {
                    let mut pre = b.data()[c];
                    for &(lo, hi) in &blocks {
                        pre += (lo..hi).map(|k| row[k] * w_r.get(k, c)).sum::<f64>();
                    }
                    let want = fuse.activation.apply_scalar(pre);
                    block_err = block_err.max((tape.value(fused).get(i, c) - want).abs());
                }
            }

            // Interactional fusion against the double sum over interactions.
            let ai = rfn_model(FusionKind::Interactional, AggregatorKind::Attentional, input, 8, Head::Regression, seed + 200);
            let fuse = &ai.layers[0].edge.fusion;
            let w_r = ai.params.get(fuse.w_r);
            let w_i = ai.params.get(fuse.w_i.unwrap());
            let b = ai.params.get(fuse.bias);
            let mut tape = Tape::new();
            let bound = ai.params.bind_frozen(&mut tape);
            let h_r = tape.constant(Tensor::from_rows(&rows));
            let fused = rfn::rfn::fuse_rows(&mut tape, &bound, fuse, h_r).unwrap();
            let d = rows[0].len();
            for (i, h) in rows.iter().enumerate().step_by(7) {
                for c in 0..fuse.output_width {
                    let mut s = 0.0;
                    for j in 0..d {
                        for k in 0..d {
                            s += h[j] * h[k] * w_i.get(k, j) * w_r.get(j, c);
                        }
                    }
                    let want = fuse.activation.apply_scalar(s) + b.data()[c];
                    inter_err = inter_err.max((tape.value(fused).get(i, c) - want).abs());
                }
            }
        }
        (
            attention_err <= ATTENTION_SUM_TOL && mean_err <= MEAN_IDENTITY_TOL && block_err <= BLOCK_TOL && inter_err <= INTERACTION_TOL,
            format!(
                "attention sum err {attention_err:.1e} (<= {ATTENTION_SUM_TOL:e}); W^C=0 vs mean {mean_err:.1e} (<= {MEAN_IDENTITY_TOL:e}); \
                 additive block sum {block_err:.1e} (<= {BLOCK_TOL:e}); interactional scalar loop {inter_err:.1e} (<= {INTERACTION_TOL:e})"
            ),
        )
    })
}

/// Adds noise to every feature row the edge output of `e` cannot see
/// through two layers.
pub fn perturb_beyond(net: &PreparedNetwork, e: usize, hops: usize, rng: &mut impl Rng) -> (PreparedNetwork, usize) {
    let dist = dual_distances(net, e);
    let near = |x: usize| dist[x] <= hops;
    let mut touched_nodes = BTreeSet::new();
    for (x, &(u, v)) in net.primal.edges().iter().enumerate() {
        if near(x) {
            touched_nodes.insert(u);
            touched_nodes.insert(v);
        }
    }
    let mut out = net.clone();
    let mut count = 0;
    let jiggle = |t: &mut Tensor, r: usize, rng: &mut dyn rand::RngCore| {
        for v in t.row_mut(r) {
            *v += rng.random_range(-0.5..0.5);
        }
    };
    for x in 0..net.edge_count() {
        if !near(x) {
            jiggle(&mut out.features.edges, x, rng);
            count += 1;
        }
    }
    for n in 0..net.primal.node_count() {
        if !touched_nodes.contains(&n) {
            jiggle(&mut out.features.nodes, n, rng);
            count += 1;
        }
    }
    for (i, b) in net.dual.between_edges().iter().enumerate() {
        if !near(b.from) || !near(b.to) {
            jiggle(&mut out.features.between, i, rng);
            count += 1;
        }
    }
    (out, count)
}

pub fn criterion_4_receptive_field() -> Check {
    timed(|| {
        let mut invariance_err = 0.0f64;
        let mut sub_err = 0.0f64;
        let mut perturbed = 0;
        let mut models = 0;
        for seed in 0..3 {
            let out = small_synth(seed + 40);
            let net = prepare(&out);
            let input = widths_of(&net);
            let mut r = rng(seed);
            let mut candidates: Vec<Model> = VARIANTS
                .iter()
                .map(|&(f, a)| Model::Rfn(rfn_model(f, a, input, 8, Head::Regression, seed)))
                .collect();
            for kind in [ModelKind::GraphSageMean, ModelKind::GraphSageMaxPool, ModelKind::Gat] {
                let hyper = Hyper {
                    hidden: 8,
                    heads: 2,
                    learning_rate: 0.0,
                };
                candidates.push(Model::build(kind, &hyper, Head::Classification { classes: 3 }, input, &mut r).unwrap());
            }
            for model in &candidates {
                models += 1;
                let full = model.predict(&net).unwrap();
                for _ in 0..4 {
                    let e = r.random_range(0..net.edge_count());
                    let (noisy, n) = perturb_beyond(&net, e, 2, &mut r);
                    perturbed += n;
                    let moved = model.predict(&noisy).unwrap();
                    let diff = full.row(e).iter().zip(moved.row(e)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    invariance_err = invariance_err.max(diff);
                }
                let mut seeds: Vec<usize> = (0..net.edge_count()).collect();
                seeds.shuffle(&mut r);
                seeds.truncate(12);
                let (sub_net, sub) = net.subnetwork(&seeds, 2).unwrap();
                let local = model.predict(&sub_net).unwrap();
                for (k, &s) in seeds.iter().enumerate() {
                    let d = full.row(s).iter().zip(local.row(sub.seeds[k])).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    sub_err = sub_err.max(d);
                }
            }
        }
        (
            invariance_err <= RECEPTIVE_TOL && sub_err <= RECEPTIVE_TOL,
            format!(
                "{models} models (4 RFN variants, GraphSAGE x2, GAT): output change under {perturbed} far perturbations {invariance_err:.1e}, \
                 subnetwork vs full {sub_err:.1e} (<= {RECEPTIVE_TOL:e})"
            ),
        )
    })
}

/// Outputs of an all-outputs two-layer RFN.
pub fn all_outputs(model: &RfnModel, net: &PreparedNetwork) -> (Tensor, Tensor, Tensor) {
    let mut tape = Tape::new();
    let bound = model.params.bind_frozen(&mut tape);
    let out = model.forward(&mut tape, &bound, net).unwrap();
    (tape.take_value(out.nodes), tape.take_value(out.edges), tape.take_value(out.between))
}

/// Checks that relabeling nodes and edges of a random network permutes all
/// three outputs exactly. Returns the number of mismatching entries.
pub fn equivariance_mismatches(model: &RfnModel, seed: u64) -> usize {
    let mut r = rng(seed);
    let g = loop {
        let g = random_digraph(&mut r, 25);
        if g.edge_count() >= 3 {
            break g;
        }
    };
    let (nv, ne) = (g.node_count(), g.edge_count());
    let x_v = uniform_tensor(nv, SMALL_WIDTHS.node, &mut r);
    let x_e = uniform_tensor(ne, SMALL_WIDTHS.edge, &mut r);
    let mut between_feats: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
    for t in dual_triples(&g) {
        between_feats.insert((t.0, t.1), (0..SMALL_WIDTHS.between).map(|_| r.random_range(-1.0..1.0)).collect());
    }

    let mut pn: Vec<usize> = (0..nv).collect();
    let mut pe: Vec<usize> = (0..ne).collect();
    pn.shuffle(&mut r);
    pe.shuffle(&mut r);
    let mut inv_pe = vec![0; ne];
    for (old, &new) in pe.iter().enumerate() {
        inv_pe[new] = old;
    }
    let mut new_edges = vec![(0, 0); ne];
    for (old, &(u, v)) in g.edges().iter().enumerate() {
        new_edges[pe[old]] = (pn[u], pn[v]);
    }
    let mut y_v = Tensor::zeros(nv, SMALL_WIDTHS.node);
    for old in 0..nv {
        y_v.row_mut(pn[old]).copy_from_slice(x_v.row(old));
    }
    let mut y_e = Tensor::zeros(ne, SMALL_WIDTHS.edge);
    for old in 0..ne {
        y_e.row_mut(pe[old]).copy_from_slice(x_e.row(old));
    }
    let g2 = PrimalGraph::new(nv, new_edges).unwrap();
    let a = featurize(g.clone(), x_v, x_e, |f, t| between_feats[&(f, t)].clone());
    let b = featurize(g2, y_v, y_e, |f, t| between_feats[&(inv_pe[f], inv_pe[t])].clone());

    let (av, ae, ab) = all_outputs(model, &a);
    let (bv, be, bb) = all_outputs(model, &b);
    let mut bad = 0;
    let mut cmp = |x: &[f64], y: &[f64]| {
        bad += x.iter().zip(y).filter(|(p, q)| p.to_bits() != q.to_bits()).count();
    };
    for old in 0..nv {
        cmp(av.row(old), bv.row(pn[old]));
    }
    for old in 0..ne {
        cmp(ae.row(old), be.row(pe[old]));
    }
    let old_between: HashMap<(usize, usize), usize> = a.dual.between_edges().iter().enumerate().map(|(i, x)| ((x.from, x.to), i)).collect();
    for (i, x) in b.dual.between_edges().iter().enumerate() {
        let old = old_between[&(inv_pe[x.from], inv_pe[x.to])];
        cmp(ab.row(old), bb.row(i));
    }
    bad
}

pub fn all_outputs_model(fusion: FusionKind, aggregator: AggregatorKind, head: Head, seed: u64) -> RfnModel {
    let mut cfg = RfnConfig::two_layer(fusion, aggregator, SMALL_WIDTHS, 8, head);
    cfg.all_outputs = true;
    RfnModel::new(cfg, &mut rng(seed)).unwrap()
}

pub fn criterion_5_equivariance() -> Check {
    timed(|| {
        let mut bad = 0;
        let mut runs = 0;
        for (i, &(f, a)) in VARIANTS.iter().enumerate() {
            for head in [Head::Regression, Head::Classification { classes: 4 }] {
                for seed in 0..5 {
                    let model = all_outputs_model(f, a, head, seed + 10 * i as u64);
                    bad += equivariance_mismatches(&model, seed * 31 + i as u64);
                    runs += 1;
                }
            }
        }
        (
            bad == 0,
            format!("{runs} random relabelings over 4 variants x 2 heads: {bad} node/edge/between entries differ bitwise"),
        )
    })
}

/// One desk-experiment seed: test MAEs of grouping, RFN-A+I,
/// GraphSAGE-mean and MLP.
#[derive(Clone, Copy, Debug)]
pub struct DeskRun {
    pub grouping: f64,
    pub rfn: f64,
    pub sage: f64,
    pub mlp: f64,
}

pub fn desk_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        seed,
        noise_sigma: DESK_SIGMA,
        approach_slowdown: DESK_SLOWDOWN,
        ..SynthSpec::default()
    }
}

pub fn desk_train_config(hyper: &Hyper, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::for_task(Task::SpeedEstimation, hyper.learning_rate, seed);
    cfg.batch_size = DESK_BATCH;
    cfg.epochs = DESK_EPOCHS;
    cfg
}

pub fn desk_run(seed: u64) -> DeskRun {
    let out = synth_network(&desk_spec(seed)).unwrap();
    let net = prepare(&out);
    let split = temporal_split(&out.speeds, (0.6, 0.2, 0.2)).unwrap();
    let e = net.edge_count();
    let train_t = speed_targets(&split.train, e).unwrap();
    let val_t = speed_targets(&split.val, e).unwrap();
    let test_t = speed_targets(&split.test, e).unwrap();
    let value = |m: Metric| m.value().expect("test split has qualifying segments");
    let grouping = value(fit_grouping(&net, &train_t).unwrap().evaluate(&net, &test_t, 0).unwrap());
    let fit = |kind: ModelKind| {
        let hyper = Hyper::defaults(kind, Task::SpeedEstimation);
        let model = Model::build(kind, &hyper, Head::Regression, widths_of(&net), &mut rng(seed)).unwrap();
        let (trained, _) = train(model, &net, &train_t, Some(&val_t), 0, &desk_train_config(&hyper, seed)).unwrap();
        value(trained.evaluate(&net, &test_t, 0).unwrap())
    };
    DeskRun {
        grouping,
        rfn: fit(ModelKind::RfnAI),
        sage: fit(ModelKind::GraphSageMean),
        mlp: fit(ModelKind::Mlp),
    }
}

pub fn criterion_6_desk() -> Check {
    within(
        timed(|| {
            let runs: Vec<DeskRun> = (0..DESK_SEEDS).map(desk_run).collect();
            let wins = runs.iter().filter(|r| r.rfn < r.sage && r.rfn < r.mlp).count();
            let grouping_ok = runs.iter().all(|r| r.grouping <= DESK_SIGMA);
            let table: Vec<String> = runs
                .iter()
                .enumerate()
                .map(|(s, r)| format!("seed {s}: rfn-a+i {:.3} graphsage-mean {:.3} mlp {:.3} grouping {:.3}", r.rfn, r.sage, r.mlp, r.grouping))
                .collect();
            (
                wins >= DESK_WINS_NEEDED && grouping_ok,
                format!(
                    "RFN-A+I beats both baselines on {wins}/{DESK_SEEDS} seeds (need {DESK_WINS_NEEDED}); grouping <= sigma-floor {DESK_SIGMA} on all seeds: {grouping_ok}\n    {}",
                    table.join("\n    ")
                ),
            )
        }),
        Duration::from_secs(600),
    )
}

/// Per-segment MAE by explicit loops.
pub fn naive_mae(pred: &[f64], obs: &[Vec<f64>], min_obs: usize) -> Option<f64> {
    let mut total = 0.0;
    let mut n = 0;
    for i in 0..pred.len() {
        if obs[i].len() < min_obs {
            continue;
        }
        let mut s = 0.0;
        for v in &obs[i] {
            s += v;
        }
        let mean = s / obs[i].len() as f64;
        total += (pred[i] - mean).abs();
        n += 1;
    }
    (n > 0).then(|| total / n as f64)
}

/// Macro F1 from precision and recall per class.
pub fn naive_macro_f1(pred: &[usize], truth: &[usize], classes: usize) -> f64 {
    let mut sum = 0.0;
    for c in 0..classes {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for i in 0..pred.len() {
            match (pred[i] == c, truth[i] == c) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        if tp > 0.0 {
            let precision = tp / (tp + fp);
            let recall = tp / (tp + fn_);
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    sum / classes as f64
}

pub fn criterion_7_metrics() -> Check {
    timed(|| {
        let mut r = rng(7);
        let mut mae_err = 0.0f64;
        let mut f1_err = 0.0f64;
        let mut empty_mismatch = 0;
        for _ in 0..100 {
            let n = r.random_range(1..30);
            let pred: Vec<f64> = (0..n).map(|_| r.random_range(0.0..130.0)).collect();
            let obs: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let k = r.random_range(0..16);
                    (0..k).map(|_| r.random_range(0.0..130.0)).collect()
                })
                .collect();
            let refs: Vec<&[f64]> = obs.iter().map(Vec::as_slice).collect();
            match (mae_per_segment(&pred, &refs, 10), naive_mae(&pred, &obs, 10)) {
                (Metric::Value(a), Some(b)) => mae_err = mae_err.max((a - b).abs()),
                (Metric::Empty, None) => {}
                _ => empty_mismatch += 1,
            }
            let classes = r.random_range(1..8);
            let m = r.random_range(1..60);
            let p: Vec<usize> = (0..m).map(|_| r.random_range(0..classes)).collect();
            let t: Vec<usize> = (0..m).map(|_| r.random_range(0..classes)).collect();
            f1_err = f1_err.max((macro_f1(&p, &t, classes) - naive_macro_f1(&p, &t, classes)).abs());
        }
        let ten = [10.0; 10];
        let worked_mae = mae_per_segment(&[12.0], &[&ten], 10) == Metric::Value(2.0);
        let f1 = macro_f1(&[0, 1, 1, 1], &[0, 0, 1, 1], 2);
        let worked_f1 = f1 == (2.0 / 3.0 + 0.8) / 2.0 && format!("{f1:.4}") == "0.7333";
        (
            mae_err <= METRIC_TOL && f1_err <= METRIC_TOL && empty_mismatch == 0 && worked_mae && worked_f1,
            format!(
                "100 random instances: MAE err {mae_err:.1e}, macro-F1 err {f1_err:.1e} (<= {METRIC_TOL:e}), {empty_mismatch} empty-metric mismatches; \
                 worked MAE 2 exact: {worked_mae}; worked macro-F1 {f1:.4} exact: {worked_f1}"
            ),
        )
    })
}

pub fn history_bits(h: &MetricHistory) -> Vec<(usize, u64, Option<u64>)> {
    h.records
        .iter()
        .map(|r| (r.epoch, r.train_loss.to_bits(), r.val_metric.value().map(f64::to_bits)))
        .collect()
}

/// Trains a small RFN-A+I on `out` and returns the trained model, its
/// history and a checkpoint.
pub fn quick_train(out: &SynthOutput, seed: u64, epochs: usize) -> (Trained, MetricHistory, Checkpoint) {
    let net = prepare(out);
    let split = temporal_split(&out.speeds, (0.6, 0.2, 0.2)).unwrap();
    let e = net.edge_count();
    let train_t = speed_targets(&split.train, e).unwrap();
    let val_t = speed_targets(&split.val, e).unwrap();
    let hyper = Hyper::defaults(ModelKind::RfnAI, Task::SpeedEstimation);
    let model = Model::build(ModelKind::RfnAI, &hyper, Head::Regression, widths_of(&net), &mut rng(seed)).unwrap();
    let mut cfg = TrainConfig::for_task(Task::SpeedEstimation, hyper.learning_rate, seed);
    cfg.batch_size = DESK_BATCH;
    cfg.epochs = epochs;
    let (trained, history) = train(model, &net, &train_t, Some(&val_t), 0, &cfg).unwrap();
    let ckpt = Checkpoint {
        kind: ModelKind::RfnAI,
        hyper,
        trained: trained.clone(),
        scaling: net.features.scaling,
        vocabulary: CategoryVocabulary::default(),
        classes: None,
        include_u_turns: true,
        train_config: Some(cfg),
    };
    (trained, history, ckpt)
}

/// A network unlike [`small_synth`]: more regions, other profiles and size.
pub fn other_network() -> SynthOutput {
    synth_network(&SynthSpec {
        regions: 3,
        edges_per_region: 60,
        transition_edges: 3,
        profiles: SynthSpec::default().profiles.into_iter().rev().collect(),
        spacing_deg: 0.0015,
        seed: 99,
        ..SynthSpec::default()
    })
    .unwrap()
}

pub fn criterion_8_reproducibility() -> Check {
    timed(|| {
        let a = small_synth(5);
        let (_, h1, ckpt) = quick_train(&a, 3, 4);
        let (_, h2, _) = quick_train(&a, 3, 4);
        let same_history = history_bits(&h1) == history_bits(&h2) && h1.to_table() == h2.to_table();

        let net_a = prepare(&a);
        let restored = Checkpoint::from_json(&ckpt.to_json().unwrap(), "memory").unwrap();
        let before = ckpt.trained.model.predict(&net_a).unwrap();
        let after = restored.trained.model.predict(&net_a).unwrap();
        let same_forward = before.data().iter().zip(after.data()).all(|(x, y)| x.to_bits() == y.to_bits());

        let b = other_network();
        let net_b = b.network.prepare(&restored.vocabulary, Some(restored.scaling), restored.include_u_turns).unwrap();
        let preds = restored.trained.model.predict(&net_b).unwrap();
        let finite = preds.is_finite() && preds.rows() == net_b.edge_count();
        let targets = speed_targets(&b.speeds, net_b.edge_count()).unwrap();
        let mae = restored.trained.evaluate(&net_b, &targets, 0).unwrap();
        let mae_ok = mae.value().is_some_and(f64::is_finite);
        (
            same_history && same_forward && finite && mae_ok,
            format!(
                "same-seed histories bitwise equal: {same_history}; checkpoint round trip bitwise forward: {same_forward}; \
                 cross-network ({} -> {} edges) finite outputs: {finite}, MAE {mae}",
                net_a.edge_count(),
                net_b.edge_count()
            ),
        )
    })
}

pub fn nine_category_network() -> SynthOutput {
    let vocab = CategoryVocabulary::default();
    let profiles = vocab
        .labels()
        .iter()
        .enumerate()
        .map(|(i, c)| rfn::data::synth::RegionProfile {
            category: c.clone(),
            zone: [rfn::data::Zone::City, rfn::data::Zone::Rural, rfn::data::Zone::SummerCottage][i % 3],
            speed: 30.0 + 10.0 * i as f64,
            limit: "50".into(),
        })
        .collect();
    synth_network(&SynthSpec {
        regions: 9,
        edges_per_region: 12,
        transition_edges: 8,
        profiles,
        seed: 2,
        ..SynthSpec::default()
    })
    .unwrap()
}

pub fn criterion_9_feature_widths() -> Check {
    timed(|| {
        let out = nine_category_network();
        let categories: BTreeSet<&str> = out.network.attributes.edges.iter().map(|e| e.category.as_str()).collect();
        let net = prepare(&out);
        let widths = net.features.widths();
        (
            widths == (3, 16, 5) && categories.len() == 9,
            format!("{}-category network: X^V width {}, X^E width {}, X^B width {} (want 3, 16, 5)", categories.len(), widths.0, widths.1, widths.2),
        )
    })
}

pub const CRITERIA: [(&str, fn() -> Check); 9] = [
    ("dual-graph oracle", criterion_1_dual_graph),
    ("gradient suite", criterion_2_gradients),
    ("aggregator identities", criterion_3_aggregators),
    ("receptive field", criterion_4_receptive_field),
    ("permutation equivariance", criterion_5_equivariance),
    ("desk-scale experiment", criterion_6_desk),
    ("metric oracles", criterion_7_metrics),
    ("protocol reproducibility", criterion_8_reproducibility),
    ("feature widths", criterion_9_feature_widths),
];
