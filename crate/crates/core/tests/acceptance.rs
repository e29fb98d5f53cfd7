//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;

use sar_core::dataio::{load_motion, save_motion, synth_generate};
use sar_core::depgraph::*;
use sar_core::inference::*;
use sar_core::metrics::*;
use sar_core::model::{ModelConfig, PoseRegressor, SarModel};
use sar_core::motion::*;
use sar_core::nn::*;
use sar_core::training::*;
use sar_core::Result;

const TS: [usize; 6] = [1, 3, 5, 7, 15, 29];

fn report(id: u32, name: &str, ok: bool, detail: impl AsRef<str>) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} [{verdict}] {name}: {}", detail.as_ref());
    assert!(ok, "criterion {id} ({name}) failed: {}", detail.as_ref());
}

fn keyframes_for(t: usize) -> Vec<usize> {
    let mut k: Vec<usize> = [1, (t + 1) / 3, 2 * (t + 1) / 3, t].into_iter().filter(|&k| k >= 1).collect();
    k.sort_unstable();
    k.dedup();
    k
}

fn all_graphs(t: usize) -> Vec<(&'static str, DependencyGraph)> {
    vec![
        ("original-ar", build_original_ar(t).unwrap()),
        ("binary-search", build_binary_search(t).unwrap()),
        ("three-stage", build_three_stage(t, &keyframes_for(t)).unwrap()),
    ]
}

fn random_pose(rng: &mut ChaCha8Rng, joints: usize, scale: f64) -> Pose {
    Pose((0..joints).map(|_| Rotation([(); 3].map(|_| rng.gen_range(-scale..scale)))).collect())
}

fn unit_quat(rng: &mut ChaCha8Rng) -> Quat {
    loop {
        let q = Quat::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = q.norm();
        if n > 0.1 && n <= 1.0 {
            return q.scale(1.0 / n);
        }
    }
}

/// Kahn's algorithm, smallest ready position first.
fn oracle_order(g: &DependencyGraph) -> Vec<usize> {
    let end = g.end();
    let mut done: BTreeSet<usize> = [0, end].into();
    let mut order = Vec::new();
    while order.len() < g.interior() {
        let next = g
            .targets()
            .filter(|t| !done.contains(t))
            .find(|t| g.deps_of(*t).unwrap().iter().all(|d| done.contains(d)))
            .expect("graph has a cycle");
        done.insert(next);
        order.push(next);
    }
    order
}

#[test]
fn criterion_01_fdam_matches_oracle() {
    let clock = Instant::now();
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for t in TS {
        for (name, g) in all_graphs(t) {
            let n = t + 2;
            let order = oracle_order(&g);
            let mut source = BTreeMap::new();
            let mut prev = 0;
            for &o in &order {
                source.insert(o, prev);
                prev = o;
            }
            let mut expect = vec![vec![false; n]; n];
            for r in 0..n {
                expect[r][r] = true;
            }
            for &o in &order {
                let row = source[&o];
                expect[row] = vec![false; n];
                for &d in g.deps_of(o).unwrap() {
                    expect[row][d] = true;
                }
                expect[row][row] = true;
            }
            let smooth: Vec<Vec<bool>> = (0..n)
                .map(|r| (0..n).map(|c| if r == 0 || r == n - 1 { r == c } else { true }).collect())
                .collect();

            let schedule = topological_schedule(&g).unwrap();
            let fdam = derive_fdam(&schedule, n).unwrap();
            let got: Vec<Vec<bool>> = (0..n).map(|r| fdam.staged.row(r).to_vec()).collect();
            let got_smooth: Vec<Vec<bool>> = (0..n).map(|r| fdam.smoothing.row(r).to_vec()).collect();
            if schedule.order != order || got != expect || got_smooth != smooth {
                mismatches.push(format!("{name} T={t}: mask"));
            }

            // Inverse shuffle: read deps back out of the mask rows.
            let mut prev = 0;
            for &o in &schedule.order {
                let recovered: BTreeSet<usize> = fdam.staged.allowed(prev).collect();
                let graph_deps = g.deps_of(o).unwrap();
                let extra: Vec<usize> = recovered.difference(graph_deps).copied().collect();
                if recovered != schedule.deps[&o]
                    || !graph_deps.is_subset(&recovered)
                    || extra.iter().any(|&e| e != prev)
                {
                    mismatches.push(format!("{name} T={t}: deps of {o}"));
                }
                prev = o;
            }
            checked += 1;
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    report(
        1,
        "FDAM oracle reconstruction",
        mismatches.is_empty() && secs < 5.0,
        format!("{checked} graphs, {} mismatches {:?}, {secs:.2}s", mismatches.len(), mismatches),
    );
}

fn closure(mask: &BoolMatrix, hops: usize) -> Vec<Vec<bool>> {
    let n = mask.rows();
    let mut reach: Vec<Vec<bool>> = (0..n).map(|r| (0..n).map(|c| r == c).collect()).collect();
    for _ in 0..hops {
        let next: Vec<Vec<bool>> = (0..n)
            .map(|r| (0..n).map(|c| reach[r][c] || mask.allowed(r).any(|k| reach[k][c])).collect())
            .collect();
        reach = next;
    }
    reach
}

fn run_blocks(blocks: &[Block], store: &ParamStore, x: &Tensor, mask: &BoolMatrix) -> Tensor {
    let mut tape = Tape::new();
    let mut v = tape.constant(x.clone());
    for b in blocks {
        v = b.forward(&mut tape, store, v, mask);
    }
    tape.value(v).clone()
}

#[test]
fn criterion_02_mask_causality() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut violations, mut checks) = (0usize, 0usize);
    for trial in 0..200 {
        if trial % 2 == 0 {
            // random mask, one and two plain decoder blocks
            let n = rng.gen_range(3..12);
            let d = 8;
            let coins: Vec<bool> = (0..n * n).map(|_| rng.gen_bool(0.4)).collect();
            let mask = BoolMatrix::from_fn(n, n, |r, c| r == c || coins[r * n + c]);
            let mut store = ParamStore::new();
            let depth = 1 + (trial / 2) % 2;
            let blocks: Vec<Block> =
                (0..depth).map(|i| Block::new(&mut store, &format!("b{i}"), d, 2, 2, &mut rng).unwrap()).collect();
            let x = Tensor::new(vec![1, n, d], (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
            let base = run_blocks(&blocks, &store, &x, &mask);
            let c = rng.gen_range(0..n);
            let mut xp = x.clone();
            for v in &mut xp.data_mut()[c * d..(c + 1) * d] {
                *v += rng.gen_range(-3.0..3.0);
            }
            let pert = run_blocks(&blocks, &store, &xp, &mask);
            let reach = closure(&mask, depth);
            for r in 0..n {
                if !reach[r][c] {
                    checks += 1;
                    if base.data()[r * d..(r + 1) * d] != pert.data()[r * d..(r + 1) * d] {
                        violations += 1;
                    }
                }
            }
        } else {
            // full model under a derived staged mask
            let t = TS[rng.gen_range(0..TS.len())];
            let graphs = all_graphs(t);
            let g = &graphs[rng.gen_range(0..graphs.len())].1;
            let schedule = topological_schedule(g).unwrap();
            let fdam = derive_fdam(&schedule, t + 2).unwrap();
            let model = SarModel::new(ModelConfig::desk(t + 2), trial as u64).unwrap();
            let n = t + 2;
            let frames: Vec<Pose> = (0..n).map(|_| random_pose(&mut rng, 4, 1.0)).collect();
            let empty: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
            let base = model.forward(&frames, &empty, &fdam.staged).unwrap();
            let c = rng.gen_range(0..n);
            let mut fp = frames.clone();
            fp[c] = random_pose(&mut rng, 4, 2.0);
            let mut ep = empty.clone();
            ep[c] = !ep[c];
            let pert = model.forward(&fp, &ep, &fdam.staged).unwrap();
            let reach = closure(&fdam.staged, model.config().temporal_blocks);
            for r in 0..n {
                if !reach[r][c] {
                    checks += 1;
                    if base[r] != pert[r] {
                        violations += 1;
                    }
                }
            }
        }
    }
    report(
        2,
        "mask causality under perturbation",
        violations == 0 && checks > 0,
        format!("200 trials, {checks} masked rows checked, {violations} violations"),
    );
}

const H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks `f` with respect to every input, using `Σ w ⊙ f(x)` as the scalar
/// objective unless `f` is already scalar.
fn op_check(rng: &mut ChaCha8Rng, shapes: &[&[usize]], f: impl Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let inputs: Vec<Tensor> = shapes.iter().map(|s| rand_tensor(rng, s)).collect();
    let sizes: Vec<usize> = inputs.iter().map(Tensor::numel).collect();
    let theta: Vec<f64> = inputs.iter().flat_map(|t| t.data().to_vec()).collect();
    let weights = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.input(t.clone())).collect();
        let out = f(&mut tape, &vars);
        rand_tensor(rng, tape.shape(out))
    };
    let eval = |theta: &[f64]| {
        let mut tape = Tape::new();
        let mut off = 0;
        let vars: Vec<Var> = inputs
            .iter()
            .zip(&sizes)
            .map(|(t, &k)| {
                let v = Tensor::new(t.shape().to_vec(), theta[off..off + k].to_vec()).unwrap();
                off += k;
                tape.input(v)
            })
            .collect();
        let out = f(&mut tape, &vars);
        let loss = if tape.value(out).numel() == 1 && weights.numel() == 1 {
            out
        } else {
            tape.dot(out, weights.clone())
        };
        let grads = tape.backward(loss);
        let g: Vec<f64> = vars
            .iter()
            .zip(&sizes)
            .flat_map(|(&v, &k)| grads.of(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; k]))
            .collect();
        (tape.value(loss).item(), g)
    };
    let analytic = eval(&theta).1;
    gradient_check(|x| eval(x).0, &analytic, &theta, H)
}

fn model_check(model: &mut SarModel, rng: &mut ChaCha8Rng, fdam: &Fdam) -> f64 {
    let n = model.config().positions;
    let j = model.config().joints;
    let frames: Vec<Pose> = (0..n).map(|_| random_pose(rng, j, 1.0)).collect();
    let empty: Vec<bool> = (0..n).map(|p| p % 3 == 1).collect();
    let target = rand_tensor(rng, &[1, n, 3 * j]);
    let ids: Vec<ParamId> = model.store().ids().collect();
    let theta: Vec<f64> = ids.iter().flat_map(|&id| model.store().value(id).data().to_vec()).collect();
    let mask = fdam.staged.clone();
    let mut eval = |theta: &[f64], grad: bool| {
        let mut off = 0;
        for &id in &ids {
            let dst = model.store_mut().value_mut(id).data_mut();
            let k = dst.len();
            dst.copy_from_slice(&theta[off..off + k]);
            off += k;
        }
        let mut tape = Tape::new();
        let x = tape.constant(sar_core::model::poses_tensor(&[&frames]));
        let y = model.forward_on(&mut tape, x, &empty, &mask);
        let loss = tape.mse(y, target.clone());
        let mut g = Vec::new();
        if grad {
            model.store_mut().zero_grad();
            let grads = tape.backward(loss);
            tape.accumulate(&grads, model.store_mut());
            g = ids.iter().flat_map(|&id| model.store().grad(id).to_vec()).collect();
        }
        (tape.value(loss).item(), g)
    };
    let analytic = eval(&theta, true).1;
    gradient_check(|x| eval(x, false).0, &analytic, &theta, H)
}

#[test]
fn criterion_03_gradient_checks() {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mask = BoolMatrix::from_fn(5, 5, |r, c| c <= r || (r + c) % 3 == 0);
    let rows = [true, false, true, false, false, true];
    let mut results: Vec<(&str, f64)> = vec![
        ("matmul", op_check(&mut rng, &[&[2, 3, 4], &[4, 5]], |t, v| t.matmul(v[0], v[1]))),
        ("bmm", op_check(&mut rng, &[&[2, 3, 4], &[2, 4, 5]], |t, v| t.bmm(v[0], v[1]))),
        ("bmm_nt", op_check(&mut rng, &[&[2, 3, 4], &[2, 5, 4]], |t, v| t.bmm_nt(v[0], v[1]))),
        ("add", op_check(&mut rng, &[&[3, 4], &[3, 4]], |t, v| t.add(v[0], v[1]))),
        ("add_broadcast", op_check(&mut rng, &[&[2, 3, 4], &[3, 4]], |t, v| t.add_broadcast(v[0], v[1]))),
        ("scale", op_check(&mut rng, &[&[3, 4]], |t, v| t.scale(v[0], -0.7))),
        ("gelu", op_check(&mut rng, &[&[4, 6]], |t, v| t.gelu(v[0]))),
        ("layer_norm", op_check(&mut rng, &[&[3, 6], &[6], &[6]], |t, v| t.layer_norm(v[0], v[1], v[2]))),
        ("masked_softmax", op_check(&mut rng, &[&[2, 5, 5]], |t, v| t.masked_softmax(v[0], &mask))),
        ("split_heads", op_check(&mut rng, &[&[2, 3, 6]], |t, v| t.split_heads(v[0], 3))),
        ("merge_heads", op_check(&mut rng, &[&[6, 3, 2]], |t, v| t.merge_heads(v[0], 3))),
        ("reshape", op_check(&mut rng, &[&[2, 6]], |t, v| t.reshape(v[0], &[3, 4]))),
        ("gather_rows", op_check(&mut rng, &[&[2, 4, 3]], |t, v| t.gather_rows(v[0], &[3, 0, 3, 1]))),
        ("add_row_flag", op_check(&mut rng, &[&[2, 3, 4], &[4]], |t, v| t.add_row_flag(v[0], v[1], &rows))),
        (
            "mse",
            op_check(&mut rng, &[&[3, 4]], |t, v| {
                let target = Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 / 7.0).collect()).unwrap();
                t.mse(v[0], target)
            }),
        ),
    ];
    let schedule = topological_schedule(&build_three_stage(7, &[1, 4, 7]).unwrap()).unwrap();
    let fdam = derive_fdam(&schedule, 9).unwrap();
    let mut model = SarModel::new(ModelConfig::desk(9), 3).unwrap();
    results.push(("desk model end to end", model_check(&mut model, &mut rng, &fdam)));
    let secs = clock.elapsed().as_secs_f64();
    let worst = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let failed: Vec<String> =
        results.iter().filter(|r| !(r.1 <= GRAD_TOL)).map(|r| format!("{}={:.2e}", r.0, r.1)).collect();
    report(
        3,
        "gradient checks",
        failed.is_empty() && secs < 120.0,
        format!("{} checks, worst rel err {worst:.2e}, failures {failed:?}, {secs:.1}s", results.len()),
    );
}

/// Knows the ground truth and the schedule; returns the right target at
/// every row it is asked about.
struct Oracle {
    truth: Vec<Pose>,
    target_of_row: BTreeMap<usize, usize>,
    smoothing: BoolMatrix,
}

impl PoseRegressor for Oracle {
    fn positions(&self) -> usize {
        self.truth.len()
    }

    fn joints(&self) -> usize {
        self.truth[0].joints()
    }

    fn predict(&self, _frames: &[Pose], _empty: &[bool], mask: &BoolMatrix) -> Result<Vec<Pose>> {
        if *mask == self.smoothing {
            return Ok(self.truth.clone());
        }
        Ok((0..self.truth.len())
            .map(|r| self.truth[*self.target_of_row.get(&r).unwrap_or(&r)].clone())
            .collect())
    }
}

#[test]
fn criterion_04_teacher_forcing_consistency() {
    let mut oracle_failures = 0;
    let mut worst: f64 = 0.0;
    for t in TS {
        let data = synth_generate(3, 4, t + 2, 30.0, t as u64).unwrap();
        for (name, g) in all_graphs(t) {
            let schedule = topological_schedule(&g).unwrap();
            let fdam = derive_fdam(&schedule, t + 2).unwrap();
            for m in &data {
                let truth = &m.frames;
                let oracle = Oracle {
                    truth: truth.clone(),
                    target_of_row: schedule.order.iter().map(|&o| (schedule.source[&o], o)).collect(),
                    smoothing: fdam.smoothing.clone(),
                };
                let a = run_schedule(&truth[0], &truth[t + 1], &oracle, &schedule, &fdam).unwrap();
                let b = run_without_smoothing(&truth[0], &truth[t + 1], &oracle, &schedule, &fdam).unwrap();
                if a != truth[1..=t] || b != truth[1..=t] {
                    oracle_failures += 1;
                    eprintln!("oracle mismatch: {name} T={t}");
                }
            }
            if t > 15 {
                continue;
            }
            let model = SarModel::new(ModelConfig::desk(t + 2), 40 + t as u64).unwrap();
            let truth = &data[0].frames;
            let parallel = model.forward(truth, &vec![false; t + 2], &fdam.staged).unwrap();
            let mut buf = FrameBuffer::new(&truth[0], &truth[t + 1], t + 2).unwrap();
            for &o in &schedule.order {
                let row = schedule.source[&o];
                let step = model.predict(&buf.frames, &buf.empty, &fdam.staged).unwrap();
                for (x, y) in step[row].flat().iter().zip(parallel[row].flat()) {
                    worst = worst.max((x - y).abs());
                }
                buf.write(o, truth[o].clone());
            }
        }
    }
    report(
        4,
        "teacher forcing matches rollout",
        oracle_failures == 0 && worst <= 1e-10,
        format!("oracle mismatches {oracle_failures}, max |iterative - parallel| = {worst:.1e}"),
    );
}

#[test]
fn criterion_05_level_execution_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = Vec::new();
    let mut runs = 0;
    for t in TS {
        let model = SarModel::new(ModelConfig::desk(t + 2), t as u64).unwrap();
        for (name, g) in all_graphs(t).into_iter().skip(1) {
            let schedule = topological_schedule(&g).unwrap();
            let fdam = derive_fdam(&schedule, t + 2).unwrap();
            let (a, b) = (random_pose(&mut rng, 4, 1.0), random_pose(&mut rng, 4, 1.0));
            let seq = run_schedule_with(&a, &b, &model, &schedule, &fdam, Execution::Sequential).unwrap();
            let lev = run_schedule_with(&a, &b, &model, &schedule, &fdam, Execution::Levels).unwrap();
            let level_ok = schedule.levels.iter().flatten().copied().collect::<Vec<_>>() == schedule.order;
            if seq.frames != lev.frames || lev.passes != schedule.levels.len() + 1 || !level_ok {
                failures.push(format!("{name} T={t}"));
            }
            runs += 1;
        }
    }
    report(
        5,
        "level execution equals sequential",
        failures.is_empty(),
        format!("{runs} schedules, bit-identical except {failures:?}"),
    );
}

#[test]
fn criterion_06_overfit_four_sequences() {
    let clock = Instant::now();
    let data = synth_generate(4, 4, 11, 30.0, 6).unwrap();
    let batch: Vec<&[Pose]> = data.iter().map(|m| m.frames.as_slice()).collect();
    let schedule = topological_schedule(&build_three_stage(9, &[1, 5, 9]).unwrap()).unwrap();
    let fdam = derive_fdam(&schedule, 11).unwrap();
    let mut model = SarModel::new(ModelConfig::desk(11), 6).unwrap();
    let adam = AdamConfig { lr: 1e-3, ..AdamConfig::default() };
    let mut reached = None;
    let mut last = f64::NAN;
    for step in 0..5000 {
        last = teacher_forcing_step(&mut model, &batch, &schedule, &fdam, &adam, 1.0).unwrap();
        if last < 1e-3 {
            reached = Some(step);
            break;
        }
    }
    let final_mse = teacher_forcing_value(&model, &batch, &schedule, &fdam).unwrap();
    let secs = clock.elapsed().as_secs_f64();
    report(
        6,
        "overfit four sequences",
        reached.is_some() && secs < 600.0,
        format!("first step below 1e-3: {reached:?}, last batch loss {last:.2e}, post-update {final_mse:.2e}, {secs:.1}s"),
    );
}

const ABLATION_STEPS1: usize = 1000;
const ABLATION_STEPS2: usize = 600;
const ABLATION_LR: f64 = 1e-3;

struct AblationScores {
    sar_mpjae: f64,
    ar_mpjae: f64,
    sar_gap: f64,
    nosmooth_gap: f64,
}

fn generate_all(model: &SarModel, s: &Schedule, f: &Fdam, test: &[Motion], smooth: bool) -> Vec<Vec<Pose>> {
    let n = s.n_positions;
    let mut bufs: Vec<FrameBuffer> =
        test.iter().map(|m| FrameBuffer::new(&m.frames[0], &m.frames[n - 1], n).unwrap()).collect();
    run_chain(&mut bufs, model, s, f, Execution::Sequential).unwrap();
    if smooth {
        run_smoothing(&mut bufs, model, f).unwrap();
    }
    bufs.iter().map(FrameBuffer::interior).collect()
}

fn ablation(seed: u64) -> AblationScores {
    let data = synth_generate(240, 4, 31, 30.0, 1000 + seed).unwrap();
    let (train_set, test) = data.split_at(200);
    let truth: Vec<Vec<Pose>> = test.iter().map(|m| m.frames[1..30].to_vec()).collect();
    let skel = Skeleton::chain(4, 0.1).unwrap();

    let sar_s = topological_schedule(&build_three_stage(29, &[1, 9, 19, 29]).unwrap()).unwrap();
    let sar_f = derive_fdam(&sar_s, 31).unwrap();
    let ar_s = topological_schedule(&build_original_ar(29).unwrap()).unwrap();
    let ar_f = derive_fdam(&ar_s, 31).unwrap();

    let step1 = TrainConfig {
        batch_size: 16,
        steps1: ABLATION_STEPS1,
        steps2: 0,
        lr: ABLATION_LR,
        seed,
        val_limit: 0,
        ..TrainConfig::default()
    };
    let mut sar = SarModel::new(ModelConfig::desk(31), seed).unwrap();
    train(&mut sar, train_set, &[], &sar_s, &sar_f, &step1).unwrap();
    let full = TrainConfig { batch_size: 8, steps2: ABLATION_STEPS2, ..step1.clone() };
    train(&mut sar, train_set, &[], &sar_s, &sar_f, &full).unwrap();
    let mut ar = SarModel::new(ModelConfig::desk(31), seed).unwrap();
    train(&mut ar, train_set, &[], &ar_s, &ar_f, &step1).unwrap();

    let sar_row = evaluate("sar", &generate_all(&sar, &sar_s, &sar_f, test, true), &truth, &skel).unwrap();
    let nos_row = evaluate("sar-nosmooth", &generate_all(&sar, &sar_s, &sar_f, test, false), &truth, &skel).unwrap();
    let ar_row = evaluate("ar", &generate_all(&ar, &ar_s, &ar_f, test, false), &truth, &skel).unwrap();
    eprint!("seed {seed}\n{}", eval_csv(&[sar_row.clone(), nos_row.clone(), ar_row.clone()]));
    AblationScores {
        sar_mpjae: sar_row.mpjae,
        ar_mpjae: ar_row.mpjae,
        sar_gap: sar_row.neighbor_gap,
        nosmooth_gap: nos_row.neighbor_gap,
    }
}

#[test]
fn criterion_07_ablation_ordering() {
    let clock = Instant::now();
    let scores: Vec<AblationScores> = (0..3).map(ablation).collect();
    let a = scores.iter().filter(|s| s.sar_mpjae < s.ar_mpjae).count();
    let b = scores.iter().filter(|s| s.sar_gap < s.nosmooth_gap).count();
    let detail: Vec<String> = scores
        .iter()
        .map(|s| {
            format!(
                "mpjae {:.4} vs ar {:.4}, gap {:.4} vs no-smoothing {:.4}",
                s.sar_mpjae, s.ar_mpjae, s.sar_gap, s.nosmooth_gap
            )
        })
        .collect();
    let secs = clock.elapsed().as_secs_f64();
    report(
        7,
        "ablation ordering",
        a >= 2 && b >= 2 && secs < 7200.0,
        format!("(a) {a}/3 seeds, (b) {b}/3 seeds, {secs:.0}s; {}", detail.join("; ")),
    );
}

#[test]
fn criterion_08_slerp_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (q0, q1) = (unit_quat(&mut rng), unit_quat(&mut rng));
        let theta = 2.0 * q0.dot(q1).abs().min(1.0).acos();
        let same = |a: Quat, b: Quat| a.sub(b).norm().min(a.add(b).norm());
        worst = worst.max(same(slerp(q0, q1, 0.0), q0));
        worst = worst.max(same(slerp(q0, q1, 1.0), q1));
        for _ in 0..3 {
            let u: f64 = rng.gen_range(0.0..1.0);
            let q = slerp(q0, q1, u);
            worst = worst.max((q0.angle_to(q) - u * theta).abs());
            worst = worst.max((q.angle_to(q1) - (1.0 - u) * theta).abs());
            worst = worst.max((q.norm() - 1.0).abs());
        }
    }
    let mut constant_ok = true;
    for _ in 0..50 {
        let p = random_pose(&mut rng, 5, 2.0);
        let m = slerp_motion(&p, &p, 12, 30.0).unwrap();
        let truth = [p.clone()];
        constant_ok &= m.frames.iter().all(|f| mpjae_geodesic(std::slice::from_ref(f), &truth).unwrap() <= 1e-9);
    }
    report(
        8,
        "SLERP baseline properties",
        worst <= 1e-9 && constant_ok,
        format!("1000 pairs, max deviation {worst:.1e}, identical endpoints constant: {constant_ok}"),
    );
}

#[test]
fn criterion_09_metric_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let skel = Skeleton::chain(4, 0.1).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let m: Vec<Pose> = (0..24).map(|_| random_pose(&mut rng, 4, 1.5)).collect();
        worst = worst.max(mpjae(&m, &m).unwrap());
        worst = worst.max(mpjpe(&m, &m, &skel).unwrap());
        worst = worst.max(npss(&m, &m).unwrap());
        let still = vec![m[0].clone(); 17];
        worst = worst.max(neighbor_l2(&still).unwrap());
    }
    let n = 60;
    let wave = |f: fn(f64) -> f64| -> Vec<Pose> {
        (0..n)
            .map(|t| {
                let x = f(std::f64::consts::TAU * 3.0 * t as f64 / n as f64);
                Pose(vec![Rotation([x, 0.5 * x, -x])])
            })
            .collect()
    };
    let sin_cos = npss(&wave(f64::sin), &wave(f64::cos)).unwrap();
    report(
        9,
        "metric identities",
        worst == 0.0 && sin_cos.abs() <= 1e-9,
        format!("identical-input max {worst:.1e}, NPSS(sin, cos) = {sin_cos:.1e}"),
    );
}

fn parse_dot(text: &str) -> (usize, BTreeMap<usize, BTreeSet<usize>>, BTreeSet<usize>) {
    let node = Regex::new(r#"^  (\d+) \[label="(\d+)"(, shape=box)?\];$"#).unwrap();
    let dup = Regex::new(r#"^  s(\d+) \[label="(\d+)'", style=dashed\];$"#).unwrap();
    let edge = Regex::new(r"^  (\d+) -> (\d+);$").unwrap();
    let dup_edge = Regex::new(r"^  s(\d+) -> (\d+) \[style=dashed\];$").unwrap();
    let mut nodes = 0;
    let mut deps: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    let mut dups = BTreeSet::new();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.first(), Some(&"digraph dependencies {"));
    assert_eq!(lines.last(), Some(&"}"));
    for line in &lines[1..lines.len() - 1] {
        if *line == "  rankdir=LR;" || dup_edge.is_match(line) {
            continue;
        }
        if let Some(c) = node.captures(line) {
            assert_eq!(c[1], c[2]);
            nodes += 1;
        } else if let Some(c) = dup.captures(line) {
            assert_eq!(c[1], c[2]);
            dups.insert(c[1].parse().unwrap());
        } else if let Some(c) = edge.captures(line) {
            deps.entry(c[1].parse().unwrap()).or_default().insert(c[2].parse().unwrap());
        } else {
            panic!("unparseable DOT line {line:?}");
        }
    }
    (nodes, deps, dups)
}

#[test]
fn criterion_10_format_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let mut motion_failures = 0;
    for i in 0..1000 {
        let joints = rng.gen_range(1..8);
        let len = rng.gen_range(1..20);
        let scale = [1e-12, 1.0, 3.0, 1e6][i % 4];
        let frames = (0..len).map(|_| random_pose(&mut rng, joints, scale)).collect();
        let m = Motion::new(frames, rng.gen_range(1.0..240.0)).unwrap();
        save_motion(&m, &path).unwrap();
        if load_motion(&path).unwrap() != m {
            motion_failures += 1;
        }
    }

    let schedule = topological_schedule(&build_three_stage(7, &[1, 4, 7]).unwrap()).unwrap();
    let fdam = derive_fdam(&schedule, 9).unwrap();
    let data = synth_generate(4, 4, 9, 30.0, 10).unwrap();
    let mut model = SarModel::new(ModelConfig::desk(9), 10).unwrap();
    let cfg = TrainConfig { batch_size: 2, steps1: 3, steps2: 1, lr: 1e-3, val_limit: 0, ..TrainConfig::default() };
    train(&mut model, &data, &[], &schedule, &fdam, &cfg).unwrap();
    let ckpt = dir.path().join("model.ckpt");
    model.save(&ckpt).unwrap();
    let loaded = SarModel::load(&ckpt).unwrap();
    let frames: Vec<Pose> = (0..9).map(|_| random_pose(&mut rng, 4, 1.0)).collect();
    let empty: Vec<bool> = (0..9).map(|p| p % 2 == 0).collect();
    let mut ckpt_ok = loaded.store().step_count() == model.store().step_count();
    for mask in [&fdam.staged, &fdam.smoothing] {
        ckpt_ok &= model.forward(&frames, &empty, mask).unwrap() == loaded.forward(&frames, &empty, mask).unwrap();
    }

    let mut dot_failures = Vec::new();
    for t in TS {
        for (name, g) in all_graphs(t) {
            let text = export_dot(&g);
            let (nodes, deps, dups) = parse_dot(&text);
            if text != export_dot(&g.clone()) || nodes != g.n_positions() || &deps != g.deps() || &dups != g.duplicates()
            {
                dot_failures.push(format!("{name} T={t}"));
            }
        }
    }
    report(
        10,
        "format round trips",
        motion_failures == 0 && ckpt_ok && dot_failures.is_empty(),
        format!(
            "1000 motions ({motion_failures} mismatches), checkpoint bit-identical: {ckpt_ok}, DOT failures {dot_failures:?}"
        ),
    );
}
