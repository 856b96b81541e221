//! Acceptance suite. Runs every criterion, prints one line each, and fails
//! the process if any criterion fails that is not listed in `KNOWN_FAILURES`.
//!
//! `cargo test -p splus-bench --test acceptance -- 7 9` runs a subset.
//! Criteria 7, 8 and 10 train a few thousand small models and dominate the
//! runtime (roughly half an hour single-threaded in total).

use std::path::PathBuf;
use std::time::Instant;

use splus_bench::config::lr_grid_from;
use splus_bench::sweep::{averaging_compare, stability_grid, stage_eval, width_optima, width_transfer};
use splus_bench::{steps_to_baseline, Checkpoint, ConfigFile, RunConfig, RunRecord, StepsTo, Trainer};
use splus_core::harness::{whitening_probe, Activation, NetTask, Objective, TaskKind, TaskSpec};
use splus_core::optim::{LayerState, ScalingMode, ShampooLayer};
use splus_core::{
    kron, matrix_norms, sym_eigh, sym_power, CounterRng, Matrix, Optimizer, ParamMap, SPlusConfig, SPlusState, Shampoo,
    ShampooConfig, Tensor,
};

/// Criteria that fail for reasons documented in the README; they still run
/// and still print FAIL.
const KNOWN_FAILURES: &[u32] = &[1, 4, 10];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

/// Every record produced by the training criteria; criterion 10 checks
/// self-comparison over all of them.
#[derive(Default)]
struct Suite {
    records: Vec<RunRecord>,
}

fn preset(name: &str) -> ConfigFile {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    ConfigFile::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn single(t: Tensor<f64>) -> ParamMap<f64> {
    ParamMap::from([("w".to_string(), t)])
}

fn gaussian(m: usize, n: usize, rng: &mut CounterRng) -> Matrix<f64> {
    Matrix::from_fn(m, n, |_, _| rng.normal())
}

fn spd(d: usize, rng: &mut CounterRng) -> Matrix<f64> {
    let g = gaussian(d, d, rng);
    let mut a = g.matmul_t(&g).unwrap().scale(1.0 / d as f64);
    a.add_diagonal(0.5);
    a.symmetrize();
    a
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn bits(xs: &[f64]) -> Vec<u64> {
    xs.iter().map(|x| x.to_bits()).collect()
}

fn dense(st: &SPlusState<f64>) -> &splus_core::optim::SPlusLayerState<f64> {
    match &st.layers["w"] {
        LayerState::Standard(l) => l,
        LayerState::Nonstandard { .. } => panic!("expected a dense layer"),
    }
}

/// A state after three steps with a refresh on the third, so momentum and
/// both bases come from the optimizer itself.
fn trained_state(m: usize, n: usize, rng: &mut CounterRng) -> SPlusState<f64> {
    let mut params = single(Tensor::zeros(&[m, n]));
    let config = SPlusConfig { inverse_every: 3, max_dim: 10_000, ..Default::default() };
    let mut st = SPlusState::init(&params, config).unwrap();
    for _ in 0..3 {
        st.step(&mut params, &single(Tensor::from(gaussian(m, n, rng)))).unwrap();
    }
    st
}

fn norm_identities(_: &mut Suite) -> Verdict {
    let start = Instant::now();
    let mut rng = CounterRng::new(1001, "acceptance-norms");
    let (mut frob, mut spec, mut inf) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    let mut over = Vec::new();
    for _ in 0..1000 {
        let m = 1 + rng.below(64) as usize;
        let n = 1 + rng.below(96) as usize;
        let st = trained_state(m, n, &mut rng);
        let u = st.compute_update("w").unwrap();
        let norms = matrix_norms(&u).unwrap();
        let root = ((m * n) as f64).sqrt();
        frob = frob.max((norms.frobenius - root).abs() / root);
        spec = spec.max(norms.spectral / root);
        let excess = norms.max_abs - (m as f64).sqrt().max((n as f64).sqrt());
        if excess > 1e-9 {
            over.push(format!("{m}x{n}"));
        }
        inf = inf.max(excess);
    }
    let secs = start.elapsed().as_secs_f64();
    // The spectral norm is computed, not exact; allow it rounding above sqrt(mn).
    let pass = frob <= 1e-9 && spec <= 1.0 + 1e-12 && inf <= 1e-9 && secs < 60.0;
    verdict(
        pass,
        format!(
            "max rel |F - sqrt(mn)| {frob:.1e}, max spectral/sqrt(mn) {spec:.6}, \
             {} of 1000 states exceed the inf bound (worst by {inf:.3}; e.g. {}), {secs:.1}s",
            over.len(),
            over.iter().take(4).cloned().collect::<Vec<_>>().join(" ")
        ),
    )
}

fn identity_basis(_: &mut Suite) -> Verdict {
    let mut rng = CounterRng::new(1002, "acceptance-identity");
    let mut exact = 0;
    for _ in 0..100 {
        let (m, n) = (1 + rng.below(12) as usize, 1 + rng.below(12) as usize);
        let mut st = SPlusState::init(&single(Tensor::zeros(&[m, n])), SPlusConfig::default()).unwrap();
        let mom = gaussian(m, n, &mut rng);
        if let Some(LayerState::Standard(l)) = st.layers.get_mut("w") {
            assert!(l.q_l.as_ref().is_none_or(|q| *q == Matrix::identity(m)));
            assert!(l.q_r.as_ref().is_none_or(|q| *q == Matrix::identity(n)));
            l.momentum = mom.clone();
        }
        let u = st.compute_update("w").unwrap();
        exact += usize::from(bits(u.as_slice()) == bits(mom.map(sign).as_slice()));
    }
    verdict(exact == 100, format!("{exact}/100 momenta bit-exact"))
}

fn kronecker_equivalence(_: &mut Suite) -> Verdict {
    let mut rng = CounterRng::new(1003, "acceptance-kron");
    let (mut shampoo, mut splus) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (m, n) = (1 + rng.below(4) as usize, 1 + rng.below(4) as usize);

        let (l, r) = (spd(m, &mut rng), spd(n, &mut rng));
        let mom = gaussian(m, n, &mut rng);
        let mut s =
            Shampoo::new(&single(Tensor::zeros(&[m, n])), ShampooConfig { eps_clamp: 0.0, ..Default::default() })
                .unwrap();
        s.layers.insert(
            "w".into(),
            ShampooLayer::Standard {
                l: Some(l.clone()),
                r: Some(r.clone()),
                l_inv_sqrt: Some(Matrix::identity(m)),
                r_inv_sqrt: Some(Matrix::identity(n)),
                momentum: mom.clone(),
            },
        );
        s.refresh_inverses().unwrap();
        let u = s.compute_update("w").unwrap().to_matrix().unwrap();
        let oracle = sym_power(&kron(&l, &r).unwrap(), -0.5, 0.0).unwrap().matmul(&mom.vec_r()).unwrap();
        shampoo = shampoo.max(u.vec_r().sub(&oracle).unwrap().frobenius());

        let st = trained_state(m, n, &mut rng);
        let layer = dense(&st);
        let q = kron(layer.q_l.as_ref().unwrap(), layer.q_r.as_ref().unwrap()).unwrap();
        let rotated = q.t_matmul(&layer.momentum.vec_r()).unwrap().map(sign);
        let oracle = q.matmul(&rotated).unwrap();
        let u = st.compute_update("w").unwrap();
        splus = splus.max(u.vec_r().sub(&oracle).unwrap().frobenius());
    }
    verdict(shampoo <= 1e-8 && splus <= 1e-9, format!("Shampoo max err {shampoo:.1e}, SPlus max err {splus:.1e}"))
}

fn update_tape(grads: &[Matrix<f64>], c: f64) -> Vec<Matrix<f64>> {
    let (m, n) = grads[0].shape();
    let mut params = single(Tensor::zeros(&[m, n]));
    let mut st = SPlusState::init(&params, SPlusConfig { inverse_every: 10, ..Default::default() }).unwrap();
    grads
        .iter()
        .map(|g| {
            st.step(&mut params, &single(Tensor::from(g.scale(c)))).unwrap();
            st.compute_update("w").unwrap()
        })
        .collect()
}

fn scale_invariance(_: &mut Suite) -> Verdict {
    let mut rng = CounterRng::new(1004, "acceptance-tape");
    let dir = gaussian(6, 5, &mut rng);
    let grads: Vec<_> = (0..200).map(|_| gaussian(6, 5, &mut rng).add(&dir.scale(2.0)).unwrap()).collect();
    let base = update_tape(&grads, 1.0);
    let mut parts = Vec::new();
    let mut pass = true;
    for c in [0.01, 100.0] {
        let other = update_tape(&grads, c);
        let same = base.iter().zip(&other).filter(|(a, b)| bits(a.as_slice()) == bits(b.as_slice())).count();
        let dev = base.iter().zip(&other).map(|(a, b)| a.sub(b).unwrap().max_abs()).fold(0.0, f64::max);
        pass &= same == base.len();
        parts.push(format!("c={c}: {same}/200 steps bit-identical, max |dU| {dev:.1e}"));
    }
    verdict(pass, parts.join("; "))
}

fn max_rel_error(task: &dyn Objective<f64>, params: &ParamMap<f64>, step: u64) -> f64 {
    let batch = task.sample(step);
    let (_, grads) = task.loss_grad(params, &batch).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (name, g) in &grads {
        for i in 0..g.numel() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.get_mut(name).unwrap().as_mut_slice()[i] += delta;
                task.loss_grad(&p, &batch).unwrap().0
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let an = g.as_slice()[i];
            let scale = fd.abs().max(an.abs()).max(1e-6);
            worst = worst.max((fd - an).abs() / scale);
        }
    }
    worst
}

fn gradient_check(_: &mut Suite) -> Verdict {
    let start = Instant::now();
    let mut rng = CounterRng::new(1005, "acceptance-fd");
    let mut worst = 0.0f64;
    let mut configs = 0;
    for act in [Activation::Linear, Activation::Relu, Activation::Tanh] {
        for kind in [TaskKind::LinearRegression, TaskKind::TeacherClassification] {
            for bias in [false, true] {
                let depth = rng.below(4) as usize;
                let spec = TaskSpec {
                    kind,
                    seed: rng.next_u64(),
                    input_dim: 2 + rng.below(5) as usize,
                    output_dim: 2 + rng.below(3) as usize,
                    hidden: (0..depth).map(|_| 2 + rng.below(6) as usize).collect(),
                    activation: act,
                    bias,
                    batch_size: 1 + rng.below(6) as usize,
                    noise: 0.1,
                    val_size: 4,
                    ..Default::default()
                };
                let task = NetTask::<f64>::new(&spec).unwrap();
                worst = worst.max(max_rel_error(&task, &task.init_params(), rng.below(100)));
                configs += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst < 1e-4 && configs >= 10 && secs < 120.0,
        format!("{configs} configs, max rel err {worst:.1e}, {secs:.1}s"),
    )
}

fn whitening(_: &mut Suite) -> Verdict {
    let start = Instant::now();
    let mut rng = CounterRng::new(1006, "acceptance-white");
    let mut worst = 0.0f64;
    for d in [1, 2, 4, 8, 12, 16] {
        // Planted spectrum over four decades on a random basis.
        let g = gaussian(d, d, &mut rng);
        let mut sym = g.add(&g.transpose()).unwrap();
        sym.symmetrize();
        let q = sym_eigh(&sym).unwrap().q;
        let lambda: Vec<f64> = (0..d).map(|_| 10f64.powf(rng.uniform() * 4.0 - 2.0)).collect();
        let mut c = q.matmul(&Matrix::diag(&lambda)).unwrap().matmul_t(&q).unwrap();
        c.symmetrize();
        let dev = whitening_probe(&c, 100_000, &mut rng).unwrap();
        worst = worst.max(dev / (0.05 * d as f64));
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(worst <= 1.0 && secs < 60.0, format!("max deviation / (0.05 d) = {worst:.3}, {secs:.1}s"))
}

fn stability(suite: &mut Suite) -> Verdict {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for name in ["stability_quadratic.conf", "stability_teacher.conf"] {
        let cells = stability_grid(&preset(name), 1, None).unwrap();
        let splus = cells.iter().filter(|c| c.optimizer == "splus" && c.diverged()).count();
        let shampoo =
            cells.iter().filter(|c| c.optimizer == "shampoo" && c.diverged() && c.cache_interval >= 100).count();
        pass &= splus == 0 && shampoo >= 1;
        parts.push(format!("{name}: SPlus {splus} diverged, Shampoo {shampoo} diverged at cache >= 100"));
        suite.records.extend(cells.into_iter().map(|c| c.record));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 1800.0;
    verdict(pass, format!("{}; {secs:.0}s", parts.join("; ")))
}

fn lr_transfer(suite: &mut Suite) -> Verdict {
    let start = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, mode) in [("width_symmetric.conf", ScalingMode::Symmetric), ("width_none.conf", ScalingMode::None)] {
        let cells = width_transfer(&preset(name), 1, None).unwrap();
        let optima = width_optima(&cells);
        let idx: Vec<usize> = optima.iter().filter(|o| o.scaling_mode == mode).map(|o| o.lr_index).collect();
        let spread = idx.iter().max().unwrap() - idx.iter().min().unwrap();
        pass &= match mode {
            ScalingMode::None => spread >= 2,
            _ => spread <= 1,
        };
        parts.push(format!("{mode}: argmin index by width {idx:?}"));
        suite.records.extend(cells.into_iter().map(|c| c.record));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 3600.0;
    verdict(pass, format!("{}; {secs:.0}s", parts.join("; ")))
}

fn averaging(suite: &mut Suite) -> Verdict {
    let mut cfg = preset("averaging_quadratic.conf");
    let base = RunConfig::from_config(&cfg).unwrap();
    let mut top = None;
    for lr in lr_grid_from(&cfg).unwrap() {
        let mut c = base.clone();
        c.optimizer = c.optimizer.with_learning_rate(lr);
        let rec = splus_bench::run(&c, "probe").unwrap();
        if rec.is_completed() {
            top = Some(lr);
        }
        suite.records.push(rec);
    }
    let Some(top) = top else { return verdict(false, "no learning rate in the grid completes") };
    cfg.set("lr", top);
    let records = averaging_compare(&cfg, 1, None).unwrap();
    let mut ok = 0;
    let mut pairs = Vec::new();
    for r in &records {
        let p = r.final_point().unwrap();
        ok += usize::from(r.is_completed() && p.val_loss_eval <= p.val_loss_live);
        pairs.push(format!("{:.3}<={:.3}", p.val_loss_eval, p.val_loss_live));
    }
    let n = records.len();
    suite.records.extend(records);
    verdict(n == 5 && ok == 5, format!("top stable lr {top:.3}: {ok}/{n} seeds eval <= live [{}]", pairs.join(", ")))
}

fn steps_to_sanity(suite: &mut Suite) -> Verdict {
    let mut parts = Vec::new();
    let mut below = true;
    for name in ["stage_quadratic.conf", "stage_teacher.conf"] {
        let rows = stage_eval(&preset(name), 1, None).unwrap();
        let mut table = Vec::new();
        for r in rows.iter().filter(|r| r.optimizer == "splus") {
            below &= r.steps_to.fraction().is_some_and(|f| f < 1.0);
            table.push(format!("stage {} {}", r.stage, r.steps_to));
        }
        parts.push(format!("{name}: SPlus steps-to-Adam [{}]", table.join(", ")));
        suite.records.extend(rows.into_iter().flat_map(|r| r.runs));
    }
    let completed: Vec<&RunRecord> = suite.records.iter().filter(|r| r.is_completed()).collect();
    let short: Vec<&RunRecord> =
        completed.iter().copied().filter(|r| steps_to_baseline(r, r).unwrap() != StepsTo::Fraction(1.0)).collect();
    parts.push(format!(
        "self-comparison 1.0 for {}/{} completed runs{}",
        completed.len() - short.len(),
        completed.len(),
        short.first().map_or(String::new(), |r| format!(
            " (e.g. {} gives {})",
            r.run_id,
            steps_to_baseline(r, r).unwrap()
        ))
    ));
    verdict(below && short.is_empty(), parts.join("; "))
}

fn eval_params_step_one(_: &mut Suite) -> Verdict {
    let mut rng = CounterRng::new(1011, "acceptance-eval1");
    let mut exact = 0;
    for _ in 0..100 {
        let (m, n) = (1 + rng.below(9) as usize, 1 + rng.below(9) as usize);
        let mut params = ParamMap::from([
            ("w".to_string(), Tensor::from(gaussian(m, n, &mut rng))),
            ("b".to_string(), Tensor::vector((0..n).map(|_| rng.normal()).collect())),
        ]);
        let grads: ParamMap<f64> = params
            .iter()
            .map(|(k, v)| {
                (k.clone(), Tensor::new(v.shape().to_vec(), (0..v.numel()).map(|_| rng.normal()).collect()).unwrap())
            })
            .collect();
        let config = SPlusConfig { ema_rate: 0.5 + 0.499 * rng.uniform(), ..Default::default() };
        let mut st = SPlusState::init(&params, config).unwrap();
        st.step(&mut params, &grads).unwrap();
        let eval = st.get_eval_params().unwrap();
        exact += usize::from(params.iter().all(|(k, v)| bits(v.as_slice()) == bits(eval[k].as_slice())));
    }
    verdict(exact == 100, format!("{exact}/100 states bit-exact at step 1"))
}

fn checkpoints(_: &mut Suite) -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut parts = Vec::new();
    let mut pass = true;
    // Shampoo at 1e-2 diverges right after its first refresh, so one case
    // checkpoints a run that has already failed.
    for (opt, lr) in
        [("splus", 1e-2), ("shampoo", 1e-3), ("shampoo", 1e-2), ("adam", 1e-2), ("sgd", 1e-2), ("signsgd", 1e-2)]
    {
        let cfg = ConfigFile::parse(&format!(
            "task = teacher_classification\nhidden = 8, 6\ninput_dim = 5\noutput_dim = 3\noptimizer = {opt}\n\
             lr = {lr}\ntotal_steps = 60\neval_every = 5\n"
        ))
        .unwrap();
        let mut config = RunConfig::from_config(&cfg).unwrap();
        if let Some(every) = config.optimizer.cache_interval() {
            config.optimizer = config.optimizer.with_cache_interval(every.min(7));
        }
        let mut full = Trainer::new(&config, opt).unwrap();
        full.run(None).unwrap();

        let mut first = Trainer::new(&config, opt).unwrap();
        for _ in 0..23 {
            first.advance().unwrap();
        }
        let ck = first.checkpoint();
        let path = dir.path().join(format!("{opt}-{lr}.ckpt"));
        ck.save(&path).unwrap();
        let loaded = Checkpoint::<f64>::load(&path).unwrap();
        let round_trip = loaded.to_bytes().unwrap() == std::fs::read(&path).unwrap()
            && loaded.tensors.iter().all(|(k, v)| bits(v.as_slice()) == bits(ck.tensors[k].as_slice()))
            && loaded.tensors.len() == ck.tensors.len()
            && (loaded.step, loaded.rng_position) == (ck.step, ck.rng_position);

        let mut resumed = Trainer::resume(&config, opt, &loaded, first.record.series.clone()).unwrap();
        resumed.run(None).unwrap();
        let curve = |r: &RunRecord| {
            r.series
                .iter()
                .map(|p| (p.step, p.train_loss.to_bits(), p.val_loss_live.to_bits(), p.val_loss_eval.to_bits()))
                .collect::<Vec<_>>()
        };
        let same_params = resumed.params.iter().all(|(k, v)| bits(v.as_slice()) == bits(full.params[k].as_slice()));
        let same_state = resumed.optimizer.export_state() == full.optimizer.export_state();
        let same_curve = curve(&resumed.record) == curve(&full.record) && resumed.record.status == full.record.status;
        let ok = round_trip && same_params && same_state && same_curve;
        pass &= ok;
        let what = [("file", round_trip), ("params", same_params), ("state", same_state), ("curve", same_curve)]
            .iter()
            .filter(|(_, same)| !same)
            .map(|(w, _)| *w)
            .collect::<Vec<_>>();
        parts.push(format!(
            "{opt}@{lr} ({}) {}",
            full.record.status,
            if ok { "ok".to_string() } else { format!("{} differ", what.join("+")) }
        ));
    }
    verdict(pass, format!("round trip + resume at step 23 of 60: {}", parts.join(", ")))
}

fn memory(_: &mut Suite) -> Verdict {
    let mut checked = 0;
    let mut wrong = Vec::new();
    for (m, n) in [(1, 1), (4, 4), (3, 7), (16, 2), (64, 96), (128, 10)] {
        let params = single(Tensor::zeros(&[m, n]));
        let st = SPlusState::init(&params, SPlusConfig::<f64> { max_dim: 10_000, ..Default::default() }).unwrap();
        let reported = st.stored_floats("w").unwrap();
        // Independent count: the live parameter plus everything the state exports.
        let exported: usize = st.export_state().values().map(Tensor::numel).sum::<usize>() + m * n;
        let want = 3 * m * n + 2 * (m * m + n * n);
        checked += 1;
        if reported != want || exported != want {
            wrong.push(format!("{m}x{n}: reported {reported}, exported {exported}, want {want}"));
        }
    }
    verdict(
        wrong.is_empty(),
        format!(
            "{checked} shapes checked{}",
            if wrong.is_empty() { String::new() } else { format!("; {}", wrong.join("; ")) }
        ),
    )
}

type Criterion = fn(&mut Suite) -> Verdict;

const CRITERIA: &[(u32, &str, Criterion)] = &[
    (1, "norm identities", norm_identities),
    (2, "identity-basis reduction", identity_basis),
    (3, "Kronecker equivalence", kronecker_equivalence),
    (4, "gradient-scale invariance", scale_invariance),
    (5, "backprop vs finite differences", gradient_check),
    (6, "whitening", whitening),
    (7, "stability grid", stability),
    (8, "LR transfer across width", lr_transfer),
    (9, "iterate averaging", averaging),
    (10, "steps-to-baseline sanity", steps_to_sanity),
    (11, "eval params at step 1", eval_params_step_one),
    (12, "checkpoint round trip and resume", checkpoints),
    (13, "memory accounting", memory),
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut suite = Suite::default();
    let mut unexpected = Vec::new();
    println!("acceptance: {} criteria", if wanted.is_empty() { CRITERIA.len() } else { wanted.len() });
    for &(id, name, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let v = check(&mut suite);
        let known = KNOWN_FAILURES.contains(&id);
        let tag = match (v.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {id:>2} {tag:<12} {name}: {} [{:.1}s]", v.detail, start.elapsed().as_secs_f64());
        if !v.pass && !known {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
