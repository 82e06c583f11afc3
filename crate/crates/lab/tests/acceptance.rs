//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.
//!
//! Select criteria by number: `cargo test --test acceptance -- 2 9`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use mest_core::data::{synth, LabeledDataset, Split};
use mest_core::forgetting::ForgettingLog;
use mest_core::kernels::{matrix_reorder, spmm, spmm_backward, spmm_reordered, KernelConfig};
use mest_core::mutation::{Action, MutationMode, MutationSchedule, RateBasis};
use mest_core::nn::{fd_check, FeatureShape, LayerSpec, Model};
use mest_core::rng::{stream, Purpose};
use mest_core::sparsity::{footprint_bits, random_mask, Accounting, BitWidths, CompressedLayer, FootprintMode, LayerShape, Scheme};
use mest_core::train::{RunConfig, Trainer, TrainingState};
use mest_core::Tensor;
use mest_lab::bench::{bench, BenchOptions};
use mest_lab::cli::load_config;
use mest_lab::run::{run, RunOptions, Summary};
use rand::seq::IndexedRandom;
use rand::Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).expect("scratch dir");
    dir
}

/// Kept count at sparsity `s`, rounded half up.
fn kept(s: f64, n: usize) -> usize {
    ((1.0 - s) * n as f64 + 0.5 + 1e-9).floor() as usize
}

// 1 -------------------------------------------------------------------------

fn random_net(rng: &mut impl Rng, scheme: Scheme) -> (Model, Tensor, Vec<usize>) {
    let c = rng.random_range(1..=2);
    let side = rng.random_range(5..=7);
    let f = 4 * rng.random_range(1..=2);
    let classes = 4;
    let shape = FeatureShape::new(c, side, side);
    let layers = vec![
        LayerSpec::conv(f, c, 3, 1),
        LayerSpec::Relu,
        LayerSpec::fc(f * side * side, classes),
        LayerSpec::SoftmaxXent,
    ];
    let mut m = Model::new(shape, layers).expect("model");
    m.init(rng.random());
    let shapes = m.param_shapes();
    for (i, sh) in shapes.iter().enumerate() {
        // pattern needs 3x3 kernels; the fc layer stays unstructured
        let sc = if scheme == Scheme::Pattern && sh.kernel != 3 { Scheme::Unstructured } else { scheme };
        let lo = sc.min_sparsity().max(0.3);
        let s = rng.random_range(lo..0.8);
        let mask = random_mask(*sh, sc, s, rng.random()).expect("mask");
        m.sparsify(i, &mask).expect("sparsify");
    }
    let batch = 3;
    let x = Tensor::from_fn(&[c, batch, side, side], |_| rng.random_range(-1.0..1.0));
    let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    (m, x, labels)
}

fn c1_gradients() -> Verdict {
    let t = Instant::now();
    let schemes = [Scheme::Unstructured, Scheme::Channel, Scheme::DEFAULT_BLOCK, Scheme::Pattern];
    let mut rng = stream(1, Purpose::Test, 1, 0);
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let (m, x, labels) = random_net(&mut rng, schemes[i % 4]);
        let r = fd_check(&m, &x, &labels, 1e-6).expect("fd check");
        worst = worst.max(r.max_rel_error);
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(worst <= 1e-4 && secs < 60.0, format!("20 nets, max relative error {worst:.3e}, {secs:.1}s"))
}

// 2 and 3 -----------------------------------------------------------------

fn synth_config(mode: MutationMode, s: f64) -> RunConfig {
    let mut cfg = load_config(&repo().join("configs/synth-em.json")).expect("synth config");
    cfg.sparsity = s;
    cfg.epochs = 40;
    cfg.checkpoint_every = 0;
    cfg.mutation = MutationSchedule {
        mode,
        p_milestones: vec![(0, 0.04), (20, 0.02)],
        interval: 4,
        stop: 32,
        end: 40,
        lambda: 0.01,
        rate_basis: RateBasis::Absolute,
    };
    cfg
}

fn synth_sets(cfg: &RunConfig) -> (LabeledDataset, LabeledDataset) {
    let (shape, classes) = cfg.dataset.geometry();
    let s = cfg.dataset.synth;
    (
        synth(s.train, classes, cfg.seed, shape, Split::Train).unwrap(),
        synth(s.test, classes, cfg.seed, shape, Split::Test).unwrap(),
    )
}

fn train_all(cfg: &RunConfig, train: &LabeledDataset, test: &LabeledDataset) -> (Vec<LayerShape>, Vec<Option<f64>>, TrainingState) {
    let t = Trainer::new(cfg, train, test).unwrap();
    let mut st = t.init_state().unwrap();
    while st.epoch < cfg.epochs {
        t.run_epoch(&mut st).unwrap();
    }
    (st.model.param_shapes(), t.targets().to_vec(), st)
}

/// Configured rate at `tau` from the milestones.
fn p_of(m: &MutationSchedule, tau: usize) -> f64 {
    let mut p = 0.0;
    for &(e, v) in &m.p_milestones {
        if e <= tau {
            p = v;
        }
    }
    p
}

fn c2_hard_bound() -> Verdict {
    let mut violations = Vec::new();
    let mut checks = 0;
    for s in [0.8, 0.9, 0.95] {
        let cfg = synth_config(MutationMode::Em, s);
        let (train, test) = synth_sets(&cfg);
        let (shapes, targets, st) = train_all(&cfg, &train, &test);
        for m in &st.history {
            for (l, (&nnz, t)) in m.layer_nnz.iter().zip(&targets).enumerate() {
                if let Some(sl) = t {
                    checks += 1;
                    if nnz != kept(*sl, shapes[l].weights()) {
                        violations.push(format!("s={s} epoch {} layer {l}: {nnz}", m.epoch));
                    }
                }
            }
        }
        for e in &st.mutations {
            let sl = targets[e.param].expect("mutated layers are sparse");
            let n = shapes[e.param].weights();
            let expect = match e.action {
                Action::RemoveTo { .. } => kept(sl + p_of(&cfg.mutation, e.epoch), n),
                Action::GrowTo { .. } => kept(sl, n),
            };
            checks += 1;
            if e.nnz > kept(sl, n) || e.nnz != expect {
                violations.push(format!("s={s} event {:?}", e));
            }
        }
    }
    verdict(violations.is_empty(), format!("{checks} checks, {} violations {:?}", violations.len(), violations.first()))
}

fn c3_soft_bound() -> Verdict {
    let mut violations = Vec::new();
    let mut checks = 0;
    for s in [0.8, 0.9, 0.95] {
        let cfg = synth_config(MutationMode::EmSoft, s);
        let m = &cfg.mutation;
        let (train, test) = synth_sets(&cfg);
        let (shapes, targets, st) = train_all(&cfg, &train, &test);
        let window = |tau: usize| if tau < m.stop { p_of(m, tau - tau % m.interval) } else { 0.0 };
        for h in &st.history {
            for (l, (&nnz, t)) in h.layer_nnz.iter().zip(&targets).enumerate() {
                if let Some(sl) = t {
                    checks += 1;
                    let want = kept(sl - window(h.epoch), shapes[l].weights());
                    if nnz != want {
                        violations.push(format!("s={s} epoch {} layer {l}: {nnz} != {want}", h.epoch));
                    }
                }
            }
        }
        for e in &st.mutations {
            let sl = targets[e.param].unwrap();
            checks += 1;
            if e.nnz > kept(sl - window(e.epoch), shapes[e.param].weights()) {
                violations.push(format!("s={s} event {:?}", e));
            }
        }
        let last = st.history.last().unwrap();
        for (l, (&nnz, t)) in last.layer_nnz.iter().zip(&targets).enumerate() {
            if let Some(sl) = t {
                checks += 1;
                if nnz != kept(*sl, shapes[l].weights()) {
                    violations.push(format!("s={s} final layer {l}: {nnz}"));
                }
            }
        }
    }
    verdict(violations.is_empty(), format!("{checks} checks, {} violations {:?}", violations.len(), violations.first()))
}

// 4 -------------------------------------------------------------------------

fn c4_footprint() -> Verdict {
    let widths = BitWidths { weight: 32, index: 16 };
    let mut rng = stream(4, Purpose::Test, 0, 0);
    let mut mismatches = 0;
    let mut total = 0;
    for scheme in [Scheme::Unstructured, Scheme::Channel, Scheme::DEFAULT_BLOCK, Scheme::Pattern] {
        for _ in 0..100 {
            let shape = LayerShape::new(4 * rng.random_range(1..=8), rng.random_range(1..=16), 3);
            let s = rng.random_range(scheme.min_sparsity()..0.99);
            let mask = random_mask(shape, scheme, s, rng.random()).unwrap();
            let weights: Vec<f64> = (0..shape.weights()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let cl = CompressedLayer::encode(&weights, &mask, 32, 16).unwrap();
            let measured = (cl.to_bytes().len() - cl.metadata_bytes()) as f64 * 8.0;
            let gradients = cl.nnz() as f64 * 32.0;
            let predicted =
                footprint_bits(&[shape], FootprintMode::for_scheme(scheme), s, widths, Accounting::Exact).unwrap().total;
            total += 1;
            if predicted != measured + gradients {
                mismatches += 1;
            }
        }
    }
    verdict(mismatches == 0, format!("{total} masks, {mismatches} mismatches"))
}

// 5 -------------------------------------------------------------------------

fn c5_forgetting() -> Verdict {
    let mut rng = stream(5, Purpose::Test, 0, 0);
    let mut bad = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..40);
        let epochs = rng.random_range(1..20);
        let bias = rng.random_range(0.1..0.9);
        let hist: Vec<Vec<bool>> = (0..epochs).map(|_| (0..n).map(|_| rng.random_bool(bias)).collect()).collect();
        let mut log = ForgettingLog::new(n);
        for e in &hist {
            log.record_epoch(e).unwrap();
        }
        let th = rng.random_range(-1..4);
        for i in 0..n {
            // brute force: the state before the first epoch counts as incorrect
            let mut prev = false;
            let (mut f, mut l, mut ever) = (0u32, 0u32, false);
            for e in &hist {
                let c = e[i];
                f += (prev && !c) as u32;
                l += (!prev && c) as u32;
                ever |= c;
                prev = c;
            }
            let st = &log.stats()[i];
            let unforgettable = ever && f == 0;
            let removed = th >= 0 && ever && f as i64 <= th;
            if st.forgets != f || st.learns != l || st.unforgettable() != unforgettable || log.removes(i, th) != removed
            {
                bad += 1;
            }
        }
        let brute: Vec<usize> =
            (0..n).filter(|&i| hist.iter().any(|e| e[i]) && hist.windows(2).all(|w| !(w[0][i] && !w[1][i]))).collect();
        if log.unforgettable_set() != brute {
            bad += 1;
        }
    }
    verdict(bad == 0, format!("1000 histories, {bad} disagreements"))
}

// 6 -------------------------------------------------------------------------

/// Dense reference for `W X` and its gradients, with per-element error
/// scales `sum |w| |x|`.
struct Reference {
    out: Vec<f64>,
    out_scale: Vec<f64>,
    dx: Vec<f64>,
    dx_scale: Vec<f64>,
    dw: Vec<f64>,
    dw_scale: Vec<f64>,
}

fn reference(w: &[f64], rows: usize, cols: usize, x: &[f64], d: &[f64], p: usize) -> Reference {
    let mut r = Reference {
        out: vec![0.0; rows * p],
        out_scale: vec![0.0; rows * p],
        dx: vec![0.0; cols * p],
        dx_scale: vec![0.0; cols * p],
        dw: vec![0.0; rows * cols],
        dw_scale: vec![0.0; rows * cols],
    };
    for i in 0..rows {
        for c in 0..cols {
            let wv = w[i * cols + c];
            for j in 0..p {
                r.out[i * p + j] += wv * x[c * p + j];
                r.out_scale[i * p + j] += (wv * x[c * p + j]).abs();
                r.dx[c * p + j] += wv * d[i * p + j];
                r.dx_scale[c * p + j] += (wv * d[i * p + j]).abs();
                r.dw[i * cols + c] += d[i * p + j] * x[c * p + j];
                r.dw_scale[i * cols + c] += (d[i * p + j] * x[c * p + j]).abs();
            }
        }
    }
    r
}

fn max_rel(got: &[f64], want: &[f64], scale: &[f64]) -> f64 {
    got.iter().zip(want).zip(scale).map(|((g, w), s)| (g - w).abs() / s.max(1e-300)).fold(0.0, f64::max)
}

fn c6_kernels() -> Verdict {
    let mut rng = stream(6, Purpose::Test, 0, 0);
    let mut worst: f64 = 0.0;
    let mut reorder_ok = true;
    let mut cases = 0;
    let mut skipped = 0;
    for scheme in [Scheme::Unstructured, Scheme::Channel, Scheme::DEFAULT_BLOCK, Scheme::Pattern] {
        for s in [0.0, 0.5, 0.9, 0.98] {
            if s < scheme.min_sparsity() {
                skipped += 1;
                continue;
            }
            for _ in 0..10 {
                let shape = LayerShape::new(4 * rng.random_range(1..=6), rng.random_range(1..=12), 3);
                let p = rng.random_range(1..=40);
                let cfg = KernelConfig {
                    tile_rows: rng.random_range(1..=8),
                    tile_cols: rng.random_range(1..=48),
                    unroll: *[1, 2, 4].choose(&mut rng).unwrap(),
                    reorder: false,
                };
                let mask = random_mask(shape, scheme, s, rng.random()).unwrap();
                let dense: Vec<f64> = (0..shape.weights()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let cl = CompressedLayer::encode(&dense, &mask, 64, 32).unwrap();
                let (wt, _) = cl.decode();
                let (rows, cols) = (shape.rows(), shape.cols());
                let x: Vec<f64> = (0..cols * p).map(|_| rng.random_range(-1.0..1.0)).collect();
                let d: Vec<f64> = (0..rows * p).map(|_| rng.random_range(-1.0..1.0)).collect();
                let r = reference(wt.data(), rows, cols, &x, &d, p);
                let out = spmm(&cl, &x, p, None, &cfg).unwrap();
                let g = spmm_backward(&cl, &d, &x, p, &cfg).unwrap();
                let mut dw = vec![0.0; rows * cols];
                cl.scatter(&g.weights, &mut dw);
                let dw_ref: Vec<f64> = r.dw.iter().zip(mask.bits()).map(|(&v, &b)| if b { v } else { 0.0 }).collect();
                worst = worst
                    .max(max_rel(&out, &r.out, &r.out_scale))
                    .max(max_rel(&g.input, &r.dx, &r.dx_scale))
                    .max(max_rel(&dw, &dw_ref, &r.dw_scale));
                let (order, re) = matrix_reorder(&cl);
                let out_re = spmm_reordered(&re, &order, &x, p, None, &KernelConfig { reorder: true, ..cfg }).unwrap();
                reorder_ok &= out_re == out;
                cases += 1;
            }
        }
    }
    verdict(
        worst <= 1e-6 && reorder_ok,
        format!(
            "{cases} cases ({skipped} scheme/sparsity pairs below the pattern minimum), max relative error {worst:.3e}, reorder exact: {reorder_ok}"
        ),
    )
}

// 7 and 8 -------------------------------------------------------------------

const SEEDS: [u64; 3] = [1, 2, 3];

struct Mnist {
    runs: Vec<(String, u64, Summary)>,
    seconds: f64,
    error: Option<String>,
}

impl Mnist {
    fn mean(&self, name: &str) -> f64 {
        let v: Vec<f64> = self.runs.iter().filter(|r| r.0 == name).map(|r| r.2.final_test_acc).collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    fn of<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Summary> + 'a {
        self.runs.iter().filter(move |r| r.0 == name).map(|r| &r.2)
    }
}

fn mnist_variants() -> Vec<(&'static str, RunConfig)> {
    let base = load_config(&repo().join("configs/mnist-tiny-em.json")).expect("mnist config");
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    vec![
        (
            "dense",
            with(&|c| {
                c.sparsity = 0.0;
                c.dense_layers = vec![0, 1, 2, 3];
                c.mutation = MutationSchedule::static_mask(c.epochs);
            }),
        ),
        ("em-0.9", base.clone()),
        ("de-0.9", with(&|c| c.data_efficiency = mest_core::train::DataEfficiency { enabled: true, e1: None, th: 0 })),
        ("em-0.98", with(&|c| c.sparsity = 0.98)),
        (
            "ems-0.98",
            with(&|c| {
                c.sparsity = 0.98;
                c.mutation.mode = MutationMode::EmSoft;
            }),
        ),
        (
            "vanilla-0.98",
            with(&|c| {
                c.sparsity = 0.98;
                c.mutation.mode = MutationMode::Vanilla;
            }),
        ),
        ("em-0.95-lambda0.01", with(&|c| c.sparsity = 0.95)),
        (
            "em-0.95-lambda0",
            with(&|c| {
                c.sparsity = 0.95;
                c.mutation.lambda = 0.0;
            }),
        ),
    ]
}

fn mnist_runs() -> Mnist {
    let data = repo().join("data");
    let mut out = Mnist { runs: Vec::new(), seconds: 0.0, error: None };
    if !data.join("mnist/train-images-idx3-ubyte").is_file() {
        out.error = Some(format!("MNIST files missing under {}; run scripts/fetch_mnist_subset.py", data.display()));
        return out;
    }
    let t = Instant::now();
    let root = scratch("mnist");
    for (name, cfg) in mnist_variants() {
        for seed in SEEDS {
            let mut cfg = cfg.clone();
            cfg.seed = seed;
            let dir = root.join(format!("{name}-seed{seed}"));
            let opts = RunOptions { out_dir: dir, data_root: data.clone(), resume: None, stop_after: None, quiet: true };
            match run(cfg, &opts) {
                Ok(o) => {
                    println!("    {name} seed {seed}: final test accuracy {:.4}", o.summary.final_test_acc);
                    out.runs.push((name.to_string(), seed, o.summary));
                }
                Err(e) => {
                    out.error = Some(format!("{name} seed {seed}: {e}"));
                    return out;
                }
            }
        }
    }
    out.seconds = t.elapsed().as_secs_f64();
    out
}

fn c7_trends(m: &Mnist) -> Verdict {
    if let Some(e) = &m.error {
        return verdict(false, e.clone());
    }
    let pp = |a: f64| a * 100.0;
    let (dense, em90) = (m.mean("dense"), m.mean("em-0.9"));
    let a = em90 >= dense - 0.010 - 1e-12;
    let (ems, em, van) = (m.mean("ems-0.98"), m.mean("em-0.98"), m.mean("vanilla-0.98"));
    let b = ems >= em - 1e-12 && em >= van - 1e-12;
    let (l1, l0) = (m.mean("em-0.95-lambda0.01"), m.mean("em-0.95-lambda0"));
    let c_flag = l1 < l0 - 0.003 - 1e-12;
    let c_note = if l1 >= l0 - 1e-12 {
        "holds"
    } else if c_flag {
        "FLAG: violated by more than 0.3 pp"
    } else {
        "violated by at most 0.3 pp"
    };
    let fast = m.seconds < 1800.0;
    verdict(
        a && b && fast,
        format!(
            "(a) EM s=0.9 {:.2}% vs dense {:.2}%: {}; (b) s=0.98 EM&S {:.2}% / EM {:.2}% / vanilla {:.2}%: {}; \
             (c) s=0.95 lambda 0.01 {:.2}% vs 0 {:.2}%: {}; {} MNIST runs in {:.0}s",
            pp(em90),
            pp(dense),
            if a { "ok" } else { "more than 1.0 pp below" },
            pp(ems),
            pp(em),
            pp(van),
            if b { "ordered" } else { "not ordered" },
            pp(l1),
            pp(l0),
            c_note,
            m.runs.len(),
            m.seconds
        ),
    )
}

fn c8_data_efficiency(m: &Mnist) -> Verdict {
    if let Some(e) = &m.error {
        return verdict(false, e.clone());
    }
    let (de, full) = (m.mean("de-0.9"), m.mean("em-0.9"));
    let close = (de - full).abs() <= 0.003 + 1e-12;
    let mut faster = true;
    let mut phases = Vec::new();
    let mut removed = Vec::new();
    for s in m.of("de-0.9") {
        let (p1, p2) = (s.phase1_epoch_seconds.unwrap_or(f64::NAN), s.phase2_epoch_seconds.unwrap_or(f64::NAN));
        faster &= p2 < p1;
        phases.push(format!("{p1:.2}s -> {p2:.2}s"));
        removed.push(format!("{:.1}%", s.removed_fraction * 100.0));
    }
    verdict(
        close && faster,
        format!(
            "DE {:.2}% vs full data {:.2}% (diff {:+.2} pp); removed {}; epoch time {}",
            de * 100.0,
            full * 100.0,
            (de - full) * 100.0,
            removed.join(", "),
            phases.join(", ")
        ),
    )
}

// 9 -------------------------------------------------------------------------

fn c9_determinism() -> Verdict {
    let mut cfg = load_config(&repo().join("configs/synth-em.json")).expect("synth config");
    cfg.mutation.mode = MutationMode::EmSoft;
    cfg.precision = mest_core::train::Precision::F32;
    // enough classes that some examples are forgotten and survive compression
    cfg.dataset.synth.classes = 16;
    cfg.data_efficiency = mest_core::train::DataEfficiency { enabled: true, e1: Some(2), th: 0 };
    cfg.checkpoint_every = 1;
    let go = |name: &str, resume: Option<PathBuf>| {
        let dir = scratch(name);
        let opts = RunOptions { out_dir: dir.clone(), data_root: repo().join("data"), resume, stop_after: None, quiet: true };
        run(cfg.clone(), &opts).expect("run");
        dir
    };
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).expect("artifact");
    let a = go("det-a", None);
    let b = go("det-b", None);
    let mut problems = Vec::new();
    for f in ["metrics.csv", "final.ckpt", "forgetting.csv", "mutations.csv"] {
        if read(&a, f) != read(&b, f) {
            problems.push(format!("repeat differs in {f}"));
        }
    }
    for k in 1..cfg.epochs {
        let ck = format!("epoch-{k:04}.ckpt");
        if read(&a, &ck) != read(&b, &ck) {
            problems.push(format!("repeat differs in {ck}"));
        }
        let r = go(&format!("det-resume-{k}"), Some(a.join(&ck)));
        for f in ["metrics.csv", "final.ckpt", "forgetting.csv", "mutations.csv"] {
            if read(&a, f) != read(&r, f) {
                problems.push(format!("resume from epoch {k} differs in {f}"));
            }
        }
    }
    verdict(
        problems.is_empty(),
        format!("2 repeats, {} resumes, {} differences {:?}", cfg.epochs - 1, problems.len(), problems.first()),
    )
}

// 10 ------------------------------------------------------------------------

fn c10_bench() -> Verdict {
    let o = BenchOptions::reference();
    let r = match bench(&o) {
        Ok(r) => r,
        Err(e) => return verdict(false, e.to_string()),
    };
    let mut missing = Vec::new();
    for sc in &o.schemes {
        for &s in &o.sparsities {
            let measured = r.points.iter().any(|p| p.scheme == sc.name() && p.sparsity == s);
            // only points the scheme cannot represent may be skipped
            let skipped = s < sc.min_sparsity() && r.skipped.iter().any(|k| k.scheme == sc.name() && k.sparsity == s);
            if !measured && !skipped {
                missing.push(format!("{}@{s}", sc.name()));
            }
        }
    }
    let positive = r.points.iter().all(|p| p.fwd_us > 0.0 && p.bwd_us > 0.0);
    let control = r.control.accel;
    let at = |name: &str| r.points.iter().find(|p| p.scheme == name && p.sparsity == 0.9).map_or(f64::NAN, |p| p.accel);
    let _ = mest_lab::bench::write_outputs(&r, &scratch("bench"));
    verdict(
        missing.is_empty() && positive && (0.95..=1.05).contains(&control),
        format!(
            "{} points, {} skipped, missing {:?}; dense control {:.3}; at s=0.9: unstructured {:.2}x, channel {:.2}x, block {:.2}x, pattern {:.2}x",
            r.points.len(),
            r.skipped.len(),
            missing,
            control,
            at("unstructured"),
            at("channel"),
            at("block"),
            at("pattern")
        ),
    )
}

fn main() {
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let on = |n: usize| wanted.is_empty() || wanted.contains(&n);
    let mut results: Vec<(usize, &str, Verdict)> = Vec::new();
    let mut check = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        if on(n) {
            let t = Instant::now();
            let v = f();
            println!(
                "criterion {n:>2} {:<28} {} ({:.1}s) {}",
                name,
                if v.pass { "PASS" } else { "FAIL" },
                t.elapsed().as_secs_f64(),
                v.detail
            );
            results.push((n, name, v));
        }
    };
    check(1, "gradient correctness", &mut c1_gradients);
    check(2, "hard memory bound", &mut c2_hard_bound);
    check(3, "soft memory bound", &mut c3_soft_bound);
    check(4, "footprint exactness", &mut c4_footprint);
    check(5, "forgetting oracle", &mut c5_forgetting);
    check(6, "kernel equivalence", &mut c6_kernels);
    if on(7) || on(8) {
        let m = mnist_runs();
        check(7, "desk-scale trends", &mut || c7_trends(&m));
        check(8, "data-efficiency neutrality", &mut || c8_data_efficiency(&m));
    }
    check(9, "determinism and resume", &mut c9_determinism);
    check(10, "bench harness", &mut c10_bench);
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {} of {} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failed: {failed:?}");
        std::process::exit(1);
    }
}
