//! Acceptance suite. Each test checks one criterion and prints a single
//! `PASS` or `FAIL` line to stdout, outside the test harness capture.
//!
//! The desk-scale criteria share one 10-seed run of every method on
//! `configs/reference.json`.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use podn::detector::{calibrate, decide, Outcome, ScoreSpace, ThresholdSet, Triplet};
use podn::harness::{run_experiment, run_suite, ExperimentConfig, ExperimentRun, Method, SuiteSummary};
use podn::incremental::{distance_weight_init, expand_category, mean_normalized_alpha, WeightInit};
use podn::model::{default_labels, ExpandableNet, ModelConfig};
use podn::numerics::{cross_entropy_mean, finite_diff_grad, relative_error, softmax_rows, Matrix};
use podn::prototypes::{
    distance_backward, distance_classification_loss, distance_matrix, distance_matrix_with,
    prototype_l2_loss, radius_loss, total_loss, LossWeights, PrototypeBank, EPSILON_DIST,
};

const SEEDS: u64 = 10;

fn verdict(criterion: u8, pass: bool, detail: String) {
    let line = format!(
        "{} criterion {criterion:>2}: {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
    assert!(pass, "{line}");
}

fn reference() -> ExperimentConfig {
    serde_json::from_str(include_str!("../../../configs/reference.json")).unwrap()
}

struct Suite {
    runs: Vec<ExperimentRun>,
    summaries: Vec<SuiteSummary>,
    elapsed: Duration,
}

impl Suite {
    fn summary(&self, method: Method) -> &SuiteSummary {
        self.summaries.iter().find(|s| s.method == method).unwrap()
    }

    fn runs(&self, method: Method) -> impl Iterator<Item = &ExperimentRun> {
        self.runs.iter().filter(move |r| r.report.method == method)
    }
}

fn suite() -> &'static Suite {
    static SUITE: OnceLock<Suite> = OnceLock::new();
    SUITE.get_or_init(|| {
        let seeds: Vec<u64> = (0..SEEDS).collect();
        let start = Instant::now();
        let (runs, summaries) = run_suite(&reference(), &Method::ALL, &seeds).unwrap();
        Suite {
            runs,
            summaries,
            elapsed: start.elapsed(),
        }
    })
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::new(rows, cols, data).unwrap()
}

fn bank_of(p: Matrix, r: Vec<f64>) -> PrototypeBank {
    PrototypeBank::from_parts(default_labels(p.rows()), p, r, EPSILON_DIST).unwrap()
}

fn net_of(input: usize, hidden: usize, n: usize, seed: u64) -> ExpandableNet {
    let config = ModelConfig {
        input_dim: input,
        hidden_dims: vec![hidden],
        initial_categories: n,
        seed,
    };
    ExpandableNet::new(config, default_labels(n)).unwrap()
}

/// Worst relative error of each analytic gradient against central differences
/// on one random instance: loss1, loss21, loss22, loss3, total, total with
/// radius backprop.
fn gradient_errors(rng: &mut ChaCha8Rng) -> [f64; 6] {
    const H: f64 = 1e-5;
    let s = rng.random_range(1..=4);
    let n = rng.random_range(2..=4);
    let hidden = rng.random_range(1..=16);
    let input = 3;
    let f = random_matrix(rng, s, n, 1.5);
    let p = random_matrix(rng, n, n, 1.5);
    let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    let y: Vec<usize> = (0..s).map(|_| rng.random_range(0..n)).collect();
    let mf = |x: &[f64]| Matrix::new(s, n, x.to_vec()).unwrap();
    let mp = |x: &[f64]| Matrix::new(n, n, x.to_vec()).unwrap();

    let (_, g1) = cross_entropy_mean(&softmax_rows(&f), &y).unwrap();
    let fd1 = finite_diff_grad(
        |x| cross_entropy_mean(&softmax_rows(&mf(x)), &y).unwrap().0,
        f.as_slice(),
        H,
    );
    let e1 = relative_error(g1.as_slice(), &fd1);

    let g21 = prototype_l2_loss(&f, &p, &y).unwrap();
    let e21 = relative_error(
        g21.d_features.as_slice(),
        &finite_diff_grad(|x| prototype_l2_loss(&mf(x), &p, &y).unwrap().loss, f.as_slice(), H),
    )
    .max(relative_error(
        g21.d_prototypes.as_slice(),
        &finite_diff_grad(|x| prototype_l2_loss(&f, &mp(x), &y).unwrap().loss, p.as_slice(), H),
    ));

    let l22 = |f: &Matrix, p: &Matrix| {
        let d = distance_matrix_with(f, p, EPSILON_DIST).unwrap();
        distance_classification_loss(f, p, &d, &y).unwrap()
    };
    let g22 = l22(&f, &p);
    let e22 = relative_error(
        g22.d_features.as_slice(),
        &finite_diff_grad(|x| l22(&mf(x), &p).loss, f.as_slice(), H),
    )
    .max(relative_error(
        g22.d_prototypes.as_slice(),
        &finite_diff_grad(|x| l22(&f, &mp(x)).loss, p.as_slice(), H),
    ));

    // labels equal to the distance prediction make every row contribute
    let dist = distance_matrix_with(&f, &p, EPSILON_DIST).unwrap();
    let pred = dist.predictions();
    let l3 = |f: &Matrix, p: &Matrix, r: &[f64]| {
        let d = distance_matrix_with(f, p, EPSILON_DIST).unwrap();
        radius_loss(&d, &pred, &pred, r).unwrap().loss
    };
    let g3 = radius_loss(&dist, &pred, &pred, &r).unwrap();
    let (d3f, d3p) = distance_backward(&f, &p, &dist, &g3.d_distance);
    let e3 = relative_error(&g3.d_radii, &finite_diff_grad(|x| l3(&f, &p, x), &r, H))
        .max(relative_error(
            d3f.as_slice(),
            &finite_diff_grad(|x| l3(&mf(x), &p, &r), f.as_slice(), H),
        ))
        .max(relative_error(
            d3p.as_slice(),
            &finite_diff_grad(|x| l3(&f, &mp(x), &r), p.as_slice(), H),
        ));

    let net = net_of(input, hidden, n, rng.random());
    let x = random_matrix(rng, s, input, 1.0);
    let bank = bank_of(p.clone(), r.clone());
    let yd = distance_matrix(&net.forward(&x).unwrap(), &bank)
        .unwrap()
        .predictions();
    let k = net.flatten_params().len();
    let mut flat = net.flatten_params();
    flat.extend_from_slice(p.as_slice());
    flat.extend_from_slice(&r);
    let eval = |v: &[f64], w: &LossWeights, with_loss3: bool| {
        let mut net = net.clone();
        net.set_flat_params(&v[..k]).unwrap();
        let b = bank_of(mp(&v[k..k + n * n]), v[k + n * n..].to_vec());
        let t = total_loss(&net, &b, &x, &yd, w).unwrap().breakdown;
        if with_loss3 {
            t.total
        } else {
            t.total - w.w2 * t.loss3
        }
    };
    let total_error = |w: LossWeights| {
        let analytic = total_loss(&net, &bank, &x, &yd, &w).unwrap().flatten();
        // without radius backprop the distance inside loss3 is held fixed
        let mut fd = finite_diff_grad(|v| eval(v, &w, w.radius_backprop), &flat, H);
        let fd_r = finite_diff_grad(|v| eval(v, &w, true), &flat, H);
        let split = flat.len() - n;
        fd[split..].copy_from_slice(&fd_r[split..]);
        relative_error(&analytic, &fd)
    };
    let et = total_error(LossWeights::default());
    let etb = total_error(LossWeights {
        radius_backprop: true,
        ..LossWeights::default()
    });
    [e1, e21, e22, e3, et, etb]
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = [0.0f64; 6];
    let instances = 25;
    for _ in 0..instances {
        for (w, e) in worst.iter_mut().zip(gradient_errors(&mut rng)) {
            *w = w.max(e);
        }
    }
    let elapsed = start.elapsed();
    let max = worst.iter().copied().fold(0.0, f64::max);
    verdict(
        1,
        max <= 1e-4 && elapsed < Duration::from_secs(10),
        format!(
            "{instances} instances, worst relative error loss1 {:.1e} loss21 {:.1e} loss22 {:.1e} \
             loss3 {:.1e} total {:.1e} total+radius {:.1e} (limit 1e-4), {:.2}s",
            worst[0],
            worst[1],
            worst[2],
            worst[3],
            worst[4],
            worst[5],
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_02_distance_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let s = rng.random_range(1..=32);
        let n = rng.random_range(1..=8);
        let f = random_matrix(&mut rng, s, n, 3.0);
        let p = random_matrix(&mut rng, n, n, 3.0);
        let d = distance_matrix_with(&f, &p, EPSILON_DIST).unwrap();
        for i in 0..s {
            for j in 0..n {
                let mut q = 0.0;
                for k in 0..n {
                    let diff = f.get(i, k) - p.get(j, k);
                    q += diff * diff;
                }
                worst = worst.max((d.values.get(i, j) - 1.0 / (q + 0.001)).abs());
            }
        }
    }
    let p = random_matrix(&mut rng, 4, 4, 2.0);
    let f = Matrix::from_rows(&[p.row(2).to_vec()]).unwrap();
    let at_p = distance_matrix_with(&f, &p, 0.001).unwrap().values.get(0, 2);
    verdict(
        2,
        worst <= 1e-12 && at_p == 1000.0,
        format!("max deviation from double loop {worst:.1e} (limit 1e-12), f = p gives {at_p}"),
    );
}

fn thresholds(triplets: Vec<Triplet>) -> ThresholdSet {
    ThresholdSet {
        space: ScoreSpace::Distance,
        eps_mu: 0.5,
        rho: 0.5,
        categories: default_labels(triplets.len()),
        triplets,
    }
}

#[test]
fn criterion_03_threshold_calibration() {
    let mut ok = true;
    let mut notes = Vec::new();

    // tops {0.8, 1.0, 0.6} with gaps {0.5, 0.7, 0.1}
    let rows = vec![
        vec![
            vec![0.8, 0.3, 0.0],
            vec![1.0, 0.3, 0.1],
            vec![0.6, 0.5, 0.2],
        ],
        vec![vec![0.0, 0.9, 0.2], vec![0.1, 0.7, 0.0]],
        vec![vec![0.0, 0.0, 1.0]],
    ];
    let t = calibrate(&rows, &default_labels(3), ScoreSpace::Distance, 0.5, 0.5).unwrap();
    let eta0 = (0.8 + 1.0 + 0.6) / 3.0;
    let delta0 = 0.5 * ((0.5 + 0.7 + (0.6 - 0.5)) / 3.0);
    ok &= t.triplets[0].accept == eta0 && t.triplets[0].reject == 0.5 * eta0;
    ok &= (t.triplets[0].margin - delta0).abs() <= 1e-15;
    // tops {0.9, 0.7} with gaps {0.7, 0.6}
    ok &= (t.triplets[1].accept - 0.8).abs() <= 1e-15;
    ok &= (t.triplets[1].reject - 0.4).abs() <= 1e-15;
    ok &= (t.triplets[1].margin - 0.5 * 0.65).abs() <= 1e-15;
    notes.push(format!("eta {:.4} mu {:.4}", t.triplets[1].accept, t.triplets[1].reject));

    let gaps = vec![
        vec![vec![1.0, 0.5], vec![0.9, 0.2]],
        vec![vec![0.0, 1.0]],
    ];
    let t = calibrate(&gaps, &default_labels(2), ScoreSpace::Distance, 0.5, 0.5).unwrap();
    ok &= (t.triplets[0].margin - 0.3).abs() <= 1e-15;
    notes.push(format!("delta {:.4}", t.triplets[0].margin));

    // constant top c and second s
    let (c, s) = (7.5, 2.25);
    let rows = vec![vec![vec![c, s]; 4], vec![vec![s, c]; 3]];
    let t = calibrate(&rows, &default_labels(2), ScoreSpace::Distance, 0.3, 0.7).unwrap();
    for tr in &t.triplets {
        ok &= tr.accept == c && tr.reject == 0.3 * c && tr.margin == 0.7 * (c - s);
    }

    let hand = thresholds(vec![
        Triplet {
            accept: 900.0,
            reject: 0.4,
            margin: 0.3,
        },
        Triplet {
            accept: 900.0,
            reject: 0.4,
            margin: 0.3,
        },
    ]);
    ok &= decide(&[1000.0, 0.5], &hand).outcome == Outcome::Accept(0);
    ok &= decide(&[0.1, 0.1], &hand).outcome == Outcome::Unknown;
    let hard = thresholds(vec![
        Triplet {
            accept: 0.8,
            reject: 0.4,
            margin: 0.3,
        },
        Triplet {
            accept: 0.8,
            reject: 0.4,
            margin: 0.3,
        },
    ]);
    ok &= decide(&[0.6, 0.55], &hard).outcome == Outcome::Unknown;
    ok &= decide(&[0.6, 0.1], &hard).outcome == Outcome::Accept(0);

    // partition and monotonicity in the accept thresholds
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut accepted, mut unknown, mut violations) = (0usize, 0usize, 0usize);
    for _ in 0..1000 {
        let n = rng.random_range(2..=6);
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let triplets: Vec<Triplet> = (0..n)
            .map(|_| {
                let accept = rng.random_range(0.0..10.0);
                Triplet {
                    accept,
                    reject: rng.random_range(0.0..=1.0) * accept,
                    margin: rng.random_range(0.0..5.0),
                }
            })
            .collect();
        let set = thresholds(triplets);
        let d = decide(&row, &set);
        match d.outcome {
            Outcome::Accept(c) => {
                ok &= c < n;
                accepted += 1;
            }
            Outcome::Unknown => unknown += 1,
        }
        let mut raised = set.clone();
        for t in &mut raised.triplets {
            t.accept += rng.random_range(0.0..5.0);
        }
        if d.is_unknown() && !decide(&row, &raised).is_unknown() {
            violations += 1;
        }
    }
    ok &= accepted + unknown == 1000 && violations == 0;
    verdict(
        3,
        ok,
        format!(
            "hand triplets match ({}), 1000 random rows: {accepted} accepted + {unknown} unknown, \
             {violations} monotonicity violations",
            notes.join(", ")
        ),
    );
}

#[test]
fn criterion_04_weight_init_algebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_direct, mut worst_sum) = (0.0f64, 0.0f64);
    let mut one_hot_exact = true;
    for _ in 0..200 {
        let n = rng.random_range(1..=8);
        let dim = rng.random_range(1..=12);
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let rows: Vec<Vec<f64>> = (0..rng.random_range(1..=5))
            .map(|_| (0..n).map(|_| rng.random_range(1e-3..1000.0)).collect())
            .collect();
        let alpha = mean_normalized_alpha(&rows).unwrap();
        worst_sum = worst_sum.max((alpha.iter().sum::<f64>() - 1.0).abs());
        let w = distance_weight_init(&alpha, &cols).unwrap();
        for k in 0..dim {
            let mut direct = 0.0;
            for j in 0..n {
                direct += alpha[j] * cols[j][k];
            }
            worst_direct = worst_direct.max((w[k] - direct / n as f64).abs());
        }
        let hot = rng.random_range(0..n);
        let mut one_hot = vec![0.0; n];
        one_hot[hot] = 1.0;
        let w = distance_weight_init(&one_hot, &cols).unwrap();
        one_hot_exact &= w.iter().zip(&cols[hot]).all(|(a, b)| *a == b / n as f64);
    }
    verdict(
        4,
        worst_direct <= 1e-12 && worst_sum <= 1e-9 && one_hot_exact,
        format!(
            "200 instances, max deviation from direct sum {worst_direct:.1e} (limit 1e-12), \
             max |sum(alpha) - 1| {worst_sum:.1e} (limit 1e-9), one-hot exact: {one_hot_exact}"
        ),
    );
}

#[test]
fn criterion_05_expansion_preserves_old_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut changed = 0usize;
    let mut checked = 0usize;
    for (n, init) in [(3, WeightInit::Distance), (4, WeightInit::odn_default())] {
        let mut net = net_of(6, 10, n, rng.random());
        let mut bank = bank_of(random_matrix(&mut rng, n, n, 1.0), vec![0.5; n]);
        let probe = random_matrix(&mut rng, 100, 6, 2.0);
        let before = net.forward(&probe).unwrap();
        let samples = random_matrix(&mut rng, 5, 6, 2.0);
        expand_category(&mut net, &mut bank, "new", &samples, &init).unwrap();
        let after = net.forward(&probe).unwrap();
        for i in 0..100 {
            checked += 1;
            if after.row(i)[..n] != *before.row(i) {
                changed += 1;
            }
        }
    }
    verdict(
        5,
        changed == 0,
        format!("{checked} random inputs over two expansions, {changed} with changed old logits"),
    );
}

#[test]
fn criterion_06_detection_f1() {
    let s = suite();
    let radius = s.summary(Method::PodnRadius).mean_f1.unwrap();
    let podn = s.summary(Method::Podn).mean_f1.unwrap();
    let odn = s.summary(Method::OdnBaseline).mean_f1.unwrap();
    let pass = radius >= 0.90
        && radius - podn >= -0.02
        && podn - odn >= -0.02
        && s.elapsed < Duration::from_secs(300);
    verdict(
        6,
        pass,
        format!(
            "mean F1 over {SEEDS} seeds: podn_radius {radius:.3} (need >= 0.90), podn {podn:.3}, \
             odn_baseline {odn:.3} (gaps >= -0.02), suite {:.1}s",
            s.elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_07_open_set_top1() {
    let s = suite();
    let radius = s.summary(Method::PodnRadius).mean_combined_top1;
    let closed = s.summary(Method::ClosedBaseline).mean_combined_top1;
    let gain = radius - closed;
    verdict(
        7,
        gain >= 0.03 && s.elapsed < Duration::from_secs(600),
        format!(
            "mean combined TOP-1 podn_radius {radius:.4} vs budget-matched closed_baseline \
             {closed:.4}: gain {:+.2} points (need >= +3)",
            100.0 * gain
        ),
    );
}

#[test]
fn criterion_08_label_budget() {
    let s = suite();
    let mut exact = true;
    let mut expansions = 0usize;
    let mut per_seed = Vec::new();
    for run in s.runs(Method::PodnRadius) {
        for (i, rec) in run.iterations.iter().enumerate() {
            let Some(label) = &rec.expansion else { continue };
            expansions += 1;
            let used = run.iterations[..=i]
                .iter()
                .filter(|r| r.oracle.as_deref() == Some(label))
                .count();
            exact &= used == 5;
        }
        if let Some(v) = run.report.budget.labels_per_new_category {
            per_seed.push(v);
        }
    }
    let mean = per_seed.iter().sum::<f64>() / per_seed.len().max(1) as f64;
    verdict(
        8,
        exact && per_seed.len() as u64 == SEEDS && (5.0..=8.0).contains(&mean),
        format!(
            "{expansions} expansions each triggered by exactly 5 labels: {exact}; mean labels per \
             new category {mean:.2} over {} seeds (need [5, 8])",
            per_seed.len()
        ),
    );
}

#[test]
fn criterion_09_separation() {
    let s = suite();
    let runs: Vec<_> = s.runs(Method::PodnRadius).collect();
    let wins = s.summary(Method::PodnRadius).separation_wins;
    let ratio = runs
        .iter()
        .map(|r| r.report.separation.prototype_distance / r.report.separation.mean_feature_distance)
        .sum::<f64>()
        / runs.len() as f64;
    verdict(
        9,
        wins >= 8,
        format!(
            "prototype spread >= mean-feature spread in {wins}/{} seeds (need >= 8), mean ratio {ratio:.4}",
            runs.len()
        ),
    );
}

#[test]
fn criterion_10_determinism() {
    let s = suite();
    let mut identical = 0;
    let mut total = 0;
    for method in Method::ALL {
        let config = reference().with_method(method).with_seed(3);
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        let from_suite = s
            .runs(method)
            .find(|r| r.report.seed == 3)
            .unwrap();
        total += 2;
        identical += usize::from(a == b);
        identical += usize::from(
            serde_json::to_string(&a.report).unwrap() == serde_json::to_string(&from_suite.report).unwrap(),
        );
    }
    verdict(
        10,
        identical == total,
        format!("{identical}/{total} repeated runs bit-identical (sequential and parallel)"),
    );
}
