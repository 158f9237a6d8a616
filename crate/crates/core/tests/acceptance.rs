//! Acceptance suite. One test per criterion; each prints a PASS/FAIL line.
//!
//! Run with `cargo test -p relcka --test acceptance -- --nocapture` to see the lines.

mod common;

use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use relcka::harness::{
    make_blobs, run_seed_sweep, student_objective, train_teacher, BlobConfig, Mode, TeacherBatch,
    TinyNet, TrainConfig,
};
use relcka::io::{decode, encode, read_dump, write_dump, Dtype, Tensor};
use relcka::losses::{
    fcka_loss, inter_lcka_loss, intra_lcka_loss, kd_kl_loss, mimic_mse_loss, patchify, pcka_loss,
    pcka_loss_with, unpatchify, AveragingDim, PatchConfig,
};
use relcka::verify::{self, Fault};
use relcka::{
    cka, cka_gradient, cka_via_gram_cosine, mmd_decomposition, CkaConfig, FeatureMap, IoError,
    Matrix,
};

fn report(id: &str, ok: bool, detail: String) {
    println!(
        "[{}] criterion {id}: {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
}

const CONFIGS: [(&str, CkaConfig); 2] = [
    (
        "centered",
        CkaConfig {
            center: true,
            eps: 1e-30,
        },
    ),
    (
        "uncentered",
        CkaConfig {
            center: false,
            eps: 1e-30,
        },
    ),
];

#[test]
fn criterion_1_gram_cosine_equality() {
    for (label, cfg) in CONFIGS {
        let mut r = rng(1);
        let pairs: Vec<(Matrix, Matrix)> = (0..500)
            .map(|_| {
                (
                    Matrix::random_normal(8, 5, &mut r),
                    Matrix::random_normal(8, 7, &mut r),
                )
            })
            .collect();
        let start = Instant::now();
        let mut worst = 0.0f64;
        for (x, y) in &pairs {
            let d = (cka(x, y, &cfg).unwrap() - cka_via_gram_cosine(x, y, &cfg).unwrap()).abs();
            worst = worst.max(d);
        }
        let elapsed = start.elapsed();
        let ok = worst < 1e-10 && elapsed < Duration::from_secs(1);
        report(
            "1",
            ok,
            format!(
                "{label}: max |cka - gram cosine| = {worst:.3e} (< 1e-10), {elapsed:?} (< 1 s)"
            ),
        );
        assert!(ok);
    }
}

#[test]
fn criterion_2a_pairwise_identity_as_stated() {
    // Required: |cka − (2 − pairwise_term)| < 1e-8. Since cka = 1 − pairwise_term/2
    // exactly, 2 − pairwise_term = 2·cka and the deviation equals cka itself.
    for (label, cfg) in CONFIGS {
        let mut r = rng(2);
        let (mut stated, mut exact) = (0.0f64, 0.0f64);
        for _ in 0..500 {
            let x = Matrix::random_normal(6, 4, &mut r);
            let y = Matrix::random_normal(6, 4, &mut r);
            let d = mmd_decomposition(&x, &y, &cfg).unwrap();
            stated = stated.max((d.cka - (2.0 - d.pairwise_term)).abs());
            exact = exact.max((d.cka - (1.0 - d.pairwise_term / 2.0)).abs());
        }
        let ok = stated < 1e-8;
        report(
            "2 (equality)",
            ok,
            format!(
                "{label}: max |cka - (2 - pairwise)| = {stated:.3e} (< 1e-8); \
                 for reference max |cka - (1 - pairwise/2)| = {exact:.3e}"
            ),
        );
        assert!(exact < 1e-8, "exact identity must hold");
        assert!(
            ok,
            "stated identity cka = 2 - pairwise does not hold (see ledger)"
        );
    }
}

#[test]
fn criterion_2b_jensen_bound() {
    for (label, cfg) in CONFIGS {
        let mut r = rng(3);
        let mut violations = 0;
        let mut worst = f64::NEG_INFINITY;
        for _ in 0..500 {
            let x = Matrix::random_normal(6, 4, &mut r);
            let y = Matrix::random_normal(6, 4, &mut r);
            let d = mmd_decomposition(&x, &y, &cfg).unwrap();
            worst = worst.max(d.cka - d.jensen_bound);
            if d.cka > d.jensen_bound + 1e-10 {
                violations += 1;
            }
        }
        let ok = violations == 0;
        report(
            "2 (bound)",
            ok,
            format!(
                "{label}: cka <= jensen_bound + 1e-10 in {}/500 trials, max gap {worst:.3e}",
                500 - violations
            ),
        );
        assert!(ok);
    }
}

#[test]
fn criterion_3_invariances_and_range() {
    let mut r = rng(4);
    let scales = [1e-3, 1.0, 1e3];
    let (mut orth, mut scale) = (0.0f64, 0.0f64);
    for t in 0..200 {
        let cfg = CONFIGS[t % 2].1;
        let x = Matrix::random_normal(8, 5, &mut r);
        let y = Matrix::random_normal(8, 7, &mut r);
        let base = cka(&x, &y, &cfg).unwrap();
        let q1 = Matrix::random_orthogonal(5, &mut r);
        let q2 = Matrix::random_orthogonal(7, &mut r);
        let rotated = cka(&x.matmul(&q1).unwrap(), &y.matmul(&q2).unwrap(), &cfg).unwrap();
        orth = orth.max((base - rotated).abs());
        let (a, b) = (scales[r.random_range(0..3)], scales[r.random_range(0..3)]);
        scale = scale.max((base - cka(&x.scaled(a), &y.scaled(b), &cfg).unwrap()).abs());
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..500 {
        let cfg = CONFIGS[t % 2].1;
        let n = r.random_range(2..12);
        let x = Matrix::random_normal(n, r.random_range(1..9), &mut r);
        let y = Matrix::random_normal(n, r.random_range(1..9), &mut r);
        let s = cka(&x, &y, &cfg).unwrap();
        lo = lo.min(s);
        hi = hi.max(s);
    }
    let ok = orth < 1e-10 && scale < 1e-10 && lo >= 0.0 && hi <= 1.0 + 1e-12;
    report(
        "3",
        ok,
        format!("orthogonal {orth:.3e}, scale {scale:.3e} (< 1e-10); range [{lo:.3e}, {hi:.15}] within [0, 1+1e-12]"),
    );
    assert!(ok);
}

fn grad_suite<F: FnMut(&mut rand_chacha::ChaCha8Rng, CkaConfig) -> f64>(
    name: &str,
    mut f: F,
) -> f64 {
    let mut r = rng(5 + name.len() as u64);
    (0..50)
        .map(|t| f(&mut r, CONFIGS[t % 2].1))
        .fold(0.0, f64::max)
}

#[test]
fn criterion_4_gradients() {
    let mut results: Vec<(&str, f64)> = Vec::new();

    results.push((
        "cka_gradient",
        grad_suite("cka", |r, cfg| {
            let x = Matrix::random_normal(5, 3, r);
            let y = Matrix::random_normal(5, 4, r);
            let g = cka_gradient(&x, &y, &cfg).unwrap();
            fd_error(
                |v| cka(&Matrix::from_vec(5, 3, v.to_vec()).unwrap(), &y, &cfg).unwrap(),
                x.as_slice(),
                g.as_slice(),
            )
        }),
    ));

    results.push((
        "fcka",
        grad_suite("fcka", |r, cfg| {
            let s = FeatureMap::random_normal(4, 3, 2, 2, r);
            let t = FeatureMap::random_normal(4, 5, 2, 1, r);
            let g = fcka_loss(&s, &t, &cfg).unwrap().grad;
            fd_error(
                |v| fcka_loss(&map_like(&s, v), &t, &cfg).unwrap().value,
                s.as_slice(),
                g.as_slice(),
            )
        }),
    ));

    results.push((
        "intra",
        grad_suite("intra", |r, cfg| {
            let zs = logits(6, 4, r);
            let zt = logits(6, 5, r);
            let g = intra_lcka_loss(&zs, &zt, &cfg).unwrap().grad;
            fd_error(
                |v| {
                    intra_lcka_loss(&logits_like(&zs, v), &zt, &cfg)
                        .unwrap()
                        .value
                },
                zs.as_matrix().as_slice(),
                g.as_matrix().as_slice(),
            )
        }),
    ));

    results.push((
        "inter",
        grad_suite("inter", |r, cfg| {
            let zs = logits(6, 4, r);
            let zt = logits(6, 4, r);
            let g = inter_lcka_loss(&zs, &zt, &cfg).unwrap().grad;
            fd_error(
                |v| {
                    inter_lcka_loss(&logits_like(&zs, v), &zt, &cfg)
                        .unwrap()
                        .value
                },
                zs.as_matrix().as_slice(),
                g.as_matrix().as_slice(),
            )
        }),
    ));

    let pc = PatchConfig::new(2, 2).unwrap();
    results.push((
        "pcka",
        grad_suite("pcka", |r, cfg| {
            let s = FeatureMap::random_normal(2, 3, 4, 4, r);
            let t = FeatureMap::random_normal(2, 3, 4, 4, r);
            let g = pcka_loss(&s, &t, &pc, 10.0, &cfg).unwrap().report.grad;
            fd_error(
                |v| {
                    pcka_loss(&map_like(&s, v), &t, &pc, 10.0, &cfg)
                        .unwrap()
                        .report
                        .value
                },
                s.as_slice(),
                g.as_slice(),
            )
        }),
    ));

    results.push((
        "kd",
        grad_suite("kd", |r, _| {
            let zs = logits(5, 4, r);
            let zt = logits(5, 4, r);
            let g = kd_kl_loss(&zs, &zt, 4.0).unwrap().grad;
            fd_error(
                |v| kd_kl_loss(&logits_like(&zs, v), &zt, 4.0).unwrap().value,
                zs.as_matrix().as_slice(),
                g.as_matrix().as_slice(),
            )
        }),
    ));

    results.push((
        "mimic",
        grad_suite("mimic", |r, _| {
            let s = FeatureMap::random_normal(2, 3, 2, 2, r);
            let t = FeatureMap::random_normal(2, 4, 2, 2, r);
            let proj = Matrix::random_normal(4, 3, r);
            let rep = mimic_mse_loss(&s, &t, &proj).unwrap();
            let e1 = fd_error(
                |v| {
                    mimic_mse_loss(&map_like(&s, v), &t, &proj)
                        .unwrap()
                        .report
                        .value
                },
                s.as_slice(),
                rep.report.grad.as_slice(),
            );
            let e2 = fd_error(
                |v| {
                    mimic_mse_loss(&s, &t, &Matrix::from_vec(4, 3, v.to_vec()).unwrap())
                        .unwrap()
                        .report
                        .value
                },
                proj.as_slice(),
                rep.proj_grad.as_slice(),
            );
            e1.max(e2)
        }),
    ));

    results.push(("harness 2-2-3 rcka", harness_gradient_error()));

    let mut all_ok = true;
    for (name, err) in &results {
        let ok = *err < 1e-4;
        all_ok &= ok;
        report(
            "4",
            ok,
            format!("{name}: max relative FD error {err:.3e} (< 1e-4)"),
        );
    }
    assert!(all_ok);
}

/// Composed RCKA objective on a 2-2-3 student with batch 4, every parameter.
fn harness_gradient_error() -> f64 {
    let mut r = rng(77);
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut seed = 0;
    while checked < 50 {
        seed += 1;
        let student = TinyNet::new(2, 2, 3, seed);
        let teacher = TinyNet::new(2, 4, 3, 10_000 + seed);
        let x = Matrix::random_normal(4, 2, &mut r);
        let y: Vec<usize> = (0..4).map(|_| r.random_range(0..3)).collect();
        let tf = teacher.forward(&x).unwrap();
        let tb = TeacherBatch {
            hidden: tf.hidden,
            logits: tf.logits,
        };
        let cfg = TrainConfig {
            cka_cfg: CONFIGS[checked % 2].1,
            ..TrainConfig::student(Mode::Rcka, 0)
        };
        let (loss, grads, fwd) = student_objective(&student, &x, &y, &tb, &cfg).unwrap();
        // skip instances with a degenerate term or a pre-activation near a ReLU kink
        let near_kink = fwd.pre.as_slice().iter().any(|p| p.abs() < 1e-3);
        if loss.fcka.is_none() || loss.intra.is_none() || loss.inter.is_none() || near_kink {
            continue;
        }
        let err = fd_error(
            |v| {
                let net = student.with_flat(v).unwrap();
                student_objective(&net, &x, &y, &tb, &cfg).unwrap().0.total
            },
            &student.to_flat(),
            &grads.to_flat(),
        );
        worst = worst.max(err);
        checked += 1;
    }
    worst
}

#[test]
fn criterion_5_patching() {
    let mut r = rng(6);
    let mut round_trips = 0;
    for _ in 0..100 {
        let (ph, pw) = (r.random_range(1..4), r.random_range(1..4));
        let f = FeatureMap::random_normal(
            r.random_range(1..4),
            r.random_range(1..4),
            ph * r.random_range(1..4),
            pw * r.random_range(1..4),
            &mut r,
        );
        let pc = PatchConfig::new(ph, pw).unwrap();
        if unpatchify(&patchify(&f, &pc).unwrap()).unwrap() == f {
            round_trips += 1;
        }
    }

    let pc = PatchConfig::new(2, 2).unwrap();
    let mut self_loss = 0.0f64;
    let mut oracle_gap = 0.0f64;
    for t in 0..50 {
        let cfg = CONFIGS[t % 2].1;
        let s = FeatureMap::random_normal(2, 3, 4, 4, &mut r);
        let tm = FeatureMap::random_normal(2, 3, 4, 4, &mut r);
        self_loss = self_loss.max(pcka_loss(&s, &s, &pc, 10.0, &cfg).unwrap().report.value);
        // per-channel slices built directly from indices, not via patchify
        let slice = |f: &FeatureMap, k: usize| {
            let mut m = Matrix::zeros(4, 8);
            for q in 0..4 {
                let (pr, ps) = (q / 2, q % 2);
                for b in 0..2 {
                    for i in 0..2 {
                        for j in 0..2 {
                            m.set(q, b * 4 + i * 2 + j, f.get(b, k, pr * 2 + i, ps * 2 + j));
                        }
                    }
                }
            }
            m
        };
        let oracle = 10.0
            * (0..3)
                .map(|k| 1.0 - brute_cka(&slice(&tm, k), &slice(&s, k), cfg.center))
                .sum::<f64>()
            / 3.0;
        let v = pcka_loss(&s, &tm, &pc, 10.0, &cfg).unwrap().report.value;
        oracle_gap = oracle_gap.max((v - oracle).abs());
    }
    let ok = round_trips == 100 && self_loss < 1e-10 && oracle_gap < 1e-10;
    report(
        "5",
        ok,
        format!("round trips {round_trips}/100 bit-exact; max pcka(f,f) = {self_loss:.3e}; channel-mean vs oracle {oracle_gap:.3e}"),
    );
    assert!(ok);
}

#[test]
fn criterion_6_toy_distillation() {
    let start = Instant::now();
    let data = make_blobs(&BlobConfig::default()).unwrap();
    let teacher = train_teacher(&data, &TrainConfig::teacher(0)).unwrap();
    let seeds: Vec<u64> = (1..=7).collect();
    let base = TrainConfig::student(Mode::Ce, 0);
    let sweep = run_seed_sweep(&teacher, &data, &base, &[Mode::Ce, Mode::Rcka], &seeds).unwrap();
    let elapsed = start.elapsed();

    let ce = sweep.mode(Mode::Ce).unwrap();
    let rcka = sweep.mode(Mode::Rcka).unwrap();
    let rising = sweep
        .reports(Mode::Rcka)
        .iter()
        .filter(|rep| {
            let c = rep.probe_curve();
            c[c.len() - 1] > c[0]
        })
        .count();
    let bounded = sweep
        .runs
        .iter()
        .filter_map(|r| r.result.as_ref().ok())
        .all(|rep| {
            rep.probe_curve()
                .iter()
                .all(|v| (0.0..=1.0 + 1e-12).contains(v))
        });
    let ok = ce.failures == 0
        && rcka.failures == 0
        && rcka.median >= ce.median
        && rising >= 6
        && bounded
        && elapsed < Duration::from_secs(300);
    report(
        "6",
        ok,
        format!(
            "median acc rcka {:.4} >= ce {:.4}; probe CKA rises in {rising}/7 rcka seeds (>= 6); sweep {elapsed:?} (< 5 min)",
            rcka.median, ce.median
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_7_averaging_variants_differ() {
    let mut r = rng(8);
    let pc = PatchConfig::new(2, 2).unwrap();
    let cfg = CkaConfig::default();
    let mut min_gap = f64::INFINITY;
    for _ in 0..20 {
        // student = channel-mixed teacher plus noise
        let t = FeatureMap::random_normal(2, 3, 4, 4, &mut r);
        let mix = Matrix::random_normal(3, 3, &mut r);
        let noise = FeatureMap::random_normal(2, 3, 4, 4, &mut r);
        let mut data = vec![0.0; t.len()];
        for b in 0..2 {
            for k in 0..3 {
                for y in 0..4 {
                    for x in 0..4 {
                        let v: f64 = (0..3).map(|j| mix.get(k, j) * t.get(b, j, y, x)).sum();
                        data[t.index(b, k, y, x)] = v + 0.3 * noise.get(b, k, y, x);
                    }
                }
            }
        }
        let s = map_like(&t, &data);
        let grads: Vec<FeatureMap> = [
            AveragingDim::Channel,
            AveragingDim::Batch,
            AveragingDim::Spatial,
        ]
        .iter()
        .map(|&d| {
            pcka_loss_with(&s, &t, &pc, 10.0, &cfg, d)
                .unwrap()
                .report
                .grad
        })
        .collect();
        for i in 0..3 {
            for j in i + 1..3 {
                let gap = grads[i]
                    .as_slice()
                    .iter()
                    .zip(grads[j].as_slice())
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                min_gap = min_gap.min(gap);
            }
        }
    }
    let ok = min_gap > 1e-6;
    report(
        "7",
        ok,
        format!("min over pairs of max |grad_a - grad_b| = {min_gap:.3e} (> 1e-6)"),
    );
    assert!(ok);
}

#[test]
fn criterion_8_fault_injection() {
    let clean = verify::run(500, 0, Fault::None).unwrap();
    let faulty = verify::run(500, 0, Fault::NegateNumerator).unwrap();
    let named = faulty.first_failure().map(|c| c.name);
    let ok = clean.passed() && named == Some(verify::THEOREM1);
    report(
        "8",
        ok,
        format!(
            "clean suite passes: {}; negated numerator first fails: {named:?}",
            clean.passed()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_9_fdmp_io() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(9);
    let t = Tensor::from(&FeatureMap::random_normal(4, 3, 2, 2, &mut r));
    let path = dir.path().join("f.fdmp");
    write_dump(&t, &path, Dtype::F64).unwrap();
    let round_trip = read_dump(&path).unwrap() == t;

    let good = encode(
        &Tensor::from(&Matrix::random_normal(2, 3, &mut r)),
        Dtype::F64,
    );
    let corrupt = |i: usize, v: u8| {
        let mut b = good.clone();
        b[i] = v;
        b
    };
    let nan = encode(
        &Tensor::new(vec![2], vec![0.0, f64::INFINITY]).unwrap(),
        Dtype::F32,
    );
    type Case = (&'static str, Vec<u8>, fn(&IoError) -> bool);
    let cases: Vec<Case> = vec![
        ("magic", corrupt(3, b'Q'), |e| {
            matches!(e, IoError::BadMagic { .. })
        }),
        ("version", corrupt(4, 9), |e| {
            matches!(e, IoError::BadVersion(9))
        }),
        ("dtype", corrupt(8, 2), |e| {
            matches!(e, IoError::BadDtype(2))
        }),
        ("ndim", corrupt(9, 0), |e| matches!(e, IoError::BadNdim(0))),
        ("length", good[..good.len() - 1].to_vec(), |e| {
            matches!(e, IoError::LengthMismatch { .. })
        }),
        ("non-finite", nan, |e| {
            matches!(e, IoError::NonFinite { index: 1 })
        }),
    ];
    let mut distinct = 0;
    for (name, bytes, expect) in &cases {
        let p = dir.path().join(format!("{name}.fdmp"));
        std::fs::write(&p, bytes).unwrap();
        let err = read_dump(&p).unwrap_err();
        if expect(&err) {
            distinct += 1;
        } else {
            println!("  {name}: unexpected {err}");
        }
        assert!(decode(bytes, false).is_err());
    }
    let ok = round_trip && distinct == cases.len();
    report("9", ok, format!("f64 round trip exact: {round_trip}; {distinct}/6 malformed classes give their distinct error"));
    assert!(ok);
}
