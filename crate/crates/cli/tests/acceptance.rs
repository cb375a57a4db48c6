//! End-to-end acceptance checks, run in order with one `PASS`/`FAIL` line
//! per check. Exits nonzero if any check fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;
use sfod_core::backends::{Detector, Target, ToyDetector};
use sfod_core::corrupt::{
    corrupt_image, generate_dataset, probe_images, CorruptionKind, CorruptionSpec, EntryStatus, SeverityTable,
};
use sfod_core::ema::EmaState;
use sfod_core::eval::{average_precision, evaluate, ApVariant, EvalConfig, GtObject};
use sfod_core::geometry::{rotated_iou, OrientedBox};
use sfod_core::imaging::psnr;
use sfod_core::pipeline::{lambda_sweep_seeds, run_seed, ExperimentConfig, Method};
use sfod_core::pseudo_label::{cga_refine_detailed, ClassScores, Patch, PseudoLabel};
use sfod_core::rng::{stream, StreamRng};
use sfod_core::tensor::{ParamSet, Tensor};

type Outcome = Result<String, String>;

fn rng(name: &str) -> StreamRng {
    stream(2024, &["acceptance".into(), name.into()])
}

fn random_box(r: &mut StreamRng, span: f64) -> OrientedBox {
    let theta = r.random_range(-std::f64::consts::FRAC_PI_2..std::f64::consts::FRAC_PI_2);
    OrientedBox::new(
        r.random_range(0.0..span),
        r.random_range(0.0..span),
        r.random_range(1.0..span / 2.0),
        r.random_range(1.0..span / 2.0),
        theta,
    )
    .unwrap()
}

fn corners(b: &OrientedBox) -> [(f64, f64); 4] {
    let (s, c) = b.theta.sin_cos();
    [(-0.5, -0.5), (0.5, -0.5), (0.5, 0.5), (-0.5, 0.5)].map(|(u, v)| {
        let (x, y) = (u * b.w, v * b.h);
        (b.cx + x * c - y * s, b.cy + x * s + y * c)
    })
}

/// x-extent of a convex polygon along the horizontal line at `y`.
fn row_span(poly: &[(f64, f64); 4], y: f64) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..4 {
        let (a, b) = (poly[i], poly[(i + 1) % 4]);
        if (a.1 - y) * (b.1 - y) > 0.0 || a.1 == b.1 {
            continue;
        }
        let x = a.0 + (y - a.1) / (b.1 - a.1) * (b.0 - a.0);
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo <= hi).then_some((lo, hi))
}

/// Grid points `x0 + (i + ½)·dx`, `i < n`, inside `[lo, hi]`.
fn cells_in(span: Option<(f64, f64)>, x0: f64, dx: f64, n: usize) -> (i64, i64) {
    match span {
        None => (0, -1),
        Some((lo, hi)) => {
            let first = ((lo - x0) / dx - 0.5).ceil().max(0.0) as i64;
            let last = ((hi - x0) / dx - 0.5).floor().min(n as f64 - 1.0) as i64;
            (first, last)
        }
    }
}

/// IoU by counting the centres of an `n × n` grid laid over both boxes.
fn raster_iou(a: &OrientedBox, b: &OrientedBox, n: usize) -> f64 {
    let (pa, pb) = (corners(a), corners(b));
    let all: Vec<(f64, f64)> = pa.iter().chain(&pb).copied().collect();
    let x0 = all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x1 = all.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let y0 = all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y1 = all.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (dx, dy) = ((x1 - x0) / n as f64, (y1 - y0) / n as f64);
    let (mut ca, mut cb, mut both) = (0i64, 0i64, 0i64);
    for j in 0..n {
        let y = y0 + (j as f64 + 0.5) * dy;
        let (a0, a1) = cells_in(row_span(&pa, y), x0, dx, n);
        let (b0, b1) = cells_in(row_span(&pb, y), x0, dx, n);
        ca += (a1 - a0 + 1).max(0);
        cb += (b1 - b0 + 1).max(0);
        both += (a1.min(b1) - a0.max(b0) + 1).max(0);
    }
    let union = ca + cb - both;
    if union == 0 {
        0.0
    } else {
        both as f64 / union as f64
    }
}

fn geometry() -> Outcome {
    let mut r = rng("geometry");
    let mut worst_h: f64 = 0.0;
    for _ in 0..10_000 {
        let b = random_box(&mut r, 100.0);
        let h = b.to_horizontal();
        let cs = corners(&b);
        let min_x = cs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let max_x = cs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let min_y = cs.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let max_y = cs.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        for (got, want) in [
            (h.cx, (min_x + max_x) / 2.0),
            (h.cy, (min_y + max_y) / 2.0),
            (h.w, max_x - min_x),
            (h.h, max_y - min_y),
        ] {
            worst_h = worst_h.max((got - want).abs());
        }
    }
    let mut worst_iou: f64 = 0.0;
    for i in 0..1000 {
        let a = random_box(&mut r, 40.0);
        let b = if i % 4 == 0 {
            random_box(&mut r, 40.0)
        } else {
            let mut b = random_box(&mut r, 40.0);
            b.cx = a.cx + r.random_range(-0.5..0.5) * a.w;
            b.cy = a.cy + r.random_range(-0.5..0.5) * a.h;
            b
        };
        worst_iou = worst_iou.max((rotated_iou(&a, &b) - raster_iou(&a, &b, 2048)).abs());
    }
    let detail = format!("max |Δ| horizontal {worst_h:.2e}, rotated IoU vs raster {worst_iou:.2e}");
    if worst_h < 1e-9 && worst_iou < 1e-3 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn random_simplex(r: &mut StreamRng, k: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..k).map(|_| -r.random_range(1e-9f64..1.0).ln()).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|x| x / s).collect()
}

fn cga() -> Outcome {
    let mut r = rng("cga");
    let (mut agree, mut disagree) = (0, 0);
    let mut worst: f64 = 0.0;
    let mut worst_sum: f64 = 0.0;
    for i in 0..10_000 {
        let k = r.random_range(2..12);
        let lambda = [0.0, 0.2, 0.5, 1.0, r.random_range(0.0..=1.0)][i % 5];
        let w = random_simplex(&mut r, k);
        let mut c = random_simplex(&mut r, k);
        if i % 2 == 0 {
            let (a, b) = (argmax(&w), argmax(&c));
            c.swap(a, b);
        }
        let out = cga_refine_detailed(
            &ClassScores::from_rows(std::slice::from_ref(&w)).unwrap(),
            &ClassScores::from_rows(std::slice::from_ref(&c)).unwrap(),
            lambda,
        )
        .map_err(|e| e.to_string())?;
        let row = out.scores.row(0);
        if argmax(&w) == argmax(&c) {
            agree += 1;
            if row.iter().zip(&w).any(|(a, b)| a.to_bits() != b.to_bits()) || !out.agreed[0] {
                return Err(format!("agreement row {i} altered"));
            }
        } else {
            disagree += 1;
            for (j, v) in row.iter().enumerate() {
                worst = worst.max((v - ((1.0 - lambda) * w[j] + lambda * c[j])).abs());
            }
        }
        if row.iter().any(|&v| v < 0.0) {
            return Err(format!("row {i} has a negative entry"));
        }
        worst_sum = worst_sum.max((row.iter().sum::<f64>() - 1.0).abs());
    }
    let detail = format!("{agree} agreeing rows bit-identical, {disagree} blended rows max |Δ| {worst:.1e}, simplex |Σ−1| {worst_sum:.1e}");
    if worst <= 1e-12 && worst_sum <= 1e-12 && agree > 0 && disagree > 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ema() -> Outcome {
    let mut worst: f64 = 0.0;
    for alpha in [0.9, 0.998, 1.0] {
        let mut r = rng("ema");
        let t0: Vec<f64> = (0..16).map(|_| r.random_range(-5.0..5.0)).collect();
        let s: Vec<f64> = (0..16).map(|_| r.random_range(-5.0..5.0)).collect();
        let p = |v: &[f64]| {
            let mut ps = ParamSet::new();
            ps.insert("w", Tensor::new(vec![v.len()], v.to_vec()).unwrap());
            ps
        };
        let student = p(&s);
        let mut state = EmaState::init(&p(&t0), alpha).map_err(|e| e.to_string())?;
        for n in 1..=500 {
            state.update(&student).map_err(|e| e.to_string())?;
            let t = &state.teacher().get("w").unwrap().data;
            for i in 0..16 {
                let gap0 = (t0[i] - s[i]).abs();
                let want = alpha.powi(n) * gap0;
                worst = worst.max(((t[i] - s[i]).abs() - want).abs() / gap0);
            }
        }
    }
    let detail = format!("max relative deviation {worst:.1e} over 500 steps");
    if worst <= 1e-9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient() -> Outcome {
    let mut r = rng("gradient");
    let mut worst: f64 = 0.0;
    for inst in 0..20 {
        let k = r.random_range(2..7);
        let det = ToyDetector::with_random_init(k, inst, 0.5);
        let size = det.input_size();
        let n = r.random_range(1..6);
        let patches: Vec<Patch> = (0..n)
            .map(|_| Patch {
                size,
                data: (0..3 * size * size).map(|_| r.random_range(0.0f32..1.0)).collect(),
                origin: None,
            })
            .collect();
        let targets: Vec<Target> = (0..n)
            .map(|_| match r.random_range(0..=k) {
                c if c == k => Target::Background,
                c => Target::Object(c),
            })
            .collect();
        let (_, grads) = det.loss_and_grad(&patches, &targets).map_err(|e| e.to_string())?;
        let base = det.parameters();
        let h = 1e-5;
        for (name, t) in base.iter() {
            for j in 0..t.data.len() {
                let eval = |delta: f64| {
                    let mut p = base.clone();
                    p.get_mut(name).unwrap().data[j] += delta;
                    let mut d = det.clone();
                    d.load_parameters(&p).unwrap();
                    d.loss_and_grad(&patches, &targets).unwrap().0.total()
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let analytic = grads.get(name).unwrap().data[j];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
    }
    let detail = format!("max relative error {worst:.1e} on 20 instances");
    if worst < 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Exact rational all-points AP: `Σ_TP (1/G)·max_{j ≥ i} tp_j / j`.
fn rational_ap(flags: &[bool], num_gt: u64) -> Option<f64> {
    if num_gt == 0 {
        return None;
    }
    let prec: Vec<(u64, u64)> = flags
        .iter()
        .scan(0u64, |tp, &f| {
            *tp += f as u64;
            Some(*tp)
        })
        .enumerate()
        .map(|(i, tp)| (tp, i as u64 + 1))
        .collect();
    let (mut num, mut den) = (0u128, 1u128);
    for (i, &f) in flags.iter().enumerate() {
        if !f {
            continue;
        }
        let (mut bn, mut bd) = prec[i];
        for &(n, d) in &prec[i..] {
            if n * bd > bn * d {
                (bn, bd) = (n, d);
            }
        }
        let (an, ad) = (bn as u128, bd as u128 * num_gt as u128);
        num = num * ad + an * den;
        den *= ad;
    }
    Some(num as f64 / den as f64)
}

/// Independent one-image, one-class evaluation.
fn oracle_ap(dets: &[PseudoLabel], gts: &[GtObject]) -> Option<f64> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut taken = vec![false; gts.len()];
    let mut flags = Vec::new();
    for i in order {
        let best = (0..gts.len())
            .filter(|&j| !taken[j])
            .map(|j| (j, rotated_iou(&dets[i].bbox, &gts[j].bbox)))
            .filter(|&(_, iou)| iou >= 0.5)
            .fold(None, |acc: Option<(usize, f64)>, x| match acc {
                Some(a) if a.1 >= x.1 => Some(a),
                _ => Some(x),
            });
        match best {
            Some((j, _)) if gts[j].difficult => {}
            Some((j, _)) => {
                taken[j] = true;
                flags.push(true);
            }
            None => flags.push(false),
        }
    }
    rational_ap(&flags, gts.iter().filter(|g| !g.difficult).count() as u64)
}

fn voc_ap() -> Outcome {
    let hand: [(&[bool], usize, Option<f64>); 6] = [
        (&[true, false, true], 2, Some(5.0 / 6.0)),
        (&[true, true], 2, Some(1.0)),
        (&[], 3, Some(0.0)),
        (&[false, true], 1, Some(0.5)),
        (&[false, false], 2, Some(0.0)),
        (&[true], 0, None),
    ];
    for (flags, g, want) in hand {
        let close = |v: Option<f64>| match (v, want) {
            (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
            (a, b) => a == b,
        };
        let got = average_precision(flags, g, ApVariant::AllPoints);
        if !close(got) || !close(rational_ap(flags, g as u64)) {
            return Err(format!("{flags:?} with {g} objects: got {got:?}, want {want:?}"));
        }
    }
    let mut r = rng("voc");
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let gts: Vec<GtObject> = (0..r.random_range(0..=3))
            .map(|_| {
                let mut g = GtObject::new(random_box(&mut r, 20.0), 0);
                g.difficult = r.random_bool(0.15);
                g
            })
            .collect();
        let dets: Vec<PseudoLabel> = (0..r.random_range(0..=5))
            .map(|_| {
                let bbox = if !gts.is_empty() && r.random_bool(0.6) {
                    let mut b = gts[r.random_range(0..gts.len())].bbox;
                    b.cx += r.random_range(-2.0..2.0);
                    b.cy += r.random_range(-2.0..2.0);
                    b
                } else {
                    random_box(&mut r, 20.0)
                };
                PseudoLabel {
                    bbox,
                    class_id: 0,
                    score: r.random_range(0.0..1.0),
                }
            })
            .collect();
        let got = evaluate(std::slice::from_ref(&dets), std::slice::from_ref(&gts), 1, &EvalConfig::default())
            .map_err(|e| e.to_string())?
            .ap[0];
        let want = oracle_ap(&dets, &gts);
        match (got, want) {
            (None, None) => {}
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            _ => return Err(format!("definedness differs: {got:?} vs {want:?}")),
        }
    }
    let detail = format!("hand cases to 1e-12, 200 random instances max |Δ| {worst:.1e}");
    if worst <= 1e-12 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn write_probe_tree(dir: &Path) {
    std::fs::create_dir_all(dir.join("images")).unwrap();
    std::fs::create_dir_all(dir.join("labels")).unwrap();
    for (i, img) in probe_images(10, 64, 99).iter().enumerate() {
        img.save_png(&dir.join(format!("images/p{i}.png"))).unwrap();
        std::fs::write(dir.join(format!("labels/p{i}.txt")), format!("{} 32 32 10 6 0.25\n", i % 3)).unwrap();
    }
}

fn corruption() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let src = tmp.path().join("src");
    write_probe_tree(&src);
    let table = SeverityTable::builtin();
    let kinds = CorruptionKind::ALL.to_vec();
    let run = |name: &str| generate_dataset(&src, &tmp.path().join(name), &kinds, 3, 2024, &table);
    let a = run("a").map_err(|e| e.to_string())?;
    let b = run("b").map_err(|e| e.to_string())?;
    if a != b || a.failures().count() > 0 {
        return Err("manifests differ between runs or contain failures".into());
    }
    for e in a.entries.iter().filter(|e| e.status == EntryStatus::Copied) {
        let rel = e.path.split_once('/').unwrap().1;
        let copy = std::fs::read(tmp.path().join("a").join(&e.path)).unwrap();
        if copy != std::fs::read(src.join(rel)).unwrap() {
            return Err(format!("label {} changed", e.path));
        }
    }
    let probes = probe_images(10, 64, 99);
    let mut bad = Vec::new();
    for kind in CorruptionKind::ALL {
        let curve: Vec<f64> = (1..=5)
            .map(|s| {
                let spec = CorruptionSpec::new(kind, s, 2024).unwrap();
                probes
                    .iter()
                    .enumerate()
                    .map(|(i, img)| {
                        let out = corrupt_image(img, &spec, &format!("images/p{i}.png")).unwrap();
                        psnr(&out, img).unwrap().min(100.0)
                    })
                    .sum::<f64>()
                    / probes.len() as f64
            })
            .collect();
        if curve.windows(2).any(|w| w[1] > w[0]) {
            bad.push(format!("{kind} {curve:.2?}"));
        }
    }
    let labels = a.entries.iter().filter(|e| e.status == EntryStatus::Copied).count();
    if bad.is_empty() {
        Ok(format!("{} entries identical across runs, {labels} labels preserved, PSNR monotone for 20 kinds", a.entries.len()))
    } else {
        Err(format!("non-monotone PSNR: {}", bad.join("; ")))
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn table_analogue() -> Outcome {
    let cfg = ExperimentConfig::desk();
    let (mut clean, mut direct, mut st, mut cga) = (vec![], vec![], vec![], vec![]);
    for &seed in &cfg.seeds {
        let r = run_seed(&cfg, seed, &Method::ALL).map_err(|e| e.to_string())?;
        clean.push(r.clean_direct.map.unwrap_or(0.0));
        direct.push(r.matrix.mean_map(Method::Direct).unwrap_or(0.0));
        st.push(r.matrix.mean_map(Method::SelfTrain).unwrap_or(0.0));
        cga.push(r.matrix.mean_map(Method::Cga).unwrap_or(0.0));
    }
    let (c, d, s, g) = (mean(&clean), mean(&direct), mean(&st), mean(&cga));
    let detail = format!(
        "{} seeds x {} kinds: clean {:.4}, direct {:.4}, self-training {:.4}, CGA {:.4}",
        cfg.seeds.len(),
        cfg.kinds.len(),
        c,
        d,
        s,
        g
    );
    if d < s && s <= g && d < c {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lambda_shape() -> Outcome {
    let cfg = ExperimentConfig::desk();
    let lambdas = [0.0, 0.2, 0.5, 0.8, 1.0];
    let curve = lambda_sweep_seeds(&cfg, &lambdas).map_err(|e| e.to_string())?;
    let maps: Vec<f64> = curve.iter().map(|&(_, m)| m).collect();
    let best = (0..maps.len()).fold(0, |b, i| if maps[i] > maps[b] { i } else { b });
    let detail = format!(
        "mean mAP by λ: {}",
        curve.iter().map(|(l, m)| format!("{l}:{m:.4}")).collect::<Vec<_>>().join(" ")
    );
    let interior = best > 0 && best < maps.len() - 1 && maps[best] > maps[0] && maps[best] > maps[maps.len() - 1];
    if interior {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = Command::new(env!("CARGO_BIN_EXE_sfod"))
            .args(["adapt", "--seed", "11", "--out", out.to_str().unwrap()])
            .output()
            .map_err(|e| e.to_string())?;
        if !o.status.success() {
            return Err(String::from_utf8_lossy(&o.stderr).into_owned());
        }
        Ok(out)
    };
    let a = run("a")?;
    let b = run("b")?;
    for f in ["report.txt", "teacher.params", "student.params", "resolved_config"] {
        let x = std::fs::read(a.join(f)).map_err(|e| e.to_string())?;
        let y = std::fs::read(b.join(f)).map_err(|e| e.to_string())?;
        if x != y {
            return Err(format!("{f} differs between runs"));
        }
    }
    Ok("two adapt runs: report, parameters and resolved config byte-identical".into())
}

fn main() {
    let checks: [(&str, fn() -> Outcome, Duration); 9] = [
        ("1 geometry exactness", geometry, Duration::MAX),
        ("2 CGA correctness", cga, Duration::MAX),
        ("3 EMA dynamics", ema, Duration::MAX),
        ("4 gradient check", gradient, Duration::MAX),
        ("5 VOC AP", voc_ap, Duration::MAX),
        ("6 corruption pipeline", corruption, Duration::MAX),
        ("7 desk-scale table ordering", table_analogue, Duration::from_secs(600)),
        ("8 lambda ablation shape", lambda_shape, Duration::from_secs(900)),
        ("9 end-to-end reproducibility", reproducibility, Duration::MAX),
    ];
    let mut failed = Vec::new();
    for (name, check, budget) in checks {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the time budget")),
            Err(d) => (false, d),
        };
        println!("{} criterion {name}: {detail} ({:.1}s)", if ok { "PASS" } else { "FAIL" }, took.as_secs_f64());
        if !ok {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
