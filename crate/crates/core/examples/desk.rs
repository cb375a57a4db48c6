//! Runs the desk-scale experiment and prints per-seed results.
//!
//! `cargo run --release -p sfod-core --example desk [config.toml] [sweep] [nomatrix]`

use std::time::Instant;

use sfod_core::pipeline::{lambda_sweep, prepare, run_seed, ExperimentConfig, Method};

fn main() -> sfod_core::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let cfg = match args.first().filter(|a| a.ends_with(".toml")) {
        Some(p) => ExperimentConfig::from_toml(&std::fs::read_to_string(p).expect("readable config"))?,
        None => ExperimentConfig::desk(),
    };
    let t = Instant::now();
    let skip = args.iter().any(|a| a == "nomatrix");
    let mut means = [0.0; 4];
    for &seed in cfg.seeds.iter().filter(|_| !skip) {
        let r = run_seed(&cfg, seed, &Method::ALL)?;
        let clean = r.clean_direct.map.unwrap_or(0.0);
        let row: Vec<f64> = Method::ALL.iter().map(|&m| r.matrix.mean_map(m).unwrap_or(0.0)).collect();
        print!("seed {seed} clean {clean:.4}");
        for k in &r.matrix.kinds {
            print!(" | {}", k.name());
            for &m in &Method::ALL {
                let o = &r.matrix.cells[&(m, *k)];
                let acc = o.report.as_ref().and_then(|r| r.pseudo_label_accuracy()).unwrap_or(f64::NAN);
                let n = o.report.as_ref().map_or(0, |r| r.total_pseudo_labels());
                let det: usize = o.eval.counts.iter().map(|c| c.det).sum();
                let tp: usize = o.eval.counts.iter().map(|c| c.tp).sum();
                print!(" {}={:.4}(acc {acc:.3} n {n} det {det} tp {tp})", m.name(), o.eval.map.unwrap_or(0.0));
            }
        }
        println!();
        means[0] += clean;
        for i in 0..3 {
            means[i + 1] += row[i];
        }
    }
    let n = cfg.seeds.len() as f64;
    println!(
        "mean clean {:.4} direct {:.4} self_train {:.4} cga {:.4} ({:.1}s)",
        means[0] / n,
        means[1] / n,
        means[2] / n,
        means[3] / n,
        t.elapsed().as_secs_f64()
    );
    if args.iter().any(|a| a == "sweep") {
        let t = Instant::now();
        let kinds = cfg.corruption_kinds()?;
        let mut table = vec![vec![0.0; cfg.lambdas.len()]; kinds.len()];
        for &seed in &cfg.seeds {
            let p = prepare(&cfg, seed)?;
            for (ki, k) in kinds.iter().enumerate() {
                let r = lambda_sweep(&p.pipeline, &cfg.lambdas, &p.source, &p.class_names, &p.corrupted[k])?;
                for (i, (_, e)) in r.iter().enumerate() {
                    table[ki][i] += e.map.unwrap_or(0.0) / cfg.seeds.len() as f64;
                }
            }
        }
        for (ki, k) in kinds.iter().enumerate() {
            println!("{:16} {}", k.name(), table[ki].iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" "));
        }
        let mean: Vec<String> = (0..cfg.lambdas.len())
            .map(|i| format!("{:.4}", table.iter().map(|r| r[i]).sum::<f64>() / kinds.len() as f64))
            .collect();
        println!("{:16} {}  ({:.1}s)", "mean", mean.join(" "), t.elapsed().as_secs_f64());
    }
    Ok(())
}
