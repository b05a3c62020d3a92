//! Baseline vs decoupled training on a synthetic task with one strong and two
//! weak modalities. Prints per-seed singleton and full-case test accuracy.
//!
//! Settings are `key=value` arguments, e.g.
//! `cargo run --release --example dominance -- steps=1000 noise=1.5`.

use std::collections::HashMap;
use std::time::Instant;

use gmd_core::autodiff::{Activation, LayerSpec};
use gmd_core::cases::{ModalityCase, PoolPolicy, SamplerConfig};
use gmd_core::ds_model::{LossKind, ModelSpec};
use gmd_core::par::Schedule;
use gmd_core::synth_data::{generate, DominanceSpec};
use gmd_core::trainer::{run_experiment, OptimizerConfig, TrainConfig};

fn main() {
    let args: HashMap<String, String> = std::env::args()
        .skip(1)
        .filter_map(|a| a.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let get = |k: &str, d: f64| args.get(k).map_or(d, |v| v.parse().expect("number"));
    let act_of = |k: &str| match args.get(k).map(String::as_str) {
        Some("tanh") => Activation::Tanh,
        Some("identity") => Activation::Identity,
        _ => Activation::Relu,
    };

    let dim = get("dim", 8.0) as usize;
    let data = generate(
        &DominanceSpec {
            signal_strength: vec![0.9, 0.4, 0.4],
            noise_std: vec![
                get("noise", 1.0),
                get("weak_noise", get("noise", 1.0)),
                get("weak_noise", get("noise", 1.0)),
            ],
            redundancy: get("redundancy", 0.5),
        },
        get("n", 3000.0) as usize,
        get("classes", 4.0) as usize,
        &[dim; 3],
        get("data_seed", 0.0) as u64,
        [0.6, 0.2, 0.2],
    )
    .expect("dataset");
    let hidden = get("hidden", 16.0) as usize;
    let shared_w = get("shared", hidden as f64) as usize;
    let spec = ModelSpec {
        hidden_dim: hidden,
        encoder: vec![LayerSpec {
            width: hidden,
            activation: act_of("enc"),
        }],
        shared: vec![LayerSpec {
            width: shared_w,
            activation: act_of("act"),
        }],
        head_hidden: vec![],
        fusion: Default::default(),
    };
    let base = TrainConfig {
        steps: get("steps", 2000.0) as u64,
        batch_size: get("batch", 64.0) as usize,
        optimizer: if args.get("opt").map(String::as_str) == Some("sgd") {
            OptimizerConfig::Sgd {
                lr: get("lr", 0.05),
                momentum: get("momentum", 0.0),
            }
        } else {
            OptimizerConfig::Adam {
                lr: get("lr", 1e-3),
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            }
        },
        gmd_enabled: false,
        sampler: SamplerConfig {
            k: get("k", 5.0) as usize,
            pool: args.get("pool").map_or(PoolPolicy::All, |p| p.parse().expect("pool")),
            include_full: get("include_full", 1.0) != 0.0,
            seed: 0,
        },
        loss: LossKind::CrossEntropy,
        seeds: (0..get("seeds", 5.0) as u64).collect(),
        eval_every: 0,
        log_gradients: false,
    };
    let singles: Vec<String> = (0..3)
        .map(|i| ModalityCase::from_members(&[i], 3).unwrap().bits())
        .collect();
    let mut summary = Vec::new();
    for gmd in [false, true] {
        let cfg = TrainConfig {
            gmd_enabled: gmd,
            ..base.clone()
        };
        let t = Instant::now();
        let art = run_experiment(&cfg, &spec, &data, Schedule::default()).expect("run");
        let secs = t.elapsed().as_secs_f64();
        let v = |mask: &str| art.summary_value(mask, "test_accuracy").unwrap_or(f64::NAN);
        let weak = (v(&singles[1]) + v(&singles[2])) / 2.0;
        println!(
            "gmd={gmd:<5} strong={:.4} weak={:.4} full={:.4} avg={:.4} ({secs:.1}s)",
            v(&singles[0]),
            weak,
            v("111"),
            art.summary_value("all", "test_accuracy_mean").unwrap_or(f64::NAN),
        );
        for run in &art.runs {
            let e = run.final_eval.as_ref().expect("completed");
            let row: Vec<String> = e.rows.iter().map(|(c, a)| format!("{c}:{a:.3}")).collect();
            println!("  seed {} {}", run.seed, row.join(" "));
        }
        let records: Vec<_> = art.runs.iter().flat_map(|r| r.conflicts.iter().cloned()).collect();
        let pairs: usize = records.iter().map(|r| r.report.pairs().count()).sum();
        let conflicts: usize = records.iter().map(|r| r.report.n_conflicts).sum();
        println!("  conflicting pairs: {conflicts}/{pairs}");
        if args.contains_key("norms") {
            let st = gmd_core::diagnostics::norm_stats(&records).expect("records");
            for c in &st.per_case {
                println!("  norm {} mean {:.4} std {:.4}", c.case, c.mean, c.std);
            }
            let late = &records[records.len() / 2..];
            let mut cos: std::collections::BTreeMap<(String, String), (f64, usize)> = Default::default();
            for r in late {
                for (j, k) in r.report.pairs() {
                    let e = cos
                        .entry((r.report.cases[j].bits(), r.report.cases[k].bits()))
                        .or_default();
                    e.0 += r.report.cos_matrix[j][k];
                    e.1 += 1;
                }
            }
            for ((a, b), (s, n)) in cos {
                print!(" {a}-{b}:{:.2}", s / n as f64);
            }
            println!();
        }
        summary.push((weak, v("111")));
    }
    println!(
        "delta weak = {:+.2} pp, delta full = {:+.2} pp",
        100.0 * (summary[1].0 - summary[0].0),
        100.0 * (summary[1].1 - summary[0].1)
    );
}
