use std::collections::BTreeMap;
use std::time::Instant;

use tfr_core::data::Direction;
use tfr_core::metrics::{score_pool, Metric, MetricConfig};
use tfr_core::rank::weighted_kendall_tau;
use tfr_micronet::presets;
use tfr_micronet::zoo::{make_micro_zoo, ZooConfig};

fn main() {
    let seeds: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2);
    let cfg = ZooConfig::default();
    let metrics = [Metric::Ours, Metric::OursLp, Metric::Leep, Metric::Logme];
    let mut sums: BTreeMap<(usize, String), f64> = BTreeMap::new();
    for seed in 0..seeds {
        let t0 = Instant::now();
        let zoo = make_micro_zoo(&presets::sources(), &presets::targets(), &cfg, seed).unwrap();
        println!("seed {seed}: {:.1}s", t0.elapsed().as_secs_f64());
        for (t, tb) in zoo.targets.iter().enumerate() {
            let truth: Vec<f64> = zoo
                .ground_truth
                .values
                .iter()
                .map(|r| r[t].unwrap())
                .collect();
            let mut line = format!(
                "  {:16} truth {:?}",
                tb.target.name,
                truth.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>()
            );
            for m in metrics {
                let Ok(st) = score_pool(
                    m,
                    &tb.target,
                    &tb.bundles,
                    Direction::InDomain,
                    &MetricConfig::default(),
                ) else {
                    line += &format!(" {}=ERR", m.name());
                    continue;
                };
                let pred: Vec<f64> = zoo.ground_truth.rows.iter().map(|r| st.scores[r]).collect();
                let tau = weighted_kendall_tau(&pred, &truth).unwrap();
                *sums.entry((t, m.name().to_string())).or_default() += tau;
                line += &format!(" {}={tau:.2}", m.name());
            }
            let fu: Vec<String> = tb
                .bundles
                .iter()
                .map(|b| {
                    let g = b.grad_norms.unwrap();
                    format!(
                        "{:.3} {}",
                        g.conv2 / g.conv1,
                        b.provenance["active_triplets"]
                    )
                })
                .collect();
            println!("{line}\n     fu {fu:?}");
        }
    }
    for ((t, m), s) in sums {
        println!("target {t} {m}: mean tau {:.3}", s / seeds as f64);
    }
}
