// Scratch harness for hyperparameter exploration. Not part of the artifact.
use odenet::model::CoefficientMatrix;
use odenet::sindy;
use odenet::systems::{self, LvRegime};
use odenet::train::{train, AdamConfig, InitStrategy, Schedule, TrainConfig};
use std::time::Instant;

fn report(truth: &CoefficientMatrix, fitted: &CoefficientMatrix, label: &str, secs: f64) {
    let cmp = sindy::compare_models(truth, fitted).unwrap();
    println!(
        "{label}: support={} maxrel={:.4} precision={:.2} recall={:.2} ({secs:.1}s)",
        cmp.exact_support, cmp.max_relative_error, cmp.precision, cmp.recall
    );
    for row in 0..fitted.dim() {
        let vals: Vec<String> = (0..fitted.n_terms())
            .map(|c| format!("{:+.4}", fitted.value(row, c)))
            .collect();
        println!("  row{row}: {}", vals.join(" "));
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(String::as_str).unwrap_or("lv");
    match which {
        "lv" => {
            let mu_start: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.3);
            let mu_end: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
            let n: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(5);
            let gamma_end: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
            let system = systems::make_lv(LvRegime::LimitCycle);
            let data = systems::generate_default(&system, 0.01, 42).unwrap();
            for seed in [1u64, 2, 3] {
                let config = TrainConfig {
                    seed,
                    iterations: 20_000,
                    mu: Schedule { start: mu_start, end: mu_end },
                    gamma: Schedule { start: 1e-4, end: gamma_end },
                    n,
                    ..Default::default()
                };
                let t0 = Instant::now();
                let fit = train(&data, system.model.basis(), &config).unwrap();
                report(
                    system.model.theta(),
                    fit.model.theta(),
                    &format!("lv seed {seed}"),
                    t0.elapsed().as_secs_f64(),
                );
            }
        }
        "lv-regimes" => {
            let mu: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.1);
            let gamma_end: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(5e-3);
            let n: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(20);
            let init = if args.get(5).map(String::as_str) == Some("random") {
                InitStrategy::RandomSmall
            } else {
                InitStrategy::WarmStart
            };
            let eps: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.01);
            let learn_noise = args.get(7).map(String::as_str) == Some("noise"); // arg 7: noise|plain
            let iterations: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(20_000);
            let m: usize = args.get(9).map(|s| s.parse().unwrap()).unwrap_or(20);
            for regime in [LvRegime::OverDamped, LvRegime::Spiral] {
                let system = systems::make_lv(regime);
                let ics: Vec<Vec<f64>> = match regime {
                    LvRegime::OverDamped => vec![
                        vec![1.0, 1.0], vec![4.0, 0.5], vec![0.3, 2.0],
                        vec![2.5, 2.5], vec![6.0, 1.0],
                    ],
                    _ => vec![
                        vec![0.3, 1.0], vec![2.0, 1.2], vec![6.0, 0.8],
                        vec![12.0, 0.5], vec![0.5, 0.3],
                    ],
                };
                let data =
                    systems::generate_dataset(&system, &ics, 30.0, 0.01, eps, 42).unwrap();
                for seed in [1u64, 2, 3] {
                    let config = TrainConfig {
                        seed,
                        iterations,
                        m,
                        mu: Schedule::constant(mu),
                        gamma: Schedule { start: 1e-4, end: gamma_end },
                        n,
                        init,
                        learn_noise,
                        noise_scale_guess: eps.max(1e-3),
                        ..Default::default()
                    };
                    let t0 = Instant::now();
                    let fit = train(&data, system.model.basis(), &config).unwrap();
                    report(
                        system.model.theta(),
                        fit.model.theta(),
                        &format!("{} seed {seed}", system.name),
                        t0.elapsed().as_secs_f64(),
                    );
                }
            }
        }
        "lorenz" => {
            let system = systems::make_lorenz();
            let data = systems::generate_default(&system, 0.005, 42).unwrap();
            let config = TrainConfig {
                seed: 1,
                iterations: 20_000,
                mu: Schedule { start: 1e-4, end: 1e-8 },
                gamma: Schedule { start: 1e-4, end: 1e-3 },
                adam: AdamConfig { lr_start: 3e-2, lr_end: 1e-5, ..Default::default() },
                ..Default::default()
            };
            let t0 = Instant::now();
            let fit = train(&data, system.model.basis(), &config).unwrap();
            report(
                system.model.theta(),
                fit.model.theta(),
                "lorenz",
                t0.elapsed().as_secs_f64(),
            );
        }
        "warm" => {
            // inspect warm-start quality alone per regime / step
            for regime in [LvRegime::OverDamped, LvRegime::Spiral, LvRegime::LimitCycle] {
                let system = systems::make_lv(regime);
                let data = systems::generate_default(&system, 0.01, 42).unwrap();
                let problem = sindy::build_problem(&data, system.model.basis()).unwrap();
                let fit = sindy::stlsq(&problem, 0.0, 1);
                report(system.model.theta(), &fit, &format!("warm {}", system.name), 0.0);
            }
            let lorenz = systems::make_lorenz();
            let data = systems::generate_default(&lorenz, 0.005, 42).unwrap();
            let problem = sindy::build_problem(&data, lorenz.model.basis()).unwrap();
            let fit = sindy::stlsq(&problem, 0.0, 1);
            report(lorenz.model.theta(), &fit, "warm lorenz", 0.0);
        }
        other => eprintln!("unknown experiment {other}"),
    }
}
