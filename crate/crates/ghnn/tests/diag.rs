use std::time::Instant;

use ghnn::forecast::{self, EvaluationSummary, FieldSource, ForecastReport};
use ghnn::models::{JacobianInversePolicy, ModelKind};
use ghnn::systems::{self, SystemSpec, TargetSource};
use ghnn::training::{model_from_run, multi_restart, TrainConfig};

fn mse_until(report: &ForecastReport, cut: f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (k, t) in report.times.iter().enumerate() {
        if *t > cut {
            break;
        }
        for (a, b) in report.states[k].iter().zip(&report.reference[k]) {
            sum += (a - b) * (a - b);
            n += 1;
        }
    }
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

fn early_mse_median(summary: &EvaluationSummary) -> f64 {
    let mut values: Vec<f64> = summary
        .rows
        .iter()
        .filter(|r| !r.report.diverged)
        .map(|r| mse_until(&r.report, 5.0))
        .collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if values.is_empty() {
        f64::NAN
    } else {
        forecast::quantile(&values, 0.5)
    }
}

#[test]
fn pooled_gates() {
    let spec = SystemSpec::lv_unit();
    let dataset =
        systems::generate_dataset(&spec, 20, 10.0, 0.1, 0.0, 1, TargetSource::FiniteDifference)
            .unwrap();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1001);
    let ics = systems::sample_initial_conditions(&spec, 5, &mut rng);

    let mut pooled = Vec::new();
    for kind in [ModelKind::Nn, ModelKind::Ghnn] {
        let mut config = TrainConfig::for_kind(kind);
        config.steps = 3000;
        config.batch_size = 32;
        config.learning_rate = 3e-3;
        config.lr_final = Some(5e-5);
        config.restarts = 3;
        config.seed = 11;
        let t0 = Instant::now();
        let outcome = multi_restart(kind, &dataset, &config).unwrap();
        let train_secs = t0.elapsed().as_secs_f64();
        for (i, run) in outcome.runs.iter().enumerate() {
            println!(
                "{} restart {i}: full {:.3e}{}",
                kind.name(),
                run.final_loss(),
                if outcome.survivors[i] { "" } else { " [dropped]" }
            );
        }
        let models: Vec<_> = outcome
            .surviving_runs()
            .map(|(_, run)| model_from_run(kind, dataset.dim(), run).unwrap())
            .collect();
        let sources: Vec<FieldSource> = models
            .iter()
            .map(|m| FieldSource::Learned {
                model: m,
                policy: JacobianInversePolicy::forecast_default(),
            })
            .collect();
        let t1 = Instant::now();
        let summary = forecast::evaluate(&sources, &spec, &ics, 20.0, 0.01).unwrap();
        let std = summary.energy_std_median.unwrap_or(f64::INFINITY);
        let mse5 = early_mse_median(&summary);
        println!(
            "{}: pooled std {std:.3e}, pooled mse5 {mse5:.3e}, div {}/{}, train {train_secs:.0}s ({:.0} ms/step), eval {:.0}s",
            kind.name(),
            summary.diverged_rows,
            summary.rows.len(),
            1000.0 * train_secs / (3.0 * 3000.0),
            t1.elapsed().as_secs_f64(),
        );
        pooled.push((std, mse5));
    }
    println!(
        "std ratio {:.3} (gate 0.5), mse5 ratio {:.3} (gate 2.0)",
        pooled[1].0 / pooled[0].0,
        pooled[1].1 / pooled[0].1
    );
}

#[test]
#[ignore]
fn pendulum_probe() {
    for (spec, t_end) in [
        (SystemSpec::ep_default(), 20.0),
        (SystemSpec::dp_unit(), 10.0),
    ] {
        let dataset =
            systems::generate_dataset(&spec, 20, 10.0, 0.1, 0.0, 1, TargetSource::FiniteDifference)
                .unwrap();
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1001);
        let ics = systems::sample_initial_conditions(&spec, 5, &mut rng);
        for kind in [ModelKind::Nn, ModelKind::Hnn, ModelKind::Ghnn] {
            let mut config = TrainConfig::for_kind(kind);
            config.steps = 3000;
            config.batch_size = 32;
            config.learning_rate = 3e-3;
            config.lr_final = Some(5e-5);
            config.restarts = 1;
            config.seed = 11;
            let t0 = Instant::now();
            let outcome = multi_restart(kind, &dataset, &config).unwrap();
            let train_secs = t0.elapsed().as_secs_f64();
            let run = outcome.best_run();
            let model = model_from_run(kind, dataset.dim(), run).unwrap();
            let sources = vec![FieldSource::Learned {
                model: &model,
                policy: JacobianInversePolicy::forecast_default(),
            }];
            let t1 = Instant::now();
            match forecast::evaluate(&sources, &spec, &ics, t_end, 0.01) {
                Ok(s) => println!(
                    "{} {}: full {:.3e}, pooled std {:?}, div {}/{}, train {train_secs:.0}s ({:.0} ms/step), eval {:.0}s",
                    spec.name(),
                    kind.name(),
                    run.final_loss(),
                    s.energy_std_median,
                    s.diverged_rows,
                    s.rows.len(),
                    1000.0 * train_secs / 3000.0,
                    t1.elapsed().as_secs_f64(),
                ),
                Err(e) => println!(
                    "{} {}: full {:.3e}, evaluate failed: {e}",
                    spec.name(),
                    kind.name(),
                    run.final_loss()
                ),
            }
        }
    }
}
