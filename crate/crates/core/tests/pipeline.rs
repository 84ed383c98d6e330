//! End-to-end use of the public API on tiny budgets.

use ppoue::harness::{
    emit_plots, evaluate, load_metrics, save_metrics, sweep, train, write_sweep, Checkpoint, ExperimentConfig,
};
use ppoue::{EnvKind, GateMode};

fn tiny(env: EnvKind) -> ExperimentConfig {
    ExperimentConfig {
        env,
        total_steps: 3 * 512,
        update_interval: 512,
        train_horizon: 100,
        test_horizon: 200,
        epochs: 3,
        hidden_sizes: vec![16, 16],
        eval_episodes: 5,
        seeds: vec![0],
        ..ExperimentConfig::desk()
    }
}

#[test]
fn train_save_load_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    for env in EnvKind::ALL {
        let cfg = tiny(env);
        let out = train(&cfg, 11).unwrap();
        assert_eq!(out.rows.len(), 3);
        let path = dir.path().join(format!("{env}.json"));
        out.checkpoint.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, out.checkpoint);
        let a = evaluate(&out.checkpoint, env, cfg.test_horizon, 5, 1).unwrap();
        let b = evaluate(&back, env, cfg.test_horizon, 5, 1).unwrap();
        assert_eq!(a, b);
        assert!(a.returns.iter().all(|r| r.is_finite()));

        let csv = dir.path().join(format!("{env}.csv"));
        save_metrics(&out.rows, &csv).unwrap();
        assert_eq!(load_metrics(&csv).unwrap(), out.rows);
    }
}

#[test]
fn metrics_rows_follow_the_gate() {
    let cfg = ExperimentConfig {
        uncertainty: 0.6,
        total_steps: 4 * 512,
        ..tiny(EnvKind::Pendulum)
    };
    let rows = train(&cfg, 5).unwrap().rows;
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row.update, k);
        assert_eq!(row.step, 512 * (k as u64 + 1));
        assert_eq!(row.uncertainty, 0.6);
        assert!((0.0..=1.0).contains(&row.explore_fraction));
    }
    // Ratios are only measured once a snapshot exists.
    assert_eq!(rows[0].ranking_len, 0);
    assert_eq!(rows[1].ranking_len, 512);
    // Interval 1 sampled under tau = 0, so every ratio counts as high.
    assert_eq!(rows[1].pu, Some(1.0));
    for row in &rows[2..] {
        let pu = row.pu.unwrap();
        assert!(row.threshold > 0.0);
        assert_eq!(pu, 1.0 - row.low_count as f64 / row.ranking_len as f64);
    }

    let ablated = train(
        &ExperimentConfig {
            gate: GateMode::Ablated,
            ..cfg
        },
        5,
    )
    .unwrap()
    .rows;
    assert!(ablated.iter().all(|r| r.explore_fraction == 1.0 && r.threshold == 0.0));
}

#[test]
fn sweep_to_figures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        seeds: vec![0, 1],
        ..tiny(EnvKind::PointMass)
    };
    let result = sweep(&cfg, &[0.7, 1.0], &cfg.seeds).unwrap();
    assert_eq!(result.cells.len(), 4);
    assert!(result.cells.iter().all(|c| c.ok));
    assert_eq!(result.rows.len(), 4 * 3);
    write_sweep(&result, dir.path()).unwrap();
    let figures = emit_plots(&result.rows, Some(&result.summary), dir.path()).unwrap();
    let names: Vec<String> = figures
        .iter()
        .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["training_point-mass.svg", "pu_vs_u.svg", "rtest_vs_u.svg"]);
}
