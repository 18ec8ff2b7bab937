//! Kept in its own binary: it sets `CMPU_WORKERS`, which other tests read.

use cmpu::experiment::{run_cells, worker_count, Cell, ExperimentConfig, WORKERS_ENV};

#[test]
fn worker_count_does_not_change_results() {
    let config = ExperimentConfig {
        seeds: vec![1, 2, 3],
        ..ExperimentConfig::default()
    };
    let cells: Vec<Cell> = config.seeds.iter().map(|&s| config.cell(s)).collect();
    std::env::set_var(WORKERS_ENV, "1");
    assert_eq!(worker_count().unwrap(), 1);
    let serial = run_cells(&config, &cells).unwrap();
    std::env::set_var(WORKERS_ENV, "3");
    assert_eq!(worker_count().unwrap(), 3);
    let wide = run_cells(&config, &cells).unwrap();
    for (a, b) in serial.iter().zip(&wide) {
        assert_eq!(a.cell, b.cell);
        assert_eq!(a.eval, b.eval);
        assert_eq!(a.training.model.params(), b.training.model.params());
    }
    std::env::set_var(WORKERS_ENV, "none");
    assert!(worker_count().unwrap_err().is_validation());
}
