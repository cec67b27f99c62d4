use crate::data::{BatchSampler, TaskData};
use crate::diagnostics::{coordinate_check, spectral_probe, CoordCheckRecord, CoordCheckSpec, SpectralProbe};
use crate::error::Result;
use crate::model::{loss, mlp_specs, LossKind, Mlp};
use crate::optim::{train_step, HyperParams, OptState};
use crate::par::parallel_map;
use crate::scaling::{derive_rules, ScalingRule};

use super::config::ExperimentConfig;

/// Final losses of one (width, lr, seed) run.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub width: usize,
    pub lr: f64,
    pub seed: u64,
    /// Optimizer steps completed.
    pub steps: usize,
    /// Mean loss over the full training set.
    pub train_loss: f64,
    /// Mean loss over the full validation set.
    pub val_loss: f64,
    pub diverged: bool,
}

/// Mean over seeds for one (width, lr) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct MeanRow {
    pub width: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Seeds that diverged; any divergence makes the means infinite.
    pub diverged: usize,
    pub seeds: usize,
}

/// Trains every (width, lr, seed) cell and returns rows ordered by width,
/// then lr in grid order, then seed.
pub fn run_lr_sweep(config: &ExperimentConfig, threads: usize) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let data = config.task.load()?;
    for &w in &config.widths {
        mlp_specs(data.input_dim, w, config.depth, data.output_dim)?;
    }
    let cells: Vec<(usize, f64, u64)> = config
        .widths
        .iter()
        .flat_map(|&w| {
            config
                .lr_grid
                .iter()
                .flat_map(move |&lr| config.seeds.iter().map(move |&s| (w, lr, s)))
        })
        .collect();
    let loss = config.loss_for(&data);
    parallel_map(&cells, threads, |&(w, lr, seed)| train_cell(config, &data, loss, w, lr, seed))
        .into_iter()
        .collect()
}

fn train_cell(
    config: &ExperimentConfig,
    data: &TaskData,
    kind: LossKind,
    width: usize,
    lr: f64,
    seed: u64,
) -> Result<ResultRow> {
    let specs = mlp_specs(data.input_dim, width, config.depth, data.output_dim)?;
    let mut mlp = Mlp::build(&specs, config.scheme, config.optimizer, config.activation, seed)?;
    let rules = derive_rules(config.optimizer, &specs, config.scheme);
    let hp = HyperParams { eta: lr, ..config.hp };
    let mut state = OptState::with_seed(config.optimizer, &mlp, &hp, seed);
    let mut sampler = BatchSampler::new(data.n_train(), config.batch_size, seed)?;

    let mut completed = 0;
    let mut diverged = false;
    for _ in 0..config.steps {
        let idx = sampler.next_indices();
        let x = data.train_x.select_columns(&idx);
        let y = data.train_y.select(&idx);
        if train_step(&mut mlp, &mut state, &hp, &rules, &x, &y, kind).is_err() {
            diverged = true;
            break;
        }
        completed += 1;
    }
    let eval = |x, y| {
        mlp.forward(x)
            .and_then(|t| loss(&t, y, kind))
            .unwrap_or(f64::INFINITY)
    };
    let (mut train_loss, mut val_loss) = (f64::INFINITY, f64::INFINITY);
    if !diverged {
        train_loss = eval(&data.train_x, &data.train_y);
        val_loss = eval(&data.val_x, &data.val_y);
        if !(train_loss.is_finite() && val_loss.is_finite()) {
            diverged = true;
            train_loss = f64::INFINITY;
            val_loss = f64::INFINITY;
        }
    }
    Ok(ResultRow {
        width,
        lr,
        seed,
        steps: completed,
        train_loss,
        val_loss,
        diverged,
    })
}

/// Seed means per (width, lr), in first-appearance order.
pub fn seed_means(rows: &[ResultRow]) -> Vec<MeanRow> {
    let mut out: Vec<MeanRow> = Vec::new();
    for r in rows {
        let idx = out.iter().position(|m| m.width == r.width && m.lr.to_bits() == r.lr.to_bits());
        let m = match idx {
            Some(i) => &mut out[i],
            None => {
                out.push(MeanRow {
                    width: r.width,
                    lr: r.lr,
                    train_loss: 0.0,
                    val_loss: 0.0,
                    diverged: 0,
                    seeds: 0,
                });
                out.last_mut().expect("just pushed")
            }
        };
        m.seeds += 1;
        if r.diverged {
            m.diverged += 1;
        }
        m.train_loss += r.train_loss;
        m.val_loss += r.val_loss;
    }
    for m in &mut out {
        m.train_loss /= m.seeds as f64;
        m.val_loss /= m.seeds as f64;
    }
    out
}

/// For each width, the grid learning rate with the lowest mean validation
/// loss. Ties go to the smaller rate.
pub fn argmin_lr(rows: &[ResultRow]) -> Vec<(usize, f64)> {
    let means = seed_means(rows);
    let mut widths: Vec<usize> = means.iter().map(|m| m.width).collect();
    widths.dedup();
    widths
        .into_iter()
        .filter_map(|w| {
            means
                .iter()
                .filter(|m| m.width == w && m.val_loss.is_finite())
                .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss).then(a.lr.total_cmp(&b.lr)))
                .map(|m| (w, m.lr))
        })
        .collect()
}

/// Coordinate check over the configured widths, seeded by the first seed.
pub fn run_coord_check(config: &ExperimentConfig, threads: usize) -> Result<Vec<CoordCheckRecord>> {
    config.validate()?;
    let data = config.task.load()?;
    let spec = CoordCheckSpec {
        widths: config.widths.clone(),
        depth: config.depth,
        kind: config.optimizer,
        scheme: config.scheme,
        steps: config.steps,
        seed: config.seeds[0],
        activation: config.activation,
        loss: config.loss_for(&data),
        batch_size: config.batch_size,
        probe_size: config.probe_size,
        hp: config.hp,
    };
    coordinate_check(&spec, &data, threads)
}

/// One optimizer step per width from the scheme's initialization, followed
/// by a spectral probe of every layer.
pub fn run_spectral_probe(config: &ExperimentConfig, threads: usize) -> Result<Vec<(usize, Vec<SpectralProbe>)>> {
    config.validate()?;
    let data = config.task.load()?;
    let kind = config.loss_for(&data);
    let idx: Vec<usize> = (0..config.batch_size.min(data.n_train())).collect();
    let x = data.train_x.select_columns(&idx);
    let y = data.train_y.select(&idx);
    let seed = config.seeds[0];
    parallel_map(&config.widths, threads, |&w| {
        let specs = mlp_specs(data.input_dim, w, config.depth, data.output_dim)?;
        let before = Mlp::build(&specs, config.scheme, config.optimizer, config.activation, seed)?;
        let rules: Vec<ScalingRule> = derive_rules(config.optimizer, &specs, config.scheme);
        let mut after = before.clone();
        let mut state = OptState::with_seed(config.optimizer, &after, &config.hp, seed);
        train_step(&mut after, &mut state, &config.hp, &rules, &x, &y, kind)?;
        Ok((w, spectral_probe(&before, &after)?))
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::TaskSpec;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            task: TaskSpec::TeacherStudent {
                input_dim: 4,
                output_dim: 2,
                n_train: 32,
                n_val: 16,
                teacher_width: 8,
                data_seed: 1,
            },
            widths: vec![8, 16],
            lr_grid: vec![0.0, 0.01],
            seeds: vec![0, 1],
            steps: 5,
            batch_size: 4,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_lr_keeps_initial_loss() {
        let cfg = tiny();
        let rows = run_lr_sweep(&cfg, 0).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2);
        let data = cfg.task.load().unwrap();
        for r in rows.iter().filter(|r| r.lr == 0.0) {
            let specs = mlp_specs(4, r.width, cfg.depth, 2).unwrap();
            let mlp = Mlp::build(&specs, cfg.scheme, cfg.optimizer, cfg.activation, r.seed).unwrap();
            let init = mlp.evaluate(&data.val_x, &data.val_y, LossKind::Mse).unwrap();
            assert!((r.val_loss - init).abs() <= 1e-9);
            assert_eq!(r.steps, 5);
        }
    }

    #[test]
    fn rows_are_ordered_and_thread_independent() {
        let cfg = tiny();
        let a = run_lr_sweep(&cfg, 0).unwrap();
        let b = run_lr_sweep(&cfg, 3).unwrap();
        assert_eq!(a, b);
        let keys: Vec<(usize, u64)> = a.iter().map(|r| (r.width, r.seed)).collect();
        assert_eq!(keys, vec![(8, 0), (8, 1), (8, 0), (8, 1), (16, 0), (16, 1), (16, 0), (16, 1)]);
    }

    #[test]
    fn means_and_argmin() {
        let row = |width, lr, seed, val| ResultRow {
            width,
            lr,
            seed,
            steps: 1,
            train_loss: val,
            val_loss: val,
            diverged: false,
        };
        let rows = vec![
            row(8, 0.1, 0, 1.0),
            row(8, 0.1, 1, 3.0),
            row(8, 0.2, 0, 1.5),
            row(8, 0.2, 1, 1.5),
            row(16, 0.1, 0, 2.0),
            row(16, 0.2, 0, 1.0),
        ];
        let means = seed_means(&rows);
        assert_eq!(means[0].val_loss, 2.0);
        assert_eq!(means[0].seeds, 2);
        assert_eq!(argmin_lr(&rows), vec![(8, 0.2), (16, 0.2)]);
    }
}
