use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use hedgebench::market_sim::{compute_norm_stats, simulate_paths, HestonParams};
use hedgebench::objective::{CostModel, OptionSpec};
use hedgebench::optim::{hybrid_step, AdamHyper, AdamState, KfacHyper, KfacState, KfacStats, LossProbe};
use hedgebench::policy::{ArchConfig, PolicyParams};
use hedgebench::rng::{Domain, NormalStream};
use hedgebench::train::{train, Dataset, OptimizerKind, TrainConfig};

/// Least squares on the output layer alone: loss = ½ Σ (w·a_i - y_i)².
/// With unit mean squared residual at the start (so G = 1), zero damping
/// and unit step size, one hybrid step is the exact Newton step and lands
/// on the least-squares solution.
#[test]
fn hybrid_step_solves_least_squares_in_one_newton_step() {
    let arch = ArchConfig {
        hidden_dim: 3,
        ..ArchConfig::default()
    };
    let n = 40;
    let mut noise = NormalStream::new(17, Domain::Init, 0);
    let acts = Array2::from_shape_fn((n, 4), |(_, j)| if j == 3 { 1.0 } else { noise.next_normal() });
    let raw: Vec<f64> = (0..n).map(|_| noise.next_normal()).collect();
    let scale = (raw.iter().map(|y| y * y).sum::<f64>() / n as f64).sqrt();
    let y: Vec<f64> = raw.iter().map(|v| v / scale).collect();

    // w = 0 so the residuals are -y with mean square exactly 1.
    let mut params = PolicyParams::zeros(arch).unwrap();
    let residual: Vec<f64> = y.iter().map(|v| -v).collect();
    let mut grads = PolicyParams::zeros(arch).unwrap();
    for (i, r) in residual.iter().enumerate() {
        for j in 0..4 {
            grads.output_mut()[j] += r * acts[[i, j]];
        }
    }
    let signals = Array2::from_shape_fn((n, 1), |(i, _)| residual[i]);

    let mut adam = AdamState::new(
        arch.output_offset(),
        AdamHyper {
            lr: 0.0,
            ..AdamHyper::default()
        },
    );
    let mut kfac = KfacState::new(
        4,
        1,
        KfacHyper {
            lr: 1.0,
            ..KfacHyper::default()
        },
    );
    kfac.damping = 0.0;
    let loss = |w: &[f64]| -> hedgebench::Result<f64> {
        Ok((0..n)
            .map(|i| {
                let pred: f64 = (0..4).map(|j| w[j] * acts[[i, j]]).sum();
                0.5 * (pred - y[i]).powi(2)
            })
            .sum())
    };
    let probe = LossProbe {
        current_loss: loss(params.output()).unwrap(),
        eval: &loss,
    };
    let stats = KfacStats {
        activations: acts.view(),
        out_grads: signals.view(),
    };
    let report = hybrid_step(&mut adam, &mut kfac, &mut params, &grads, stats, Some(probe)).unwrap();

    let x = DMatrix::from_fn(n, 4, |i, j| acts[[i, j]]);
    let target = DVector::from_vec(y.clone());
    let ls = (x.transpose() * &x).lu().solve(&(x.transpose() * target)).unwrap();
    for j in 0..4 {
        assert_relative_eq!(params.output()[j], ls[j], max_relative = 1e-10, epsilon = 1e-12);
    }
    // A quadratic loss is modelled exactly, so the reduction ratio is 1.
    assert_relative_eq!(report.reduction_ratio.unwrap(), 1.0, max_relative = 1e-9);
    assert!(params.as_slice()[..arch.output_offset()].iter().all(|&v| v == 0.0));
}

#[test]
fn damping_reacts_to_previous_ratio() {
    let arch = ArchConfig {
        hidden_dim: 2,
        ..ArchConfig::default()
    };
    let acts = Array2::from_shape_fn((6, 3), |(i, j)| if j == 2 { 1.0 } else { (i * 3 + j) as f64 * 0.1 });
    let signals = Array2::from_elem((6, 1), 0.5);
    let mut params = PolicyParams::zeros(arch).unwrap();
    let mut grads = PolicyParams::zeros(arch).unwrap();
    grads.output_mut().copy_from_slice(&[0.3, -0.2, 0.1]);
    let mut adam = AdamState::new(arch.output_offset(), AdamHyper::default());
    let mut kfac = KfacState::new(3, 1, KfacHyper::default());
    let start = kfac.damping;
    // A probe reporting a loss increase gives a negative ratio ...
    let worse = |_: &[f64]| -> hedgebench::Result<f64> { Ok(10.0) };
    let probe = LossProbe {
        current_loss: 1.0,
        eval: &worse,
    };
    let stats = KfacStats {
        activations: acts.view(),
        out_grads: signals.view(),
    };
    let r = hybrid_step(&mut adam, &mut kfac, &mut params, &grads, stats, Some(probe)).unwrap();
    assert!(r.reduction_ratio.unwrap() < 0.0);
    assert_eq!(kfac.damping, start);
    // ... which raises the damping at the next step.
    let stats = KfacStats {
        activations: acts.view(),
        out_grads: signals.view(),
    };
    hybrid_step(&mut adam, &mut kfac, &mut params, &grads, stats, None).unwrap();
    assert_relative_eq!(kfac.damping, start * 1.5, max_relative = 1e-15);
}

/// Both optimizers start from the same weights and see the same first
/// batch, so after a single full-batch step their LSTM weights agree.
#[test]
fn optimizers_share_initialization_and_data_order() {
    let heston = HestonParams {
        n_steps: 8,
        dt: 0.05,
        ..HestonParams::default()
    };
    let batch = simulate_paths(&heston, 48, 9).unwrap();
    let (tr, va) = hedgebench::market_sim::split_at(&batch, 32).unwrap();
    let stats = compute_norm_stats(&tr).unwrap();
    let train_data = Dataset::from_batch(&tr, &stats).unwrap();
    let val_data = Dataset::from_batch(&va, &stats).unwrap();
    let arch = ArchConfig {
        hidden_dim: 6,
        ..ArchConfig::default()
    };
    let run = |optimizer| {
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 32,
            optimizer,
            ..TrainConfig::default()
        };
        train(&cfg, arch, &train_data, &val_data, &OptionSpec::default(), &CostModel::default()).unwrap()
    };
    let adam = run(OptimizerKind::Adam);
    let kfac = run(OptimizerKind::Kfac);
    let split = arch.output_offset();
    assert_eq!(adam.params.as_slice()[..split], kfac.params.as_slice()[..split]);
    assert_ne!(adam.params.output(), kfac.params.output());
}
