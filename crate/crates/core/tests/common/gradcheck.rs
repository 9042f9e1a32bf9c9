//! Backprop against central finite differences of a double-double loss.

#![allow(dead_code)]

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng as _;
use t2boot::mlp::{LossKind, MlpModel, Variant};
use t2boot::rng::seeded;
use t2boot::T2Grid;

use super::dd::{reference_loss, Dd, RefLayer, RefLoss};

pub struct Worst {
    pub checked: usize,
    pub failed: usize,
    pub max_rel: f64,
}

/// Every weight and bias of a 3 × 8 ReLU network: step 1e-5, 1e-6 relative
/// tolerance where either gradient exceeds 1e-8.
pub fn check(kind: LossKind) -> Worst {
    let grid = Arc::new(T2Grid::new(1.0, 2000.0, 12, t2boot::grid::Spacing::Log).unwrap());
    let model = MlpModel::new(Variant::P2t2, 4, &[8, 8, 8], &grid, 21).unwrap();
    let mut rng = seeded(4);
    let x = Array2::from_shape_fn((3, 8), |_| rng.random_range(-1.0..1.0));
    let t = {
        let mut t = Array2::from_shape_fn((3, 12), |_| rng.random::<f64>());
        for mut r in t.rows_mut() {
            let s = r.sum();
            r.mapv_inplace(|v| v / s);
        }
        t
    };
    let (_, grads) = model.loss_and_grad(&x.view(), &t.view(), kind).unwrap();
    let xs: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    let ts: Vec<Vec<f64>> = t.rows().into_iter().map(|r| r.to_vec()).collect();
    let to_ref = |m: &MlpModel| -> Vec<RefLayer> {
        m.layers()
            .iter()
            .map(|l| RefLayer {
                w: l.w.rows().into_iter().map(|r| r.to_vec()).collect(),
                b: l.b.to_vec(),
            })
            .collect()
    };
    let rl = match kind {
        LossKind::CrossEntropy => RefLoss::CrossEntropy,
        LossKind::Mse => RefLoss::Mse,
    };
    let h = 1e-5;
    let mut out = Worst {
        checked: 0,
        failed: 0,
        max_rel: 0.0,
    };
    let mut compare = |bp: f64, fd: f64| {
        if bp.abs().max(fd.abs()) <= 1e-8 {
            return;
        }
        let rel = (bp - fd).abs() / bp.abs().max(fd.abs());
        out.checked += 1;
        out.max_rel = out.max_rel.max(rel);
        if rel > 1e-6 {
            out.failed += 1;
        }
    };
    for l in 0..model.layers().len() {
        let (rows, cols) = model.layers()[l].w.dim();
        for k in 0..rows * (cols + 1) {
            let (i, j) = (k / (cols + 1), k % (cols + 1));
            let mut plus = model.clone();
            let mut minus = model.clone();
            let (theta_p, theta_m) = {
                let p = if j < cols { &mut plus.layers_mut()[l].w[(i, j)] } else { &mut plus.layers_mut()[l].b[i] };
                *p += h;
                let tp = *p;
                let m = if j < cols { &mut minus.layers_mut()[l].w[(i, j)] } else { &mut minus.layers_mut()[l].b[i] };
                *m -= h;
                (tp, *m)
            };
            let lp = reference_loss(&to_ref(&plus), &xs, &ts, &rl);
            let lm = reference_loss(&to_ref(&minus), &xs, &ts, &rl);
            let fd = ((lp - lm) / (Dd::from(theta_p) - Dd::from(theta_m))).to_f64();
            let bp = if j < cols { grads.layers[l].w[(i, j)] } else { grads.layers[l].b[i] };
            compare(bp, fd);
        }
    }
    out
}
