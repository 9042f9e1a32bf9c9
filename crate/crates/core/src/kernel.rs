//! Discretized decay kernel and the noiseless forward model.

use std::io::{BufRead, Write};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::distribution::T2Distribution;
use crate::epg::epg_simulate;
use crate::error::{dim, param, Error, Result};
use crate::grid::T2Grid;
use crate::io::fmt17;
use crate::schedule::{AcquisitionSchedule, EchoSignal};

/// Echo amplitudes for every grid T2, one column per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayKernel {
    matrix: Array2<f64>,
    schedule: AcquisitionSchedule,
    grid: Arc<T2Grid>,
}

/// Assemble the `N_echoes × N_t2` kernel by simulating every grid point.
pub fn build_kernel(schedule: &AcquisitionSchedule, grid: &Arc<T2Grid>) -> Result<DecayKernel> {
    let (n, m) = (schedule.n_echoes(), grid.len());
    let mut matrix = Array2::zeros((n, m));
    for (j, &t2) in grid.values().iter().enumerate() {
        let col = epg_simulate(schedule, t2)?;
        matrix.column_mut(j).assign(&ndarray::ArrayView1::from(&col));
    }
    Ok(DecayKernel {
        matrix,
        schedule: schedule.clone(),
        grid: Arc::clone(grid),
    })
}

/// `m0 · K p`: the noiseless signal of distribution `p`.
pub fn forward_signal(kernel: &DecayKernel, p: &T2Distribution, m0: f64) -> Result<EchoSignal> {
    if !(m0 > 0.0) {
        return Err(param(format!("m0 must be positive, got {m0}")));
    }
    if !p.is_on(&kernel.grid) {
        return Err(dim("distribution grid differs from kernel grid"));
    }
    let amplitudes = kernel.apply(p.weights()).into_iter().map(|v| m0 * v).collect();
    Ok(EchoSignal {
        echo_times: kernel.schedule.echo_times.clone(),
        amplitudes,
    })
}

#[derive(Serialize, Deserialize)]
struct KernelHeader {
    format_version: u32,
    rows: usize,
    cols: usize,
    schedule: AcquisitionSchedule,
    grid: T2Grid,
}

impl DecayKernel {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn schedule(&self) -> &AcquisitionSchedule {
        &self.schedule
    }

    pub fn grid(&self) -> &Arc<T2Grid> {
        &self.grid
    }

    pub fn n_echoes(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_t2(&self) -> usize {
        self.matrix.ncols()
    }

    /// `K x` for arbitrary (not necessarily normalized) weights.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.matrix
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(x).map(|(k, w)| k * w).sum())
            .collect()
    }

    /// Write the kernel as a one-line JSON header followed by row-major CSV.
    pub fn write_export<W: Write>(&self, mut w: W) -> Result<()> {
        let header = KernelHeader {
            format_version: 1,
            rows: self.n_echoes(),
            cols: self.n_t2(),
            schedule: self.schedule.clone(),
            grid: (*self.grid).clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for row in self.matrix.rows() {
            let line: Vec<String> = row.iter().map(|&v| fmt17(v)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// Read a kernel written by [`DecayKernel::write_export`].
    pub fn read_export<R: BufRead>(r: R) -> Result<DecayKernel> {
        let corrupt = |reason: String| Error::Corrupt {
            path: "<kernel>".into(),
            reason,
        };
        let mut lines = r.lines();
        let head = lines.next().ok_or_else(|| corrupt("missing header".into()))??;
        let header: KernelHeader = serde_json::from_str(&head)?;
        let mut matrix = Array2::zeros((header.rows, header.cols));
        for i in 0..header.rows {
            let line = lines
                .next()
                .ok_or_else(|| corrupt(format!("missing row {i}")))??;
            let vals: Vec<f64> = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| corrupt(format!("row {i}: {e}")))?;
            if vals.len() != header.cols {
                return Err(corrupt(format!("row {i} has {} columns", vals.len())));
            }
            matrix.row_mut(i).assign(&ndarray::ArrayView1::from(&vals));
        }
        Ok(DecayKernel {
            matrix,
            schedule: header.schedule,
            grid: Arc::new(header.grid),
        })
    }
}
