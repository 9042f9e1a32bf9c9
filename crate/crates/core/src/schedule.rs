//! Acquisition protocol and echo-train signals.

use serde::{Deserialize, Serialize};

use crate::error::{dim, param, Error, Result};

/// Names accepted by [`schedule_preset`].
pub const PRESETS: [&str; 2] = ["retest_7p9", "diabetes_7p74"];

/// Built-in 32-echo protocols with nominal 180° refocusing and T1 = 1000 ms.
///
/// `retest_7p9` uses ΔTE = 7.9 ms, `diabetes_7p74` ΔTE = 7.74 ms.
pub fn schedule_preset(name: &str) -> Result<AcquisitionSchedule> {
    let dte = match name {
        "retest_7p9" => 7.9,
        "diabetes_7p74" => 7.74,
        other => {
            return Err(Error::Config(format!(
                "unknown schedule preset `{other}` (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    AcquisitionSchedule::cpmg(32, dte, 180.0, 1000.0)
}

/// Physical protocol of a multi-echo spin-echo acquisition.
///
/// Times are in milliseconds and angles in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionSchedule {
    pub echo_times: Vec<f64>,
    pub excitation_deg: f64,
    pub refocus_train_deg: Vec<f64>,
    pub t1_ms: f64,
}

impl AcquisitionSchedule {
    /// Uniform CPMG train: `TE_i = (i + 1) * delta_te_ms`, constant refocusing angle.
    pub fn cpmg(n_echoes: usize, delta_te_ms: f64, refocus_deg: f64, t1_ms: f64) -> Result<Self> {
        let s = AcquisitionSchedule {
            echo_times: (1..=n_echoes).map(|i| i as f64 * delta_te_ms).collect(),
            excitation_deg: 90.0,
            refocus_train_deg: vec![refocus_deg; n_echoes],
            t1_ms,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn n_echoes(&self) -> usize {
        self.echo_times.len()
    }

    /// Echo spacing, taken as the first echo time.
    pub fn delta_te(&self) -> f64 {
        self.echo_times.first().copied().unwrap_or(0.0)
    }

    /// Copy with every refocusing angle replaced by `refocus_deg`.
    pub fn with_refocus(&self, refocus_deg: f64) -> Result<Self> {
        let mut s = self.clone();
        s.refocus_train_deg.iter_mut().for_each(|a| *a = refocus_deg);
        s.validate()?;
        Ok(s)
    }

    /// Structural checks that do not depend on the simulator.
    pub fn validate(&self) -> Result<()> {
        let n = self.echo_times.len();
        if n == 0 {
            return Err(param("schedule has no echoes"));
        }
        if self.refocus_train_deg.len() != n {
            return Err(dim(format!(
                "{} echo times but {} refocusing angles",
                n,
                self.refocus_train_deg.len()
            )));
        }
        if self.echo_times.iter().any(|t| !(t.is_finite() && *t > 0.0))
            || self.echo_times.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(param("echo times must be positive and strictly increasing"));
        }
        if self
            .refocus_train_deg
            .iter()
            .any(|a| !(a.is_finite() && *a > 0.0 && *a <= 180.0))
        {
            return Err(param("refocusing angles must lie in (0, 180] degrees"));
        }
        if !(self.excitation_deg > 0.0 && self.excitation_deg < 180.0) {
            return Err(param("excitation angle must lie in (0, 180) degrees"));
        }
        if !(self.t1_ms > 0.0) {
            return Err(param("T1 must be positive"));
        }
        Ok(())
    }

    /// Additional requirement of the phase-graph engine: `TE_i = (i+1)·ΔTE`.
    pub fn check_uniform(&self) -> Result<()> {
        self.validate()?;
        let dte = self.delta_te();
        for (i, &te) in self.echo_times.iter().enumerate() {
            let expect = (i + 1) as f64 * dte;
            if ((te - expect) / expect).abs() > 1e-9 {
                return Err(Error::UnsupportedSchedule(format!(
                    "echo {i} at {te} ms breaks uniform spacing of {dte} ms"
                )));
            }
        }
        Ok(())
    }
}

/// Echo amplitudes paired with the echo times they were sampled at.
///
/// The echo times may be a full train or any subset of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EchoSignal {
    pub echo_times: Vec<f64>,
    pub amplitudes: Vec<f64>,
}

impl EchoSignal {
    pub fn new(echo_times: Vec<f64>, amplitudes: Vec<f64>) -> Result<Self> {
        if echo_times.len() != amplitudes.len() {
            return Err(dim(format!(
                "{} echo times but {} amplitudes",
                echo_times.len(),
                amplitudes.len()
            )));
        }
        if echo_times.is_empty() {
            return Err(param("signal has no echoes"));
        }
        Ok(EchoSignal {
            echo_times,
            amplitudes,
        })
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// Restrict to the given echo indices (assumed in range).
    pub fn subset(&self, indices: &[usize]) -> EchoSignal {
        EchoSignal {
            echo_times: indices.iter().map(|&i| self.echo_times[i]).collect(),
            amplitudes: indices.iter().map(|&i| self.amplitudes[i]).collect(),
        }
    }

    /// Amplitudes divided by the first echo.
    ///
    /// A non-positive first echo leaves the amplitudes unscaled.
    pub fn normalized_amplitudes(&self) -> Vec<f64> {
        let s0 = self.amplitudes[0];
        if s0 > 0.0 {
            self.amplitudes.iter().map(|a| a / s0).collect()
        } else {
            self.amplitudes.clone()
        }
    }

    pub fn scaled(&self, c: f64) -> EchoSignal {
        EchoSignal {
            echo_times: self.echo_times.clone(),
            amplitudes: self.amplitudes.iter().map(|a| a * c).collect(),
        }
    }
}
