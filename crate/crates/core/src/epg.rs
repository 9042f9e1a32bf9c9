//! Extended phase graph simulation of CPMG echo trains.
//!
//! The magnetization is tracked as configuration states `(F+_k, F-_k, Z_k)`.
//! After an ideal excitation along the refocusing axis, each echo period is
//! relax/shift over half an echo spacing, a refocusing rotation, then another
//! relax/shift; the echo amplitude is `|F+_0|` at the end of the period.
//!
//! An N-echo train only ever needs orders `0..=N`: a state created above order
//! N cannot dephase back to order 0 before the last echo.

use num_complex::Complex64;

use crate::error::{param, Result};
use crate::schedule::AcquisitionSchedule;

const I: Complex64 = Complex64::new(0.0, 1.0);

struct Epg {
    fp: Vec<Complex64>,
    fm: Vec<Complex64>,
    z: Vec<Complex64>,
}

impl Epg {
    fn excited(orders: usize, excitation_rad: f64) -> Self {
        let mut fp = vec![Complex64::new(0.0, 0.0); orders];
        let mut fm = fp.clone();
        let mut z = fp.clone();
        fp[0] = Complex64::new(excitation_rad.sin(), 0.0);
        fm[0] = fp[0];
        z[0] = Complex64::new(excitation_rad.cos(), 0.0);
        Epg { fp, fm, z }
    }

    /// Relax, then dephase by one order. Only orders `0..=hi` are touched;
    /// everything above is either still zero or can no longer reach order 0.
    fn relax_shift(&mut self, e2: f64, e1: f64, hi: usize) {
        let k = (hi + 1).min(self.fp.len());
        for v in self.fp[..k].iter_mut().chain(self.fm[..k].iter_mut()) {
            *v *= e2;
        }
        for v in self.z[1..k].iter_mut() {
            *v *= e1;
        }
        self.z[0] = self.z[0] * e1 + (1.0 - e1);

        let top = (k + 1).min(self.fp.len());
        self.fp.copy_within(0..top - 1, 1);
        self.fm.copy_within(1..top, 0);
        self.fm[top - 1] = Complex64::new(0.0, 0.0);
        self.fp[0] = self.fm[0].conj();
    }

    /// Rotation by `alpha` about the axis the excitation left the magnetization on.
    fn refocus(&mut self, alpha_rad: f64, hi: usize) {
        let c2 = (alpha_rad / 2.0).cos().powi(2);
        let s2 = (alpha_rad / 2.0).sin().powi(2);
        let sa = alpha_rad.sin();
        let ca = alpha_rad.cos();
        for k in 0..=hi.min(self.fp.len() - 1) {
            let (fp, fm, z) = (self.fp[k], self.fm[k], self.z[k]);
            self.fp[k] = c2 * fp + s2 * fm - I * sa * z;
            self.fm[k] = s2 * fp + c2 * fm + I * sa * z;
            self.z[k] = -0.5 * I * sa * fp + 0.5 * I * sa * fm + ca * z;
        }
    }
}

/// Echo amplitudes of a spin with relaxation time `t2_ms` under `schedule`.
///
/// Amplitudes are normalized so that a lossless spin gives 1.0 at every echo.
/// The schedule must be a uniform train (`TE_i = (i+1)·ΔTE`).
pub fn epg_simulate(schedule: &AcquisitionSchedule, t2_ms: f64) -> Result<Vec<f64>> {
    if !(t2_ms > 0.0) {
        return Err(param(format!("T2 must be positive, got {t2_ms}")));
    }
    schedule.check_uniform()?;
    let n = schedule.n_echoes();
    let tau = schedule.delta_te() / 2.0;
    let e2 = (-tau / t2_ms).exp();
    let e1 = (-tau / schedule.t1_ms).exp();
    let excitation = schedule.excitation_deg.to_radians();
    let norm = excitation.sin();

    let mut state = Epg::excited(n + 1, excitation);
    let mut echoes = Vec::with_capacity(n);
    // After h half-periods states reach order h; with 2n−h half-periods left,
    // only orders up to 2n−h can still be refocused into the final echo.
    let reach = |h: usize| h.min(2 * n - h);
    for (e, &alpha) in schedule.refocus_train_deg.iter().enumerate() {
        state.relax_shift(e2, e1, reach(2 * e));
        state.refocus(alpha.to_radians(), reach(2 * e + 1));
        state.relax_shift(e2, e1, reach(2 * e + 1));
        echoes.push(state.fp[0].norm() / norm);
    }
    Ok(echoes)
}
