//! Target signals for the readout-learning task.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Four-superimposed-sine target: `sum_{k=1..4} (A/k) sin(2 pi k f0 t)`,
/// normalized to unit RMS.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourSineParams {
    pub amplitude: f64,
    /// Base frequency in cycles per step; the period is `1 / base_freq` steps.
    pub base_freq: f64,
}

impl Default for FourSineParams {
    fn default() -> Self {
        FourSineParams {
            amplitude: 1.3,
            base_freq: 1.0 / 60.0,
        }
    }
}

impl FourSineParams {
    /// Steps per full period.
    pub fn period(&self) -> f64 {
        1.0 / self.base_freq
    }

    /// Analytic RMS of the raw (un-normalized) sum. The four harmonics are
    /// orthogonal over a period, so the mean square is the sum of the
    /// per-harmonic mean squares `(A/k)^2 / 2`.
    fn raw_rms(&self) -> f64 {
        let sum_inv_sq: f64 = (1..=4).map(|k| 1.0 / (k * k) as f64).sum();
        (self.amplitude * self.amplitude * sum_inv_sq / 2.0).sqrt()
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let raw: f64 = (1..=4)
            .map(|k| {
                self.amplitude / k as f64
                    * (2.0 * std::f64::consts::PI * k as f64 * self.base_freq * t).sin()
            })
            .sum();
        raw / self.raw_rms()
    }
}

/// Sample the four-sine target at integer steps `0..steps`.
pub fn gen_four_sine(steps: usize, params: &FourSineParams) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(CoreError::contract("four-sine signal needs steps >= 1"));
    }
    if !(params.amplitude > 0.0) || !(params.base_freq > 0.0) {
        return Err(CoreError::contract(
            "four-sine amplitude and base_freq must be positive",
        ));
    }
    Ok((0..steps).map(|t| params.value_at(t as f64)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rms_is_one_over_whole_periods() {
        let params = FourSineParams::default();
        let signal = gen_four_sine(600, &params).unwrap(); // 10 periods
        let rms = (signal.iter().map(|v| v * v).sum::<f64>() / 600.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-3, "rms {rms}");
    }

    #[test]
    fn signal_is_periodic() {
        let params = FourSineParams::default();
        let period = params.period() as usize;
        let signal = gen_four_sine(3 * period, &params).unwrap();
        for t in 0..period {
            assert!(
                (signal[t] - signal[t + period]).abs() < 1e-9,
                "step {t}: {} vs {}",
                signal[t],
                signal[t + period]
            );
        }
    }

    #[test]
    fn spectral_peaks_sit_at_the_four_harmonics() {
        // Independent oracle: naive DFT magnitude per frequency bin.
        let params = FourSineParams::default();
        let n = 600usize; // 10 periods -> harmonic k occupies bin 10k
        let signal = gen_four_sine(n, &params).unwrap();
        let mut mags = vec![0.0f64; n / 2];
        for (bin, mag) in mags.iter_mut().enumerate() {
            let (mut re, mut im) = (0.0f64, 0.0f64);
            for (t, &v) in signal.iter().enumerate() {
                let phase = -2.0 * std::f64::consts::PI * bin as f64 * t as f64 / n as f64;
                re += v * phase.cos();
                im += v * phase.sin();
            }
            *mag = (re * re + im * im).sqrt();
        }
        let peak_bins = [10usize, 20, 30, 40];
        let floor: f64 = mags
            .iter()
            .enumerate()
            .filter(|(b, _)| !peak_bins.contains(b))
            .map(|(_, m)| *m)
            .fold(0.0, f64::max);
        for &b in &peak_bins {
            assert!(
                mags[b] > 10.0 * floor.max(1e-9),
                "bin {b} magnitude {} vs off-peak floor {floor}",
                mags[b]
            );
        }
        // Amplitudes fall off as 1/k.
        assert!(mags[10] > mags[20] && mags[20] > mags[30] && mags[30] > mags[40]);
    }

    #[test]
    fn contract_violations() {
        assert!(gen_four_sine(0, &FourSineParams::default()).is_err());
        let bad = FourSineParams {
            amplitude: 0.0,
            base_freq: 1.0 / 60.0,
        };
        assert!(gen_four_sine(10, &bad).is_err());
    }
}
