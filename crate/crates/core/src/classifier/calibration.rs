//! Platt-style calibration: `q = softmax(z / T + b)`.

use serde::{Deserialize, Serialize};

use super::{softmax, MoricModel, Sample};
use crate::error::{Error, Result};

pub const CALIBRATION_STEPS: usize = 500;
pub const CALIBRATION_STEP_SIZE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub temperature: f64,
    pub bias: Vec<f64>,
}

impl Calibration {
    pub fn identity(n_classes: usize) -> Self {
        Calibration {
            temperature: 1.0,
            bias: vec![0.0; n_classes],
        }
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("calibration temperature must be positive"));
        }
        if self.bias.len() != n_classes || self.bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("calibration bias does not match class count"));
        }
        Ok(())
    }

    pub fn apply(&self, logits: &[f64]) -> Vec<f64> {
        let s: Vec<f64> = logits
            .iter()
            .zip(&self.bias)
            .map(|(z, b)| z / self.temperature + b)
            .collect();
        softmax(&s)
    }
}

/// Fits `(log T, b)` by gradient descent on the mean negative log-likelihood,
/// starting from the identity.
pub fn fit_calibration(logits: &[Vec<f64>], classes: &[usize], steps: usize, step_size: f64) -> Result<Calibration> {
    if logits.is_empty() || logits.len() != classes.len() {
        return Err(Error::invalid("calibration set is empty"));
    }
    let c = logits[0].len();
    if logits.iter().any(|z| z.len() != c) || classes.iter().any(|&k| k >= c) {
        return Err(Error::invalid("calibration logits disagree on class count"));
    }
    let n = logits.len() as f64;
    let mut log_t = 0.0f64;
    let mut bias = vec![0.0; c];
    for _ in 0..steps {
        let cal = Calibration {
            temperature: log_t.exp(),
            bias: bias.clone(),
        };
        let mut g_t = 0.0;
        let mut g_b = vec![0.0; c];
        for (z, &k) in logits.iter().zip(classes) {
            let q = cal.apply(z);
            for j in 0..c {
                let r = q[j] - if j == k { 1.0 } else { 0.0 };
                g_b[j] += r;
                g_t -= r * z[j] / cal.temperature;
            }
        }
        log_t -= step_size * g_t / n;
        for (b, g) in bias.iter_mut().zip(&g_b) {
            *b -= step_size * g / n;
        }
    }
    let cal = Calibration {
        temperature: log_t.exp(),
        bias,
    };
    cal.validate(c)?;
    Ok(cal)
}

/// Fits a calibration for `model` on held-out samples.
pub fn calibrate(model: &MoricModel, cal_set: &[Sample<'_>], steps: usize, step_size: f64) -> Result<Calibration> {
    if cal_set.is_empty() {
        return Err(Error::invalid("calibration set is empty"));
    }
    let logits = cal_set
        .iter()
        .map(|s| model.logits(s.features))
        .collect::<Result<Vec<_>>>()?;
    let classes: Vec<usize> = cal_set.iter().map(|s| s.class).collect();
    fit_calibration(&logits, &classes, steps, step_size)
}

#[cfg(test)]
mod tests {
    use super::super::argmax;
    use super::*;

    #[test]
    fn identity_equals_softmax() {
        let z = [1.5, -0.3, 0.2];
        assert_eq!(Calibration::identity(3).apply(&z), softmax(&z));
    }

    #[test]
    fn temperature_two_example() {
        let cal = Calibration {
            temperature: 2.0,
            bias: vec![0.0, 0.0],
        };
        let q = cal.apply(&[2.0, 0.0]);
        let e = std::f64::consts::E;
        assert!((q[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((q[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((q[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn huge_temperature_is_uniform() {
        let cal = Calibration {
            temperature: 1e12,
            bias: vec![0.0; 4],
        };
        for q in cal.apply(&[3.0, -2.0, 0.5, 9.0]) {
            assert!((q - 0.25).abs() < 1e-9);
        }
    }

    #[test]
    fn temperature_only_keeps_argmax() {
        let z = [0.1, 2.5, 2.4, -1.0];
        for t in [0.01, 0.5, 1.0, 7.0, 1e6] {
            let cal = Calibration {
                temperature: t,
                bias: vec![0.0; 4],
            };
            assert_eq!(argmax(&cal.apply(&z)), argmax(&softmax(&z)));
        }
    }

    #[test]
    fn fit_reduces_nll_on_overconfident_logits() {
        // Confidently wrong a third of the time: the fit should cool the logits.
        let logits: Vec<Vec<f64>> = (0..30)
            .map(|i| if i % 3 == 0 { vec![0.0, 8.0] } else { vec![8.0, 0.0] })
            .collect();
        let classes = vec![0; 30];
        let nll = |c: &Calibration| -> f64 {
            logits
                .iter()
                .zip(&classes)
                .map(|(z, &k)| -c.apply(z)[k].ln())
                .sum::<f64>()
                / 30.0
        };
        let fit = fit_calibration(&logits, &classes, CALIBRATION_STEPS, CALIBRATION_STEP_SIZE).unwrap();
        assert!(fit.temperature > 1.0);
        assert!(nll(&fit) < nll(&Calibration::identity(2)));
        assert!(fit_calibration(&[], &[], 10, 0.01).is_err());
    }
}
