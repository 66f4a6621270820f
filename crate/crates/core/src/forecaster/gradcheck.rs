use serde::{Deserialize, Serialize};

use super::{ForecasterError, ForecasterParams, TrainingSample};

/// Below this magnitude two gradients are compared on an absolute scale, since
/// central differences carry roughly `eps * loss / step` of rounding noise.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: Option<String>,
    pub parameters_checked: usize,
    pub loss: f64,
}

/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares the analytic loss gradient with central finite differences of
/// width `step` on every parameter.
pub fn gradient_check(
    params: &ForecasterParams,
    sample: &TrainingSample,
    step: f64,
) -> Result<GradientCheckReport, ForecasterError> {
    let (loss, analytic) = params.loss_and_gradient(sample)?;
    let mut probe = params.clone();
    let mut worst = (0.0, None);
    for spec in params.tensors() {
        for k in 0..spec.len() {
            let i = spec.offset + k;
            let original = probe.values[i];
            probe.values[i] = original + step;
            let up = probe.loss(sample)?;
            probe.values[i] = original - step;
            let down = probe.loss(sample)?;
            probe.values[i] = original;
            let numeric = (up - down) / (2.0 * step);
            let err = relative_error(analytic[i], numeric);
            if err > worst.0 {
                worst = (err, Some(format!("{}[{k}]", spec.name)));
            }
        }
    }
    Ok(GradientCheckReport {
        max_relative_error: worst.0,
        worst_parameter: worst.1,
        parameters_checked: params.len(),
        loss,
    })
}
