use super::MetricError;

/// `y = E · x^alpha`, fitted by least squares in log-log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub e: f64,
    pub alpha: f64,
    pub r2: f64,
}

impl PowerLawFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.e * x.powf(self.alpha)
    }
}

pub fn fit_power_law(xs: &[f64], ys: &[f64]) -> Result<PowerLawFit, MetricError> {
    if xs.len() != ys.len() {
        return Err(MetricError::Argument("xs and ys differ in length".into()));
    }
    if xs.len() < 2 {
        return Err(MetricError::Argument(format!("need ≥2 points for a power-law fit, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(MetricError::Argument("power-law fit needs strictly positive finite inputs".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(MetricError::Argument("power-law fit needs at least two distinct x values".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let alpha = sxy / sxx;
    let intercept = my - alpha * mx;
    let ss_tot: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(x, y)| (y - intercept - alpha * x).powi(2))
        .sum();
    // a constant response is fitted perfectly by alpha = 0
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(PowerLawFit {
        e: intercept.exp(),
        alpha,
        r2,
    })
}
