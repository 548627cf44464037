use crate::error::{Error, Result};

/// Evaluates both sides of the compact-multiplier identity on a synthetic
/// batch of `(Δφ, λ)` pairs: `Σ λ(s)Δφ(s)` and `λ_max Σ [Δφ(s)]⁺`.
///
/// The batch must satisfy statewise complementary slackness: `λ = λ_max`
/// where `Δφ > 0`, and `λ·Δφ = 0` everywhere else.
pub fn lemma2_fixture_check(batch: &[(f64, f64)], lambda_max: f64) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(Error::Usage("empty fixture batch".into()));
    }
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    for (i, &(delta, lambda)) in batch.iter().enumerate() {
        if !(0.0..=lambda_max).contains(&lambda) {
            return Err(Error::Usage(format!("row {i}: lambda {lambda} outside [0, {lambda_max}]")));
        }
        if delta > 0.0 && lambda != lambda_max {
            return Err(Error::Usage(format!(
                "row {i}: violating state must carry lambda_max, got {lambda}"
            )));
        }
        if delta <= 0.0 && lambda * delta != 0.0 {
            return Err(Error::Usage(format!(
                "row {i}: slackness broken, lambda * delta = {}",
                lambda * delta
            )));
        }
        lhs += lambda * delta;
        rhs += delta.max(0.0);
    }
    Ok((lhs, lambda_max * rhs))
}
