//! Plain-vector forms of the enquirer normalization and the gated mixture.

use crate::error::{Error, Result};

/// Normalizes the elementwise product `r ∘ f ∘ u` into a distribution over
/// candidates. Falls back to uniform when every product is zero.
pub fn dynamic_entity_dist(r: &[f64], f: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    if r.len() != f.len() || r.len() != u.len() {
        return Err(Error::Internal(format!(
            "score length mismatch: r={} f={} u={}",
            r.len(),
            f.len(),
            u.len()
        )));
    }
    if r.is_empty() {
        return Ok(Vec::new());
    }
    let prod: Vec<f64> = r.iter().zip(f).zip(u).map(|((a, b), c)| a * b * c).collect();
    let sum: f64 = prod.iter().sum();
    if sum > 0.0 {
        Ok(prod.into_iter().map(|p| p / sum).collect())
    } else {
        Ok(vec![1.0 / r.len() as f64; r.len()])
    }
}

/// Same as [`dynamic_entity_dist`] with one scalar `f` shared by every candidate.
pub fn dynamic_entity_dist_scalar(r: &[f64], f: f64, u: &[f64]) -> Result<Vec<f64>> {
    dynamic_entity_dist(r, &vec![f; r.len()], u)
}

/// `[(1 - g) · p_c ; g · p_e]` over `V_C` followed by the candidates.
pub fn mix(p_c: &[f64], p_e: &[f64], gate: f64) -> Vec<f64> {
    let gate = if p_e.is_empty() { 0.0 } else { gate };
    p_c.iter()
        .map(|p| (1.0 - gate) * p)
        .chain(p_e.iter().map(|p| gate * p))
        .collect()
}
