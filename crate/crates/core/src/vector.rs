use crate::error::{Error, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity. Zero vectors are an error rather than similarity 0.
pub fn cosine(a: &[f64], b: &[f64], what: &'static str) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            what,
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if !(na > 0.0 && nb > 0.0) {
        return Err(Error::DegenerateVector(what));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn unit(a: &[f64], what: &'static str) -> Result<Vec<f64>> {
    let n = norm(a);
    if !(n > 0.0) {
        return Err(Error::DegenerateVector(what));
    }
    Ok(a.iter().map(|x| x / n).collect())
}

/// Component-wise mean of equal-length vectors.
pub fn mean_pool(vs: &[Vec<f64>]) -> Option<Vec<f64>> {
    let first = vs.first()?;
    let mut acc = vec![0.0; first.len()];
    for v in vs {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Some(acc)
}
