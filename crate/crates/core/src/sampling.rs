//! Seeded random test points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// `count` points uniform in the box `[lower, upper]`.
pub fn box_points(lower: &[f64], upper: &[f64], count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if lower.len() != upper.len() || lower.is_empty() {
        return Err(Error::InvalidInput(
            "box bounds must have equal, positive length".into(),
        ));
    }
    if lower
        .iter()
        .zip(upper)
        .any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite())
    {
        return Err(Error::InvalidInput(
            "box bounds must be finite with lower <= upper".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            lower
                .iter()
                .zip(upper)
                .map(|(l, u)| l + (u - l) * rng.gen::<f64>())
                .collect()
        })
        .collect())
}

/// `count` points uniform in the shell `r_min <= ‖x‖ <= r_max` of `R^dim`,
/// by rejection from the enclosing cube.
pub fn annulus_points(dim: usize, r_min: f64, r_max: f64, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if dim == 0 || !(0.0 <= r_min && r_min < r_max && r_max.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "annulus needs 0 <= r_min < r_max, got {r_min}, {r_max}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let p: Vec<f64> = (0..dim).map(|_| r_max * (2.0 * rng.gen::<f64>() - 1.0)).collect();
        let r = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r >= r_min && r <= r_max {
            out.push(p);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_bounded() {
        let a = box_points(&[-1.0, 0.0], &[1.0, 2.0], 50, 7).unwrap();
        assert_eq!(a, box_points(&[-1.0, 0.0], &[1.0, 2.0], 50, 7).unwrap());
        assert_ne!(a, box_points(&[-1.0, 0.0], &[1.0, 2.0], 50, 8).unwrap());
        assert!(a
            .iter()
            .all(|p| (-1.0..=1.0).contains(&p[0]) && (0.0..=2.0).contains(&p[1])));

        let r = annulus_points(2, 0.3, 0.9, 40, 1).unwrap();
        assert_eq!(r.len(), 40);
        assert!(r.iter().all(|p| {
            let n = (p[0] * p[0] + p[1] * p[1]).sqrt();
            (0.3..=0.9).contains(&n)
        }));
        assert!(annulus_points(2, 0.9, 0.3, 1, 1).is_err());
        assert!(box_points(&[1.0], &[0.0], 1, 1).is_err());
    }
}
