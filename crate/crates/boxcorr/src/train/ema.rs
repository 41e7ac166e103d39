//! Exponential-moving-average target update and its momentum ramp.

use crate::nn::{NetError, ParamStore};
use crate::scalar::Scalar;

/// In-place `target <- m * target + (1 - m) * online` over every parameter
/// the target holds. Names missing from the online store, or shape
/// conflicts, are registry errors.
pub fn ema_update<S: Scalar>(
    online: &ParamStore<S>,
    target: &mut ParamStore<S>,
    m: f64,
) -> Result<(), NetError> {
    let names = target.names();
    for name in names {
        let src_shape = online.get(&name)?.shape.clone();
        let dst = target.get_mut(&name)?;
        if dst.shape != src_shape {
            return Err(NetError::ShapeConflict {
                name,
                expected: dst.shape.clone(),
                got: src_shape,
            });
        }
        let src = &online.get(&name)?.data;
        for (t, o) in target.get_mut(&name)?.data.iter_mut().zip(src.clone()) {
            *t = S::from_f64(m * t.as_f64() + (1.0 - m) * o.as_f64());
        }
    }
    Ok(())
}

/// Momentum ramped from `base_m` toward 1 on a cosine: full trainings end
/// with a frozen target. `step` is clamped to `[0, total]`.
pub fn ema_momentum_at(step: usize, total_steps: usize, base_m: f64) -> f64 {
    if total_steps == 0 {
        return 1.0;
    }
    let t = (step as f64 / total_steps as f64).min(1.0);
    1.0 - (1.0 - base_m) * ((std::f64::consts::PI * t).cos() + 1.0) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(vals: &[(&str, Vec<f64>)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (name, v) in vals {
            let n = v.len();
            s.insert(name, vec![n], v.clone());
        }
        s
    }

    #[test]
    fn momentum_one_freezes_target() {
        let online = store(&[("a", vec![1.0, 2.0])]);
        let mut target = store(&[("a", vec![5.0, 6.0])]);
        ema_update(&online, &mut target, 1.0).unwrap();
        assert_eq!(target.get("a").unwrap().data, vec![5.0, 6.0]);
    }

    #[test]
    fn momentum_zero_copies_online() {
        let online = store(&[("a", vec![1.0, 2.0])]);
        let mut target = store(&[("a", vec![5.0, 6.0])]);
        ema_update(&online, &mut target, 0.0).unwrap();
        assert_eq!(target.get("a").unwrap().data, vec![1.0, 2.0]);
    }

    #[test]
    fn hand_fixture_m099() {
        let online = store(&[("a", vec![1.0])]);
        let mut target = store(&[("a", vec![0.0])]);
        ema_update(&online, &mut target, 0.99).unwrap();
        assert!((target.get("a").unwrap().data[0] - 0.01).abs() < 1e-15);
    }

    #[test]
    fn extra_online_params_are_ignored() {
        let online = store(&[("a", vec![1.0]), ("pred.w", vec![9.0])]);
        let mut target = store(&[("a", vec![0.0])]);
        ema_update(&online, &mut target, 0.5).unwrap();
        assert_eq!(target.len(), 1);
    }

    #[test]
    fn missing_or_mismatched_registry_is_rejected() {
        let online = store(&[("a", vec![1.0])]);
        let mut target = store(&[("b", vec![0.0])]);
        assert!(ema_update(&online, &mut target, 0.5).is_err());

        let online = store(&[("a", vec![1.0, 2.0])]);
        let mut target = store(&[("a", vec![0.0])]);
        assert!(ema_update(&online, &mut target, 0.5).is_err());
    }

    #[test]
    fn contraction_inequality_holds() {
        let online = store(&[("a", vec![3.0, -1.0, 0.5])]);
        for &m in &[0.0, 0.5, 0.9, 0.996, 1.0] {
            let mut target = store(&[("a", vec![1.0, 1.0, 1.0])]);
            let before = target.get("a").unwrap().data.clone();
            ema_update(&online, &mut target, m).unwrap();
            let after = &target.get("a").unwrap().data;
            let drift: f64 = after
                .iter()
                .zip(&before)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let gap: f64 = online
                .get("a")
                .unwrap()
                .data
                .iter()
                .zip(&before)
                .map(|(o, t)| (o - t) * (o - t))
                .sum::<f64>()
                .sqrt();
            assert!(drift <= (1.0 - m) * gap + 1e-12, "m={m}");
        }
    }

    #[test]
    fn ramp_endpoints_and_monotonicity() {
        let m0 = 0.996;
        assert_eq!(ema_momentum_at(0, 100, m0), m0);
        assert!((ema_momentum_at(100, 100, m0) - 1.0).abs() < 1e-15);
        let mut prev = 0.0;
        for step in 0..=100 {
            let m = ema_momentum_at(step, 100, m0);
            assert!(m >= prev && (m0..=1.0).contains(&m));
            prev = m;
        }
        assert!((ema_momentum_at(50, 100, m0) - (1.0 - (1.0 - m0) * 0.5)).abs() < 1e-15);
    }
}
