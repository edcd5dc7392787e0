use serde::{Deserialize, Serialize};

use super::config::OptimizerConfig;
use crate::error::{Error, Result};
use crate::net::ParamSet;

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub t: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl AdamState {
    pub fn new(like: &ParamSet) -> Self {
        Self { t: 0, m: like.zeros_like(), v: like.zeros_like() }
    }
}

/// One bias-corrected Adam update of every array named in `grads`.
///
/// A gradient containing a non-finite value is rejected before anything is
/// modified.
pub fn optimizer_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    config: &OptimizerConfig,
    learning_rate: f64,
) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    if !grads.same_layout(&state.m) {
        return Err(Error::Shape("gradient layout differs from optimizer state".into()));
    }
    for (name, g) in grads.iter() {
        match params.get(name) {
            Some(p) if p.dim() == g.dim() => {}
            _ => return Err(Error::Shape(format!("no parameter matching gradient {name:?}"))),
        }
    }
    state.t += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powf(state.t as f64);
    let c2 = 1.0 - b2.powf(state.t as f64);
    for (name, g) in grads.iter() {
        let m = state.m.get_mut(name).expect("layout checked");
        let v = state.v.get_mut(name).expect("layout checked");
        let p = params.get_mut(name).expect("layout checked");
        ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Mat;

    fn single(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", Mat::from_elem((1, 1), v));
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = single(0.5);
        let g = single(1.0);
        let mut s = AdamState::new(&p);
        optimizer_step(&mut p, &g, &mut s, &OptimizerConfig::default(), 1e-3).unwrap();
        // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps)
        let moved = 0.5 - p.get("w").unwrap()[[0, 0]];
        assert!((moved - 1e-3 / (1.0 + 1e-8)).abs() < 1e-15);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = single(0.5);
        let g = single(0.0);
        let mut s = AdamState::new(&p);
        for _ in 0..3 {
            optimizer_step(&mut p, &g, &mut s, &OptimizerConfig::default(), 1e-3).unwrap();
        }
        assert_eq!(p, single(0.5));
        assert_eq!(s.t, 3);
    }

    #[test]
    fn non_finite_gradient_rejected_without_side_effects() {
        let mut p = single(0.5);
        let mut s = AdamState::new(&p);
        let before = (p.clone(), s.clone());
        let err = optimizer_step(&mut p, &single(f64::NAN), &mut s, &OptimizerConfig::default(), 1e-3);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        assert_eq!((p, s), before);
    }

    #[test]
    fn deterministic() {
        let run = || {
            let mut p = single(0.1);
            let mut s = AdamState::new(&p);
            for k in 0..10 {
                let g = single((k as f64).sin());
                optimizer_step(&mut p, &g, &mut s, &OptimizerConfig::default(), 1e-2).unwrap();
            }
            p.get("w").unwrap()[[0, 0]].to_bits()
        };
        assert_eq!(run(), run());
    }
}
