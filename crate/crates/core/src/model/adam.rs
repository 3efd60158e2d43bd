use super::{ParamArrays, RefModelParams, TrainConfig};

/// Step counter and first/second moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: ParamArrays,
    pub v: ParamArrays,
}

impl AdamState {
    pub fn new(params: &RefModelParams) -> Self {
        AdamState { t: 0, m: ParamArrays::zeros_like(&params.arrays), v: ParamArrays::zeros_like(&params.arrays) }
    }
}

/// Bias-corrected Adam update in place.
pub fn adam_step(params: &mut RefModelParams, grads: &ParamArrays, state: &mut AdamState, cfg: &TrainConfig) {
    state.t += 1;
    let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let lr = cfg.learning_rate;
    let eps = cfg.adam_epsilon;
    let p = params.arrays.slices_mut();
    let m = state.m.slices_mut();
    let v = state.v.slices_mut();
    for (((p, g), m), v) in p.into_iter().zip(grads.slices()).zip(m).zip(v) {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn setup() -> (RefModelParams, TrainConfig) {
        let p = RefModelParams::init(&ModelConfig { input_side: 2, hidden_units: 3 }, 5);
        (p, TrainConfig::default())
    }

    #[test]
    fn first_step_is_sign_descent() {
        let (mut p, cfg) = setup();
        let before = p.clone();
        let mut g = ParamArrays::zeros_like(&p.arrays);
        for (i, v) in g.w1.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 0.3 } else { -2.0 };
        }
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &cfg);
        assert_eq!(st.t, 1);
        for i in 0..g.w1.len() {
            let moved = p.arrays.w1[i] - before.arrays.w1[i];
            let exact = -cfg.learning_rate * g.w1[i] / (g.w1[i].abs() + cfg.adam_epsilon);
            assert!((moved - exact).abs() < 1e-15);
            assert!((moved + cfg.learning_rate * g.w1[i].signum()).abs() < 1e-10);
        }
        // zero-gradient coordinates do not move
        assert_eq!(p.arrays.b1, before.arrays.b1);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let (mut p, cfg) = setup();
        let before = p.clone();
        let g = ParamArrays::zeros_like(&p.arrays);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &cfg);
        assert_eq!(p, before);
    }

    #[test]
    fn two_constant_steps_move_at_most_two_lr() {
        let (mut p, cfg) = setup();
        let before = p.clone();
        let mut g = ParamArrays::zeros_like(&p.arrays);
        g.fill(0.7);
        g.w2.iter_mut().for_each(|v| *v = -1e-3);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, &cfg);
        adam_step(&mut p, &g, &mut st, &cfg);
        for (a, b) in p.arrays.slices().iter().zip(before.arrays.slices()) {
            for (x, y) in a.iter().zip(b.iter()) {
                let d = (x - y).abs();
                assert!(d <= 2.0 * cfg.learning_rate + 1e-18);
                assert!(d > 1.99 * cfg.learning_rate);
            }
        }
    }
}
