//! Central finite-difference checks of the tape's analytic gradients, run in
//! `f64`.
//!
//! Each check reduces the operation's output to a scalar with a fixed random
//! projection, differentiates it on the tape, and compares every input
//! element against `(f(x + h) - f(x - h)) / 2h`. The relative error of one
//! element is `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`; the floor keeps
//! vanishing gradients from turning round-off into huge ratios.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tape::{ArcTanSurrogate, BnMode, SpikeForward, Tape, Var};
use super::tensor::Tensor;
use super::NumError;

pub const FD_STEP: f64 = 1e-5;
pub const REL_ERR_FLOOR: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub op: &'static str,
    pub cases: usize,
    pub max_rel_error: f64,
    pub worst_case: String,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < REL_TOL
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Max relative error over all elements of all `inputs`.
pub fn check_gradients<F>(
    inputs: &[Tensor<f64>],
    spike_forward: SpikeForward,
    projection_seed: u64,
    build: F,
) -> Result<f64, NumError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, NumError>,
{
    let eval = |values: &[Tensor<f64>], grads: bool| -> Result<(Tape<f64>, Var, Vec<Var>), NumError> {
        let mut tape = Tape::with_spike_forward(spike_forward);
        let vars: Vec<Var> = values
            .iter()
            .map(|t| if grads { tape.variable(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        let out = build(&mut tape, &vars)?;
        let mut rng = ChaCha8Rng::seed_from_u64(projection_seed);
        let shape = tape.value(out).shape().to_vec();
        let weights = Tensor::from_vec(
            &shape,
            (0..tape.value(out).len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )?;
        let loss = tape.weighted_sum(out, weights)?;
        Ok((tape, loss, vars))
    };

    let (tape, loss, vars) = eval(inputs, true)?;
    let mut grads = tape.backward(loss)?;
    let mut worst = 0.0f64;
    let mut perturbed = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .take(*var)
            .unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        for j in 0..inputs[i].len() {
            let x0 = inputs[i].data()[j];
            perturbed[i].data_mut()[j] = x0 + FD_STEP;
            let (t, l, _) = eval(&perturbed, false)?;
            let up = t.value(l).data()[0];
            perturbed[i].data_mut()[j] = x0 - FD_STEP;
            let (t, l, _) = eval(&perturbed, false)?;
            let down = t.value(l).data()[0];
            perturbed[i].data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[j], numeric));
        }
    }
    Ok(worst)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero, so no perturbation crosses the ReLU kink.
fn off_kink_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    random_tensor(rng, shape).map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

struct Tracker {
    op: &'static str,
    cases: usize,
    worst: f64,
    worst_case: String,
}

impl Tracker {
    fn new(op: &'static str) -> Self {
        Self {
            op,
            cases: 0,
            worst: 0.0,
            worst_case: String::new(),
        }
    }

    fn record(&mut self, err: f64, case: String) {
        self.cases += 1;
        if err >= self.worst {
            self.worst = err;
            self.worst_case = case;
        }
    }

    fn finish(self) -> GradCheckReport {
        GradCheckReport {
            op: self.op,
            cases: self.cases,
            max_rel_error: self.worst,
            worst_case: self.worst_case,
        }
    }
}

pub fn check_conv2d(seed: u64, cases: usize) -> Result<GradCheckReport, NumError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("conv2d");
    for case in 0..cases {
        let n = rng.random_range(1..=2);
        let c = rng.random_range(1..=4);
        let o = rng.random_range(1..=3);
        let k = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let padding = rng.random_range(0..=1);
        let h = rng.random_range(k..=6);
        let w = rng.random_range(k..=6);
        let inputs = [
            random_tensor(&mut rng, &[n, c, h, w]),
            random_tensor(&mut rng, &[o, c, k, k]),
            random_tensor(&mut rng, &[o]),
        ];
        let err = check_gradients(&inputs, SpikeForward::Heaviside, seed ^ case as u64, |tape, v| {
            tape.conv2d(v[0], v[1], Some(v[2]), stride, padding)
        })?;
        t.record(err, format!("x {n}x{c}x{h}x{w}, w {o}x{c}x{k}x{k}, s{stride} p{padding}"));
    }
    Ok(t.finish())
}

pub fn check_batchnorm(seed: u64, cases: usize) -> Result<GradCheckReport, NumError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("batchnorm");
    for case in 0..cases {
        let n = rng.random_range(2..=3);
        let c = rng.random_range(1..=3);
        let h = rng.random_range(1..=4);
        let w = rng.random_range(1..=4);
        let inputs = [
            random_tensor(&mut rng, &[n, c, h, w]),
            random_tensor(&mut rng, &[c]).map(|g| g + 1.5),
            random_tensor(&mut rng, &[c]),
        ];
        let mode = BnMode::Train { eps: 1e-5 };
        let err = check_gradients(&inputs, SpikeForward::Heaviside, seed ^ case as u64, |tape, v| {
            Ok(tape.batchnorm(v[0], v[1], v[2], &mode)?.0)
        })?;
        t.record(err, format!("train {n}x{c}x{h}x{w}"));
    }
    Ok(t.finish())
}

pub fn check_relu(seed: u64, cases: usize) -> Result<GradCheckReport, NumError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("relu");
    for case in 0..cases {
        let shape = [rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=5), rng.random_range(1..=5)];
        let inputs = [off_kink_tensor(&mut rng, &shape)];
        let err = check_gradients(&inputs, SpikeForward::Heaviside, seed ^ case as u64, |tape, v| Ok(tape.relu(v[0])))?;
        t.record(err, format!("{shape:?}"));
    }
    Ok(t.finish())
}

/// Two PLIF steps with soft reset, the spike replaced by the surrogate's
/// primitive so the surrogate derivative is checked against its own function.
pub fn check_plif(seed: u64, cases: usize) -> Result<GradCheckReport, NumError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("plif_step");
    let surrogate = ArcTanSurrogate::default();
    for case in 0..cases {
        let shape = [rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4)];
        let inputs = [
            random_tensor(&mut rng, &shape).map(|v| 1.5 * v + 1.0),
            random_tensor(&mut rng, &shape).map(|v| 1.5 * v + 1.0),
            random_tensor(&mut rng, &shape).map(|v| 0.5 * v),
            random_tensor(&mut rng, &[1]),
        ];
        let err = check_gradients(&inputs, SpikeForward::Smooth, seed ^ case as u64, |tape, v| {
            let (x1, x2, v0, w) = (v[0], v[1], v[2], v[3]);
            let h1 = tape.plif_charge(x1, v0, w)?;
            let s1 = tape.spike(h1, 1.0, surrogate);
            let v1 = tape.soft_reset(h1, s1, 1.0);
            let h2 = tape.plif_charge(x2, v1, w)?;
            let s2 = tape.spike(h2, 1.0, surrogate);
            let v2 = tape.soft_reset(h2, s2, 1.0);
            let a = tape.global_avg_pool(s1)?;
            let b = tape.global_avg_pool(s2)?;
            let c = tape.global_avg_pool(v2)?;
            tape.concat_features(&[a, b, c])
        })?;
        t.record(err, format!("{shape:?} over two steps"));
    }
    Ok(t.finish())
}

/// Pooling, concatenation and the pose loss, away from zero residuals.
pub fn check_head(seed: u64, cases: usize) -> Result<GradCheckReport, NumError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = Tracker::new("pose_head");
    for case in 0..cases {
        let n = rng.random_range(1..=3);
        let (h, w) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let inputs = [random_tensor(&mut rng, &[n, 3, h, w]), random_tensor(&mut rng, &[n, 3, h, w])];
        let target = random_tensor(&mut rng, &[n, 6]).map(|v| v + 3.0);
        let err = check_gradients(&inputs, SpikeForward::Heaviside, seed ^ case as u64, |tape, v| {
            let a = tape.global_avg_pool(v[0])?;
            let b = tape.global_avg_pool(v[1])?;
            let pose = tape.concat_features(&[a, b])?;
            tape.pose_loss_sum(pose, target.clone())
        })?;
        t.record(err, format!("{n} poses from {h}x{w} maps"));
    }
    Ok(t.finish())
}

/// All operation checks with `cases` random shapes each.
pub fn run_suite(seed: u64, cases: usize) -> Result<Vec<GradCheckReport>, NumError> {
    Ok(vec![
        check_conv2d(seed, cases)?,
        check_batchnorm(seed.wrapping_add(1), cases)?,
        check_relu(seed.wrapping_add(2), cases)?,
        check_plif(seed.wrapping_add(3), cases)?,
        check_head(seed.wrapping_add(4), cases)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_suite_passes() {
        for r in run_suite(11, 3).unwrap() {
            assert!(r.passed(), "{} failed: {} at {}", r.op, r.max_rel_error, r.worst_case);
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // Heaviside forward with a surrogate backward disagrees with finite
        // differences wherever the charge sits near the threshold.
        let x = Tensor::from_vec(&[1, 1, 1, 3], vec![1.98, 2.0, 2.02]).unwrap();
        let v = Tensor::zeros(&[1, 1, 1, 3]);
        let w = Tensor::scalar(0.0);
        let err = check_gradients(&[x, v, w], SpikeForward::Heaviside, 1, |tape, v| {
            let h = tape.plif_charge(v[0], v[1], v[2])?;
            Ok(tape.spike(h, 1.0, ArcTanSurrogate::default()))
        })
        .unwrap();
        assert!(err > 1e-2);
    }
}
