//! Adversarial, identity-preservation, self-reconstruction and total losses.
//!
//! Image norms are mean absolute pixel differences (not sums), so the loss
//! weights are independent of slice resolution. Expectations over a batch are
//! plain means; the trainer assembles them from these per-sample forms.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::autodiff::Scalar;
use crate::conditioning::{AgeCode, HealthCode};
use crate::error::{Error, Result};
use crate::image::SliceImage;
use crate::networks::DiscriminatorParams;

/// Balance factors of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Adversarial term weight (lambda_1).
    pub lambda_gan: f64,
    /// Identity-preservation weight (lambda_2).
    pub lambda_id: f64,
    /// Self-reconstruction weight (lambda_3).
    pub lambda_rec: f64,
    /// Gradient-penalty weight inside the critic objective.
    pub lambda_gp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_gan: 1.0,
            lambda_id: 100.0,
            lambda_rec: 10.0,
            lambda_gp: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_gan, self.lambda_id, self.lambda_rec, self.lambda_gp];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be >= 0, got {self:?}")));
        }
        Ok(())
    }
}

/// Age span of the training population, used by the identity-loss weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgeRange {
    pub a_min: u32,
    pub a_max: u32,
}

impl AgeRange {
    pub fn new(a_min: u32, a_max: u32) -> Result<Self> {
        if a_min >= a_max {
            return Err(Error::DegenerateAgeRange);
        }
        if a_max > crate::conditioning::MAX_AGE {
            return Err(Error::AgeOutOfRange(a_max as i64));
        }
        Ok(AgeRange { a_min, a_max })
    }

    pub fn span(&self) -> f64 {
        (self.a_max - self.a_min) as f64
    }
}

/// The blended sample the gradient penalty is evaluated at:
/// `z_tilde = eps * x_hat + (1 - eps) * y_o`.
#[derive(Debug, Clone)]
pub struct GpInterpolant {
    pub z_tilde: SliceImage,
    pub epsilon: f64,
}

impl GpInterpolant {
    pub fn new(x_hat: &SliceImage, y_o: &SliceImage, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::Argument(format!(
                "interpolation epsilon {epsilon} outside [0, 1]"
            )));
        }
        let blended = x_hat.pixels() * epsilon + y_o.pixels() * (1.0 - epsilon);
        Ok(GpInterpolant {
            z_tilde: SliceImage::new(blended)?,
            epsilon,
        })
    }
}

/// A critic that can report its score and input gradient at a 2D point.
/// The shape is unconstrained so small test critics can be checked against
/// finite differences.
pub trait InputGradCritic {
    fn score_and_input_grad(&self, z: &Array2<f64>) -> Result<(f64, Array2<f64>)>;
}

/// A discriminator with its conditioning vectors fixed, viewed as a critic
/// of the image alone (the penalty differentiates w.r.t. the image only).
pub struct ConditionedCritic<'a, T: Scalar> {
    pub disc: &'a DiscriminatorParams<T>,
    pub age: &'a AgeCode,
    pub health: &'a HealthCode,
}

impl<T: Scalar> InputGradCritic for ConditionedCritic<'_, T> {
    fn score_and_input_grad(&self, z: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let image = SliceImage::new(z.clone())?;
        self.disc.score_and_input_grad(&image, self.age, self.health)
    }
}

impl<T: Scalar> DiscriminatorParams<T> {
    /// View this discriminator as a critic with fixed conditioning.
    pub fn conditioned<'a>(
        &'a self,
        age: &'a AgeCode,
        health: &'a HealthCode,
    ) -> ConditionedCritic<'a, T> {
        ConditionedCritic {
            disc: self,
            age,
            health,
        }
    }
}

/// Gradient penalty `(||grad_z D(z_tilde)||_2 - 1)^2` at the blend of a
/// synthetic and a real sample, before `lambda_gp` weighting.
pub fn gradient_penalty<C: InputGradCritic>(
    critic: &C,
    x_hat: &SliceImage,
    y_o: &SliceImage,
    epsilon: f64,
) -> Result<f64> {
    let interp = GpInterpolant::new(x_hat, y_o, epsilon)?;
    gradient_penalty_at(critic, interp.z_tilde.pixels())
}

/// Shape-agnostic core of the gradient penalty, evaluated at a given point.
pub fn gradient_penalty_at<C: InputGradCritic>(critic: &C, z: &Array2<f64>) -> Result<f64> {
    let (_, grad) = critic.score_and_input_grad(z)?;
    if grad.dim() != z.dim() {
        return Err(Error::Shape {
            expected: format!("{:?}", z.dim()),
            got: format!("{:?}", grad.dim()),
        });
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::NonFinite("critic input gradient".into()));
    }
    Ok((norm - 1.0) * (norm - 1.0))
}

/// The quantity the critic minimizes: `-(w_real - w_fake) + lambda_gp * gp`.
pub fn critic_loss(w_real: f64, w_fake: f64, gp: f64, weights: &LossWeights) -> Result<f64> {
    if gp < 0.0 {
        return Err(Error::Argument(format!("gradient penalty {gp} < 0")));
    }
    let loss = -(w_real - w_fake) + weights.lambda_gp * gp;
    if !loss.is_finite() {
        return Err(Error::NonFinite("critic loss".into()));
    }
    Ok(loss)
}

/// The generator ascends the critic score of its outputs.
pub fn generator_adversarial_loss(w_fake: f64) -> f64 {
    -w_fake
}

/// Identity-preservation loss: mean |x_i - x_hat| weighted by
/// `exp(-|a_o - a_i| / |a_max - a_min|)`.
///
/// Only defined for forward-aged outputs (`a_o > a_i`); the health state does
/// not enter.
pub fn identity_loss(
    x_i: &SliceImage,
    x_hat: &SliceImage,
    a_i: u32,
    a_o: u32,
    range: &AgeRange,
) -> Result<f64> {
    if a_o <= a_i {
        return Err(Error::AgeOrdering {
            input: a_i,
            target: a_o,
        });
    }
    let weight = identity_weight(a_i, a_o, range);
    Ok(x_i.mean_abs_diff(x_hat) * weight)
}

/// The age-gap weight of the identity loss.
pub fn identity_weight(a_i: u32, a_o: u32, range: &AgeRange) -> f64 {
    (-((a_o.abs_diff(a_i)) as f64) / range.span()).exp()
}

/// Self-reconstruction loss: mean |x_i - x_hat| for an output generated with
/// zero age delta and the input health state.
pub fn reconstruction_loss(x_i: &SliceImage, x_hat_same: &SliceImage) -> f64 {
    x_i.mean_abs_diff(x_hat_same)
}

/// Weighted sum of the generator's loss terms.
pub fn total_generator_loss(l_gan: f64, l_id: f64, l_rec: f64, weights: &LossWeights) -> f64 {
    weights.lambda_gan * l_gan + weights.lambda_id * l_id + weights.lambda_rec * l_rec
}

/// A linear critic `z -> gain * <c, z>`; its input gradient is `gain * c`
/// everywhere, which makes the gradient penalty analytically checkable.
pub struct LinearCritic {
    pub coeffs: Array2<f64>,
    pub gain: f64,
}

impl LinearCritic {
    /// Unit-norm coefficients from any nonzero matrix.
    pub fn unit(coeffs: Array2<f64>, gain: f64) -> Self {
        let norm = coeffs.iter().map(|c| c * c).sum::<f64>().sqrt();
        LinearCritic {
            coeffs: coeffs / norm,
            gain,
        }
    }
}

impl InputGradCritic for LinearCritic {
    fn score_and_input_grad(&self, z: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        let score = self.gain * (&self.coeffs * z).sum();
        Ok((score, self.coeffs.mapv(|c| c * self.gain)))
    }
}

/// A critic ignoring its input entirely (zero gradient).
pub struct ConstantCritic(pub f64);

impl InputGradCritic for ConstantCritic {
    fn score_and_input_grad(&self, z: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
        Ok((self.0, Array2::zeros(z.dim())))
    }
}

/// Build per-sample mean-absolute-difference nodes on a tape:
/// `mean_per_sample(|a - b|)`, shape (B,).
pub fn l1_per_sample_node<T: Scalar>(
    tape: &mut Tape<T>,
    a: crate::autodiff::NodeId,
    b: crate::autodiff::NodeId,
) -> crate::autodiff::NodeId {
    let d = tape.sub(a, b);
    let d = tape.abs(d);
    tape.mean_per_sample(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{SLICE_HEIGHT, SLICE_WIDTH};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_slice(rng: &mut ChaCha12Rng) -> SliceImage {
        let arr =
            Array2::from_shape_fn((SLICE_HEIGHT, SLICE_WIDTH), |_| rng.random_range(-1.0..1.0));
        SliceImage::new(arr).unwrap()
    }

    #[test]
    fn critic_loss_oracle_values() {
        let w = LossWeights::default();
        assert_eq!(critic_loss(1.0, 0.0, 0.0, &w).unwrap(), -1.0);
        assert_eq!(critic_loss(0.7, 0.7, 0.0, &w).unwrap(), 0.0);
        assert_eq!(critic_loss(0.0, 0.0, 0.5, &w).unwrap(), 5.0);
        assert!(critic_loss(0.0, 0.0, -0.1, &w).is_err());
    }

    #[test]
    fn critic_loss_antisymmetric_without_penalty() {
        let w = LossWeights::default();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..100 {
            let a = rng.random_range(-3.0..3.0);
            let b = rng.random_range(-3.0..3.0);
            let ab = critic_loss(a, b, 0.0, &w).unwrap();
            let ba = critic_loss(b, a, 0.0, &w).unwrap();
            assert!((ab + ba).abs() < 1e-12);
        }
    }

    #[test]
    fn generator_adversarial_sign_convention() {
        assert_eq!(generator_adversarial_loss(2.0), -2.0);
        assert_eq!(generator_adversarial_loss(0.0), 0.0);
        assert_eq!(generator_adversarial_loss(-3.0), 3.0);
    }

    #[test]
    fn identity_loss_oracle_values() {
        let range = AgeRange::new(0, 100).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let x = random_slice(&mut rng);

        // Identical images: zero regardless of ages.
        assert_eq!(identity_loss(&x, &x, 30, 60, &range).unwrap(), 0.0);

        // mean L1 of 0.5 at the full age span: 0.5 * e^-1.
        let lo = SliceImage::constant(-0.25).unwrap();
        let hi = SliceImage::constant(0.25).unwrap();
        let got = identity_loss(&lo, &hi, 0, 100, &range).unwrap();
        assert!((got - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
        assert!((got - 0.183_939_720_585_721_2).abs() < 1e-12);

        // Weight at the full span equals e^-1 exactly.
        assert!((identity_weight(0, 100, &range) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn identity_loss_decreases_with_age_gap() {
        let range = AgeRange::new(20, 90).unwrap();
        let lo = SliceImage::constant(-0.25).unwrap();
        let hi = SliceImage::constant(0.25).unwrap();
        let mut prev = f64::INFINITY;
        for delta in 1..=70 {
            let l = identity_loss(&lo, &hi, 20, 20 + delta, &range).unwrap();
            assert!(l < prev, "not strictly decreasing at delta {delta}");
            prev = l;
        }
    }

    #[test]
    fn identity_loss_rejects_backward_or_equal_ages() {
        let range = AgeRange::new(0, 100).unwrap();
        let x = SliceImage::constant(0.0).unwrap();
        assert!(identity_loss(&x, &x, 50, 50, &range).is_err());
        assert!(identity_loss(&x, &x, 50, 40, &range).is_err());
        assert!(AgeRange::new(40, 40).is_err());
    }

    #[test]
    fn reconstruction_loss_oracle_values() {
        let a = SliceImage::constant(-1.0).unwrap();
        let b = SliceImage::constant(1.0).unwrap();
        assert_eq!(reconstruction_loss(&a, &a), 0.0);
        assert_eq!(reconstruction_loss(&a, &b), 2.0);

        // Half the pixels differing by 1.
        let mut arr = Array2::zeros((SLICE_HEIGHT, SLICE_WIDTH));
        for y in 0..SLICE_HEIGHT / 2 {
            for x in 0..SLICE_WIDTH {
                arr[[y, x]] = 1.0;
            }
        }
        let c = SliceImage::new(arr).unwrap();
        let zero = SliceImage::constant(0.0).unwrap();
        assert_eq!(reconstruction_loss(&zero, &c), 0.5);
    }

    #[test]
    fn reconstruction_loss_triangle_bound() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..20 {
            let a = random_slice(&mut rng);
            let b = random_slice(&mut rng);
            let c = random_slice(&mut rng);
            let lhs = (reconstruction_loss(&a, &c) - reconstruction_loss(&b, &c)).abs();
            assert!(lhs <= reconstruction_loss(&a, &b) + 1e-12);
        }
    }

    #[test]
    fn total_loss_oracle_values() {
        let w = LossWeights::default();
        assert!((total_generator_loss(0.5, 0.01, 0.02, &w) - 1.7).abs() < 1e-15);
        assert_eq!(total_generator_loss(0.0, 0.0, 0.0, &w), 0.0);

        // Ablation row "GAN + rec": lambda_id = 0 removes the identity term.
        let ablated = LossWeights {
            lambda_id: 0.0,
            ..LossWeights::default()
        };
        assert_eq!(total_generator_loss(0.5, 123.0, 0.02, &ablated), 0.7);
    }

    #[test]
    fn gradient_penalty_analytic_cases() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let x_hat = random_slice(&mut rng);
        let y_o = random_slice(&mut rng);
        let coeffs =
            Array2::from_shape_fn((SLICE_HEIGHT, SLICE_WIDTH), |_| rng.random_range(-1.0..1.0));

        let unit = LinearCritic::unit(coeffs.clone(), 1.0);
        for eps in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let gp = gradient_penalty(&unit, &x_hat, &y_o, eps).unwrap();
            assert!(gp.abs() < 1e-12, "unit-gradient critic: gp {gp} at eps {eps}");
        }

        let constant = ConstantCritic(3.0);
        let gp = gradient_penalty(&constant, &x_hat, &y_o, 0.3).unwrap();
        assert!((gp - 1.0).abs() < 1e-12);

        let gain2 = LinearCritic::unit(coeffs, 2.0);
        let gp = gradient_penalty(&gain2, &x_hat, &y_o, 0.6).unwrap();
        assert!((gp - 1.0).abs() < 1e-12);

        assert!(gradient_penalty(&constant, &x_hat, &y_o, 1.5).is_err());
    }

    #[test]
    fn interpolant_matches_definition() {
        let a = SliceImage::constant(1.0).unwrap();
        let b = SliceImage::constant(-1.0).unwrap();
        let z = GpInterpolant::new(&a, &b, 0.25).unwrap();
        assert!((z.z_tilde.pixels()[[0, 0]] - (-0.5)).abs() < 1e-15);
    }

    /// Small MLP critic in f64 for checking the autodiff input gradient the
    /// penalty consumes against central finite differences.
    struct MlpCritic {
        w1: Array2<f64>,
        w2: Array2<f64>,
    }

    impl MlpCritic {
        fn random(rng: &mut ChaCha12Rng, rows: usize, cols: usize, hidden: usize) -> Self {
            MlpCritic {
                w1: Array2::from_shape_fn((rows * cols, hidden), |_| rng.random_range(-0.5..0.5)),
                w2: Array2::from_shape_fn((hidden, 1), |_| rng.random_range(-0.5..0.5)),
            }
        }
    }

    impl InputGradCritic for MlpCritic {
        fn score_and_input_grad(&self, z: &Array2<f64>) -> Result<(f64, Array2<f64>)> {
            let (rows, cols) = z.dim();
            let mut tape = Tape::<f64>::new();
            let w1 = tape.constant(self.w1.clone().into_dyn());
            let w2 = tape.constant(self.w2.clone().into_dyn());
            let x = tape.var(
                z.clone()
                    .into_shape_with_order((1, rows * cols))
                    .unwrap()
                    .into_dyn(),
            );
            let h = tape.matmul(x, w1);
            let h = tape.leaky_relu(h, 0.2);
            let s = tape.matmul(h, w2);
            let s = tape.reshape(s, &[1]);
            let score = tape.value(s)[[0]];
            let grads = tape.backward(s);
            let g = grads
                .wrt(x)
                .clone()
                .into_shape_with_order((rows, cols))
                .unwrap();
            Ok((score, g))
        }
    }

    #[test]
    fn penalty_gradient_norm_matches_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for trial in 0..20 {
            let critic = MlpCritic::random(&mut rng, 6, 5, 7);
            let z = Array2::from_shape_fn((6, 5), |_| rng.random_range(-1.0..1.0));

            let (_, g) = critic.score_and_input_grad(&z).unwrap();
            let analytic_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();

            let h = 1e-6;
            let mut fd = Array2::zeros((6, 5));
            for flat in 0..30 {
                let mut plus = z.clone();
                plus.as_slice_mut().unwrap()[flat] += h;
                let mut minus = z.clone();
                minus.as_slice_mut().unwrap()[flat] -= h;
                let sp = critic.score_and_input_grad(&plus).unwrap().0;
                let sm = critic.score_and_input_grad(&minus).unwrap().0;
                fd.as_slice_mut().unwrap()[flat] = (sp - sm) / (2.0 * h);
            }
            let fd_norm = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rel = (analytic_norm - fd_norm).abs() / fd_norm.max(1e-9);
            assert!(rel < 1e-4, "trial {trial}: {analytic_norm} vs {fd_norm}");

            // The penalty built on the autodiff path agrees with the one
            // built on the finite-difference gradient norm.
            let gp = gradient_penalty_at(&critic, &z).unwrap();
            let gp_fd = (fd_norm - 1.0) * (fd_norm - 1.0);
            assert!((gp - gp_fd).abs() < 1e-4 * gp_fd.max(1.0));
        }
    }
}
