//! Backpropagation against central finite differences.

use nirs_core::mlp::{loss, Matrix, MlpConfig, MlpModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn batch_loss(model: &MlpModel<f64>, x: &Matrix<f64>, y: &[usize]) -> f64 {
    loss(&model.forward(x).unwrap(), y).unwrap()
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let start = std::time::Instant::now();
    let mut worst = 0.0f64;
    for instance in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + instance);
        let cfg = MlpConfig::new(vec![8, 16, 16, 3], instance);
        let mut model = MlpModel::<f64>::init(&cfg).unwrap();
        // nonzero biases so the check covers them too
        for p in model.params_mut() {
            *p += rng.random_range(-0.1..0.1);
        }
        let rows: Vec<Vec<f64>> = (0..6).map(|_| (0..8).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let x = Matrix::from_rows(&rows);
        let y: Vec<usize> = (0..6).map(|_| rng.random_range(0..3)).collect();
        let analytic = model.backward(&x, &y).unwrap();
        let grads: Vec<f64> = (0..3)
            .flat_map(|l| analytic.weights(l).iter().chain(analytic.bias(l)).copied().collect::<Vec<_>>())
            .collect();
        assert_eq!(grads.len(), model.params().len());

        for (j, &a) in grads.iter().enumerate() {
            let orig = model.params()[j];
            model.params_mut()[j] = orig + H;
            let up = batch_loss(&model, &x, &y);
            model.params_mut()[j] = orig - H;
            let down = batch_loss(&model, &x, &y);
            model.params_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * H);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-7);
            worst = worst.max(rel);
        }
    }
    assert!(worst <= 1e-5, "max relative error {worst:e}");
    assert!(start.elapsed().as_secs_f64() < 10.0);
}
