//! Fixtures shared by the criterion benches in `benches/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roagp::gp::{KernelSpec, WindowState};

/// A window of width `h` filled with `h` random samples of `|x|²/2`.
pub fn filled_window(h: usize, dim: usize, kernel: KernelSpec, seed: u64) -> WindowState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = WindowState::initial(h, dim, kernel).expect("valid window");
    for _ in 0..h {
        let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let v = 0.5 * x.iter().map(|v| v * v).sum::<f64>();
        s = s.push(&x, v).expect("push");
    }
    s
}
