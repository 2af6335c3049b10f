use std::time::Instant;
fn main() {
    for n in [59049usize*2, 59049*8, 4_000_000] {
        let a = vec![1.0f64; n];
        let mut b = vec![0.0f64; n];
        let reps = (200_000_000 / n).max(3);
        let t0 = Instant::now();
        for r in 0..reps {
            let s = 1.0 + r as f64 * 1e-12;
            for i in 0..n { b[i] = a[i] * s + b[i]; }
        }
        let dt = t0.elapsed().as_secs_f64() / reps as f64;
        let gbs = (3.0 * n as f64 * 8.0) / dt / 1e9;
        let gfs = (2.0 * n as f64) / dt / 1e9;
        println!("triad n={n}: {:.1} GB/s, {:.2} Gflop/s", gbs, gfs);
    }
}
