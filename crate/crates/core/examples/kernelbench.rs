use std::time::Instant;
use leaktraj_core::matrix::ComplexMatrix;
use leaktraj_core::state::TrajectoryState;
use leaktraj_core::subspace::SubspaceLabel;
use num_complex::Complex64;

fn main() {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    // 10 qutrits.
    let mut st = TrajectoryState::new(10, 0);
    for q in 0..10 {
        st.create_qudit(q, &[c(0.8,0.0), c(0.0,0.6), c(0.0,0.0)], SubspaceLabel::Comp);
    }
    let s = 1.0/2.0f64.sqrt();
    let mut h = ComplexMatrix::zeros(3,3);
    h[(0,0)]=c(s,0.0); h[(0,1)]=c(s,0.0); h[(1,0)]=c(s,0.0); h[(1,1)]=c(-s,0.0); h[(2,2)]=c(1.0,0.0);
    let reps = 2000;
    for &axis_q in &[0usize, 5, 8, 9] {
        let t0 = Instant::now();
        for _ in 0..reps {
            let raw = st.apply_candidate(&[axis_q], &h, &[3]);
            st.commit_candidate(raw);
        }
        let dt = t0.elapsed().as_secs_f64() / reps as f64;
        // 3N cmuls = 3*59049*6 flops + norm 2*... ~ 1.18 Mflop
        println!("apply 1q axis-qudit {axis_q}: {:.1} us -> {:.2} Gflop/s", dt*1e6, 1.24e6/dt/1e9);
    }
    // RDM
    let t0 = Instant::now();
    let mut rdm = vec![Complex64::new(0.0,0.0); 9];
    for _ in 0..reps { st.local_rdm(&[5], &mut rdm); }
    let dt = t0.elapsed().as_secs_f64()/reps as f64;
    println!("rdm 1q: {:.1} us", dt*1e6);
    // Diag 2q
    let diag: Vec<Complex64> = (0..9).map(|k| c(0.0, 0.1*k as f64).exp()).collect();
    let t0 = Instant::now();
    for _ in 0..reps { st.apply_diag(&[3,7], &diag); }
    println!("diag 2q: {:.1} us", t0.elapsed().as_secs_f64()/reps as f64*1e6);
    println!("norm check value {}", st.norm_sqr());
}
