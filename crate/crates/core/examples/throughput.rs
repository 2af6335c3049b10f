use std::sync::Arc;
use std::time::Instant;
use leaktraj_core::builders::{build_circuit, BuildOptions};
use leaktraj_core::circuit::CodeKind;
use leaktraj_core::engine::{compile, run_trajectory, RunMode};
use leaktraj_core::noise::NoiseParams;
use leaktraj_core::rng::RngFactory;
use leaktraj_core::scheduler::schedule_circuit;

fn main() {
    for (label, mode, dim) in [("exact3", RunMode::Exact, 3usize), ("rpa", RunMode::Rpa, 3), ("qubit", RunMode::Exact, 2)] {
        let mut opts = BuildOptions::new(CodeKind::Surface, 3, 5, NoiseParams::thermal());
        opts.local_dim = dim;
        let mut params = opts.params;
        if dim == 2 { params = params.leak_free(); opts.params = params; }
        let circuit = Arc::new(build_circuit(&opts).unwrap());
        let (_, sched) = schedule_circuit(&circuit).unwrap();
        let compiled = compile(&circuit, &sched, mode).unwrap();
        let factory = RngFactory::new(1);
        let n: u64 = if dim == 3 && matches!(mode, RunMode::Exact) { 40 } else { 2000 };
        let t0 = Instant::now();
        let mut acc = 0u64;
        for traj in 0..n {
            let rec = run_trajectory(&compiled, &factory, traj, false);
            assert!(rec.aborted.is_none(), "{:?}", rec.aborted);
            acc += rec.registers.iter().map(|&x| x as u64).sum::<u64>();
        }
        let dt = t0.elapsed().as_secs_f64();
        println!("{label}: {:.2} ms/traj ({:.3} s/100k-round-samples est) acc={acc}", dt / n as f64 * 1e3, dt / n as f64 / 5.0 * 1e5);
    }
}
