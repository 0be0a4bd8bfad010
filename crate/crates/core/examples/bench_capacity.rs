use capsol::*;
use std::time::Instant;

fn main() {
    let exp = Exponents::new(3, 4.0).unwrap();
    let engine = CapacityEngine::new();
    let window = window_grid(48);
    let spec = SetSpec::ball([0.0; 3], 1.0);
    let dec = dyadic_pieces(&spec, [1.7, 0.0, 0.0], PieceVariant::Annulus, -3..=2, &window).unwrap();
    for tol in [1e-3f64, 1e-5] {
        let cfg = CapacityConfig { max_iterations: 2000, tolerance: tol, formulation: Formulation::KernelProgram };
        for piece in &dec.entries {
            let t0 = Instant::now();
            let r = engine.capacity(&piece.rescaled_mask, &exp, &cfg).unwrap();
            println!("48w tol {tol:.0e} m={:+}: value {:.5} gap {:.1e} iters {:3} conv {} in {:.2?}",
                piece.m, r.value, r.duality_gap, r.iterations, r.converged, t0.elapsed());
        }
    }
    // single node
    let mut mask = GridMask::empty(&window);
    let mid = window.nearest_node([0.0; 3]).unwrap();
    mask.bits[mid] = true;
    let r = engine.capacity(&mask, &exp, &CapacityConfig::with_tolerance(1e-5)).unwrap();
    println!("single node: value {:.5} gap {:.1e} iters {} conv {}", r.value, r.duality_gap, r.iterations, r.converged);
    // 96^3 balls
    let w96 = window_grid(96);
    for r_ball in [0.25f64, 0.5, 1.0] {
        let mask = rasterize(&SetSpec::ball([0.0; 3], r_ball), &w96).unwrap();
        let t0 = Instant::now();
        let r = engine.capacity(&mask, &exp, &CapacityConfig::with_tolerance(1e-3)).unwrap();
        println!("96w ball r={r_ball}: value {:.4} gap {:.1e} iters {} conv {} in {:.2?}",
            r.value, r.duality_gap, r.iterations, r.converged, t0.elapsed());
    }
}
