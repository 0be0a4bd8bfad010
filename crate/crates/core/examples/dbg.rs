use capsol::*;
fn main() {
    let exp = Exponents::new(3, 4.0).unwrap();
    let ctx = GridContext::cube(2.0, 64).unwrap();
    let solver = SolverConfig::default();
    let spec = SetSpec::ball([0.0; 3], 1.0);
    let engine = CapacityEngine::new();
    let samples = [[1.35f64, 0.0, 0.0], [0.0, 1.5, 0.0], [0.0, 0.0, 1.6]];
    let umax = maximal_solution(&spec, 1.9, &exp, &ctx, &solver).unwrap();
    let mask = rasterize(&spec, &ctx).unwrap();
    let cap = engine.capacity(&mask, &exp, &CapacityConfig::with_tolerance(1e-2)).unwrap();
    let tau = capacitary_measure(&cap).unwrap();
    println!("capacity {:.3} mass {:.3} atoms {}", cap.value, tau.total_mass(), tau.atoms.len());
    let mut k = 1.0f64;
    for _ in 0..22 {
        let u = solve_measure_wholebox(&tau.scaled(k), &exp, 1.9, &ctx, &solver).unwrap();
        let fr: Vec<f64> = samples.iter().map(|&s| u.sample(s).unwrap() / umax.field.sample(s).unwrap()).collect();
        println!("k {:8.0}: fractions {:.4} {:.4} {:.4}", k, fr[0], fr[1], fr[2]);
        k *= 4.0;
    }
}
