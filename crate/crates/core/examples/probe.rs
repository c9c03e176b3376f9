// Scratch probe of the reference-problem statistics (removed before release).
use std::sync::Arc;
use std::time::Instant;

use aqbx2d::aqbx::{summarize_work, AqbxConfig, LayerPotential};
use aqbx2d::geometry::{build_boundary, ParametrizedCurve, Side};
use aqbx2d::solver::{random_circle_sources, solve, BoundaryValueProblem, SolveOptions};

fn main() {
    let n_panels: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let curve = ParametrizedCurve::starfish(5, 0.3);
    let t0 = Instant::now();
    let boundary = Arc::new(build_boundary(&curve.oriented_ccw(false), n_panels).unwrap());
    let h = boundary.panel_arclen();
    let k = 2.0 / h;
    println!("panels={n_panels} h={h:.6} k={k:.4} build={:?}", t0.elapsed());

    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(20260810);
    let sources = random_circle_sources(&mut rng, 5, 0.2);
    let problem = BoundaryValueProblem::helmholtz_exterior_on(boundary.clone(), k, sources).unwrap();
    let lp = LayerPotential::new(boundary.clone(), problem.kernel);

    let t1 = Instant::now();
    lp.dense_matrix();
    println!("dense matrix build: {:?}", t1.elapsed());

    // Tight solve for the reference density.
    let t2 = Instant::now();
    let opts = SolveOptions {
        aqbx_tol: Some(1e-14),
        ..SolveOptions::with_gmres_tol(1e-12)
    };
    let (density, report) = solve(&lp, &problem, &opts).unwrap();
    println!(
        "solve: iters={} resid={:.2e} eval_err={:.2e} resol={:.2e} in {:?}",
        report.iterations,
        report.residual,
        report.eval_error,
        report.resolution_estimate,
        t2.elapsed()
    );

    // On-surface AQBX evaluation at various tolerances.
    let centers = lp.place_centers(0.25, Side::Exterior, 5).unwrap();
    let rmin = centers.iter().map(|c| c.r / (0.25 * h)).fold(f64::INFINITY, f64::min);
    let rmax = centers.iter().map(|c| c.r / (0.25 * h)).fold(0.0f64, f64::max);
    println!("center r range: [{rmin:.4}, {rmax:.4}] * h/4");
    for tol in [1e-4, 1e-6, 1e-8, 1e-10, 1e-12, 1e-13] {
        let cfg = AqbxConfig::with_tol(tol);
        let t = Instant::now();
        let (values, exps) = lp.evaluate_on_surface(&density, &centers, &cfg).unwrap();
        let mut max_err = 0.0f64;
        for (i, v) in values.iter().enumerate() {
            let truth = problem.dirichlet[i];
            max_err = max_err.max((v - truth).norm());
        }
        let w = summarize_work(&exps);
        println!(
            "tol={tol:.0e}: max_err={max_err:.2e} p={:.1} kappa={:.2} W={:.1} maxp={} maxk={} ({:?})",
            w.mean_order, w.mean_kappa, w.mean_work, w.max_order, w.max_kappa, t.elapsed()
        );
    }
}
