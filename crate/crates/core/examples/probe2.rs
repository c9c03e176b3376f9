// Scratch probe: r/h sweep and solve-table rows (removed before release).
use std::sync::Arc;
use std::time::Instant;

use aqbx2d::aqbx::{summarize_work, AqbxConfig, LayerPotential};
use aqbx2d::geometry::{build_boundary, ParametrizedCurve, Side};
use aqbx2d::solver::{random_circle_sources, solve, BoundaryValueProblem, SolveOptions};

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "rh".into());
    let curve = ParametrizedCurve::starfish(5, 0.3);
    let boundary = Arc::new(build_boundary(&curve.oriented_ccw(false), 200).unwrap());
    let h = boundary.panel_arclen();
    let k = 2.0 / h;
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(20260810);
    let sources = random_circle_sources(&mut rng, 5, 0.2);
    let problem =
        BoundaryValueProblem::helmholtz_exterior_on(boundary.clone(), k, sources).unwrap();
    let lp = LayerPotential::new(boundary.clone(), problem.kernel);

    if mode == "rh" {
        let opts = SolveOptions {
            aqbx_tol: Some(1e-14),
            ..SolveOptions::with_gmres_tol(1e-12)
        };
        let t = Instant::now();
        let (density, _) = solve(&lp, &problem, &opts).unwrap();
        println!("reference solve in {:?}", t.elapsed());
        for r_over_h in [0.10, 0.25, 0.50, 0.75, 1.00] {
            let centers = lp.place_centers(r_over_h, Side::Exterior, 5).unwrap();
            let cfg = AqbxConfig::with_tol(1e-10);
            let t = Instant::now();
            let (values, exps) = lp.evaluate_on_surface(&density, &centers, &cfg).unwrap();
            let mut max_err = 0.0f64;
            for (i, v) in values.iter().enumerate() {
                max_err = max_err.max((v - problem.dirichlet[i]).norm());
            }
            let w = summarize_work(&exps);
            println!(
                "r/h={r_over_h}: err={max_err:.2e} p={:.1} kappa={:.2} W={:.1} maxk={} ({:?})",
                w.mean_order,
                w.mean_kappa,
                w.mean_work,
                w.max_kappa,
                t.elapsed()
            );
        }
    } else {
        for (gt, at) in [(1e-2, 1e-4), (1e-4, 1e-6), (1e-6, 1e-8), (1e-8, 1e-10)] {
            let opts = SolveOptions {
                aqbx_tol: Some(at),
                ..SolveOptions::with_gmres_tol(gt)
            };
            let t = Instant::now();
            let (_, report) = solve(&lp, &problem, &opts).unwrap();
            println!(
                "gmres={gt:.0e} aqbx={at:.0e}: iters={} err={:.2e} resol={:.2e} ({:?})",
                report.iterations,
                report.eval_error,
                report.resolution_estimate,
                t.elapsed()
            );
        }
    }
}
