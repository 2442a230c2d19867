//! TV baseline on the shipped phantom with the weight tuned on another seed.
//!
//! Usage: `tv_run [iterations] [stepsize] [solver: adam|gd]`

use umri::metrics::{evaluate, EvaluationMode, Normalization};
use umri::phantom::{desk_problem, REFERENCE_SEED};
use umri::tv::{tune_lambda, tv_minimize, tv_reconstruct, TvConfig, TvSolver, LAMBDA_GRID};

fn main() -> umri::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut config = TvConfig::default();
    if let Some(a) = args.first() {
        config.iterations = a.parse().expect("iterations");
    }
    if let Some(a) = args.get(1) {
        config.stepsize = a.parse().expect("stepsize");
    }
    if args.get(2).map(String::as_str) == Some("gd") {
        config.solver = TvSolver::Gd;
    }
    let tune = desk_problem(REFERENCE_SEED + 1, 4)?;
    let grid = LAMBDA_GRID;
    let (lambda, scores) = tune_lambda(&tune.measurement, Some(&tune.maps), &tune.ground_truth(), &config, &grid)?;
    println!("tuning scores {scores:?} -> lambda {lambda}");
    let p = desk_problem(REFERENCE_SEED, 4)?;
    let config = TvConfig { lambda, ..config };
    let sol = tv_minimize(&p.measurement, &p.maps, &config)?;
    let increases = sol.objective_trace.windows(2).filter(|w| w[1] > w[0]).count();
    println!(
        "objective {:.4e} -> {:.4e}, {increases} increases",
        sol.objective_trace[0],
        sol.objective_trace.last().unwrap()
    );
    let img = tv_reconstruct(&p.measurement, Some(&p.maps), &config)?;
    let rep = evaluate(&[img], &[p.ground_truth()], Normalization::MeanstdGt, EvaluationMode::Image)?;
    println!("TV PSNR {:.2}", rep.psnr.mean);
    Ok(())
}
