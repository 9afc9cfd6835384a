use cfb::balancing::{solve_weights_with, Arm, BalanceCriterion, BalancingConfig, InnerProblemMatrices};
use cfb::pipeline::{oracle_weights, Analysis, GridSpec, PipelineConfig};
use cfb::simulation::{generate_with_truth, ise_against, replicate_rng, SimSetting};
use cfb::estimators::{weighting_curve, Method};

fn main() {
    let setting = SimSetting::new(1, 100).unwrap();
    let mut rng = replicate_rng(7, 0);
    let (ds, truth) = generate_with_truth(&setting, &mut rng).unwrap();
    let mut analysis = Analysis::new(&ds, PipelineConfig::default()).unwrap();
    println!("h = {}", analysis.bandwidth());
    println!("rank r = {}", analysis.factorization().rank());
    println!("D max/min = {:.3e} / {:.3e}", analysis.factorization().d()[0],
             analysis.factorization().d()[analysis.factorization().rank()-1]);
    let g = analysis.ctx().g_h();
    println!("G_h diag range: {:.3} .. {:.3}", g.diagonal().min(), g.diagonal().max());

    let config = BalancingConfig::theory_defaults(100, analysis.bandwidth(), 1, Arm::Treated);
    println!("lambda1 = {:.4}, lambda2 = {:.4}", config.lambda1, config.lambda2);
    let matrices = InnerProblemMatrices::for_arm(analysis.ds(), analysis.factorization(), analysis.ctx(), &config).unwrap();
    let result = solve_weights_with(&matrices, &config).unwrap();
    let trace = &result.objective_trace;
    println!("trace[0] = {:.5}, trace[last] = {:.5}, best = {:.5}, iters = {}, converged = {}",
        trace[0], trace[trace.len()-1], trace.iter().cloned().fold(f64::INFINITY, f64::min),
        result.iterations, result.converged);
    let wmax = result.w.amax();
    let wmean: f64 = result.w.iter().sum::<f64>() / 100.0;
    println!("solved w: max = {wmax:.3}, mean = {wmean:.3}");

    // oracle weights objective for the treated arm
    let n = ds.n();
    let mut w_oracle = nalgebra::DVector::from_element(n, 1.0);
    for i in 0..n { if ds.t()[i] == 1 { w_oracle[i] = 1.0 / truth.propensity[i]; } }
    let f_oracle = matrices.objective(&w_oracle).unwrap();
    println!("objective at oracle w = {f_oracle:.5}");
    println!("oracle w: max = {:.3}", w_oracle.amax());

    // ISE comparison: solved vs oracle vs unit weights
    let grid = analysis.grid(GridSpec::Quantiles { points: 100 }).unwrap();
    let (wt_o, wc_o) = oracle_weights(&truth.propensity);
    let curve_oracle = weighting_curve(analysis.ds(), &wt_o, &wc_o, analysis.ctx(), &grid, Method::Proposed).unwrap();
    println!("ISE with oracle weights = {:.3}", ise_against(&curve_oracle, |v| setting.true_tau(v)));

    let (wt, wc) = analysis.weights(BalanceCriterion::Smoothed).unwrap();
    let curve_solved = weighting_curve(analysis.ds(), &wt, &wc, analysis.ctx(), &grid, Method::Proposed).unwrap();
    println!("ISE with solved weights = {:.3}", ise_against(&curve_solved, |v| setting.true_tau(v)));
}
