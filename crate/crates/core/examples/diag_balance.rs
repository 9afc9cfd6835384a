use cfb::balancing::{solve_weights_with, Arm, BalancingConfig, InnerProblemMatrices, balancing_error_s};
use cfb::pipeline::{Analysis, GridSpec, PipelineConfig};
use cfb::simulation::{generate_with_truth, ise_against, replicate_rng, SimSetting};
use cfb::estimators::{weighting_curve, Method};
use nalgebra::DVector;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let c1: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.03);
    let c2: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.03);
    let step0: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let max_iters: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(2000);

    let setting = SimSetting::new(1, 100).unwrap();
    let mut rng = replicate_rng(7, 0);
    let (ds, _truth) = generate_with_truth(&setting, &mut rng).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.max_iters = max_iters;
    cfg.step0 = step0;
    let probe = Analysis::new(&ds, cfg.clone()).unwrap();
    let h = probe.bandwidth();
    let n = 100f64;
    cfg.lambda1 = Some(c1 * n.ln() / (n * h));
    cfg.lambda2 = Some(c2 * n.ln() / n);
    let mut analysis = Analysis::new(&ds, cfg.clone()).unwrap();

    let mut config = BalancingConfig::theory_defaults(100, h, 1, Arm::Treated);
    config.lambda1 = cfg.lambda1.unwrap();
    config.lambda2 = cfg.lambda2.unwrap();
    config.max_iters = max_iters;
    config.step0 = step0;
    let matrices = InnerProblemMatrices::for_arm(analysis.ds(), analysis.factorization(), analysis.ctx(), &config).unwrap();
    let solved = solve_weights_with(&matrices, &config).unwrap();
    println!("iters={} converged={} best_obj={:.5}", solved.iterations, solved.converged,
        solved.objective_trace.iter().cloned().fold(f64::INFINITY, f64::min));
    println!("w stats: max={:.3} mean_active={:.3}",
        solved.w.amax(),
        solved.w.iter().zip(analysis.ds().t()).filter(|(_, &t)| t == 1).map(|(w, _)| w).sum::<f64>()
            / analysis.ds().treated_count() as f64);

    // constant-function local balance: (1/N) sum_i T_i w_i ktilde(V_i, v) vs 1
    let scaled_ds = analysis.ds();
    let ctxr = analysis.ctx();
    let mut worst = 0.0f64;
    for k in 0..=50 {
        let v = k as f64 / 50.0;
        let kt = ctxr.ktilde_all(&[v]);
        let mut s = 0.0;
        for i in 0..100 { if scaled_ds.t()[i] == 1 { s += solved.w[i] * kt[i]; } }
        worst = worst.max((s / 100.0 - 1.0).abs());
    }
    println!("worst constant-balance gap over grid: {worst:.4}");

    // balancing error of the true outcome function m1 (linear in raw covars):
    // coefficients interpolate m1 at the sample points
    let m1_vals = DVector::from_fn(100, |i, _| {
        // m1 in raw units; recover raw x from scaled via the stored map
        let scaling = analysis.scaling();
        let x1 = scaling.unscale_value(0, scaled_ds.x()[(i, 0)]);
        let x2 = scaling.unscale_value(1, scaled_ds.x()[(i, 1)]);
        let x4 = scaling.unscale_value(3, scaled_ds.x()[(i, 3)]);
        10.0 + x1 + x2 + x4
    });
    let spec = cfb::kernels::ReproducingKernelSpec::for_dataset(scaled_ds);
    let m = cfb::kernels::gram_matrix(scaled_ds.x(), &spec).unwrap();
    let coeffs = m.clone().lu().solve(&m1_vals).unwrap();
    let w1 = DVector::from_element(100, 1.0);
    println!("S(w=1, m1)  = {:.4}", balancing_error_s(&w1, &coeffs, scaled_ds, ctxr).unwrap());
    println!("S(solved, m1) = {:.4}", balancing_error_s(&solved.w, &coeffs, scaled_ds, ctxr).unwrap());

    // resulting curve quality with both arms solved through the pipeline
    let grid = analysis.grid(GridSpec::Quantiles { points: 100 }).unwrap();
    let (wt, wc) = analysis.weights(cfb::balancing::BalanceCriterion::Smoothed).unwrap();
    let curve = weighting_curve(analysis.ds(), &wt, &wc, analysis.ctx(), &grid, Method::Proposed).unwrap();
    println!("ISE = {:.3}", ise_against(&curve, |v| setting.true_tau(v)));
}
