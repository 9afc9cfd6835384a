use cfb::balancing::{Arm, BalancingConfig, InnerProblemMatrices, solve_weights_with};
use cfb::estimators::{weighting_curve, Method};
use cfb::pipeline::{Analysis, GridSpec, PipelineConfig};
use cfb::simulation::{generate, ise_against, replicate_rng, SimSetting};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let rep: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let c1: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.01);
    let c2: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0.03);
    let step0: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(4.0);
    let iters: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(30000);
    let h_over: Option<f64> = args.get(6).and_then(|s| s.parse().ok());

    let setting = SimSetting::new(1, 100).unwrap();
    let mut rng = replicate_rng(7, rep);
    let ds = generate(&setting, &mut rng).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.step0 = step0;
    cfg.max_iters = iters;
    cfg.bandwidth = h_over;
    let probe = Analysis::new(&ds, cfg.clone()).unwrap();
    let h = probe.bandwidth();
    let n = 100f64;
    cfg.lambda1 = Some(c1 * n.ln() / (n * h));
    cfg.lambda2 = Some(c2 * n.ln() / n);
    let mut analysis = Analysis::new(&ds, cfg.clone()).unwrap();

    // spectrum head
    let d = analysis.factorization().d();
    print!("D spectrum: ");
    for k in 0..12.min(d.len()) { print!("{:.2} ", d[k]); }
    println!(" ... r={}", d.len());

    for arm in [Arm::Treated, Arm::Control] {
        let mut config = BalancingConfig::theory_defaults(100, h, 1, arm);
        config.lambda1 = cfg.lambda1.unwrap();
        config.lambda2 = cfg.lambda2.unwrap();
        config.max_iters = iters;
        config.step0 = step0;
        let m = InnerProblemMatrices::for_arm(analysis.ds(), analysis.factorization(), analysis.ctx(), &config).unwrap();
        let s = solve_weights_with(&m, &config).unwrap();
        let best = s.objective_trace.iter().cloned().fold(f64::INFINITY, f64::min);
        // trace at checkpoints
        let t = &s.objective_trace;
        let ck: Vec<String> = [0usize, 500, 2000, 8000, 16000, t.len()-1].iter()
            .filter(|&&k| k < t.len())
            .map(|&k| format!("{k}:{:.4}", t[k])).collect();
        println!("{arm:?}: iters={} conv={} best={best:.5} trace {}", s.iterations, s.converged, ck.join(" "));
    }

    let grid = analysis.grid(GridSpec::Quantiles { points: 100 }).unwrap();
    let (wt, wc) = analysis.weights(cfb::balancing::BalanceCriterion::Smoothed).unwrap();
    let curve = weighting_curve(analysis.ds(), &wt, &wc, analysis.ctx(), &grid, Method::Proposed).unwrap();
    println!("ISE = {:.3}  (h={h:.4})", ise_against(&curve, |v| setting.true_tau(v)));
    // local mass gaps
    let ctx = analysis.ctx();
    let dss = analysis.ds();
    let mut worst_t = 0.0f64; let mut worst_c = 0.0f64;
    for k in 0..=40 {
        let v = analysis.scaling().scale_value(0, grid.original[k * (grid.original.len()-1) / 40]);
        let kt = ctx.ktilde_all(&[v]);
        let (mut at, mut ac) = (0.0, 0.0);
        for i in 0..100 {
            if dss.t()[i] == 1 { at += wt.w[i] * kt[i]; } else { ac += wc.w[i] * kt[i]; }
        }
        worst_t = worst_t.max((at / 100.0 - 1.0).abs());
        worst_c = worst_c.max((ac / 100.0 - 1.0).abs());
    }
    println!("worst local mass gap: treated {worst_t:.3} control {worst_c:.3}");
}
