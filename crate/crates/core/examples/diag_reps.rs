use cfb::balancing::BalanceCriterion;
use cfb::estimators::{weighting_curve, Method};
use cfb::pipeline::{Analysis, GridSpec, PipelineConfig};
use cfb::simulation::{generate, ise_against, replicate_rng, SimSetting};

fn main() {
    let setting = SimSetting::new(1, 100).unwrap();
    let c1: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let c2: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.03);
    for rep in 0..5u64 {
        let mut rng = replicate_rng(7, rep);
        let ds = generate(&setting, &mut rng).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.step0 = 4.0;
        cfg.max_iters = 4000;
        let probe = Analysis::new(&ds, cfg.clone()).unwrap();
        let h = probe.bandwidth();
        let n = 100f64;
        cfg.lambda1 = Some(c1 * n.ln() / (n * h));
        cfg.lambda2 = Some(c2 * n.ln() / n);
        let mut analysis = Analysis::new(&ds, cfg).unwrap();
        let grid = analysis.grid(GridSpec::Quantiles { points: 100 }).unwrap();
        let (wt, wc) = analysis.weights(BalanceCriterion::Smoothed).unwrap();
        let c = weighting_curve(analysis.ds(), &wt, &wc, analysis.ctx(), &grid, Method::Proposed).unwrap();
        let i_cfb = ise_against(&c, |v| setting.true_tau(v));
        let (at, ac) = analysis.weights(BalanceCriterion::MarginalLimit).unwrap();
        let cv = weighting_curve(analysis.ds(), &at, &ac, analysis.ctx(), &grid, Method::AteRkhs).unwrap();
        let i_ate = ise_against(&cv, |v| setting.true_tau(v));
        let nt = analysis.ds().treated_count();
        let mean_wt: f64 = wt.w.iter().zip(analysis.ds().t()).filter(|(_, &t)| t == 1).map(|(w, _)| w).sum::<f64>() / nt as f64;
        let mean_at: f64 = at.w.iter().zip(analysis.ds().t()).filter(|(_, &t)| t == 1).map(|(w, _)| w).sum::<f64>() / nt as f64;
        println!("rep {rep}: h={h:.4} n_t={nt} | cfb ISE {i_cfb:>8.2} (mean w_t {mean_wt:.2}, it {} cv {}) | ate ISE {i_ate:>8.2} (mean w_t {mean_at:.2}, it {} cv {})",
            wt.iterations, wt.converged, at.iterations, at.converged);
    }
}
