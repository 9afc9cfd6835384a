use cfb::balancing::BalanceCriterion;
use cfb::estimators::{weighting_curve, Method};
use cfb::pipeline::{Analysis, GridSpec, PipelineConfig};
use cfb::simulation::{generate, ise_against, replicate_rng, SimSetting};

fn main() {
    let setting = SimSetting::new(1, 100).unwrap();
    let n_reps = 10;
    for &(c1, c2) in &[(1.0, 1.0), (0.3, 0.3), (0.3, 0.03), (0.1, 0.1), (0.1, 0.03), (0.1, 0.01), (0.03, 0.03), (0.03, 0.01), (0.01, 0.01)] {
        let (mut s_cfb, mut s_ate, mut wins) = (0.0, 0.0, 0);
        for rep in 0..n_reps {
            let mut rng = replicate_rng(7, rep);
            let ds = generate(&setting, &mut rng).unwrap();
            let mut cfg = PipelineConfig::default();
            cfg.step0 = 4.0;
            cfg.max_iters = 6000;
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
            s_cfb += i_cfb; s_ate += i_ate;
            if i_cfb < i_ate { wins += 1; }
        }
        println!("c1 {c1:>5} c2 {c2:>5}: AISE cfb {:>8.3}  ate {:>8.3}  wins {wins}/{n_reps}",
            s_cfb / n_reps as f64, s_ate / n_reps as f64);
    }
}
