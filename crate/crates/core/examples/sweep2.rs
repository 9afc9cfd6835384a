use cfb::balancing::BalanceCriterion;
use cfb::estimators::{weighting_curve, Method};
use cfb::pipeline::{Analysis, GridSpec, PipelineConfig};
use cfb::simulation::{generate, ise_against, replicate_rng, SimSetting};

fn main() {
    let setting = SimSetting::new(1, 100).unwrap();
    let n_reps = 5;
    for &c1 in &[0.3, 0.2, 0.1, 0.06] {
        for &c2 in &[0.1, 0.03, 0.01] {
            let (mut sum_cfb, mut sum_ate, mut wins) = (0.0, 0.0, 0);
            for rep in 0..n_reps {
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
                sum_cfb += i_cfb; sum_ate += i_ate;
                if i_cfb < i_ate { wins += 1; }
            }
            println!("c1 {:>5} c2 {:>5}: AISE cfb {:>8.3}  ate {:>8.3}  wins {}/{}",
                c1, c2, sum_cfb / n_reps as f64, sum_ate / n_reps as f64, wins, n_reps);
        }
    }
}
