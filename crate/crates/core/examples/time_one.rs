use cfb::balancing::BalanceCriterion;
use cfb::pipeline::{Analysis, PipelineConfig};
use cfb::simulation::{generate, replicate_rng, SimSetting};
use std::time::Instant;

fn main() {
    let setting = SimSetting::new(1, 100).unwrap();
    let mut rng = replicate_rng(7, 2);
    let ds = generate(&setting, &mut rng).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.step0 = 4.0;
    cfg.max_iters = 3000;
    let probe = Analysis::new(&ds, cfg.clone()).unwrap();
    let h = probe.bandwidth();
    let n = 100f64;
    cfg.lambda1 = Some(0.003 * n.ln() / (n * h));
    cfg.lambda2 = Some(0.003 * n.ln() / n);
    let mut analysis = Analysis::new(&ds, cfg).unwrap();
    let t0 = Instant::now();
    let (mt, _mc) = analysis.weights(BalanceCriterion::MarginalLimit).unwrap();
    println!("marginal pair: {:.2?} (iters {} conv {})", t0.elapsed(), mt.iterations, mt.converged);
    let t1 = Instant::now();
    let (st, _sc) = analysis.weights(BalanceCriterion::Smoothed).unwrap();
    println!("smoothed pair: {:.2?} (iters {} conv {})", t1.elapsed(), st.iterations, st.converged);
}
