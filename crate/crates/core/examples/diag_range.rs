use cfb::balancing::BalanceCriterion;
use cfb::estimators::{weighting_curve, Method};
use cfb::pipeline::{Analysis, GridSpec, PipelineConfig};
use cfb::simulation::{generate, ise_against, replicate_rng, SimSetting};
use nalgebra::DVector;

fn main() {
    let setting = SimSetting::new(1, 100).unwrap();
    let n_reps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let c1: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0.1);
    let c2: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(0.03);
    let mut agg = vec![0.0; 4]; // [ht q05-95, ht -1.5..1.5, hajek q05-95, hajek -1.5..1.5]
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
        let grid_q = analysis.grid(GridSpec::Quantiles { points: 100 }).unwrap();
        let grid_f = analysis.grid(GridSpec::Explicit { min: -1.5, max: 1.5, points: 100 }).unwrap();
        let (wt, wc) = analysis.weights(BalanceCriterion::Smoothed).unwrap();

        // HT curve via the library
        let ht_q = weighting_curve(analysis.ds(), &wt, &wc, analysis.ctx(), &grid_q, Method::Proposed).unwrap();
        let ht_f = weighting_curve(analysis.ds(), &wt, &wc, analysis.ctx(), &grid_f, Method::Proposed).unwrap();
        agg[0] += ise_against(&ht_q, |v| setting.true_tau(v)) / n_reps as f64;
        agg[1] += ise_against(&ht_f, |v| setting.true_tau(v)) / n_reps as f64;

        // Hajek (ratio) variant computed here
        let dsr = analysis.ds();
        let ctx = analysis.ctx();
        for (gi, grid) in [(2usize, &grid_q), (3usize, &grid_f)] {
            let mut est = Vec::with_capacity(grid.scaled.len());
            for &v in &grid.scaled {
                let kt = ctx.ktilde_all(&[v]);
                let (mut num1, mut den1, mut num0, mut den0) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..dsr.n() {
                    if dsr.t()[i] == 1 {
                        num1 += wt.w[i] * kt[i] * dsr.y()[i];
                        den1 += wt.w[i] * kt[i];
                    } else {
                        num0 += wc.w[i] * kt[i] * dsr.y()[i];
                        den0 += wc.w[i] * kt[i];
                    }
                }
                est.push(num1 / den1.max(1e-12) - num0 / den0.max(1e-12));
            }
            let curve = cfb::estimators::EffectCurve {
                grid: grid.original.clone(), estimate: est,
                method: Method::Proposed, augmentation: cfb::estimators::Augmentation::None, h,
            };
            agg[gi] += ise_against(&curve, |v| setting.true_tau(v)) / n_reps as f64;
        }
        let _ = DVector::<f64>::zeros(1);
    }
    println!("AISE over {n_reps} reps (c1={c1}, c2={c2}):");
    println!("  HT    q05-q95: {:.3}", agg[0]);
    println!("  HT    [-1.5,1.5]: {:.3}", agg[1]);
    println!("  Hajek q05-q95: {:.3}", agg[2]);
    println!("  Hajek [-1.5,1.5]: {:.3}", agg[3]);
}
