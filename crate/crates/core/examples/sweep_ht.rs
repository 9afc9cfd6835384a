use cfb::balancing::BalanceCriterion;
use cfb::pipeline::{Analysis, GridSpec, PipelineConfig};
use cfb::simulation::{generate, ise_against, replicate_rng, SimSetting};
use cfb::estimators::{Augmentation, EffectCurve, Method};
use nalgebra::DVector;

fn ht_curve(analysis: &cfb::pipeline::Analysis, wt: &DVector<f64>, wc: &DVector<f64>,
            grid: &cfb::estimators::CurveGrid, h: f64) -> EffectCurve {
    let ds = analysis.ds();
    let ctx = analysis.ctx();
    let n = ds.n() as f64;
    let adj = DVector::from_fn(ds.n(), |i, _| {
        if ds.t()[i] == 1 { wt[i] * ds.y()[i] } else { -wc[i] * ds.y()[i] }
    });
    let est: Vec<f64> = grid.scaled.iter().map(|&v| ctx.ktilde_all(&[v]).dot(&adj) / n).collect();
    EffectCurve { grid: grid.original.clone(), estimate: est, method: Method::Proposed, augmentation: Augmentation::None, h }
}

fn main() {
    let setting = SimSetting::new(1, 100).unwrap();
    let n_reps = 10u64;
    for &h in &[0.12, 0.16, 0.20, 0.24] {
        for &(c1, c2) in &[(0.01, 0.01), (0.003, 0.003), (0.03, 0.01)] {
            let (mut s_cfb, mut s_ate, mut wins) = (0.0, 0.0, 0);
            for rep in 0..n_reps {
                let mut rng = replicate_rng(7, rep);
                let ds = generate(&setting, &mut rng).unwrap();
                let mut cfg = PipelineConfig::default();
                cfg.step0 = 4.0;
                cfg.max_iters = 3000;
                cfg.bandwidth = Some(h);
                let n = 100f64;
                cfg.lambda1 = Some(c1 * n.ln() / (n * h));
                cfg.lambda2 = Some(c2 * n.ln() / n);
                let mut analysis = Analysis::new(&ds, cfg).unwrap();
                let grid = analysis.grid(GridSpec::Quantiles { points: 100 }).unwrap();
                let (wt, wc) = analysis.weights(BalanceCriterion::Smoothed).unwrap();
                let i_cfb = ise_against(&ht_curve(&analysis, &wt.w, &wc.w, &grid, h), |v| setting.true_tau(v));
                let (at, ac) = analysis.weights(BalanceCriterion::MarginalLimit).unwrap();
                let i_ate = ise_against(&ht_curve(&analysis, &at.w, &ac.w, &grid, h), |v| setting.true_tau(v));
                s_cfb += i_cfb; s_ate += i_ate;
                if i_cfb < i_ate { wins += 1; }
            }
            println!("h {h} c1 {c1:>6} c2 {c2:>6}: AISE cfb {:>8.3}  ate {:>8.3}  wins {wins}/{n_reps}",
                s_cfb / n_reps as f64, s_ate / n_reps as f64);
        }
    }
}
