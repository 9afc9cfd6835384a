use cfb::balancing::{Arm, BalancingConfig, InnerProblemMatrices, solve_weights_with};
use cfb::pipeline::{Analysis, PipelineConfig};
use cfb::simulation::{generate, replicate_rng, SimSetting};
use nalgebra::DVector;

fn main() {
    let setting = SimSetting::new(1, 100).unwrap();
    let mut rng = replicate_rng(7, 4);
    let ds = generate(&setting, &mut rng).unwrap();
    let mut cfg = PipelineConfig::default();
    cfg.step0 = 4.0;
    cfg.max_iters = 30000;
    cfg.bandwidth = Some(0.25);
    let h = 0.25;
    let n = 100f64;
    let (c1, c2) = (0.03, 0.01);
    cfg.lambda1 = Some(c1 * n.ln() / (n * h));
    cfg.lambda2 = Some(c2 * n.ln() / n);
    let analysis = Analysis::new(&ds, cfg.clone()).unwrap();

    let mut config = BalancingConfig::theory_defaults(100, h, 1, Arm::Treated);
    config.lambda1 = cfg.lambda1.unwrap();
    config.lambda2 = cfg.lambda2.unwrap();
    config.max_iters = 30000;
    config.step0 = 4.0;
    let m = InnerProblemMatrices::for_arm(analysis.ds(), analysis.factorization(), analysis.ctx(), &config).unwrap();
    let solved = solve_weights_with(&m, &config).unwrap();
    let f_solved = m.objective(&solved.w).unwrap();

    // witness: projected gradient on the smooth constant-balance quadratic
    //   Q(w) = (1/N^2) (T.w - 1)' G (T.w - 1) + rho * (1/N) sum_t w_i^2 G_ii
    let g = analysis.ctx().g_h();
    let gd = analysis.ctx().g_diag();
    let t = analysis.ds().t().to_vec();
    let rho = 1e-4;
    let mut w = DVector::from_element(100, 1.0);
    let q_of = |w: &DVector<f64>| {
        let a = DVector::from_fn(100, |i, _| t[i] as f64 * w[i] - 1.0);
        (a.transpose() * g * &a)[(0,0)] / (100.0*100.0)
            + rho * (0..100).filter(|&i| t[i]==1).map(|i| w[i]*w[i]*gd[i]).sum::<f64>() / 100.0
    };
    let mut step = 50.0;
    let mut q_prev = q_of(&w);
    for _ in 0..20000 {
        let a = DVector::from_fn(100, |i, _| t[i] as f64 * w[i] - 1.0);
        let ga = g * &a;
        let mut grad = DVector::zeros(100);
        for i in 0..100 {
            if t[i] == 1 {
                grad[i] = 2.0 * ga[i] / (100.0*100.0) + 2.0 * rho * w[i] * gd[i] / 100.0;
            }
        }
        let mut w_next = &w - &grad * step;
        for i in 0..100 { if t[i]==1 { w_next[i] = w_next[i].max(1.0); } else { w_next[i] = 1.0; } }
        let q_next = q_of(&w_next);
        if q_next < q_prev { w = w_next; q_prev = q_next; step *= 1.1; } else { step *= 0.5; if step < 1e-9 { break; } }
    }
    println!("witness constant-balance Q = {q_prev:.6}, max w = {:.1}", w.amax());
    let f_witness = m.objective(&w).unwrap();
    println!("F(solved)  = {f_solved:.5}");
    println!("F(witness) = {f_witness:.5}");

    // local mass gap of witness
    let ctx = analysis.ctx();
    let mut worst: f64 = 0.0;
    for k in 0..=40 {
        let v = k as f64 / 40.0;
        let kt = ctx.ktilde_all(&[v]);
        let mut at = 0.0;
        for i in 0..100 { if t[i] == 1 { at += w[i] * kt[i]; } }
        worst = worst.max((at / 100.0 - 1.0).abs());
    }
    println!("witness worst treated mass gap = {worst:.3}");
}
