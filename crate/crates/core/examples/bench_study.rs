use cfb::estimators::{Augmentation, Method};
use cfb::pipeline::{GridSpec, PipelineConfig};
use cfb::simulation::{run_study, StudyPlan};
use std::time::Instant;

fn main() {
    let reps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    let max_iters: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let mut pipeline = PipelineConfig::default();
    pipeline.max_iters = max_iters;
    let plan = StudyPlan {
        settings: vec![1],
        methods: vec![Method::Proposed, Method::AteRkhs, Method::Ipw],
        augmentations: vec![Augmentation::None],
        n: 100,
        n_reps: reps,
        seed: 7,
        parallelism: std::thread::available_parallelism().map(|v| v.get()).unwrap_or(4),
        pipeline,
        ise_grid: GridSpec::Quantiles { points: 100 },
        keep_curves: false,
    };
    let start = Instant::now();
    let out = run_study(&plan).unwrap();
    for row in &out.rows {
        println!(
            "setting {} {:>9}/{:<4} AISE {:>9.3} (se {:.3}) MeISE {:>8.3} n_eff {}",
            row.setting, row.method.as_str(), row.augmentation.as_str(),
            row.aise, row.aise_se, row.meise, row.n_effective
        );
    }
    for f in &out.failures { eprintln!("failure: {f}"); }
    println!("elapsed: {:.1?} for {reps} reps, max_iters {max_iters}", start.elapsed());
}
