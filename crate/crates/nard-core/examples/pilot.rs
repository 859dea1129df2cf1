//! Calibration run backing the desk-scale recovery targets: fits every
//! method on the standard synthetic instance over 10 seeds and prints the
//! support-recovery metrics per seed plus the means. The recorded output
//! lives in docs/pilot.md.

use std::time::Instant;

use nard_core::*;

fn metrics(state: &ArdState, truth: &GroundTruth) -> (f64, f64, f64, f64) {
    let m = truth.omega.nrows();
    let est_o = precision_support(&state.omega, 0.0);
    let tru_o = precision_support(&truth.omega, 0.0);
    let (tpr_o, fpr_o) = tpr_fpr(&est_o, &tru_o, m * (m - 1) / 2);
    let est_w = support(&state.w, 1e-4);
    let tru_w = support(&truth.w, 0.0);
    let (tpr_w, fpr_w) = tpr_fpr(&est_w, &tru_w, truth.w.nrows() * truth.w.ncols());
    (tpr_o, fpr_o, tpr_w, fpr_w)
}

fn main() {
    let all = [Method::Nard, Method::Sequential, Method::Surrogate, Method::Hybrid];
    let lambda: f64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.06);
    // Optional second arg: comma-separated method filter (nard,sequential,...).
    let methods: Vec<Method> = match std::env::args().nth(2) {
        Some(list) => list
            .split(',')
            .map(|name| match name {
                "nard" => Method::Nard,
                "sequential" => Method::Sequential,
                "surrogate" => Method::Surrogate,
                "hybrid" => Method::Hybrid,
                other => panic!("unknown method {other}"),
            })
            .collect(),
        None => all.to_vec(),
    };
    println!("pilot: d=300 m=60 N=400 edge_prob=0.1 w_sparsity=0.005 lambda={lambda}");
    for method in methods {
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        let mut total_secs = 0.0;
        for seed in 0..10u64 {
            let spec = SynthSpec::new(300, 60, 400, 0.005, 0.1, seed);
            let (data, truth) = generate(&spec).unwrap();
            let config = FitConfig {
                lambda,
                epsilon: if method == Method::Nard { 1e-4 } else { 1e-3 },
                max_iter: if method == Method::Nard { 60 } else { 40 },
                seed,
                method,
                ..Default::default()
            };
            let t0 = Instant::now();
            let state = fit(&data, &config, &HyperpriorConfig::default()).unwrap();
            let secs = t0.elapsed().as_secs_f64();
            total_secs += secs;
            let (tpr_o, fpr_o, tpr_w, fpr_w) = metrics(&state, &truth);
            sums.0 += tpr_o;
            sums.1 += fpr_o;
            sums.2 += tpr_w;
            sums.3 += fpr_w;
            println!(
                "{method:?} seed {seed}: TPR_omega {tpr_o:.4} FPR_omega {fpr_o:.4} TPR_w {tpr_w:.4} FPR_w {fpr_w:.4} iters {} active {} {secs:.1}s",
                state.iter,
                state.alpha.num_active()
            );
        }
        println!(
            "{method:?} mean: TPR_omega {:.4} FPR_omega {:.4} TPR_w {:.4} FPR_w {:.4} total {total_secs:.1}s",
            sums.0 / 10.0,
            sums.1 / 10.0,
            sums.2 / 10.0,
            sums.3 / 10.0
        );
    }
}
