//! PCA and LPP baselines with 1NN scoring, next to TTPUDR on the same split.

use ttpudr::evalbench::split;
use ttpudr::experiment::{evaluate_method, Method, MethodSettings};
use ttpudr::synth::{two_clusters, TwoClusterSpec};
use ttpudr::TrainConfig;

fn main() -> ttpudr::Result<()> {
    let data = two_clusters(&TwoClusterSpec::default())?;
    let s = split(data.labels(), 2, 0.5, 11, true)?;
    let (train, test) = (data.subset(&s.train)?, data.subset(&s.test)?);
    let settings = MethodSettings {
        train: TrainConfig { ranks: vec![2, 2], ..TrainConfig::default() },
        ..Default::default()
    };
    println!("method  dim  params     OA     AA     KC");
    for method in [Method::Ttpudr, Method::Pca, Method::Lpp] {
        for dim in [1, 2, 4] {
            let r = evaluate_method(&train, &test, method, dim, &settings, 5)?.result;
            println!(
                "{:<7} {dim:>3} {:>7} {:.4} {:.4} {:.4}",
                method.name(),
                r.param_count,
                r.metrics.oa,
                r.metrics.aa,
                r.metrics.kc
            );
        }
    }
    Ok(())
}
