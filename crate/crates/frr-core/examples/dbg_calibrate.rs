use frr_core::estimators::PredictionMode;
use frr_core::harness::*;
use frr_core::ionosim::*;

fn main() {
    let mode: PredictionMode = std::env::args()
        .nth(1)
        .unwrap_or("paper".into())
        .parse()
        .unwrap();
    let trials: usize = std::env::args()
        .nth(2)
        .unwrap_or("60".into())
        .parse()
        .unwrap();
    let config = SceneConfig {
        duration_seconds: 10,
        ..SceneConfig::default()
    };
    let train_scene = gen_scene(&config, 1000).unwrap();

    // provisional epsilon grid; tune clean-only at each, print best score
    let ranges = TuningRanges {
        num_trials: trials,
        ..Default::default()
    };
    for eps in [0.05, 0.1, 0.2, 0.4, 0.8, 1.6] {
        let objective = scene_tuning_objective(&train_scene, 0, mode, eps, 7).unwrap();
        let out = random_search_tune(&ranges, MethodKind::CleanOnly, &objective, 99).unwrap();
        println!(
            "mode={mode:?} eps={eps}: best clean-only score {:.3} (trial {}) params {}",
            out.best_score,
            out.best_trial,
            serde_json::to_string(&out.best).unwrap()
        );
    }
}
