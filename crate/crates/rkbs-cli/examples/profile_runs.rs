use std::time::Instant;
use rkbs_cli::config::GeneratorSpec;
use rkbs_cli::synth;
use rkbs_core::model::ActivationDto;
use rkbs_core::pipeline::{run_representer, PipelineConfig};
use rkbs_core::trainer::{train_prox, Dataset, LossFunction, TrainConfig};

fn main() {
    let total = Instant::now();
    for seed in 0..20u64 {
        let t0 = Instant::now();
        let depth = 1 + (seed % 2) as usize;
        let n = [4usize, 6, 8][(seed % 3) as usize];
        let spec = GeneratorSpec {
            teacher_widths: vec![3; depth],
            noise: 0.0,
            n,
            d: 2,
            p: 1,
            seed: 500 + seed,
            activation: ActivationDto::Relu,
        };
        let rows = synth::generate(&spec).unwrap();
        let (inputs, targets) = rows.into_iter().unzip();
        let data = Dataset::new(inputs, targets).unwrap();
        let train_cfg = TrainConfig {
            init_widths: vec![32; depth],
            lambda: 0.005,
            steps: 150,
            step_size: 0.2,
            seed: 1000 + seed,
            ..TrainConfig::default()
        };
        let trained = train_prox(&train_cfg, &data, LossFunction::Squared).unwrap().network;
        let t_train = t0.elapsed();
        let t1 = Instant::now();
        let outcome = run_representer(&trained, &data, &PipelineConfig::default()).unwrap();
        println!(
            "seed {seed}: depth {depth} n {n} train {:?} sparsify {:?} widths {:?} stages/layer: {:?}",
            t_train,
            t1.elapsed(),
            outcome.finite.widths(),
            outcome
                .report
                .layers
                .iter()
                .map(|l| l.residual)
                .collect::<Vec<_>>()
        );
    }
    println!("total {:?}", total.elapsed());
}
