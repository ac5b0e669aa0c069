//! Fine-tunes the same warm model with both policy-gradient variants and
//! compares reward curves and the gradient reaching latent steps.

use monet::forge::{curate, CurationConfig};
use monet::model::{Model, ModelConfig};
use monet::rl::{train_rl, Algo, RlConfig};
use monet::sft::{run_stage1, StageConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (records, _) = curate(&CurationConfig { sample_count: 900, ..CurationConfig::default() })?;
    let samples: Vec<_> = records.into_iter().map(|r| r.sample).collect();
    let (prompts, train) = samples.split_at(120);

    let mut warm = Model::new(ModelConfig::default(), 1)?;
    run_stage1(&mut warm, train, &[], &StageConfig { epochs: 1, eval_interval: 0, ..StageConfig::stage1() })?;

    let cfg = RlConfig { latent_count: 4, ..RlConfig::default() };
    for algo in [Algo::Grpo, Algo::Vlpo] {
        let mut model = warm.clone();
        let out = train_rl(&mut model, prompts, &cfg, algo)?;
        let rewards: Vec<String> = out.batch_rewards().iter().map(|r| format!("{r:.2}")).collect();
        let latent = out.log.iter().map(|r| r.latent_grad_norm).fold(0.0, f64::max);
        println!("{algo:?}: batch rewards [{}]", rewards.join(" "));
        println!("{algo:?}: largest latent gradient norm {latent:.3e}");
    }
    Ok(())
}
