//! Samples responses with a varying latent budget from an untrained model.
//!
//! The `<latent>` logit is boosted so every rollout opens a latent span.

use monet::forge::render::prompt_layout;
use monet::forge::{curate, CurationConfig};
use monet::model::{decode_with_latents, vocab, DecodeConfig, Model, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (records, _) = curate(&CurationConfig { sample_count: 20, ..CurationConfig::default() })?;
    let mut model = Model::new(ModelConfig::default(), 0)?;
    let bias = model.params().find("head.b").expect("output bias");
    model.params_mut().get_mut(bias).data_mut()[vocab::LATENT_START.index()] += 4.0;

    let prompt = prompt_layout(&records[0].sample);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for k in [0, 2, 6] {
        let cfg = DecodeConfig { latent_count: k, temperature: 1.0, max_new: 30 };
        let out = decode_with_latents(&model, &prompt, &cfg, &mut rng)?;
        let t = &out.trajectory;
        println!("K={k} runs {:?} truncated {}", t.latent_runs(), t.truncated);
        println!("  {}", t.text());
    }
    Ok(())
}
