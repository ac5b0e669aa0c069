//! Trains the warm-up stage on a small split and reports how much better
//! observation tokens are predicted with the auxiliary images present.

use monet::forge::{curate, CurationConfig};
use monet::model::{Model, ModelConfig};
use monet::sft::{measure_obs_accuracy, run_stage1, StageConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (records, _) = curate(&CurationConfig { sample_count: 1200, ..CurationConfig::default() })?;
    let samples: Vec<_> = records.into_iter().map(|r| r.sample).collect();
    let (eval, train) = samples.split_at(200);

    let mut model = Model::new(ModelConfig::default(), 1)?;
    let before = measure_obs_accuracy(&model, eval)?;
    let cfg = StageConfig { epochs: 1, eval_interval: 50, eval_samples: 100, ..StageConfig::stage1() };
    let log = run_stage1(&mut model, train, eval, &cfg)?;
    for row in &log.rows {
        if let (Some(with), Some(without)) = (row.obs_acc_with_aux, row.obs_acc_without_aux) {
            println!("step {:>4} ntp {:.3} gap {:+.3}", row.step, row.ntp, with - without);
        }
    }
    let after = measure_obs_accuracy(&model, eval)?;
    println!("before: with aux {:.3} without {:.3}", before.with_aux, before.without_aux);
    println!("after:  with aux {:.3} without {:.3} gap {:+.3}", after.with_aux, after.without_aux, after.gap());
    Ok(())
}
