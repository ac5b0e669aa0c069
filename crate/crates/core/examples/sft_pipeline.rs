//! Runs the three supervised stages on a reduced budget and evaluates the
//! result with and without latent steps.

use std::time::Instant;

use monet::forge::{curate, CurationConfig};
use monet::harness::evaluate;
use monet::model::{Model, ModelConfig};
use monet::sft::{run_stage1, run_stage2, run_stage3, LossWeights, StageConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (records, _) = curate(&CurationConfig { sample_count: 1000, ..CurationConfig::default() })?;
    let samples: Vec<_> = records.into_iter().map(|r| r.sample).collect();
    let (eval, train) = samples.split_at(150);
    let weights = LossWeights::default();

    let t = Instant::now();
    let mut warm = Model::new(ModelConfig::default(), 1)?;
    run_stage1(&mut warm, train, eval, &StageConfig { eval_interval: 0, ..StageConfig::stage1() })?;
    println!("stage 1 in {:.1?}", t.elapsed());

    let t = Instant::now();
    let mut stage2 = warm.clone();
    let out = run_stage2(&mut stage2, &warm, train, &StageConfig { epochs: 1, ..StageConfig::stage2() }, &weights)?;
    let last = out.log.rows.last().expect("stage 2 ran");
    println!("stage 2 in {:.1?}: ntp {:.3} align {:.3}, {} target sets", t.elapsed(), last.ntp, last.align, out.store.len());

    let t = Instant::now();
    let mut student = warm.clone();
    let log = run_stage3(&mut student, &out.store, train, &StageConfig::stage3(), &weights)?;
    let last = log.rows.last().expect("stage 3 ran");
    println!("stage 3 in {:.1?}: ntp {:.3} align {:.3}", t.elapsed(), last.ntp, last.align);

    for k in [0, 4, 8] {
        let row = evaluate(&student, eval, k, "example", "sft")?;
        println!("K={k}: accuracy {:.3}, lookup {:.3}", row.accuracy, row.lookup_accuracy.unwrap_or_default());
    }
    Ok(())
}
