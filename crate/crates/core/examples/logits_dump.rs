//! Writes a logits dump for a model and scores it offline, as `score-dump` does.

use oodcl::model::MicroClassifier;
use oodcl::ndcore::Prng;
use oodcl::ood::{parse_methods, LogitsDump};

fn main() -> oodcl::Result<()> {
    let mut model = MicroClassifier::new(3, &[8], 0)?;
    model.expand_head(4, 1);
    let mut rng = Prng::new(2);
    let inputs: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
    let dump = LogitsDump::from_model(
        &model,
        2,
        inputs.iter().enumerate().map(|(i, x)| (format!("x{i}"), i < 2, x.as_slice())),
    )?;
    let mut buf = Vec::new();
    dump.write(&mut buf)?;
    print!("{}", String::from_utf8_lossy(&buf));

    let back = LogitsDump::read(buf.as_slice(), "<memory>")?;
    for spec in parse_methods("msp,energy,ours")? {
        println!("{:<8} {:?}", spec.name(), back.score(&spec)?);
    }
    Ok(())
}
