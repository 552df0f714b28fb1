//! Saves a model to a JSON checkpoint and loads it back unchanged.

use oodcl::model::MicroClassifier;

fn main() -> oodcl::Result<()> {
    let mut model = MicroClassifier::new(5, &[8, 8], 3)?;
    model.expand_head(4, 4);
    let path = std::env::temp_dir().join("oodcl-example-checkpoint.json");
    model.save(&path)?;
    let loaded = MicroClassifier::load(&path)?;
    let x = [0.1, 0.2, 0.3, 0.4, 0.5];
    println!("saved to {}", path.display());
    println!("identical parameters: {}", loaded == model);
    println!("logits {:?}", loaded.logits(&x)?);
    std::fs::remove_file(&path).ok();
    Ok(())
}
