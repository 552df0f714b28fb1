//! Loads the CIFAR-100 binary release from a directory holding `train.bin`
//! and `test.bin`, or builds a two-record file to show the format.
//!
//! cargo run --release --example cifar100_loader -- [cifar-100-binary-dir]

use oodcl::data::{cifar100_paths, load_cifar100_binary, parse_cifar100_records, CifarRecord};

fn main() -> oodcl::Result<()> {
    if let Some(dir) = std::env::args().nth(1) {
        let (train, test) = cifar100_paths(dir.as_ref());
        let data = load_cifar100_binary(&train, &test)?;
        println!(
            "{} train, {} test, {} classes, {} features",
            data.train.len(),
            data.test.len(),
            data.num_classes,
            data.input_dim()
        );
        return Ok(());
    }
    let records = [
        CifarRecord { coarse: 3, fine: 42, pixels: vec![0; 3072] },
        CifarRecord { coarse: 7, fine: 9, pixels: vec![255; 3072] },
    ];
    let bytes: Vec<u8> = records.iter().flat_map(|r| r.to_bytes()).collect();
    let parsed = parse_cifar100_records(&bytes, "in-memory".as_ref())?;
    for r in &parsed {
        println!("coarse {} fine {} first feature {}", r.coarse, r.fine, r.features()[0]);
    }
    let err = parse_cifar100_records(&bytes[..4000], "truncated".as_ref()).unwrap_err();
    println!("truncated input: {err}");
    Ok(())
}
