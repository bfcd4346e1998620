//! Write the bundled models as `<name>.json` + `<name>.bin` pairs.
//!
//! cargo run --example write_models -- models/

use std::path::PathBuf;

use unrollhls::frontend::zoo;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "models".into()));
    std::fs::create_dir_all(&dir)?;
    let mut builders = zoo::layer_suite_builders(0);
    builders.push(("relu", zoo::relu_builder(&[2])));
    builders.push(("braggnn", zoo::braggnn_builder(0)));
    for (name, b) in builders {
        let (json, blob) = b.to_files();
        std::fs::write(dir.join(format!("{name}.json")), json)?;
        std::fs::write(dir.join(format!("{name}.bin")), blob)?;
        println!("{}", dir.join(format!("{name}.json")).display());
    }
    Ok(())
}
