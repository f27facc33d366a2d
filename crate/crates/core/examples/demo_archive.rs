// Writes the bundled toy character as an .lcm archive.
use lcm_core::{archive::serialize_model, fixtures::demo_character};

fn main() -> std::io::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "demo.lcm".into());
    std::fs::write(&out, serialize_model(&demo_character()))?;
    println!("wrote {out}");
    Ok(())
}
