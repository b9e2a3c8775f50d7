//! Regenerates `registry.json` from the builtin table.

fn main() -> std::io::Result<()> {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("registry.json");
    std::fs::write(path, smallmass_core::registry::manifest_json())
}
