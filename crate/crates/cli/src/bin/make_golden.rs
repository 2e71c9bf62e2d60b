//! Regenerates the bundled synthetic fixture: `make_golden <dir>`.

use std::path::PathBuf;

use anyhow::{Context, Result};

fn main() -> Result<()> {
    let dir: PathBuf = std::env::args_os()
        .nth(1)
        .context("usage: make_golden <output dir>")?
        .into();
    for m in attnseg::synthetic::write_golden_fixture(&dir)? {
        println!("{}", m.display());
    }
    Ok(())
}
