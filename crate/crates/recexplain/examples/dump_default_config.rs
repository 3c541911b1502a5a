//! Print the built-in default pipeline configuration as TOML.
//!
//! Useful as a starting point for a new run:
//!
//! ```text
//! cargo run --example dump_default_config > config.toml
//! ```

fn main() {
    let cfg = recexplain::config::PipelineConfig::default();
    println!("{}", toml::to_string_pretty(&cfg).expect("default config serializes"));
}
