#![no_main]
use libfuzzer_sys::fuzz_target;
use trag_cli::config::RunConfig;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = RunConfig::from_toml(text) {
        RunConfig::from_toml(&cfg.to_toml()).unwrap();
    }
});
