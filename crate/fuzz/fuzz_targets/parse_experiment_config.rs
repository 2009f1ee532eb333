#![no_main]
use libfuzzer_sys::fuzz_target;
use noniid_cli::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::parse(text) {
            assert_eq!(ExperimentConfig::parse(&cfg.to_json()).expect("written configs parse"), cfg);
        }
    }
});
