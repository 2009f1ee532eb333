#![no_main]
use libfuzzer_sys::fuzz_target;
use noniid::states::{read_ensemble_json, write_ensemble_json};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(ens) = read_ensemble_json(text) {
            let again = read_ensemble_json(&write_ensemble_json(&ens)).expect("written ensembles parse");
            assert_eq!(again.len(), ens.len());
        }
    }
});
