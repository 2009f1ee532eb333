#![no_main]
use libfuzzer_sys::fuzz_target;
use noniid::calibration::Calibration;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cal) = Calibration::parse(text) {
            assert_eq!(Calibration::parse(&cal.to_json()).expect("written calibrations parse"), cal);
        }
    }
});
