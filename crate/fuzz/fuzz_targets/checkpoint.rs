#![no_main]

use libfuzzer_sys::fuzz_target;
use vrgc::nn::ModelParams;

fuzz_target!(|data: &[u8]| {
    if let Ok(p) = ModelParams::from_bytes(data) {
        let again = ModelParams::from_bytes(&p.to_bytes()).expect("re-encoded checkpoint must decode");
        assert_eq!(again.to_bytes(), p.to_bytes());
    }
});
