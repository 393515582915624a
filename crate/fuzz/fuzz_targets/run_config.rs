#![no_main]

use libfuzzer_sys::fuzz_target;
use vrgc_cli::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        let _ = cfg.validate();
        assert_eq!(RunConfig::parse(&cfg.to_text()).expect("printed config must parse"), cfg);
    }
});
