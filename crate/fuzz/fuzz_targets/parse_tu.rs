#![no_main]

use libfuzzer_sys::fuzz_target;

// Input is the three TU files joined by NUL bytes: A, graph indicator, graph labels.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let mut parts = text.splitn(3, '\0');
    let (a, ind, labels) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""), parts.next().unwrap_or(""));
    if let Ok(ds) = vrgc::graphio::parse_tu("FUZZ", a, ind, labels) {
        ds.validate().expect("parsed dataset must validate");
    }
});
