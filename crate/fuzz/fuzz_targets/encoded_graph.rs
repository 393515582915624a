#![no_main]

use libfuzzer_sys::fuzz_target;
use vrgc::ordering::{decode, decode_original, EncodedGraph};

// Byte 0 is n_g, byte 1 is d_n, then one byte per node for the order, then the rows.
fuzz_target!(|data: &[u8]| {
    let [n_g, d_n, rest @ ..] = data else { return };
    let (n_g, d_n) = (*n_g as usize % 64, *d_n as usize % 64);
    let len = rest.first().map_or(0, |&b| b as usize % (n_g + 1));
    let rest = rest.get(1..).unwrap_or(&[]);
    if rest.len() < len {
        return;
    }
    let order: Vec<usize> = rest[..len].iter().map(|&b| b as usize).collect();
    let rows: Vec<u8> = rest[len..].iter().map(|b| b & 1).collect();
    if let Ok(e) = EncodedGraph::from_parts(rows, n_g, d_n, order) {
        let g = decode(&e);
        assert_eq!(g.num_nodes(), e.true_len());
        let _ = decode_original(&e);
        let _ = e.to_text();
    }
});
