//! Replays the checked-in fuzz seeds through the same entry points as the fuzz targets.

use std::path::PathBuf;

use vrgc::graphio::parse_tu;
use vrgc::nn::ModelParams;
use vrgc::ordering::{decode, EncodedGraph};
use vrgc_cli::RunConfig;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn tu_seeds_parse() {
    for (name, bytes) in seeds("parse_tu") {
        let text = String::from_utf8(bytes).unwrap();
        let parts: Vec<&str> = text.splitn(3, '\0').collect();
        let ds = parse_tu("FUZZ", parts[0], parts[1], parts[2]).unwrap_or_else(|e| panic!("{name}: {e}"));
        ds.validate().unwrap();
    }
}

#[test]
fn checkpoint_seeds_round_trip() {
    for (name, bytes) in seeds("checkpoint") {
        let p = ModelParams::from_bytes(&bytes).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(p.to_bytes(), bytes, "{name}");
    }
}

#[test]
fn config_seeds_behave() {
    for (name, bytes) in seeds("run_config") {
        let text = String::from_utf8(bytes).unwrap();
        match RunConfig::parse(&text) {
            Ok(cfg) => assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg, "{name}"),
            Err(e) => assert_eq!(name, "duplicate", "{e}"),
        }
    }
}

#[test]
fn encoded_graph_seeds_decode() {
    for (name, bytes) in seeds("encoded_graph") {
        let (n_g, d_n, len) = (bytes[0] as usize, bytes[1] as usize, bytes[2] as usize);
        let order = bytes[3..3 + len].iter().map(|&b| b as usize).collect();
        let e = EncodedGraph::from_parts(bytes[3 + len..].to_vec(), n_g, d_n, order).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(decode(&e).num_nodes(), len);
    }
}
