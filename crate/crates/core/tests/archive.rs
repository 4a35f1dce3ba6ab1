mod common;

use common::*;
use laggard::archive::{from_bytes, read_archive, read_manifest, to_bytes, write_archive, FORMAT_VERSION};
use laggard::diagnostics::diagnose;
use laggard::mcmc::{fit, Family, InteractionMode, ModelSpec, PosteriorFit};

fn round_trip(f: &PosteriorFit) {
    let bytes = to_bytes(f).unwrap();
    let back = from_bytes(&bytes).unwrap();
    assert_eq!(&back, f);
    assert_eq!(to_bytes(&back).unwrap(), bytes);
}

#[test]
fn mixture_round_trip_is_exact() {
    let sim = mixture_data(80, 6, 3, 0.5, 31);
    let f = fit(&sim.data, &ModelSpec::tdlmm(InteractionMode::All), &control(20, 40, 2, 1)).unwrap();
    assert!(!f.interaction_draws.is_empty());
    round_trip(&f);
}

#[test]
fn het_round_trip_is_exact() {
    let sim = het_data(80, 6, 0.5, 32);
    let f = fit(&sim.data, &ModelSpec::hdlm(all_modifiers(&sim.data)), &control(20, 30, 1, 2)).unwrap();
    assert!(!f.het_records.is_empty());
    round_trip(&f);
}

#[test]
fn logit_round_trip_and_file_io() {
    let mut cfg = mixture_config(100, 6, 1, 1.0);
    cfg.family = Family::Logit;
    let sim = laggard::data::simulate::simulate_dataset(&cfg, 33).unwrap();
    let mut spec = ModelSpec::tdlm();
    spec.family = Family::Logit;
    let f = fit(&sim.data, &spec, &control(10, 20, 1, 3)).unwrap();
    round_trip(&f);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fit.lgf");
    write_archive(&f, &path).unwrap();
    assert_eq!(read_archive(&path).unwrap(), f);
    let manifest = read_manifest(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!(manifest.format_version, FORMAT_VERSION);
    assert_eq!(manifest.meta.exposure_names, vec!["e1".to_string()]);
}

#[test]
fn corruption_is_detected() {
    let sim = tdlm_data(60, 6, 0.5, 34);
    let f = fit(&sim.data, &ModelSpec::tdlm(), &control(10, 20, 1, 4)).unwrap();
    let mut bytes = to_bytes(&f).unwrap();
    let last = bytes.len() - 3;
    bytes[last] ^= 0x40;
    assert!(from_bytes(&bytes).is_err());
    assert!(from_bytes(&bytes[..bytes.len() / 2]).is_err());
}

#[test]
fn diagnostics_are_deterministic() {
    let sim = tdlm_data(80, 8, 0.5, 35);
    let f = fit(&sim.data, &ModelSpec::tdlm(), &control(20, 60, 1, 5)).unwrap();
    let back = from_bytes(&to_bytes(&f).unwrap()).unwrap();
    let a = serde_json::to_vec(&diagnose(&f, &[]).unwrap()).unwrap();
    let b = serde_json::to_vec(&diagnose(&back, &[]).unwrap()).unwrap();
    assert_eq!(a, b);
}
