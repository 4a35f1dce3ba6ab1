#![allow(dead_code)]

use laggard::data::simulate::{
    simulate_dataset, EffectWindow, ExposureConfig, HeterogeneityConfig, ModifierConfig, SimModifierKind,
    SimulatedData, SimulationConfig,
};
use laggard::data::{modifier_defs, Dataset, ModifierDef};
use laggard::mcmc::{McmcControl, SamplerHooks};

pub fn window(start: usize, end: usize, effect: f64) -> EffectWindow {
    EffectWindow { start, end, effect }
}

pub fn control(n_burn: usize, n_iter: usize, n_thin: usize, seed: u64) -> McmcControl {
    McmcControl::new(n_burn, n_iter, n_thin, seed)
}

pub fn debug_control(n_burn: usize, n_iter: usize, seed: u64) -> McmcControl {
    let mut c = McmcControl::new(n_burn, n_iter, 1, seed);
    c.hooks = SamplerHooks {
        debug_checks: true,
        ..SamplerHooks::default()
    };
    c
}

pub fn tdlm_data(n: usize, lags: usize, effect: f64, seed: u64) -> SimulatedData {
    let config = SimulationConfig::single_exposure(n, lags, vec![window(11.min(lags), 15.min(lags), effect)]);
    simulate_dataset(&config, seed).unwrap()
}

/// `m` exposures; the first carries a window, the rest are noise.
pub fn mixture_config(n: usize, lags: usize, m: usize, effect: f64) -> SimulationConfig {
    let mut c = SimulationConfig::single_exposure(n, lags, vec![window(3, 6.min(lags), effect)]);
    c.exposures[0].name = "e1".into();
    for k in 1..m {
        c.exposures.push(ExposureConfig {
            name: format!("e{}", k + 1),
            windows: Vec::new(),
        });
    }
    c
}

pub fn mixture_data(n: usize, lags: usize, m: usize, effect: f64, seed: u64) -> SimulatedData {
    simulate_dataset(&mixture_config(n, lags, m, effect), seed).unwrap()
}

/// Binary `sex` carries a subgroup window; `age` and `group` are noise.
pub fn het_config(n: usize, lags: usize, effect: f64) -> SimulationConfig {
    let mut c = SimulationConfig::single_exposure(n, lags, Vec::new());
    c.modifiers = vec![
        ModifierConfig {
            name: "sex".into(),
            kind: SimModifierKind::Binary,
            levels: vec!["F".into(), "M".into()],
            mean: 0.0,
            sd: 1.0,
            in_design: true,
            coefficient: 0.0,
        },
        ModifierConfig {
            name: "age".into(),
            kind: SimModifierKind::Continuous,
            levels: Vec::new(),
            mean: 0.0,
            sd: 1.0,
            in_design: true,
            coefficient: 0.0,
        },
        ModifierConfig {
            name: "group".into(),
            kind: SimModifierKind::Categorical,
            levels: vec!["a".into(), "b".into(), "c".into()],
            mean: 0.0,
            sd: 1.0,
            in_design: true,
            coefficient: 0.0,
        },
    ];
    c.heterogeneity = Some(HeterogeneityConfig {
        modifier: "sex".into(),
        level: Some("M".into()),
        threshold: None,
        exposure: "X".into(),
        windows: vec![window(3, 5.min(lags), effect)],
    });
    c
}

pub fn het_data(n: usize, lags: usize, effect: f64, seed: u64) -> SimulatedData {
    simulate_dataset(&het_config(n, lags, effect), seed).unwrap()
}

pub fn all_modifiers(data: &Dataset) -> Vec<ModifierDef> {
    modifier_defs(data.modifiers(), &[], 10).unwrap()
}
