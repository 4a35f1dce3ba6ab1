mod common;

use std::collections::BTreeMap;

use common::*;
use laggard::data::{ModifierCell, ModifierColumn};
use laggard::inference::{
    critical_windows, cumulative_effect, exposure_selection, individualized_effect, marginal_effect, modifier_pip,
    modifier_splits, policy_levels, render_text, subgroup_effect, summarize, GroupBy, HetDraws, LagTable,
    MarginalizePolicy, ModifierValue,
};
use laggard::mcmc::{fit, DrawMatrix, InteractionMode, ModelSpec, PosteriorFit};
use proptest::prelude::*;

fn mixture_fit(mode: InteractionMode) -> PosteriorFit {
    let sim = mixture_data(150, 8, 3, 0.5, 21);
    fit(&sim.data, &ModelSpec::tdlmm(mode), &control(40, 120, 1, 5)).unwrap()
}

fn het_fit() -> PosteriorFit {
    let sim = het_data(150, 6, 0.6, 22);
    let defs = all_modifiers(&sim.data);
    fit(&sim.data, &ModelSpec::hdlm(defs), &control(60, 80, 1, 6)).unwrap()
}

#[test]
fn mean_policy_equals_its_levels() {
    let f = mixture_fit(InteractionMode::Noself);
    assert!(!f.interaction_draws.is_empty());
    let levels: Vec<f64> = policy_levels(&f, &MarginalizePolicy::Mean)
        .unwrap()
        .iter()
        .map(|l| l[0])
        .collect();
    let by_levels = MarginalizePolicy::Levels(levels);
    for m in 0..3 {
        let a = marginal_effect(&f, m, &MarginalizePolicy::Mean).unwrap();
        let b = marginal_effect(&f, m, &by_levels).unwrap();
        assert_eq!(a, b);
    }
    let sa = summarize(&f, 0.95, &MarginalizePolicy::Mean).unwrap();
    let sb = summarize(&f, 0.95, &by_levels).unwrap();
    assert_eq!(sa.dlm_tables, sb.dlm_tables);
    assert_eq!(sa.cumulative, sb.cumulative);
}

#[test]
fn no_interactions_make_policy_irrelevant() {
    let f = mixture_fit(InteractionMode::None);
    let policies = [
        MarginalizePolicy::Mean,
        MarginalizePolicy::Percentile(10.0),
        MarginalizePolicy::PooledPercentile(90.0),
        MarginalizePolicy::Levels(vec![3.0, -2.0, 7.5]),
    ];
    for m in 0..3 {
        for p in &policies {
            assert_eq!(marginal_effect(&f, m, p).unwrap(), f.theta_draws[m]);
        }
    }
    let base = summarize(&f, 0.95, &policies[0]).unwrap();
    for p in &policies[1..] {
        let s = summarize(&f, 0.95, p).unwrap();
        assert_eq!(s.dlm_tables, base.dlm_tables);
        assert_eq!(s.cumulative, base.cumulative);
        assert_eq!(s.relative_effect, base.relative_effect);
    }
}

#[test]
fn levels_count_must_match_exposures() {
    let f = mixture_fit(InteractionMode::Noself);
    let err = marginal_effect(&f, 0, &MarginalizePolicy::Levels(vec![1.0, 1.0])).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("expected 3") && msg.contains("e1, e2, e3"), "{msg}");
}

#[test]
fn signal_exposure_has_largest_relative_effect() {
    let f = mixture_fit(InteractionMode::None);
    let sel = exposure_selection(&f, 1.0).unwrap();
    assert_eq!(sel.len(), 3);
    let best = sel.iter().max_by(|a, b| a.relative_effect.total_cmp(&b.relative_effect)).unwrap();
    assert_eq!(best.exposure, "e1");
    assert_eq!(best.relative_effect, 1.0);
    for s in &sel {
        assert!((0.0..=1.0).contains(&s.posterior_inclusion));
    }
}

#[test]
fn interval_coherence_and_nesting() {
    let f = mixture_fit(InteractionMode::Noself);
    let wide = summarize(&f, 0.95, &MarginalizePolicy::Mean).unwrap();
    let narrow = summarize(&f, 0.8, &MarginalizePolicy::Mean).unwrap();
    for (w, n) in wide.dlm_tables.iter().zip(&narrow.dlm_tables) {
        for t in 0..w.mean.len() {
            assert!(w.lower[t] <= w.mean[t] && w.mean[t] <= w.upper[t]);
            assert!(w.lower[t] <= n.lower[t] && n.upper[t] <= w.upper[t]);
        }
    }
    for fe in &wide.fixed_effects {
        assert!(fe.lower <= fe.mean && fe.mean <= fe.upper);
    }
}

#[test]
fn stars_match_critical_windows() {
    let sim = tdlm_data(300, 10, 0.4, 23);
    let f = fit(&sim.data, &ModelSpec::tdlm(), &control(100, 300, 1, 7)).unwrap();
    let s = summarize(&f, 0.95, &MarginalizePolicy::Mean).unwrap();
    let text = render_text(&s);
    let starred: Vec<usize> = text
        .lines()
        .filter_map(|l| l.strip_prefix("*Period "))
        .map(|l| l.split_whitespace().next().unwrap().parse().unwrap())
        .collect();
    let t = &s.dlm_tables[0];
    let expected: Vec<usize> = critical_windows(&t.lower, &t.upper)
        .iter()
        .flat_map(|r| r.start..=r.end)
        .collect();
    assert_eq!(starred, expected);
    assert!(!expected.is_empty());
    assert!(text.contains("Model run info:") && text.contains("DLM effect:"));
}

#[test]
fn subgroups_average_to_population_curve() {
    let f = het_fit();
    let hd = HetDraws::new(&f).unwrap();
    let n = f.meta.rows;
    let mut pop = vec![0.0; f.meta.lags];
    for i in 0..n {
        let t = &hd.individual(&f.modifiers.row(i), 0.95).unwrap()[0];
        for (p, m) in pop.iter_mut().zip(&t.mean) {
            *p += m / n as f64;
        }
    }
    for name in ["sex", "age", "group"] {
        let groups = subgroup_effect(&f, &[GroupBy::new(name)], 0.95).unwrap();
        assert_eq!(groups.iter().map(|g| g.rows).sum::<usize>(), n);
        let mut avg = vec![0.0; f.meta.lags];
        for g in &groups {
            if let Some(e) = &g.effects {
                for (a, m) in avg.iter_mut().zip(&e[0].mean) {
                    *a += m * g.rows as f64 / n as f64;
                }
            }
        }
        for (a, p) in avg.iter().zip(&pop) {
            assert!((a - p).abs() < 1e-10, "{name}: {a} vs {p}");
        }
    }
}

#[test]
fn two_way_grouping_and_limits() {
    let f = het_fit();
    let g = subgroup_effect(&f, &[GroupBy::new("sex"), GroupBy::new("group")], 0.95).unwrap();
    assert_eq!(g.len(), 6);
    assert_eq!(g[0].labels, vec!["F".to_string(), "a".to_string()]);
    let three = [GroupBy::new("sex"), GroupBy::new("group"), GroupBy::new("age")];
    assert!(subgroup_effect(&f, &three, 0.95).is_err());
    let mut cut = GroupBy::new("age");
    cut.cuts = Some(vec![0.0]);
    let g = subgroup_effect(&f, &[cut], 0.95).unwrap();
    assert_eq!(g.len(), 2);
    assert_eq!(g[0].labels, vec!["<=0".to_string()]);
}

#[test]
fn individualized_effect_uses_named_values() {
    let f = het_fit();
    let mut values = BTreeMap::new();
    values.insert("sex".to_string(), ModifierValue::Level("M".into()));
    values.insert("age".to_string(), ModifierValue::Real(0.3));
    values.insert("group".to_string(), ModifierValue::Level("b".into()));
    let named = individualized_effect(&f, &values, 0.95).unwrap();
    let row = vec![ModifierCell::Level(1), ModifierCell::Real(0.3), ModifierCell::Level(1)];
    let coded = HetDraws::new(&f).unwrap().individual(&row, 0.95).unwrap();
    assert_eq!(named, coded);

    values.remove("age");
    assert!(individualized_effect(&f, &values, 0.95).is_err());
    values.insert("age".to_string(), ModifierValue::Level("old".into()));
    assert!(individualized_effect(&f, &values, 0.95).is_err());
}

#[test]
fn unused_modifiers_do_not_change_individual_curves() {
    let f = het_fit();
    let hd = HetDraws::new(&f).unwrap();
    let names = &f.meta.modifier_names;
    let base = f.modifiers.row(0);
    for (j, name) in names.iter().enumerate() {
        let used = (0..f.draws()).any(|d| f.modifier_usage.row(d)[j] == 1);
        if used {
            continue;
        }
        let mut alt = base.clone();
        alt[j] = match &f.modifiers.columns()[f.modifiers.index_of(name).unwrap()] {
            ModifierColumn::Continuous { .. } => ModifierCell::Real(1e6),
            ModifierColumn::Categorical { levels, codes } => {
                ModifierCell::Level(((codes[0] as usize + 1) % levels.len()) as u32)
            }
        };
        assert_eq!(hd.individual(&base, 0.95).unwrap(), hd.individual(&alt, 0.95).unwrap());
    }
}

#[test]
fn pips_and_splits_are_consistent() {
    let f = het_fit();
    let pips = modifier_pip(&f).unwrap();
    assert_eq!(pips.len(), 3);
    for p in &pips {
        assert!((0.0..=1.0).contains(&p.pip));
        let splits = modifier_splits(&f, &p.modifier).unwrap();
        if p.pip > 0.0 {
            let total: f64 = splits.iter().map(|s| s.share).sum();
            assert!((total - 1.0).abs() < 1e-12 || splits.is_empty());
        }
    }
    assert!(modifier_pip(&mixture_fit(InteractionMode::None)).is_err());
    let text = render_text(&summarize(&f, 0.95, &MarginalizePolicy::Mean).unwrap());
    assert!(text.contains("PIP") && text.contains("laggard serve") && !text.contains("Period 1"));
}

fn draws(rows: usize, cols: usize, vals: &[f64]) -> DrawMatrix<f64> {
    DrawMatrix::new(cols, vals[..rows * cols].to_vec())
}

proptest! {
    #[test]
    fn cumulative_is_linear(a in prop::collection::vec(-5.0f64..5.0, 40), b in prop::collection::vec(-5.0f64..5.0, 40)) {
        let (da, db) = (draws(10, 4, &a), draws(10, 4, &b));
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let ds = draws(10, 4, &sum);
        let lhs = cumulative_effect(&ds, 0.95).mean;
        let rhs = cumulative_effect(&da, 0.95).mean + cumulative_effect(&db, 0.95).mean;
        prop_assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn lag_table_is_coherent(v in prop::collection::vec(-5.0f64..5.0, 60), conf in 0.5f64..0.99) {
        let t = LagTable::from_draws("x", &draws(20, 3, &v), conf);
        for j in 0..3 {
            prop_assert!(t.lower[j] <= t.mean[j] && t.mean[j] <= t.upper[j]);
            prop_assert_eq!(t.critical[j], t.lower[j] > 0.0 || t.upper[j] < 0.0);
        }
    }
}
