use std::fmt::Write;

use super::{format_runs, FitSummary, LagTable, RunInfo};

fn group_digits(n: usize) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn interval_rows(out: &mut String, rows: &[(String, f64, f64, f64, bool)]) {
    let width = rows.iter().map(|r| r.0.len() + 1).max().unwrap_or(1).max(5);
    let _ = writeln!(out, "{:width$} {:>6} {:>6} {:>6}", "", "Mean", "Lower", "Upper");
    for (name, m, lo, hi, star) in rows {
        let label = format!("{}{}", if *star { "*" } else { " " }, name);
        let _ = writeln!(out, "{label:width$} {m:>6.3} {lo:>6.3} {hi:>6.3}");
    }
    out.push_str("---\n* = CI does not contain zero\n");
}

fn lag_rows(t: &LagTable) -> Vec<(String, f64, f64, f64, bool)> {
    (0..t.mean.len())
        .map(|j| (format!("Period {}", j + 1), t.mean[j], t.lower[j], t.upper[j], t.critical[j]))
        .collect()
}

fn is_mixture(info: &RunInfo) -> bool {
    matches!(info.model_class.as_str(), "tdlmm" | "hdlmm")
}

fn is_het(info: &RunInfo) -> bool {
    matches!(info.model_class.as_str(), "hdlm" | "hdlmm")
}

/// The "Model run info" block, up to the model's own hyperparameters.
pub fn render_run_info(info: &RunInfo) -> String {
    let (mixture, het) = (is_mixture(info), is_het(info));
    let mut out = String::new();
    out.push_str("Model run info:\n");
    let _ = writeln!(out, "- covariates: {}", info.covariates.join(" + "));
    let _ = writeln!(out, "- sample size: {}", group_digits(info.sample_size));
    let _ = writeln!(out, "- family: {}", info.family);
    if mixture {
        let _ = writeln!(out, "- {} trees (alpha = {}, beta = {})", info.trees, info.alpha, info.beta);
    } else {
        let _ = writeln!(out, "- {} trees", info.trees);
    }
    let _ = writeln!(out, "- {} burn-in iterations", info.n_burn);
    let _ = writeln!(out, "- {} post-burn iterations", info.n_iter);
    let _ = writeln!(out, "- {} thinning factor", info.n_thin);
    if mixture {
        let _ = writeln!(out, "- {} exposures measured at {} time points", info.exposures.len(), info.lags);
        match info.interaction_mode.as_str() {
            "none" => out.push_str("- no interactions\n"),
            "noself" => {
                let _ = writeln!(out, "- {} two-way interactions (no-self interactions)", info.pairs);
            }
            _ => {
                let _ = writeln!(out, "- {} two-way interactions (including self interactions)", info.pairs);
            }
        }
        let _ = writeln!(out, "- {} kappa sparsity prior", info.kappa);
    } else {
        let _ = writeln!(out, "- exposure measured at {} time points", info.lags);
    }
    if het {
        let _ = writeln!(out, "- {} modifier sparsity prior", info.modifier_sparsity);
    }
    out
}

/// Plain-text summary in the usual section layout.
pub fn render_text(s: &FitSummary) -> String {
    let info = &s.run_info;
    let (mixture, het) = (is_mixture(info), is_het(info));
    let mut out = String::new();
    let _ = writeln!(out, "---\n{} summary\n", info.model_class.to_uppercase());
    out.push_str(&render_run_info(info));
    let _ = writeln!(out, "- {} confidence level", s.conf_level);
    if mixture && !het {
        let _ = writeln!(out, "- co-exposures marginalized at {}", s.policy);
    }

    out.push_str(if mixture || het {
        "\nFixed effects:\n"
    } else {
        "\nFixed effect coefficients:\n"
    });
    let rows: Vec<_> = s
        .fixed_effects
        .iter()
        .map(|f| (f.name.clone(), f.mean, f.lower, f.upper, f.significant))
        .collect();
    interval_rows(&mut out, &rows);

    if het {
        out.push_str("\nModifiers:\n");
        let width = s.pips.iter().map(|p| p.modifier.len()).max().unwrap_or(0).max(8);
        let _ = writeln!(out, "{:width$} {:>6}", "", "PIP");
        for p in &s.pips {
            let _ = writeln!(out, "{:width$} {:.4}", p.modifier, p.pip);
        }
        out.push_str("---\nPIP = Posterior inclusion probability\n");
    } else if mixture {
        out.push_str("\n--\nExposure effects: critical windows\n");
        out.push_str("* = Exposure selected by Bayes Factor\n(x.xx) = Relative effect size\n\n");
        for (k, t) in s.dlm_tables.iter().enumerate() {
            let sel = s.exposure_selection.get(k).is_some_and(|e| e.selected);
            let _ = writeln!(
                out,
                " {}{} ({:.2}): {}",
                if sel { "*" } else { " " },
                t.exposure,
                s.relative_effect[k],
                format_runs(&s.critical_windows[k])
            );
        }
        if !s.interaction_windows.is_empty() {
            out.push_str("--\nInteraction effects: critical windows\n");
            for w in &s.interaction_windows {
                if w.rows.is_empty() {
                    continue;
                }
                let _ = writeln!(out, "\n {}/{} ({:.2}):", w.exposure1, w.exposure2, w.relative_effect);
                for (t1, runs) in &w.rows {
                    let _ = writeln!(out, " {}/{}", t1, format_runs(runs));
                }
            }
        }
        out.push_str("\nCumulative effects:\n");
        let rows: Vec<_> = s
            .dlm_tables
            .iter()
            .zip(&s.cumulative)
            .map(|(t, c)| (t.exposure.clone(), c.mean, c.lower, c.upper, c.lower > 0.0 || c.upper < 0.0))
            .collect();
        interval_rows(&mut out, &rows);
    } else if let Some(t) = s.dlm_tables.first() {
        out.push_str("\nDLM effect:\n");
        let lo = t.mean.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = t.mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(out, "range = [{lo:.3}, {hi:.3}]");
        if let Some(snr) = s.signal_to_noise {
            let _ = writeln!(out, "signal-to-noise = {snr:.3}");
        }
        let _ = writeln!(out, "critical windows: {}", format_runs(&s.critical_windows[0]));
        let c = &s.cumulative[0];
        let _ = writeln!(out, "cumulative effect: {:.4} [{:.4}, {:.4}]", c.mean, c.lower, c.upper);
        interval_rows(&mut out, &lag_rows(t));
    }
    if let Some(se) = s.residual_se {
        let _ = writeln!(out, "\nresidual standard errors: {se:.3}");
    }
    out.push_str("---\n");
    if het {
        out.push_str("To obtain exposure effect estimates, use the explorer (`laggard serve`).\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thousands_separator() {
        assert_eq!(group_digits(10000), "10,000");
        assert_eq!(group_digits(999), "999");
        assert_eq!(group_digits(1234567), "1,234,567");
    }
}
