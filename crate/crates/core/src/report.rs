//! CSV and plain-text renderings of comparison results. Every file starts
//! with a `# bolero config_hash=...` line.

use crate::dataset::Task;
use crate::stats::{Comparison, WilcoxonMethod};

pub fn header_line(config_hash: &str) -> String {
    format!("# bolero config_hash={config_hash}\n")
}

fn task_name(task: Task) -> &'static str {
    match task {
        Task::Classification => "classification",
        Task::Regression => "regression",
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_string(config_hash: &str, header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    let body = String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv output is utf-8");
    header_line(config_hash) + &body
}

pub fn leaderboard_csv(comparisons: &[Comparison], config_hash: &str) -> String {
    let rows = comparisons
        .iter()
        .flat_map(|c| {
            c.leaderboard.iter().map(|r| {
                vec![
                    task_name(r.task).to_string(),
                    r.method.clone(),
                    r.win_rate_percent.to_string(),
                    r.significant_wins_label(),
                    r.median_effect.to_string(),
                ]
            })
        })
        .collect();
    csv_string(config_hash, &["task", "method", "win_rate_percent", "significant_wins", "median_effect"], rows)
}

pub fn pairwise_csv(comparisons: &[Comparison], config_hash: &str) -> String {
    let rows = comparisons
        .iter()
        .flat_map(|c| {
            c.pairs.iter().map(|p| {
                let w = p.wilcoxon.as_ref();
                let m = p.meta.as_ref();
                vec![
                    task_name(p.task).to_string(),
                    p.method_a.clone(),
                    p.method_b.clone(),
                    p.datasets.to_string(),
                    p.wins.to_string(),
                    p.ties.to_string(),
                    p.losses.to_string(),
                    p.credit_a.to_string(),
                    p.credit_b.to_string(),
                    w.map(|w| w.n.to_string()).unwrap_or_default(),
                    opt(w.map(|w| w.statistic)),
                    opt(w.map(|w| w.p_value)),
                    w.map(|w| method_name(w.method).to_string()).unwrap_or_default(),
                    opt(m.map(|m| m.pooled)),
                    opt(m.map(|m| m.pooled - m.ci_half_width)),
                    opt(m.map(|m| m.pooled + m.ci_half_width)),
                    opt(m.map(|m| m.tau2)),
                    p.median_effect.to_string(),
                ]
            })
        })
        .collect();
    csv_string(
        config_hash,
        &[
            "task",
            "method_a",
            "method_b",
            "datasets",
            "wins",
            "ties",
            "losses",
            "credit_a",
            "credit_b",
            "wilcoxon_n",
            "wilcoxon_statistic",
            "wilcoxon_p",
            "wilcoxon_method",
            "pooled_effect",
            "ci_low",
            "ci_high",
            "tau2",
            "median_effect",
        ],
        rows,
    )
}

fn method_name(m: WilcoxonMethod) -> &'static str {
    match m {
        WilcoxonMethod::Exact => "exact",
        WilcoxonMethod::Normal => "normal",
    }
}

/// Left-aligned first column, right-aligned rest.
fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out += &(widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  ") + "\n");
    for r in rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

fn signed(x: f64, decimals: usize, suffix: &str) -> String {
    if x.is_nan() {
        "n/a".into()
    } else {
        format!("{x:+.decimals$}{suffix}")
    }
}

/// Friedman outcome as a one-line note; flags non-significant results.
pub fn friedman_note(c: &Comparison) -> String {
    match &c.friedman {
        Some(f) if f.p_value < c.alpha => format!(
            "Friedman ({}, k={}, N={}): chi2 = {:.4}, p = {:.4e}",
            task_name(c.task),
            f.methods,
            f.datasets,
            f.statistic,
            f.p_value
        ),
        Some(f) => format!(
            "warning: Friedman ({}, k={}, N={}) not significant at alpha={}: chi2 = {:.4}, p = {:.4}; pairwise results below are reported anyway",
            task_name(c.task),
            f.methods,
            f.datasets,
            c.alpha,
            f.statistic,
            f.p_value
        ),
        None => format!("Friedman ({}): skipped, needs at least 3 methods and 2 datasets", task_name(c.task)),
    }
}

pub fn leaderboard_text(comparisons: &[Comparison], config_hash: &str) -> String {
    let mut out = header_line(config_hash);
    for c in comparisons {
        out += &format!("\n[{}]\n{}\n", task_name(c.task), friedman_note(c));
        let (label, decimals, suffix) = match c.task {
            Task::Classification => ("Median effect (F1)", 3, ""),
            Task::Regression => ("Median effect (RMSE)", 1, "%"),
        };
        let mut rows: Vec<&crate::stats::LeaderboardRow> = c.leaderboard.iter().collect();
        rows.sort_by(|a, b| b.win_rate_percent.total_cmp(&a.win_rate_percent).then(a.method.cmp(&b.method)));
        let cells: Vec<Vec<String>> = rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    format!("{:.1}", r.win_rate_percent),
                    r.significant_wins_label(),
                    signed(r.median_effect, decimals, suffix),
                ]
            })
            .collect();
        out += &aligned(&["Method", "Win rate (%)", "Sig. wins", label], &cells);
    }
    out
}

pub fn pairwise_text(comparisons: &[Comparison], config_hash: &str) -> String {
    let mut out = header_line(config_hash);
    for c in comparisons {
        out += &format!("\n[{}]\n", task_name(c.task));
        let cells: Vec<Vec<String>> = c
            .pairs
            .iter()
            .map(|p| {
                let ci = p
                    .meta
                    .as_ref()
                    .map(|m| format!("[{:+.4}, {:+.4}]", m.pooled - m.ci_half_width, m.pooled + m.ci_half_width))
                    .unwrap_or_else(|| "n/a".into());
                vec![
                    format!("{} vs {}", p.method_a, p.method_b),
                    format!("{}/{}/{}", p.wins, p.ties, p.losses),
                    p.wilcoxon.map(|w| format!("{:.4}", w.p_value)).unwrap_or_else(|| "n/a".into()),
                    p.meta.as_ref().map(|m| format!("{:+.4}", m.pooled)).unwrap_or_else(|| "n/a".into()),
                    ci,
                    p.meta.as_ref().map(|m| format!("{:.4}", m.tau2)).unwrap_or_else(|| "n/a".into()),
                    if p.significant_win(c.alpha) { "yes".into() } else { "no".into() },
                ]
            })
            .collect();
        out += &aligned(&["Pair", "W/T/L", "Wilcoxon p", "Pooled", "95% CI", "tau2", "Sig. win"], &cells);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{compare, ScoreTable};

    fn comparisons() -> Vec<Comparison> {
        let mut t = ScoreTable::new();
        for (d, (a, b)) in [(0.9, 0.8), (0.7, 0.7), (0.6, 0.5)].into_iter().enumerate() {
            t.insert("A", &format!("d{d}"), 0, Task::Classification, a).unwrap();
            t.insert("B", &format!("d{d}"), 0, Task::Classification, b).unwrap();
        }
        compare(&t, 0.05).unwrap()
    }

    #[test]
    fn csv_has_header_comment_and_one_row_per_method() {
        let s = leaderboard_csv(&comparisons(), "abc");
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "# bolero config_hash=abc");
        assert_eq!(lines[1], "task,method,win_rate_percent,significant_wins,median_effect");
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("classification,A,"));
        assert_eq!(pairwise_csv(&comparisons(), "abc").lines().count(), 4);
    }

    #[test]
    fn text_tables_are_aligned() {
        let s = leaderboard_text(&comparisons(), "abc");
        assert!(s.contains("Friedman (classification): skipped"));
        let table: Vec<&str> = s.lines().skip_while(|l| !l.starts_with("Method")).collect();
        assert_eq!(table.len(), 4);
        assert!(table[2].starts_with("A "));
        assert!(pairwise_text(&comparisons(), "abc").contains("A vs B"));
    }
}
