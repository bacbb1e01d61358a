//! Reporting: the paper-style color bands, grid CSVs, SVG and ANSI heatmap
//! renderings, rank-correlation helpers, and the machine-readable trend
//! summary.

use crate::grid::{GridCellResult, GridOutcome};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Minimum gain (points of the primary metric) the perfect-pseudo-label cell
/// must show over the source-only baseline.
pub const UPPER_BOUND_MIN_GAIN: f64 = 10.0;
/// Tolerance (points) for the loss-comparison checks.
pub const LOSS_COMPARISON_TOLERANCE: f64 = 2.0;
/// Minimum Spearman rank correlation along the quality axis.
pub const MONOTONICITY_MIN_SPEARMAN: f64 = 0.8;
/// Low-quality region boundary for the loss-robustness check.
pub const LOW_QUALITY_MAX: u32 = 40;

/// Heatmap color band of one cell relative to the scenario baseline.
/// Below the baseline is red; each 10 points above opens a new band,
/// saturating at +40.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    BelowBaseline,
    Gain0To10,
    Gain10To20,
    Gain20To30,
    Gain30To40,
    GainAbove40,
}

pub fn band_for(value: f64, baseline: f64) -> Band {
    if value < baseline {
        return Band::BelowBaseline;
    }
    let gain = value - baseline;
    if gain < 10.0 {
        Band::Gain0To10
    } else if gain < 20.0 {
        Band::Gain10To20
    } else if gain < 30.0 {
        Band::Gain20To30
    } else if gain < 40.0 {
        Band::Gain30To40
    } else {
        Band::GainAbove40
    }
}

impl Band {
    pub fn svg_color(&self) -> &'static str {
        match self {
            Band::BelowBaseline => "#e74c3c",
            Band::Gain0To10 => "#f5a93d",
            Band::Gain10To20 => "#f5dd4d",
            Band::Gain20To30 => "#b8dd55",
            Band::Gain30To40 => "#5ec75e",
            Band::GainAbove40 => "#1f8b3b",
        }
    }

    pub fn ansi_code(&self) -> u8 {
        match self {
            Band::BelowBaseline => 196,
            Band::Gain0To10 => 208,
            Band::Gain10To20 => 220,
            Band::Gain20To30 => 154,
            Band::Gain30To40 => 77,
            Band::GainAbove40 => 22,
        }
    }
}

/// One (scenario, loss) table: quantity rows by quality columns, in percent.
#[derive(Debug, Clone)]
pub struct GridTable {
    pub scenario: String,
    pub loss: String,
    pub qualities: Vec<u32>,
    pub quantities: Vec<u32>,
    /// values[row][col] for quantities[row] x qualities[col].
    pub values: Vec<Vec<f64>>,
}

/// Group cells into rectangular tables; a ragged grid is an error listing
/// every missing cell.
pub fn build_tables(cells: &[GridCellResult]) -> Result<Vec<GridTable>> {
    let mut groups: BTreeMap<(String, String), Vec<&GridCellResult>> = BTreeMap::new();
    for cell in cells {
        groups
            .entry((cell.scenario.clone(), cell.loss.clone()))
            .or_default()
            .push(cell);
    }
    let mut tables = Vec::new();
    for ((scenario, loss), group) in groups {
        let mut qualities: Vec<u32> = group.iter().map(|c| c.quality).collect();
        qualities.sort_unstable();
        qualities.dedup();
        let mut quantities: Vec<u32> = group.iter().map(|c| c.quantity).collect();
        quantities.sort_unstable();
        quantities.dedup();
        let lookup: BTreeMap<(u32, u32), f64> = group
            .iter()
            .map(|c| ((c.quality, c.quantity), c.mean_metric))
            .collect();
        let mut missing = Vec::new();
        let mut values = Vec::new();
        for &n in &quantities {
            let mut row = Vec::new();
            for &q in &qualities {
                match lookup.get(&(q, n)) {
                    Some(&v) => row.push(v),
                    None => missing.push(format!("{scenario}/{loss} quality={q} quantity={n}")),
                }
            }
            values.push(row);
        }
        if !missing.is_empty() {
            bail!("ragged grid, missing cells: {}", missing.join(", "));
        }
        tables.push(GridTable {
            scenario,
            loss,
            qualities,
            quantities,
            values,
        });
    }
    Ok(tables)
}

/// CSV form: header row of quality values, first column quantity values.
pub fn grid_csv(table: &GridTable) -> String {
    let mut out = String::new();
    out.push_str("quantity/quality");
    for q in &table.qualities {
        let _ = write!(out, ",{q}");
    }
    out.push('\n');
    for (row, n) in table.quantities.iter().enumerate() {
        let _ = write!(out, "{n}");
        for value in &table.values[row] {
            let _ = write!(out, ",{value}");
        }
        out.push('\n');
    }
    out
}

/// Parse a CSV written by [`grid_csv`]; the inverse up to f64 identity.
pub fn parse_grid_csv(text: &str) -> Result<(Vec<u32>, Vec<u32>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header = lines.next().context("empty CSV")?;
    let mut fields = header.split(',');
    let corner = fields.next().context("missing header corner")?;
    if corner != "quantity/quality" {
        bail!("unexpected CSV corner '{corner}'");
    }
    let qualities: Vec<u32> = fields
        .map(|f| f.parse().with_context(|| format!("bad quality '{f}'")))
        .collect::<Result<_>>()?;
    let mut quantities = Vec::new();
    let mut values = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let n: u32 = fields
            .next()
            .context("missing quantity column")?
            .parse()
            .with_context(|| format!("bad quantity in '{line}'"))?;
        quantities.push(n);
        let row: Vec<f64> = fields
            .map(|f| f.parse().with_context(|| format!("bad value '{f}'")))
            .collect::<Result<_>>()?;
        if row.len() != qualities.len() {
            bail!("row for quantity {n} has {} values, expected {}", row.len(), qualities.len());
        }
        values.push(row);
    }
    Ok((qualities, quantities, values))
}

/// Standalone SVG heatmap of one table.
pub fn heatmap_svg(table: &GridTable, baseline: f64) -> String {
    const CELL_W: usize = 56;
    const CELL_H: usize = 26;
    const LEFT: usize = 110;
    const TOP: usize = 70;
    let cols = table.qualities.len();
    let rows = table.quantities.len();
    let width = LEFT + cols * CELL_W + 20;
    let height = TOP + rows * CELL_H + 50;
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         font-family=\"monospace\" font-size=\"12\">\n"
    );
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"22\" font-size=\"15\">{} / {} (baseline {:.1})</text>\n",
        LEFT,
        table.scenario,
        table.loss,
        baseline
    );
    let _ = write!(
        svg,
        "<text x=\"{}\" y=\"46\">pseudo-label quality in %</text>\n",
        LEFT + (cols * CELL_W) / 2 - 80
    );
    let _ = write!(
        svg,
        "<text x=\"12\" y=\"{}\" transform=\"rotate(-90 12 {})\">quantity in %</text>\n",
        TOP + (rows * CELL_H) / 2 + 40,
        TOP + (rows * CELL_H) / 2 + 40
    );
    for (col, q) in table.qualities.iter().enumerate() {
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{q}</text>\n",
            LEFT + col * CELL_W + CELL_W / 2,
            TOP - 8
        );
    }
    for (row, n) in table.quantities.iter().enumerate() {
        let _ = write!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{n}</text>\n",
            LEFT - 10,
            TOP + row * CELL_H + CELL_H / 2 + 4
        );
        for (col, &value) in table.values[row].iter().enumerate() {
            let band = band_for(value, baseline);
            let x = LEFT + col * CELL_W;
            let y = TOP + row * CELL_H;
            let _ = write!(
                svg,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL_W}\" height=\"{CELL_H}\" \
                 fill=\"{}\" stroke=\"#444\" stroke-width=\"0.5\"/>\n",
                band.svg_color()
            );
            let _ = write!(
                svg,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{value:.1}</text>\n",
                x + CELL_W / 2,
                y + CELL_H / 2 + 4
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Terminal rendering with 256-color backgrounds.
pub fn heatmap_ansi(table: &GridTable, baseline: f64) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} / {}  (source-only baseline {:.1}, quality columns, quantity rows)",
        table.scenario, table.loss, baseline
    );
    let _ = write!(out, "      ");
    for q in &table.qualities {
        let _ = write!(out, "{q:>7}");
    }
    out.push('\n');
    for (row, n) in table.quantities.iter().enumerate() {
        let _ = write!(out, "{n:>5} ");
        for &value in &table.values[row] {
            let band = band_for(value, baseline);
            let fg = if band == Band::GainAbove40 || band == Band::BelowBaseline {
                15
            } else {
                0
            };
            let _ = write!(
                out,
                "\x1b[48;5;{};38;5;{}m{value:>7.1}\x1b[0m",
                band.ansi_code(),
                fg
            );
        }
        out.push('\n');
    }
    out
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // 1-based ranks, ties take the average of their positions.
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. Zero variance in
/// either input yields 0.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = xs.len() as f64;
    let mean_x = rx.iter().sum::<f64>() / n;
    let mean_y = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mean_x) * (b - mean_y);
        var_x += (a - mean_x) * (a - mean_x);
        var_y += (b - mean_y) * (b - mean_y);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return 0.0;
    }
    cov / (var_x * var_y).sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UpperBoundCheck {
    pub scenario: String,
    pub loss: String,
    pub perfect_cell: f64,
    pub baseline: f64,
    pub gain_points: f64,
    pub min_gain_points: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerfectQualityComparison {
    pub scenario: String,
    pub cross_entropy: f64,
    pub contrastive: f64,
    pub tolerance_points: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LowQualityComparison {
    pub scenario: String,
    pub max_quality: u32,
    pub contrastive_mean: f64,
    pub cross_entropy_mean: f64,
    pub tolerance_points: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualityVsQuantityCheck {
    /// Mean metric drop from (100, 100) to (50, 100).
    pub drop_from_halved_quality: f64,
    /// Mean metric drop from (100, 100) to (100, 50).
    pub drop_from_halved_quantity: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotonicityCheck {
    pub scenario: String,
    pub loss: String,
    pub spearman: f64,
    pub min_spearman: f64,
    pub pass: bool,
}

/// Machine-readable summary of the qualitative trend checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendSummary {
    pub upper_bound: Vec<UpperBoundCheck>,
    pub perfect_quality_comparison: Vec<PerfectQualityComparison>,
    pub low_quality_comparison: Vec<LowQualityComparison>,
    pub quality_vs_quantity: QualityVsQuantityCheck,
    pub monotonicity: Vec<MonotonicityCheck>,
    pub all_pass: bool,
}

fn cell_value(
    cells: &[GridCellResult],
    scenario: &str,
    loss: &str,
    quality: u32,
    quantity: u32,
) -> Result<f64> {
    cells
        .iter()
        .find(|c| {
            c.scenario == scenario && c.loss == loss && c.quality == quality && c.quantity == quantity
        })
        .map(|c| c.mean_metric)
        .with_context(|| {
            format!("trend checks need cell {scenario}/{loss} quality={quality} quantity={quantity}")
        })
}

/// Compute every trend check from a finished grid. Requires the perfect
/// cell, the (50, 100) and (100, 50) cells, and the quantity = 100 row.
pub fn compute_trends(outcome: &GridOutcome) -> Result<TrendSummary> {
    let cells = &outcome.cells;
    let mut scenarios: Vec<String> = cells.iter().map(|c| c.scenario.clone()).collect();
    scenarios.sort();
    scenarios.dedup();
    let mut losses: Vec<String> = cells.iter().map(|c| c.loss.clone()).collect();
    losses.sort();
    losses.dedup();
    let baseline_of = |scenario: &str| -> Result<f64> {
        outcome
            .baselines
            .iter()
            .find(|b| b.scenario == scenario)
            .map(|b| b.mean_metric)
            .with_context(|| format!("no baseline for scenario {scenario}"))
    };

    let mut upper_bound = Vec::new();
    for scenario in &scenarios {
        for loss in &losses {
            let perfect = cell_value(cells, scenario, loss, 100, 100)?;
            let baseline = baseline_of(scenario)?;
            let gain = perfect - baseline;
            upper_bound.push(UpperBoundCheck {
                scenario: scenario.clone(),
                loss: loss.clone(),
                perfect_cell: perfect,
                baseline,
                gain_points: gain,
                min_gain_points: UPPER_BOUND_MIN_GAIN,
                pass: gain >= UPPER_BOUND_MIN_GAIN,
            });
        }
    }

    let mut perfect_quality_comparison = Vec::new();
    for scenario in &scenarios {
        let ce = cell_value(cells, scenario, "cross_entropy", 100, 100)?;
        let con = cell_value(cells, scenario, "contrastive", 100, 100)?;
        perfect_quality_comparison.push(PerfectQualityComparison {
            scenario: scenario.clone(),
            cross_entropy: ce,
            contrastive: con,
            tolerance_points: LOSS_COMPARISON_TOLERANCE,
            pass: ce >= con - LOSS_COMPARISON_TOLERANCE,
        });
    }

    let low_qualities: Vec<u32> = {
        let mut qs: Vec<u32> = cells
            .iter()
            .filter(|c| c.quantity == 100 && c.quality <= LOW_QUALITY_MAX)
            .map(|c| c.quality)
            .collect();
        qs.sort_unstable();
        qs.dedup();
        qs
    };
    if low_qualities.is_empty() {
        bail!("trend checks need quality values <= {LOW_QUALITY_MAX} at quantity 100");
    }
    let mut low_quality_comparison = Vec::new();
    for scenario in &scenarios {
        if scenario == "PDA" {
            continue;
        }
        let region_mean = |loss: &str| -> Result<f64> {
            let mut total = 0.0;
            for &q in &low_qualities {
                total += cell_value(cells, scenario, loss, q, 100)?;
            }
            Ok(total / low_qualities.len() as f64)
        };
        let con = region_mean("contrastive")?;
        let ce = region_mean("cross_entropy")?;
        low_quality_comparison.push(LowQualityComparison {
            scenario: scenario.clone(),
            max_quality: LOW_QUALITY_MAX,
            contrastive_mean: con,
            cross_entropy_mean: ce,
            tolerance_points: LOSS_COMPARISON_TOLERANCE,
            pass: con >= ce - LOSS_COMPARISON_TOLERANCE,
        });
    }

    let mut perfect_sum = 0.0;
    let mut half_quality_sum = 0.0;
    let mut half_quantity_sum = 0.0;
    let mut combos = 0.0;
    for scenario in &scenarios {
        for loss in &losses {
            perfect_sum += cell_value(cells, scenario, loss, 100, 100)?;
            half_quality_sum += cell_value(cells, scenario, loss, 50, 100)?;
            half_quantity_sum += cell_value(cells, scenario, loss, 100, 50)?;
            combos += 1.0;
        }
    }
    let drop_from_halved_quality = (perfect_sum - half_quality_sum) / combos;
    let drop_from_halved_quantity = (perfect_sum - half_quantity_sum) / combos;
    let quality_vs_quantity = QualityVsQuantityCheck {
        drop_from_halved_quality,
        drop_from_halved_quantity,
        pass: drop_from_halved_quality > drop_from_halved_quantity,
    };

    let mut monotonicity = Vec::new();
    for scenario in &scenarios {
        for loss in &losses {
            let mut row: Vec<(u32, f64)> = cells
                .iter()
                .filter(|c| &c.scenario == scenario && &c.loss == loss && c.quantity == 100)
                .map(|c| (c.quality, c.mean_metric))
                .collect();
            row.sort_by_key(|&(q, _)| q);
            if row.len() < 3 {
                bail!("monotonicity check needs at least 3 qualities at quantity 100");
            }
            let xs: Vec<f64> = row.iter().map(|&(q, _)| q as f64).collect();
            let ys: Vec<f64> = row.iter().map(|&(_, v)| v).collect();
            let rho = spearman(&xs, &ys);
            monotonicity.push(MonotonicityCheck {
                scenario: scenario.clone(),
                loss: loss.clone(),
                spearman: rho,
                min_spearman: MONOTONICITY_MIN_SPEARMAN,
                pass: rho >= MONOTONICITY_MIN_SPEARMAN,
            });
        }
    }

    let all_pass = upper_bound.iter().all(|c| c.pass)
        && perfect_quality_comparison.iter().all(|c| c.pass)
        && low_quality_comparison.iter().all(|c| c.pass)
        && quality_vs_quantity.pass
        && monotonicity.iter().all(|c| c.pass);
    Ok(TrendSummary {
        upper_bound,
        perfect_quality_comparison,
        low_quality_comparison,
        quality_vs_quantity,
        monotonicity,
        all_pass,
    })
}

/// Everything `grid`/`report` emit besides run records.
pub struct Reports {
    /// Terminal renderings, one per (scenario, loss).
    pub ansi: Vec<String>,
    /// Present when the grid contains the cells the trend checks need.
    pub trends: Option<TrendSummary>,
}

/// Write CSVs and SVG heatmaps per (scenario, loss) plus the trend summary.
pub fn emit_reports(outcome: &GridOutcome, out_dir: &Path) -> Result<Reports> {
    std::fs::create_dir_all(out_dir)?;
    let tables = build_tables(&outcome.cells)?;
    let mut ansi = Vec::new();
    for table in &tables {
        let baseline = outcome
            .baselines
            .iter()
            .find(|b| b.scenario == table.scenario)
            .map(|b| b.mean_metric)
            .with_context(|| format!("no baseline for scenario {}", table.scenario))?;
        let stem = format!("{}_{}", table.scenario, table.loss);
        std::fs::write(out_dir.join(format!("grid_{stem}.csv")), grid_csv(table))?;
        std::fs::write(
            out_dir.join(format!("heatmap_{stem}.svg")),
            heatmap_svg(table, baseline),
        )?;
        ansi.push(heatmap_ansi(table, baseline));
    }
    let trends = match compute_trends(outcome) {
        Ok(summary) => {
            std::fs::write(
                out_dir.join("trend_summary.json"),
                serde_json::to_string_pretty(&summary).expect("summary serializes"),
            )?;
            Some(summary)
        }
        Err(_) => None,
    };
    Ok(Reports { ansi, trends })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{ScenarioBaseline, SeedMetric};

    #[test]
    fn band_boundaries_follow_the_rules() {
        let b = 17.1;
        assert_eq!(band_for(b - 0.001, b), Band::BelowBaseline);
        // A value exactly at the baseline lands in the first band above it.
        assert_eq!(band_for(b, b), Band::Gain0To10);
        assert_eq!(band_for(b + 9.999, b), Band::Gain0To10);
        assert_eq!(band_for(b + 10.0, b), Band::Gain10To20);
        assert_eq!(band_for(b + 20.0, b), Band::Gain20To30);
        assert_eq!(band_for(b + 30.0, b), Band::Gain30To40);
        assert_eq!(band_for(b + 39.999, b), Band::Gain30To40);
        assert_eq!(band_for(b + 40.0, b), Band::GainAbove40);
        assert_eq!(band_for(b + 70.0, b), Band::GainAbove40);
    }

    fn cell(scenario: &str, loss: &str, q: u32, n: u32, v: f64) -> GridCellResult {
        GridCellResult {
            scenario: scenario.into(),
            loss: loss.into(),
            quality: q,
            quantity: n,
            per_seed: vec![SeedMetric { seed: 0, metric: v }],
            mean_metric: v,
        }
    }

    #[test]
    fn csv_round_trips() {
        let cells = vec![
            cell("ODA", "contrastive", 0, 50, 10.125),
            cell("ODA", "contrastive", 50, 50, 1.0 / 3.0),
            cell("ODA", "contrastive", 0, 100, 42.0),
            cell("ODA", "contrastive", 50, 100, 67.4),
        ];
        let tables = build_tables(&cells).unwrap();
        assert_eq!(tables.len(), 1);
        let text = grid_csv(&tables[0]);
        let (qualities, quantities, values) = parse_grid_csv(&text).unwrap();
        assert_eq!(qualities, vec![0, 50]);
        assert_eq!(quantities, vec![50, 100]);
        assert_eq!(values[0][1], 1.0 / 3.0);
        assert_eq!(values[1][0], 42.0);
    }

    #[test]
    fn ragged_grid_lists_missing_cells() {
        let cells = vec![
            cell("PDA", "contrastive", 0, 50, 1.0),
            cell("PDA", "contrastive", 50, 100, 2.0),
        ];
        let err = build_tables(&cells).unwrap_err().to_string();
        assert!(err.contains("missing cells"));
        assert!(err.contains("quality=50 quantity=50"));
        assert!(err.contains("quality=0 quantity=100"));
    }

    #[test]
    fn spearman_basics() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]) + 1.0).abs() < 1e-12);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]), 0.0);
        // Tied pair takes average ranks: hand-computed 0.9486832980505138.
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]);
        assert!((rho - 0.9486832980505138).abs() < 1e-12);
    }

    fn synthetic_outcome() -> GridOutcome {
        let mut cells = Vec::new();
        // Metrics rise with quality; cross-entropy collapses at low quality
        // and wins at perfect quality.
        for scenario in ["PDA", "ODA", "OPDA"] {
            for q in [0u32, 20, 40, 50, 100] {
                for n in [50u32, 100] {
                    let con = 20.0 + 0.45 * q as f64 + 0.02 * n as f64;
                    let ce = if q < 70 { 2.0 + 0.05 * q as f64 } else { 90.0 } + 0.01 * n as f64;
                    cells.push(cell(scenario, "contrastive", q, n, con));
                    cells.push(cell(scenario, "cross_entropy", q, n, ce));
                }
            }
        }
        let baselines = ["PDA", "ODA", "OPDA"]
            .iter()
            .map(|s| ScenarioBaseline {
                scenario: s.to_string(),
                per_seed: vec![],
                mean_metric: 20.0,
            })
            .collect();
        GridOutcome { cells, baselines }
    }

    #[test]
    fn trend_summary_computes_and_passes_on_synthetic_grid() {
        let outcome = synthetic_outcome();
        let trends = compute_trends(&outcome).unwrap();
        assert_eq!(trends.upper_bound.len(), 6);
        assert!(trends.upper_bound.iter().all(|c| c.pass));
        assert!(trends.perfect_quality_comparison.iter().all(|c| c.pass));
        assert_eq!(trends.low_quality_comparison.len(), 2);
        assert!(trends.low_quality_comparison.iter().all(|c| c.pass));
        assert!(trends.quality_vs_quantity.pass);
        assert!(
            trends.quality_vs_quantity.drop_from_halved_quality
                > trends.quality_vs_quantity.drop_from_halved_quantity
        );
        assert!(trends.monotonicity.iter().all(|c| c.pass));
        assert!(trends.all_pass);
    }
}
